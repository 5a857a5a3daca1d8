//! Dense 3D scalar volumes with physical voxel spacing.
//!
//! Data is stored x-fastest: the linear index of voxel `(x, y, z)` is
//! `x + nx * (y + ny * z)`. The same order is used on disk and in every kernel.

mod io;
mod preprocess;

pub use io::{read_vvol, read_vvol_from, write_vvol, write_vvol_to, VvolError, VVOL_MAGIC};
pub use preprocess::{clip_normalize_ct, resample, sample_patch, PatchSpec, ResampleMode};

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// What a volume's values mean. Some kinds restrict the admissible range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VolumeKind {
    #[serde(rename = "SUV")]
    Suv,
    #[serde(rename = "CT_RAW")]
    CtRaw,
    #[serde(rename = "CT_NORM")]
    CtNorm,
    #[serde(rename = "MASK")]
    Mask,
    #[serde(rename = "PROB")]
    Prob,
    #[serde(rename = "LOGIT")]
    Logit,
    #[serde(rename = "WEIGHT")]
    Weight,
}

impl VolumeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VolumeKind::Suv => "SUV",
            VolumeKind::CtRaw => "CT_RAW",
            VolumeKind::CtNorm => "CT_NORM",
            VolumeKind::Mask => "MASK",
            VolumeKind::Prob => "PROB",
            VolumeKind::Logit => "LOGIT",
            VolumeKind::Weight => "WEIGHT",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "SUV" => VolumeKind::Suv,
            "CT_RAW" => VolumeKind::CtRaw,
            "CT_NORM" => VolumeKind::CtNorm,
            "MASK" => VolumeKind::Mask,
            "PROB" => VolumeKind::Prob,
            "LOGIT" => VolumeKind::Logit,
            "WEIGHT" => VolumeKind::Weight,
            _ => return None,
        })
    }
}

impl fmt::Display for VolumeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("dims must be positive, got {0:?}")]
    BadDims([usize; 3]),
    #[error("spacing must be strictly positive and finite, got {0:?}")]
    BadSpacing([f64; 3]),
    #[error("data length {actual} does not match dims product {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("{kind} volume has invalid value {value} at index {index}")]
    ValueOutOfRange {
        kind: VolumeKind,
        index: usize,
        value: f64,
    },
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
}

/// A dense scalar field on a regular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeGrid {
    dims: [usize; 3],
    spacing: [f64; 3],
    kind: VolumeKind,
    data: Vec<f64>,
}

impl VolumeGrid {
    /// Builds a volume, checking the length, spacing and kind invariants.
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        kind: VolumeKind,
        data: Vec<f64>,
    ) -> Result<Self, VolumeError> {
        if dims.contains(&0) {
            return Err(VolumeError::BadDims(dims));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(VolumeError::BadSpacing(spacing));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(VolumeError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        check_kind(kind, &data)?;
        Ok(VolumeGrid {
            dims,
            spacing,
            kind,
            data,
        })
    }

    /// A volume filled with a single value.
    pub fn filled(
        dims: [usize; 3],
        spacing: [f64; 3],
        kind: VolumeKind,
        value: f64,
    ) -> Result<Self, VolumeError> {
        let n = dims.iter().product();
        Self::new(dims, spacing, kind, vec![value; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    /// Reinterprets the same data under another kind, re-checking its invariants.
    pub fn with_kind(self, kind: VolumeKind) -> Result<Self, VolumeError> {
        check_kind(kind, &self.data)?;
        Ok(VolumeGrid { kind, ..self })
    }

    /// Builds a new volume with the same geometry.
    pub fn like(&self, kind: VolumeKind, data: Vec<f64>) -> Result<Self, VolumeError> {
        Self::new(self.dims, self.spacing, kind, data)
    }

    pub fn same_geometry(&self, other: &VolumeGrid) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }

    pub fn ensure_same_geometry(&self, other: &VolumeGrid) -> Result<(), VolumeError> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(VolumeError::GeometryMismatch(format!(
                "dims {:?} spacing {:?} vs dims {:?} spacing {:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }

    /// Number of voxels with a non-zero value.
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// Copies the box `[origin, origin + size)` into a new volume.
    pub fn crop(&self, origin: [usize; 3], size: [usize; 3]) -> Result<Self, VolumeError> {
        for a in 0..3 {
            if size[a] == 0 || origin[a] + size[a] > self.dims[a] {
                return Err(VolumeError::GeometryMismatch(format!(
                    "crop origin {origin:?} size {size:?} exceeds dims {:?}",
                    self.dims
                )));
            }
        }
        let mut data = Vec::with_capacity(size[0] * size[1] * size[2]);
        for z in origin[2]..origin[2] + size[2] {
            for y in origin[1]..origin[1] + size[1] {
                let start = self.index(origin[0], y, z);
                data.extend_from_slice(&self.data[start..start + size[0]]);
            }
        }
        Ok(VolumeGrid {
            dims: size,
            spacing: self.spacing,
            kind: self.kind,
            data,
        })
    }
}

fn check_kind(kind: VolumeKind, data: &[f64]) -> Result<(), VolumeError> {
    let bad = |index: usize, value: f64| VolumeError::ValueOutOfRange { kind, index, value };
    match kind {
        VolumeKind::Mask => {
            if let Some((i, &v)) = data.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
                return Err(bad(i, v));
            }
        }
        VolumeKind::Prob | VolumeKind::CtNorm => {
            if let Some((i, &v)) = data
                .iter()
                .enumerate()
                .find(|(_, &v)| !(0.0..=1.0).contains(&v))
            {
                return Err(bad(i, v));
            }
        }
        _ => {}
    }
    Ok(())
}

/// One patient-equivalent sample: PET, normalised CT and the ground-truth mask
/// on a shared grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanCase {
    pub id: String,
    pub pet: VolumeGrid,
    pub ct: VolumeGrid,
    pub gt: VolumeGrid,
}

impl ScanCase {
    pub fn new(
        id: impl Into<String>,
        pet: VolumeGrid,
        ct: VolumeGrid,
        gt: VolumeGrid,
    ) -> Result<Self, VolumeError> {
        pet.ensure_same_geometry(&ct)?;
        pet.ensure_same_geometry(&gt)?;
        let expect = |v: &VolumeGrid, k: VolumeKind| {
            if v.kind() == k {
                Ok(())
            } else {
                Err(VolumeError::GeometryMismatch(format!(
                    "expected a {k} volume, got {}",
                    v.kind()
                )))
            }
        };
        expect(&pet, VolumeKind::Suv)?;
        expect(&ct, VolumeKind::CtNorm)?;
        expect(&gt, VolumeKind::Mask)?;
        Ok(ScanCase {
            id: id.into(),
            pet,
            ct,
            gt,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.pet.dims()
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.pet.spacing()
    }
}
