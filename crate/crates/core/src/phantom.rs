//! Deterministic synthetic PET/CT phantoms.
//!
//! A phantom is a noisy non-negative SUV background with Gaussian uptake
//! blobs. Lesion blobs define the ground truth (voxels whose own blob
//! contribution is at least `gt_threshold_frac` of the peak), trap blobs are
//! high-uptake structures that never enter the ground truth. The CT is a soft
//! tissue body ellipsoid in air, normalised to `[0, 1]`.

use crate::metrics::neighbors_18;
use crate::rng::{self, Rng};
use crate::volgrid::{clip_normalize_ct, ScanCase, VolumeGrid, VolumeKind};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CT_CLIP_LO: f64 = -1000.0;
pub const CT_CLIP_HI: f64 = 3000.0;
const SOFT_TISSUE_HU: f64 = 40.0;
const AIR_HU: f64 = -1000.0;
/// Body semi-axes as fractions of the physical extent along x, y, z.
const BODY_SEMI_AXES: [f64; 3] = [0.45, 0.38, 0.75];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhantomError {
    #[error("invalid phantom config: {0}")]
    Invalid(String),
    #[error("lesions {0} and {1} overlap or touch under 18-connectivity")]
    AdjacentLesions(usize, usize),
    #[error("trap {0} intersects the ground truth of lesion {1}")]
    TrapOverlapsLesion(usize, usize),
    #[error("could not place {what} after {attempts} attempts; volume too small for the requested sizes")]
    Placement { what: String, attempts: usize },
}

/// A spherical uptake blob.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    /// Centre voxel.
    pub center: [usize; 3],
    pub radius_mm: f64,
    pub peak_suv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub seed: u64,
    pub lesions: Vec<Blob>,
    pub traps: Vec<Blob>,
    pub background_suv_mean: f64,
    pub background_noise_sd: f64,
    pub gt_threshold_frac: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: [48, 48, 48],
            spacing: [2.0, 2.0, 2.0],
            seed: 0,
            lesions: vec![
                Blob { center: [20, 22, 24], radius_mm: 8.0, peak_suv: 10.0 },
                Blob { center: [30, 28, 18], radius_mm: 6.0, peak_suv: 14.0 },
            ],
            traps: vec![Blob { center: [24, 14, 30], radius_mm: 10.0, peak_suv: 12.0 }],
            background_suv_mean: 0.5,
            background_noise_sd: 0.1,
            gt_threshold_frac: 0.4,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::Invalid(m));
        if self.dims.contains(&0) {
            return bad(format!("dims must be positive, got {:?}", self.dims));
        }
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return bad(format!("spacing must be positive, got {:?}", self.spacing));
        }
        if !(self.gt_threshold_frac > 0.0 && self.gt_threshold_frac < 1.0) {
            return bad(format!("gt_threshold_frac must lie in (0, 1), got {}", self.gt_threshold_frac));
        }
        if !(self.background_suv_mean.is_finite() && self.background_noise_sd >= 0.0 && self.background_noise_sd.is_finite()) {
            return bad("background mean must be finite and noise sd >= 0".into());
        }
        for (what, blobs) in [("lesion", &self.lesions), ("trap", &self.traps)] {
            for (i, b) in blobs.iter().enumerate() {
                if !(b.radius_mm > 0.0 && b.radius_mm.is_finite() && b.peak_suv > 0.0 && b.peak_suv.is_finite()) {
                    return bad(format!("{what} {i}: radius and peak must be positive"));
                }
                for a in 0..3 {
                    let r = b.radius_mm / self.spacing[a];
                    let c = b.center[a] as f64;
                    if c - r < 0.0 || c + r > (self.dims[a] - 1) as f64 {
                        return bad(format!("{what} {i} sphere leaves the volume along axis {a}"));
                    }
                }
            }
        }
        Ok(())
    }
}

fn sq_dist_mm(a: [usize; 3], b: [usize; 3], spacing: [f64; 3]) -> f64 {
    (0..3)
        .map(|k| {
            let d = (a[k] as f64 - b[k] as f64) * spacing[k];
            d * d
        })
        .sum()
}

/// Relative blob profile `exp(-r² / 2σ²)` with `σ = radius / 2`.
fn profile(r2: f64, radius_mm: f64) -> f64 {
    let sigma = radius_mm / 2.0;
    (-r2 / (2.0 * sigma * sigma)).exp()
}

fn in_gt(b: &Blob, r2: f64, frac: f64) -> bool {
    r2 <= b.radius_mm * b.radius_mm && profile(r2, b.radius_mm) >= frac
}

fn for_each_voxel(dims: [usize; 3], mut f: impl FnMut(usize, [usize; 3])) {
    let mut i = 0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                f(i, [x, y, z]);
                i += 1;
            }
        }
    }
}

/// Voxels inside any trap sphere.
pub fn trap_mask(config: &PhantomConfig) -> Result<VolumeGrid, PhantomError> {
    config.validate()?;
    let mut data = vec![0.0; config.dims.iter().product()];
    for_each_voxel(config.dims, |i, c| {
        if config
            .traps
            .iter()
            .any(|t| sq_dist_mm(c, t.center, config.spacing) <= t.radius_mm * t.radius_mm)
        {
            data[i] = 1.0;
        }
    });
    Ok(VolumeGrid::new(config.dims, config.spacing, VolumeKind::Mask, data).expect("valid geometry"))
}

/// Whether a voxel lies in the body ellipsoid.
pub fn in_body(c: [usize; 3], dims: [usize; 3], spacing: [f64; 3]) -> bool {
    let mut s = 0.0;
    for a in 0..3 {
        let extent = dims[a] as f64 * spacing[a];
        let pos = (c[a] as f64 + 0.5) * spacing[a] - extent / 2.0;
        let semi = BODY_SEMI_AXES[a] * extent;
        s += (pos / semi).powi(2);
    }
    s <= 1.0
}

/// Builds the phantom described by `config`.
pub fn generate(config: &PhantomConfig) -> Result<ScanCase, PhantomError> {
    config.validate()?;
    let dims = config.dims;
    let spacing = config.spacing;
    let n: usize = dims.iter().product();
    let mut rng = rng::seeded(config.seed);

    let mut pet = Vec::with_capacity(n);
    let mut owner = vec![0usize; n];
    let mut ct_raw = Vec::with_capacity(n);
    let mut overlap = None;
    for_each_voxel(dims, |i, c| {
        let noise: f64 = StandardNormal.sample(&mut rng);
        let mut suv = (config.background_suv_mean + config.background_noise_sd * noise).max(0.0);
        for (k, b) in config.lesions.iter().enumerate() {
            let r2 = sq_dist_mm(c, b.center, spacing);
            suv += b.peak_suv * profile(r2, b.radius_mm);
            if in_gt(b, r2, config.gt_threshold_frac) {
                if owner[i] != 0 && overlap.is_none() {
                    overlap = Some((owner[i] - 1, k));
                }
                owner[i] = k + 1;
            }
        }
        for t in &config.traps {
            suv += t.peak_suv * profile(sq_dist_mm(c, t.center, spacing), t.radius_mm);
        }
        pet.push(suv);
        ct_raw.push(if in_body(c, dims, spacing) { SOFT_TISSUE_HU } else { AIR_HU });
    });
    if let Some((a, b)) = overlap {
        return Err(PhantomError::AdjacentLesions(a, b));
    }

    // Lesion regions must be separate 18-connected components.
    let [nx, ny, nz] = dims;
    for_each_voxel(dims, |i, [x, y, z]| {
        if owner[i] == 0 || overlap.is_some() {
            return;
        }
        for (dx, dy, dz) in neighbors_18() {
            let (xn, yn, zn) = (x as isize + dx, y as isize + dy, z as isize + dz);
            if xn < 0 || yn < 0 || zn < 0 || xn >= nx as isize || yn >= ny as isize || zn >= nz as isize {
                continue;
            }
            let j = xn as usize + nx * (yn as usize + ny * zn as usize);
            if owner[j] != 0 && owner[j] != owner[i] {
                overlap = Some((owner[i].min(owner[j]) - 1, owner[i].max(owner[j]) - 1));
                return;
            }
        }
    });
    if let Some((a, b)) = overlap {
        return Err(PhantomError::AdjacentLesions(a, b));
    }

    let mut trap_hit = None;
    for_each_voxel(dims, |i, c| {
        if owner[i] == 0 || trap_hit.is_some() {
            return;
        }
        if let Some(t) = config
            .traps
            .iter()
            .position(|t| sq_dist_mm(c, t.center, spacing) <= t.radius_mm * t.radius_mm)
        {
            trap_hit = Some((t, owner[i] - 1));
        }
    });
    if let Some((t, l)) = trap_hit {
        return Err(PhantomError::TrapOverlapsLesion(t, l));
    }

    let gt: Vec<f64> = owner.iter().map(|&o| if o != 0 { 1.0 } else { 0.0 }).collect();
    let pet = VolumeGrid::new(dims, spacing, VolumeKind::Suv, pet).expect("valid geometry");
    let gt = VolumeGrid::new(dims, spacing, VolumeKind::Mask, gt).expect("valid geometry");
    let ct_raw = VolumeGrid::new(dims, spacing, VolumeKind::CtRaw, ct_raw).expect("valid geometry");
    let ct = clip_normalize_ct(&ct_raw, CT_CLIP_LO, CT_CLIP_HI).expect("finite CT");
    Ok(ScanCase::new("phantom", pet, ct, gt).expect("shared geometry"))
}

/// Parameters for drawing a cohort of phantoms around a base config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_cases: usize,
    pub seed: u64,
    /// Fraction of single-lesion cases; the rest get 2..=max_lesions.
    pub single_lesion_fraction: f64,
    pub max_lesions: usize,
    pub radius_mm: [f64; 2],
    pub peak_suv: [f64; 2],
    pub n_traps: usize,
    pub trap_radius_mm: [f64; 2],
    pub trap_peak_suv: [f64; 2],
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_cases: 8,
            seed: 0,
            single_lesion_fraction: 0.5,
            max_lesions: 3,
            radius_mm: [4.0, 8.0],
            peak_suv: [4.0, 16.0],
            n_traps: 1,
            trap_radius_mm: [6.0, 10.0],
            trap_peak_suv: [6.0, 16.0],
        }
    }
}

/// A generated cohort member together with the config that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct CohortCase {
    pub case: ScanCase,
    pub config: PhantomConfig,
}

impl CohortCase {
    pub fn is_single_lesion(&self) -> bool {
        self.config.lesions.len() == 1
    }
}

const MAX_PLACEMENT_ATTEMPTS: usize = 2000;

fn uniform(rng: &mut Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

fn place(
    rng: &mut Rng,
    base: &PhantomConfig,
    radius_mm: f64,
    peak_suv: f64,
    placed: &[Blob],
    what: &str,
) -> Result<Blob, PhantomError> {
    let gap = 2.0 * base.spacing.iter().cloned().fold(0.0, f64::max);
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let mut center = [0usize; 3];
        let mut ok = true;
        for a in 0..3 {
            let margin = (radius_mm / base.spacing[a]).ceil() as usize;
            if 2 * margin >= base.dims[a] {
                ok = false;
                break;
            }
            center[a] = rng.random_range(margin..base.dims[a] - margin);
        }
        if !ok {
            break;
        }
        if !in_body(center, base.dims, base.spacing) {
            continue;
        }
        let clear = placed.iter().all(|b| {
            let need = radius_mm + b.radius_mm + gap;
            sq_dist_mm(center, b.center, base.spacing) > need * need
        });
        if clear {
            return Ok(Blob { center, radius_mm, peak_suv });
        }
    }
    Err(PhantomError::Placement {
        what: what.to_string(),
        attempts: MAX_PLACEMENT_ATTEMPTS,
    })
}

/// Draws the per-case configs of a cohort. Case `i` is named `case{i:03}`.
pub fn cohort_configs(base: &PhantomConfig, spec: &CohortSpec) -> Result<Vec<(String, PhantomConfig)>, PhantomError> {
    if spec.n_cases == 0 {
        return Err(PhantomError::Invalid("n_cases must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&spec.single_lesion_fraction) {
        return Err(PhantomError::Invalid("single_lesion_fraction must lie in [0, 1]".into()));
    }
    if spec.max_lesions < 2 && spec.single_lesion_fraction < 1.0 {
        return Err(PhantomError::Invalid("max_lesions must be at least 2 for multi-lesion cases".into()));
    }
    let n_single = (spec.n_cases as f64 * spec.single_lesion_fraction).round() as usize;
    let mut single: Vec<bool> = (0..spec.n_cases).map(|i| i < n_single).collect();
    let mut order_rng = rng::seeded(rng::derive_seed(spec.seed, u64::MAX));
    for i in (1..single.len()).rev() {
        single.swap(i, order_rng.random_range(0..=i));
    }

    single
        .iter()
        .enumerate()
        .map(|(i, &is_single)| {
            let case_seed = rng::derive_seed(spec.seed, i as u64);
            let mut r = rng::seeded(case_seed);
            let n_lesions = if is_single { 1 } else { r.random_range(2..=spec.max_lesions) };
            let mut blobs: Vec<Blob> = Vec::new();
            for _ in 0..n_lesions {
                let radius = uniform(&mut r, spec.radius_mm);
                let peak = uniform(&mut r, spec.peak_suv);
                let b = place(&mut r, base, radius, peak, &blobs, "lesion")?;
                blobs.push(b);
            }
            let lesions = blobs.clone();
            let mut traps = Vec::new();
            for _ in 0..spec.n_traps {
                let radius = uniform(&mut r, spec.trap_radius_mm);
                let peak = uniform(&mut r, spec.trap_peak_suv);
                let t = place(&mut r, base, radius, peak, &blobs, "trap")?;
                blobs.push(t);
                traps.push(t);
            }
            let config = PhantomConfig {
                seed: case_seed,
                lesions,
                traps,
                ..base.clone()
            };
            Ok((format!("case{i:03}"), config))
        })
        .collect()
}

/// Generates a cohort; case ids are `case000`, `case001`, ….
pub fn cohort(base: &PhantomConfig, spec: &CohortSpec) -> Result<Vec<CohortCase>, PhantomError> {
    cohort_configs(base, spec)?
        .into_iter()
        .map(|(id, config)| {
            let mut case = generate(&config)?;
            case.id = id;
            Ok(CohortCase { case, config })
        })
        .collect()
}
