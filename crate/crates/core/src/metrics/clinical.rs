//! Volume and uptake quantities, and the maximum foreground extent `D_max`.

use super::{LesionSet, MetricsError};
use crate::volgrid::VolumeGrid;
use serde::Serialize;

/// Per-lesion MTV (ml) and TLA (SUV·ml) plus their case totals.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClinicalQuantities {
    pub mtv_ml: Vec<f64>,
    pub tla: Vec<f64>,
    pub suv_max: Vec<f64>,
    pub suv_mean: Vec<f64>,
    pub tmtv_ml: f64,
    pub total_tla: f64,
}

pub fn clinical_quantities(set: &LesionSet, pet: &VolumeGrid) -> Result<ClinicalQuantities, MetricsError> {
    if set.dims != pet.dims() || set.spacing != pet.spacing() {
        return Err(MetricsError::GeometryMismatch(format!(
            "lesion dims {:?} vs PET dims {:?}",
            set.dims,
            pet.dims()
        )));
    }
    let voxel_ml = set.voxel_volume_ml();
    let suv = pet.data();
    let mut q = ClinicalQuantities {
        mtv_ml: Vec::with_capacity(set.count),
        tla: Vec::with_capacity(set.count),
        suv_max: Vec::with_capacity(set.count),
        suv_mean: Vec::with_capacity(set.count),
        tmtv_ml: 0.0,
        total_tla: 0.0,
    };
    for voxels in &set.voxel_lists {
        let sum: f64 = voxels.iter().map(|&i| suv[i]).sum();
        let max = voxels.iter().map(|&i| suv[i]).fold(f64::NEG_INFINITY, f64::max);
        q.mtv_ml.push(voxels.len() as f64 * voxel_ml);
        q.tla.push(sum * voxel_ml);
        q.suv_max.push(max);
        q.suv_mean.push(sum / voxels.len() as f64);
    }
    q.tmtv_ml = q.mtv_ml.iter().sum();
    q.total_tla = q.tla.iter().sum();
    Ok(q)
}

#[inline]
fn sq_dist(a: [usize; 3], b: [usize; 3], spacing: [f64; 3]) -> f64 {
    let mut d2 = 0.0;
    for axis in 0..3 {
        let d = (a[axis] as f64 - b[axis] as f64) * spacing[axis];
        d2 += d * d;
    }
    d2
}

fn max_pair_sq(points: &[[usize; 3]], spacing: [f64; 3]) -> f64 {
    let mut best = 0.0f64;
    for (i, &a) in points.iter().enumerate() {
        for &b in &points[i + 1..] {
            best = best.max(sq_dist(a, b, spacing));
        }
    }
    best
}

fn foreground_points(mask: &VolumeGrid) -> Vec<[usize; 3]> {
    mask.data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, _)| mask.coords(i))
        .collect()
}

/// Reference `D_max` in cm: the largest distance over all foreground voxel
/// pairs, `O(N²)`. `None` with fewer than two foreground voxels.
pub fn dmax_brute_force(mask: &VolumeGrid) -> Option<f64> {
    let points = foreground_points(mask);
    (points.len() >= 2).then(|| max_pair_sq(&points, mask.spacing()).sqrt() / 10.0)
}

/// `D_max` in cm.
///
/// The farthest pair of a point set is a pair of convex-hull vertices, and a
/// hull vertex is necessarily the first or last foreground voxel on each of
/// its three axis-aligned grid lines. Only those voxels are compared, using
/// the same distance evaluation as [`dmax_brute_force`], so both agree exactly.
pub fn dmax(mask: &VolumeGrid) -> Option<f64> {
    let [nx, ny, nz] = mask.dims();
    let points = foreground_points(mask);
    if points.len() < 2 {
        return None;
    }
    const NONE: (usize, usize) = (usize::MAX, 0);
    let mut x_lines = vec![NONE; ny * nz];
    let mut y_lines = vec![NONE; nx * nz];
    let mut z_lines = vec![NONE; nx * ny];
    let extend = |slot: &mut (usize, usize), v: usize| {
        slot.0 = slot.0.min(v);
        slot.1 = slot.1.max(v);
    };
    for &[x, y, z] in &points {
        extend(&mut x_lines[y + ny * z], x);
        extend(&mut y_lines[x + nx * z], y);
        extend(&mut z_lines[x + nx * y], z);
    }
    let is_end = |(lo, hi): (usize, usize), v: usize| v == lo || v == hi;
    let candidates: Vec<[usize; 3]> = points
        .into_iter()
        .filter(|&[x, y, z]| {
            is_end(x_lines[y + ny * z], x) && is_end(y_lines[x + nx * z], y) && is_end(z_lines[x + nx * y], z)
        })
        .collect();
    Some(max_pair_sq(&candidates, mask.spacing()).sqrt() / 10.0)
}
