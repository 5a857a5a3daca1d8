//! Intensity normalisation, resampling and patch sampling.

use super::{ScanCase, VolumeError, VolumeGrid, VolumeKind};
use crate::rng;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("non-finite input value at index {0}")]
    NonFinite(usize),
    #[error("clip range requires lo < hi, got lo={lo} hi={hi}")]
    BadRange { lo: f64, hi: f64 },
    #[error("target spacing must be strictly positive and finite, got {0:?}")]
    BadSpacing([f64; 3]),
    #[error("trilinear resampling of a MASK volume would break binarity; use nearest")]
    TrilinearOnMask,
    #[error("patch size {size:?} does not fit volume dims {dims:?}")]
    PatchTooLarge { size: [usize; 3], dims: [usize; 3] },
    #[error("foreground bias must lie in [0, 1], got {0}")]
    BadBias(f64),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Clamps raw CT intensities to `[lo, hi]` and maps them linearly onto `[0, 1]`.
pub fn clip_normalize_ct(raw: &VolumeGrid, lo: f64, hi: f64) -> Result<VolumeGrid, PreprocessError> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(PreprocessError::BadRange { lo, hi });
    }
    if let Some(i) = raw.data().iter().position(|v| !v.is_finite()) {
        return Err(PreprocessError::NonFinite(i));
    }
    let width = hi - lo;
    let data = raw
        .data()
        .iter()
        .map(|&v| ((v.clamp(lo, hi) - lo) / width).clamp(0.0, 1.0))
        .collect();
    Ok(raw.like(VolumeKind::CtNorm, data)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleMode {
    Trilinear,
    Nearest,
}

/// Resamples onto a grid with `target_spacing`.
///
/// Output voxel centres are mapped into input index space with voxel-centre
/// alignment (`(i + 0.5) * t / s - 0.5`); samples outside the input clamp to
/// the boundary voxel.
pub fn resample(
    vol: &VolumeGrid,
    target_spacing: [f64; 3],
    mode: ResampleMode,
) -> Result<VolumeGrid, PreprocessError> {
    if target_spacing.iter().any(|&t| !(t.is_finite() && t > 0.0)) {
        return Err(PreprocessError::BadSpacing(target_spacing));
    }
    if vol.kind() == VolumeKind::Mask && mode == ResampleMode::Trilinear {
        return Err(PreprocessError::TrilinearOnMask);
    }
    let dims = vol.dims();
    let spacing = vol.spacing();
    let mut out_dims = [0usize; 3];
    let mut ratio = [0f64; 3];
    for a in 0..3 {
        out_dims[a] = ((dims[a] as f64 * spacing[a] / target_spacing[a]).round() as usize).max(1);
        ratio[a] = target_spacing[a] / spacing[a];
    }
    // Per-axis sample positions are separable; precompute them once.
    let axis_positions = |a: usize| -> Vec<f64> {
        (0..out_dims[a])
            .map(|i| ((i as f64 + 0.5) * ratio[a] - 0.5).clamp(0.0, (dims[a] - 1) as f64))
            .collect()
    };
    let px = axis_positions(0);
    let py = axis_positions(1);
    let pz = axis_positions(2);
    let n = out_dims.iter().product();
    let mut data = Vec::with_capacity(n);
    match mode {
        ResampleMode::Nearest => {
            let nearest = |p: &[f64], a: usize| -> Vec<usize> {
                p.iter().map(|&v| (v.round() as usize).min(dims[a] - 1)).collect()
            };
            let (ix, iy, iz) = (nearest(&px, 0), nearest(&py, 1), nearest(&pz, 2));
            for &z in &iz {
                for &y in &iy {
                    for &x in &ix {
                        data.push(vol.get(x, y, z));
                    }
                }
            }
        }
        ResampleMode::Trilinear => {
            let split = |p: &[f64], a: usize| -> Vec<(usize, usize, f64)> {
                p.iter()
                    .map(|&v| {
                        let i0 = v.floor() as usize;
                        let i1 = (i0 + 1).min(dims[a] - 1);
                        (i0, i1, v - i0 as f64)
                    })
                    .collect()
            };
            let (sx, sy, sz) = (split(&px, 0), split(&py, 1), split(&pz, 2));
            for &(z0, z1, fz) in &sz {
                for &(y0, y1, fy) in &sy {
                    for &(x0, x1, fx) in &sx {
                        let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
                        let c00 = lerp(vol.get(x0, y0, z0), vol.get(x1, y0, z0), fx);
                        let c10 = lerp(vol.get(x0, y1, z0), vol.get(x1, y1, z0), fx);
                        let c01 = lerp(vol.get(x0, y0, z1), vol.get(x1, y0, z1), fx);
                        let c11 = lerp(vol.get(x0, y1, z1), vol.get(x1, y1, z1), fx);
                        let c0 = lerp(c00, c10, fy);
                        let c1 = lerp(c01, c11, fy);
                        data.push(lerp(c0, c1, fz));
                    }
                }
            }
        }
    }
    Ok(VolumeGrid::new(out_dims, target_spacing, vol.kind(), data)?)
}

/// Patch sampling parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub size: [usize; 3],
    pub foreground_bias: f64,
    pub seed: u64,
}

/// Crops a patch triple at a common origin.
///
/// With probability `foreground_bias` the patch is centred on a uniformly
/// chosen ground-truth voxel, otherwise on a uniformly chosen voxel. The
/// centre sits at offset `size / 2` inside the patch unless the origin has to
/// be clamped to keep the patch in bounds.
pub fn sample_patch(case: &ScanCase, spec: &PatchSpec) -> Result<ScanCase, PreprocessError> {
    let dims = case.dims();
    if (0..3).any(|a| spec.size[a] == 0 || spec.size[a] > dims[a]) {
        return Err(PreprocessError::PatchTooLarge {
            size: spec.size,
            dims,
        });
    }
    if !(0.0..=1.0).contains(&spec.foreground_bias) {
        return Err(PreprocessError::BadBias(spec.foreground_bias));
    }
    let mut rng = rng::seeded(spec.seed);
    let want_foreground = rng.random::<f64>() < spec.foreground_bias;
    let foreground: Vec<usize> = if want_foreground {
        case.gt
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect()
    } else {
        Vec::new()
    };
    let center_index = if foreground.is_empty() {
        rng.random_range(0..case.gt.len())
    } else {
        foreground[rng.random_range(0..foreground.len())]
    };
    let center = case.gt.coords(center_index);
    let mut origin = [0usize; 3];
    for a in 0..3 {
        let half = spec.size[a] / 2;
        origin[a] = center[a].saturating_sub(half).min(dims[a] - spec.size[a]);
    }
    Ok(ScanCase {
        id: case.id.clone(),
        pet: case.pet.crop(origin, spec.size)?,
        ct: case.ct.crop(origin, spec.size)?,
        gt: case.gt.crop(origin, spec.size)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ct_raw(values: Vec<f64>) -> VolumeGrid {
        let n = values.len();
        VolumeGrid::new([n, 1, 1], [1.0; 3], VolumeKind::CtRaw, values).unwrap()
    }

    #[test]
    fn clip_normalize_examples() {
        let out = clip_normalize_ct(&ct_raw(vec![-1000.0, 3000.0, 1000.0, -5000.0, 9000.0]), -1000.0, 3000.0)
            .unwrap();
        assert_eq!(out.data(), &[0.0, 1.0, 0.5, 0.0, 1.0]);
        assert_eq!(out.kind(), VolumeKind::CtNorm);
    }

    #[test]
    fn clip_normalize_errors() {
        let e = clip_normalize_ct(&ct_raw(vec![0.0, 1.0, f64::NAN]), -1000.0, 3000.0).unwrap_err();
        assert_eq!(e, PreprocessError::NonFinite(2));
        assert!(e.to_string().contains("index 2"));
        assert!(matches!(
            clip_normalize_ct(&ct_raw(vec![0.0]), 1.0, 1.0),
            Err(PreprocessError::BadRange { .. })
        ));
    }

    proptest! {
        #[test]
        fn clip_normalize_monotone_and_idempotent(mut v in prop::collection::vec(-5000.0f64..5000.0, 2..64)) {
            v.sort_by(f64::total_cmp);
            let out = clip_normalize_ct(&ct_raw(v), -1000.0, 3000.0).unwrap();
            prop_assert!(out.data().windows(2).all(|w| w[0] <= w[1]));
            let again = clip_normalize_ct(&out, 0.0, 1.0).unwrap();
            prop_assert_eq!(again.data(), out.data());
        }
    }

    #[test]
    fn resample_identity_and_downsample() {
        let data: Vec<f64> = (0..64).map(|i| (i * 7 % 13) as f64).collect();
        let v = VolumeGrid::new([4, 4, 4], [2.0; 3], VolumeKind::Suv, data).unwrap();
        for mode in [ResampleMode::Nearest, ResampleMode::Trilinear] {
            let same = resample(&v, [2.0; 3], mode).unwrap();
            assert_eq!(same, v);
        }
        let down = resample(&v, [4.0; 3], ResampleMode::Trilinear).unwrap();
        assert_eq!(down.dims(), [2, 2, 2]);
        assert_eq!(down.spacing(), [4.0; 3]);
    }

    #[test]
    fn resample_output_dims_round_half_away() {
        let v = VolumeGrid::filled([5, 3, 1], [1.0; 3], VolumeKind::Suv, 1.0).unwrap();
        // 5*1/2 = 2.5 -> 3, 3*1/2 = 1.5 -> 2, 1*1/2 = 0.5 -> 1
        let out = resample(&v, [2.0; 3], ResampleMode::Nearest).unwrap();
        assert_eq!(out.dims(), [3, 2, 1]);
        let tiny = resample(&v, [100.0; 3], ResampleMode::Nearest).unwrap();
        assert_eq!(tiny.dims(), [1, 1, 1]);
    }

    #[test]
    fn trilinear_midpoint() {
        // Upsampling 2 voxels (spacing 2) to spacing 1 puts samples at input
        // indices -0.25, 0.25, 0.75, 1.25.
        let v = VolumeGrid::new([2, 1, 1], [2.0, 1.0, 1.0], VolumeKind::Suv, vec![0.0, 4.0]).unwrap();
        let up = resample(&v, [1.0, 1.0, 1.0], ResampleMode::Trilinear).unwrap();
        assert_eq!(up.dims(), [4, 1, 1]);
        assert_eq!(up.data(), &[0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn mask_requires_nearest() {
        let m = VolumeGrid::filled([2, 2, 2], [1.0; 3], VolumeKind::Mask, 1.0).unwrap();
        assert_eq!(
            resample(&m, [0.7; 3], ResampleMode::Trilinear).unwrap_err(),
            PreprocessError::TrilinearOnMask
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn nearest_keeps_masks_binary(
            bits in prop::collection::vec(prop::bool::ANY, 60),
            t in prop::array::uniform3(0.3f64..4.0),
        ) {
            let data = bits.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
            let m = VolumeGrid::new([3, 4, 5], [1.0, 1.5, 2.0], VolumeKind::Mask, data).unwrap();
            let out = resample(&m, t, ResampleMode::Nearest).unwrap();
            prop_assert!(out.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }

        #[test]
        fn constant_stays_constant(c in -100.0f64..100.0, t in prop::array::uniform3(0.3f64..4.0)) {
            let v = VolumeGrid::filled([4, 3, 5], [1.0, 2.0, 0.5], VolumeKind::Suv, c).unwrap();
            for mode in [ResampleMode::Nearest, ResampleMode::Trilinear] {
                let out = resample(&v, t, mode).unwrap();
                prop_assert!(out.data().iter().all(|&x| x == c));
            }
        }
    }

    fn single_voxel_case(dims: [usize; 3], fg: [usize; 3]) -> ScanCase {
        let n = dims.iter().product();
        let pet_data: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let pet = VolumeGrid::new(dims, [2.0; 3], VolumeKind::Suv, pet_data).unwrap();
        let ct = VolumeGrid::filled(dims, [2.0; 3], VolumeKind::CtNorm, 0.25).unwrap();
        let mut gt = vec![0.0; n];
        gt[pet.index(fg[0], fg[1], fg[2])] = 1.0;
        let gt = VolumeGrid::new(dims, [2.0; 3], VolumeKind::Mask, gt).unwrap();
        ScanCase::new("c", pet, ct, gt).unwrap()
    }

    #[test]
    fn patch_is_deterministic_and_aligned() {
        let case = single_voxel_case([12, 10, 8], [5, 5, 4]);
        let spec = PatchSpec { size: [4, 4, 4], foreground_bias: 0.5, seed: 99 };
        let a = sample_patch(&case, &spec).unwrap();
        let b = sample_patch(&case, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pet.dims(), [4, 4, 4]);
        assert!(a.pet.same_geometry(&a.ct) && a.pet.same_geometry(&a.gt));
        // PET holds linear indices of the source, so the three crops must
        // agree with one common origin.
        let origin = case.pet.coords(a.pet.data()[0] as usize);
        assert_eq!(a.gt, case.gt.crop(origin, [4, 4, 4]).unwrap());
        assert_eq!(a.ct, case.ct.crop(origin, [4, 4, 4]).unwrap());
    }

    #[test]
    fn forced_foreground_centres_the_voxel() {
        let case = single_voxel_case([20, 20, 20], [9, 11, 10]);
        for seed in 0..20 {
            let spec = PatchSpec { size: [6, 6, 6], foreground_bias: 1.0, seed };
            let p = sample_patch(&case, &spec).unwrap();
            assert_eq!(p.gt.get(3, 3, 3), 1.0);
            assert_eq!(p.gt.count_nonzero(), 1);
        }
    }

    #[test]
    fn empty_foreground_degrades_to_uniform() {
        let dims = [6, 6, 6];
        let pet = VolumeGrid::filled(dims, [1.0; 3], VolumeKind::Suv, 1.0).unwrap();
        let ct = VolumeGrid::filled(dims, [1.0; 3], VolumeKind::CtNorm, 0.0).unwrap();
        let gt = VolumeGrid::filled(dims, [1.0; 3], VolumeKind::Mask, 0.0).unwrap();
        let case = ScanCase::new("e", pet, ct, gt).unwrap();
        let spec = PatchSpec { size: [2, 2, 2], foreground_bias: 1.0, seed: 3 };
        assert!(sample_patch(&case, &spec).is_ok());
    }

    #[test]
    fn oversized_patch_is_rejected() {
        let case = single_voxel_case([4, 4, 4], [1, 1, 1]);
        let spec = PatchSpec { size: [5, 4, 4], foreground_bias: 0.8, seed: 0 };
        assert!(matches!(sample_patch(&case, &spec), Err(PreprocessError::PatchTooLarge { .. })));
    }

    #[test]
    fn foreground_rate_tracks_bias() {
        // A uniform 4^3 patch in a 32^3 volume catches the single central
        // foreground voxel with probability 4^3/32^3, so the hit rate is the
        // Bernoulli(0.8) branch plus a ~0.0004 additive term.
        let case = single_voxel_case([32, 32, 32], [16, 16, 16]);
        let draws = 10_000u64;
        let hits = (0..draws)
            .filter(|&seed| {
                let spec = PatchSpec { size: [4, 4, 4], foreground_bias: 0.8, seed };
                sample_patch(&case, &spec).unwrap().gt.count_nonzero() > 0
            })
            .count();
        let rate = hits as f64 / draws as f64;
        assert!((rate - 0.8).abs() <= 0.02, "rate {rate}");
    }
}
