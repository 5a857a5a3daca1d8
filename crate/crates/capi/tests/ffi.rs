use l1dfl_capi::*;
use l1dfl_core::losses::{evaluate_slices, LossConfig, LossId};
use l1dfl_core::metrics::evaluate_case;
use l1dfl_core::rng;
use l1dfl_core::volgrid::{VolumeGrid, VolumeKind};
use rand::Rng as _;
use std::ffi::CStr;
use std::ptr;

const LOSSES: [(i32, LossId); 4] = [
    (L1DFL_LOSS_DICE, LossId::Dice),
    (L1DFL_LOSS_FOCAL, LossId::Focal),
    (L1DFL_LOSS_DFL, LossId::Dfl),
    (L1DFL_LOSS_L1DFL, LossId::L1dfl),
];

fn last_error() -> String {
    unsafe { CStr::from_ptr(l1dfl_last_error()) }.to_str().unwrap().to_string()
}

fn random_pair(seed: u64, dims: [usize; 3]) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng::seeded(seed);
    let n: usize = dims.iter().product();
    let p = (0..n).map(|_| r.random::<f64>()).collect();
    let g = (0..n).map(|_| if r.random::<f64>() < 0.2 { 1.0 } else { 0.0 }).collect();
    (p, g)
}

fn call_loss(id: i32, p: &[f64], pd: [usize; 3], g: &[f64], gd: [usize; 3], cfg: Option<&L1dflLossConfig>) -> (i32, f64, Vec<f64>) {
    let mut value = f64::NAN;
    let mut grad = vec![0.0; p.len()];
    let status = unsafe {
        l1dfl_loss_forward_backward(
            id,
            p.as_ptr(),
            pd.as_ptr(),
            g.as_ptr(),
            gd.as_ptr(),
            cfg.map_or(ptr::null(), |c| c as *const _),
            &mut value,
            grad.as_mut_ptr(),
        )
    };
    (status, value, grad)
}

#[test]
fn loss_matches_core() {
    for seed in 0..20u64 {
        let dims = [2 + seed as usize % 5, 3, 1 + seed as usize % 4];
        let (p, g) = random_pair(seed, dims);
        let cfg = LossConfig { gamma: 1.0 + seed as f64 * 0.1, ..Default::default() };
        let c_cfg = L1dflLossConfig::from(cfg);
        for (code, id) in LOSSES {
            let (status, value, grad) = call_loss(code, &p, dims, &g, dims, Some(&c_cfg));
            assert_eq!(status, L1DFL_OK, "{}", last_error());
            let reference = evaluate_slices(id, &p, &g, &cfg).unwrap();
            assert!((value - reference.value).abs() <= 1e-12);
            for (a, b) in grad.iter().zip(&reference.grad) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn perfect_prediction_is_near_zero() {
    let dims = [4, 4, 4];
    let (_, g) = random_pair(7, dims);
    for (code, _) in LOSSES {
        let (status, value, _) = call_loss(code, &g, dims, &g, dims, None);
        assert_eq!(status, L1DFL_OK);
        assert!(value.abs() < 1e-5, "{code}: {value}");
    }
}

#[test]
fn loss_errors_are_typed() {
    let (p, g) = random_pair(1, [3, 3, 3]);
    let (status, ..) = call_loss(L1DFL_LOSS_DICE, &p, [3, 3, 3], &g[..18], [3, 3, 2], None);
    assert_eq!(status, L1DFL_SHAPE_MISMATCH);
    assert!(last_error().contains("geometry mismatch"));

    let (status, ..) = call_loss(9, &p, [3, 3, 3], &g, [3, 3, 3], None);
    assert_eq!(status, L1DFL_BAD_CONFIG);

    let bad = L1dflLossConfig { bin_width: 0.0, ..l1dfl_loss_config_default() };
    let (status, ..) = call_loss(L1DFL_LOSS_L1DFL, &p, [3, 3, 3], &g, [3, 3, 3], Some(&bad));
    assert_eq!(status, L1DFL_BAD_CONFIG);

    let mut g2 = g.clone();
    g2[4] = 0.5;
    let (status, ..) = call_loss(L1DFL_LOSS_FOCAL, &p, [3, 3, 3], &g2, [3, 3, 3], None);
    assert_eq!(status, L1DFL_INVALID_INPUT);

    let dims = [3usize, 3, 3];
    let status = unsafe {
        l1dfl_loss_forward_backward(0, ptr::null(), dims.as_ptr(), g.as_ptr(), dims.as_ptr(), ptr::null(), ptr::null_mut(), ptr::null_mut())
    };
    assert_eq!(status, L1DFL_NULL_POINTER);

    let (status, ..) = call_loss(L1DFL_LOSS_DICE, &p, [3, 3, 3], &g, [3, 3, 3], None);
    assert_eq!(status, L1DFL_OK);
    assert_eq!(last_error(), "");
}

fn masks(seed: u64, dims: [usize; 3]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut r = rng::seeded(seed);
    let n: usize = dims.iter().product();
    let gt = (0..n).map(|_| if r.random::<f64>() < 0.1 { 1.0 } else { 0.0 }).collect();
    let pred = (0..n).map(|_| if r.random::<f64>() < 0.1 { 1.0 } else { 0.0 }).collect();
    let pet = (0..n).map(|_| r.random_range(0.0..10.0)).collect();
    (pred, gt, pet)
}

fn call_eval(pred: &[f64], gt: &[f64], pet: &[f64], dims: [usize; 3], spacing: [f64; 3]) -> (i32, Option<String>) {
    let mut out: *mut std::ffi::c_char = ptr::null_mut();
    let status = unsafe {
        l1dfl_evaluate_case(
            pred.as_ptr(),
            dims.as_ptr(),
            gt.as_ptr(),
            dims.as_ptr(),
            pet.as_ptr(),
            dims.as_ptr(),
            spacing.as_ptr(),
            &mut out,
        )
    };
    if out.is_null() {
        return (status, None);
    }
    let s = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_string();
    unsafe { l1dfl_string_free(out) };
    (status, Some(s))
}

#[test]
fn evaluate_matches_core() {
    for seed in 0..20u64 {
        let dims = [6, 5, 4];
        let spacing = [2.0, 2.0, 3.0];
        let (pred, gt, pet) = masks(seed, dims);
        let (status, json) = call_eval(&pred, &gt, &pet, dims, spacing);
        assert_eq!(status, L1DFL_OK, "{}", last_error());
        let v = |d: &Vec<f64>, k| VolumeGrid::new(dims, spacing, k, d.clone()).unwrap();
        let reference = evaluate_case(&v(&gt, VolumeKind::Mask), &v(&pred, VolumeKind::Mask), &v(&pet, VolumeKind::Suv)).unwrap();
        let got: serde_json::Value = serde_json::from_str(&json.unwrap()).unwrap();
        assert_eq!(got, serde_json::to_value(&reference).unwrap());
    }
}

#[test]
fn evaluate_self_and_errors() {
    let dims = [6, 5, 4];
    let (_, gt, pet) = masks(3, dims);
    let (status, json) = call_eval(&gt, &gt, &pet, dims, [2.0; 3]);
    assert_eq!(status, L1DFL_OK);
    let v: serde_json::Value = serde_json::from_str(&json.unwrap()).unwrap();
    assert_eq!(v["patient_dsc"], 1.0);
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    for k in ["tp", "fp", "fn", "f1", "patient_dsc", "lesion_dscs", "tmtv_ml", "dmax_cm"] {
        assert!(keys.contains(&k), "{k}");
    }

    let other = [6usize, 5, 3];
    let mut out: *mut std::ffi::c_char = ptr::null_mut();
    let status = unsafe {
        l1dfl_evaluate_case(gt.as_ptr(), other.as_ptr(), gt.as_ptr(), dims.as_ptr(), pet.as_ptr(), dims.as_ptr(), [2.0; 3].as_ptr(), &mut out)
    };
    assert_eq!(status, L1DFL_SHAPE_MISMATCH);
    assert!(out.is_null());

    let mut soft = gt.clone();
    soft[0] = 0.3;
    assert_eq!(call_eval(&soft, &gt, &pet, dims, [2.0; 3]).0, L1DFL_INVALID_INPUT);
    assert_eq!(call_eval(&gt, &gt, &pet, dims, [0.0, 2.0, 2.0]).0, L1DFL_INVALID_INPUT);
}

#[test]
fn repeated_calls_release_memory() {
    let dims = [4, 4, 4];
    let (pred, gt, pet) = masks(5, dims);
    for _ in 0..10_000 {
        assert_eq!(call_eval(&pred, &gt, &pet, dims, [2.0; 3]).0, L1DFL_OK);
    }
    unsafe { l1dfl_string_free(ptr::null_mut()) };
}

#[test]
fn version_and_header() {
    let v = unsafe { CStr::from_ptr(l1dfl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let header = include_str!("../include/l1dfl.h");
    for f in [
        "l1dfl_loss_config_default",
        "l1dfl_loss_forward_backward",
        "l1dfl_evaluate_case",
        "l1dfl_string_free",
        "l1dfl_last_error",
        "l1dfl_version",
    ] {
        assert!(header.contains(f), "{f}");
    }
}
