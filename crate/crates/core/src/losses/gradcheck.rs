//! Central finite-difference check of the analytic loss gradients.

use super::{bin_weights, evaluate_unchecked, kernels, l1_norms, LossConfig, LossError, LossId};
use crate::volgrid::VolumeGrid;
use serde::Serialize;

/// Magnitude below which the absolute error is reported instead of the relative one.
const ABS_FALLBACK: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub loss: LossId,
    pub n_voxels: usize,
    pub h: f64,
    pub tol: f64,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub worst_coords: Option<[usize; 3]>,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

/// Compares the analytic gradient of `loss` against
/// `(L(p + h e_i) - L(p - h e_i)) / 2h` at every voxel.
///
/// For `l1dfl` the residual weights are frozen at `p`, matching the
/// constant-weight backward pass. A report is always produced; invalid inputs
/// simply show up as a failing check.
pub fn grad_check_slices(
    loss: LossId,
    p: &[f64],
    g: &[f64],
    cfg: &LossConfig,
    h: f64,
    tol: f64,
) -> GradCheckReport {
    let analytic = evaluate_unchecked(loss, p, g, cfg).grad;
    let frozen = match loss {
        LossId::L1dfl => l1_norms(p, g)
            .and_then(|d| bin_weights(&d, cfg.bin_width))
            .map(|b| b.voxel_weight)
            .ok(),
        _ => None,
    };
    let value_at = |x: &[f64]| -> f64 {
        match (&frozen, loss) {
            (Some(w), LossId::L1dfl) => {
                kernels::weighted_dice(x, g, w, cfg.epsilon).0
                    + kernels::focal(x, g, cfg.gamma, cfg.alpha, cfg.focal_reduction).0
            }
            _ => evaluate_unchecked(loss, x, g, cfg).value,
        }
    };

    let mut x = p.to_vec();
    let mut report = GradCheckReport {
        loss,
        n_voxels: p.len(),
        h,
        tol,
        max_rel_err: 0.0,
        worst_index: 0,
        worst_coords: None,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: 0.0,
        passed: true,
    };
    if loss == LossId::L1dfl && frozen.is_none() {
        report.max_rel_err = f64::INFINITY;
        report.passed = false;
        return report;
    }
    for i in 0..p.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = value_at(&x);
        x[i] = orig - h;
        let down = value_at(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs());
        let err = if scale < ABS_FALLBACK {
            (a - numeric).abs()
        } else {
            (a - numeric).abs() / scale
        };
        let err = if err.is_nan() { f64::INFINITY } else { err };
        if i == 0 || err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.passed = report.max_rel_err < tol;
    report
}

/// Volume wrapper around [`grad_check_slices`]; also reports the worst voxel's coordinates.
pub fn grad_check(
    loss: LossId,
    p: &VolumeGrid,
    g: &VolumeGrid,
    cfg: &LossConfig,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, LossError> {
    p.ensure_same_geometry(g)
        .map_err(|e| LossError::GeometryMismatch(e.to_string()))?;
    let mut report = grad_check_slices(loss, p.data(), g.data(), cfg, h, tol);
    report.worst_coords = Some(p.coords(report.worst_index));
    Ok(report)
}
