//! Lesion-level evaluation of predicted masks against ground truth.
//!
//! Lesions are 18-connected components. A ground-truth lesion counts as
//! detected when a predicted component covers its SUVmax voxel; predicted
//! components touching no ground truth are false positives. On top of that
//! the module provides patient- and lesion-level DSC, MTV/TMTV/TLA, `D_max`,
//! threshold sweeps, quartile grouping and the paired Wilcoxon test.

mod clinical;
mod components;
mod detection;
mod stats;

pub use clinical::{clinical_quantities, dmax, dmax_brute_force, ClinicalQuantities};
pub use components::{connected_components_18, neighbors_18, LesionSet};
pub use detection::{
    classify_detections, f1_score, lesion_dscs, patient_dsc, suvmax_voxel, DetectionOutcome, LesionMatch,
};
pub use stats::{
    default_thresholds, dmax_groups, doubled_ranks, median, quantile, quantile_sorted, threshold_sweep,
    wilcoxon_signed_rank_one_tailed, DmaxGrouping, SweepRow, Threshold, WilcoxonResult, EXACT_MAX_N,
};

use crate::volgrid::VolumeGrid;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("mask is not binary: value {value} at index {index}")]
    NonBinary { index: usize, value: f64 },
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("insufficient pairs: {0} non-zero differences, need at least 5")]
    InsufficientPairs(usize),
    #[error("paired samples differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Everything measured for one case.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectionReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub partial_overlap: usize,
    pub f1: f64,
    pub n_gt_lesions: usize,
    pub n_pred_lesions: usize,
    pub matches: Vec<LesionMatch>,
    pub patient_dsc: f64,
    /// One entry per ground-truth lesion, in label order.
    pub lesion_dscs: Vec<f64>,
    /// Ground-truth lesion volumes (ml), in label order.
    pub mtv_ml: Vec<f64>,
    /// Ground-truth lesion activity (SUV·ml), in label order.
    pub tla: Vec<f64>,
    pub tmtv_ml: f64,
    pub total_tla: f64,
    pub pred_tmtv_ml: f64,
    /// Ground-truth `D_max` in cm; absent with fewer than two foreground voxels.
    pub dmax_cm: Option<f64>,
}

/// Evaluates a binary prediction against the ground truth of one case.
pub fn evaluate_case(
    gt_mask: &VolumeGrid,
    pred_mask: &VolumeGrid,
    pet: &VolumeGrid,
) -> Result<DetectionReport, MetricsError> {
    if !gt_mask.same_geometry(pred_mask) || !gt_mask.same_geometry(pet) {
        return Err(MetricsError::GeometryMismatch(format!(
            "gt {:?}/{:?}, pred {:?}/{:?}, pet {:?}/{:?}",
            gt_mask.dims(),
            gt_mask.spacing(),
            pred_mask.dims(),
            pred_mask.spacing(),
            pet.dims(),
            pet.spacing()
        )));
    }
    let gt = connected_components_18(gt_mask)?;
    let pred = connected_components_18(pred_mask)?;
    let outcome = classify_detections(&gt, &pred, pet)?;
    let quantities = clinical_quantities(&gt, pet)?;
    let pred_tmtv_ml = pred.total_voxels() as f64 * pred.voxel_volume_ml();
    Ok(DetectionReport {
        tp: outcome.tp,
        fp: outcome.fp,
        fn_: outcome.fn_,
        partial_overlap: outcome.partial_overlap,
        f1: f1_score(outcome.tp, outcome.fp, outcome.fn_),
        n_gt_lesions: gt.count,
        n_pred_lesions: pred.count,
        matches: outcome.matches,
        patient_dsc: patient_dsc(gt_mask, pred_mask)?,
        lesion_dscs: lesion_dscs(&gt, &pred)?,
        mtv_ml: quantities.mtv_ml,
        tla: quantities.tla,
        tmtv_ml: quantities.tmtv_ml,
        total_tla: quantities.total_tla,
        pred_tmtv_ml,
        dmax_cm: dmax(gt_mask),
    })
}
