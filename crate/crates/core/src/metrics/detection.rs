//! Lesion detection classification and overlap scores.

use super::{LesionSet, MetricsError};
use crate::volgrid::VolumeGrid;
use serde::Serialize;

/// How one ground-truth lesion was matched.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LesionMatch {
    pub gt_label: u32,
    /// Every predicted component sharing at least one voxel with the lesion.
    pub pred_labels: Vec<u32>,
    /// Linear index of the lesion's SUVmax voxel.
    pub suvmax_index: usize,
    /// True when a predicted component covers the SUVmax voxel.
    pub detected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectionOutcome {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Predicted components that overlap ground truth without covering any
    /// SUVmax voxel; counted as neither TP nor FP.
    pub partial_overlap: usize,
    pub matches: Vec<LesionMatch>,
}

fn check_geometry(a: &LesionSet, b: &LesionSet) -> Result<(), MetricsError> {
    if a.same_geometry(b) {
        Ok(())
    } else {
        Err(MetricsError::GeometryMismatch(format!(
            "dims {:?} spacing {:?} vs dims {:?} spacing {:?}",
            a.dims, a.spacing, b.dims, b.spacing
        )))
    }
}

fn check_pet(set: &LesionSet, pet: &VolumeGrid) -> Result<(), MetricsError> {
    if set.dims == pet.dims() && set.spacing == pet.spacing() {
        Ok(())
    } else {
        Err(MetricsError::GeometryMismatch(format!(
            "lesion dims {:?} spacing {:?} vs PET dims {:?} spacing {:?}",
            set.dims,
            set.spacing,
            pet.dims(),
            pet.spacing()
        )))
    }
}

/// Index of the highest-uptake voxel; ties go to the first in scan order.
pub fn suvmax_voxel(voxels: &[usize], pet: &VolumeGrid) -> usize {
    let suv = pet.data();
    let mut best = voxels[0];
    for &i in &voxels[1..] {
        if suv[i] > suv[best] {
            best = i;
        }
    }
    best
}

/// A ground-truth lesion is a TP when some predicted component contains its
/// SUVmax voxel, otherwise an FN. A predicted component overlapping no
/// ground-truth voxel is an FP.
pub fn classify_detections(
    gt: &LesionSet,
    pred: &LesionSet,
    pet: &VolumeGrid,
) -> Result<DetectionOutcome, MetricsError> {
    check_geometry(gt, pred)?;
    check_pet(gt, pet)?;

    let mut pred_touches_gt = vec![false; pred.count + 1];
    let mut pred_covers_suvmax = vec![false; pred.count + 1];
    let mut matches = Vec::with_capacity(gt.count);
    let mut tp = 0;

    for label in 1..=gt.count as u32 {
        let voxels = gt.voxels(label);
        let mut pred_labels: Vec<u32> = voxels
            .iter()
            .map(|&i| pred.labels[i])
            .filter(|&l| l != 0)
            .collect();
        pred_labels.sort_unstable();
        pred_labels.dedup();
        for &l in &pred_labels {
            pred_touches_gt[l as usize] = true;
        }
        let suvmax_index = suvmax_voxel(voxels, pet);
        let covering = pred.labels[suvmax_index];
        let detected = covering != 0;
        if detected {
            tp += 1;
            pred_covers_suvmax[covering as usize] = true;
        }
        matches.push(LesionMatch {
            gt_label: label,
            pred_labels,
            suvmax_index,
            detected,
        });
    }

    let fp = (1..=pred.count).filter(|&l| !pred_touches_gt[l]).count();
    let partial_overlap = (1..=pred.count)
        .filter(|&l| pred_touches_gt[l] && !pred_covers_suvmax[l])
        .count();

    Ok(DetectionOutcome {
        tp,
        fp,
        fn_: gt.count - tp,
        partial_overlap,
        matches,
    })
}

/// `TP / (TP + (FP + FN) / 2)`, with 1.0 when there is nothing to detect and
/// nothing was predicted.
pub fn f1_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 && fp == 0 && fn_ == 0 {
        return 1.0;
    }
    tp as f64 / (tp as f64 + 0.5 * (fp + fn_) as f64)
}

fn dice_counts(inter: usize, a: usize, b: usize) -> f64 {
    if a + b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    }
}

/// `2|G ∩ P| / (|G| + |P|)` over whole masks; both empty gives 1.0.
pub fn patient_dsc(gt: &VolumeGrid, pred: &VolumeGrid) -> Result<f64, MetricsError> {
    if !gt.same_geometry(pred) {
        return Err(MetricsError::GeometryMismatch(format!(
            "gt dims {:?} vs pred dims {:?}",
            gt.dims(),
            pred.dims()
        )));
    }
    let (mut inter, mut g, mut p) = (0usize, 0usize, 0usize);
    for (&a, &b) in gt.data().iter().zip(pred.data()) {
        let (a, b) = (a != 0.0, b != 0.0);
        inter += (a && b) as usize;
        g += a as usize;
        p += b as usize;
    }
    Ok(dice_counts(inter, g, p))
}

/// Per ground-truth lesion DSC against the union of every predicted component
/// it overlaps; 0 for lesions with no overlapping prediction.
pub fn lesion_dscs(gt: &LesionSet, pred: &LesionSet) -> Result<Vec<f64>, MetricsError> {
    check_geometry(gt, pred)?;
    let mut out = Vec::with_capacity(gt.count);
    for label in 1..=gt.count as u32 {
        let voxels = gt.voxels(label);
        let mut matched: Vec<u32> = voxels
            .iter()
            .map(|&i| pred.labels[i])
            .filter(|&l| l != 0)
            .collect();
        matched.sort_unstable();
        matched.dedup();
        if matched.is_empty() {
            out.push(0.0);
            continue;
        }
        let inter = voxels.iter().filter(|&&i| pred.labels[i] != 0).count();
        let union_size: usize = matched.iter().map(|&l| pred.voxels(l).len()).sum();
        out.push(dice_counts(inter, voxels.len(), union_size));
    }
    Ok(out)
}
