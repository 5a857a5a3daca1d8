//! Segmentation losses with analytic gradients.
//!
//! Every loss maps a foreground-probability field `p` and a binary target `g`
//! of the same geometry to a scalar value and `∂loss/∂p`. Two-class terms use
//! `p(fg) = p`, `p(bg) = 1 - p` and likewise for `g`.
//!
//! | id      | value                                  |
//! |---------|----------------------------------------|
//! | `dice`  | soft Dice, `ε` in the denominator       |
//! | `focal` | focal loss on the true-class probability |
//! | `dfl`   | `dice + focal`                          |
//! | `l1dfl` | L1-weighted squared Dice + `focal`      |
//!
//! The L1DFL weights come from [`bin_weights`] and are recomputed on every
//! forward call but treated as constants in the backward pass.

mod binning;
mod gradcheck;
pub mod kernels;

pub use binning::{bin_count, bin_index, bin_weights, effective_width, l1_norms, BinWeighting};
pub use gradcheck::{grad_check, grad_check_slices, GradCheckReport};

use crate::volgrid::{VolumeError, VolumeGrid, VolumeKind};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("p has {p} voxels but g has {g}")]
    LengthMismatch { p: usize, g: usize },
    #[error("target is not binary: value {value} at index {index}")]
    NonBinaryTarget { index: usize, value: f64 },
    #[error("probability outside [0, 1]: value {value} at index {index}")]
    ProbabilityOutOfRange { index: usize, value: f64 },
    #[error("residual outside [0, 1]: value {value} at index {index}")]
    ResidualOutOfRange { index: usize, value: f64 },
    #[error("invalid loss config: {0}")]
    BadConfig(String),
    #[error("unknown loss {0:?}")]
    UnknownLoss(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FocalReduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossId {
    Dice,
    Focal,
    Dfl,
    L1dfl,
}

impl LossId {
    pub const ALL: [LossId; 4] = [LossId::Dice, LossId::Focal, LossId::Dfl, LossId::L1dfl];

    pub fn as_str(self) -> &'static str {
        match self {
            LossId::Dice => "dice",
            LossId::Focal => "focal",
            LossId::Dfl => "dfl",
            LossId::L1dfl => "l1dfl",
        }
    }
}

impl fmt::Display for LossId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossId {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dice" | "dl" => Ok(LossId::Dice),
            "focal" => Ok(LossId::Focal),
            "dfl" | "dicefocal" => Ok(LossId::Dfl),
            "l1dfl" => Ok(LossId::L1dfl),
            _ => Err(LossError::UnknownLoss(s.to_string())),
        }
    }
}

/// Loss hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Dice smoothing term.
    pub epsilon: f64,
    /// Focal focusing exponent.
    pub gamma: f64,
    /// Focal scale.
    pub alpha: f64,
    /// Nominal residual bin width for the L1 weighting.
    pub bin_width: f64,
    pub focal_reduction: FocalReduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            epsilon: 1e-5,
            gamma: 2.0,
            alpha: 1.0,
            bin_width: 0.1,
            focal_reduction: FocalReduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        // Zero epsilon is allowed so the reduction identities can be checked exactly.
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(LossError::BadConfig(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(LossError::BadConfig(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(LossError::BadConfig(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.bin_width > 0.0 && self.bin_width <= 1.0) {
            return Err(LossError::BadConfig(format!(
                "bin width must lie in (0, 1], got {}",
                self.bin_width
            )));
        }
        Ok(())
    }
}

/// Scalar loss with its gradient with respect to the foreground probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct LossResult {
    pub value: f64,
    /// `∂loss/∂p`, stored as a `WEIGHT` volume on the input geometry.
    pub grad: VolumeGrid,
    /// The residual binning used by `l1dfl`; `None` for the other losses.
    pub bins: Option<BinWeighting>,
}

/// Value, gradient and optional binning on flat slices.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceLoss {
    pub value: f64,
    pub grad: Vec<f64>,
    pub bins: Option<BinWeighting>,
}

fn check_inputs(p: &[f64], g: &[f64]) -> Result<(), LossError> {
    if p.len() != g.len() {
        return Err(LossError::LengthMismatch {
            p: p.len(),
            g: g.len(),
        });
    }
    if let Some((index, &value)) = p.iter().enumerate().find(|(_, &v)| !(0.0..=1.0).contains(&v)) {
        return Err(LossError::ProbabilityOutOfRange { index, value });
    }
    if let Some((index, &value)) = g.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
        return Err(LossError::NonBinaryTarget { index, value });
    }
    Ok(())
}

/// Evaluates `loss` on flat slices after validating them.
pub fn evaluate_slices(
    loss: LossId,
    p: &[f64],
    g: &[f64],
    cfg: &LossConfig,
) -> Result<SliceLoss, LossError> {
    cfg.validate()?;
    check_inputs(p, g)?;
    Ok(evaluate_unchecked(loss, p, g, cfg))
}

/// Evaluates `loss` without validating inputs. Used where the caller has
/// already established validity, e.g. inside optimisation loops.
pub(crate) fn evaluate_unchecked(loss: LossId, p: &[f64], g: &[f64], cfg: &LossConfig) -> SliceLoss {
    let focal = || kernels::focal(p, g, cfg.gamma, cfg.alpha, cfg.focal_reduction);
    match loss {
        LossId::Dice => {
            let (value, grad) = kernels::dice(p, g, cfg.epsilon);
            SliceLoss { value, grad, bins: None }
        }
        LossId::Focal => {
            let (value, grad) = focal();
            SliceLoss { value, grad, bins: None }
        }
        LossId::Dfl => {
            let (dv, dg) = kernels::dice(p, g, cfg.epsilon);
            let (fv, fg) = focal();
            SliceLoss {
                value: dv + fv,
                grad: add(dg, &fg),
                bins: None,
            }
        }
        LossId::L1dfl => {
            let deltas: Vec<f64> = p.iter().zip(g).map(|(&p, &g)| (g - p).abs()).collect();
            let bins = bin_weights(&deltas, cfg.bin_width).expect("validated residuals");
            let (wv, wg) = kernels::weighted_dice(p, g, &bins.voxel_weight, cfg.epsilon);
            let (fv, fg) = focal();
            SliceLoss {
                value: wv + fv,
                grad: add(wg, &fg),
                bins: Some(bins),
            }
        }
    }
}

fn add(mut a: Vec<f64>, b: &[f64]) -> Vec<f64> {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

/// Evaluates `loss` on volumes sharing one geometry.
pub fn evaluate(
    loss: LossId,
    p: &VolumeGrid,
    g: &VolumeGrid,
    cfg: &LossConfig,
) -> Result<LossResult, LossError> {
    if !p.same_geometry(g) {
        return Err(LossError::GeometryMismatch(format!(
            "p dims {:?} spacing {:?}, g dims {:?} spacing {:?}",
            p.dims(),
            p.spacing(),
            g.dims(),
            g.spacing()
        )));
    }
    let out = evaluate_slices(loss, p.data(), g.data(), cfg)?;
    Ok(LossResult {
        value: out.value,
        grad: p.like(VolumeKind::Weight, out.grad)?,
        bins: out.bins,
    })
}

pub fn dice_loss(p: &VolumeGrid, g: &VolumeGrid, cfg: &LossConfig) -> Result<LossResult, LossError> {
    evaluate(LossId::Dice, p, g, cfg)
}

pub fn focal_loss(p: &VolumeGrid, g: &VolumeGrid, cfg: &LossConfig) -> Result<LossResult, LossError> {
    evaluate(LossId::Focal, p, g, cfg)
}

pub fn dice_focal_loss(p: &VolumeGrid, g: &VolumeGrid, cfg: &LossConfig) -> Result<LossResult, LossError> {
    evaluate(LossId::Dfl, p, g, cfg)
}

pub fn l1dfl(p: &VolumeGrid, g: &VolumeGrid, cfg: &LossConfig) -> Result<LossResult, LossError> {
    evaluate(LossId::L1dfl, p, g, cfg)
}

/// The weighted squared-denominator Dice term of L1DFL on its own.
pub fn weighted_dice_loss(
    p: &VolumeGrid,
    g: &VolumeGrid,
    cfg: &LossConfig,
) -> Result<LossResult, LossError> {
    cfg.validate()?;
    p.ensure_same_geometry(g)
        .map_err(|e| LossError::GeometryMismatch(e.to_string()))?;
    check_inputs(p.data(), g.data())?;
    let deltas = l1_norms(p.data(), g.data())?;
    let bins = bin_weights(&deltas, cfg.bin_width)?;
    let (value, grad) = kernels::weighted_dice(p.data(), g.data(), &bins.voxel_weight, cfg.epsilon);
    Ok(LossResult {
        value,
        grad: p.like(VolumeKind::Weight, grad)?,
        bins: Some(bins),
    })
}
