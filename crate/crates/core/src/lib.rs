//! Loss kernels, evaluation metrics and desk-scale experiments for lesion
//! segmentation in PET/CT volumes.
//!
//! The crate is organised by subsystem:
//!
//! - [`volgrid`]: the dense voxel grid, the `.vvol` codec and preprocessing.
//! - [`losses`]: Dice, Focal, Dice Focal and L1-weighted Dice Focal losses with
//!   analytic gradients.
//! - [`metrics`]: connected components, detection classification, DSC,
//!   clinical quantities, `D_max` and the Wilcoxon signed-rank test.
//! - [`phantom`]: deterministic synthetic PET/CT scans.
//! - [`optim`]: learning-rate schedules and the two surrogate optimisation
//!   experiments.

pub mod losses;
pub mod metrics;
pub mod optim;
pub mod phantom;
pub mod rng;
pub mod volgrid;

pub use losses::{LossConfig, LossId, LossResult};
pub use metrics::{DetectionReport, LesionSet};

pub use volgrid::{ScanCase, VolumeGrid, VolumeKind};
