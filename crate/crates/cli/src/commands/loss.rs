use super::read_volume;
use crate::error::CliError;
use crate::output::emit_json;
use crate::{parse_loss, LossFlags};
use clap::Args;
use l1dfl_core::losses::{evaluate, LossConfig, LossId};
use l1dfl_core::volgrid::{write_vvol, VolumeKind};
use serde::Serialize;
use std::path::PathBuf;

pub const LONG_ABOUT: &str = "\
Evaluate a loss and its gradient on a prediction/target pair.

PRED must be a PROB volume (a MASK is accepted and read as probabilities), GT a
MASK on the same geometry. Prints JSON with the value, gradient statistics and,
for l1dfl, the residual bin table (index, center, count, eff_width, density,
weight).";

#[derive(Debug, Args)]
pub struct LossArgs {
    /// Foreground probabilities.
    #[arg(long)]
    pub pred: PathBuf,
    /// Binary ground truth.
    #[arg(long)]
    pub gt: PathBuf,
    /// dice, focal, dfl or l1dfl.
    #[arg(long, default_value = "l1dfl", value_parser = parse_loss)]
    pub loss: LossId,
    #[command(flatten)]
    pub flags: LossFlags,
    /// Also write the gradient as a WEIGHT volume.
    #[arg(long)]
    pub grad_out: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct GradStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub l2_norm: f64,
    pub max_abs_index: usize,
}

#[derive(Debug, Serialize)]
pub struct BinRow {
    pub index: usize,
    pub center: f64,
    pub count: usize,
    pub eff_width: f64,
    pub density: f64,
    pub weight: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct LossReport {
    pub loss: LossId,
    pub value: f64,
    pub n_voxels: usize,
    pub config: LossConfig,
    pub grad: GradStats,
    pub bins: Option<Vec<BinRow>>,
}

pub fn run(args: &LossArgs) -> Result<(), CliError> {
    let cfg = args.flags.config()?;
    let pred = read_volume(&args.pred)?;
    let gt = read_volume(&args.gt)?;
    if !matches!(pred.kind(), VolumeKind::Prob | VolumeKind::Mask) {
        return Err(CliError::Input(format!("pred must be PROB or MASK, got {}", pred.kind())));
    }
    if gt.kind() != VolumeKind::Mask {
        return Err(CliError::Input(format!("gt must be MASK, got {}", gt.kind())));
    }
    let result = evaluate(args.loss, &pred, &gt, &cfg)?;
    let g = result.grad.data();
    let mut stats = GradStats {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        mean: g.iter().sum::<f64>() / g.len() as f64,
        l2_norm: g.iter().map(|v| v * v).sum::<f64>().sqrt(),
        max_abs_index: 0,
    };
    for (i, &v) in g.iter().enumerate() {
        stats.min = stats.min.min(v);
        stats.max = stats.max.max(v);
        if v.abs() > g[stats.max_abs_index].abs() {
            stats.max_abs_index = i;
        }
    }
    let bins = result.bins.as_ref().map(|b| {
        (0..b.n_bins())
            .map(|k| BinRow {
                index: k,
                center: b.centers[k],
                count: b.counts[k],
                eff_width: b.eff_width[k],
                density: b.density[k],
                weight: b.bin_weight[k],
            })
            .collect()
    });
    if let Some(path) = &args.grad_out {
        write_vvol(&result.grad, path).map_err(|e| CliError::write(path, std::io::Error::other(e)))?;
    }
    let report = LossReport {
        loss: args.loss,
        value: result.value,
        n_voxels: g.len(),
        config: cfg,
        grad: stats,
        bins,
    };
    emit_json(args.out.as_deref(), &report)
}
