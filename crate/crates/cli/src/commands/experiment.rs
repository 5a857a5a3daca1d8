use super::phantom::PhantomJob;
use super::read_config;
use crate::error::CliError;
use crate::output::{
    fmt_f64, fmt_opt, prepare_dir, write_csv, write_json, write_jsonl, Clock, InputDigest, RunManifest, MANIFEST_FILE,
};
use clap::Args;
use l1dfl_core::losses::{LossConfig, LossId};
use l1dfl_core::metrics::{f1_score, median, wilcoxon_signed_rank_one_tailed, WilcoxonResult};
use l1dfl_core::optim::{optimize_feature_model, CaseReport, FeatureModelResult, OptimConfig, OptimError, Split};
use l1dfl_core::phantom::{cohort, CohortSpec, PhantomConfig};
use l1dfl_core::volgrid::ScanCase;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

pub const LONG_ABOUT: &str = "\
Train the voxel-feature logistic model with each loss on a phantom cohort and
compare the losses on the held-out test split.

The config is a JSON object with optional keys: phantom ({base, cohort} as for
the phantom command), optim (OptimConfig; its loss_id is replaced per run),
losses (list, default all four) and loss_config (LossConfig). All losses share
the cohort, the split and the initial parameters.

Outputs in OUT_DIR: trajectory_LOSS.jsonl (one record per evaluation: step,
loss, dsc, tp, fp, fn, lr), cases.csv, summary.csv, summary.json and
manifest.json.

cases.csv columns:
  loss, case_id, scenario, n_gt_lesions, tp, fp, fn, partial_overlap, f1,
  patient_dsc, mean_lesion_dsc, tmtv_ml, pred_tmtv_ml, dmax_cm
summary.csv columns (one row per loss; _s and _m restrict to single- and
multiple-lesion test cases):
  loss, n_cases, n_s, n_m, mean_dsc, median_dsc, mean_dsc_s, median_dsc_s,
  mean_dsc_m, median_dsc_m, mean_tp, mean_fp, mean_fn, mean_fp_s, mean_fp_m,
  f1, f1_s, f1_m, best_step, wilcoxon_n, p_value
p_value is the one-tailed paired Wilcoxon test that l1dfl's patient DSC exceeds
this loss's; blank for l1dfl itself or with fewer than 5 non-zero differences.";

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub phantom: PhantomJob,
    pub optim: OptimConfig,
    pub losses: Vec<LossId>,
    pub loss_config: LossConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            phantom: PhantomJob {
                base: PhantomConfig {
                    dims: [32, 32, 32],
                    ..Default::default()
                },
                cohort: CohortSpec {
                    n_cases: 24,
                    ..Default::default()
                },
            },
            optim: OptimConfig {
                steps: 300,
                lr0: 0.05,
                eval_every: 25,
                ..Default::default()
            },
            losses: LossId::ALL.to_vec(),
            loss_config: LossConfig::default(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct LossSummary {
    pub loss: LossId,
    pub n_cases: usize,
    pub n_s: usize,
    pub n_m: usize,
    pub mean_dsc: Option<f64>,
    pub median_dsc: Option<f64>,
    pub mean_dsc_s: Option<f64>,
    pub median_dsc_s: Option<f64>,
    pub mean_dsc_m: Option<f64>,
    pub median_dsc_m: Option<f64>,
    pub mean_tp: Option<f64>,
    pub mean_fp: Option<f64>,
    pub mean_fn: Option<f64>,
    pub mean_fp_s: Option<f64>,
    pub mean_fp_m: Option<f64>,
    pub f1: f64,
    pub f1_s: f64,
    pub f1_m: f64,
    pub best_step: Option<usize>,
    /// One-tailed test that l1dfl's DSC exceeds this loss's.
    pub wilcoxon_vs_l1dfl: Option<Result<WilcoxonResult, String>>,
}

#[derive(Debug, Serialize)]
struct LossDetail<'a> {
    loss: LossId,
    weights: &'a [f64],
    feature_names: &'a [String],
    feature_mean: &'a [f64],
    feature_sd: &'a [f64],
    best_step: Option<usize>,
}

#[derive(Debug, Serialize)]
struct SummaryJson<'a> {
    split: &'a Split,
    summaries: &'a [LossSummary],
    models: Vec<LossDetail<'a>>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn f1_of<'a>(reports: impl Iterator<Item = &'a CaseReport>) -> f64 {
    let (tp, fp, fn_) = reports.fold((0, 0, 0), |a, r| (a.0 + r.report.tp, a.1 + r.report.fp, a.2 + r.report.fn_));
    f1_score(tp, fp, fn_)
}

fn summarize(loss: LossId, result: &FeatureModelResult, reference: Option<&FeatureModelResult>) -> LossSummary {
    let reports = &result.test_reports;
    let pick = |single: Option<bool>, f: &dyn Fn(&CaseReport) -> f64| -> Vec<f64> {
        reports
            .iter()
            .filter(|r| single.is_none_or(|s| r.single_lesion == s))
            .map(f)
            .collect()
    };
    let dsc = |r: &CaseReport| r.report.patient_dsc;
    let (all, s, m) = (pick(None, &dsc), pick(Some(true), &dsc), pick(Some(false), &dsc));
    let wilcoxon_vs_l1dfl = match reference {
        Some(l1) if loss != LossId::L1dfl => {
            Some(wilcoxon_signed_rank_one_tailed(&l1.test_dscs(), &result.test_dscs()).map_err(|e| e.to_string()))
        }
        _ => None,
    };
    LossSummary {
        loss,
        n_cases: all.len(),
        n_s: s.len(),
        n_m: m.len(),
        mean_dsc: mean(&all),
        median_dsc: median(&all),
        mean_dsc_s: mean(&s),
        median_dsc_s: median(&s),
        mean_dsc_m: mean(&m),
        median_dsc_m: median(&m),
        mean_tp: mean(&pick(None, &|r| r.report.tp as f64)),
        mean_fp: mean(&pick(None, &|r| r.report.fp as f64)),
        mean_fn: mean(&pick(None, &|r| r.report.fn_ as f64)),
        mean_fp_s: mean(&pick(Some(true), &|r| r.report.fp as f64)),
        mean_fp_m: mean(&pick(Some(false), &|r| r.report.fp as f64)),
        f1: f1_of(reports.iter()),
        f1_s: f1_of(reports.iter().filter(|r| r.single_lesion)),
        f1_m: f1_of(reports.iter().filter(|r| !r.single_lesion)),
        best_step: result.trajectory.best_step,
        wilcoxon_vs_l1dfl,
    }
}

/// Runs every configured loss on the cohort; results follow `cfg.losses`.
pub fn run_losses(cfg: &ExperimentConfig, cases: &[ScanCase]) -> Result<Vec<FeatureModelResult>, CliError> {
    let results: Vec<Result<FeatureModelResult, OptimError>> = cfg
        .losses
        .par_iter()
        .map(|&loss| {
            let optim = OptimConfig { loss, ..cfg.optim.clone() };
            optimize_feature_model(cases, &optim, &cfg.loss_config)
        })
        .collect();
    results
        .into_iter()
        .zip(&cfg.losses)
        .map(|(r, loss)| {
            r.map_err(|e| match CliError::from(e) {
                CliError::Numerical(m) => CliError::Numerical(format!("{loss}: {m}")),
                other => other,
            })
        })
        .collect()
}

pub fn run(args: &ExperimentArgs, clock: Clock) -> Result<(), CliError> {
    let cfg: ExperimentConfig = read_config(&args.config)?;
    if cfg.losses.is_empty() {
        return Err(CliError::Config("losses must not be empty".into()));
    }
    let mut unique = cfg.losses.clone();
    unique.sort();
    unique.dedup();
    if unique.len() != cfg.losses.len() {
        return Err(CliError::Config("losses must not repeat".into()));
    }
    cfg.optim.validate()?;
    cfg.loss_config.validate()?;
    super::phantom::validate_job(&cfg.phantom)?;

    let mut manifest = RunManifest::new("experiment", &cfg, Some(cfg.optim.seed), clock);
    manifest.inputs.push(InputDigest::of(&args.config)?);
    prepare_dir(&args.out, args.force)?;

    let cases: Vec<ScanCase> = cohort(&cfg.phantom.base, &cfg.phantom.cohort)?
        .into_iter()
        .map(|c| c.case)
        .collect();
    let results = run_losses(&cfg, &cases)?;
    let reference = cfg.losses.iter().position(|&l| l == LossId::L1dfl).map(|i| &results[i]);

    let mut outputs = Vec::new();
    let mut case_rows = Vec::new();
    let mut summaries = Vec::new();
    for (&loss, result) in cfg.losses.iter().zip(&results) {
        let name = format!("trajectory_{loss}.jsonl");
        write_jsonl(&args.out.join(&name), &result.trajectory.records)?;
        outputs.push(name);
        for c in &result.test_reports {
            let r = &c.report;
            let mean_lesion = mean(&r.lesion_dscs);
            case_rows.push(vec![
                loss.to_string(),
                c.case_id.clone(),
                if c.single_lesion { "S" } else { "M" }.to_string(),
                r.n_gt_lesions.to_string(),
                r.tp.to_string(),
                r.fp.to_string(),
                r.fn_.to_string(),
                r.partial_overlap.to_string(),
                fmt_f64(r.f1),
                fmt_f64(r.patient_dsc),
                fmt_opt(mean_lesion),
                fmt_f64(r.tmtv_ml),
                fmt_f64(r.pred_tmtv_ml),
                fmt_opt(r.dmax_cm),
            ]);
        }
        summaries.push(summarize(loss, result, reference));
    }

    write_csv(
        &args.out.join("cases.csv"),
        &[
            "loss", "case_id", "scenario", "n_gt_lesions", "tp", "fp", "fn", "partial_overlap", "f1", "patient_dsc",
            "mean_lesion_dsc", "tmtv_ml", "pred_tmtv_ml", "dmax_cm",
        ],
        &case_rows,
    )?;
    let summary_rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            let (wn, p) = match &s.wilcoxon_vs_l1dfl {
                Some(Ok(w)) => (w.n.to_string(), fmt_f64(w.p_value)),
                _ => (String::new(), String::new()),
            };
            vec![
                s.loss.to_string(),
                s.n_cases.to_string(),
                s.n_s.to_string(),
                s.n_m.to_string(),
                fmt_opt(s.mean_dsc),
                fmt_opt(s.median_dsc),
                fmt_opt(s.mean_dsc_s),
                fmt_opt(s.median_dsc_s),
                fmt_opt(s.mean_dsc_m),
                fmt_opt(s.median_dsc_m),
                fmt_opt(s.mean_tp),
                fmt_opt(s.mean_fp),
                fmt_opt(s.mean_fn),
                fmt_opt(s.mean_fp_s),
                fmt_opt(s.mean_fp_m),
                fmt_f64(s.f1),
                fmt_f64(s.f1_s),
                fmt_f64(s.f1_m),
                s.best_step.map(|b| b.to_string()).unwrap_or_default(),
                wn,
                p,
            ]
        })
        .collect();
    write_csv(
        &args.out.join("summary.csv"),
        &[
            "loss", "n_cases", "n_s", "n_m", "mean_dsc", "median_dsc", "mean_dsc_s", "median_dsc_s", "mean_dsc_m",
            "median_dsc_m", "mean_tp", "mean_fp", "mean_fn", "mean_fp_s", "mean_fp_m", "f1", "f1_s", "f1_m",
            "best_step", "wilcoxon_n", "p_value",
        ],
        &summary_rows,
    )?;
    write_json(
        &args.out.join("summary.json"),
        &SummaryJson {
            split: &results[0].split,
            summaries: &summaries,
            models: cfg
                .losses
                .iter()
                .zip(&results)
                .map(|(&loss, r)| LossDetail {
                    loss,
                    weights: &r.weights,
                    feature_names: &r.feature_names,
                    feature_mean: &r.feature_mean,
                    feature_sd: &r.feature_sd,
                    best_step: r.trajectory.best_step,
                })
                .collect(),
        },
    )?;
    outputs.extend(["cases.csv".to_string(), "summary.csv".into(), "summary.json".into()]);
    manifest.outputs = outputs;
    manifest.finish(&args.out.join(MANIFEST_FILE), clock)
}
