use super::read_volume;
use crate::error::CliError;
use crate::output::{
    check_files, file_name, fmt_f64, fmt_opt, write_csv, write_json, Clock, InputDigest, RunManifest, MANIFEST_FILE,
};
use clap::Args;
use l1dfl_core::metrics::{
    default_thresholds, dmax_groups, evaluate_case, f1_score, median, threshold_sweep, wilcoxon_signed_rank_one_tailed,
    DetectionReport, DmaxGrouping, SweepRow, WilcoxonResult,
};
use l1dfl_core::volgrid::{VolumeGrid, VolumeKind};
use rayon::prelude::*;
use serde::Serialize;
use std::path::{Path, PathBuf};

pub const LONG_ABOUT: &str = "\
Lesion-level evaluation of prediction masks against ground truth.

Cases are the files ID_gt.vvol in --gt-dir; the PET is ID_pet.vvol in
--pet-dir and the prediction is the first of ID_pred.vvol, ID.vvol, ID_gt.vvol
found in the prediction directory. PROB predictions are binarised at p > 0.5.

Writes OUT (per-case CSV), OUT_STEM_summary.csv, OUT_STEM.json (full reports,
threshold sweeps, D_max groups, Wilcoxon tests) and manifest.json next to OUT.

Per-case CSV columns:
  pred_set, case_id, single_lesion, n_gt_lesions, n_pred_lesions, tp, fp, fn,
  partial_overlap, f1, patient_dsc, mean_lesion_dsc, tmtv_ml, total_tla,
  pred_tmtv_ml, dmax_cm
Summary CSV columns:
  pred_set, n_cases, mean_dsc, median_dsc, mean_tp, mean_fp, mean_fn, f1
  and, when --pred-dir-b is given, wilcoxon_n, wilcoxon_statistic, p_value
  (one-tailed test that this set's patient DSC exceeds the other set's).";

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction set A.
    #[arg(long)]
    pub pred_dir: PathBuf,
    /// Optional prediction set B for a paired comparison.
    #[arg(long)]
    pub pred_dir_b: Option<PathBuf>,
    /// Directory of ID_gt.vvol masks.
    #[arg(long)]
    pub gt_dir: PathBuf,
    /// Directory of ID_pet.vvol SUV volumes.
    #[arg(long)]
    pub pet_dir: PathBuf,
    /// Per-case CSV report path.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Serialize)]
pub struct CaseRow {
    pub pred_set: String,
    pub case_id: String,
    pub report: DetectionReport,
}

#[derive(Debug, Serialize)]
pub struct SetSummary {
    pub pred_set: String,
    pub n_cases: usize,
    pub mean_dsc: f64,
    pub median_dsc: f64,
    pub mean_tp: f64,
    pub mean_fp: f64,
    pub mean_fn: f64,
    pub f1: f64,
    pub threshold_sweep: Vec<SweepRow>,
    /// Median DSC per D_max group (G0..G3); `None` for empty groups.
    pub dmax_group_median_dsc: Option<[Option<f64>; 4]>,
    /// One-tailed test that this set beats the other, when two sets are given.
    pub wilcoxon: Option<Result<WilcoxonResult, String>>,
}

#[derive(Debug, Serialize)]
pub struct EvaluateOutput {
    pub case_ids: Vec<String>,
    pub dmax_grouping: Option<DmaxGrouping>,
    pub summaries: Vec<SetSummary>,
    pub cases: Vec<CaseRow>,
}

fn list_cases(gt_dir: &Path) -> Result<Vec<String>, CliError> {
    let entries = std::fs::read_dir(gt_dir).map_err(|e| CliError::read(gt_dir, e))?;
    let mut ids: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix("_gt.vvol")).map(String::from))
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(CliError::Input(format!("no *_gt.vvol files in {}", gt_dir.display())));
    }
    Ok(ids)
}

fn find_pred(dir: &Path, id: &str) -> Result<PathBuf, CliError> {
    [format!("{id}_pred.vvol"), format!("{id}.vvol"), format!("{id}_gt.vvol")]
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| CliError::Input(format!("no prediction for case {id} in {}", dir.display())))
}

fn binarize(pred: VolumeGrid) -> Result<VolumeGrid, CliError> {
    match pred.kind() {
        VolumeKind::Mask => Ok(pred),
        VolumeKind::Prob => {
            let data = pred.data().iter().map(|&p| if p > 0.5 { 1.0 } else { 0.0 }).collect();
            Ok(pred.like(VolumeKind::Mask, data).expect("same geometry"))
        }
        k => Err(CliError::Input(format!("prediction must be MASK or PROB, got {k}"))),
    }
}

struct Loaded {
    reports: Vec<Vec<DetectionReport>>,
    inputs: Vec<PathBuf>,
}

fn evaluate_sets(ids: &[String], pred_dirs: &[&Path], gt_dir: &Path, pet_dir: &Path) -> Result<Loaded, CliError> {
    let per_case: Vec<(Vec<DetectionReport>, Vec<PathBuf>)> = ids
        .par_iter()
        .map(|id| {
            let gt_path = gt_dir.join(format!("{id}_gt.vvol"));
            let pet_path = pet_dir.join(format!("{id}_pet.vvol"));
            let gt = read_volume(&gt_path)?;
            let pet = read_volume(&pet_path)?;
            let mut reports = Vec::new();
            let mut inputs = vec![gt_path, pet_path];
            for dir in pred_dirs {
                let path = find_pred(dir, id)?;
                let pred = binarize(read_volume(&path)?)?;
                let report = evaluate_case(&gt, &pred, &pet)
                    .map_err(|e| CliError::from(e).context(&format!("case {id}")))?;
                reports.push(report);
                inputs.push(path);
            }
            Ok((reports, inputs))
        })
        .collect::<Result<_, CliError>>()?;
    let mut reports = vec![Vec::with_capacity(ids.len()); pred_dirs.len()];
    let mut inputs = Vec::new();
    for (r, i) in per_case {
        for (set, rep) in r.into_iter().enumerate() {
            reports[set].push(rep);
        }
        inputs.extend(i);
    }
    Ok(Loaded { reports, inputs })
}

fn mean(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count();
    v.sum::<f64>() / n as f64
}

fn mean_lesion_dsc(r: &DetectionReport) -> Option<f64> {
    (!r.lesion_dscs.is_empty()).then(|| r.lesion_dscs.iter().sum::<f64>() / r.lesion_dscs.len() as f64)
}

pub fn run(args: &EvaluateArgs, clock: Clock) -> Result<(), CliError> {
    let stem = args
        .out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| CliError::Config("--out must name a file".into()))?;
    let parent = args.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let summary_path = parent.join(format!("{stem}_summary.csv"));
    let json_path = parent.join(format!("{stem}.json"));
    let manifest_path = parent.join(MANIFEST_FILE);
    check_files(&[args.out.clone(), summary_path.clone(), json_path.clone(), manifest_path.clone()], args.force)?;

    let mut manifest = RunManifest::new("evaluate", &serde_json::json!({
        "pred_dir": args.pred_dir,
        "pred_dir_b": args.pred_dir_b,
        "gt_dir": args.gt_dir,
        "pet_dir": args.pet_dir,
        "out": args.out,
    }), None, clock);

    let ids = list_cases(&args.gt_dir)?;
    let mut dirs: Vec<&Path> = vec![&args.pred_dir];
    let mut names = vec!["a".to_string()];
    if let Some(b) = &args.pred_dir_b {
        dirs.push(b);
        names.push("b".into());
    }
    let loaded = evaluate_sets(&ids, &dirs, &args.gt_dir, &args.pet_dir)?;
    for p in &loaded.inputs {
        manifest.inputs.push(InputDigest::of(p)?);
    }

    if !parent.as_os_str().is_empty() {
        std::fs::create_dir_all(&parent).map_err(|e| CliError::write(&parent, e))?;
    }

    // D_max grouping is a property of the ground truth, shared by every set.
    let reference = &loaded.reports[0];
    let with_dmax: Vec<(usize, f64)> = reference.iter().enumerate().filter_map(|(i, r)| r.dmax_cm.map(|d| (i, d))).collect();
    let dmax_grouping = if with_dmax.is_empty() {
        None
    } else {
        Some(dmax_groups(&with_dmax.iter().map(|x| x.1).collect::<Vec<_>>())?)
    };

    let dscs: Vec<Vec<f64>> = loaded.reports.iter().map(|s| s.iter().map(|r| r.patient_dsc).collect()).collect();
    let mut summaries = Vec::new();
    for (set, reports) in loaded.reports.iter().enumerate() {
        let d = &dscs[set];
        let (tp, fp, fn_) = reports.iter().fold((0, 0, 0), |a, r| (a.0 + r.tp, a.1 + r.fp, a.2 + r.fn_));
        let items: Vec<(f64, f64)> = reports.iter().map(|r| (r.tmtv_ml, r.patient_dsc)).collect();
        let group_medians = dmax_grouping.as_ref().map(|g| {
            let mut out = [None; 4];
            for (k, slot) in out.iter_mut().enumerate() {
                let members: Vec<f64> = with_dmax
                    .iter()
                    .zip(&g.groups)
                    .filter(|(_, &grp)| grp as usize == k)
                    .map(|((i, _), _)| d[*i])
                    .collect();
                *slot = median(&members);
            }
            out
        });
        let wilcoxon = (dscs.len() == 2)
            .then(|| wilcoxon_signed_rank_one_tailed(d, &dscs[1 - set]).map_err(|e| e.to_string()));
        summaries.push(SetSummary {
            pred_set: names[set].clone(),
            n_cases: reports.len(),
            mean_dsc: mean(d.iter().copied()),
            median_dsc: median(d).expect("non-empty"),
            mean_tp: mean(reports.iter().map(|r| r.tp as f64)),
            mean_fp: mean(reports.iter().map(|r| r.fp as f64)),
            mean_fn: mean(reports.iter().map(|r| r.fn_ as f64)),
            f1: f1_score(tp, fp, fn_),
            threshold_sweep: threshold_sweep(&items, &default_thresholds())?,
            dmax_group_median_dsc: group_medians,
            wilcoxon,
        });
    }

    let mut rows = Vec::new();
    for (set, reports) in loaded.reports.iter().enumerate() {
        for (id, r) in ids.iter().zip(reports) {
            rows.push(vec![
                names[set].clone(),
                id.clone(),
                (r.n_gt_lesions == 1).to_string(),
                r.n_gt_lesions.to_string(),
                r.n_pred_lesions.to_string(),
                r.tp.to_string(),
                r.fp.to_string(),
                r.fn_.to_string(),
                r.partial_overlap.to_string(),
                fmt_f64(r.f1),
                fmt_f64(r.patient_dsc),
                fmt_opt(mean_lesion_dsc(r)),
                fmt_f64(r.tmtv_ml),
                fmt_f64(r.total_tla),
                fmt_f64(r.pred_tmtv_ml),
                fmt_opt(r.dmax_cm),
            ]);
        }
    }
    write_csv(
        &args.out,
        &[
            "pred_set", "case_id", "single_lesion", "n_gt_lesions", "n_pred_lesions", "tp", "fp", "fn",
            "partial_overlap", "f1", "patient_dsc", "mean_lesion_dsc", "tmtv_ml", "total_tla", "pred_tmtv_ml",
            "dmax_cm",
        ],
        &rows,
    )?;

    let mut header = vec!["pred_set", "n_cases", "mean_dsc", "median_dsc", "mean_tp", "mean_fp", "mean_fn", "f1"];
    if dscs.len() == 2 {
        header.extend(["wilcoxon_n", "wilcoxon_statistic", "p_value"]);
    }
    let summary_rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            let mut row = vec![
                s.pred_set.clone(),
                s.n_cases.to_string(),
                fmt_f64(s.mean_dsc),
                fmt_f64(s.median_dsc),
                fmt_f64(s.mean_tp),
                fmt_f64(s.mean_fp),
                fmt_f64(s.mean_fn),
                fmt_f64(s.f1),
            ];
            match &s.wilcoxon {
                Some(Ok(w)) => row.extend([w.n.to_string(), fmt_f64(w.statistic), fmt_f64(w.p_value)]),
                Some(Err(_)) => row.extend([String::new(), String::new(), String::new()]),
                None => {}
            }
            row
        })
        .collect();
    write_csv(&summary_path, &header, &summary_rows)?;

    let cases = loaded
        .reports
        .into_iter()
        .enumerate()
        .flat_map(|(set, reports)| {
            let name = names[set].clone();
            ids.iter().cloned().zip(reports).map(move |(case_id, report)| CaseRow {
                pred_set: name.clone(),
                case_id,
                report,
            })
        })
        .collect();
    write_json(
        &json_path,
        &EvaluateOutput {
            case_ids: ids.clone(),
            dmax_grouping,
            summaries,
            cases,
        },
    )?;
    manifest.outputs = vec![file_name(&args.out), file_name(&summary_path), file_name(&json_path)];
    manifest.finish(&manifest_path, clock)
}
