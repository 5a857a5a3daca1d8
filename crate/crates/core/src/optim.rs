//! Desk-scale optimisation harness.
//!
//! Two surrogate models are trained against the losses: one free logit per
//! voxel ([`optimize_logits`]) and a logistic regression over fixed per-voxel
//! features ([`optimize_feature_model`]). Both record a [`Trajectory`] of
//! periodic evaluations.

use crate::losses::{evaluate_unchecked, LossConfig, LossError, LossId};
use crate::metrics::{evaluate_case, DetectionReport, MetricsError};
use crate::rng;
use crate::volgrid::{ScanCase, VolumeGrid, VolumeKind};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub const DEFAULT_LR0: f64 = 2e-4;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-5;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Probability above which a voxel is predicted foreground.
pub const PREDICTION_THRESHOLD: f64 = 0.5;
/// Normalised CT value above which a voxel counts as body tissue.
pub const BODY_CT_THRESHOLD: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("invalid optimisation config: {0}")]
    BadConfig(String),
    #[error("learning-rate step {step} exceeds total {total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("cohort has {0} cases, need at least 4")]
    CohortTooSmall(usize),
    #[error("non-finite {what} at step {step}")]
    NonFinite {
        step: usize,
        what: String,
        /// Records gathered before the abort.
        trajectory: Box<Trajectory>,
    },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    /// First/second-moment update with bias correction and decoupled weight decay.
    AdaptiveMoments,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    #[serde(rename = "loss_id")]
    pub loss: LossId,
    pub steps: usize,
    pub lr0: f64,
    pub schedule: Schedule,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub eval_every: usize,
    /// Decoupled weight decay; only used by `adaptive_moments`.
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            loss: LossId::L1dfl,
            steps: 2000,
            lr0: DEFAULT_LR0,
            schedule: Schedule::Cosine,
            optimizer: OptimizerKind::AdaptiveMoments,
            seed: 0,
            eval_every: 100,
            weight_decay: DEFAULT_WEIGHT_DECAY,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if self.steps == 0 {
            return Err(OptimError::BadConfig("steps must be at least 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(OptimError::BadConfig(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self.eval_every == 0 {
            return Err(OptimError::BadConfig("eval_every must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(OptimError::BadConfig("weight_decay must be >= 0".into()));
        }
        Ok(())
    }

    /// Learning rate applied at `step`.
    pub fn lr(&self, step: usize) -> Result<f64, OptimError> {
        match self.schedule {
            Schedule::Constant if step <= self.steps => Ok(self.lr0),
            Schedule::Constant => Err(OptimError::StepOutOfRange { step, total: self.steps }),
            Schedule::Cosine => cosine_lr(step, self.steps, self.lr0),
        }
    }

    fn is_eval_step(&self, step: usize) -> bool {
        step.is_multiple_of(self.eval_every) || step == self.steps
    }
}

/// `lr0 · (1 + cos(π · step / total)) / 2`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64, OptimError> {
    if step > total_steps {
        return Err(OptimError::StepOutOfRange { step, total: total_steps });
    }
    if total_steps == 0 {
        return Ok(lr0);
    }
    Ok(lr0 * (1.0 + (PI * step as f64 / total_steps as f64).cos()) / 2.0)
}

/// One evaluation. `loss` is the objective at the parameters reached after
/// `step` updates; the metrics come from the thresholded prediction and `lr`
/// is the rate of the next update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub loss: f64,
    pub dsc: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    /// Step of the record with the highest DSC (first one on ties).
    pub best_step: Option<usize>,
}

impl Trajectory {
    fn push(&mut self, r: TrajectoryRecord) -> bool {
        let improved = match self.best_step.and_then(|s| self.records.iter().find(|x| x.step == s)) {
            Some(best) => r.dsc > best.dsc,
            None => true,
        };
        if improved {
            self.best_step = Some(r.step);
        }
        self.records.push(r);
        improved
    }

    pub fn last(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }
}

enum Optimizer {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32, weight_decay: f64 },
}

impl Optimizer {
    fn new(cfg: &OptimConfig, n: usize) -> Self {
        match cfg.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::AdaptiveMoments => Optimizer::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
                weight_decay: cfg.weight_decay,
            },
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            Optimizer::Sgd => {
                for (x, g) in theta.iter_mut().zip(grad) {
                    *x -= lr * g;
                }
            }
            Optimizer::Adam { m, v, t, weight_decay } => {
                *t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*t);
                let c2 = 1.0 - ADAM_BETA2.powi(*t);
                for i in 0..theta.len() {
                    let g = grad[i];
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let update = (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                    theta[i] -= lr * (update + *weight_decay * theta[i]);
                }
            }
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn threshold_mask(like: &VolumeGrid, p: &[f64]) -> VolumeGrid {
    let data = p.iter().map(|&v| if v > PREDICTION_THRESHOLD { 1.0 } else { 0.0 }).collect();
    like.like(VolumeKind::Mask, data).expect("same length")
}

fn non_finite(step: usize, what: &str, trajectory: &Trajectory) -> OptimError {
    OptimError::NonFinite {
        step,
        what: what.to_string(),
        trajectory: Box::new(trajectory.clone()),
    }
}

/// Fits one free logit per voxel of `case` to its ground truth, starting from
/// `θ = 0` (`p = 0.5`). The config seed is unused because nothing is random.
pub fn optimize_logits(case: &ScanCase, cfg: &OptimConfig, loss_cfg: &LossConfig) -> Result<Trajectory, OptimError> {
    cfg.validate()?;
    loss_cfg.validate()?;
    let g = case.gt.data();
    let n = g.len();
    let mut theta = vec![0.0; n];
    let mut opt = Optimizer::new(cfg, n);
    let mut traj = Trajectory::default();
    let mut grad_theta = vec![0.0; n];

    for step in 0..=cfg.steps {
        let p: Vec<f64> = theta.iter().map(|&z| sigmoid(z)).collect();
        let out = evaluate_unchecked(cfg.loss, &p, g, loss_cfg);
        if !out.value.is_finite() {
            return Err(non_finite(step, "loss", &traj));
        }
        for i in 0..n {
            grad_theta[i] = out.grad[i] * p[i] * (1.0 - p[i]);
        }
        if grad_theta.iter().any(|v| !v.is_finite()) {
            return Err(non_finite(step, "gradient", &traj));
        }
        let lr = cfg.lr(step)?;
        if cfg.is_eval_step(step) {
            let pred = threshold_mask(&case.gt, &p);
            let report = evaluate_case(&case.gt, &pred, &case.pet)?;
            traj.push(TrajectoryRecord {
                step,
                loss: out.value,
                dsc: report.patient_dsc,
                tp: report.tp,
                fp: report.fp,
                fn_: report.fn_,
                lr,
            });
        }
        if step < cfg.steps {
            opt.step(&mut theta, &grad_theta, lr);
        }
    }
    Ok(traj)
}

/// Names of the per-voxel features, in column order.
pub const FEATURE_NAMES: [&str; 5] = ["suv", "suv_mean_3", "suv_max_3", "ct", "body_depth_mm"];
pub const N_FEATURES: usize = FEATURE_NAMES.len();

/// Exact Euclidean distance (mm) from each body voxel to the nearest voxel
/// outside the body or to the volume boundary; 0 outside the body.
pub fn body_depth_mm(body: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let n = body.len();
    let mut d2: Vec<f64> = body.iter().map(|&b| if b { f64::INFINITY } else { 0.0 }).collect();
    let [nx, ny, _] = dims;
    let strides = [1, nx, nx * ny];
    for axis in 0..3 {
        let len = dims[axis];
        let s = spacing[axis];
        let mut f = vec![0.0; len];
        let mut out = vec![0.0; len];
        let others: Vec<usize> = (0..n)
            .filter(|&i| {
                let c = [i % nx, (i / nx) % ny, i / (nx * ny)];
                c[axis] == 0
            })
            .collect();
        for start in others {
            for k in 0..len {
                f[k] = d2[start + k * strides[axis]];
            }
            lower_envelope(&f, s, &mut out);
            for k in 0..len {
                d2[start + k * strides[axis]] = out[k];
            }
        }
    }
    (0..n)
        .map(|i| {
            if !body[i] {
                return 0.0;
            }
            let c = [i % nx, (i / nx) % ny, i / (nx * ny)];
            let edge = (0..3)
                .map(|a| ((c[a] as f64 + 0.5) * spacing[a]).min((dims[a] as f64 - c[a] as f64 - 0.5) * spacing[a]))
                .fold(f64::INFINITY, f64::min);
            d2[i].sqrt().min(edge)
        })
        .collect()
}

/// One-dimensional squared distance transform by the lower envelope of
/// parabolas rooted at each sample.
fn lower_envelope(f: &[f64], spacing: f64, out: &mut [f64]) {
    let n = f.len();
    let pos = |q: usize| q as f64 * spacing;
    let roots: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if roots.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut v: Vec<usize> = Vec::with_capacity(roots.len());
    let mut z: Vec<f64> = Vec::with_capacity(roots.len() + 1);
    let intersect = |a: usize, b: usize| {
        ((f[b] + pos(b) * pos(b)) - (f[a] + pos(a) * pos(a))) / (2.0 * (pos(b) - pos(a)))
    };
    for &q in &roots {
        loop {
            match v.last() {
                Some(&last) => {
                    let s = intersect(last, q);
                    if v.len() > 1 && s <= z[v.len() - 1] {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
            }
        }
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Per-voxel feature rows (`N_FEATURES` columns, voxel-major) for one case.
pub fn voxel_features(case: &ScanCase) -> Vec<[f64; N_FEATURES]> {
    let dims = case.dims();
    let [nx, ny, nz] = dims;
    let suv = case.pet.data();
    let ct = case.ct.data();
    let body: Vec<bool> = ct.iter().map(|&v| v > BODY_CT_THRESHOLD).collect();
    let depth = body_depth_mm(&body, dims, case.spacing());
    let mut rows = Vec::with_capacity(suv.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let (mut sum, mut max, mut count) = (0.0, f64::NEG_INFINITY, 0usize);
                for dz in -1isize..=1 {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            let (xn, yn, zn) = (x as isize + dx, y as isize + dy, z as isize + dz);
                            if xn < 0 || yn < 0 || zn < 0 || xn >= nx as isize || yn >= ny as isize || zn >= nz as isize {
                                continue;
                            }
                            let v = suv[xn as usize + nx * (yn as usize + ny * zn as usize)];
                            sum += v;
                            max = f64::max(max, v);
                            count += 1;
                        }
                    }
                }
                let i = x + nx * (y + ny * z);
                rows.push([suv[i], sum / count as f64, max, ct[i], depth[i]]);
            }
        }
    }
    rows
}

/// Case ids assigned to each split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Deterministic shuffle-and-cut split: a quarter (at least one case) each
/// for validation and test, the rest for training.
pub fn split_cases(ids: &[String], seed: u64) -> Result<Split, OptimError> {
    if ids.len() < 4 {
        return Err(OptimError::CohortTooSmall(ids.len()));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    let mut r = rng::seeded(rng::derive_seed(seed, 0x5eed));
    for i in (1..order.len()).rev() {
        order.swap(i, r.random_range(0..=i));
    }
    let n_hold = ((ids.len() as f64) / 4.0).round().max(1.0) as usize;
    let pick = |range: std::ops::Range<usize>| {
        let mut v: Vec<String> = order[range].iter().map(|&i| ids[i].clone()).collect();
        v.sort();
        v
    };
    Ok(Split {
        test: pick(0..n_hold),
        val: pick(n_hold..2 * n_hold),
        train: pick(2 * n_hold..ids.len()),
    })
}

/// Test-set report for one case.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseReport {
    pub case_id: String,
    pub single_lesion: bool,
    pub report: DetectionReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeatureModelResult {
    pub trajectory: Trajectory,
    pub split: Split,
    pub feature_names: Vec<String>,
    pub feature_mean: Vec<f64>,
    pub feature_sd: Vec<f64>,
    /// Weights of the best validation checkpoint; the bias is last.
    pub weights: Vec<f64>,
    /// Test cases in id order.
    pub test_reports: Vec<CaseReport>,
}

impl FeatureModelResult {
    /// Patient-level DSC of each test case, aligned with `test_reports`.
    pub fn test_dscs(&self) -> Vec<f64> {
        self.test_reports.iter().map(|r| r.report.patient_dsc).collect()
    }
}

struct Prepared<'a> {
    case: &'a ScanCase,
    x: Vec<[f64; N_FEATURES]>,
}

fn predict(x: &[[f64; N_FEATURES]], w: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|row| {
            let z = row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + w[N_FEATURES];
            sigmoid(z)
        })
        .collect()
}

fn evaluate_set(set: &[Prepared], w: &[f64]) -> Result<(f64, Vec<DetectionReport>), OptimError> {
    let mut reports = Vec::with_capacity(set.len());
    for c in set {
        let p = predict(&c.x, w);
        let pred = threshold_mask(&c.case.gt, &p);
        reports.push(evaluate_case(&c.case.gt, &pred, &c.case.pet)?);
    }
    let mean = reports.iter().map(|r| r.patient_dsc).sum::<f64>() / reports.len() as f64;
    Ok((mean, reports))
}

/// Trains a logistic regression over standardised [`voxel_features`] on the
/// training split, checkpoints on mean validation DSC and reports the best
/// checkpoint on the test split. The split depends only on the case ids and
/// `cfg.seed`, so runs that differ only in the loss are paired.
pub fn optimize_feature_model(
    cohort: &[ScanCase],
    cfg: &OptimConfig,
    loss_cfg: &LossConfig,
) -> Result<FeatureModelResult, OptimError> {
    cfg.validate()?;
    loss_cfg.validate()?;
    let ids: Vec<String> = cohort.iter().map(|c| c.id.clone()).collect();
    let split = split_cases(&ids, cfg.seed)?;
    let prepare = |names: &[String]| -> Vec<Prepared> {
        names
            .iter()
            .map(|id| {
                let case = cohort.iter().find(|c| &c.id == id).expect("id from cohort");
                Prepared { case, x: voxel_features(case) }
            })
            .collect()
    };
    let mut train = prepare(&split.train);
    let mut val = prepare(&split.val);
    let mut test = prepare(&split.test);

    // Standardise with training statistics.
    let n_train: usize = train.iter().map(|c| c.x.len()).sum();
    let mut mean = vec![0.0; N_FEATURES];
    let mut sd = vec![0.0; N_FEATURES];
    for c in &train {
        for row in &c.x {
            for k in 0..N_FEATURES {
                mean[k] += row[k];
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= n_train as f64);
    for c in &train {
        for row in &c.x {
            for k in 0..N_FEATURES {
                sd[k] += (row[k] - mean[k]).powi(2);
            }
        }
    }
    sd.iter_mut().for_each(|s| {
        *s = (*s / n_train as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    });
    for set in [&mut train, &mut val, &mut test] {
        for c in set.iter_mut() {
            for row in c.x.iter_mut() {
                for k in 0..N_FEATURES {
                    row[k] = (row[k] - mean[k]) / sd[k];
                }
            }
        }
    }

    let n_params = N_FEATURES + 1;
    let mut w = vec![0.0; n_params];
    let mut best_w = w.clone();
    let mut opt = Optimizer::new(cfg, n_params);
    let mut traj = Trajectory::default();

    for step in 0..=cfg.steps {
        let mut loss = 0.0;
        let mut grad = vec![0.0; n_params];
        for c in &train {
            let p = predict(&c.x, &w);
            let out = evaluate_unchecked(cfg.loss, &p, c.case.gt.data(), loss_cfg);
            loss += out.value;
            for (i, row) in c.x.iter().enumerate() {
                let d = out.grad[i] * p[i] * (1.0 - p[i]);
                for k in 0..N_FEATURES {
                    grad[k] += d * row[k];
                }
                grad[N_FEATURES] += d;
            }
        }
        let scale = 1.0 / train.len() as f64;
        loss *= scale;
        grad.iter_mut().for_each(|g| *g *= scale);
        if !loss.is_finite() {
            return Err(non_finite(step, "loss", &traj));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(non_finite(step, "gradient", &traj));
        }
        let lr = cfg.lr(step)?;
        if cfg.is_eval_step(step) {
            let (dsc, reports) = evaluate_set(&val, &w)?;
            let improved = traj.push(TrajectoryRecord {
                step,
                loss,
                dsc,
                tp: reports.iter().map(|r| r.tp).sum(),
                fp: reports.iter().map(|r| r.fp).sum(),
                fn_: reports.iter().map(|r| r.fn_).sum(),
                lr,
            });
            if improved {
                best_w = w.clone();
            }
        }
        if step < cfg.steps {
            opt.step(&mut w, &grad, lr);
        }
    }

    let (_, reports) = evaluate_set(&test, &best_w)?;
    let test_reports = test
        .iter()
        .zip(reports)
        .map(|(c, report)| CaseReport {
            case_id: c.case.id.clone(),
            single_lesion: report.n_gt_lesions == 1,
            report,
        })
        .collect();
    Ok(FeatureModelResult {
        trajectory: traj,
        split,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        feature_mean: mean,
        feature_sd: sd,
        weights: best_w,
        test_reports,
    })
}
