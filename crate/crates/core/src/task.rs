//! Stage 1: one time-series GP per household, scored by MPE and gated.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Month, TaskSeries};
use crate::error::{Error, Result};
use crate::gp::{fit, GpHyperparams, GpModel, OptConfig};
use crate::kernels::KernelSpec;

/// Per-term cap on absolute percentage errors.
pub const MPE_TERM_CAP: f64 = 10.0;

/// Which training-window predictions the MPE is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpeMode {
    /// Leave-one-out predictive means (closed form for exact GPs).
    #[default]
    LeaveOneOut,
    /// In-sample posterior means at the training months.
    Fitted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStageConfig {
    pub kernel: KernelSpec,
    pub opt: OptConfig,
    pub mpe_mode: MpeMode,
}

impl Default for TaskStageConfig {
    fn default() -> Self {
        TaskStageConfig {
            kernel: default_stage1_kernel(),
            opt: OptConfig {
                freeze_period: true,
                min_lengthscale: Some(1.0),
                ..OptConfig::default()
            },
            mpe_mode: MpeMode::default(),
        }
    }
}

/// Periodic (12-month period) plus squared-exponential trend.
pub fn default_stage1_kernel() -> KernelSpec {
    KernelSpec::seasonal(1.0, 1.0, 12.0, 0.5, 12.0).expect("positive constants")
}

/// Stage-1 posterior marginals for one household.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub task_id: String,
    /// Training months followed by forecast months, increasing.
    pub eval_times: Vec<Month>,
    pub means: Vec<f64>,
    /// Predictive variances including observation noise.
    pub variances: Vec<f64>,
    pub train_mpe: f64,
}

impl PosteriorSummary {
    pub fn at(&self, t: Month) -> Option<(f64, f64)> {
        self.eval_times
            .binary_search(&t)
            .ok()
            .map(|i| (self.means[i], self.variances[i]))
    }
}

/// Mean absolute percentage error with each term capped at [`MPE_TERM_CAP`].
///
/// Denominators are floored at `1e-6 · mean|a|` (or the smallest positive
/// double when every actual is zero).
pub fn mpe(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.is_empty() {
        return Err(Error::EmptyInput);
    }
    if actual.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: actual.len(),
            found: predicted.len(),
        });
    }
    let n = actual.len() as f64;
    let mean_abs = actual.iter().map(|a| a.abs()).sum::<f64>() / n;
    let eps = (1e-6 * mean_abs).max(f64::MIN_POSITIVE);
    let total: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| ((a - p).abs() / a.abs().max(eps)).min(MPE_TERM_CAP))
        .sum();
    Ok(total / n)
}

/// Admits tasks into stage-2 training when `train_mpe < tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackingGate {
    pub tau: f64,
    /// When false every task passes.
    pub enabled: bool,
}

impl Default for StackingGate {
    fn default() -> Self {
        StackingGate {
            tau: 1.0,
            enabled: true,
        }
    }
}

impl StackingGate {
    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_nan() || tau < 0.0 {
            return Err(Error::Config(format!(
                "tau must be non-negative, got {tau}"
            )));
        }
        Ok(StackingGate { tau, enabled: true })
    }

    pub fn disabled() -> Self {
        StackingGate {
            tau: f64::INFINITY,
            enabled: false,
        }
    }

    pub fn passes(&self, summary: &PosteriorSummary) -> bool {
        !self.enabled || summary.train_mpe < self.tau
    }
}

/// Splits summaries into (passed, rejected), preserving order.
pub fn apply_gate<'a>(
    summaries: &'a [PosteriorSummary],
    gate: &StackingGate,
) -> (Vec<&'a PosteriorSummary>, Vec<&'a PosteriorSummary>) {
    summaries.iter().partition(|s| gate.passes(s))
}

fn inputs_of(times: &[Month]) -> Vec<Vec<f64>> {
    times.iter().map(|t| vec![t.index()]).collect()
}

/// Leave-one-out predictive means in original units.
fn loo_means(model: &GpModel<KernelSpec>) -> Vec<f64> {
    let kinv = model.chol().inverse();
    let z_mean = model.target_mean();
    let s = model.target_scale();
    model
        .targets()
        .iter()
        .zip(model.alpha())
        .enumerate()
        .map(|(i, (y, a))| {
            let z = (y - z_mean) / s;
            z_mean + s * (z - a / kinv.get(i, i))
        })
        .collect()
}

/// FNV-1a, used to derive per-task optimizer seeds that do not depend on
/// task order.
pub fn task_seed(seed: u64, task_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in task_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h
}

/// Fits a GP on a household's training months and summarizes its posterior
/// at the training months plus `forecast_months`.
pub fn fit_task_gp(
    series: &TaskSeries,
    forecast_months: &[Month],
    cfg: &TaskStageConfig,
) -> Result<(GpModel<KernelSpec>, PosteriorSummary)> {
    if series.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            found: series.len(),
        });
    }
    let opt = OptConfig {
        seed: task_seed(cfg.opt.seed, &series.task_id),
        ..cfg.opt.clone()
    };
    let model = fit(&cfg.kernel, &inputs_of(&series.times), &series.loads, &opt)?;
    let summary = summarize(
        &series.task_id,
        &model,
        &series.times,
        forecast_months,
        cfg.mpe_mode,
    )?;
    Ok((model, summary))
}

/// Rebuilds a stage-1 model at stored hyperparameters.
pub fn condition_task_gp(
    series: &TaskSeries,
    hyper: GpHyperparams<KernelSpec>,
    cfg: &TaskStageConfig,
) -> Result<GpModel<KernelSpec>> {
    GpModel::condition(
        hyper,
        inputs_of(&series.times),
        series.loads.clone(),
        &cfg.opt.jitter,
    )
}

/// Posterior summary of an already-conditioned stage-1 model.
pub fn summarize(
    task_id: &str,
    model: &GpModel<KernelSpec>,
    train_times: &[Month],
    forecast_months: &[Month],
    mode: MpeMode,
) -> Result<PosteriorSummary> {
    let mut eval_times: Vec<Month> = train_times.iter().chain(forecast_months).copied().collect();
    eval_times.sort();
    eval_times.dedup();
    let pred = model.predict(&inputs_of(&eval_times))?;
    let reference = match mode {
        MpeMode::LeaveOneOut => loo_means(model),
        MpeMode::Fitted => train_times
            .iter()
            .map(|t| pred.mean[eval_times.binary_search(t).expect("train time evaluated")])
            .collect(),
    };
    Ok(PosteriorSummary {
        task_id: task_id.to_owned(),
        eval_times,
        means: pred.mean,
        variances: pred.variance,
        train_mpe: mpe(model.targets(), &reference)?,
    })
}

/// Stage-1 marginals at `targets` using only observations strictly before
/// `origin`, at the model's fitted hyperparameters and standardization.
/// With no earlier observations the prior (training mean, prior variance)
/// is returned.
pub fn posterior_from_origin(
    model: &GpModel<KernelSpec>,
    origin: Month,
    targets: &[Month],
) -> Result<Vec<(f64, f64)>> {
    let cut = origin.index();
    let keep: Vec<usize> = (0..model.inputs().len())
        .filter(|&i| model.inputs()[i][0] < cut)
        .collect();
    let xs = inputs_of(targets);
    if keep.len() == model.inputs().len() {
        let p = model.predict(&xs)?;
        return Ok(p.mean.into_iter().zip(p.variance).collect());
    }
    if keep.is_empty() {
        return Ok(xs
            .iter()
            .map(|x| (model.target_mean(), model.prior_variance(x)))
            .collect());
    }
    let sub = GpModel::condition_scaled(
        model.hyper().clone(),
        keep.iter().map(|&i| model.inputs()[i].clone()).collect(),
        keep.iter().map(|&i| model.targets()[i]).collect(),
        model.target_mean(),
        model.target_scale(),
        model.is_degenerate(),
        &crate::linalg::JitterPolicy::default(),
    )?;
    let p = sub.predict(&xs)?;
    Ok(p.mean.into_iter().zip(p.variance).collect())
}

/// One fitted household.
#[derive(Debug, Clone)]
pub struct TaskFit {
    pub model: GpModel<KernelSpec>,
    pub summary: PosteriorSummary,
}

/// Fits every task concurrently; results are ordered by `task_id`.
/// `forecast_months` gives the months to summarize beyond each task's data.
pub fn fit_all_tasks(
    series: &[TaskSeries],
    forecast_months: &[Month],
    cfg: &TaskStageConfig,
) -> Result<Vec<TaskFit>> {
    let mut fits = series
        .par_iter()
        .map(|s| {
            fit_task_gp(s, forecast_months, cfg)
                .map(|(model, summary)| TaskFit { model, summary })
                .map_err(|e| e.in_task(&s.task_id))
        })
        .collect::<Result<Vec<_>>>()?;
    fits.sort_by(|a, b| a.summary.task_id.cmp(&b.summary.task_id));
    Ok(fits)
}
