//! Stage 2: a GP over (household, month) rows shared by all households.
//!
//! Each row combines lagged loads, weather at the target month, encoded
//! demographics, calendar position, forecast horizon and the stage-1
//! posterior at the target month. Training rows mimic forecasting: every
//! row gets a horizon `h`, its lags stop at the origin `t − h + 1`, and its
//! stage-1 features come from the household's GP conditioned only on months
//! before that origin.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DemographicValue, Month, TaskSeries, WeatherTable};
use crate::error::{Error, Result};
use crate::gp::{fit, GpHyperparams, GpModel, OptConfig, Z95};
use crate::kernels::{FeatureGroup, FeatureGroupKernel, KernelSpec};
use crate::task::{posterior_from_origin, task_seed, PosteriorSummary, StackingGate, TaskFit};

/// Where training-row stage-1 features come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage1Source {
    /// The household GP conditioned on months before the row's origin.
    #[default]
    OriginConditioned,
    /// The household GP conditioned on its whole training window.
    InSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    /// Lagged monthly loads per row.
    pub lags: usize,
    /// Carry the stage-1 predictive spread as a feature.
    pub include_variance: bool,
    pub include_stage1: bool,
    /// Training-row horizons are drawn from `1..=max_train_horizon`.
    pub max_train_horizon: usize,
    /// Observations required before a training row's origin.
    pub min_history: usize,
    pub stage1_source: Stage1Source,
    /// Rows kept when conditioning the final model.
    pub max_train_rows: usize,
    /// Rows used for the hyperparameter search.
    pub max_opt_rows: usize,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            lags: 12,
            include_variance: true,
            include_stage1: true,
            max_train_horizon: 12,
            min_history: 0,
            stage1_source: Stage1Source::default(),
            max_train_rows: 2000,
            max_opt_rows: 400,
        }
    }
}

impl LayoutConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("stage2 layout: {m}")));
        if self.max_train_horizon == 0 {
            return fail("max_train_horizon must be at least 1");
        }
        if self.max_train_rows < 2 || self.max_opt_rows < 2 {
            return fail("row caps must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageTwoConfig {
    pub layout: LayoutConfig,
    pub opt: OptConfig,
}

impl Default for StageTwoConfig {
    fn default() -> Self {
        StageTwoConfig {
            layout: LayoutConfig::default(),
            opt: OptConfig {
                restarts: 2,
                max_iter: 150,
                ..OptConfig::default()
            },
        }
    }
}

/// Demographic encoding plus per-column standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub layout: LayoutConfig,
    pub numeric: Vec<String>,
    /// One-hot vocabularies, sorted.
    pub categorical: Vec<(String, Vec<String>)>,
    pub groups: Vec<FeatureGroup>,
    pub col_mean: Vec<f64>,
    pub col_scale: Vec<f64>,
}

/// One stage-2 input: a (household, target month) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedRow {
    pub task_id: String,
    pub time: Month,
    /// Months from the last observable month to `time`. Lag `z` is the load
    /// at `time − z`, observed only before `time − horizon + 1`.
    pub horizon: i32,
    /// Unstandardized feature values, in group order.
    pub raw: Vec<f64>,
    /// Standardized features fed to the kernel.
    pub x: Vec<f64>,
    pub target: Option<f64>,
}

/// Forecast record shared by the stacked model and the baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub task_id: String,
    pub month: Month,
    pub mean: f64,
    pub variance: f64,
    pub lower95: f64,
    pub upper95: f64,
}

impl ForecastRow {
    pub fn new(task_id: &str, month: Month, mean: f64, variance: f64) -> Self {
        let half = Z95 * variance.sqrt();
        ForecastRow {
            task_id: task_id.to_owned(),
            month,
            mean,
            variance,
            lower95: mean - half,
            upper95: mean + half,
        }
    }
}

/// Everything stage 2 needs from the panel and stage 1.
#[derive(Debug, Clone, Copy)]
pub struct StackingInputs<'a> {
    /// Training windows, one per fit, same order as `fits`.
    pub tasks: &'a [TaskSeries],
    pub fits: &'a [TaskFit],
    pub weather: &'a WeatherTable,
    /// Forecasts originate at `train_end + 1`.
    pub train_end: Month,
}

#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub encoder: FeatureEncoder,
    pub train: Vec<StackedRow>,
    pub test: Vec<StackedRow>,
}

fn demographic_vocab(tasks: &[TaskSeries]) -> (Vec<String>, Vec<(String, Vec<String>)>) {
    let mut numeric = BTreeSet::new();
    let mut cats: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for t in tasks {
        for (k, v) in &t.demographics {
            match v {
                DemographicValue::Numeric(_) => {
                    numeric.insert(k.clone());
                }
                DemographicValue::Categorical(c) => {
                    cats.entry(k.clone()).or_default().insert(c.clone());
                }
            }
        }
    }
    for k in &numeric {
        cats.remove(k);
    }
    (
        numeric.into_iter().collect(),
        cats.into_iter()
            .map(|(k, v)| (k, v.into_iter().collect()))
            .collect(),
    )
}

fn group(name: &str, start: usize, width: usize) -> FeatureGroup {
    FeatureGroup {
        name: name.to_owned(),
        start,
        width,
        kernel: KernelSpec::squared_exponential(1.0, (width as f64).sqrt())
            .expect("positive constants"),
    }
}

fn layout_groups(
    layout: &LayoutConfig,
    numeric: &[String],
    categorical: &[(String, Vec<String>)],
) -> Vec<FeatureGroup> {
    let demo_width = numeric.len() + categorical.iter().map(|(_, v)| v.len()).sum::<usize>();
    let mut widths = vec![("load", layout.lags + 1), ("weather", 3)];
    if demo_width > 0 {
        widths.push(("demographics", demo_width));
    }
    widths.push(("season", 2));
    widths.push(("horizon", 1));
    if layout.include_stage1 {
        widths.push(("stage1", if layout.include_variance { 2 } else { 1 }));
    }
    let mut start = 0;
    widths
        .into_iter()
        .map(|(name, w)| {
            let g = group(name, start, w);
            start += w;
            g
        })
        .collect()
}

impl FeatureEncoder {
    pub fn width(&self) -> usize {
        self.groups.iter().map(|g| g.width).sum()
    }

    pub fn kernel(&self) -> Result<FeatureGroupKernel> {
        FeatureGroupKernel::new(self.groups.clone())
    }

    fn standardize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.col_mean.iter().zip(&self.col_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    fn demographics(&self, t: &TaskSeries, out: &mut Vec<f64>) {
        for k in &self.numeric {
            // Missing numeric fields take the training column mean below.
            out.push(match t.demographics.get(k) {
                Some(DemographicValue::Numeric(v)) => *v,
                _ => f64::NAN,
            });
        }
        for (k, vocab) in &self.categorical {
            let have = match t.demographics.get(k) {
                Some(DemographicValue::Categorical(c)) => Some(c.as_str()),
                _ => None,
            };
            out.extend(
                vocab
                    .iter()
                    .map(|v| if Some(v.as_str()) == have { 1.0 } else { 0.0 }),
            );
        }
    }
}

struct RowSpec {
    time: Month,
    origin: Month,
    stage1: (f64, f64),
}

fn raw_row(
    enc: &FeatureEncoder,
    task: &TaskSeries,
    weather: &WeatherTable,
    spec: &RowSpec,
) -> Result<Vec<f64>> {
    let l = &enc.layout;
    let mut raw = Vec::with_capacity(enc.width());
    // Lag z sits at time − z; months at or after the origin are unobserved.
    let before: Vec<f64> = task
        .times
        .iter()
        .zip(&task.loads)
        .filter(|(m, _)| **m < spec.origin)
        .map(|(_, y)| *y)
        .collect();
    let pad = if before.is_empty() {
        task.mean_load()
    } else {
        before.iter().sum::<f64>() / before.len() as f64
    };
    let mut valid = 0usize;
    for z in 1..=l.lags as i32 {
        let m = spec.time - z;
        match task.load_at(m).filter(|_| m < spec.origin) {
            Some(y) => {
                valid += 1;
                raw.push(y);
            }
            None => raw.push(pad),
        }
    }
    raw.push(if l.lags == 0 {
        1.0
    } else {
        valid as f64 / l.lags as f64
    });

    let w = weather.require(&task.region, spec.time)?;
    raw.extend([w.mean_temp_c, w.hdd, w.cdd]);
    enc.demographics(task, &mut raw);
    let angle = 2.0 * PI * spec.time.month_of_year() as f64 / 12.0;
    raw.extend([angle.sin(), angle.cos()]);
    raw.push((spec.time - spec.origin + 1) as f64);
    if l.include_stage1 {
        raw.push(spec.stage1.0);
        if l.include_variance {
            raw.push(spec.stage1.1.sqrt());
        }
    }
    debug_assert_eq!(raw.len(), enc.width());
    Ok(raw)
}

fn stage1_at(summary: &PosteriorSummary, t: Month) -> Result<(f64, f64)> {
    summary.at(t).ok_or_else(|| {
        Error::Config(format!(
            "stage-1 summary for {} does not cover {t}",
            summary.task_id
        ))
    })
}

/// Training-row horizons: for each eligible month, a horizon drawn from the
/// feasible range, seeded per household.
fn training_specs(
    fit: &TaskFit,
    task: &TaskSeries,
    layout: &LayoutConfig,
    seed: u64,
) -> Result<Vec<RowSpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed(seed, &task.task_id));
    let mut specs = Vec::new();
    for (i, &t) in task.times.iter().enumerate() {
        // Origins with at least `min_history` observations before them.
        if i < layout.min_history {
            continue;
        }
        let max_h = match layout.min_history {
            0 => layout.max_train_horizon as i32,
            k => (t - task.times[k - 1]).min(layout.max_train_horizon as i32),
        };
        let h = rng.random_range(1..=max_h);
        let origin = t - h + 1;
        let stage1 = match layout.stage1_source {
            Stage1Source::InSample => stage1_at(&fit.summary, t)?,
            Stage1Source::OriginConditioned => posterior_from_origin(&fit.model, origin, &[t])?[0],
        };
        specs.push(RowSpec {
            time: t,
            origin,
            stage1,
        });
    }
    Ok(specs)
}

/// Builds training rows for gate-passed households and test rows for every
/// household at `forecast_months`. Columns are standardized with training
/// statistics.
pub fn build_features(
    inputs: StackingInputs<'_>,
    layout: &LayoutConfig,
    gate: &StackingGate,
    forecast_months: &[Month],
    seed: u64,
) -> Result<FeatureSet> {
    layout.validate()?;
    if inputs.tasks.len() != inputs.fits.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.tasks.len(),
            found: inputs.fits.len(),
        });
    }
    let (numeric, categorical) = demographic_vocab(inputs.tasks);
    let groups = layout_groups(layout, &numeric, &categorical);
    let width = groups.iter().map(|g| g.width).sum();
    let mut enc = FeatureEncoder {
        layout: layout.clone(),
        numeric,
        categorical,
        groups,
        col_mean: vec![0.0; width],
        col_scale: vec![1.0; width],
    };

    let mut train = Vec::new();
    let mut test = Vec::new();
    let origin = inputs.train_end + 1;
    for (task, fit) in inputs.tasks.iter().zip(inputs.fits) {
        if task.task_id != fit.summary.task_id {
            return Err(Error::Config(format!(
                "task {} paired with stage-1 fit {}",
                task.task_id, fit.summary.task_id
            )));
        }
        let wrap = |e: Error| e.in_task(&task.task_id);
        if gate.passes(&fit.summary) {
            for spec in training_specs(fit, task, layout, seed).map_err(wrap)? {
                train.push(StackedRow {
                    task_id: task.task_id.clone(),
                    time: spec.time,
                    horizon: spec.time - spec.origin + 1,
                    raw: raw_row(&enc, task, inputs.weather, &spec).map_err(wrap)?,
                    x: vec![],
                    target: task.load_at(spec.time),
                });
            }
        }
        for &t in forecast_months {
            let spec = RowSpec {
                time: t,
                origin,
                stage1: stage1_at(&fit.summary, t).map_err(wrap)?,
            };
            test.push(StackedRow {
                task_id: task.task_id.clone(),
                time: t,
                horizon: t - origin + 1,
                raw: raw_row(&enc, task, inputs.weather, &spec).map_err(wrap)?,
                x: vec![],
                target: None,
            });
        }
    }
    let key = |r: &StackedRow| (r.task_id.clone(), r.time);
    train.sort_by_key(key);
    test.sort_by_key(key);

    for c in 0..width {
        let col: Vec<f64> = train
            .iter()
            .map(|r| r.raw[c])
            .filter(|v| v.is_finite())
            .collect();
        if col.is_empty() {
            continue;
        }
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        enc.col_mean[c] = mean;
        enc.col_scale[c] = if sd > 1e-12 * mean.abs().max(1.0) {
            sd
        } else {
            1.0
        };
    }
    for r in train.iter_mut().chain(test.iter_mut()) {
        for (c, v) in r.raw.iter_mut().enumerate() {
            if !v.is_finite() {
                *v = enc.col_mean[c];
            }
        }
        r.x = enc.standardize(&r.raw);
    }
    Ok(FeatureSet {
        encoder: enc,
        train,
        test,
    })
}

/// The fitted stage-2 ensemble.
#[derive(Debug, Clone)]
pub struct StackedModel {
    pub ensemble: GpModel<FeatureGroupKernel>,
    pub encoder: FeatureEncoder,
    pub gate: StackingGate,
    pub stage1: BTreeMap<String, PosteriorSummary>,
}

/// Deterministic subset of at most `cap` row indices, in increasing order.
pub fn subsample(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, cap).into_vec();
    idx.sort_unstable();
    idx
}

fn rows_xy(rows: &[StackedRow], idx: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut xs = Vec::with_capacity(idx.len());
    let mut ys = Vec::with_capacity(idx.len());
    for &i in idx {
        let r = &rows[i];
        let y = r.target.ok_or_else(|| {
            Error::Config(format!(
                "training row {} {} has no target",
                r.task_id, r.time
            ))
        })?;
        xs.push(r.x.clone());
        ys.push(y);
    }
    Ok((xs, ys))
}

fn check_trainable(features: &FeatureSet) -> Result<()> {
    if features.train.is_empty() {
        return Err(Error::NoTrainableTasks);
    }
    if features.train.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            found: features.train.len(),
        });
    }
    Ok(())
}

/// Fits stage-2 hyperparameters on a row subsample, then conditions on up
/// to `max_train_rows` rows.
pub fn fit_stacked(
    features: &FeatureSet,
    fits: &[TaskFit],
    gate: &StackingGate,
    cfg: &StageTwoConfig,
) -> Result<StackedModel> {
    check_trainable(features)?;
    let layout = &features.encoder.layout;
    let kernel = features.encoder.kernel()?;
    let opt_idx = subsample(features.train.len(), layout.max_opt_rows, cfg.opt.seed);
    let (xs, ys) = rows_xy(&features.train, &opt_idx)?;
    let searched = fit(&kernel, &xs, &ys, &cfg.opt)?;
    condition_stacked(features, fits, gate, cfg, searched.hyper().clone())
}

/// Rebuilds a stacked model at known hyperparameters.
pub fn condition_stacked(
    features: &FeatureSet,
    fits: &[TaskFit],
    gate: &StackingGate,
    cfg: &StageTwoConfig,
    hyper: GpHyperparams<FeatureGroupKernel>,
) -> Result<StackedModel> {
    check_trainable(features)?;
    let layout = &features.encoder.layout;
    let idx = subsample(
        features.train.len(),
        layout.max_train_rows,
        cfg.opt.seed.wrapping_add(1),
    );
    let (xs, ys) = rows_xy(&features.train, &idx)?;
    let ensemble = GpModel::condition(hyper, xs, ys, &cfg.opt.jitter)?;
    Ok(StackedModel {
        ensemble,
        encoder: features.encoder.clone(),
        gate: *gate,
        stage1: fits
            .iter()
            .map(|f| (f.summary.task_id.clone(), f.summary.clone()))
            .collect(),
    })
}

/// Per-row predictive distribution in original load units.
pub fn predict_stacked(model: &StackedModel, rows: &[StackedRow]) -> Result<Vec<ForecastRow>> {
    let width = model.encoder.width();
    if let Some(r) = rows.iter().find(|r| r.x.len() != width) {
        return Err(Error::LayoutMismatch(format!(
            "row {} {} has {} columns, layout expects {width}",
            r.task_id,
            r.time,
            r.x.len()
        )));
    }
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| r.x.clone()).collect();
    if xs.is_empty() {
        return Ok(vec![]);
    }
    let p = model.ensemble.predict(&xs)?;
    Ok(rows
        .iter()
        .enumerate()
        .map(|(i, r)| ForecastRow {
            task_id: r.task_id.clone(),
            month: r.time,
            mean: p.mean[i],
            variance: p.variance[i],
            lower95: p.lower95[i],
            upper95: p.upper95[i],
        })
        .collect())
}
