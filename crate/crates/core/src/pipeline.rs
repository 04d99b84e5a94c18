//! Config-driven pipeline: synth, fit, forecast, evaluate.
//!
//! One TOML file drives every command. Artifacts are JSON with a schema
//! version; a model artifact carries the training data, the effective
//! config and every learned hyperparameter, so forecasting re-conditions
//! the models without re-optimizing.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{run_ar_baseline, task_gp_forecasts, ArConfig};
use crate::data::{
    generate_synthetic, ingest_csv, split, IngestOptions, Month, PanelDataset, Split, SynthConfig,
    TaskSeries,
};
use crate::error::{Error, Result};
use crate::gp::{GpHyperparams, OptConfig};
use crate::kernels::{FeatureGroupKernel, KernelSpec};
use crate::metrics::{EvalReport, Scored};
use crate::stacking::{
    build_features, condition_stacked, fit_stacked, predict_stacked, ForecastRow, StackingInputs,
    StageTwoConfig,
};
use crate::task::{
    condition_task_gp, default_stage1_kernel, fit_all_tasks, summarize, MpeMode, StackingGate,
    TaskFit, TaskStageConfig,
};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

/// Writes `bytes` to a temporary sibling of `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Stacked,
    TaskGp,
    Ar,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Method> {
        match s {
            "stacked" => Ok(Method::Stacked),
            "task_gp" => Ok(Method::TaskGp),
            "ar" => Ok(Method::Ar),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected stacked, task_gp or ar)"
            ))),
        }
    }
}

/// Kernel expression in natural (not log) units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Se {
        amplitude: f64,
        lengthscale: f64,
    },
    Periodic {
        amplitude: f64,
        lengthscale: f64,
        period: f64,
    },
    /// Periodic plus unit-amplitude SE sharing one lengthscale.
    Seasonal {
        amplitude: f64,
        lengthscale: f64,
        period: f64,
    },
    Const {
        value: f64,
    },
    Sum(Vec<KernelConfig>),
    Product(Vec<KernelConfig>),
}

impl KernelConfig {
    pub fn to_spec(&self) -> Result<KernelSpec> {
        Ok(match self {
            KernelConfig::Se {
                amplitude,
                lengthscale,
            } => KernelSpec::squared_exponential(*amplitude, *lengthscale)?,
            KernelConfig::Periodic {
                amplitude,
                lengthscale,
                period,
            } => KernelSpec::periodic(*amplitude, *lengthscale, *period)?,
            KernelConfig::Seasonal {
                amplitude,
                lengthscale,
                period,
            } => KernelSpec::seasonal_tied(*amplitude, *lengthscale, *period)?,
            KernelConfig::Const { value } => KernelSpec::constant(*value)?,
            KernelConfig::Sum(c) | KernelConfig::Product(c) => {
                if c.is_empty() {
                    return Err(Error::Config("sum/product kernel needs children".into()));
                }
                let children = c
                    .iter()
                    .map(KernelConfig::to_spec)
                    .collect::<Result<Vec<_>>>()?;
                if matches!(self, KernelConfig::Sum(_)) {
                    KernelSpec::Sum(children)
                } else {
                    KernelSpec::Product(children)
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvConfig {
    pub readings: PathBuf,
    pub weather: PathBuf,
    pub demographics: PathBuf,
    #[serde(default)]
    pub numeric_columns: Vec<String>,
}

/// Exactly one source must be set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub synth: Option<SynthConfig>,
    /// A panel JSON file.
    pub dataset: Option<PathBuf>,
    pub csv: Option<CsvConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    /// Defaults to periodic (period 12) plus squared-exponential.
    pub kernel: Option<KernelConfig>,
    pub opt: OptConfig,
    pub mpe_mode: MpeMode,
}

impl Default for Stage1Config {
    fn default() -> Self {
        let d = TaskStageConfig::default();
        Stage1Config {
            kernel: None,
            opt: d.opt,
            mpe_mode: d.mpe_mode,
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_tau() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Drives synthesis and every optimizer restart.
    pub seed: u64,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub data: DataConfig,
    /// Required unless the panel carries its own split.
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default)]
    pub stage1: Stage1Config,
    #[serde(default)]
    pub stage2: StageTwoConfig,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// When false every task trains stage 2 regardless of MPE.
    #[serde(default = "default_true")]
    pub gate: bool,
    #[serde(default)]
    pub ar: ArConfig,
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub method: Option<Method>,
    pub tau: Option<f64>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.data.dataset.as_mut() {
            fix(p);
        }
        if let Some(c) = cfg.data.csv.as_mut() {
            fix(&mut c.readings);
            fix(&mut c.weather);
            fix(&mut c.demographics);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(m) = o.method {
            self.method = m;
        }
        if let Some(t) = o.tau {
            self.tau = t;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let sources = [
            self.data.synth.is_some(),
            self.data.dataset.is_some(),
            self.data.csv.is_some(),
        ];
        if sources.iter().filter(|s| **s).count() != 1 {
            return Err(Error::Config(
                "exactly one of data.synth, data.dataset, data.csv must be set".into(),
            ));
        }
        if let Some(s) = &self.data.synth {
            s.validate()?;
        }
        StackingGate::new(self.tau)?;
        self.stage2.layout.validate()?;
        if let Some(k) = &self.stage1.kernel {
            k.to_spec()?;
        }
        Ok(())
    }

    /// The synth config with the pipeline seed applied.
    pub fn synth(&self) -> Option<SynthConfig> {
        self.data.synth.as_ref().map(|s| SynthConfig {
            seed: self.seed,
            ..s.clone()
        })
    }

    pub fn settings(&self) -> Result<MethodSettings> {
        let kernel = match &self.stage1.kernel {
            Some(k) => k.to_spec()?,
            None => default_stage1_kernel(),
        };
        Ok(MethodSettings {
            method: self.method,
            stage1: TaskStageConfig {
                kernel,
                opt: OptConfig {
                    seed: self.seed,
                    ..self.stage1.opt.clone()
                },
                mpe_mode: self.stage1.mpe_mode,
            },
            stage2: StageTwoConfig {
                layout: self.stage2.layout.clone(),
                opt: OptConfig {
                    seed: self.seed,
                    ..self.stage2.opt.clone()
                },
            },
            gate: if self.gate {
                StackingGate::new(self.tau)?
            } else {
                StackingGate::disabled()
            },
            ar: self.ar.clone(),
            seed: self.seed,
        })
    }

    /// Loads (or generates) the panel named by the data section.
    pub fn load_panel(&self) -> Result<PanelDataset> {
        if let Some(s) = self.synth() {
            return generate_synthetic(&s);
        }
        if let Some(p) = &self.data.dataset {
            return PanelDataset::read_json(p);
        }
        let c = self.data.csv.as_ref().expect("validated: one source");
        let opts = IngestOptions {
            numeric_columns: c.numeric_columns.iter().cloned().collect::<BTreeSet<_>>(),
        };
        ingest_csv(&c.readings, &c.weather, &c.demographics, &opts)
    }

    fn resolve_split(&self, panel: &PanelDataset) -> Result<Split> {
        self.split
            .or(panel.split)
            .ok_or_else(|| Error::Config("no split configured and the panel carries none".into()))
    }
}

/// Everything needed to fit one forecasting method.
#[derive(Debug, Clone)]
pub struct MethodSettings {
    pub method: Method,
    pub stage1: TaskStageConfig,
    pub stage2: StageTwoConfig,
    pub gate: StackingGate,
    pub ar: ArConfig,
    pub seed: u64,
}

impl MethodSettings {
    pub fn new(method: Method, seed: u64) -> MethodSettings {
        let mut s = TaskStageConfig::default();
        s.opt.seed = seed;
        let mut t = StageTwoConfig::default();
        t.opt.seed = seed;
        MethodSettings {
            method,
            stage1: s,
            stage2: t,
            gate: StackingGate::default(),
            ar: ArConfig::default(),
            seed,
        }
    }
}

/// Gate outcome and learned stage-1 hyperparameters for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub mpe: f64,
    pub passed: bool,
    pub hyper: GpHyperparams<KernelSpec>,
}

/// Learned state of a fitted method.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LearnedState {
    pub tasks: Vec<TaskRecord>,
    pub stage2: Option<GpHyperparams<FeatureGroupKernel>>,
}

/// Forecasts plus the state that produced them.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub forecasts: Vec<ForecastRow>,
    pub learned: LearnedState,
}

fn forecast_months(train_end: Month, horizon: usize) -> Vec<Month> {
    (1..=horizon as i32).map(|k| train_end + k).collect()
}

fn records(fits: &[TaskFit], gate: &StackingGate) -> Vec<TaskRecord> {
    fits.iter()
        .map(|f| TaskRecord {
            task_id: f.summary.task_id.clone(),
            mpe: f.summary.train_mpe,
            passed: gate.passes(&f.summary),
            hyper: f.model.hyper().clone(),
        })
        .collect()
}

fn sorted_tasks(train: &PanelDataset) -> Vec<TaskSeries> {
    let mut tasks = train.tasks.clone();
    tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    tasks
}

/// Fits `settings.method` on a training view and forecasts `horizon` months
/// past `train_end` for every task.
pub fn fit_and_forecast(
    train: &PanelDataset,
    train_end: Month,
    horizon: usize,
    settings: &MethodSettings,
) -> Result<MethodOutput> {
    let months = forecast_months(train_end, horizon);
    let tasks = sorted_tasks(train);
    if settings.method == Method::Ar {
        return Ok(MethodOutput {
            forecasts: run_ar_baseline(&tasks, &months, &settings.ar)?,
            learned: LearnedState::default(),
        });
    }
    let fits = fit_all_tasks(&tasks, &months, &settings.stage1)?;
    let mut learned = LearnedState {
        tasks: records(&fits, &settings.gate),
        stage2: None,
    };
    let forecasts = match settings.method {
        Method::TaskGp => task_gp_forecasts(&fits, &months)?,
        _ => {
            let weather = train.weather_lookup();
            let inputs = StackingInputs {
                tasks: &tasks,
                fits: &fits,
                weather: &weather,
                train_end,
            };
            let features = build_features(
                inputs,
                &settings.stage2.layout,
                &settings.gate,
                &months,
                settings.seed,
            )?;
            let model = fit_stacked(&features, &fits, &settings.gate, &settings.stage2)?;
            learned.stage2 = Some(model.ensemble.hyper().clone());
            predict_stacked(&model, &features.test)?
        }
    };
    Ok(MethodOutput { forecasts, learned })
}

/// Re-conditions stored hyperparameters and forecasts; no optimization.
pub fn replay_forecast(
    train: &PanelDataset,
    train_end: Month,
    horizon: usize,
    settings: &MethodSettings,
    learned: &LearnedState,
) -> Result<Vec<ForecastRow>> {
    let months = forecast_months(train_end, horizon);
    let tasks = sorted_tasks(train);
    if settings.method == Method::Ar {
        return run_ar_baseline(&tasks, &months, &settings.ar);
    }
    let stored: BTreeMap<&str, &TaskRecord> = learned
        .tasks
        .iter()
        .map(|r| (r.task_id.as_str(), r))
        .collect();
    let fits = tasks
        .iter()
        .map(|t| {
            let rec = stored.get(t.task_id.as_str()).ok_or_else(|| {
                Error::Artifact(format!("no stage-1 hyperparameters for task {}", t.task_id))
            })?;
            let model = condition_task_gp(t, rec.hyper.clone(), &settings.stage1)
                .map_err(|e| e.in_task(&t.task_id))?;
            let summary = summarize(
                &t.task_id,
                &model,
                &t.times,
                &months,
                settings.stage1.mpe_mode,
            )?;
            Ok(TaskFit { model, summary })
        })
        .collect::<Result<Vec<_>>>()?;
    match settings.method {
        Method::TaskGp => task_gp_forecasts(&fits, &months),
        _ => {
            let hyper = learned.stage2.clone().ok_or_else(|| {
                Error::Artifact("stacked model without stage-2 hyperparameters".into())
            })?;
            let weather = train.weather_lookup();
            let inputs = StackingInputs {
                tasks: &tasks,
                fits: &fits,
                weather: &weather,
                train_end,
            };
            let features = build_features(
                inputs,
                &settings.stage2.layout,
                &settings.gate,
                &months,
                settings.seed,
            )?;
            let model =
                condition_stacked(&features, &fits, &settings.gate, &settings.stage2, hyper)?;
            predict_stacked(&model, &features.test)
        }
    }
}

/// Serialized fit: data, effective config and learned hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub schema_version: u32,
    pub config: PipelineConfig,
    pub split: Split,
    /// Training view only, with the full weather table.
    pub train: PanelDataset,
    pub learned: LearnedState,
}

impl ModelArtifact {
    pub fn read(path: &Path) -> Result<ModelArtifact> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let a: ModelArtifact = serde_json::from_str(&text)
            .map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))?;
        if a.schema_version != ARTIFACT_SCHEMA_VERSION {
            return Err(Error::Artifact(format!(
                "model schema version {} (expected {ARTIFACT_SCHEMA_VERSION})",
                a.schema_version
            )));
        }
        Ok(a)
    }

    pub fn default_horizon(&self) -> usize {
        (self.split.test_end - self.split.train_end).max(1) as usize
    }

    /// Forecasts `horizon` months past the training window.
    pub fn forecast(&self, horizon: usize) -> Result<Vec<ForecastRow>> {
        replay_forecast(
            &self.train,
            self.split.train_end,
            horizon,
            &self.config.settings()?,
            &self.learned,
        )
    }
}

/// `synth`: writes `panel.json` into the output directory.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<PathBuf> {
    let s = cfg
        .synth()
        .ok_or_else(|| Error::Config("synth requires a data.synth section".into()))?;
    let panel = generate_synthetic(&s)?;
    let path = cfg.out_dir.join("panel.json");
    panel.write_json(&path)?;
    Ok(path)
}

/// `fit`: writes `model.json` into the output directory.
pub fn cmd_fit(cfg: &PipelineConfig) -> Result<PathBuf> {
    let panel = cfg.load_panel()?;
    let s = cfg.resolve_split(&panel)?;
    let (train, _) = split(&panel, s.train_end, s.test_end)?;
    let horizon = (s.test_end - s.train_end) as usize;
    let out = fit_and_forecast(&train, s.train_end, horizon, &cfg.settings()?)?;
    let artifact = ModelArtifact {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        config: cfg.clone(),
        split: s,
        train,
        learned: out.learned,
    };
    let path = cfg.out_dir.join("model.json");
    write_atomic(&path, serde_json::to_string_pretty(&artifact)?.as_bytes())?;
    Ok(path)
}

pub const FORECAST_HEADER: [&str; 6] =
    ["task_id", "month", "mean", "variance", "lower95", "upper95"];

pub fn forecast_csv(rows: &[ForecastRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(FORECAST_HEADER)?;
    for r in rows {
        w.write_record([
            r.task_id.clone(),
            r.month.to_string(),
            r.mean.to_string(),
            r.variance.to_string(),
            r.lower95.to_string(),
            r.upper95.to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Config(format!("forecast buffer: {e}")))
}

pub fn read_forecast_csv(path: &Path) -> Result<Vec<ForecastRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema {
            file: path.display().to_string(),
            message: format!("{other:?}"),
        },
    })?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != FORECAST_HEADER {
        return Err(Error::Schema {
            file: path.display().to_string(),
            message: format!("expected header {FORECAST_HEADER:?}, found {header:?}"),
        });
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// `forecast`: writes `forecast.csv` into `out_dir`.
pub fn cmd_forecast(model_path: &Path, horizon: Option<usize>, out_dir: &Path) -> Result<PathBuf> {
    let artifact = ModelArtifact::read(model_path)?;
    let h = horizon.unwrap_or_else(|| artifact.default_horizon());
    let rows = artifact.forecast(h)?;
    let path = out_dir.join("forecast.csv");
    write_atomic(&path, &forecast_csv(&rows)?)?;
    Ok(path)
}

/// Joins forecasts with actual loads from a panel and scores them.
pub fn evaluate(forecasts: &[ForecastRow], actuals: &PanelDataset) -> Result<EvalReport> {
    let mut scored = Vec::with_capacity(forecasts.len());
    for f in forecasts {
        let task = actuals
            .task(&f.task_id)
            .ok_or_else(|| Error::Join(format!("forecast task {} not in actuals", f.task_id)))?;
        let actual = task.load_at(f.month).ok_or_else(|| {
            Error::Join(format!(
                "no actual load for task {} in {}",
                f.task_id, f.month
            ))
        })?;
        scored.push(Scored {
            region: &task.region,
            actual,
            mean: f.mean,
            lower95: f.lower95,
            upper95: f.upper95,
        });
    }
    EvalReport::from_scored(&scored)
}

/// `evaluate`: writes `report.json` into `out_dir`.
pub fn cmd_evaluate(forecast_path: &Path, actuals_path: &Path, out_dir: &Path) -> Result<PathBuf> {
    let rows = read_forecast_csv(forecast_path)?;
    let actuals = PanelDataset::read_json(actuals_path)?;
    let report = evaluate(&rows, &actuals)?;
    let path = out_dir.join("report.json");
    write_atomic(&path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
[data.synth]
n_tasks = 4
"#;

    #[test]
    fn config_parses_and_validates() {
        let cfg = PipelineConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.method, Method::Stacked);
        assert_eq!(cfg.tau, 1.0);
        assert_eq!(cfg.synth().unwrap().seed, 3);
        assert!(PipelineConfig::from_toml("seed = 1\n[data]\n").is_err());
        assert!(PipelineConfig::from_toml("[data.synth]\n").is_err());
        assert!(PipelineConfig::from_toml(&format!("{MINIMAL}\nbogus = 1\n")).is_err());
        let bad = "seed = 1\n[data.synth]\nn_tasks = 0\n";
        assert!(matches!(
            PipelineConfig::from_toml(bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn kernel_config_in_natural_units() {
        let text = r#"
seed = 1
[data.synth]
[stage1.kernel]
sum = [
  { periodic = { amplitude = 2.0, lengthscale = 1.0, period = 12.0 } },
  { product = [ { const = { value = 3.0 } }, { se = { amplitude = 1.0, lengthscale = 6.0 } } ] },
]
"#;
        let cfg = PipelineConfig::from_toml(text).unwrap();
        let spec = cfg.stage1.kernel.unwrap().to_spec().unwrap();
        let want = KernelSpec::Sum(vec![
            KernelSpec::periodic(2.0, 1.0, 12.0).unwrap(),
            KernelSpec::Product(vec![
                KernelSpec::constant(3.0).unwrap(),
                KernelSpec::squared_exponential(1.0, 6.0).unwrap(),
            ]),
        ]);
        assert_eq!(spec, want);
    }

    #[test]
    fn forecast_csv_round_trip() {
        let rows = vec![
            ForecastRow::new("a", Month::from_ym(2016, 1), 1.5, 0.25),
            ForecastRow::new("a", Month::from_ym(2016, 2), 1.0 / 3.0, 2.0),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_atomic(&p, &forecast_csv(&rows).unwrap()).unwrap();
        assert_eq!(read_forecast_csv(&p).unwrap(), rows);
    }
}
