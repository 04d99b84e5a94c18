//! Panel data: household series, regional weather, and their splits.

mod disagg;
mod ingest;
mod month;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use disagg::{disaggregate_quarterly, exact, total_amount, BillingInterval, MonthlyAmount};
pub use ingest::{export_csv, ingest_csv, IngestOptions};
pub use month::Month;
pub use synth::{generate_synthetic, SynthConfig};

use crate::error::{Error, Result};

pub const PANEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "MJ")]
    MegaJoule,
    #[serde(rename = "kWh")]
    KilowattHour,
}

impl Unit {
    pub fn parse(tag: &str) -> Result<Unit> {
        match tag.trim() {
            "MJ" => Ok(Unit::MegaJoule),
            "kWh" => Ok(Unit::KilowattHour),
            other => Err(Error::Unit(other.to_owned())),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Unit::MegaJoule => "MJ",
            Unit::KilowattHour => "kWh",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherRow {
    pub mean_temp_c: f64,
    pub hdd: f64,
    pub cdd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionWeather {
    pub region: String,
    pub month: Month,
    #[serde(flatten)]
    pub row: WeatherRow,
}

/// Static household covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DemographicValue {
    Numeric(f64),
    Categorical(String),
}

/// One household: monthly consumption plus static covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSeries {
    pub task_id: String,
    pub region: String,
    pub times: Vec<Month>,
    pub loads: Vec<f64>,
    /// Aligned with `times`; `None` where the region has no weather row.
    pub weather: Vec<Option<WeatherRow>>,
    pub demographics: BTreeMap<String, DemographicValue>,
}

impl TaskSeries {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Error::Schema {
            file: format!("task {}", self.task_id),
            message: m,
        };
        if self.times.len() != self.loads.len() || self.times.len() != self.weather.len() {
            return Err(bad("times, loads and weather differ in length".into()));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad("times must be strictly increasing".into()));
        }
        if let Some(l) = self.loads.iter().find(|l| !l.is_finite() || **l < 0.0) {
            return Err(bad(format!("load {l} is negative or not finite")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Months in `(after, through]`, inclusive bounds as `Option`s.
    pub fn window(&self, after: Option<Month>, through: Option<Month>) -> TaskSeries {
        let keep: Vec<usize> = (0..self.times.len())
            .filter(|&i| {
                let t = self.times[i];
                after.is_none_or(|a| t > a) && through.is_none_or(|b| t <= b)
            })
            .collect();
        TaskSeries {
            task_id: self.task_id.clone(),
            region: self.region.clone(),
            times: keep.iter().map(|&i| self.times[i]).collect(),
            loads: keep.iter().map(|&i| self.loads[i]).collect(),
            weather: keep.iter().map(|&i| self.weather[i]).collect(),
            demographics: self.demographics.clone(),
        }
    }

    pub fn load_at(&self, t: Month) -> Option<f64> {
        self.times.binary_search(&t).ok().map(|i| self.loads[i])
    }

    pub fn mean_load(&self) -> f64 {
        self.loads.iter().sum::<f64>() / self.loads.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_end: Month,
    pub test_end: Month,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    #[default]
    Monthly,
}

/// A panel of household series sharing one unit and a regional weather table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub schema_version: u32,
    pub unit: Unit,
    pub frequency: Frequency,
    pub split: Option<Split>,
    pub provenance: String,
    pub tasks: Vec<TaskSeries>,
    pub weather: Vec<RegionWeather>,
}

/// Summary counts in the style of a data-statistics table.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelStats {
    pub samples: usize,
    pub load_mean: f64,
}

impl PanelDataset {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for t in &self.tasks {
            if !seen.insert(t.task_id.as_str()) {
                return Err(Error::Schema {
                    file: "panel".into(),
                    message: format!("duplicate task_id {}", t.task_id),
                });
            }
            t.validate()?;
        }
        Ok(())
    }

    pub fn task(&self, id: &str) -> Option<&TaskSeries> {
        self.tasks.iter().find(|t| t.task_id == id)
    }

    pub fn weather_lookup(&self) -> WeatherTable {
        WeatherTable(
            self.weather
                .iter()
                .map(|w| ((w.region.clone(), w.month), w.row))
                .collect(),
        )
    }

    pub fn stats(&self) -> PanelStats {
        let samples: usize = self.tasks.iter().map(TaskSeries::len).sum();
        let total: f64 = self.tasks.iter().flat_map(|t| &t.loads).sum();
        PanelStats {
            samples,
            load_mean: if samples == 0 {
                0.0
            } else {
                total / samples as f64
            },
        }
    }

    /// Region of every task, keyed by id.
    pub fn regions(&self) -> BTreeMap<String, String> {
        self.tasks
            .iter()
            .map(|t| (t.task_id.clone(), t.region.clone()))
            .collect()
    }

    fn restricted(&self, after: Option<Month>, through: Option<Month>) -> PanelDataset {
        PanelDataset {
            tasks: self
                .tasks
                .iter()
                .map(|t| t.window(after, through))
                .filter(|t| !t.is_empty())
                .collect(),
            ..self.clone()
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        crate::pipeline::write_atomic(path, text.as_bytes())
    }

    pub fn read_json(path: &Path) -> Result<PanelDataset> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let panel: PanelDataset = serde_json::from_str(&text)?;
        if panel.schema_version != PANEL_SCHEMA_VERSION {
            return Err(Error::Schema {
                file: path.display().to_string(),
                message: format!(
                    "panel schema version {} (expected {PANEL_SCHEMA_VERSION})",
                    panel.schema_version
                ),
            });
        }
        panel.validate()?;
        Ok(panel)
    }
}

/// Regional weather indexed by `(region, month)`.
#[derive(Debug, Clone, Default)]
pub struct WeatherTable(BTreeMap<(String, Month), WeatherRow>);

impl WeatherTable {
    pub fn get(&self, region: &str, month: Month) -> Option<WeatherRow> {
        self.0.get(&(region.to_owned(), month)).copied()
    }

    pub fn require(&self, region: &str, month: Month) -> Result<WeatherRow> {
        self.get(region, month)
            .ok_or_else(|| Error::MissingCovariate {
                region: region.to_owned(),
                month: month.to_string(),
            })
    }
}

/// Partitions a panel at month boundaries: training covers months up to and
/// including `train_end`, testing covers `(train_end, test_end]`.
pub fn split(
    panel: &PanelDataset,
    train_end: Month,
    test_end: Month,
) -> Result<(PanelDataset, PanelDataset)> {
    if train_end >= test_end {
        return Err(Error::EmptySplit(format!(
            "train_end {train_end} must precede test_end {test_end}"
        )));
    }
    let s = Some(Split {
        train_end,
        test_end,
    });
    let mut train = panel.restricted(None, Some(train_end));
    let mut test = panel.restricted(Some(train_end), Some(test_end));
    if train.tasks.is_empty() {
        return Err(Error::EmptySplit(format!(
            "no observations at or before {train_end}"
        )));
    }
    if test.tasks.is_empty() {
        return Err(Error::EmptySplit(format!(
            "no observations in {}..={test_end}",
            train_end + 1
        )));
    }
    train.split = s;
    test.split = s;
    Ok((train, test))
}
