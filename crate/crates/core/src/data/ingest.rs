//! CSV ingestion and export.
//!
//! Three files make a panel:
//! - readings: `task_id, period_start, period_end, consumption, unit`
//! - weather: `region, month, mean_temp_c, hdd, cdd`
//! - demographics: `task_id, region, income_band, num_rooms, …extra columns`
//!
//! Readings are billing intervals of any length; they are spread over
//! calendar months and only fully covered months are kept.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use chrono::NaiveDate;

use super::{
    disaggregate_quarterly, BillingInterval, DemographicValue, Frequency, Month, PanelDataset,
    RegionWeather, TaskSeries, Unit, WeatherRow, PANEL_SCHEMA_VERSION,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Extra demographic columns to parse as numbers; all others are categorical.
    pub numeric_columns: BTreeSet<String>,
}

/// Covariates of one household, by column.
type Demographics = BTreeMap<String, DemographicValue>;

struct Table {
    file: String,
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let file = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                other => Error::Schema {
                    file: file.clone(),
                    message: format!("{other:?}"),
                },
            })?;
        let headers = rdr.headers()?.iter().map(str::to_owned).collect();
        let rows = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Table {
            file,
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| self.err(format!("missing column {name:?}")))
    }

    fn err(&self, message: String) -> Error {
        Error::Schema {
            file: self.file.clone(),
            message,
        }
    }

    fn number(&self, row: usize, col: usize) -> Result<f64> {
        let raw = &self.rows[row][col];
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.err(format!("row {}: {:?} is not a number", row + 2, raw)))
    }

    fn date(&self, row: usize, col: usize) -> Result<NaiveDate> {
        let raw = &self.rows[row][col];
        NaiveDate::parse_from_str(raw, "%Y-%m-%d").map_err(|_| {
            self.err(format!(
                "row {}: {:?} is not an ISO-8601 date",
                row + 2,
                raw
            ))
        })
    }
}

fn read_demographics(
    path: &Path,
    opts: &IngestOptions,
) -> Result<BTreeMap<String, (String, Demographics)>> {
    let t = Table::read(path)?;
    let id = t.column("task_id")?;
    let region = t.column("region")?;
    t.column("income_band")?;
    t.column("num_rooms")?;
    let mut out = BTreeMap::new();
    for r in 0..t.rows.len() {
        let mut demo = BTreeMap::new();
        for (c, name) in t.headers.iter().enumerate() {
            if c == id || c == region {
                continue;
            }
            let numeric = name == "num_rooms" || opts.numeric_columns.contains(name);
            let v = if numeric {
                DemographicValue::Numeric(t.number(r, c)?)
            } else {
                DemographicValue::Categorical(t.rows[r][c].to_owned())
            };
            demo.insert(name.clone(), v);
        }
        let key = t.rows[r][id].to_owned();
        if out
            .insert(key.clone(), (t.rows[r][region].to_owned(), demo))
            .is_some()
        {
            return Err(t.err(format!("duplicate task_id {key}")));
        }
    }
    Ok(out)
}

fn read_weather(path: &Path) -> Result<Vec<RegionWeather>> {
    let t = Table::read(path)?;
    let cols = ["region", "month", "mean_temp_c", "hdd", "cdd"]
        .map(|c| t.column(c))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(t.rows.len());
    let mut seen = BTreeSet::new();
    for r in 0..t.rows.len() {
        let month: Month = t.rows[r][cols[1]]
            .parse()
            .map_err(|_| t.err(format!("row {}: bad month", r + 2)))?;
        let region = t.rows[r][cols[0]].to_owned();
        if !seen.insert((region.clone(), month)) {
            return Err(t.err(format!("duplicate weather row for {region} {month}")));
        }
        out.push(RegionWeather {
            region,
            month,
            row: WeatherRow {
                mean_temp_c: t.number(r, cols[2])?,
                hdd: t.number(r, cols[3])?,
                cdd: t.number(r, cols[4])?,
            },
        });
    }
    out.sort_by(|a, b| (&a.region, a.month).cmp(&(&b.region, b.month)));
    Ok(out)
}

fn read_readings(path: &Path) -> Result<(Unit, BTreeMap<String, Vec<BillingInterval>>)> {
    let t = Table::read(path)?;
    let cols = [
        "task_id",
        "period_start",
        "period_end",
        "consumption",
        "unit",
    ]
    .map(|c| t.column(c))
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut unit = None;
    let mut out: BTreeMap<String, Vec<BillingInterval>> = BTreeMap::new();
    for r in 0..t.rows.len() {
        let u = Unit::parse(&t.rows[r][cols[4]])?;
        match unit {
            None => unit = Some(u),
            Some(prev) if prev != u => {
                return Err(Error::Unit(format!(
                    "readings mix {} and {}",
                    prev.tag(),
                    u.tag()
                )))
            }
            _ => {}
        }
        out.entry(t.rows[r][cols[0]].to_owned())
            .or_default()
            .push(BillingInterval {
                start: t.date(r, cols[1])?,
                end: t.date(r, cols[2])?,
                total: t.number(r, cols[3])?,
            });
    }
    let unit = unit.ok_or_else(|| t.err("no readings".into()))?;
    Ok((unit, out))
}

/// Builds a monthly panel from the three CSV files.
pub fn ingest_csv(
    readings_path: &Path,
    weather_path: &Path,
    demographics_path: &Path,
    opts: &IngestOptions,
) -> Result<PanelDataset> {
    let demographics = read_demographics(demographics_path, opts)?;
    let weather = read_weather(weather_path)?;
    let (unit, readings) = read_readings(readings_path)?;

    if let Some(orphan) = readings.keys().find(|id| !demographics.contains_key(*id)) {
        return Err(Error::Join(format!(
            "readings for task_id {orphan} have no demographics row"
        )));
    }

    let lookup: BTreeMap<(&str, Month), WeatherRow> = weather
        .iter()
        .map(|w| ((w.region.as_str(), w.month), w.row))
        .collect();
    let mut tasks = Vec::new();
    for (id, intervals) in &readings {
        let (region, demo) = &demographics[id];
        let monthly = disaggregate_quarterly(intervals).map_err(|e| e.in_task(id))?;
        let kept: Vec<_> = monthly.iter().filter(|m| m.is_complete()).collect();
        let task = TaskSeries {
            task_id: id.clone(),
            region: region.clone(),
            times: kept.iter().map(|m| m.month).collect(),
            loads: kept
                .iter()
                .map(|m| m.amount_f64().expect("complete month has an amount"))
                .collect(),
            weather: kept
                .iter()
                .map(|m| lookup.get(&(region.as_str(), m.month)).copied())
                .collect(),
            demographics: demo.clone(),
        };
        if !task.is_empty() {
            tasks.push(task);
        }
    }
    let panel = PanelDataset {
        schema_version: PANEL_SCHEMA_VERSION,
        unit,
        frequency: Frequency::Monthly,
        split: None,
        provenance: "csv".into(),
        tasks,
        weather,
    };
    panel.validate()?;
    Ok(panel)
}

/// Writes `readings.csv`, `weather.csv` and `demographics.csv` into `dir`,
/// one reading per calendar month.
pub fn export_csv(panel: &PanelDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let io = |p: &Path| {
        let p = p.to_owned();
        move |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(&p, io),
            other => Error::Schema {
                file: p.display().to_string(),
                message: format!("{other:?}"),
            },
        }
    };

    let path = dir.join("readings.csv");
    let mut w = csv::Writer::from_path(&path).map_err(io(&path))?;
    w.write_record([
        "task_id",
        "period_start",
        "period_end",
        "consumption",
        "unit",
    ])?;
    for t in &panel.tasks {
        for (m, load) in t.times.iter().zip(&t.loads) {
            let last = (*m + 1).first_day().pred_opt().expect("date");
            w.write_record([
                t.task_id.clone(),
                m.first_day().to_string(),
                last.to_string(),
                load.to_string(),
                panel.unit.tag().to_owned(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("weather.csv");
    let mut w = csv::Writer::from_path(&path).map_err(io(&path))?;
    w.write_record(["region", "month", "mean_temp_c", "hdd", "cdd"])?;
    for r in &panel.weather {
        w.write_record([
            r.region.clone(),
            r.month.to_string(),
            r.row.mean_temp_c.to_string(),
            r.row.hdd.to_string(),
            r.row.cdd.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("demographics.csv");
    let mut w = csv::Writer::from_path(&path).map_err(io(&path))?;
    let mut extra: BTreeSet<&str> = BTreeSet::new();
    for t in &panel.tasks {
        extra.extend(t.demographics.keys().map(String::as_str));
    }
    extra.remove("income_band");
    extra.remove("num_rooms");
    let mut header = vec!["task_id", "region", "income_band", "num_rooms"];
    header.extend(extra.iter().copied());
    w.write_record(&header)?;
    for t in &panel.tasks {
        let mut rec = vec![t.task_id.clone(), t.region.clone()];
        for col in &header[2..] {
            rec.push(match t.demographics.get(*col) {
                Some(DemographicValue::Numeric(v)) => v.to_string(),
                Some(DemographicValue::Categorical(s)) => s.clone(),
                None => String::new(),
            });
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}
