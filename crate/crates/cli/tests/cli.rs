use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stackgp::data::split;
use stackgp::metrics::{mae, r2};
use stackgp::pipeline::{fit_and_forecast, forecast_csv, read_forecast_csv, PipelineConfig};
use stackgp::PanelDataset;

const SMALL: &str = r#"
seed = 5
method = "stacked"

[data.synth]
n_tasks = 8
months = 30

[stage2.layout]
max_opt_rows = 60
"#;

fn stackgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stackgp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn ok(out: &Output) -> PathBuf {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim())
}

/// synth → fit → forecast → evaluate inside `dir`; returns the four outputs.
fn pipeline(dir: &Path) -> [PathBuf; 4] {
    let cfg = write_config(dir, SMALL);
    let out = dir.join("out");
    let common = ["--config", path(&cfg), "--out", path(&out)];
    let panel = ok(&stackgp(&[&["synth"][..], &common].concat()));
    let model = ok(&stackgp(&[&["fit"][..], &common].concat()));
    let forecast = ok(&stackgp(&["forecast", "--model", path(&model)]));
    let report = ok(&stackgp(&[
        "evaluate",
        "--forecast",
        path(&forecast),
        "--actuals",
        path(&panel),
    ]));
    [panel, model, forecast, report]
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let [panel, model, forecast, report] = pipeline(dir.path());
    let panel_data = PanelDataset::read_json(&panel).unwrap();

    let artifact: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    let tasks = artifact["learned"]["tasks"].as_array().unwrap();
    assert_eq!(tasks.len(), 8);
    assert!(tasks
        .iter()
        .all(|t| t["mpe"].is_f64() && t["passed"].is_boolean()));
    assert_eq!(artifact["config"]["seed"], 5);

    let rows = read_forecast_csv(&forecast).unwrap();
    assert_eq!(rows.len(), 8 * 12);
    assert!(rows.iter().all(|r| r.variance > 0.0));
    for w in rows.windows(2).filter(|w| w[0].task_id == w[1].task_id) {
        assert!(w[1].month > w[0].month);
    }

    // Report metrics recomputed from the joined vectors.
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let (mut actual, mut mean) = (Vec::new(), Vec::new());
    for r in &rows {
        actual.push(
            panel_data
                .task(&r.task_id)
                .unwrap()
                .load_at(r.month)
                .unwrap(),
        );
        mean.push(r.mean);
    }
    assert_eq!(rep["n"], 96);
    assert_eq!(rep["mae"].as_f64().unwrap(), mae(&actual, &mean).unwrap());
    assert_eq!(rep["r2"].as_f64().unwrap(), r2(&actual, &mean).unwrap());
    let regions: Vec<&String> = rep["by_region"].as_object().unwrap().keys().collect();
    assert_eq!(regions, vec!["NSW", "VIC"]);
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (x, y) = (pipeline(a.path()), pipeline(b.path()));
    // The model echoes its output directory, so it is compared apart from that.
    for i in [0, 2, 3] {
        assert_eq!(
            fs::read(&x[i]).unwrap(),
            fs::read(&y[i]).unwrap(),
            "{}",
            y[i].display()
        );
    }
    let echo = |p: &Path| {
        let mut v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        v["config"]["out_dir"] = serde_json::Value::Null;
        v
    };
    assert_eq!(echo(&x[1]), echo(&y[1]));
}

#[test]
fn cli_forecasts_equal_library_forecasts() {
    let dir = tempfile::tempdir().unwrap();
    let [_, _, forecast, _] = pipeline(dir.path());
    let cfg = PipelineConfig::from_toml(SMALL).unwrap();
    let panel = cfg.load_panel().unwrap();
    let s = panel.split.unwrap();
    let (train, _) = split(&panel, s.train_end, s.test_end).unwrap();
    let lib = fit_and_forecast(&train, s.train_end, 12, &cfg.settings().unwrap()).unwrap();
    assert_eq!(
        fs::read(&forecast).unwrap(),
        forecast_csv(&lib.forecasts).unwrap()
    );
}

#[test]
fn perfect_forecast_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let [panel, _, forecast, _] = pipeline(dir.path());
    let actuals = PanelDataset::read_json(&panel).unwrap();
    let mut rows = read_forecast_csv(&forecast).unwrap();
    for r in &mut rows {
        let y = actuals.task(&r.task_id).unwrap().load_at(r.month).unwrap();
        *r = stackgp::stacking::ForecastRow::new(&r.task_id, r.month, y, 1.0);
    }
    let exact = dir.path().join("exact");
    fs::create_dir_all(&exact).unwrap();
    let f = exact.join("forecast.csv");
    fs::write(&f, forecast_csv(&rows).unwrap()).unwrap();
    let report = ok(&stackgp(&[
        "evaluate",
        "--forecast",
        path(&f),
        "--actuals",
        path(&panel),
    ]));
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(rep["mae"], 0.0);
    assert_eq!(rep["r2"], 1.0);
    assert_eq!(rep["coverage95"], 1.0);
}

#[test]
fn horizon_flag_controls_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let [_, model, _, _] = pipeline(dir.path());
    let out = dir.path().join("h3");
    let f = ok(&stackgp(&[
        "forecast",
        "--model",
        path(&model),
        "--horizon",
        "3",
        "--out",
        path(&out),
    ]));
    assert_eq!(read_forecast_csv(&f).unwrap().len(), 8 * 3);
}

#[test]
fn exit_codes_follow_error_category() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "seed = 1\n[data.synth]\nn_tasks = 0\n");
    let out = stackgp(&["synth", "--config", path(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_tasks"));

    let cfg = write_config(dir.path(), SMALL);
    let out = stackgp(&[
        "fit",
        "--config",
        path(&cfg),
        "--tau",
        "0",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = stackgp(&["fit", "--config", path(&cfg), "--method", "lstm"]);
    assert_eq!(out.status.code(), Some(2));

    let missing = dir.path().join("nope.json");
    let out = stackgp(&["forecast", "--model", path(&missing)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn method_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("ar");
    let model = ok(&stackgp(&[
        "fit",
        "--config",
        path(&cfg),
        "--method",
        "ar",
        "--out",
        path(&out),
    ]));
    let artifact: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(model).unwrap()).unwrap();
    assert_eq!(artifact["config"]["method"], "ar");
}

#[test]
fn fits_from_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::from_toml(SMALL).unwrap();
    let panel = cfg.load_panel().unwrap();
    let data = dir.path().join("csv");
    stackgp::data::export_csv(&panel, &data).unwrap();
    let s = panel.split.unwrap();
    let text = format!(
        r#"
seed = 5
method = "task_gp"

[data.csv]
readings = "csv/readings.csv"
weather = "csv/weather.csv"
demographics = "csv/demographics.csv"

[split]
train_end = "{}"
test_end = "{}"
"#,
        s.train_end, s.test_end
    );
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let model = ok(&stackgp(&[
        "fit",
        "--config",
        path(&cfg),
        "--out",
        path(&out),
    ]));
    let f = ok(&stackgp(&["forecast", "--model", path(&model)]));
    assert_eq!(read_forecast_csv(&f).unwrap().len(), 8 * 12);
}
