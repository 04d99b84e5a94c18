use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use stackgp::data::{
    export_csv, generate_synthetic, ingest_csv, split, IngestOptions, SynthConfig, Unit,
};
use stackgp::{Error, Month};

/// VIC-gas-like fixture: 127 households with three years of quarterly bills
/// plus one with fourteen months, 4586 complete months in total.
fn write_vic_fixture(dir: &Path, orphan: bool) {
    let mut readings = String::from("task_id,period_start,period_end,consumption,unit\n");
    let mut demo = String::from("task_id,region,income_band,num_rooms\n");
    let quarter_ends = [(3, 31), (6, 30), (9, 30), (12, 31)];
    for h in 0..128 {
        let id = format!("V{h:03}");
        let quarters = if h == 127 { 4 } else { 12 };
        for q in 0..quarters {
            let year = 2013 + q / 4;
            let (m_end, d_end) = quarter_ends[q % 4];
            let winter = if q % 4 == 1 || q % 4 == 2 { 1.45 } else { 0.55 };
            writeln!(
                readings,
                "{id},{year}-{:02}-01,{year}-{m_end:02}-{d_end},{},MJ",
                m_end - 2,
                3.0 * 4100.0 * winter + (h % 7) as f64 * 3.0 - 9.0
            )
            .unwrap();
        }
        if h == 127 {
            writeln!(readings, "{id},2014-01-01,2014-02-28,8200,MJ").unwrap();
        }
        if !(orphan && h == 5) {
            writeln!(
                demo,
                "{id},VIC,{},{}",
                ["low", "mid", "high"][h % 3],
                2 + h % 5
            )
            .unwrap();
        }
    }
    let mut weather = String::from("region,month,mean_temp_c,hdd,cdd\n");
    for i in 0..48 {
        let m = Month::from_ym(2013, 1) + i;
        writeln!(weather, "VIC,{m},15,90,2").unwrap();
    }
    fs::write(dir.join("readings.csv"), readings).unwrap();
    fs::write(dir.join("demographics.csv"), demo).unwrap();
    fs::write(dir.join("weather.csv"), weather).unwrap();
}

fn ingest(dir: &Path) -> stackgp::Result<stackgp::PanelDataset> {
    ingest_csv(
        &dir.join("readings.csv"),
        &dir.join("weather.csv"),
        &dir.join("demographics.csv"),
        &IngestOptions::default(),
    )
}

#[test]
fn vic_fixture_matches_table_counts() {
    let dir = tempfile::tempdir().unwrap();
    write_vic_fixture(dir.path(), false);
    let panel = ingest(dir.path()).unwrap();
    assert_eq!(panel.unit, Unit::MegaJoule);
    let s = panel.stats();
    assert_eq!(s.samples, 4586);
    assert_eq!(s.load_mean.round(), 4100.0, "mean {}", s.load_mean);
}

#[test]
fn orphan_reading_is_a_join_error() {
    let dir = tempfile::tempdir().unwrap();
    write_vic_fixture(dir.path(), true);
    match ingest(dir.path()) {
        Err(Error::Join(msg)) => assert!(msg.contains("V005"), "{msg}"),
        other => panic!("expected join error, got {other:?}"),
    }
}

#[test]
fn csv_round_trip_is_identical() {
    let synth = generate_synthetic(&SynthConfig {
        n_tasks: 6,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_csv(&synth, dir.path()).unwrap();
    let first = ingest(dir.path()).unwrap();
    let again = tempfile::tempdir().unwrap();
    export_csv(&first, again.path()).unwrap();
    assert_eq!(first, ingest(again.path()).unwrap());
    for (a, b) in first.tasks.iter().zip(&synth.tasks) {
        assert_eq!(a.loads, b.loads);
        assert_eq!(a.times, b.times);
    }
}

#[test]
fn two_household_fixture_aligns_months() {
    let synth = generate_synthetic(&SynthConfig {
        n_tasks: 2,
        months: 24,
        test_months: 0,
        min_train_months: 24,
        max_train_months: 24,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_csv(&synth, dir.path()).unwrap();
    let panel = ingest(dir.path()).unwrap();
    assert_eq!(panel.tasks.len(), 2);
    assert!(panel
        .tasks
        .iter()
        .all(|t| t.len() == 24 && t.weather.iter().all(Option::is_some)));
}

#[test]
fn split_partitions_every_observation() {
    let panel = generate_synthetic(&SynthConfig {
        n_tasks: 10,
        ..SynthConfig::default()
    })
    .unwrap();
    let s = panel.split.unwrap();
    let (train, test) = split(&panel, s.train_end, s.test_end).unwrap();
    let count = |p: &stackgp::PanelDataset| p.tasks.iter().map(|t| t.len()).sum::<usize>();
    assert_eq!(count(&train) + count(&test), count(&panel));
    assert!(train
        .tasks
        .iter()
        .flat_map(|t| &t.times)
        .all(|m| *m <= s.train_end));
    assert!(test
        .tasks
        .iter()
        .flat_map(|t| &t.times)
        .all(|m| *m > s.train_end));
    assert!(train.tasks.iter().all(|t| (6..=12).contains(&t.len())));
    assert!(matches!(
        split(&panel, s.test_end + 24, s.test_end + 36),
        Err(Error::EmptySplit(_))
    ));
}

#[test]
fn winter_exceeds_summer() {
    let panel = generate_synthetic(&SynthConfig::default()).unwrap();
    let (mut winter, mut summer) = (Vec::new(), Vec::new());
    for t in &panel.tasks {
        for (m, y) in t.times.iter().zip(&t.loads) {
            match m.month_of_year() {
                6..=8 => winter.push(*y),
                12 | 1 | 2 => summer.push(*y),
                _ => {}
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&winter) > 2.0 * mean(&summer));
}

#[test]
fn synthetic_panel_is_deterministic() {
    let cfg = SynthConfig {
        n_tasks: 12,
        ..SynthConfig::default()
    };
    assert_eq!(
        generate_synthetic(&cfg).unwrap(),
        generate_synthetic(&cfg).unwrap()
    );
    let other = SynthConfig {
        seed: cfg.seed + 1,
        ..cfg.clone()
    };
    assert_ne!(
        generate_synthetic(&cfg).unwrap(),
        generate_synthetic(&other).unwrap()
    );
}
