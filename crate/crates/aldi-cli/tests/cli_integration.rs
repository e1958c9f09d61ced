//! End-to-end tests that drive the compiled binary the way an operator
//! would: synthesize a meter CSV, run subcommands against it, and check the
//! artifacts, exit codes, and error channels.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aldi_core::detector::{
    write_labels, Granularity, Label, LabelEntry, LabelKey, LabelSet, MethodTag,
};
use aldi_core::ingest::write_portfolio_csv;
use aldi_core::synth::{generate, inject_anomalies, InjectionPlan, SynthConfig};
use chrono::NaiveDate;
use tempfile::TempDir;

fn aldi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aldi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// Write a small corrupted portfolio to `dir/meters.csv` and return the
/// path plus the injection ground truth.
fn fixture(dir: &Path) -> (PathBuf, InjectionPlan) {
    let mut portfolio = generate(&SynthConfig {
        site_id: "siteX".to_string(),
        n_buildings: 4,
        n_days: 56,
        seed: 11,
        ..SynthConfig::default()
    });
    let plan = inject_anomalies(&mut portfolio, 6, 2, 12);
    let path = dir.join("meters.csv");
    let mut buffer = Vec::new();
    write_portfolio_csv(&portfolio, &mut buffer).unwrap();
    fs::write(&path, buffer).unwrap();
    (path, plan)
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn detect_runs_are_byte_identical_and_resolved_config_reproduces_them() {
    let dir = TempDir::new().unwrap();
    let (input, _) = fixture(dir.path());
    let input = input.to_str().unwrap();

    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    let out3 = dir.path().join("run3");
    for out in [&out1, &out2] {
        let run = aldi(&["detect", "--input", input, "--seed", "5", "--out", out.to_str().unwrap()]);
        assert!(run.status.success(), "stderr: {}", stderr_of(&run));
    }
    for artifact in ["labels.csv", "dvalues.csv", "resolved.toml"] {
        assert_eq!(
            read(&out1.join(artifact)),
            read(&out2.join(artifact)),
            "{artifact} differs between identical runs"
        );
    }

    // The emitted config alone must reproduce the artifacts byte for byte.
    let resolved = out1.join("resolved.toml");
    let rerun = aldi(&[
        "detect",
        "--config",
        resolved.to_str().unwrap(),
        "--out",
        out3.to_str().unwrap(),
    ]);
    assert!(rerun.status.success(), "stderr: {}", stderr_of(&rerun));
    for artifact in ["labels.csv", "dvalues.csv", "resolved.toml"] {
        assert_eq!(
            read(&out1.join(artifact)),
            read(&out3.join(artifact)),
            "{artifact} differs when re-run from resolved.toml"
        );
    }
}

#[test]
fn evaluate_against_itself_is_perfect() {
    let dir = TempDir::new().unwrap();
    let (input, _) = fixture(dir.path());
    let detect_out = dir.path().join("detect");
    let run = aldi(&[
        "detect",
        "--input",
        input.to_str().unwrap(),
        "--out",
        detect_out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "stderr: {}", stderr_of(&run));

    let labels = detect_out.join("labels.csv");
    let eval_out = dir.path().join("eval");
    let eval = aldi(&[
        "evaluate",
        "--pred",
        labels.to_str().unwrap(),
        "--truth",
        labels.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert!(eval.status.success(), "stderr: {}", stderr_of(&eval));

    let report = fs::read_to_string(eval_out.join("evaluation.csv")).unwrap();
    let mut lines = report.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let field = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(field("status"), "ok");
    assert_eq!(field("fp"), "0");
    assert_eq!(field("fn"), "0");
    assert_eq!(field("auc").parse::<f64>().unwrap(), 1.0);
}

#[test]
fn evaluate_rejects_incomparable_granularities() {
    let dir = TempDir::new().unwrap();
    let (input, _) = fixture(dir.path());

    let site_day = dir.path().join("siteday");
    let hourly = dir.path().join("hourly");
    for (out, method) in [(&site_day, "aldi++"), (&hourly, "2sd")] {
        let run = aldi(&[
            "detect",
            "--input",
            input.to_str().unwrap(),
            "--method",
            method,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(run.status.success(), "stderr: {}", stderr_of(&run));
    }

    // Site-day predictions cannot be fanned out to hours without the meter
    // CSV, and no flag supplies it here: configuration error, exit 2.
    let eval = aldi(&[
        "evaluate",
        "--pred",
        site_day.join("labels.csv").to_str().unwrap(),
        "--truth",
        hourly.join("labels.csv").to_str().unwrap(),
        "--out",
        dir.path().join("eval").to_str().unwrap(),
    ]);
    assert_eq!(eval.status.code(), Some(2), "stderr: {}", stderr_of(&eval));
    let message = stderr_of(&eval);
    assert!(
        message.contains("site-day") && message.contains("building-hour"),
        "message should name both granularities: {message}"
    );
    assert!(message.contains("--to-daily"), "message should point at the fix: {message}");
}

#[test]
fn export_filter_broadcasts_discord_site_days_to_all_building_hours() {
    let dir = TempDir::new().unwrap();
    let mut portfolio = generate(&SynthConfig {
        site_id: "siteX".to_string(),
        n_buildings: 5,
        n_days: 7,
        seed: 3,
        ..SynthConfig::default()
    });
    inject_anomalies(&mut portfolio, 1, 1, 4);
    let input = dir.path().join("meters.csv");
    let mut buffer = Vec::new();
    write_portfolio_csv(&portfolio, &mut buffer).unwrap();
    fs::write(&input, buffer).unwrap();

    // Hand-written site-day labels: exactly one discord day.
    let start = NaiveDate::from_ymd_opt(2016, 1, 4).unwrap();
    let mut labels = LabelSet::new(MethodTag::GroundTruth, Granularity::SiteDay);
    for day in 0..7 {
        let label = if day == 2 { Label::Discord } else { Label::NonDiscord };
        labels.insert(
            LabelKey::site_day("siteX", start + chrono::Days::new(day)),
            LabelEntry::bare(label),
        );
    }
    let label_path = dir.path().join("labels.csv");
    let mut serialized = Vec::new();
    write_labels(&labels, &mut serialized).unwrap();
    fs::write(&label_path, serialized).unwrap();

    let out = dir.path().join("train_filter.csv");
    let run = aldi(&[
        "export-filter",
        "--labels",
        label_path.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "stderr: {}", stderr_of(&run));

    let filter = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = filter.lines().skip(1).collect();
    assert_eq!(rows.len(), 5 * 7 * 24, "one row per building-hour");
    let dropped = rows.iter().filter(|r| r.ends_with(",0")).count();
    assert_eq!(dropped, 5 * 24, "one discord day drops all five buildings' hours");
    let discord_date = (start + chrono::Days::new(2)).to_string();
    for row in rows {
        let is_dropped = row.ends_with(",0");
        assert_eq!(
            row.contains(&discord_date),
            is_dropped,
            "drops must coincide with the discord date: {row}"
        );
    }
}

#[test]
fn benchmark_compares_methods_and_rejects_unknown_ones_before_running() {
    let dir = TempDir::new().unwrap();
    let (input, plan) = fixture(dir.path());

    // Building-day ground truth from the injection plan: every method can
    // be collapsed or broadcast to this granularity.
    let start = NaiveDate::from_ymd_opt(2016, 1, 4).unwrap();
    let mut truth = LabelSet::new(MethodTag::GroundTruth, Granularity::BuildingDay);
    for day in 0..56u64 {
        let date = start + chrono::Days::new(day);
        for b in 0..4 {
            let building = format!("b{b:03}");
            let anomalous = plan
                .anomalies
                .iter()
                .any(|a| a.date == date && a.building_ids.contains(&building));
            truth.insert(
                LabelKey::building_day("siteX", &building, date),
                LabelEntry::bare(if anomalous { Label::Discord } else { Label::NonDiscord }),
            );
        }
    }
    let truth_path = dir.path().join("truth.csv");
    let mut serialized = Vec::new();
    write_labels(&truth, &mut serialized).unwrap();
    fs::write(&truth_path, serialized).unwrap();

    let out = dir.path().join("bench");
    let run = aldi(&[
        "benchmark",
        "--input",
        input.to_str().unwrap(),
        "--truth",
        truth_path.to_str().unwrap(),
        "--runs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "stderr: {}", stderr_of(&run));

    let report = fs::read_to_string(out.join("benchmark.csv")).unwrap();
    let mut lines = report.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows: Vec<Vec<String>> =
        lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows.len(), 3, "one row per method:\n{report}");
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for row in &rows {
        assert_eq!(row[col("status")], "ok", "row: {row:?}");
        assert_eq!(row[col("runs")], "2");
        let auc: f64 = row[col("auc")].parse().unwrap();
        assert!((0.0..=1.0).contains(&auc));
    }
    let methods: Vec<&String> = rows.iter().map(|r| &r[col("method")]).collect();
    assert_eq!(methods, ["aldi++", "aldi", "2sd"], "configured method order is preserved");

    // An unknown method must fail fast, before any detection runs.
    let bad = aldi(&[
        "benchmark",
        "--input",
        input.to_str().unwrap(),
        "--truth",
        truth_path.to_str().unwrap(),
        "--methods",
        "aldi++,bogus",
        "--out",
        dir.path().join("bench2").to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2), "stderr: {}", stderr_of(&bad));
    assert!(stderr_of(&bad).contains("bogus"), "stderr: {}", stderr_of(&bad));
}

#[test]
fn convert_reshapes_wide_exports_into_the_long_format() {
    let dir = TempDir::new().unwrap();
    let wide = dir.path().join("wide.csv");
    fs::write(
        &wide,
        "timestamp,b1,b2\n\
         2016-01-04 01:00:00,2.0,20.0\n\
         2016-01-04 00:00:00,1.0,10.0\n\
         2016-01-04 02:00:00,3.0,\n",
    )
    .unwrap();

    let long = dir.path().join("long.csv");
    let run = aldi(&["convert", "--wide", wide.to_str().unwrap(), "--out", long.to_str().unwrap()]);
    assert!(run.status.success(), "stderr: {}", stderr_of(&run));

    let expected = "timestamp,building_id,meter_reading\n\
                    2016-01-04 00:00:00,b1,1.0\n\
                    2016-01-04 01:00:00,b1,2.0\n\
                    2016-01-04 02:00:00,b1,3.0\n\
                    2016-01-04 00:00:00,b2,10.0\n\
                    2016-01-04 01:00:00,b2,20.0\n\
                    2016-01-04 02:00:00,b2,\n";
    assert_eq!(fs::read_to_string(&long).unwrap(), expected);
}

#[test]
fn failure_exit_codes_distinguish_config_io_and_pipeline_errors() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");

    // No input anywhere: configuration error.
    let no_input = aldi(&["detect", "--out", out.to_str().unwrap()]);
    assert_eq!(no_input.status.code(), Some(2));
    assert!(stderr_of(&no_input).contains("ingest"), "stderr: {}", stderr_of(&no_input));

    // Unreadable input: I/O error.
    let missing = aldi(&[
        "detect",
        "--input",
        dir.path().join("nope.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(3), "stderr: {}", stderr_of(&missing));

    // Parseable but too short to profile: pipeline error.
    let short = dir.path().join("short.csv");
    let mut rows = String::from("timestamp,site_id,building_id,meter_reading\n");
    for h in 0..24 {
        rows.push_str(&format!("2016-01-04 {h:02}:00:00,s,b,1.0\n"));
    }
    fs::write(&short, rows).unwrap();
    let pipeline = aldi(&[
        "detect",
        "--input",
        short.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(pipeline.status.code(), Some(4), "stderr: {}", stderr_of(&pipeline));
}
