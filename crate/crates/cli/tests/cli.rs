mod common;

use std::fs;

use common::*;
use ilicast::eval::{EvalReport, Method};
use ilicast::seq2seq::{checkpoint_load, forecast};
use ilicast::synthetic;
use serde_json::json;

#[test]
fn train_smoke_on_the_bundled_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &synth60_config(dir.path()));
    let out = ilicast(&config, &["train", "--methods", "seq2seq_attention"]);
    assert_ok(&out);
    let ckpt = dir.path().join("out/SYNTH/seq2seq_attention.ckpt");
    assert!(ckpt.is_file());
    let history = csv_rows(&dir.path().join("out/SYNTH/seq2seq_attention.ckpt.history.csv"));
    assert_eq!(history.len(), 1 + 5);
    assert_eq!(history[0], ["epoch", "train_loss", "val_loss"]);
    assert!(dir.path().join("out/SYNTH/seq2seq_attention.ckpt.log").is_file());
    assert!(dir.path().join("out/run_config.json").is_file());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.trim(), ckpt.display().to_string());
}

#[test]
fn missing_trends_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synth60_config(dir.path());
    let missing = dir.path().join("nope_trends.csv");
    cfg["paths"]["trends_csv"] = json!(missing);
    let out = ilicast(&write_config(dir.path(), &cfg), &["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains(&missing.display().to_string()),
        "{}",
        stderr(&out)
    );
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synth60_config(dir.path());
    cfg["train"]["epochs"] = json!("five");
    let out = ilicast(&write_config(dir.path(), &cfg), &["train"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("train.epochs") && err.contains("expected usize"), "{err}");

    let mut cfg = synth60_config(dir.path());
    cfg["paths"]["checkpoint"] = json!("../escape.ckpt");
    let out = ilicast(&write_config(dir.path(), &cfg), &["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("paths.checkpoint"), "{}", stderr(&out));
}

#[test]
fn forecast_matches_the_library_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &synth60_config(dir.path()));
    assert_ok(&ilicast(
        &config,
        &["train", "--methods", "seq2seq_attention,seq2seq", "--seed", "4"],
    ));
    assert_ok(&ilicast(
        &config,
        &["forecast", "--methods", "seq2seq_attention,seq2seq", "--weeks", "4"],
    ));

    let ckpt = checkpoint_load(&dir.path().join("out/SYNTH/seq2seq_attention.ckpt")).unwrap();
    let scaler = ckpt.scaler.clone().unwrap();
    let series = synthetic::sinusoid_series(60, 52.0, 3.0, 4.0).unwrap();
    let window: Vec<Vec<f64>> = series.points()[50..]
        .iter()
        .map(|p| {
            vec![
                scaler.transform_value(0, p.values[0]),
                scaler.transform_value(1, p.values[1]),
            ]
        })
        .collect();
    let expected = forecast(&ckpt.params, &window, 4).unwrap();

    let rows = csv_rows(&dir.path().join("out/SYNTH/seq2seq_attention.ckpt.forecast.csv"));
    assert_eq!(rows.len(), 1 + 4);
    assert_eq!(rows[0][..4], ["origin_week", "horizon", "predicted_ili", "alpha_1"]);
    assert_eq!(rows[0].len(), 3 + 10);
    for (h, row) in rows[1..].iter().enumerate() {
        assert_eq!(row[0], series.points()[59].week.to_string());
        assert_eq!(row[1], (h + 1).to_string());
        let value: f64 = row[2].parse().unwrap();
        assert_eq!(value.to_bits(), scaler.inverse_value(0, expected.values[h]).to_bits());
        let alpha: Vec<f64> = row[3..].iter().map(|a| a.parse().unwrap()).collect();
        assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(alpha, expected.attention_maps[h]);
    }

    let plain = csv_rows(&dir.path().join("out/SYNTH/seq2seq.ckpt.forecast.csv"));
    assert_eq!(plain.len(), 5);
    assert!(plain[1][3..].iter().all(String::is_empty));
}

#[test]
fn checkpoint_architecture_mismatch_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synth60_config(dir.path());
    cfg["train"]["epochs"] = json!(1);
    let config = write_config(dir.path(), &cfg);
    assert_ok(&ilicast(&config, &["train", "--methods", "seq2seq"]));
    cfg["model"] = json!({ "encoder_hidden": 16, "decoder_hidden": 32 });
    let config = write_config(dir.path(), &cfg);
    let out = ilicast(&config, &["forecast", "--methods", "seq2seq"]);
    assert_eq!(out.status.code(), Some(5), "{}", stderr(&out));
}

#[test]
fn evaluate_writes_consistent_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &synth60_config(dir.path()));
    assert_ok(&ilicast(&config, &["train"]));
    assert_ok(&ilicast(&config, &["evaluate", "--methods", "all"]));

    let out = dir.path().join("out");
    let rows = csv_rows(&out.join("report.csv"));
    assert_eq!(rows[0], ["state", "method", "horizon", "pearson", "rmse"]);
    assert_eq!(rows.len() - 1, Method::ALL.len() * 4);

    let reports: Vec<EvalReport> = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(reports.len(), Method::ALL.len());
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    let best_pearson = reports.iter().max_by(|a, b| a.pearson.total_cmp(&b.pearson)).unwrap();
    let best_rmse = reports.iter().min_by(|a, b| a.rmse.total_cmp(&b.rmse)).unwrap();
    let bold: Vec<&str> = md.split("**").skip(1).step_by(2).collect();
    assert_eq!(bold.len(), 2, "{md}");
    assert_eq!(bold[0], format!("{:.3}", best_pearson.pearson));
    assert_eq!(bold[1], format!("{:.2}", best_rmse.rmse));
}

#[test]
fn seasonal_naive_is_near_perfect_on_periodic_data() {
    let dir = tempfile::tempdir().unwrap();
    let series = synthetic::periodic_series(430, 52).unwrap();
    let (ili, trends) = synthetic::write_fixture(dir.path(), "periodic", &series).unwrap();
    let cfg = json!({
        "paths": { "ili_csv": ili, "trends_csv": trends, "output_dir": dir.path().join("out") },
    });
    let out = ilicast(
        &write_config(dir.path(), &cfg),
        &["evaluate", "--methods", "seasonal_naive"],
    );
    assert_ok(&out);
    let reports: Vec<EvalReport> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(reports.len(), 1);
    assert!(reports[0].pearson > 0.99, "{:?}", reports[0]);
}

#[test]
fn gradcheck_passes_and_catches_a_broken_derivative() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &json!({}));
    let ok = ilicast(&config, &["gradcheck"]);
    assert_ok(&ok);
    let table = String::from_utf8(ok.stdout).unwrap();
    assert!(table.contains("PASS"));
    assert_eq!(table.lines().count(), 2 + 10);

    let bad = ilicast(&config, &["gradcheck", "--inject-fault"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8(bad.stdout).unwrap().contains("FAIL"));
}
