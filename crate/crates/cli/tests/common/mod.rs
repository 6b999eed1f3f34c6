#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Config for the bundled 60-week fixture, writing into `dir/out`.
pub fn synth60_config(dir: &Path) -> Value {
    json!({
        "paths": {
            "ili_csv": fixture("synth60_ili.csv"),
            "trends_csv": fixture("synth60_trends.csv"),
            "output_dir": dir.join("out"),
        },
        "train": { "epochs": 5 },
        "seasonal_period": 26,
    })
}

pub fn write_config(dir: &Path, config: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

pub fn ilicast(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ilicast"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("spawn ilicast")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\n{}", o.status.code(), stderr(o));
}

/// Rows of a CRLF CSV file, header included.
pub fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.ends_with("\r\n"), "{} is not CRLF-terminated", path.display());
    text.split("\r\n")
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}
