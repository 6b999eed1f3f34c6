use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ilicast::autodiff::BackwardFault;
use ilicast::data::{
    chronological_split, join_features, load_ili_csv, load_trends_csv, make_windows, FeatureSeries, LoadOptions,
    ScalerParams, Week,
};
use ilicast::eval::{
    ar_ls_fit, ar_ls_forecast, markdown_tables, per_horizon_evaluate, reports_to_csv, seasonal_naive_forecast,
    test_window_ends, EvalReport, Method,
};
use ilicast::seq2seq::{checkpoint_load, checkpoint_save, forecast, Checkpoint, ModelKind, ModelParams};
use ilicast::training::{gradient_check, train_with, GradCheckOptions, GradCheckReport, TrainHistory};
use ilicast::{synthetic, CheckpointError, DataError, Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{model_kind, Loaded, RunConfig};

/// Stream used for weight initialisation; training draws from stream 0.
const INIT_STREAM: u64 = 1;

pub const SNAPSHOT_FILE: &str = "run_config.json";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(path.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

/// Joined series of one state plus the index where its test region starts.
#[derive(Clone, Debug)]
pub struct StateData {
    pub name: String,
    pub series: FeatureSeries,
    pub split: usize,
}

pub fn load_state(l: &Loaded, state: Option<&str>) -> Result<StateData> {
    let c = &l.config;
    let ili_path = l.input_path("ili_csv", c.paths.ili_csv.as_ref(), state)?;
    let trends_path = l.input_path("trends_csv", c.paths.trends_csv.as_ref(), state)?;
    let opts = LoadOptions {
        state: state.map(str::to_string),
        impute: c.impute,
    };
    let ili = load_ili_csv(&ili_path, &opts)?;
    let trends = load_trends_csv(&trends_path, &opts)?;
    let series = join_features(&ili, &trends)?;
    let (train, _) = chronological_split(&series, c.split_ratio, c.model.in_len + c.model.out_len)?;
    Ok(StateData {
        name: series.state.clone(),
        split: train.len(),
        series,
    })
}

pub fn init_params(config: &RunConfig, kind: ModelKind) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    rng.set_stream(INIT_STREAM);
    ModelParams::init(config.model.architecture(kind), &mut rng)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: String,
    pub method: Method,
    pub checkpoint: PathBuf,
    pub history: TrainHistory,
}

/// Trains every selected neural method on every state.
///
/// Writes, per model, the checkpoint, `<checkpoint>.history.csv` and
/// `<checkpoint>.log`, plus one `run_config.json` snapshot in `output_dir`.
pub fn cmd_train(l: &Loaded) -> Result<Vec<TrainOutcome>> {
    let c = &l.config;
    let snapshot = serde_json::to_value(c).map_err(|e| Error::Config(e.to_string()))?;
    let pretty = serde_json::to_string_pretty(&snapshot).map_err(|e| Error::Config(e.to_string()))?;
    write(&l.output_dir().join(SNAPSHOT_FILE), pretty + "\n")?;

    let mut outcomes = Vec::new();
    for state in c.state_list() {
        let data = load_state(l, state.as_deref())?;
        let train_region = data.series.slice(0..data.split);
        let scaler = ScalerParams::fit(&train_region)?;
        let windows = make_windows(&scaler.transform(&train_region), c.model.in_len, c.model.out_len)?;
        for &method in &c.methods {
            let Some(kind) = model_kind(method) else { continue };
            let path = l.checkpoint_path(&data.name, method)?;
            let params = init_params(c, kind)?;
            let mut log = format!(
                "state {} method {} windows {} parameters {}\n",
                data.name,
                method.name(),
                windows.len(),
                params.num_parameters()
            );
            let started = Instant::now();
            let (best, history) = train_with(params, &windows, &c.train, |epoch, h| {
                let val = h.val_loss[epoch - 1]
                    .map(|v| format!("{v:.6e}"))
                    .unwrap_or_else(|| "-".into());
                let line = format!(
                    "epoch {epoch} train_loss {:.6e} val_loss {val}",
                    h.train_loss[epoch - 1]
                );
                eprintln!("[{} {}] {line}", data.name, method.name());
                log.push_str(&line);
                log.push('\n');
            })?;
            writeln!(
                log,
                "best_epoch {} teacher_used {}/{}",
                history.best_epoch, history.teacher_used, history.teacher_draws
            )
            .expect("write to string");
            eprintln!(
                "[{} {}] done in {:.1}s, best epoch {}",
                data.name,
                method.name(),
                started.elapsed().as_secs_f64(),
                history.best_epoch
            );
            let checkpoint = Checkpoint {
                params: best,
                scaler: Some(scaler.clone()),
                config: serde_json::json!({
                    "run": snapshot,
                    "state": data.name,
                    "method": method.name(),
                }),
            };
            checkpoint_save(&checkpoint, &path)?;
            write(&sibling(&path, ".history.csv"), history.to_csv())?;
            write(&sibling(&path, ".log"), log)?;
            outcomes.push(TrainOutcome {
                state: data.name.clone(),
                method,
                checkpoint: path,
                history,
            });
        }
    }
    Ok(outcomes)
}

/// Loads a checkpoint and checks it against the configured architecture.
pub fn load_model(l: &Loaded, state: &str, method: Method, kind: ModelKind) -> Result<(Checkpoint, ScalerParams)> {
    let path = l.checkpoint_path(state, method)?;
    let ckpt = checkpoint_load(&path)?;
    let expected = l.config.model.architecture(kind);
    if ckpt.params.arch != expected {
        return Err(CheckpointError::DimMismatch(format!(
            "{} holds {:?}, configuration asks for {:?}",
            path.display(),
            ckpt.params.arch,
            expected
        ))
        .into());
    }
    let scaler = ckpt
        .scaler
        .clone()
        .ok_or_else(|| CheckpointError::Corrupt(format!("{} has no scaler", path.display())))?;
    Ok((ckpt, scaler))
}

fn scaled_window(series: &FeatureSeries, scaler: &ScalerParams, end: usize, in_len: usize) -> Vec<Vec<f64>> {
    series.points()[end - in_len..end]
        .iter()
        .map(|p| {
            p.values
                .iter()
                .enumerate()
                .map(|(c, &v)| scaler.transform_value(c, v))
                .collect()
        })
        .collect()
}

/// One forecast from the latest `in_len` weeks, as CSV text.
pub fn forecast_csv(
    params: &ModelParams,
    scaler: &ScalerParams,
    series: &FeatureSeries,
    weeks: usize,
) -> Result<String> {
    let in_len = params.arch.in_len;
    if series.len() < in_len {
        return Err(DataError::TooShort {
            len: series.len(),
            needed: in_len,
        }
        .into());
    }
    let window = scaled_window(series, scaler, series.len(), in_len);
    let f = forecast(params, &window, weeks)?;
    let origin: Week = series.points()[series.len() - 1].week;
    let mut out = String::from("origin_week,horizon,predicted_ili");
    for j in 1..=in_len {
        write!(out, ",alpha_{j}").expect("write to string");
    }
    out.push_str("\r\n");
    for (h, v) in f.values.iter().enumerate() {
        write!(out, "{origin},{},{}", h + 1, scaler.inverse_value(0, *v)).expect("write to string");
        match f.attention_maps.get(h) {
            Some(alpha) => alpha.iter().for_each(|a| write!(out, ",{a}").expect("write to string")),
            None => (0..in_len).for_each(|_| out.push(',')),
        }
        out.push_str("\r\n");
    }
    Ok(out)
}

/// Writes `<checkpoint>.forecast.csv` for every state and neural method.
pub fn cmd_forecast(l: &Loaded, weeks: Option<usize>) -> Result<Vec<PathBuf>> {
    let c = &l.config;
    let weeks = weeks.unwrap_or(c.model.out_len);
    if weeks == 0 {
        return Err(Error::Config("--weeks must be positive".into()));
    }
    let mut written = Vec::new();
    for state in c.state_list() {
        let data = load_state(l, state.as_deref())?;
        for &method in &c.methods {
            let Some(kind) = model_kind(method) else { continue };
            let (ckpt, scaler) = load_model(l, &data.name, method, kind)?;
            let csv = forecast_csv(&ckpt.params, &scaler, &data.series, weeks)?;
            let path = sibling(&l.checkpoint_path(&data.name, method)?, ".forecast.csv");
            write(&path, csv)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Scores every selected method on the test windows of every state.
///
/// Baselines see the raw ILI history up to each window end (AR-LS is fit on
/// the training region only); neural methods use their checkpoints.
pub fn evaluate_state(l: &Loaded, data: &StateData) -> Result<Vec<EvalReport>> {
    let c = &l.config;
    let (in_len, out_len) = (c.model.in_len, c.model.out_len);
    let ili = data.series.ili();
    let ends = test_window_ends(ili.len(), data.split, in_len, out_len);
    if ends.is_empty() {
        return Err(DataError::TooShort {
            len: ili.len() - data.split,
            needed: in_len + out_len,
        }
        .into());
    }
    let truth: Vec<Vec<f64>> = ends.iter().map(|&e| ili[e..e + out_len].to_vec()).collect();
    let mut reports = Vec::new();
    for &method in &c.methods {
        let preds: Vec<Vec<f64>> = match method {
            Method::SeasonalNaive => ends
                .iter()
                .map(|&e| seasonal_naive_forecast(&ili[..e], out_len, c.seasonal_period))
                .collect::<Result<_>>()?,
            Method::ArLs => {
                let fit = ar_ls_fit(&ili[..data.split], c.ar_order)?;
                ends.iter()
                    .map(|&e| ar_ls_forecast(&fit, &ili[..e], out_len))
                    .collect::<Result<_>>()?
            }
            neural => {
                let kind = model_kind(neural).expect("neural method");
                let (ckpt, scaler) = load_model(l, &data.name, neural, kind)?;
                ends.iter()
                    .map(|&e| {
                        let f = forecast(&ckpt.params, &scaled_window(&data.series, &scaler, e, in_len), out_len)?;
                        Ok(f.values.iter().map(|v| scaler.inverse_value(0, *v)).collect())
                    })
                    .collect::<Result<_>>()?
            }
        };
        reports.push(per_horizon_evaluate(&data.name, method, &preds, &truth, c.aggregation)?);
    }
    Ok(reports)
}

/// Writes `report.csv`, `report.json` and `report.md` into `output_dir`.
pub fn cmd_evaluate(l: &Loaded) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for state in l.config.state_list() {
        let data = load_state(l, state.as_deref())?;
        reports.extend(evaluate_state(l, &data)?);
    }
    let dir = l.output_dir();
    write(&dir.join("report.csv"), reports_to_csv(&reports))?;
    let json = serde_json::to_string_pretty(&reports).map_err(|e| Error::Config(e.to_string()))?;
    write(&dir.join("report.json"), json + "\n")?;
    write(&dir.join("report.md"), markdown_tables(&reports))?;
    Ok(reports)
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradcheckOutcome {
    pub report: GradCheckReport,
    pub seconds: f64,
    pub passed: bool,
}

impl GradcheckOutcome {
    /// Summary line plus the worst coordinates, one per line.
    pub fn table(&self, worst: usize) -> String {
        let mut out = format!(
            "{} coordinates over {} tensors, max relative error {:.3e} ({}) in {:.2}s\n",
            self.report.entries.len(),
            self.report.tensors_checked,
            self.report.max_rel_error,
            if self.passed { "PASS" } else { "FAIL" },
            self.seconds
        );
        writeln!(
            out,
            "{:<28} {:>7} {:>14} {:>14} {:>10}",
            "tensor", "index", "analytic", "numeric", "rel_err"
        )
        .expect("write to string");
        for e in self.report.worst(worst) {
            writeln!(
                out,
                "{:<28} {:>7} {:>14.6e} {:>14.6e} {:>10.3e}",
                e.tensor, e.index, e.analytic, e.numeric, e.rel_error
            )
            .expect("write to string");
        }
        out
    }
}

/// Checks tape gradients of a freshly initialised attention model against
/// central differences on a synthetic window.
pub fn cmd_gradcheck(config: &RunConfig, inject_fault: bool) -> Result<GradcheckOutcome> {
    let started = Instant::now();
    let params = init_params(config, ModelKind::Seq2SeqAttention)?;
    let (in_len, out_len) = (config.model.in_len, config.model.out_len);
    let series = synthetic::sinusoid_series(2 * (in_len + out_len), 13.0, 3.0, 4.0)?;
    let scaler = ScalerParams::fit(&series)?;
    let sample = make_windows(&scaler.transform(&series), in_len, out_len)?.swap_remove(in_len / 2);
    let opts = GradCheckOptions {
        seed: config.train.seed,
        fault: inject_fault.then_some(BackwardFault::TanhDerivative),
        ..GradCheckOptions::default()
    };
    let report = gradient_check(&params, &sample, &opts)?;
    Ok(GradcheckOutcome {
        passed: report.max_rel_error < GRADCHECK_TOLERANCE,
        report,
        seconds: started.elapsed().as_secs_f64(),
    })
}
