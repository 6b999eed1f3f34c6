//! Deterministic synthetic series for tests, examples and smoke runs.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    write_ili_csv, write_trends_csv, Channel, FeaturePoint, FeatureSeries, Observation, TimeSeries, Week,
};
use crate::error::{Error, Result};

/// First week of every generated series (epi-week 2010-40).
pub fn start_week() -> Week {
    Week::new(2010, 40).expect("valid week")
}

fn weeks(n: usize) -> impl Iterator<Item = Week> {
    std::iter::successors(Some(start_week()), |w| Some(w.next())).take(n)
}

/// Pairs an ILI and a trends channel on consecutive weeks from [`start_week`].
pub fn feature_series(state: &str, ili: &[f64], trends: &[f64]) -> Result<FeatureSeries> {
    if ili.len() != trends.len() {
        return Err(Error::shape("feature_series", &[ili.len()], &[trends.len()]));
    }
    let points = weeks(ili.len())
        .zip(ili.iter().zip(trends))
        .map(|(week, (&a, &b))| FeaturePoint { week, values: [a, b] })
        .collect();
    Ok(FeatureSeries::new(state, points)?)
}

/// `offset + amplitude · sin(2πt / period)`.
pub fn sinusoid(n: usize, period: f64, amplitude: f64, offset: f64) -> Vec<f64> {
    (0..n)
        .map(|t| offset + amplitude * (TAU * t as f64 / period).sin())
        .collect()
}

/// Noiseless sinusoidal ILI with an in-phase trends channel on 10..90.
pub fn sinusoid_series(n: usize, period: f64, amplitude: f64, offset: f64) -> Result<FeatureSeries> {
    let ili = sinusoid(n, period, amplitude, offset);
    let trends = sinusoid(n, period, 40.0, 50.0);
    feature_series("SYNTH", &ili, &trends)
}

/// Exactly periodic flu-season shape: a baseline of 1 plus a Gaussian peak of
/// height 5 centred mid-period.
pub fn periodic(n: usize, period: usize) -> Vec<f64> {
    let width = period as f64 / 10.0;
    (0..n)
        .map(|t| {
            let phase = (t % period) as f64 - period as f64 / 2.0;
            1.0 + 5.0 * (-(phase / width).powi(2)).exp()
        })
        .collect()
}

pub fn periodic_series(n: usize, period: usize) -> Result<FeatureSeries> {
    let ili = periodic(n, period);
    let trends: Vec<f64> = ili.iter().map(|v| 15.0 * v).collect();
    feature_series("SYNTH", &ili, &trends)
}

/// `x_t = phi · x_{t-1} + u_t` with `u_t` uniform on `[-noise, noise]`.
pub fn ar1(n: usize, phi: f64, noise: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut prev = 1.0;
    for _ in 0..n {
        prev = phi * prev + rng.gen_range(-noise..=noise);
        x.push(prev);
    }
    x
}

/// A piecewise-constant regime signal `s_t` in `[0, 1]` (a new level is drawn
/// with probability 0.3 each week) carried by the trends channel as `100 s_t`,
/// and an ILI channel `1 + 3 s_{t-delay}` that copies it `delay` weeks later.
/// Forecasting `h` weeks ahead therefore needs the trends value
/// `delay - h + 1` steps back in the input window.
pub fn delayed_regime_series(n: usize, delay: usize, seed: u64) -> Result<FeatureSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = rng.gen::<f64>();
    let s: Vec<f64> = (0..n + delay)
        .map(|_| {
            if rng.gen::<f64>() < 0.3 {
                level = rng.gen::<f64>();
            }
            level
        })
        .collect();
    let trends: Vec<f64> = s[delay..].iter().map(|v| 100.0 * v).collect();
    let ili: Vec<f64> = s[..n].iter().map(|v| 1.0 + 3.0 * v).collect();
    feature_series("SYNTH", &ili, &trends)
}

/// Writes `series` as a CDC ILINet export and a Trends export named
/// `<stem>_ili.csv` / `<stem>_trends.csv` under `dir`.
pub fn write_fixture(dir: &Path, stem: &str, series: &FeatureSeries) -> Result<(PathBuf, PathBuf)> {
    let channel = |c: usize, kind: Channel| {
        let pts = series
            .points()
            .iter()
            .map(|p| Observation {
                week: p.week,
                value: p.values[c],
            })
            .collect();
        TimeSeries::new(series.state.clone(), kind, pts)
    };
    let ili_path = dir.join(format!("{stem}_ili.csv"));
    let trends_path = dir.join(format!("{stem}_trends.csv"));
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Io { path, source }
    };
    write_ili_csv(&ili_path, &channel(0, Channel::IliPercent)?).map_err(io(&ili_path))?;
    write_trends_csv(&trends_path, &channel(1, Channel::TrendsScore)?, "influenza").map_err(io(&trends_path))?;
    Ok((ili_path, trends_path))
}
