//! Forecast metrics, per-horizon reports and the non-neural baselines.

mod baselines;
mod metrics;
mod report;

pub use baselines::{ar_ls_fit, ar_ls_forecast, seasonal_naive_forecast, ArFit, RIDGE_LAMBDA};
pub use metrics::{pearson, rmse};
pub use report::{markdown_tables, reports_to_csv, Aggregation, EvalReport, HorizonMetrics, Method};

use crate::error::{Error, Result};

/// Scores `predictions` against `truth` (one row per test window, one column
/// per horizon), both already in original units.
pub fn per_horizon_evaluate(
    state: &str,
    method: Method,
    predictions: &[Vec<f64>],
    truth: &[Vec<f64>],
    aggregation: Aggregation,
) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(Error::Domain("no test windows to evaluate".into()));
    }
    if predictions.len() != truth.len() {
        return Err(Error::shape(
            "per_horizon_evaluate",
            &[predictions.len()],
            &[truth.len()],
        ));
    }
    let horizon = truth[0].len();
    if horizon == 0 {
        return Err(Error::Domain("forecast horizon is empty".into()));
    }
    for (p, t) in predictions.iter().zip(truth) {
        if p.len() != horizon || t.len() != horizon {
            return Err(Error::shape("per_horizon_evaluate", &[p.len()], &[t.len()]));
        }
    }
    let mut horizons = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let p: Vec<f64> = predictions.iter().map(|r| r[h]).collect();
        let t: Vec<f64> = truth.iter().map(|r| r[h]).collect();
        let r = pearson(&p, &t).map_err(|e| match e {
            Error::UndefinedCorrelation(msg) => {
                Error::UndefinedCorrelation(format!("{state} {} horizon {}: {msg}", method.name(), h + 1))
            }
            other => other,
        })?;
        horizons.push(HorizonMetrics {
            horizon: h + 1,
            pearson: r,
            rmse: rmse(&p, &t)?,
        });
    }
    let (agg_pearson, agg_rmse) = match aggregation {
        Aggregation::Mean => (
            horizons.iter().map(|m| m.pearson).sum::<f64>() / horizon as f64,
            horizons.iter().map(|m| m.rmse).sum::<f64>() / horizon as f64,
        ),
        Aggregation::H1 => (horizons[0].pearson, horizons[0].rmse),
        Aggregation::Pooled => {
            let p: Vec<f64> = predictions.iter().flatten().copied().collect();
            let t: Vec<f64> = truth.iter().flatten().copied().collect();
            (pearson(&p, &t)?, rmse(&p, &t)?)
        }
    };
    Ok(EvalReport {
        state: state.to_string(),
        method,
        aggregation,
        horizons,
        pearson: agg_pearson,
        rmse: agg_rmse,
    })
}

/// Input-window end positions (exclusive) of every stride-1 test window whose
/// input and target both lie in `[test_start, len)`.
pub fn test_window_ends(len: usize, test_start: usize, in_len: usize, out_len: usize) -> Vec<usize> {
    let first = test_start + in_len;
    if len < first + out_len {
        return Vec::new();
    }
    (first..=len - out_len).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> Vec<Vec<f64>> {
        (0..12)
            .map(|i| (0..4).map(|h| ((i + h) as f64 * 0.7).sin() + 2.0).collect())
            .collect()
    }

    #[test]
    fn perfect_forecaster() {
        let t = truth();
        let r = per_horizon_evaluate("CA", Method::Seq2SeqAttention, &t, &t, Aggregation::Mean).unwrap();
        assert_eq!(r.horizons.len(), 4);
        for m in &r.horizons {
            assert!((m.pearson - 1.0).abs() < 1e-12);
            assert_eq!(m.rmse, 0.0);
        }
    }

    #[test]
    fn constant_forecaster_is_undefined_per_horizon() {
        let t = truth();
        let p = vec![vec![2.0; 4]; t.len()];
        let err = per_horizon_evaluate("CA", Method::ArLs, &p, &t, Aggregation::Mean).unwrap_err();
        assert!(
            matches!(&err, Error::UndefinedCorrelation(m) if m.contains("horizon 1")),
            "{err}"
        );
    }

    #[test]
    fn aggregate_is_mean_of_horizons() {
        let t = truth();
        let p: Vec<Vec<f64>> = t
            .iter()
            .map(|r| r.iter().map(|v| v * 1.1 + 0.05 * v.sin()).collect())
            .collect();
        let r = per_horizon_evaluate("CA", Method::Seq2Seq, &p, &t, Aggregation::Mean).unwrap();
        let s: f64 = r.horizons.iter().map(|m| m.pearson).sum();
        assert_eq!(r.pearson, s / 4.0);
        let h1 = per_horizon_evaluate("CA", Method::Seq2Seq, &p, &t, Aggregation::H1).unwrap();
        assert_eq!(h1.rmse, h1.horizons[0].rmse);
        assert!(per_horizon_evaluate("CA", Method::Seq2Seq, &p, &t, Aggregation::Pooled).is_ok());
    }

    #[test]
    fn empty_test_set() {
        assert!(per_horizon_evaluate("CA", Method::Seq2Seq, &[], &[], Aggregation::Mean).is_err());
    }

    #[test]
    fn test_windows_match_make_windows_count() {
        // 142-week test region with 10→4 windows.
        assert_eq!(test_window_ends(430, 288, 10, 4).len(), 142 - 14 + 1);
        assert_eq!(test_window_ends(20, 10, 10, 4), Vec::<usize>::new());
    }
}
