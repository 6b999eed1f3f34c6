//! Non-neural reference forecasters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Repeats the value observed one `period` earlier.
pub fn seasonal_naive_forecast(history: &[f64], horizon: usize, period: usize) -> Result<Vec<f64>> {
    if period == 0 {
        return Err(Error::Domain("period must be positive".into()));
    }
    if history.len() < period {
        return Err(Error::Domain(format!(
            "seasonal naive needs {period} weeks of history, got {}",
            history.len()
        )));
    }
    let mut buf = history.to_vec();
    for _ in 0..horizon {
        buf.push(buf[buf.len() - period]);
    }
    Ok(buf.split_off(history.len()))
}

/// `x_t = intercept + Σ coefficients[i] · x_{t-1-i}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Whether the design matrix was rank-deficient and a ridge term was used.
    pub ridge: bool,
}

impl ArFit {
    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    fn predict_next(&self, tail: &[f64]) -> f64 {
        let n = tail.len();
        self.intercept
            + self
                .coefficients
                .iter()
                .enumerate()
                .map(|(i, c)| c * tail[n - 1 - i])
                .sum::<f64>()
    }

    /// One-step-ahead residuals over `history`.
    pub fn residuals(&self, history: &[f64]) -> Vec<f64> {
        let p = self.order();
        (p..history.len())
            .map(|t| history[t] - self.predict_next(&history[..t]))
            .collect()
    }
}

pub const RIDGE_LAMBDA: f64 = 1e-6;

/// Ordinary least squares AR(`order`) fit with intercept.
pub fn ar_ls_fit(history: &[f64], order: usize) -> Result<ArFit> {
    if order == 0 {
        return Err(Error::Domain("AR order must be positive".into()));
    }
    if history.len() < 2 * order + 1 {
        return Err(Error::Domain(format!(
            "AR({order}) needs {} weeks of history, got {}",
            2 * order + 1,
            history.len()
        )));
    }
    let rows = history.len() - order;
    let x = DMatrix::from_fn(rows, order + 1, |r, c| {
        let t = r + order;
        if c == 0 {
            1.0
        } else {
            history[t - c]
        }
    });
    let y = DVector::from_iterator(rows, history[order..].iter().copied());

    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * (rows.max(order + 1) as f64) * f64::EPSILON;
    let full_rank = smax > 0.0 && svd.singular_values.iter().all(|&s| s > tol);
    let (beta, ridge) = if full_rank {
        (svd.solve(&y, tol).map_err(|e| Error::Domain(e.to_string()))?, false)
    } else {
        let xt = x.transpose();
        let a = &xt * &x + DMatrix::identity(order + 1, order + 1) * RIDGE_LAMBDA;
        let b = &xt * &y;
        let beta = a
            .cholesky()
            .ok_or_else(|| Error::Domain("ridge system is not positive definite".into()))?
            .solve(&b);
        (beta, true)
    };
    Ok(ArFit {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        ridge,
    })
}

/// Recursive multi-step forecast continuing `history`.
pub fn ar_ls_forecast(fit: &ArFit, history: &[f64], horizon: usize) -> Result<Vec<f64>> {
    if history.len() < fit.order() {
        return Err(Error::Domain(format!(
            "AR({}) forecast needs {} weeks of history, got {}",
            fit.order(),
            fit.order(),
            history.len()
        )));
    }
    let mut buf = history[history.len() - fit.order()..].to_vec();
    for _ in 0..horizon {
        let next = fit.predict_next(&buf);
        buf.push(next);
    }
    Ok(buf.split_off(fit.order()))
}
