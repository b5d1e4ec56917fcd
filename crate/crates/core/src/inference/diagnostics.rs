//! Residual normality check for a fitted model.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::LmmFit;
use crate::error::{Error, Result};
use crate::num::{total_cmp, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqRow<T> {
    pub rank: usize,
    pub theoretical: T,
    pub sample: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqTable<T> {
    pub rows: Vec<QqRow<T>>,
    /// Kolmogorov–Smirnov distance of the standardized residuals from N(0, 1).
    pub ks_statistic: T,
}

/// Sorted standardized residuals against normal quantiles at `(i - 0.5) / n`.
pub fn residual_diagnostics<T: Real>(fit: &LmmFit<T>) -> Result<QqTable<T>> {
    let n = fit.residuals.len();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, found: n });
    }
    let nf = T::from_count(n);
    let mean = fit.residuals.iter().copied().sum::<T>() / nf;
    let var = fit
        .residuals
        .iter()
        .map(|r| (*r - mean) * (*r - mean))
        .sum::<T>()
        / T::from_count(n - 1);
    let sd = var.sqrt();
    let mut z: Vec<T> = fit
        .residuals
        .iter()
        .map(|r| if sd > T::zero() { (*r - mean) / sd } else { T::zero() })
        .collect();
    z.sort_by(total_cmp);

    let normal = Normal::standard();
    let mut ks = 0.0f64;
    let rows = z
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let cdf = normal.cdf(s.as_f64());
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            ks = ks.max((cdf - lo).abs()).max((hi - cdf).abs());
            QqRow {
                rank: i + 1,
                theoretical: T::lit(normal.inverse_cdf((i as f64 + 0.5) / n as f64)),
                sample: s,
            }
        })
        .collect();
    Ok(QqTable {
        rows,
        ks_statistic: T::lit(ks),
    })
}
