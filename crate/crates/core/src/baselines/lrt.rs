//! Asymptotic likelihood-ratio test of a logistic model against the
//! intercept-only model.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::classifiers::logistic::{fit_logistic, loglik_at, IrlsOptions};
use crate::dataset::{expand_design, Dataset, DesignKind};
use crate::error::{CptError, Result};

/// Numerical floor standing in for an unpenalized fit.
pub const LRT_RIDGE: f64 = 1e-10;
/// Pivoted-QR diagonal entries below this fraction of the largest are
/// treated as collinear.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Design columns removed as collinear with the intercept or each other.
    pub dropped: usize,
    pub loglik_full: f64,
    pub loglik_null: f64,
}

/// Columns of `x` retained by a column-pivoted QR of the intercept-centered
/// design, in original order. Columns are visited in pivot order and kept
/// while their diagonal stays above the tolerance.
pub fn independent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let (n, q) = x.shape();
    if q == 0 {
        return Vec::new();
    }
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
    let qr = centered.col_piv_qr();
    let r = qr.r();
    let mut order = DMatrix::from_fn(1, q, |_, j| j as f64);
    qr.p().permute_columns(&mut order);
    let diag = r.nrows().min(q);
    let largest = (0..diag).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if largest == 0.0 {
        return Vec::new();
    }
    let mut kept: Vec<usize> = (0..diag)
        .take_while(|&i| r[(i, i)].abs() > RANK_TOL * largest)
        .map(|i| order[(0, i)] as usize)
        .collect();
    kept.sort_unstable();
    kept
}

pub fn lrt_logistic(d: &Dataset, design: DesignKind) -> Result<LrtResult> {
    let features = expand_design(d, design).values;
    lrt_on_features(&features, d.treatment())
}

pub fn lrt_on_features(features: &DMatrix<f64>, y: &[u8]) -> Result<LrtResult> {
    let kept = independent_columns(features);
    let dropped = features.ncols() - kept.len();
    let x = features.select_columns(&kept);
    let opts = IrlsOptions::with_ridge(LRT_RIDGE);

    let null_x = DMatrix::zeros(y.len(), 0);
    let null_fit = fit_logistic(&null_x, y, opts)?;
    let full_fit = fit_logistic(&x, y, opts)?;
    for fit in [&null_fit, &full_fit] {
        if !fit.converged {
            return Err(CptError::IrlsNotConverged {
                iterations: fit.iterations,
            });
        }
    }
    let loglik_null = loglik_at(&null_x, y, &null_fit.weights);
    let loglik_full = loglik_at(&x, y, &full_fit.weights);
    let statistic = 2.0 * (loglik_full - loglik_null);
    let df = kept.len();
    let p_value = if df == 0 {
        1.0
    } else {
        let chi = ChiSquared::new(df as f64).map_err(|e| CptError::InvalidConfig(e.to_string()))?;
        chi.sf(statistic.max(0.0))
    };
    Ok(LrtResult {
        statistic,
        df,
        p_value,
        dropped,
        loglik_full,
        loglik_null,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize, cols: impl Fn(usize, usize) -> f64, p: usize) -> Dataset {
        Dataset::new(
            DMatrix::from_fn(n, p, cols),
            (0..n).map(|i| u8::from((i * 7) % 5 < 2)).collect(),
            None,
            (0..p).map(|j| format!("x{j}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_column_is_dropped() {
        let d = data(40, |i, j| if j == 1 { 0.0 } else { ((i * 13 + j * 5) % 17) as f64 / 17.0 }, 3);
        let r = lrt_logistic(&d, DesignKind::MainEffects).unwrap();
        assert_eq!(r.dropped, 1);
        assert_eq!(r.df, 2);
        assert!(r.statistic >= -1e-6);
        assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn duplicate_column_is_dropped() {
        let d = data(40, |i, j| ((i * 13 + (j % 2) * 5) % 17) as f64, 3);
        // Columns 0 and 2 coincide.
        let kept = independent_columns(d.covariates());
        assert_eq!(kept.len(), 2);
        assert!(kept.contains(&1));
    }

    #[test]
    fn constant_column_is_collinear_with_intercept() {
        let d = data(30, |i, j| if j == 0 { 3.5 } else { (i % 7) as f64 }, 2);
        assert_eq!(independent_columns(d.covariates()), vec![1]);
    }
}
