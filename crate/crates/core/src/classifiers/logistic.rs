//! Ridge-penalized logistic regression fitted by IRLS (Newton-Raphson on the
//! penalized log-likelihood, with step halving).
//!
//! The intercept is always the first coefficient and is never penalized. The
//! objective is `loglik(w) - ridge * ||w[1..]||^2`.

use nalgebra::{DMatrix, DVector};

use crate::error::{CptError, Result};

pub const DEFAULT_MAX_ITER: usize = 50;
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default ridge per observation; the effective penalty is `RIDGE_PER_ROW * n`.
pub const RIDGE_PER_ROW: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    pub ridge: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl IrlsOptions {
    pub fn with_ridge(ridge: f64) -> Self {
        Self {
            ridge,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// Intercept followed by one weight per feature column.
    pub weights: DVector<f64>,
    pub ridge: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticFit {
    pub fn intercept(&self) -> f64 {
        self.weights[0]
    }

    pub fn linear_predictor(&self, row: impl Iterator<Item = f64>) -> f64 {
        self.weights[0]
            + self
                .weights
                .iter()
                .skip(1)
                .zip(row)
                .map(|(w, x)| w * x)
                .sum::<f64>()
    }

    /// 1 iff the fitted probability is strictly above 0.5.
    pub fn classify_eta(eta: f64) -> u8 {
        u8::from(eta > 0.0)
    }
}

#[inline]
fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = DMatrix::from_element(n, x.ncols() + 1, 1.0);
    out.columns_mut(1, x.ncols()).copy_from(x);
    out
}

fn eta(x1: &DMatrix<f64>, w: &DVector<f64>) -> DVector<f64> {
    x1 * w
}

/// Unpenalized Bernoulli log-likelihood at `w` (intercept first).
pub fn loglik_at(x: &DMatrix<f64>, y: &[u8], w: &DVector<f64>) -> f64 {
    let x1 = with_intercept(x);
    loglik_eta(&eta(&x1, w), y)
}

fn loglik_eta(eta: &DVector<f64>, y: &[u8]) -> f64 {
    eta.iter()
        .zip(y)
        .map(|(&e, &t)| if t == 1 { -softplus(-e) } else { -softplus(e) })
        .sum()
}

fn penalty(w: &DVector<f64>, ridge: f64) -> f64 {
    ridge * w.iter().skip(1).map(|v| v * v).sum::<f64>()
}

pub fn penalized_loglik(x: &DMatrix<f64>, y: &[u8], w: &DVector<f64>, ridge: f64) -> f64 {
    loglik_at(x, y, w) - penalty(w, ridge)
}

/// Analytic gradient of [`penalized_loglik`].
pub fn penalized_score(x: &DMatrix<f64>, y: &[u8], w: &DVector<f64>, ridge: f64) -> DVector<f64> {
    let x1 = with_intercept(x);
    score(&x1, y, &eta(&x1, w), w, ridge)
}

fn score(x1: &DMatrix<f64>, y: &[u8], eta: &DVector<f64>, w: &DVector<f64>, ridge: f64) -> DVector<f64> {
    let resid = DVector::from_iterator(
        y.len(),
        eta.iter().zip(y).map(|(&e, &t)| f64::from(t) - sigmoid(e)),
    );
    let mut g = x1.tr_mul(&resid);
    for j in 1..g.len() {
        g[j] -= 2.0 * ridge * w[j];
    }
    g
}

pub fn fit_logistic(x: &DMatrix<f64>, y: &[u8], opts: IrlsOptions) -> Result<LogisticFit> {
    if x.nrows() != y.len() {
        return Err(CptError::DimensionMismatch {
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    if !(opts.ridge >= 0.0 && opts.ridge.is_finite()) {
        return Err(CptError::InvalidClassifier(format!("ridge must be >= 0, got {}", opts.ridge)));
    }
    let x1 = with_intercept(x);
    let q = x1.ncols();
    let mut w = DVector::zeros(q);
    let mut eta_w = eta(&x1, &w);
    let mut objective = loglik_eta(&eta_w, y) - penalty(&w, opts.ridge);

    for iteration in 1..=opts.max_iter {
        let g = score(&x1, y, &eta_w, &w, opts.ridge);
        let weights = eta_w.map(|e| {
            let p = sigmoid(e);
            p * (1.0 - p)
        });
        let mut xw = x1.clone();
        for mut col in xw.column_iter_mut() {
            col.component_mul_assign(&weights);
        }
        let mut h = x1.tr_mul(&xw);
        for j in 1..q {
            h[(j, j)] += 2.0 * opts.ridge;
        }
        let step = match h.clone().cholesky() {
            Some(chol) => chol.solve(&g),
            None => match h.lu().solve(&g) {
                Some(step) => step,
                // Fitted probabilities have saturated (e.g. a single class);
                // the optimum is at infinity and predictions no longer change.
                None if iteration > 1 => {
                    return Ok(LogisticFit {
                        weights: w,
                        ridge: opts.ridge,
                        iterations: iteration - 1,
                        converged: false,
                    })
                }
                None => return Err(CptError::SingularHessian { iteration }),
            },
        };
        if step.iter().any(|v| !v.is_finite()) {
            return Err(CptError::IrlsDiverged { iteration });
        }

        // Newton direction is an ascent direction; halve until the objective
        // does not decrease.
        let mut scale = 1.0;
        let (mut w_new, mut eta_new, mut obj_new);
        loop {
            w_new = &w + &step * scale;
            eta_new = eta(&x1, &w_new);
            obj_new = loglik_eta(&eta_new, y) - penalty(&w_new, opts.ridge);
            if obj_new >= objective - 1e-12 * objective.abs().max(1.0) || scale < 1e-6 {
                break;
            }
            scale *= 0.5;
        }
        if w_new.iter().any(|v| !v.is_finite()) {
            return Err(CptError::IrlsDiverged { iteration });
        }
        let max_delta = (&w_new - &w).amax();
        w = w_new;
        eta_w = eta_new;
        objective = obj_new;
        if max_delta < opts.tol {
            return Ok(LogisticFit {
                weights: w,
                ridge: opts.ridge,
                iterations: iteration,
                converged: true,
            });
        }
    }
    Ok(LogisticFit {
        weights: w,
        ridge: opts.ridge,
        iterations: opts.max_iter,
        converged: false,
    })
}
