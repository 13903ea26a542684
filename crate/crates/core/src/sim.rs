//! Monte Carlo power studies on equicorrelated normal data.
//!
//! Treated rows are drawn from `N(0, Sigma_rho)` with unit variances and all
//! off-diagonal entries `rho`; control rows from `N(0, I)`. The marginals are
//! identical in both groups, so only tests sensitive to the joint
//! distribution have power.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::ClassifierSpec;
use crate::dataset::{Dataset, DesignKind};
use crate::error::{CptError, Result};
use crate::rng;
use crate::suite::TestSpec;

/// Equicorrelation matrix with unit diagonal.
pub fn sigma_rho(rho: f64, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho })
}

/// Eigenvalues of `Sigma_rho` are `1 + (p - 1) rho` and `1 - rho`.
pub fn is_positive_definite(rho: f64, p: usize) -> bool {
    rho.is_finite() && (p <= 1 || (rho < 1.0 && 1.0 + (p as f64 - 1.0) * rho > 0.0))
}

/// `n_treated` rows from `N(0, Sigma_rho)` followed by `n_control` rows from
/// `N(0, I)`, columns named `x1..xp`.
pub fn gen_mvn_dataset(rho: f64, n_treated: usize, n_control: usize, p: usize, seed: u64) -> Result<Dataset> {
    if !is_positive_definite(rho, p) {
        return Err(CptError::NotPositiveDefinite { rho, p });
    }
    let chol = sigma_rho(rho, p)
        .cholesky()
        .ok_or(CptError::NotPositiveDefinite { rho, p })?;
    let l = chol.l();
    let n = n_treated + n_control;
    let mut rng = rng::stream(seed, &[]);
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let row = if i < n_treated { &l * z } else { z };
        for j in 0..p {
            x[(i, j)] = row[j];
        }
    }
    let treatment = (0..n).map(|i| u8::from(i < n_treated)).collect();
    Dataset::new(x, treatment, None, (1..=p).map(|j| format!("x{j}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_treated: usize,
    pub n_control: usize,
    pub p: usize,
    pub rho_grid: Vec<f64>,
    pub replications: usize,
    pub alpha_levels: Vec<f64>,
    #[serde(rename = "B")]
    pub permutations: usize,
    pub tests: Vec<TestSpec>,
    pub seed: u64,
}

impl SimulationConfig {
    fn default_tests() -> Vec<TestSpec> {
        vec![
            TestSpec::cpt(ClassifierSpec::logistic(DesignKind::TwoWay)),
            TestSpec::cpt(ClassifierSpec::logistic(DesignKind::MainEffects)),
            TestSpec::cpt(ClassifierSpec::forest_oob()),
            TestSpec::Energy,
        ]
    }

    /// Minutes-scale preset: 200 replications, B = 199, rho step 0.15.
    pub fn desk() -> Self {
        Self {
            n_treated: 100,
            n_control: 100,
            p: 3,
            rho_grid: (0..=5).map(|i| (i * 15) as f64 / 100.0).collect(),
            replications: 200,
            alpha_levels: vec![0.05, 0.01],
            permutations: 199,
            tests: Self::default_tests(),
            seed: 0,
        }
    }

    /// Full grid: 1000 replications, B = 500, rho from 0 to 0.75 in steps of 0.05.
    pub fn full() -> Self {
        Self {
            rho_grid: (0..=15).map(|i| (i * 5) as f64 / 100.0).collect(),
            replications: 1000,
            permutations: 500,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CptError::InvalidConfig(m));
        if self.replications < 1 {
            return bad("replications must be >= 1".into());
        }
        if self.p < 1 || self.n_treated < 1 || self.n_control < 1 {
            return bad("need p >= 1 and both groups nonempty".into());
        }
        if self.tests.is_empty() {
            return bad("no tests configured".into());
        }
        if self.rho_grid.is_empty() {
            return bad("empty rho grid".into());
        }
        if let Some(a) = self.alpha_levels.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return bad(format!("alpha {a} is not in (0, 1)"));
        }
        if let Some(&rho) = self.rho_grid.iter().find(|&&r| !is_positive_definite(r, self.p)) {
            return Err(CptError::NotPositiveDefinite { rho, p: self.p });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub test: String,
    pub rho: f64,
    pub alpha: f64,
    pub power: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerTable {
    pub rows: Vec<PowerRow>,
}

impl PowerTable {
    pub fn get(&self, test: &str, rho: f64, alpha: f64) -> Option<&PowerRow> {
        self.rows.iter().find(|r| r.test == test && r.rho == rho && r.alpha == alpha)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["test", "rho", "alpha", "power", "se"])?;
        for r in &self.rows {
            w.write_record([
                r.test.clone(),
                r.rho.to_string(),
                r.alpha.to_string(),
                r.power.to_string(),
                r.se.to_string(),
            ])?;
        }
        flush(w)
    }
}

fn flush<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|source| CptError::Io {
        path: "<writer>".into(),
        source,
    })
}

/// p-values of one test at one rho, indexed by replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueSeries {
    pub test: String,
    pub rho: f64,
    pub p_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerStudy {
    pub table: PowerTable,
    pub p_values: Vec<PValueSeries>,
}

impl PowerStudy {
    pub fn series(&self, test: &str, rho: f64) -> Option<&PValueSeries> {
        self.p_values.iter().find(|s| s.test == test && s.rho == rho)
    }

    pub fn write_pvalues_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["test", "rho", "replication", "p_value"])?;
        for s in &self.p_values {
            for (i, p) in s.p_values.iter().enumerate() {
                w.write_record([s.test.clone(), s.rho.to_string(), i.to_string(), p.to_string()])?;
            }
        }
        flush(w)
    }
}

pub fn standard_error(rate: f64, replications: usize) -> f64 {
    (rate * (1.0 - rate) / replications as f64).sqrt()
}

/// Runs every test on `replications` fresh datasets per rho. Dataset
/// `(rho index r, replication i)` uses stream `(seed, r, i)`; test `t` on it
/// uses `(seed, r, i, t)`.
pub fn run_power_study(cfg: &SimulationConfig) -> Result<PowerStudy> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> = (0..cfg.rho_grid.len())
        .flat_map(|r| (0..cfg.replications).map(move |i| (r, i)))
        .collect();
    let results: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|&(r, i)| {
            let rho = cfg.rho_grid[r];
            let at_cell = |e: CptError| CptError::AtCell {
                rho,
                replication: i,
                source: Box::new(e),
            };
            let data_seed = rng::derive_seed(cfg.seed, &[r as u64, i as u64]);
            let d = gen_mvn_dataset(rho, cfg.n_treated, cfg.n_control, cfg.p, data_seed).map_err(at_cell)?;
            cfg.tests
                .iter()
                .enumerate()
                .map(|(t, test)| {
                    let seed = rng::derive_seed(cfg.seed, &[r as u64, i as u64, t as u64]);
                    test.p_value(&d, cfg.permutations, seed).map_err(at_cell)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut table = PowerTable::default();
    let mut p_values = Vec::new();
    for (t, test) in cfg.tests.iter().enumerate() {
        let name = test.to_string();
        for (r, &rho) in cfg.rho_grid.iter().enumerate() {
            let series: Vec<f64> = (0..cfg.replications)
                .map(|i| results[r * cfg.replications + i][t])
                .collect();
            for &alpha in &cfg.alpha_levels {
                let power = series.iter().filter(|&&p| p <= alpha).count() as f64 / cfg.replications as f64;
                table.rows.push(PowerRow {
                    test: name.clone(),
                    rho,
                    alpha,
                    power,
                    se: standard_error(power, cfg.replications),
                });
            }
            p_values.push(PValueSeries {
                test: name.clone(),
                rho,
                p_values: series,
            });
        }
    }
    Ok(PowerStudy { table, p_values })
}

/// ROC curve from p-values under the null and under an alternative: for each
/// threshold `t` in the sorted union of p-values, the fractions of null and
/// alternative p-values `<= t`. Starts at (0, 0) and ends at (1, 1).
pub fn roc_points(null_pvalues: &[f64], alt_pvalues: &[f64]) -> Result<Vec<(f64, f64)>> {
    if null_pvalues.is_empty() || alt_pvalues.is_empty() {
        return Err(CptError::InvalidConfig("ROC needs nonempty null and alternative p-values".into()));
    }
    let mut null = null_pvalues.to_vec();
    let mut alt = alt_pvalues.to_vec();
    null.sort_by(f64::total_cmp);
    alt.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = null.iter().chain(&alt).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let frac = |sorted: &[f64], t: f64| sorted.partition_point(|&p| p <= t) as f64 / sorted.len() as f64;
    let mut points = vec![(0.0, 0.0)];
    points.extend(thresholds.iter().map(|&t| (frac(&null, t), frac(&alt, t))));
    if points.last() != Some(&(1.0, 1.0)) {
        points.push((1.0, 1.0));
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub test: String,
    /// Alternative the true-positive rates were measured under.
    pub rho: f64,
    pub points: Vec<(f64, f64)>,
}

pub fn write_roc_csv<W: Write>(writer: W, curves: &[RocCurve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["test", "rho", "fpr", "tpr"])?;
    for c in curves {
        for (fpr, tpr) in &c.points {
            w.write_record([c.test.clone(), c.rho.to_string(), fpr.to_string(), tpr.to_string()])?;
        }
    }
    flush(w)
}
