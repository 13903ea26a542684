//! Two-sample energy statistic calibrated by permutation.
//!
//! ```text
//! E = (l m / n) * [ 2/(l m) sum_ij |X_i - Y_j| - 1/l^2 sum_ij |X_i - X_j| - 1/m^2 sum_ij |Y_i - Y_j| ]
//! ```

use nalgebra::DMatrix;
use serde_json::json;

use crate::dataset::Dataset;
use crate::error::{CptError, Result};
use crate::perm::{permutation_test, PermutationPlan, Statistic, TestResult};

#[derive(Debug, Clone)]
pub struct EnergyStatistic {
    n: usize,
    /// Upper-triangular pairwise Euclidean distances, row-major `i < j`.
    dist: Vec<f64>,
    scale: f64,
}

impl EnergyStatistic {
    pub fn new(x: &DMatrix<f64>) -> Self {
        let n = x.nrows();
        let mut dist = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                let d2: f64 = (0..x.ncols()).map(|k| (x[(i, k)] - x[(j, k)]).powi(2)).sum();
                dist.push(d2.sqrt());
            }
        }
        let scale = if dist.is_empty() {
            1.0
        } else {
            (dist.iter().sum::<f64>() / dist.len() as f64).max(f64::MIN_POSITIVE)
        };
        Self { n, dist, scale }
    }

    pub fn value(&self, labels: &[u8]) -> Result<f64> {
        if labels.len() != self.n {
            return Err(CptError::DimensionMismatch {
                expected: self.n,
                actual: labels.len(),
            });
        }
        let l = labels.iter().filter(|&&t| t == 1).count();
        let m = self.n - l;
        if l == 0 || m == 0 {
            return Err(CptError::DegenerateTreatment("energy statistic needs both groups".into()));
        }
        // Unordered-pair sums.
        let (mut between, mut within_x, mut within_y) = (0.0, 0.0, 0.0);
        let mut k = 0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let d = self.dist[k];
                k += 1;
                match (labels[i], labels[j]) {
                    (1, 1) => within_x += d,
                    (0, 0) => within_y += d,
                    _ => between += d,
                }
            }
        }
        let (lf, mf, nf) = (l as f64, m as f64, self.n as f64);
        let e = (lf * mf / nf) * (2.0 * between / (lf * mf) - 2.0 * within_x / (lf * lf) - 2.0 * within_y / (mf * mf));
        // Rounding can leave a tiny negative (or positive) residue where the
        // terms cancel exactly.
        Ok(if e.abs() < 1e-12 * self.scale { 0.0 } else { e.max(0.0) })
    }
}

impl Statistic for EnergyStatistic {
    fn evaluate(&self, labels: &[u8], _seed: u64) -> Result<f64> {
        self.value(labels)
    }

    fn name(&self) -> String {
        "energy".into()
    }
}

pub fn energy_statistic(d: &Dataset) -> Result<f64> {
    EnergyStatistic::new(d.covariates()).value(d.treatment())
}

/// Energy test with `permutations` conservative-tie permutation draws.
pub fn energy_test(d: &Dataset, permutations: usize, seed: u64) -> Result<TestResult> {
    if d.n() < 4 {
        return Err(CptError::InvalidDataset(format!("energy test needs n >= 4, got {}", d.n())));
    }
    let plan = PermutationPlan::new(permutations, seed);
    let echo = json!({
        "test": "energy",
        "plan": plan,
        "n": d.n(),
        "p": d.p(),
        "treated": d.treated_count(),
        "control": d.control_count(),
    });
    let groups = d.block_groups();
    permutation_test(&EnergyStatistic::new(d.covariates()), d.treatment(), groups.as_deref(), &plan, echo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_multisets_give_zero() {
        let rows = [0.3, -1.2, 2.5, 0.7];
        let mut values = rows.to_vec();
        values.extend_from_slice(&rows);
        let x = DMatrix::from_column_slice(8, 1, &values);
        let s = EnergyStatistic::new(&x);
        assert_eq!(s.value(&[1, 1, 1, 1, 0, 0, 0, 0]).unwrap(), 0.0);
        let d = Dataset::new(x, vec![1, 1, 1, 1, 0, 0, 0, 0], None, vec!["x".into()]).unwrap();
        assert_eq!(energy_test(&d, 99, 1).unwrap().p_value, 1.0);
    }

    #[test]
    fn point_masses_grow_linearly() {
        let labels = [1, 1, 1, 0, 0];
        let at = |c: f64| {
            let x = DMatrix::from_column_slice(5, 1, &[0.0, 0.0, 0.0, c, c]);
            EnergyStatistic::new(&x).value(&labels).unwrap()
        };
        // (l m / n) * 2c with l = 3, m = 2.
        for c in [0.5, 1.0, 2.0, 7.0] {
            approx::assert_relative_eq!(at(c), 2.4 * c, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_single_group() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
        assert!(EnergyStatistic::new(&x).value(&[1, 1, 1]).is_err());
    }
}
