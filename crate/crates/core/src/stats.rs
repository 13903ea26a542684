//! Classification-accuracy test statistics.
//!
//! * In-sample: train on every row, report the fraction classified correctly.
//! * Out-of-sample: hold out `kappa` treated and `kappa` control rows, train on
//!   the remaining `n - 2*kappa`, score the held-out rows, and average over
//!   partitions. The average over all within-group row orders reduces to an
//!   average over held-out subsets because every classifier here is invariant
//!   to training-row order; each subset pair occurs equally often.
//!
//! Statistics are computed from integer correct-counts divided once, so equal
//! values compare exactly.

use itertools::Itertools;
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{train, ClassifierSpec};
use crate::dataset::Dataset;
use crate::error::{CptError, Result};
use crate::rng;

pub const DEFAULT_PARTITIONS: usize = 30;
/// Exact partition enumeration is only offered when both groups are this small.
pub const EXACT_GROUP_LIMIT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Partitions {
    Sampled(usize),
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StatSpec {
    InSample,
    OutOfSample {
        /// `None` picks `floor(min(l, m) / 5)` clamped to `[1, min(l, m) - 1]`.
        kappa: Option<usize>,
        partitions: Partitions,
    },
}

impl Default for StatSpec {
    fn default() -> Self {
        StatSpec::InSample
    }
}

impl StatSpec {
    pub fn out_of_sample(kappa: Option<usize>, partitions: usize) -> Self {
        StatSpec::OutOfSample {
            kappa,
            partitions: Partitions::Sampled(partitions),
        }
    }

    pub fn label(&self) -> String {
        match self {
            StatSpec::InSample => "in".into(),
            StatSpec::OutOfSample { kappa, partitions } => {
                let k = kappa.map_or("auto".to_string(), |k| k.to_string());
                let r = match partitions {
                    Partitions::Sampled(r) => r.to_string(),
                    Partitions::Exact => "exact".into(),
                };
                format!("out(kappa={k},partitions={r})")
            }
        }
    }

    /// Checks the statistic against group sizes `l` (treated) and `m` (control).
    pub fn validate(&self, l: usize, m: usize) -> Result<()> {
        if let StatSpec::OutOfSample { kappa, partitions } = *self {
            resolve_kappa(kappa, l, m)?;
            match partitions {
                Partitions::Sampled(0) => return Err(CptError::InvalidStat("partitions must be >= 1".into())),
                Partitions::Exact if l > EXACT_GROUP_LIMIT || m > EXACT_GROUP_LIMIT => {
                    return Err(CptError::InvalidStat(format!(
                        "exact partitions need at most {EXACT_GROUP_LIMIT} units per group, got {l} treated and {m} control"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

pub fn default_kappa(l: usize, m: usize) -> usize {
    let small = l.min(m);
    (small / 5).clamp(1, small.saturating_sub(1).max(1))
}

pub fn resolve_kappa(kappa: Option<usize>, l: usize, m: usize) -> Result<usize> {
    let k = kappa.unwrap_or_else(|| default_kappa(l, m));
    if k < 1 || k >= l.min(m) {
        return Err(CptError::InvalidStat(format!(
            "kappa must satisfy 1 <= kappa < min(l, m) = {}, got {k}",
            l.min(m)
        )));
    }
    Ok(k)
}

/// Statistic for features `x` and labels `y`. `seed` feeds randomized
/// classifiers and the Monte Carlo partition draws.
pub fn accuracy(classifier: &ClassifierSpec, x: &DMatrix<f64>, y: &[u8], stat: &StatSpec, seed: u64) -> Result<f64> {
    match *stat {
        StatSpec::InSample => in_sample(classifier, x, y, seed),
        StatSpec::OutOfSample { kappa, partitions } => {
            let treated: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 1).collect();
            let control: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 0).collect();
            stat.validate(treated.len(), control.len())?;
            let kappa = resolve_kappa(kappa, treated.len(), control.len())?;
            match partitions {
                Partitions::Sampled(r) => {
                    let correct = (0..r)
                        .into_par_iter()
                        .map(|part| {
                            let mut rng = rng::stream(seed, &[part as u64]);
                            let held_t = sample(&mut rng, treated.len(), kappa).into_iter().map(|i| treated[i]);
                            let held_c = sample(&mut rng, control.len(), kappa).into_iter().map(|i| control[i]);
                            let held: Vec<usize> = held_t.chain(held_c).collect();
                            let train_seed = rng::derive_seed(seed, &[part as u64, 1]);
                            holdout_correct(classifier, x, y, &held, train_seed)
                        })
                        .collect::<Result<Vec<usize>>>()?
                        .into_iter()
                        .sum::<usize>();
                    Ok(correct as f64 / (2 * kappa * r) as f64)
                }
                Partitions::Exact => {
                    let pairs: Vec<(Vec<usize>, Vec<usize>)> = treated
                        .iter()
                        .copied()
                        .combinations(kappa)
                        .cartesian_product(control.iter().copied().combinations(kappa).collect::<Vec<_>>())
                        .collect();
                    let total = pairs.len();
                    let correct = pairs
                        .into_par_iter()
                        .enumerate()
                        .map(|(part, (t, c))| {
                            let held: Vec<usize> = t.into_iter().chain(c).collect();
                            holdout_correct(classifier, x, y, &held, rng::derive_seed(seed, &[part as u64, 1]))
                        })
                        .collect::<Result<Vec<usize>>>()?
                        .into_iter()
                        .sum::<usize>();
                    Ok(correct as f64 / (2 * kappa * total) as f64)
                }
            }
        }
    }
}

fn in_sample(classifier: &ClassifierSpec, x: &DMatrix<f64>, y: &[u8], seed: u64) -> Result<f64> {
    let model = train(classifier, x, y, seed)?;
    let pred = model.classify_training(x)?;
    let correct = pred.iter().zip(y).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / y.len() as f64)
}

/// Number of held-out rows classified correctly after training on the rest.
fn holdout_correct(classifier: &ClassifierSpec, x: &DMatrix<f64>, y: &[u8], held: &[usize], seed: u64) -> Result<usize> {
    let mut is_held = vec![false; y.len()];
    for &i in held {
        is_held[i] = true;
    }
    let train_rows: Vec<usize> = (0..y.len()).filter(|&i| !is_held[i]).collect();
    let x_train = x.select_rows(&train_rows);
    let y_train: Vec<u8> = train_rows.iter().map(|&i| y[i]).collect();
    let model = train(classifier, &x_train, &y_train, seed)?;
    let pred = model.classify_rows(x, held.iter().copied())?;
    Ok(pred.iter().zip(held).filter(|(p, &i)| **p == y[i]).count())
}

fn dataset_features(classifier: &ClassifierSpec, d: &Dataset) -> DMatrix<f64> {
    classifier.features(d.covariates(), d.column_names()).values
}

/// In-sample classification accuracy on `d`.
pub fn stat_in_sample(classifier: &ClassifierSpec, d: &Dataset, seed: u64) -> Result<f64> {
    in_sample(classifier, &dataset_features(classifier, d), d.treatment(), seed)
}

/// Out-of-sample classification accuracy on `d`.
pub fn stat_out_sample(classifier: &ClassifierSpec, d: &Dataset, stat: &StatSpec, seed: u64) -> Result<f64> {
    if *stat == StatSpec::InSample {
        return Err(CptError::InvalidStat("expected an out-of-sample statistic".into()));
    }
    accuracy(classifier, &dataset_features(classifier, d), d.treatment(), stat, seed)
}
