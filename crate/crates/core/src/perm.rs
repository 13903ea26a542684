//! Permutation inference: Monte Carlo and exact permutation p-values,
//! within-block shuffling, randomized tie-breaking and null-distribution
//! reports.
//!
//! Orientation: large statistics are evidence against the null, so the
//! p-value counts null draws at least as large as the observed value. The
//! observed labelling is counted as one draw (the identity permutation):
//!
//! ```text
//! p = (1 + #{b : S*_b >= S}) / (B + 1)
//! ```
//!
//! Draw `b` (with `b = 0` the observed labelling) uses the random stream
//! `(master_seed, b)` for its label shuffle, its classifier seed and its
//! tie-breaking uniform, so results do not depend on the worker count.

use std::io::Write;
use std::time::{Duration, Instant};

use itertools::Itertools;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::classifiers::ClassifierSpec;
use crate::dataset::{validate_labels, Dataset};
use crate::error::{CptError, Result};
use crate::rng::{self, StreamRng};
use crate::stats::{accuracy, StatSpec};

pub const MIN_PERMUTATIONS: usize = 19;
/// Largest number of assignments [`exact_test`] will enumerate.
pub const EXACT_LIMIT: u128 = 50_000;
/// Relative tolerance under which two statistic values count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// A test statistic recomputable under relabelled treatment.
pub trait Statistic: Sync {
    fn evaluate(&self, labels: &[u8], seed: u64) -> Result<f64>;

    /// True when `evaluate` consumes its seed.
    fn is_randomized(&self) -> bool {
        false
    }

    fn name(&self) -> String;
}

/// Classification accuracy of a classifier retrained on every relabelling.
#[derive(Debug, Clone)]
pub struct CptStatistic {
    features: DMatrix<f64>,
    classifier: ClassifierSpec,
    stat: StatSpec,
}

impl CptStatistic {
    pub fn new(d: &Dataset, classifier: &ClassifierSpec, stat: &StatSpec) -> Result<Self> {
        classifier.validate()?;
        stat.validate(d.treated_count(), d.control_count())?;
        Ok(Self {
            features: classifier.features(d.covariates(), d.column_names()).values,
            classifier: classifier.clone(),
            stat: *stat,
        })
    }
}

impl Statistic for CptStatistic {
    fn evaluate(&self, labels: &[u8], seed: u64) -> Result<f64> {
        accuracy(&self.classifier, &self.features, labels, &self.stat, seed)
    }

    fn is_randomized(&self) -> bool {
        self.classifier.is_randomized()
            || matches!(
                self.stat,
                StatSpec::OutOfSample {
                    partitions: crate::stats::Partitions::Sampled(_),
                    ..
                }
            )
    }

    fn name(&self) -> String {
        format!("cpt-{}", self.classifier)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PermuteMode {
    Across,
    Within,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    Conservative,
    Randomized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub mode: PermuteMode,
    #[serde(rename = "B")]
    pub permutations: usize,
    pub master_seed: u64,
    pub tie_break: TieBreak,
}

impl PermutationPlan {
    pub fn new(permutations: usize, master_seed: u64) -> Self {
        Self {
            mode: PermuteMode::Across,
            permutations,
            master_seed,
            tie_break: TieBreak::Conservative,
        }
    }

    pub fn within_blocks(mut self) -> Self {
        self.mode = PermuteMode::Within;
        self
    }

    pub fn randomized_ties(mut self) -> Self {
        self.tie_break = TieBreak::Randomized;
        self
    }

    pub fn validate(&self, has_blocks: bool) -> Result<()> {
        if self.permutations < MIN_PERMUTATIONS {
            return Err(CptError::InvalidPlan(format!(
                "B must be >= {MIN_PERMUTATIONS}, got {}",
                self.permutations
            )));
        }
        if self.mode == PermuteMode::Within && !has_blocks {
            return Err(CptError::InvalidPlan("within-block permutation requires block labels".into()));
        }
        Ok(())
    }
}

/// Observed statistic, null draws and permutation p-value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestResult {
    pub observed: f64,
    pub null_draws: Vec<f64>,
    pub p_value: f64,
    pub spec_echo: serde_json::Value,
    /// Wall-clock time; kept out of the JSON so outputs are reproducible.
    #[serde(skip)]
    pub elapsed: Duration,
    pub seed: u64,
}

/// Equality ignores `elapsed`.
impl PartialEq for TestResult {
    fn eq(&self, other: &Self) -> bool {
        self.observed == other.observed
            && self.null_draws == other.null_draws
            && self.p_value == other.p_value
            && self.spec_echo == other.spec_echo
            && self.seed == other.seed
    }
}

/// Uniform random relabelling preserving the number of treated units, and in
/// within-block mode the number treated inside each block.
pub fn shuffle_labels(
    labels: &[u8],
    blocks: Option<&[Vec<usize>]>,
    mode: PermuteMode,
    rng: &mut StreamRng,
) -> Result<Vec<u8>> {
    let mut out = labels.to_vec();
    match mode {
        PermuteMode::Across => out.shuffle(rng),
        PermuteMode::Within => {
            let groups = blocks.ok_or_else(|| {
                CptError::InvalidPlan("within-block permutation requires block labels".into())
            })?;
            let mut buf = Vec::new();
            for group in groups {
                buf.clear();
                buf.extend(group.iter().map(|&i| labels[i]));
                buf.shuffle(rng);
                for (&i, &v) in group.iter().zip(&buf) {
                    out[i] = v;
                }
            }
        }
    }
    Ok(out)
}

fn tie_scale(observed: f64) -> f64 {
    TIE_TOLERANCE * observed.abs().max(1.0)
}

/// `(1 + #{draw >= observed}) / (B + 1)`, ties counted against rejection.
pub fn conservative_p_value(observed: f64, draws: &[f64]) -> f64 {
    let tol = tie_scale(observed);
    let count = draws.iter().filter(|&&d| d >= observed - tol).count();
    (1 + count) as f64 / (draws.len() + 1) as f64
}

/// Ranks `(value, uniform)` pairs lexicographically so ties are broken by
/// independent uniforms: `(1 + #{(S*_b, U_b) > (S, U_0)}) / (B + 1)`.
pub fn randomized_p_value(observed: f64, observed_uniform: f64, draws: &[f64], uniforms: &[f64]) -> f64 {
    let tol = tie_scale(observed);
    let count = draws
        .iter()
        .zip(uniforms)
        .filter(|(&d, &u)| d > observed + tol || ((d - observed).abs() <= tol && u > observed_uniform))
        .count();
    (1 + count) as f64 / (draws.len() + 1) as f64
}

/// Monte Carlo permutation test of an arbitrary statistic.
pub fn permutation_test(
    stat: &dyn Statistic,
    labels: &[u8],
    blocks: Option<&[Vec<usize>]>,
    plan: &PermutationPlan,
    spec_echo: serde_json::Value,
) -> Result<TestResult> {
    let start = Instant::now();
    validate_labels(labels)?;
    plan.validate(blocks.is_some())?;
    let draws: Vec<(f64, f64)> = (0..=plan.permutations)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(plan.master_seed, &[b as u64]);
            let relabelled;
            let y = if b == 0 {
                labels
            } else {
                relabelled = shuffle_labels(labels, blocks, plan.mode, &mut rng)?;
                &relabelled
            };
            let stat_seed: u64 = rng.random();
            let uniform: f64 = rng.random();
            let value = stat.evaluate(y, stat_seed).map_err(|e| e.at_permutation(b))?;
            Ok((value, uniform))
        })
        .collect::<Result<_>>()?;

    let observed = draws[0].0;
    let null_draws: Vec<f64> = draws[1..].iter().map(|d| d.0).collect();
    let p_value = match plan.tie_break {
        TieBreak::Conservative => conservative_p_value(observed, &null_draws),
        TieBreak::Randomized => {
            let uniforms: Vec<f64> = draws[1..].iter().map(|d| d.1).collect();
            randomized_p_value(observed, draws[0].1, &null_draws, &uniforms)
        }
    };
    Ok(TestResult {
        observed,
        null_draws,
        p_value,
        spec_echo,
        elapsed: start.elapsed(),
        seed: plan.master_seed,
    })
}

/// Classification permutation test on `d`.
pub fn run_cpt(d: &Dataset, classifier: &ClassifierSpec, stat: &StatSpec, plan: &PermutationPlan) -> Result<TestResult> {
    let statistic = CptStatistic::new(d, classifier, stat)?;
    let groups = d.block_groups();
    let echo = json!({
        "test": "cpt",
        "classifier": classifier,
        "classifier_name": classifier.to_string(),
        "stat": stat,
        "plan": plan,
        "n": d.n(),
        "p": d.p(),
        "treated": d.treated_count(),
        "control": d.control_count(),
    });
    permutation_test(&statistic, d.treatment(), groups.as_deref(), plan, echo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactResult {
    pub observed: f64,
    pub p_value: f64,
    pub assignments: usize,
}

pub fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

/// Exact permutation p-value: the fraction of all `C(n, l)` distinct
/// treatment assignments whose statistic is at least the observed one.
pub fn exact_test(stat: &dyn Statistic, labels: &[u8]) -> Result<ExactResult> {
    validate_labels(labels)?;
    if stat.is_randomized() {
        return Err(CptError::RandomizedClassifier(stat.name()));
    }
    let n = labels.len();
    let l = labels.iter().filter(|&&t| t == 1).count();
    let count = binomial(n, l);
    if count > EXACT_LIMIT {
        return Err(CptError::CombinatorialLimit {
            count,
            limit: EXACT_LIMIT,
        });
    }
    let observed = stat.evaluate(labels, 0)?;
    let assignments: Vec<Vec<usize>> = (0..n).combinations(l).collect();
    let values = assignments
        .par_iter()
        .enumerate()
        .map(|(idx, treated)| {
            let mut y = vec![0u8; n];
            for &i in treated {
                y[i] = 1;
            }
            stat.evaluate(&y, 0).map_err(|e| e.at_permutation(idx))
        })
        .collect::<Result<Vec<f64>>>()?;
    let tol = tie_scale(observed);
    let hits = values.iter().filter(|&&v| v >= observed - tol).count();
    Ok(ExactResult {
        observed,
        p_value: hits as f64 / values.len() as f64,
        assignments: values.len(),
    })
}

/// Exact CPT p-value; deterministic classifiers only.
pub fn exact_cpt(d: &Dataset, classifier: &ClassifierSpec, stat: &StatSpec) -> Result<f64> {
    exact_cpt_result(d, classifier, stat).map(|r| r.p_value)
}

pub fn exact_cpt_result(d: &Dataset, classifier: &ClassifierSpec, stat: &StatSpec) -> Result<ExactResult> {
    if classifier.is_randomized() {
        return Err(CptError::RandomizedClassifier(classifier.to_string()));
    }
    let statistic = CptStatistic::new(d, classifier, stat)?;
    exact_test(&statistic, d.treatment())
}

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

/// Fixed-width histogram of null draws over a range that also covers the
/// observed statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NullHistogram {
    pub bins: Vec<HistogramBin>,
    pub observed: f64,
    pub observed_bin: usize,
}

impl NullHistogram {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin_low", "bin_high", "count", "observed"])?;
        for (i, b) in self.bins.iter().enumerate() {
            w.write_record([
                b.low.to_string(),
                b.high.to_string(),
                b.count.to_string(),
                u8::from(i == self.observed_bin).to_string(),
            ])?;
        }
        w.flush().map_err(|source| CptError::Io {
            path: "<writer>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn last_occupied_bin(&self) -> Option<usize> {
        self.bins.iter().rposition(|b| b.count > 0)
    }
}

pub fn null_distribution_report(r: &TestResult, bins: usize) -> NullHistogram {
    let bins = bins.max(1);
    let (lo, hi) = r
        .null_draws
        .iter()
        .fold((r.observed, r.observed), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi <= lo {
        return NullHistogram {
            bins: vec![HistogramBin {
                low: lo,
                high: hi,
                count: r.null_draws.len(),
            }],
            observed: r.observed,
            observed_bin: 0,
        };
    }
    let width = (hi - lo) / bins as f64;
    let index = |v: f64| (((v - lo) / width).floor() as usize).min(bins - 1);
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            low: lo + width * i as f64,
            high: if i + 1 == bins { hi } else { lo + width * (i + 1) as f64 },
            count: 0,
        })
        .collect();
    for &v in &r.null_draws {
        out[index(v)].count += 1;
    }
    NullHistogram {
        bins: out,
        observed: r.observed,
        observed_bin: index(r.observed),
    }
}
