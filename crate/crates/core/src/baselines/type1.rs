//! Type-I error studies: run a test repeatedly on data where the null holds
//! and report empirical rejection rates.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{CptError, Result};
use crate::rng;
use crate::sim::{gen_mvn_dataset, standard_error};
use crate::suite::TestSpec;

#[derive(Debug, Clone)]
pub enum NullGenerator {
    /// Fresh `N(0, I)` covariates for both groups.
    Mvn {
        n_treated: usize,
        n_control: usize,
        p: usize,
    },
    /// Fixed covariates with the treatment vector shuffled at random.
    Permute(Dataset),
}

impl NullGenerator {
    pub fn draw(&self, seed: u64) -> Result<Dataset> {
        match self {
            NullGenerator::Mvn { n_treated, n_control, p } => gen_mvn_dataset(0.0, *n_treated, *n_control, *p, seed),
            NullGenerator::Permute(d) => {
                let mut t = d.treatment().to_vec();
                t.shuffle(&mut rng::stream(seed, &[]));
                d.with_treatment(t)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Type1StudyConfig {
    pub generator: NullGenerator,
    pub test: TestSpec,
    /// Permutation draws for permutation-based tests.
    pub permutations: usize,
    pub replications: usize,
    pub alpha_grid: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Type1Row {
    pub alpha: f64,
    pub rejection_rate: f64,
    pub se: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Type1Table {
    pub test: String,
    pub rows: Vec<Type1Row>,
    pub p_values: Vec<f64>,
}

impl Type1Table {
    pub fn rate_at(&self, alpha: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.alpha == alpha).map(|r| r.rejection_rate)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["alpha", "rejection_rate", "se", "replications"])?;
        for r in &self.rows {
            w.write_record([
                r.alpha.to_string(),
                r.rejection_rate.to_string(),
                r.se.to_string(),
                r.replications.to_string(),
            ])?;
        }
        w.flush().map_err(|source| CptError::Io {
            path: "<writer>".into(),
            source,
        })
    }

    /// p-value histogram on `[0, 1]` with `bins` equal-width bins, for
    /// comparison against the uniform density.
    pub fn write_histogram_csv<W: Write>(&self, writer: W, bins: usize) -> Result<()> {
        let bins = bins.max(1);
        let mut counts = vec![0usize; bins];
        for &p in &self.p_values {
            counts[((p * bins as f64) as usize).min(bins - 1)] += 1;
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin_low", "bin_high", "count"])?;
        for (i, c) in counts.iter().enumerate() {
            w.write_record([
                (i as f64 / bins as f64).to_string(),
                ((i + 1) as f64 / bins as f64).to_string(),
                c.to_string(),
            ])?;
        }
        w.flush().map_err(|source| CptError::Io {
            path: "<writer>".into(),
            source,
        })
    }
}

pub fn run_type1_study(cfg: &Type1StudyConfig) -> Result<Type1Table> {
    if cfg.replications == 0 {
        return Err(CptError::InvalidConfig("replications must be >= 1".into()));
    }
    if let Some(a) = cfg.alpha_grid.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(CptError::InvalidConfig(format!("alpha {a} is not in (0, 1)")));
    }
    let p_values: Vec<f64> = (0..cfg.replications)
        .into_par_iter()
        .map(|i| {
            let wrap = |e| CptError::AtReplication {
                index: i,
                source: Box::new(e),
            };
            let d = cfg.generator.draw(rng::derive_seed(cfg.seed, &[i as u64, 0])).map_err(wrap)?;
            cfg.test
                .p_value(&d, cfg.permutations, rng::derive_seed(cfg.seed, &[i as u64, 1]))
                .map_err(wrap)
        })
        .collect::<Result<_>>()?;
    let rows = cfg
        .alpha_grid
        .iter()
        .map(|&alpha| {
            let rate = p_values.iter().filter(|&&p| p <= alpha).count() as f64 / cfg.replications as f64;
            Type1Row {
                alpha,
                rejection_rate: rate,
                se: standard_error(rate, cfg.replications),
                replications: cfg.replications,
            }
        })
        .collect();
    Ok(Type1Table {
        test: cfg.test.to_string(),
        rows,
        p_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::ClassifierSpec;
    use crate::dataset::DesignKind;
    use crate::stats::StatSpec;

    #[test]
    fn exact_cpt_is_valid_on_tiny_samples() {
        let cfg = Type1StudyConfig {
            generator: NullGenerator::Mvn {
                n_treated: 4,
                n_control: 4,
                p: 2,
            },
            test: TestSpec::ExactCpt {
                classifier: ClassifierSpec::logistic(DesignKind::MainEffects),
                stat: StatSpec::InSample,
            },
            permutations: 0,
            replications: 200,
            alpha_grid: vec![0.1, 0.3],
            seed: 5,
        };
        let table = run_type1_study(&cfg).unwrap();
        for row in &table.rows {
            assert!(row.rejection_rate <= row.alpha + 3.0 * standard_error(row.alpha, 200), "{row:?}");
        }
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("alpha,rejection_rate,se,replications\n"));
    }

    #[test]
    fn permute_generator_keeps_covariates() {
        let d = gen_mvn_dataset(0.0, 5, 5, 2, 1).unwrap();
        let g = NullGenerator::Permute(d.clone());
        let e = g.draw(9).unwrap();
        assert_eq!(e.covariates(), d.covariates());
        assert_eq!(e.treated_count(), 5);
    }

    #[test]
    fn histogram_counts_every_p_value() {
        let t = Type1Table {
            test: "x".into(),
            rows: vec![],
            p_values: vec![0.0, 0.05, 0.5, 1.0],
        };
        let mut buf = Vec::new();
        t.write_histogram_csv(&mut buf, 20).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let total: usize = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, 4);
    }
}
