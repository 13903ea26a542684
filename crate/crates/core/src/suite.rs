//! Named balance tests used by the Type-I and power-study runners.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{energy_test, lrt_logistic};
use crate::classifiers::ClassifierSpec;
use crate::dataset::{Dataset, DesignKind};
use crate::error::{CptError, Result};
use crate::perm::{exact_cpt, run_cpt, PermutationPlan};
use crate::stats::StatSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "test", rename_all = "kebab-case")]
pub enum TestSpec {
    Cpt { classifier: ClassifierSpec, stat: StatSpec },
    ExactCpt { classifier: ClassifierSpec, stat: StatSpec },
    Energy,
    Lrt { design: DesignKind },
}

impl TestSpec {
    pub fn cpt(classifier: ClassifierSpec) -> Self {
        TestSpec::Cpt {
            classifier,
            stat: StatSpec::InSample,
        }
    }

    /// Replaces the statistic of CPT variants.
    pub fn with_stat(self, stat: StatSpec) -> Self {
        match self {
            TestSpec::Cpt { classifier, .. } => TestSpec::Cpt { classifier, stat },
            TestSpec::ExactCpt { classifier, .. } => TestSpec::ExactCpt { classifier, stat },
            other => other,
        }
    }

    pub fn is_permutation_based(&self) -> bool {
        matches!(self, TestSpec::Cpt { .. } | TestSpec::Energy)
    }

    /// p-value of this test on `d`. `permutations` is ignored by the exact
    /// and asymptotic tests.
    pub fn p_value(&self, d: &Dataset, permutations: usize, seed: u64) -> Result<f64> {
        match self {
            TestSpec::Cpt { classifier, stat } => {
                run_cpt(d, classifier, stat, &PermutationPlan::new(permutations, seed)).map(|r| r.p_value)
            }
            TestSpec::ExactCpt { classifier, stat } => exact_cpt(d, classifier, stat),
            TestSpec::Energy => energy_test(d, permutations, seed).map(|r| r.p_value),
            TestSpec::Lrt { design } => lrt_logistic(d, *design).map(|r| r.p_value),
        }
    }
}

impl fmt::Display for TestSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestSpec::Cpt { classifier, .. } => write!(f, "cpt-{classifier}"),
            TestSpec::ExactCpt { classifier, .. } => write!(f, "exact-cpt-{classifier}"),
            TestSpec::Energy => f.write_str("energy"),
            TestSpec::Lrt {
                design: DesignKind::MainEffects,
            } => f.write_str("lrt-logistic"),
            TestSpec::Lrt {
                design: DesignKind::TwoWay,
            } => f.write_str("lrt-logistic2"),
        }
    }
}

/// `cpt-<classifier>`, `exact-cpt-<classifier>`, `energy`, `lrt-logistic`,
/// `lrt-logistic2` (also `lrt` / `lrt2`). CPT variants use the in-sample
/// statistic; see [`TestSpec::with_stat`].
impl FromStr for TestSpec {
    type Err = CptError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("exact-cpt-") {
            return Ok(TestSpec::ExactCpt {
                classifier: rest.parse()?,
                stat: StatSpec::InSample,
            });
        }
        if let Some(rest) = s.strip_prefix("cpt-") {
            return Ok(TestSpec::cpt(rest.parse()?));
        }
        match s {
            "energy" => Ok(TestSpec::Energy),
            "lrt" | "lrt-logistic" => Ok(TestSpec::Lrt {
                design: DesignKind::MainEffects,
            }),
            "lrt2" | "lrt-logistic2" => Ok(TestSpec::Lrt {
                design: DesignKind::TwoWay,
            }),
            other => Err(CptError::InvalidTest(format!("unknown test `{other}`"))),
        }
    }
}

/// Splits a comma-separated test list. Option tokens such as `trees=50` that
/// follow a classifier belong to the preceding test:
/// `cpt-forest:trees=50,mtry=2,energy` is two tests.
pub fn parse_test_list(s: &str) -> Result<Vec<TestSpec>> {
    let mut items: Vec<String> = Vec::new();
    for token in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match items.last_mut() {
            Some(prev) if token.contains('=') && !token.contains(':') && prev.contains(':') => {
                prev.push(',');
                prev.push_str(token);
            }
            _ => items.push(token.to_string()),
        }
    }
    if items.is_empty() {
        return Err(CptError::InvalidTest("empty test list".into()));
    }
    items.iter().map(|t| t.parse()).collect()
}
