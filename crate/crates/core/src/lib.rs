//! Covariate-balance testing with the classification permutation test.
//!
//! A classifier is trained to predict treatment from covariates; its
//! classification accuracy is the test statistic, and significance comes from
//! recomputing that accuracy under random relabellings of treatment.
//!
//! ```no_run
//! use cpt_core::{load_csv, run_cpt, ClassifierSpec, LoadOptions, PermutationPlan, StatSpec};
//!
//! let d = load_csv("balance.csv", &LoadOptions::new("treatment"))?;
//! let classifier: ClassifierSpec = "logistic2".parse()?;
//! let result = run_cpt(&d, &classifier, &StatSpec::InSample, &PermutationPlan::new(499, 7))?;
//! println!("S = {}, p = {}", result.observed, result.p_value);
//! # Ok::<(), cpt_core::CptError>(())
//! ```

pub mod baselines;
pub mod classifiers;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod perm;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod suite;

pub use baselines::{energy_test, lrt_logistic, run_type1_study, NullGenerator, Type1StudyConfig, Type1Table};
pub use classifiers::{train, ClassifierSpec, TrainedModel};
pub use dataset::{expand_design, load_csv, read_csv, write_csv, Dataset, DesignKind, DesignMatrix, LoadOptions};
pub use error::{CptError, Result};
pub use perm::{
    exact_cpt, null_distribution_report, run_cpt, shuffle_labels, PermutationPlan, PermuteMode, TestResult, TieBreak,
};
pub use sim::{gen_mvn_dataset, roc_points, run_power_study, PowerStudy, PowerTable, RocCurve, SimulationConfig};
pub use stats::{stat_in_sample, stat_out_sample, Partitions, StatSpec};
pub use suite::TestSpec;
