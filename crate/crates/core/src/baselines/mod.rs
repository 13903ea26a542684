//! Comparison tests: the energy test and the logistic likelihood-ratio test,
//! plus the Type-I error study runner.

pub mod energy;
pub mod lrt;
pub mod type1;

pub use energy::{energy_statistic, energy_test, EnergyStatistic};
pub use lrt::{lrt_logistic, LrtResult};
pub use type1::{run_type1_study, NullGenerator, Type1Row, Type1StudyConfig, Type1Table};
