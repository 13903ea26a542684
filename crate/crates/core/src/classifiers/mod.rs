//! Classifiers producing hard 0/1 predictions of treatment from features.
//!
//! All four families share one interface: [`train`] returns an immutable
//! [`TrainedModel`] whose [`TrainedModel::classify`] is a pure function of the
//! fitted state and the input row.
//!
//! Tie rules: a logistic probability of exactly 0.5 classifies to 0, and an
//! even k-NN or forest vote classifies to 0.

pub mod forest;
pub mod knn;
pub mod logistic;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{expand_covariates, DesignKind, DesignMatrix};
use crate::error::{CptError, Result};

pub use forest::{Forest, ForestParams};
pub use knn::Knn;
pub use logistic::{fit_logistic, IrlsOptions, LogisticFit};

/// Candidate features per split: a fixed count or `ceil(sqrt(q))`.
/// Serialized as the string `"sqrt"` or an integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeaturesPerSplit {
    Sqrt,
    Count(usize),
}

impl Serialize for FeaturesPerSplit {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FeaturesPerSplit::Sqrt => s.serialize_str("sqrt"),
            FeaturesPerSplit::Count(c) => s.serialize_u64(*c as u64),
        }
    }
}

impl<'de> Deserialize<'de> for FeaturesPerSplit {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(c) => Ok(FeaturesPerSplit::Count(c)),
            Raw::Name(n) if n == "sqrt" => Ok(FeaturesPerSplit::Sqrt),
            Raw::Name(n) => Err(serde::de::Error::custom(format!("expected \"sqrt\" or an integer, got {n:?}"))),
        }
    }
}

impl FeaturesPerSplit {
    pub fn resolve(self, q: usize) -> usize {
        match self {
            FeaturesPerSplit::Sqrt => ((q as f64).sqrt().ceil() as usize).max(1),
            FeaturesPerSplit::Count(c) => c.clamp(1, q.max(1)),
        }
    }
}

/// Declarative classifier choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ClassifierSpec {
    Logistic {
        design: DesignKind,
        #[serde(default)]
        squares: bool,
        /// `None` means `1e-4 * n` for a training set of `n` rows.
        #[serde(default)]
        ridge: Option<f64>,
    },
    RandomForest {
        trees: usize,
        features_per_split: FeaturesPerSplit,
        max_depth: Option<usize>,
        min_leaf: usize,
        #[serde(default)]
        seed_stream: u64,
        /// Score training rows by out-of-bag votes in the in-sample statistic.
        #[serde(default)]
        oob: bool,
    },
    Knn {
        k: usize,
    },
}

impl ClassifierSpec {
    pub fn logistic(design: DesignKind) -> Self {
        ClassifierSpec::Logistic {
            design,
            squares: false,
            ridge: None,
        }
    }

    pub fn forest() -> Self {
        ClassifierSpec::RandomForest {
            trees: 200,
            features_per_split: FeaturesPerSplit::Sqrt,
            max_depth: None,
            min_leaf: 1,
            seed_stream: 0,
            oob: false,
        }
    }

    /// Default forest scored out-of-bag in the in-sample statistic.
    pub fn forest_oob() -> Self {
        let mut spec = Self::forest();
        if let ClassifierSpec::RandomForest { oob, .. } = &mut spec {
            *oob = true;
        }
        spec
    }

    pub fn knn(k: usize) -> Self {
        ClassifierSpec::Knn { k }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CptError::InvalidClassifier(m));
        match *self {
            ClassifierSpec::Logistic { ridge: Some(r), .. } if !(r >= 0.0 && r.is_finite()) => {
                bad(format!("ridge must be a finite value >= 0, got {r}"))
            }
            ClassifierSpec::RandomForest { trees: 0, .. } => bad("trees must be >= 1".into()),
            ClassifierSpec::RandomForest { min_leaf: 0, .. } => bad("min_leaf must be >= 1".into()),
            ClassifierSpec::RandomForest {
                features_per_split: FeaturesPerSplit::Count(0),
                ..
            } => bad("mtry must be >= 1".into()),
            ClassifierSpec::RandomForest { max_depth: Some(0), .. } => bad("depth must be >= 1".into()),
            ClassifierSpec::Knn { k: 0 } => bad("k must be >= 1".into()),
            _ => Ok(()),
        }
    }

    /// Forests draw random bootstrap samples and feature subsets.
    pub fn is_randomized(&self) -> bool {
        matches!(self, ClassifierSpec::RandomForest { .. })
    }

    /// Feature matrix this classifier trains on.
    pub fn features(&self, covariates: &DMatrix<f64>, names: &[String]) -> DesignMatrix {
        match *self {
            ClassifierSpec::Logistic { design, squares, .. } => expand_covariates(covariates, names, design, squares),
            _ => expand_covariates(covariates, names, DesignKind::MainEffects, false),
        }
    }
}

impl fmt::Display for ClassifierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierSpec::Logistic { design, squares, ridge } => {
                f.write_str(match design {
                    DesignKind::MainEffects => "logistic",
                    DesignKind::TwoWay => "logistic2",
                })?;
                let mut opts = Vec::new();
                if let Some(r) = ridge {
                    opts.push(format!("ridge={r}"));
                }
                if *squares {
                    opts.push("squares=true".into());
                }
                if !opts.is_empty() {
                    write!(f, ":{}", opts.join(","))?;
                }
                Ok(())
            }
            ClassifierSpec::RandomForest {
                trees,
                features_per_split,
                max_depth,
                min_leaf,
                seed_stream,
                oob,
            } => {
                let mtry = match features_per_split {
                    FeaturesPerSplit::Sqrt => "sqrt".to_string(),
                    FeaturesPerSplit::Count(c) => c.to_string(),
                };
                let depth = max_depth.map_or("none".to_string(), |d| d.to_string());
                write!(f, "forest:trees={trees},mtry={mtry},depth={depth},min_leaf={min_leaf}")?;
                if *seed_stream != 0 {
                    write!(f, ",stream={seed_stream}")?;
                }
                if *oob {
                    f.write_str(",oob=true")?;
                }
                Ok(())
            }
            ClassifierSpec::Knn { k } => write!(f, "knn:k={k}"),
        }
    }
}

/// Parses the CLI mini-grammar: `logistic`, `logistic2:ridge=0.01`,
/// `forest:trees=200,mtry=3`, `knn:k=1`.
impl FromStr for ClassifierSpec {
    type Err = CptError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut spec = match name {
            "logistic" | "logistic1" => ClassifierSpec::logistic(DesignKind::MainEffects),
            "logistic2" => ClassifierSpec::logistic(DesignKind::TwoWay),
            "forest" | "rf" | "random-forest" => ClassifierSpec::forest(),
            "knn" => ClassifierSpec::knn(1),
            other => return Err(CptError::InvalidClassifier(format!("unknown classifier `{other}`"))),
        };
        let opts = rest.split(',').map(str::trim).filter(|o| !o.is_empty());
        for opt in opts {
            let (key, value) = opt
                .split_once('=')
                .ok_or_else(|| CptError::InvalidClassifier(format!("option `{opt}` is not key=value")))?;
            let int = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| CptError::InvalidClassifier(format!("`{key}` expects an integer, got `{v}`")))
            };
            match (&mut spec, key) {
                (ClassifierSpec::Logistic { ridge, .. }, "ridge") => {
                    *ridge = Some(value.parse().map_err(|_| {
                        CptError::InvalidClassifier(format!("`ridge` expects a number, got `{value}`"))
                    })?)
                }
                (ClassifierSpec::Logistic { squares, .. }, "squares") => {
                    *squares = value.parse().map_err(|_| {
                        CptError::InvalidClassifier(format!("`squares` expects true/false, got `{value}`"))
                    })?
                }
                (ClassifierSpec::RandomForest { trees, .. }, "trees") => *trees = int(value)?,
                (ClassifierSpec::RandomForest { features_per_split, .. }, "mtry") => {
                    *features_per_split = if value == "sqrt" {
                        FeaturesPerSplit::Sqrt
                    } else {
                        FeaturesPerSplit::Count(int(value)?)
                    }
                }
                (ClassifierSpec::RandomForest { max_depth, .. }, "depth" | "max_depth") => {
                    *max_depth = if value == "none" { None } else { Some(int(value)?) }
                }
                (ClassifierSpec::RandomForest { min_leaf, .. }, "min_leaf") => *min_leaf = int(value)?,
                (ClassifierSpec::RandomForest { seed_stream, .. }, "stream" | "seed_stream") => {
                    *seed_stream = int(value)? as u64
                }
                (ClassifierSpec::RandomForest { oob, .. }, "oob") => {
                    *oob = value.parse().map_err(|_| {
                        CptError::InvalidClassifier(format!("`oob` expects true/false, got `{value}`"))
                    })?
                }
                (ClassifierSpec::Knn { k }, "k") => *k = int(value)?,
                _ => {
                    return Err(CptError::InvalidClassifier(format!(
                        "option `{key}` does not apply to `{name}`"
                    )))
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelState {
    Logistic(LogisticFit),
    Forest(Forest),
    Knn(Knn),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ClassifierSpec,
    pub state: ModelState,
    pub training_size: usize,
    pub arity: usize,
}

/// Fits `spec` on feature matrix `x` (already expanded, see
/// [`ClassifierSpec::features`]) and labels `y`. Deterministic in
/// `(spec, x, y, seed)`; only forests consume the seed. Single-class labels
/// are allowed and yield a model predicting that class.
pub fn train(spec: &ClassifierSpec, x: &DMatrix<f64>, y: &[u8], seed: u64) -> Result<TrainedModel> {
    spec.validate()?;
    if x.nrows() != y.len() {
        return Err(CptError::DimensionMismatch {
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    if y.len() < 2 {
        return Err(CptError::InvalidDataset(format!("need at least 2 training rows, got {}", y.len())));
    }
    let n = y.len();
    let state = match *spec {
        ClassifierSpec::Logistic { ridge, .. } => {
            let ridge = ridge.unwrap_or(logistic::RIDGE_PER_ROW * n as f64);
            ModelState::Logistic(fit_logistic(x, y, IrlsOptions::with_ridge(ridge))?)
        }
        ClassifierSpec::RandomForest {
            trees,
            features_per_split,
            max_depth,
            min_leaf,
            seed_stream,
            ..
        } => {
            let params = ForestParams {
                trees,
                features_per_split: features_per_split.resolve(x.ncols()),
                max_depth,
                min_leaf,
            };
            ModelState::Forest(Forest::fit(x, y, &params, seed, seed_stream))
        }
        ClassifierSpec::Knn { k } => ModelState::Knn(Knn::fit(x, y, k)),
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        state,
        training_size: n,
        arity: x.ncols(),
    })
}

impl TrainedModel {
    pub fn classify(&self, row: &[f64]) -> Result<u8> {
        if row.len() != self.arity {
            return Err(CptError::DimensionMismatch {
                expected: self.arity,
                actual: row.len(),
            });
        }
        Ok(self.classify_unchecked(row))
    }

    fn classify_unchecked(&self, row: &[f64]) -> u8 {
        match &self.state {
            ModelState::Logistic(fit) => LogisticFit::classify_eta(fit.linear_predictor(row.iter().copied())),
            ModelState::Forest(forest) => forest.predict(row),
            ModelState::Knn(knn) => knn.predict(row),
        }
    }

    /// Predictions for the given rows of `x`.
    pub fn classify_rows(&self, x: &DMatrix<f64>, rows: impl IntoIterator<Item = usize>) -> Result<Vec<u8>> {
        if x.ncols() != self.arity {
            return Err(CptError::DimensionMismatch {
                expected: self.arity,
                actual: x.ncols(),
            });
        }
        let mut row = vec![0.0; x.ncols()];
        Ok(rows
            .into_iter()
            .map(|i| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = x[(i, j)];
                }
                self.classify_unchecked(&row)
            })
            .collect())
    }

    /// Predictions for the model's own training matrix. Forests built with
    /// `oob` use out-of-bag votes; every other model uses [`Self::classify_rows`].
    pub fn classify_training(&self, x: &DMatrix<f64>) -> Result<Vec<u8>> {
        match (&self.state, &self.spec) {
            (ModelState::Forest(forest), ClassifierSpec::RandomForest { oob: true, .. }) => {
                if x.ncols() != self.arity || x.nrows() != self.training_size {
                    return Err(CptError::DimensionMismatch {
                        expected: self.training_size,
                        actual: x.nrows(),
                    });
                }
                let mut row = vec![0.0; x.ncols()];
                Ok((0..x.nrows())
                    .map(|i| {
                        for (j, v) in row.iter_mut().enumerate() {
                            *v = x[(i, j)];
                        }
                        forest.predict_oob(i, &row)
                    })
                    .collect())
            }
            _ => self.classify_rows(x, 0..x.nrows()),
        }
    }

    /// Unpenalized Bernoulli log-likelihood of `y` under the fitted weights.
    pub fn loglik(&self, x: &DMatrix<f64>, y: &[u8]) -> Result<f64> {
        match &self.state {
            ModelState::Logistic(fit) => {
                if x.ncols() != self.arity {
                    return Err(CptError::DimensionMismatch {
                        expected: self.arity,
                        actual: x.ncols(),
                    });
                }
                Ok(logistic::loglik_at(x, y, &fit.weights))
            }
            _ => Err(CptError::InvalidClassifier(format!(
                "log-likelihood needs a logistic model, got `{}`",
                self.spec
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_round_trips() {
        for s in ["logistic", "logistic2", "logistic2:ridge=0.5", "knn:k=3", "forest:trees=50,mtry=2,depth=4,min_leaf=2"] {
            let spec: ClassifierSpec = s.parse().unwrap();
            let again: ClassifierSpec = spec.to_string().parse().unwrap();
            assert_eq!(spec, again, "{s}");
        }
        let spec: ClassifierSpec = "forest".parse().unwrap();
        assert_eq!(spec, ClassifierSpec::forest());
    }

    #[test]
    fn grammar_rejects_bad_input() {
        for s in ["svm", "knn:k=0", "knn:trees=3", "logistic:ridge=-1", "forest:trees", "forest:mtry=x"] {
            assert!(s.parse::<ClassifierSpec>().is_err(), "{s}");
        }
    }

    #[test]
    fn json_form() {
        let spec: ClassifierSpec = "forest:trees=10,mtry=sqrt".parse().unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"family\":\"random-forest\""), "{json}");
        assert!(json.contains("\"features_per_split\":\"sqrt\""), "{json}");
        assert_eq!(serde_json::from_str::<ClassifierSpec>(&json).unwrap(), spec);
        let spec: ClassifierSpec = serde_json::from_str(r#"{"family":"logistic","design":"two-way"}"#).unwrap();
        assert_eq!(spec, ClassifierSpec::logistic(DesignKind::TwoWay));
        let spec: ClassifierSpec = serde_json::from_str(
            r#"{"family":"random-forest","trees":5,"features_per_split":2,"max_depth":null,"min_leaf":1}"#,
        )
        .unwrap();
        assert!(matches!(spec, ClassifierSpec::RandomForest { features_per_split: FeaturesPerSplit::Count(2), .. }));
    }

    #[test]
    fn zero_weights_classify_to_zero() {
        let model = TrainedModel {
            spec: ClassifierSpec::logistic(DesignKind::MainEffects),
            state: ModelState::Logistic(LogisticFit {
                weights: nalgebra::DVector::zeros(3),
                ridge: 0.0,
                iterations: 0,
                converged: true,
            }),
            training_size: 4,
            arity: 2,
        };
        assert_eq!(model.classify(&[5.0, -3.0]).unwrap(), 0);
        assert_eq!(model.classify(&[0.0, 0.0]).unwrap(), 0);
        assert!(model.classify(&[1.0]).is_err());
    }

    #[test]
    fn loglik_requires_logistic() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let m = train(&ClassifierSpec::knn(1), &x, &[0, 1, 0, 1], 0).unwrap();
        assert!(m.loglik(&x, &[0, 1, 0, 1]).is_err());
    }

    #[test]
    fn single_class_training_predicts_that_class() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        for spec in [ClassifierSpec::logistic(DesignKind::MainEffects), ClassifierSpec::knn(3), ClassifierSpec::forest()] {
            let m = train(&spec, &x, &[1, 1, 1, 1], 9).unwrap();
            assert_eq!(m.classify_rows(&x, 0..4).unwrap(), vec![1; 4], "{spec}");
        }
    }
}
