//! Data model, CSV ingestion and design-matrix construction.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CptError, Result};

/// Covariates, a binary treatment vector and optional block labels.
///
/// Construction validates every invariant; a `Dataset` is immutable afterwards
/// and can be shared read-only across workers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: DMatrix<f64>,
    treatment: Vec<u8>,
    blocks: Option<Vec<String>>,
    column_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        covariates: DMatrix<f64>,
        treatment: Vec<u8>,
        blocks: Option<Vec<String>>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        let p = covariates.ncols();
        if n < 2 {
            return Err(CptError::InvalidDataset(format!("need at least 2 rows, got {n}")));
        }
        if p < 1 {
            return Err(CptError::InvalidDataset("need at least one covariate".into()));
        }
        if treatment.len() != n {
            return Err(CptError::DimensionMismatch {
                expected: n,
                actual: treatment.len(),
            });
        }
        if column_names.len() != p {
            return Err(CptError::DimensionMismatch {
                expected: p,
                actual: column_names.len(),
            });
        }
        if let Some(bad) = treatment.iter().find(|&&t| t > 1) {
            return Err(CptError::InvalidDataset(format!("treatment value {bad} is not 0/1")));
        }
        validate_labels(&treatment)?;
        if let Some((i, j)) = (0..n)
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .find(|&(i, j)| !covariates[(i, j)].is_finite())
        {
            return Err(CptError::InvalidCell {
                row: i + 1,
                column: column_names[j].clone(),
                message: "non-finite value".into(),
            });
        }
        if let Some(b) = &blocks {
            if b.len() != n {
                return Err(CptError::DimensionMismatch {
                    expected: n,
                    actual: b.len(),
                });
            }
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for label in b {
                *counts.entry(label.as_str()).or_default() += 1;
            }
            if let Some((label, _)) = counts.iter().find(|(_, &c)| c < 2) {
                return Err(CptError::SingletonBlock(label.to_string()));
            }
        }
        Ok(Self {
            covariates,
            treatment,
            blocks,
            column_names,
        })
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn blocks(&self) -> Option<&[String]> {
        self.blocks.as_deref()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn treated_count(&self) -> usize {
        self.treatment.iter().filter(|&&t| t == 1).count()
    }

    pub fn control_count(&self) -> usize {
        self.n() - self.treated_count()
    }

    /// Row indices grouped by block, blocks ordered by first appearance.
    pub fn block_groups(&self) -> Option<Vec<Vec<usize>>> {
        self.blocks.as_ref().map(|labels| group_indices(labels))
    }

    /// Same covariates and blocks with a different treatment vector.
    pub fn with_treatment(&self, treatment: Vec<u8>) -> Result<Self> {
        Self::new(
            self.covariates.clone(),
            treatment,
            self.blocks.clone(),
            self.column_names.clone(),
        )
    }

    /// Z-scores every covariate column using the full-sample mean and
    /// standard deviation. Constant columns are centered only.
    pub fn standardized(&self) -> Self {
        let mut x = self.covariates.clone();
        let n = x.nrows() as f64;
        for mut col in x.column_iter_mut() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let sd = var.sqrt();
            for v in col.iter_mut() {
                *v -= mean;
                if sd > 0.0 {
                    *v /= sd;
                }
            }
        }
        Self {
            covariates: x,
            ..self.clone()
        }
    }
}

pub(crate) fn validate_labels(labels: &[u8]) -> Result<()> {
    let treated = labels.iter().filter(|&&t| t == 1).count();
    if treated == 0 {
        return Err(CptError::DegenerateTreatment("all units are control".into()));
    }
    if treated == labels.len() {
        return Err(CptError::DegenerateTreatment("all units are treated".into()));
    }
    Ok(())
}

pub(crate) fn group_indices(labels: &[String]) -> Vec<Vec<usize>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        let entry = groups.entry(label.as_str()).or_insert_with(|| {
            order.push(label.as_str());
            Vec::new()
        });
        entry.push(i);
    }
    order
        .into_iter()
        .map(|label| groups.remove(label).unwrap_or_default())
        .collect()
}

/// Which feature set a design expansion produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    MainEffects,
    TwoWay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub feature_names: Vec<String>,
    pub kind: DesignKind,
}

impl DesignMatrix {
    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

/// Number of design columns for `p` covariates. No intercept is included;
/// the logistic model adds its own.
pub fn design_width(p: usize, kind: DesignKind, squares: bool) -> usize {
    let base = match kind {
        DesignKind::MainEffects => p,
        DesignKind::TwoWay => p + p * p.saturating_sub(1) / 2,
    };
    if squares {
        base + p
    } else {
        base
    }
}

pub fn expand_design(d: &Dataset, kind: DesignKind) -> DesignMatrix {
    expand_covariates(d.covariates(), d.column_names(), kind, false)
}

/// Builds the feature matrix: the covariates in their original order, then
/// (two-way) every product `x_j * x_k` with `j < k` in lexicographic pair
/// order, then (if `squares`) every `x_j^2`.
pub fn expand_covariates(
    x: &DMatrix<f64>,
    names: &[String],
    kind: DesignKind,
    squares: bool,
) -> DesignMatrix {
    let n = x.nrows();
    let p = x.ncols();
    let q = design_width(p, kind, squares);
    let mut values = DMatrix::zeros(n, q);
    let mut feature_names = Vec::with_capacity(q);
    values.columns_mut(0, p).copy_from(x);
    feature_names.extend(names.iter().cloned());
    let mut col = p;
    if kind == DesignKind::TwoWay {
        for j in 0..p {
            for k in (j + 1)..p {
                for i in 0..n {
                    values[(i, col)] = x[(i, j)] * x[(i, k)];
                }
                feature_names.push(format!("{}:{}", names[j], names[k]));
                col += 1;
            }
        }
    }
    if squares {
        for j in 0..p {
            for i in 0..n {
                values[(i, col)] = x[(i, j)] * x[(i, j)];
            }
            feature_names.push(format!("{}^2", names[j]));
            col += 1;
        }
    }
    DesignMatrix {
        values,
        feature_names,
        kind,
    }
}

/// How to read a balance-testing CSV.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub treatment_column: String,
    pub block_column: Option<String>,
    /// Categorical columns expanded to k-1 dummies (first level dropped).
    pub one_hot: Vec<String>,
    pub standardize: bool,
    pub truthy: Vec<String>,
    pub falsy: Vec<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            treatment_column: "treatment".into(),
            block_column: None,
            one_hot: Vec::new(),
            standardize: false,
            truthy: vec!["1".into(), "1.0".into(), "true".into(), "TRUE".into(), "True".into()],
            falsy: vec!["0".into(), "0.0".into(), "false".into(), "FALSE".into(), "False".into()],
        }
    }
}

impl LoadOptions {
    pub fn new(treatment_column: impl Into<String>) -> Self {
        Self {
            treatment_column: treatment_column.into(),
            ..Self::default()
        }
    }

    pub fn with_blocks(mut self, block_column: impl Into<String>) -> Self {
        self.block_column = Some(block_column.into());
        self
    }
}

pub fn load_csv(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CptError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, opts)
}

enum ColumnRole {
    Numeric,
    Categorical,
    Treatment,
    Block,
}

pub fn read_csv<R: Read>(reader: R, opts: &LoadOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    if !headers.contains(&opts.treatment_column) {
        return Err(CptError::MissingColumn(opts.treatment_column.clone()));
    }
    if let Some(b) = &opts.block_column {
        if !headers.contains(b) {
            return Err(CptError::MissingColumn(b.clone()));
        }
    }
    for c in &opts.one_hot {
        if !headers.contains(c) {
            return Err(CptError::MissingColumn(c.clone()));
        }
    }
    let roles: Vec<ColumnRole> = headers
        .iter()
        .map(|h| {
            if *h == opts.treatment_column {
                ColumnRole::Treatment
            } else if opts.block_column.as_ref() == Some(h) {
                ColumnRole::Block
            } else if opts.one_hot.contains(h) {
                ColumnRole::Categorical
            } else {
                ColumnRole::Numeric
            }
        })
        .collect();

    let mut treatment = Vec::new();
    let mut blocks = Vec::new();
    // Per source column: parsed numbers or raw categorical levels.
    let mut numeric: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    let mut categorical: Vec<Vec<String>> = vec![Vec::new(); headers.len()];

    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != headers.len() {
            return Err(CptError::InvalidCell {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (c, (cell, role)) in record.iter().zip(&roles).enumerate() {
            let cell = cell.trim();
            let bad = |message: &str| CptError::InvalidCell {
                row,
                column: headers[c].clone(),
                message: message.to_string(),
            };
            if cell.is_empty() {
                return Err(bad("missing value"));
            }
            match role {
                ColumnRole::Treatment => {
                    if opts.truthy.iter().any(|t| t == cell) {
                        treatment.push(1);
                    } else if opts.falsy.iter().any(|t| t == cell) {
                        treatment.push(0);
                    } else {
                        return Err(bad(&format!("treatment value `{cell}` is not 0/1")));
                    }
                }
                ColumnRole::Block => blocks.push(cell.to_string()),
                ColumnRole::Categorical => categorical[c].push(cell.to_string()),
                ColumnRole::Numeric => {
                    let v: f64 = cell
                        .parse()
                        .map_err(|_| bad(&format!("`{cell}` is not a number")))?;
                    if !v.is_finite() {
                        return Err(bad("non-finite value"));
                    }
                    numeric[c].push(v);
                }
            }
        }
    }

    let n = treatment.len();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    for (c, role) in roles.iter().enumerate() {
        match role {
            ColumnRole::Numeric => {
                columns.push(std::mem::take(&mut numeric[c]));
                names.push(headers[c].clone());
            }
            ColumnRole::Categorical => {
                let levels: BTreeSet<&str> = categorical[c].iter().map(String::as_str).collect();
                for level in levels.iter().skip(1) {
                    columns.push(
                        categorical[c]
                            .iter()
                            .map(|v| if v == level { 1.0 } else { 0.0 })
                            .collect(),
                    );
                    names.push(format!("{}={}", headers[c], level));
                }
            }
            _ => {}
        }
    }
    let covariates = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
    let blocks = opts.block_column.as_ref().map(|_| blocks);
    let d = Dataset::new(covariates, treatment, blocks, names)?;
    Ok(if opts.standardize { d.standardized() } else { d })
}

/// Writes a dataset with the same schema `read_csv` accepts. Values use the
/// shortest representation that parses back to the identical `f64`.
pub fn write_csv<W: Write>(d: &Dataset, writer: W, treatment_column: &str, block_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = d.column_names().iter().map(String::as_str).collect();
    header.push(treatment_column);
    if d.blocks().is_some() {
        header.push(block_column);
    }
    w.write_record(&header)?;
    for i in 0..d.n() {
        let mut row: Vec<String> = (0..d.p()).map(|j| format!("{}", d.covariates()[(i, j)])).collect();
        row.push(d.treatment()[i].to_string());
        if let Some(b) = d.blocks() {
            row.push(b[i].clone());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| CptError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}
