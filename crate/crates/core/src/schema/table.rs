//! Columnar data table conforming to a [`TableSchema`], with a per-cell
//! missing mask. Construction always validates cells against the schema;
//! violations are reported, never coerced.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use super::{FeatureKind, FeatureRole, TableSchema};

/// A single cell value at the API boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Continuous(f64),
    /// Index into the feature's `allowed_values`.
    Categorical(u32),
}

/// Per-feature storage. Categorical and binary features store value indices.
#[derive(Debug, Clone)]
pub enum ColumnData {
    Continuous(Vec<f64>),
    Categorical(Vec<u32>),
}

impl ColumnData {
    fn len(&self) -> usize {
        match self {
            ColumnData::Continuous(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }
}

/// Why a candidate row was rejected during validation.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowViolation {
    Arity { expected: usize, got: usize },
    UnparseableCell { feature: String, value: String },
    OutOfRange { feature: String, value: f64, lo: f64, hi: f64 },
    UnknownCategory { feature: String, value: String },
}

impl RowViolation {
    /// Feature the violation concerns, when attributable to one.
    pub fn feature(&self) -> Option<&str> {
        match self {
            RowViolation::Arity { .. } => None,
            RowViolation::UnparseableCell { feature, .. }
            | RowViolation::OutOfRange { feature, .. }
            | RowViolation::UnknownCategory { feature, .. } => Some(feature),
        }
    }
}

impl fmt::Display for RowViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowViolation::Arity { expected, got } => {
                write!(f, "expected {expected} cells, got {got}")
            }
            RowViolation::UnparseableCell { feature, value } => {
                write!(f, "cell {value:?} in column {feature:?} is not a number")
            }
            RowViolation::OutOfRange { feature, value, lo, hi } => {
                write!(f, "value {value} in column {feature:?} outside [{lo}, {hi}]")
            }
            RowViolation::UnknownCategory { feature, value } => {
                write!(f, "value {value:?} not allowed for column {feature:?}")
            }
        }
    }
}

/// Data-level failures.
#[derive(Debug, Error)]
pub enum TableError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("header mismatch: missing {missing:?}, unexpected {extra:?}")]
    HeaderMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("row {row}: {violation}")]
    Cell { row: usize, violation: RowViolation },
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("duplicate feature {0:?} in selection")]
    DuplicateSelection(String),
    #[error("split fraction {0} must be strictly between 0 and 1")]
    InvalidFraction(f64),
}

/// Columnar dataset of validated records.
#[derive(Debug, Clone)]
pub struct DataTable {
    schema: Arc<TableSchema>,
    columns: Vec<ColumnData>,
    missing: Vec<Vec<bool>>,
    n_rows: usize,
}

/// Borrowed view of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellRef<'a> {
    Missing,
    Continuous(f64),
    Categorical(&'a str),
}

impl DataTable {
    pub fn builder(schema: Arc<TableSchema>) -> TableBuilder {
        TableBuilder::new(schema)
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn schema_arc(&self) -> Arc<TableSchema> {
        Arc::clone(&self.schema)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn is_missing(&self, feature: usize, row: usize) -> bool {
        self.missing[feature][row]
    }

    pub fn missing_total(&self) -> usize {
        self.missing.iter().map(|col| col.iter().filter(|&&m| m).count()).sum()
    }

    pub fn column(&self, feature: usize) -> &ColumnData {
        &self.columns[feature]
    }

    pub fn cell(&self, feature: usize, row: usize) -> CellRef<'_> {
        if self.missing[feature][row] {
            return CellRef::Missing;
        }
        match &self.columns[feature] {
            ColumnData::Continuous(v) => CellRef::Continuous(v[row]),
            ColumnData::Categorical(v) => {
                CellRef::Categorical(&self.schema.feature(feature).allowed_values[v[row] as usize])
            }
        }
    }

    /// Continuous value with missing as NaN. Panics on categorical columns.
    pub fn continuous_at(&self, feature: usize, row: usize) -> f64 {
        match &self.columns[feature] {
            ColumnData::Continuous(v) => {
                if self.missing[feature][row] {
                    f64::NAN
                } else {
                    v[row]
                }
            }
            ColumnData::Categorical(_) => panic!("feature {feature} is not continuous"),
        }
    }

    /// Non-missing values of a continuous feature.
    pub fn non_missing_continuous(&self, feature: usize) -> Vec<f64> {
        match &self.columns[feature] {
            ColumnData::Continuous(v) => v
                .iter()
                .zip(&self.missing[feature])
                .filter(|(_, &m)| !m)
                .map(|(&x, _)| x)
                .collect(),
            ColumnData::Categorical(_) => Vec::new(),
        }
    }

    /// Counts of non-missing category values, keyed by value string.
    /// Categories allowed by the schema but absent from the data appear with
    /// count zero.
    pub fn category_counts(&self, feature: usize) -> BTreeMap<String, f64> {
        let spec = self.schema.feature(feature);
        let mut counts: BTreeMap<String, f64> =
            spec.allowed_values.iter().map(|v| (v.clone(), 0.0)).collect();
        if let ColumnData::Categorical(col) = &self.columns[feature] {
            for (row, &idx) in col.iter().enumerate() {
                if !self.missing[feature][row] {
                    *counts.get_mut(&spec.allowed_values[idx as usize]).unwrap() += 1.0;
                }
            }
        }
        counts
    }

    /// Binary labels as 0/1, None where missing.
    pub fn labels01(&self) -> Vec<Option<u8>> {
        let li = self.schema.label_index();
        match &self.columns[li] {
            ColumnData::Categorical(col) => col
                .iter()
                .zip(&self.missing[li])
                .map(|(&idx, &m)| if m { None } else { Some(idx as u8) })
                .collect(),
            ColumnData::Continuous(_) => unreachable!("label is always binary"),
        }
    }

    /// New table containing the given rows, in the given order.
    pub fn take_rows(&self, rows: &[usize]) -> DataTable {
        let columns = self
            .columns
            .iter()
            .map(|col| match col {
                ColumnData::Continuous(v) => {
                    ColumnData::Continuous(rows.iter().map(|&r| v[r]).collect())
                }
                ColumnData::Categorical(v) => {
                    ColumnData::Categorical(rows.iter().map(|&r| v[r]).collect())
                }
            })
            .collect();
        let missing = self
            .missing
            .iter()
            .map(|col| rows.iter().map(|&r| col[r]).collect())
            .collect();
        DataTable {
            schema: Arc::clone(&self.schema),
            columns,
            missing,
            n_rows: rows.len(),
        }
    }

    /// Rows whose (non-missing) cell of `feature` equals the given category index.
    pub fn rows_with_category(&self, feature: usize, value_idx: u32) -> Vec<usize> {
        match &self.columns[feature] {
            ColumnData::Categorical(col) => col
                .iter()
                .enumerate()
                .filter(|(row, &v)| v == value_idx && !self.missing[feature][*row])
                .map(|(row, _)| row)
                .collect(),
            ColumnData::Continuous(_) => Vec::new(),
        }
    }

    /// Project onto the named features, preserving the given order. The label
    /// column is appended last when not already named.
    pub fn select_features(&self, names: &[&str]) -> Result<DataTable, TableError> {
        let mut indices = Vec::with_capacity(names.len() + 1);
        let mut seen = std::collections::HashSet::new();
        for &name in names {
            let idx = self
                .schema
                .index_of(name)
                .ok_or_else(|| TableError::UnknownFeature(name.to_string()))?;
            if !seen.insert(idx) {
                return Err(TableError::DuplicateSelection(name.to_string()));
            }
            indices.push(idx);
        }
        let label = self.schema.label_index();
        if !seen.contains(&label) {
            indices.push(label);
        }

        let specs: Vec<_> = indices.iter().map(|&i| self.schema.feature(i).clone()).collect();
        let schema = TableSchema::new(specs, self.schema.version().to_string())
            .expect("projection of a valid schema is valid")
            .into_arc();
        let columns = indices.iter().map(|&i| self.columns[i].clone()).collect();
        let missing = indices.iter().map(|&i| self.missing[i].clone()).collect();
        Ok(DataTable {
            schema,
            columns,
            missing,
            n_rows: self.n_rows,
        })
    }

    /// Summary statistics over the table.
    pub fn summary(&self) -> DatasetSummary {
        let labels = self.labels01();
        let non_missing = labels.iter().flatten().count();
        let positives = labels.iter().flatten().filter(|&&y| y == 1).count();
        let positive_label_rate = if non_missing == 0 {
            0.0
        } else {
            positives as f64 / non_missing as f64
        };

        // Counts over the first role=group feature in schema order, if any.
        let per_group_counts = self
            .schema
            .features()
            .iter()
            .position(|f| f.role == FeatureRole::Group)
            .map(|gi| {
                self.category_counts(gi)
                    .into_iter()
                    .filter(|(_, c)| *c > 0.0)
                    .map(|(v, c)| (v, c as usize))
                    .collect()
            })
            .unwrap_or_default();

        DatasetSummary {
            n_rows: self.n_rows,
            n_features: self.schema.n_features(),
            positive_label_rate,
            per_group_counts,
            missing_total: self.missing_total(),
        }
    }

    /// Render one row as raw string cells (None for missing), schema order.
    pub fn raw_row(&self, row: usize) -> Vec<Option<String>> {
        (0..self.schema.n_features())
            .map(|f| match self.cell(f, row) {
                CellRef::Missing => None,
                CellRef::Continuous(v) => Some(format_float(v)),
                CellRef::Categorical(s) => Some(s.to_string()),
            })
            .collect()
    }
}

/// Canonical float formatting used everywhere a value is written out.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v}")
}

/// Summary statistics of a table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub n_rows: usize,
    pub n_features: usize,
    pub positive_label_rate: f64,
    pub per_group_counts: BTreeMap<String, usize>,
    pub missing_total: usize,
}

/// Incremental, validating table constructor.
#[derive(Debug, Clone)]
pub struct TableBuilder {
    schema: Arc<TableSchema>,
    columns: Vec<ColumnData>,
    missing: Vec<Vec<bool>>,
    n_rows: usize,
}

impl TableBuilder {
    pub fn new(schema: Arc<TableSchema>) -> Self {
        let columns = schema
            .features()
            .iter()
            .map(|f| match f.kind {
                FeatureKind::Continuous => ColumnData::Continuous(Vec::new()),
                _ => ColumnData::Categorical(Vec::new()),
            })
            .collect();
        let missing = vec![Vec::new(); schema.n_features()];
        TableBuilder {
            schema,
            columns,
            missing,
            n_rows: 0,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Validate and append one row of raw string cells in schema order.
    /// `None` or an empty string marks a missing cell. On rejection the
    /// builder is left unchanged.
    pub fn push_raw<S: AsRef<str>>(&mut self, cells: &[Option<S>]) -> Result<(), RowViolation> {
        if cells.len() != self.schema.n_features() {
            return Err(RowViolation::Arity {
                expected: self.schema.n_features(),
                got: cells.len(),
            });
        }
        let mut parsed: Vec<Option<Value>> = Vec::with_capacity(cells.len());
        for (i, cell) in cells.iter().enumerate() {
            let spec = self.schema.feature(i);
            let text = cell.as_ref().map(|s| s.as_ref()).unwrap_or("");
            if text.is_empty() {
                parsed.push(None);
                continue;
            }
            match spec.kind {
                FeatureKind::Continuous => {
                    let v: f64 = text.trim().parse().map_err(|_| RowViolation::UnparseableCell {
                        feature: spec.name.clone(),
                        value: text.to_string(),
                    })?;
                    if !v.is_finite() {
                        return Err(RowViolation::UnparseableCell {
                            feature: spec.name.clone(),
                            value: text.to_string(),
                        });
                    }
                    if let Some((lo, hi)) = spec.range {
                        if v < lo || v > hi {
                            return Err(RowViolation::OutOfRange {
                                feature: spec.name.clone(),
                                value: v,
                                lo,
                                hi,
                            });
                        }
                    }
                    parsed.push(Some(Value::Continuous(v)));
                }
                FeatureKind::Categorical | FeatureKind::Binary => {
                    let idx = spec
                        .allowed_values
                        .iter()
                        .position(|a| a == text.trim())
                        .ok_or_else(|| RowViolation::UnknownCategory {
                            feature: spec.name.clone(),
                            value: text.to_string(),
                        })?;
                    parsed.push(Some(Value::Categorical(idx as u32)));
                }
            }
        }
        self.push_validated(&parsed);
        Ok(())
    }

    /// Append a row of already-typed values. Range and category-index checks
    /// still apply.
    pub fn push_values(&mut self, row: &[Option<Value>]) -> Result<(), RowViolation> {
        if row.len() != self.schema.n_features() {
            return Err(RowViolation::Arity {
                expected: self.schema.n_features(),
                got: row.len(),
            });
        }
        for (i, value) in row.iter().enumerate() {
            let spec = self.schema.feature(i);
            match value {
                None => {}
                Some(Value::Continuous(v)) => {
                    if !v.is_finite() {
                        return Err(RowViolation::UnparseableCell {
                            feature: spec.name.clone(),
                            value: v.to_string(),
                        });
                    }
                    if let Some((lo, hi)) = spec.range {
                        if *v < lo || *v > hi {
                            return Err(RowViolation::OutOfRange {
                                feature: spec.name.clone(),
                                value: *v,
                                lo,
                                hi,
                            });
                        }
                    }
                }
                Some(Value::Categorical(idx)) if *idx as usize >= spec.allowed_values.len() => {
                    return Err(RowViolation::UnknownCategory {
                        feature: spec.name.clone(),
                        value: format!("#{idx}"),
                    });
                }
                Some(Value::Categorical(_)) => {}
            }
        }
        self.push_validated(row);
        Ok(())
    }

    fn push_validated(&mut self, row: &[Option<Value>]) {
        for (i, value) in row.iter().enumerate() {
            match (&mut self.columns[i], value) {
                (ColumnData::Continuous(col), Some(Value::Continuous(v))) => {
                    col.push(*v);
                    self.missing[i].push(false);
                }
                (ColumnData::Categorical(col), Some(Value::Categorical(idx))) => {
                    col.push(*idx);
                    self.missing[i].push(false);
                }
                (ColumnData::Continuous(col), None) => {
                    col.push(f64::NAN);
                    self.missing[i].push(true);
                }
                (ColumnData::Categorical(col), None) => {
                    col.push(0);
                    self.missing[i].push(true);
                }
                _ => unreachable!("cell type checked during validation"),
            }
        }
        self.n_rows += 1;
    }

    pub fn finish(self) -> DataTable {
        debug_assert!(self.columns.iter().all(|c| c.len() == self.n_rows));
        DataTable {
            schema: self.schema,
            columns: self.columns,
            missing: self.missing,
            n_rows: self.n_rows,
        }
    }
}
