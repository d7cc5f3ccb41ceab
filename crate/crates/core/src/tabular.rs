//! Tabular data: loading, `[0,1]` preprocessing, splitting and support extraction.
//!
//! Raw CSV input is staged as a [`RawTable`] that keeps the original cells, so that
//! resampled output can be written back verbatim. A fitted [`Preprocessor`] turns a
//! raw table into a normalized [`Dataset`].

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// How a feature was encoded into `[0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    /// Min-max scaled over `[min, max]`.
    Numeric { min: f64, max: f64 },
    /// Ordinal code over the (lexicographically sorted) categories, then min-max over codes.
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

/// A normalized table of `n` records over `d` features, every cell in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Array2<f64>,
    feature_meta: Vec<FeatureMeta>,
    target_index: Option<usize>,
}

impl Dataset {
    /// Builds a dataset from already-normalized records. Features default to
    /// numeric on `[0,1]`.
    pub fn new(records: Array2<f64>, names: Vec<String>) -> Result<Self> {
        let feature_meta = names
            .into_iter()
            .map(|name| FeatureMeta {
                name,
                kind: FeatureKind::Numeric { min: 0.0, max: 1.0 },
            })
            .collect();
        Self::with_meta(records, feature_meta, None)
    }

    pub fn with_meta(
        records: Array2<f64>,
        feature_meta: Vec<FeatureMeta>,
        target_index: Option<usize>,
    ) -> Result<Self> {
        let (n, d) = records.dim();
        if n == 0 {
            return Err(Error::EmptyTable);
        }
        if d == 0 {
            return invalid("dataset needs at least one feature");
        }
        if feature_meta.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "{} feature descriptors for {} columns",
                feature_meta.len(),
                d
            )));
        }
        if let Some((idx, v)) = records
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return invalid(format!(
                "cell ({}, {}) = {} lies outside [0,1]",
                idx / d,
                idx % d,
                v
            ));
        }
        let ds = Dataset {
            records,
            feature_meta,
            target_index: None,
        };
        match target_index {
            Some(t) => ds.with_target(t),
            None => Ok(ds),
        }
    }

    /// Convenience constructor from row slices with generated names `x0, x1, ...`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptyTable);
        }
        let d = rows[0].len();
        if let Some((line, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::RaggedRow {
                line,
                expected: d,
                found: r.len(),
            });
        }
        let records = Array2::from_shape_vec((n, d), rows.concat())
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        Self::new(records, (0..d).map(|j| format!("x{j}")).collect())
    }

    /// Marks column `target` as the binary target.
    pub fn with_target(mut self, target: usize) -> Result<Self> {
        if target >= self.d() {
            return invalid(format!(
                "target index {target} out of range for d={}",
                self.d()
            ));
        }
        if self
            .records
            .column(target)
            .iter()
            .any(|&v| v != 0.0 && v != 1.0)
        {
            return invalid(format!(
                "target column `{}` is not binary {{0,1}}",
                self.feature_meta[target].name
            ));
        }
        self.target_index = Some(target);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.records.nrows()
    }

    pub fn d(&self) -> usize {
        self.records.ncols()
    }

    pub fn records(&self) -> &Array2<f64> {
        &self.records
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.records.row(i)
    }

    pub fn feature_meta(&self) -> &[FeatureMeta] {
        &self.feature_meta
    }

    pub fn names(&self) -> Vec<&str> {
        self.feature_meta.iter().map(|m| m.name.as_str()).collect()
    }

    pub fn target_index(&self) -> Option<usize> {
        self.target_index
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_meta.iter().position(|m| m.name == name)
    }

    /// Rows at `indices`, in that order (duplicates allowed).
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyTable);
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return invalid(format!("row index {bad} out of range for n={}", self.n()));
        }
        Ok(Dataset {
            records: self.records.select(Axis(0), indices),
            feature_meta: self.feature_meta.clone(),
            target_index: self.target_index,
        })
    }

    /// Deterministic shuffled split: the first `⌊fraction·n⌋` shuffled rows form
    /// the first part, the remainder the second.
    pub fn split_real(&self, train_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        let (train, test) = split_indices(self.n(), train_fraction, seed)?;
        Ok((self.select_rows(&train)?, self.select_rows(&test)?))
    }
}

/// Shuffled index partition used by [`Dataset::split_real`] and [`RawTable::split`].
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return invalid(format!("train fraction {train_fraction} must lie in (0,1)"));
    }
    if n < 2 {
        return invalid("splitting needs at least two rows");
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(seed));
    let n_train = ((train_fraction * n as f64).floor() as usize).clamp(1, n - 1);
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

/// Column kind declared in a schema sidecar or inferred from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSchema {
    pub kind: Option<ColumnKind>,
    /// Public value range for a numeric column; used instead of the data min/max.
    #[serde(default)]
    pub range: Option<[f64; 2]>,
    /// Full category list for a categorical column.
    #[serde(default)]
    pub categories: Option<Vec<String>>,
}

/// Optional JSON sidecar describing columns and the target.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub columns: BTreeMap<String, ColumnSchema>,
}

impl Schema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Unnormalized table exactly as read from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    header: Vec<String>,
    cells: Vec<Vec<String>>,
    kinds: Vec<ColumnKind>,
    schema: Schema,
}

fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(s)
}

/// Reads a comma-separated file with one header row.
pub fn load_csv(path: &Path, schema: Option<&Schema>) -> Result<RawTable> {
    let text = read_to_string(path)?;
    RawTable::from_csv_str(&text, schema)
}

impl RawTable {
    pub fn from_csv_str(text: &str, schema: Option<&Schema>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let d = header.len();
        let mut cells = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let line = i + 2;
            if record.len() != d {
                return Err(Error::RaggedRow {
                    line,
                    expected: d,
                    found: record.len(),
                });
            }
            let row: Vec<String> = record.iter().map(|c| c.trim().to_string()).collect();
            if let Some(j) = row.iter().position(|c| c.is_empty()) {
                return Err(Error::MissingValue {
                    column: header[j].clone(),
                    line,
                });
            }
            cells.push(row);
        }
        Self::from_cells(header, cells, schema)
    }

    pub fn from_cells(
        header: Vec<String>,
        cells: Vec<Vec<String>>,
        schema: Option<&Schema>,
    ) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::EmptyTable);
        }
        if header.is_empty() {
            return invalid("table has no columns");
        }
        let schema = schema.cloned().unwrap_or_default();
        if let Some(unknown) = schema.columns.keys().find(|k| !header.contains(k)) {
            return Err(Error::SchemaMismatch(format!(
                "schema column `{unknown}` not in header"
            )));
        }
        if let Some(t) = &schema.target {
            if !header.contains(t) {
                return Err(Error::SchemaMismatch(format!(
                    "target column `{t}` not in header"
                )));
            }
        }
        let mut kinds = Vec::with_capacity(header.len());
        for (j, name) in header.iter().enumerate() {
            let declared = schema.columns.get(name).and_then(|c| c.kind);
            let kind = match declared {
                Some(k) => k,
                None if cells.iter().all(|r| r[j].parse::<f64>().is_ok()) => ColumnKind::Numeric,
                None => ColumnKind::Categorical,
            };
            if kind == ColumnKind::Numeric {
                for (i, r) in cells.iter().enumerate() {
                    match r[j].parse::<f64>() {
                        Ok(v) if v.is_finite() => {}
                        _ => {
                            return Err(Error::ParseNumeric {
                                column: name.clone(),
                                line: i + 2,
                                value: r[j].clone(),
                            })
                        }
                    }
                }
            }
            kinds.push(kind);
        }
        Ok(RawTable {
            header,
            cells,
            kinds,
            schema,
        })
    }

    pub fn n(&self) -> usize {
        self.cells.len()
    }

    pub fn d(&self) -> usize {
        self.header.len()
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    pub fn cell(&self, row: usize, col: usize) -> &str {
        &self.cells[row][col]
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn target_name(&self) -> Option<&str> {
        self.schema.target.as_deref()
    }

    /// Overrides the target column (e.g. from a pipeline config).
    pub fn set_target(&mut self, name: &str) -> Result<()> {
        if !self.header.iter().any(|h| h == name) {
            return Err(Error::SchemaMismatch(format!(
                "target column `{name}` not in header"
            )));
        }
        self.schema.target = Some(name.to_string());
        Ok(())
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyTable);
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return invalid(format!("row index {bad} out of range for n={}", self.n()));
        }
        Ok(RawTable {
            header: self.header.clone(),
            cells: indices.iter().map(|&i| self.cells[i].clone()).collect(),
            kinds: self.kinds.clone(),
            schema: self.schema.clone(),
        })
    }

    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        let (train, test) = split_indices(self.n(), train_fraction, seed)?;
        Ok((self.select_rows(&train)?, self.select_rows(&test)?))
    }

    /// Writes the header and the original cells.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.cells {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ColumnTransform {
    Numeric {
        min: f64,
        max: f64,
    },
    Categorical {
        codes: HashMap<String, usize>,
        categories: Vec<String>,
    },
}

impl ColumnTransform {
    fn forward(&self, name: &str, cell: &str) -> Result<f64> {
        match self {
            ColumnTransform::Numeric { min, max } => {
                let v: f64 = cell.parse().map_err(|_| Error::ParseNumeric {
                    column: name.to_string(),
                    line: 0,
                    value: cell.to_string(),
                })?;
                Ok(scale(v, *min, *max))
            }
            ColumnTransform::Categorical { codes, categories } => {
                let code = *codes.get(cell).ok_or_else(|| Error::UnseenCategory {
                    column: name.to_string(),
                    value: cell.to_string(),
                })?;
                Ok(scale(code as f64, 0.0, (categories.len() - 1) as f64))
            }
        }
    }

    fn inverse(&self, x: f64) -> String {
        match self {
            ColumnTransform::Numeric { min, max } => (min + x * (max - min)).to_string(),
            ColumnTransform::Categorical { categories, .. } => {
                let k = categories.len();
                let code = (x * (k - 1) as f64).round().clamp(0.0, (k - 1) as f64) as usize;
                categories[code].clone()
            }
        }
    }

    fn meta(&self, name: &str) -> FeatureMeta {
        let kind = match self {
            ColumnTransform::Numeric { min, max } => FeatureKind::Numeric {
                min: *min,
                max: *max,
            },
            ColumnTransform::Categorical { categories, .. } => FeatureKind::Categorical {
                categories: categories.clone(),
            },
        };
        FeatureMeta {
            name: name.to_string(),
            kind,
        }
    }
}

/// Min-max into [0,1]; constant ranges map to 0 and out-of-range values are clamped.
fn scale(v: f64, min: f64, max: f64) -> f64 {
    if max > min {
        ((v - min) / (max - min)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Per-column transforms fitted on a raw table.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    header: Vec<String>,
    transforms: Vec<ColumnTransform>,
    target: Option<String>,
}

/// Fits min-max parameters (or declared ranges) and ordinal code tables.
pub fn fit_preprocessor(data: &RawTable) -> Result<Preprocessor> {
    Preprocessor::fit(data)
}

/// Applies a fitted preprocessor; see [`Preprocessor::apply`].
pub fn apply_preprocessor(pre: &Preprocessor, data: &RawTable) -> Result<Dataset> {
    pre.apply(data)
}

impl Preprocessor {
    pub fn fit(data: &RawTable) -> Result<Self> {
        if data.n() == 0 {
            return Err(Error::EmptyTable);
        }
        let mut transforms = Vec::with_capacity(data.d());
        for (j, name) in data.header.iter().enumerate() {
            let declared = data.schema.columns.get(name);
            let t = match data.kinds[j] {
                ColumnKind::Numeric => {
                    let (min, max) = match declared.and_then(|c| c.range) {
                        Some([lo, hi]) if lo <= hi => (lo, hi),
                        Some([lo, hi]) => {
                            return Err(Error::SchemaMismatch(format!(
                                "column `{name}` declares an empty range [{lo}, {hi}]"
                            )))
                        }
                        None => data
                            .cells
                            .iter()
                            .map(|r| r[j].parse::<f64>().unwrap_or(0.0))
                            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                                (lo.min(v), hi.max(v))
                            }),
                    };
                    ColumnTransform::Numeric { min, max }
                }
                ColumnKind::Categorical => {
                    let mut categories: Vec<String> =
                        match declared.and_then(|c| c.categories.clone()) {
                            Some(cats) => cats,
                            None => data.cells.iter().map(|r| r[j].clone()).collect(),
                        };
                    categories.sort();
                    categories.dedup();
                    if categories.is_empty() {
                        return Err(Error::SchemaMismatch(format!(
                            "column `{name}` has no categories"
                        )));
                    }
                    let codes = categories
                        .iter()
                        .cloned()
                        .enumerate()
                        .map(|(i, c)| (c, i))
                        .collect();
                    ColumnTransform::Categorical { codes, categories }
                }
            };
            transforms.push(t);
        }
        Ok(Preprocessor {
            header: data.header.clone(),
            transforms,
            target: data.schema.target.clone(),
        })
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    /// Normalizes every cell into `[0,1]`. Numeric values outside the fitted range
    /// are clamped; unseen categories are an error.
    pub fn apply(&self, data: &RawTable) -> Result<Dataset> {
        if data.header != self.header {
            return Err(Error::SchemaMismatch(format!(
                "header {:?} differs from fitted header {:?}",
                data.header, self.header
            )));
        }
        for (j, t) in self.transforms.iter().enumerate() {
            let fitted = match t {
                ColumnTransform::Numeric { .. } => ColumnKind::Numeric,
                ColumnTransform::Categorical { .. } => ColumnKind::Categorical,
            };
            if fitted != data.kinds[j] {
                return Err(Error::SchemaMismatch(format!(
                    "column `{}` is {:?} but was fitted as {:?}",
                    self.header[j], data.kinds[j], fitted
                )));
            }
        }
        let (n, d) = (data.n(), data.d());
        let mut records = Array2::zeros((n, d));
        for (i, row) in data.cells.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                records[[i, j]] =
                    self.transforms[j]
                        .forward(&self.header[j], cell)
                        .map_err(|e| match e {
                            Error::ParseNumeric { column, value, .. } => Error::ParseNumeric {
                                column,
                                line: i + 2,
                                value,
                            },
                            other => other,
                        })?;
            }
        }
        let meta = self
            .transforms
            .iter()
            .zip(&self.header)
            .map(|(t, name)| t.meta(name))
            .collect();
        let target = data
            .schema
            .target
            .as_ref()
            .or(self.target.as_ref())
            .and_then(|t| self.header.iter().position(|h| h == t));
        Dataset::with_meta(records, meta, target)
    }

    /// Maps normalized values back to raw cells (numeric within 1e-9, categories exactly).
    pub fn invert(&self, data: &Dataset) -> Result<Vec<Vec<String>>> {
        if data.d() != self.header.len() {
            return Err(Error::DimensionMismatch(format!(
                "dataset has {} columns, preprocessor {}",
                data.d(),
                self.header.len()
            )));
        }
        Ok(data
            .records
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .zip(&self.transforms)
                    .map(|(&x, t)| t.inverse(x))
                    .collect()
            })
            .collect())
    }
}

/// Unique records of a dataset with their empirical probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportDistribution {
    pub support: Array2<f64>,
    pub probs: Vec<f64>,
    pub multiplicity: Vec<usize>,
    pub record_to_support: Vec<usize>,
}

impl SupportDistribution {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Collapses duplicate rows; support points are ordered by first occurrence.
pub fn support(data: &Dataset) -> Result<SupportDistribution> {
    let (n, d) = data.records.dim();
    if n == 0 {
        return Err(Error::EmptyTable);
    }
    let mut index: HashMap<Vec<u64>, usize> = HashMap::with_capacity(n);
    let mut first_rows = Vec::new();
    let mut multiplicity = Vec::new();
    let mut record_to_support = Vec::with_capacity(n);
    for (i, row) in data.records.rows().into_iter().enumerate() {
        // +0.0 and -0.0 must collide
        let key: Vec<u64> = row.iter().map(|&v| (v + 0.0).to_bits()).collect();
        let s = *index.entry(key).or_insert_with(|| {
            first_rows.push(i);
            multiplicity.push(0);
            first_rows.len() - 1
        });
        multiplicity[s] += 1;
        record_to_support.push(s);
    }
    let support = data.records.select(Axis(0), &first_rows);
    debug_assert_eq!(support.ncols(), d);
    let probs = multiplicity.iter().map(|&m| m as f64 / n as f64).collect();
    Ok(SupportDistribution {
        support,
        probs,
        multiplicity,
        record_to_support,
    })
}
