//! Dataset representation shared by every stage of the pipeline: a covariate
//! table with per-column kind (continuous or categorical), observed times and
//! event indicators, plus the encoding into a numeric model matrix.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kind of a covariate column. Categorical columns store their ordered level
/// labels; values in the data matrix are level indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ColumnKind {
    Continuous,
    Categorical { levels: Vec<String> },
}

impl ColumnKind {
    pub fn binary() -> Self {
        ColumnKind::Categorical {
            levels: vec!["0".to_string(), "1".to_string()],
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, ColumnKind::Categorical { .. })
    }

    pub fn n_levels(&self) -> Option<usize> {
        match self {
            ColumnKind::Continuous => None,
            ColumnKind::Categorical { levels } => Some(levels.len()),
        }
    }

    fn validate(&self) -> Result<()> {
        if let ColumnKind::Categorical { levels } = self {
            if levels.len() < 2 {
                return Err(Error::Schema(format!(
                    "categorical column needs >= 2 levels, got {}",
                    levels.len()
                )));
            }
            let distinct: BTreeSet<&String> = levels.iter().collect();
            if distinct.len() != levels.len() {
                return Err(Error::Schema("categorical levels must be unique".into()));
            }
        }
        Ok(())
    }
}

/// Survival dataset: covariates (column-major), per-column kinds, observed
/// times, event indicators and feature names. Immutable after construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dataset {
    /// Column-major covariate values; categorical entries are level indices.
    pub x: Vec<Vec<f64>>,
    pub kinds: Vec<ColumnKind>,
    pub time: Vec<f64>,
    pub event: Vec<u8>,
    pub names: Vec<String>,
}

impl Dataset {
    pub fn new(
        x: Vec<Vec<f64>>,
        kinds: Vec<ColumnKind>,
        time: Vec<f64>,
        event: Vec<u8>,
        names: Vec<String>,
    ) -> Result<Self> {
        let d = Dataset {
            x,
            kinds,
            time,
            event,
            names,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.time.len()
    }

    pub fn p(&self) -> usize {
        self.x.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let p = self.p();
        if self.kinds.len() != p || self.names.len() != p {
            return Err(Error::Dimension(format!(
                "kinds/names length must equal p={p}"
            )));
        }
        if self.event.len() != n {
            return Err(Error::Dimension("event length != time length".into()));
        }
        for (j, col) in self.x.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Dimension(format!(
                    "column {j} has {} rows, expected {n}",
                    col.len()
                )));
            }
        }
        for (i, &t) in self.time.iter().enumerate() {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::Parse {
                    row: i,
                    column: "time".into(),
                    message: format!("time must be positive and finite, got {t}"),
                });
            }
        }
        for (i, &e) in self.event.iter().enumerate() {
            if e > 1 {
                return Err(Error::Parse {
                    row: i,
                    column: "event".into(),
                    message: format!("event must be 0 or 1, got {e}"),
                });
            }
        }
        for (j, kind) in self.kinds.iter().enumerate() {
            kind.validate()?;
            if let ColumnKind::Categorical { levels } = kind {
                for (i, &v) in self.x[j].iter().enumerate() {
                    let idx = v as usize;
                    if v.fract() != 0.0 || v < 0.0 || idx >= levels.len() {
                        return Err(Error::Parse {
                            row: i,
                            column: self.names[j].clone(),
                            message: format!("invalid level index {v}"),
                        });
                    }
                }
            } else {
                for (i, &v) in self.x[j].iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            row: i,
                            column: self.names[j].clone(),
                            message: "non-finite covariate value".into(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Linear predictor x_i' beta over the stored covariate values.
    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        assert_eq!(beta.len(), self.p());
        let mut eta = vec![0.0; self.n()];
        for (j, col) in self.x.iter().enumerate() {
            let b = beta[j];
            if b != 0.0 {
                for (e, &v) in eta.iter_mut().zip(col.iter()) {
                    *e += b * v;
                }
            }
        }
        eta
    }
}

/// Numeric design matrix derived from a [`Dataset`], with a map from model
/// columns back to source features.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelMatrix {
    /// Column-major model columns, each of length n.
    pub cols: Vec<Vec<f64>>,
    /// `column_map[c]` = index of the source feature behind model column `c`.
    pub column_map: Vec<usize>,
    pub col_names: Vec<String>,
}

impl ModelMatrix {
    pub fn n(&self) -> usize {
        self.cols.first().map_or(0, |c| c.len())
    }

    pub fn q(&self) -> usize {
        self.cols.len()
    }

    /// Model columns grouped by source feature (p groups, each nonempty).
    pub fn feature_columns(&self, p: usize) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); p];
        for (c, &f) in self.column_map.iter().enumerate() {
            groups[f].push(c);
        }
        groups
    }

    /// Row subset (used for cross-validation folds).
    pub fn subset_rows(&self, rows: &[usize]) -> ModelMatrix {
        ModelMatrix {
            cols: self
                .cols
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
            column_map: self.column_map.clone(),
            col_names: self.col_names.clone(),
        }
    }

    pub fn from_columns(cols: Vec<Vec<f64>>) -> ModelMatrix {
        let q = cols.len();
        ModelMatrix {
            cols,
            column_map: (0..q).collect(),
            col_names: (0..q).map(|j| format!("x{j}")).collect(),
        }
    }
}

/// Encode a dataset as a numeric model matrix: continuous columns copied,
/// binary categoricals as a single 0/1 column, L-level categoricals as L-1
/// reference-coded indicators (reference = first level in label order).
pub fn to_model_matrix(d: &Dataset) -> ModelMatrix {
    encode_columns(&d.x, &d.kinds, &d.names)
}

/// Encoding core shared with knockoff-side matrices that are not full Datasets.
pub fn encode_columns(
    x: &[Vec<f64>],
    kinds: &[ColumnKind],
    names: &[String],
) -> ModelMatrix {
    let mut cols = Vec::new();
    let mut column_map = Vec::new();
    let mut col_names = Vec::new();
    for (j, kind) in kinds.iter().enumerate() {
        match kind {
            ColumnKind::Continuous => {
                cols.push(x[j].clone());
                column_map.push(j);
                col_names.push(names[j].clone());
            }
            ColumnKind::Categorical { levels } if levels.len() == 2 => {
                cols.push(x[j].clone());
                column_map.push(j);
                col_names.push(names[j].clone());
            }
            ColumnKind::Categorical { levels } => {
                for (l, label) in levels.iter().enumerate().skip(1) {
                    cols.push(
                        x[j].iter()
                            .map(|&v| if v as usize == l { 1.0 } else { 0.0 })
                            .collect(),
                    );
                    column_map.push(j);
                    col_names.push(format!("{}={}", names[j], label));
                }
            }
        }
    }
    ModelMatrix {
        cols,
        column_map,
        col_names,
    }
}

/// Declared kind of a CSV column, before level inference.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KindSpec {
    Continuous,
    /// Levels inferred from the data, sorted by label.
    Categorical,
    /// Levels fixed in advance; unknown labels in the data are schema errors.
    CategoricalLevels { levels: Vec<String> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: KindSpec,
}

/// Column-kind mapping for CSV ingestion: names the time and event columns
/// and declares the kind of each covariate column.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CsvSchema {
    pub time: String,
    pub event: String,
    pub columns: Vec<ColumnSpec>,
}

/// Outcome of a CSV load: the validated dataset plus the number of rows
/// dropped for missing values in used columns.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoadReport {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t == "NA" || t == "NaN" || t == "nan"
}

/// Load a CSV file into a [`Dataset`] under the given schema. Rows with a
/// missing value in any used column (covariates, time, event) are dropped;
/// the drop count is reported.
pub fn load_csv_dataset<P: AsRef<Path>>(path: P, schema: &CsvSchema) -> Result<LoadReport> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();

    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
    };
    let time_idx = col_index(&schema.time)?;
    let event_idx = col_index(&schema.event)?;
    let cov_idx: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| col_index(&c.name))
        .collect::<Result<_>>()?;

    let mut records: Vec<Vec<String>> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        records.push(rec.iter().map(|s| s.trim().to_string()).collect());
    }

    // complete-case filter over used columns
    let used: Vec<usize> = cov_idx
        .iter()
        .copied()
        .chain([time_idx, event_idx])
        .collect();
    let mut kept: Vec<usize> = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        if used.iter().all(|&c| c < rec.len() && !is_missing(&rec[c])) {
            kept.push(i);
        }
    }
    let dropped_rows = records.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::EmptyData("no usable rows after filtering".into()));
    }

    // resolve categorical levels
    let mut kinds: Vec<ColumnKind> = Vec::with_capacity(schema.columns.len());
    for (spec, &ci) in schema.columns.iter().zip(&cov_idx) {
        let kind = match &spec.kind {
            KindSpec::Continuous => ColumnKind::Continuous,
            KindSpec::CategoricalLevels { levels } => ColumnKind::Categorical {
                levels: levels.clone(),
            },
            KindSpec::Categorical => {
                let observed: BTreeSet<String> =
                    kept.iter().map(|&i| records[i][ci].clone()).collect();
                ColumnKind::Categorical {
                    levels: observed.into_iter().collect(),
                }
            }
        };
        kind.validate()
            .map_err(|e| Error::Schema(format!("column '{}': {e}", spec.name)))?;
        kinds.push(kind);
    }

    let parse_f64 = |i: usize, ci: usize, name: &str| -> Result<f64> {
        records[i][ci].parse::<f64>().map_err(|_| Error::Parse {
            row: i,
            column: name.to_string(),
            message: format!("malformed numeric cell '{}'", records[i][ci]),
        })
    };

    let n = kept.len();
    let mut x: Vec<Vec<f64>> = vec![Vec::with_capacity(n); schema.columns.len()];
    let mut time = Vec::with_capacity(n);
    let mut event = Vec::with_capacity(n);
    for &i in &kept {
        time.push(parse_f64(i, time_idx, &schema.time)?);
        let ev = parse_f64(i, event_idx, &schema.event)?;
        if ev != 0.0 && ev != 1.0 {
            return Err(Error::Parse {
                row: i,
                column: schema.event.clone(),
                message: format!("event must be 0 or 1, got {ev}"),
            });
        }
        event.push(ev as u8);
        for (j, (spec, &ci)) in schema.columns.iter().zip(&cov_idx).enumerate() {
            match &kinds[j] {
                ColumnKind::Continuous => x[j].push(parse_f64(i, ci, &spec.name)?),
                ColumnKind::Categorical { levels } => {
                    let label = &records[i][ci];
                    let idx = levels.iter().position(|l| l == label).ok_or_else(|| {
                        Error::Schema(format!(
                            "unknown level '{label}' for column '{}' at row {i}",
                            spec.name
                        ))
                    })?;
                    x[j].push(idx as f64);
                }
            }
        }
    }

    let names = schema.columns.iter().map(|c| c.name.clone()).collect();
    let dataset = Dataset::new(x, kinds, time, event, names)?;
    Ok(LoadReport {
        dataset,
        dropped_rows,
    })
}
