//! Primary biliary cirrhosis pipeline: preprocess the clinical table exported
//! from the R `survival` package (see data/README.md for the export recipe)
//! into the 20-feature dataset, and run the repeated derandomized-selection
//! frequency experiment.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, Dataset};
use crate::derandomize::{derandomized_select, DerandomConfig};
use crate::error::{Error, Result};
use crate::knockoff::KnockoffOptions;
use crate::seed;
use crate::solver::FitOptions;

/// Binary features, in output order.
pub const BINARY_FEATURES: [&str; 10] = [
    "Ascites",
    "Edema-resistant",
    "Edema-treated",
    "Hepato",
    "Sex",
    "Spiders",
    "Stage-2",
    "Stage-3",
    "Stage-4",
    "Trt",
];

/// Continuous features, in output order.
pub const CONTINUOUS_FEATURES: [&str; 10] = [
    "Age", "Albumin", "Alk-phos", "Ast", "Bili", "Chol", "Copper", "Platelet", "Protime", "Trig",
];

/// Expected sample size after preprocessing the source table.
pub const EXPECTED_N: usize = 258;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PbcConfig {
    pub runs: usize,
    pub k: usize,
    pub alpha: f64,
    pub eta: f64,
    pub m: usize,
    pub master_seed: u64,
}

impl Default for PbcConfig {
    fn default() -> Self {
        PbcConfig {
            runs: 200,
            k: 3,
            alpha: 0.1,
            eta: 0.8,
            m: 30,
            master_seed: 1,
        }
    }
}

/// Preprocessing outcome: the dataset plus a discrepancy note when the
/// achieved n differs from the published 258.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PbcReport {
    pub dataset: Dataset,
    pub dropped_missing: usize,
    pub dropped_transplant: usize,
    pub n_discrepancy: Option<String>,
}

/// Selection frequencies over repeated derandomized runs, ordered descending,
/// plus the run-by-feature indicator matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrequencyTable {
    /// (feature name, selection frequency), sorted by descending frequency.
    pub frequencies: Vec<(String, f64)>,
    /// indicator[r][j] = 1 if run r selected feature j (dataset order).
    pub indicator: Vec<Vec<u8>>,
    pub feature_names: Vec<String>,
}

const SOURCE_COVARIATES: [&str; 17] = [
    "trt", "age", "sex", "ascites", "hepato", "spiders", "edema", "bili", "chol", "albumin",
    "copper", "alk.phos", "ast", "trig", "platelet", "protime", "stage",
];

fn missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t == "NA" || t == "NaN"
}

/// Build the 20-feature dataset from the raw clinical table: transplant
/// recipients (status = 1) are excluded, the event is death (status = 2),
/// rows with missing values in any used column are dropped, edema (0/0.5/1)
/// becomes two indicators and stage (1-4) becomes three.
pub fn preprocess_pbc<P: AsRef<Path>>(path: P) -> Result<PbcReport> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let find = |name: &str| -> Result<usize> {
        // accept '.'/'_' spelling variants from different exporters
        headers
            .iter()
            .position(|h| h == name || h.replace('_', ".") == name)
            .ok_or_else(|| Error::Schema(format!("required column '{name}' missing")))
    };
    let time_i = find("time")?;
    let status_i = find("status")?;
    let cov_i: Vec<usize> = SOURCE_COVARIATES
        .iter()
        .map(|c| find(c))
        .collect::<Result<_>>()?;

    let mut records: Vec<Vec<String>> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        records.push(rec.iter().map(|s| s.trim().to_string()).collect());
    }

    let mut dropped_missing = 0usize;
    let mut dropped_transplant = 0usize;
    let mut rows: Vec<usize> = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        if missing(&rec[status_i]) || missing(&rec[time_i]) {
            dropped_missing += 1;
            continue;
        }
        let status: f64 = rec[status_i].parse().map_err(|_| Error::Parse {
            row: i,
            column: "status".into(),
            message: format!("bad status '{}'", rec[status_i]),
        })?;
        if status == 1.0 {
            dropped_transplant += 1;
            continue;
        }
        if cov_i.iter().any(|&c| missing(&rec[c])) {
            dropped_missing += 1;
            continue;
        }
        rows.push(i);
    }
    if rows.is_empty() {
        return Err(Error::EmptyData("no usable rows in PBC table".into()));
    }

    let get = |i: usize, c: usize, name: &str| -> Result<f64> {
        let cell = &records[i][c];
        if name == "sex" {
            return match cell.as_str() {
                "m" | "M" => Ok(1.0),
                "f" | "F" => Ok(0.0),
                other => other.parse().map_err(|_| Error::Parse {
                    row: i,
                    column: "sex".into(),
                    message: format!("bad sex code '{other}'"),
                }),
            };
        }
        cell.parse().map_err(|_| Error::Parse {
            row: i,
            column: name.into(),
            message: format!("malformed numeric cell '{cell}'"),
        })
    };
    let cov = |name: &str| -> usize {
        cov_i[SOURCE_COVARIATES.iter().position(|&c| c == name).unwrap()]
    };

    let n = rows.len();
    let p = 20;
    let mut x: Vec<Vec<f64>> = vec![Vec::with_capacity(n); p];
    let mut time = Vec::with_capacity(n);
    let mut event = Vec::with_capacity(n);
    let names: Vec<String> = BINARY_FEATURES
        .iter()
        .chain(CONTINUOUS_FEATURES.iter())
        .map(|s| s.to_string())
        .collect();

    for &i in &rows {
        time.push(get(i, time_i, "time")?);
        let status = get(i, status_i, "status")?;
        event.push(u8::from(status == 2.0));

        let edema = get(i, cov("edema"), "edema")?;
        let stage = get(i, cov("stage"), "stage")?;
        let trt = get(i, cov("trt"), "trt")?;
        let vals = [
            get(i, cov("ascites"), "ascites")?,     // Ascites
            f64::from(edema == 1.0),                // Edema-resistant
            f64::from(edema == 0.5),                // Edema-treated
            get(i, cov("hepato"), "hepato")?,       // Hepato
            get(i, cov("sex"), "sex")?,             // Sex (1 male)
            get(i, cov("spiders"), "spiders")?,     // Spiders
            f64::from(stage == 2.0),                // Stage-2
            f64::from(stage == 3.0),                // Stage-3
            f64::from(stage == 4.0),                // Stage-4
            f64::from(trt == 2.0),                  // Trt (1 placebo)
            get(i, cov("age"), "age")?,             // Age
            get(i, cov("albumin"), "albumin")?,     // Albumin
            get(i, cov("alk.phos"), "alk.phos")?,   // Alk-phos
            get(i, cov("ast"), "ast")?,             // Ast
            get(i, cov("bili"), "bili")?,           // Bili
            get(i, cov("chol"), "chol")?,           // Chol
            get(i, cov("copper"), "copper")?,       // Copper
            get(i, cov("platelet"), "platelet")?,   // Platelet
            get(i, cov("protime"), "protime")?,     // Protime
            get(i, cov("trig"), "trig")?,           // Trig
        ];
        for (j, &v) in vals.iter().enumerate() {
            x[j].push(v);
        }
    }

    let mut kinds = vec![ColumnKind::binary(); 10];
    kinds.extend(vec![ColumnKind::Continuous; 10]);
    let dataset = Dataset::new(x, kinds, time, event, names)?;
    let n_discrepancy = if dataset.n() != EXPECTED_N {
        Some(format!(
            "preprocessing yielded n={} (expected {EXPECTED_N}); check the source export",
            dataset.n()
        ))
    } else {
        None
    };
    Ok(PbcReport {
        dataset,
        dropped_missing,
        dropped_transplant,
        n_discrepancy,
    })
}

/// Repeated derandomized selection with run-specific seeds; frequencies are
/// column means of the indicator matrix.
pub fn pbc_frequency_experiment(
    d: &Dataset,
    cfg: &PbcConfig,
    fit_opts: &FitOptions,
    ko_opts: &KnockoffOptions,
) -> Result<FrequencyTable> {
    if cfg.runs < 1 {
        return Err(Error::Config("runs must be >= 1".into()));
    }
    let p = d.p();
    let indicator: Vec<Vec<u8>> = (0..cfg.runs)
        .into_par_iter()
        .map(|r| {
            let mut dcfg = DerandomConfig::new(cfg.k, cfg.alpha, seed::mix(cfg.master_seed, r as u64));
            dcfg.m = cfg.m;
            dcfg.eta = cfg.eta;
            let res = derandomized_select(d, &dcfg, fit_opts, ko_opts).map_err(|e| {
                Error::RunFailed {
                    run: r,
                    source: Box::new(e),
                }
            })?;
            let mut row = vec![0u8; p];
            for &j in &res.selected {
                row[j] = 1;
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let mut frequencies: Vec<(String, f64)> = (0..p)
        .map(|j| {
            let f = indicator.iter().map(|row| row[j] as usize).sum::<usize>() as f64
                / cfg.runs as f64;
            (d.names[j].clone(), f)
        })
        .collect();
    frequencies.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

    Ok(FrequencyTable {
        frequencies,
        indicator,
        feature_names: d.names.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const HEADER: &str = "id,time,status,trt,age,sex,ascites,hepato,spiders,edema,bili,chol,albumin,copper,alk.phos,ast,trig,platelet,protime,stage";

    fn row(id: usize, time: f64, status: u8, edema: f64, stage: u8, trt: u8) -> String {
        format!(
            "{id},{time},{status},{trt},50.1,f,0,1,0,{edema},1.4,261,3.5,54,1718,100.5,90,220,10.6,{stage}"
        )
    }

    fn write_csv(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "{HEADER}").unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn census_is_20_features_10_binary_10_continuous() {
        let lines: Vec<String> = (0..12)
            .map(|i| row(i, 100.0 + i as f64, (i % 2) as u8 * 2, 0.0, 3, 1))
            .collect();
        let f = write_csv(&lines);
        let rep = preprocess_pbc(f.path()).unwrap();
        let d = &rep.dataset;
        assert_eq!(d.p(), 20);
        let expected: Vec<String> = BINARY_FEATURES
            .iter()
            .chain(CONTINUOUS_FEATURES.iter())
            .map(|s| s.to_string())
            .collect();
        assert_eq!(d.names, expected);
        assert_eq!(d.kinds.iter().filter(|k| k.is_categorical()).count(), 10);
    }

    #[test]
    fn transplant_rows_are_excluded_and_event_is_death() {
        let lines = vec![
            row(1, 100.0, 2, 0.0, 3, 1),
            row(2, 200.0, 1, 0.0, 3, 1), // transplant: dropped
            row(3, 300.0, 0, 0.0, 3, 1),
        ];
        let f = write_csv(&lines);
        let rep = preprocess_pbc(f.path()).unwrap();
        assert_eq!(rep.dataset.n(), 2);
        assert_eq!(rep.dropped_transplant, 1);
        assert_eq!(rep.dataset.event, vec![1, 0]);
    }

    #[test]
    fn edema_and_stage_codings() {
        let lines = vec![
            row(1, 100.0, 2, 0.5, 4, 2),
            row(2, 200.0, 0, 1.0, 2, 1),
            row(3, 300.0, 0, 0.0, 1, 1),
        ];
        let f = write_csv(&lines);
        let d = preprocess_pbc(f.path()).unwrap().dataset;
        let idx = |name: &str| d.names.iter().position(|n| n == name).unwrap();
        // row 1: edema 0.5 -> treated=1, resistant=0; stage 4; trt placebo
        assert_eq!(d.x[idx("Edema-treated")][0], 1.0);
        assert_eq!(d.x[idx("Edema-resistant")][0], 0.0);
        assert_eq!(d.x[idx("Stage-2")][0], 0.0);
        assert_eq!(d.x[idx("Stage-3")][0], 0.0);
        assert_eq!(d.x[idx("Stage-4")][0], 1.0);
        assert_eq!(d.x[idx("Trt")][0], 1.0);
        // row 2: edema 1.0 -> resistant; stage 2
        assert_eq!(d.x[idx("Edema-resistant")][1], 1.0);
        assert_eq!(d.x[idx("Edema-treated")][1], 0.0);
        assert_eq!(d.x[idx("Stage-2")][1], 1.0);
        // row 3: stage 1 -> all stage indicators zero
        assert_eq!(d.x[idx("Stage-2")][2], 0.0);
        assert_eq!(d.x[idx("Stage-3")][2], 0.0);
        assert_eq!(d.x[idx("Stage-4")][2], 0.0);
    }

    #[test]
    fn missing_covariate_rows_dropped() {
        let mut lines = vec![row(1, 100.0, 2, 0.0, 3, 1), row(2, 200.0, 0, 0.0, 3, 1)];
        lines[1] = lines[1].replace(",261,", ",NA,");
        let f = write_csv(&lines);
        let rep = preprocess_pbc(f.path()).unwrap();
        assert_eq!(rep.dataset.n(), 1);
        assert_eq!(rep.dropped_missing, 1);
        assert!(rep.n_discrepancy.is_some());
    }

    #[test]
    fn missing_required_column_is_schema_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "id,time,status").unwrap();
        writeln!(f, "1,100,2").unwrap();
        assert!(matches!(
            preprocess_pbc(f.path()).unwrap_err(),
            Error::Schema(_)
        ));
    }
}
