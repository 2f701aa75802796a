//! Aggregation of the base knockoff selection over M independent knockoff
//! realizations: per-feature selection probabilities and the eta-superlevel
//! final set. Per-run seeds are split from the master seed, so the runs can
//! execute in any order (or in parallel) with identical results.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::filter::{base_knockoff_selection, FilterConfig, SelectionResult, VPolicy};
use crate::knockoff::KnockoffOptions;
use crate::seed;
use crate::solver::FitOptions;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DerandomConfig {
    pub m: usize,
    pub eta: f64,
    pub k: usize,
    pub alpha: f64,
    pub master_seed: u64,
    /// When set, overrides the NB-aggregate allowance used per run.
    pub v_override: Option<usize>,
}

impl DerandomConfig {
    pub fn new(k: usize, alpha: f64, master_seed: u64) -> Self {
        DerandomConfig {
            m: 30,
            eta: 0.8,
            k,
            alpha,
            master_seed,
            v_override: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::Config("M must be >= 1".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Config("eta must be in (0,1]".into()));
        }
        FilterConfig {
            k: self.k,
            alpha: self.alpha,
            v_policy: VPolicy::Prop1,
        }
        .validate()
    }

    fn filter_config(&self) -> FilterConfig {
        let v_policy = match self.v_override {
            Some(v) => VPolicy::Fixed { v },
            None => VPolicy::DerandomizedNb {
                eta: self.eta,
                m: self.m,
            },
        };
        FilterConfig {
            k: self.k,
            alpha: self.alpha,
            v_policy,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DerandomizedResult {
    /// Selection frequency of each feature over the M runs.
    pub pi_hat: Vec<f64>,
    /// Features with pi_hat >= eta.
    pub selected: Vec<usize>,
    pub per_run: Vec<SelectionResult>,
    pub v_used: usize,
}

/// Selection frequencies over a list of per-run results.
pub fn selection_probabilities(runs: &[SelectionResult], p: usize) -> Vec<f64> {
    let m = runs.len() as f64;
    let mut pi = vec![0.0; p];
    for run in runs {
        for &j in &run.selected {
            pi[j] += 1.0;
        }
    }
    for v in pi.iter_mut() {
        *v /= m;
    }
    pi
}

/// Run the base selection over M knockoff realizations and aggregate.
/// Deterministic given the master seed; any failing run aborts the whole
/// aggregation (silently dropping runs would invalidate the calibration).
pub fn derandomized_select(
    d: &Dataset,
    cfg: &DerandomConfig,
    fit_opts: &FitOptions,
    ko_opts: &KnockoffOptions,
) -> Result<DerandomizedResult> {
    cfg.validate()?;
    let filter_cfg = cfg.filter_config();
    let v_used = filter_cfg.resolve_v();

    let per_run: Vec<SelectionResult> = (0..cfg.m)
        .into_par_iter()
        .map(|m| {
            let run_seed = seed::mix(cfg.master_seed, m as u64);
            base_knockoff_selection(d, run_seed, &filter_cfg, fit_opts, ko_opts).map_err(|e| {
                Error::RunFailed {
                    run: m,
                    source: Box::new(e),
                }
            })
        })
        .collect::<Result<_>>()?;

    let pi_hat = selection_probabilities(&per_run, d.p());
    let selected: Vec<usize> = (0..d.p()).filter(|&j| pi_hat[j] >= cfg.eta).collect();
    Ok(DerandomizedResult {
        pi_hat,
        selected,
        per_run,
        v_used,
    })
}
