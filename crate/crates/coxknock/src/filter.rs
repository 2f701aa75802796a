//! Knockoff W statistics, negative-binomial calibration of the allowance
//! parameter v, and the k-FWER threshold selection for one base run.
//!
//! Entry lambdas of a feature and its knockoff give Z and Z-tilde; the pair
//! is summarized as W = max(Z, Z~) with sign chi = sgn(Z - Z~). Under the
//! null the sign is a fair coin, so the count of negatives above any
//! threshold admitting v negatives is stochastically bounded by a
//! NegativeBinomial(v, 1/2) draw; choosing v so that its upper tail at k
//! stays below alpha bounds P(V >= k).

use serde::{Deserialize, Serialize};

use crate::data::{to_model_matrix, Dataset};
use crate::error::Result;
use crate::knockoff::{augmented_dataset, generate_knockoffs, KnockoffOptions};
use crate::solver::{feature_entry_lambdas, lasso_path, FitOptions, Response};

/// Per-feature knockoff statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WStatistics {
    pub z: Vec<f64>,
    pub z_tilde: Vec<f64>,
    pub w: Vec<f64>,
    /// -1, 0 or +1 per feature.
    pub chi: Vec<i8>,
}

/// How the allowance v is chosen for one base-procedure run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum VPolicy {
    /// Largest v with an exact NB(v, 1/2) upper tail at k below alpha.
    Prop1,
    /// Aggregation-aware rule for M-run derandomized selection.
    DerandomizedNb { eta: f64, m: usize },
    Fixed { v: usize },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FilterConfig {
    pub k: usize,
    pub alpha: f64,
    pub v_policy: VPolicy,
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if self.k < 1 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must be in (0,1)".into()));
        }
        if let VPolicy::DerandomizedNb { eta, m } = self.v_policy {
            if !(eta > 0.0 && eta <= 1.0) || m < 1 {
                return Err(Error::Config("need eta in (0,1] and M >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn resolve_v(&self) -> usize {
        match self.v_policy {
            VPolicy::Prop1 => compute_v_single(self.k, self.alpha),
            VPolicy::DerandomizedNb { eta, m } => {
                compute_v_derandomized(self.k, self.alpha, eta, m)
            }
            VPolicy::Fixed { v } => v,
        }
    }
}

/// Result of one thresholded selection.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected: Vec<usize>,
    /// None encodes "no finite threshold" (empty selection forced by ties,
    /// or the strict v=0 rule with nothing above the negatives).
    pub threshold: Option<f64>,
    pub v_used: usize,
    pub n_negatives_above: usize,
}

/// W = max(Z, Z~), chi = sgn(Z - Z~) per feature.
pub fn knockoff_w_stats(z: &[f64], z_tilde: &[f64]) -> WStatistics {
    assert_eq!(z.len(), z_tilde.len());
    let w = z
        .iter()
        .zip(z_tilde.iter())
        .map(|(&a, &b)| a.max(b))
        .collect();
    let chi = z
        .iter()
        .zip(z_tilde.iter())
        .map(|(&a, &b)| {
            if a > b {
                1
            } else if a < b {
                -1
            } else {
                0
            }
        })
        .collect();
    WStatistics {
        z: z.to_vec(),
        z_tilde: z_tilde.to_vec(),
        w,
        chi,
    }
}

/// Exact upper tail P(N >= k) for N ~ NegativeBinomial(v successes, p=1/2),
/// i.e. 1 - sum_{i<k} 2^{-i-v} C(i+v-1, i). By convention v=0 gives 0.
pub fn nb_tail(v: usize, k: usize) -> f64 {
    assert!(k >= 1);
    if v == 0 {
        return 0.0;
    }
    // pmf recurrence in log space: pmf(0) = 2^-v,
    // pmf(i+1) = pmf(i) * (i+v) / (i+1) / 2
    let mut log_pmf = -(v as f64) * std::f64::consts::LN_2;
    let mut cdf = 0.0f64;
    for i in 0..k {
        cdf += log_pmf.exp();
        log_pmf += ((i + v) as f64 / (i + 1) as f64).ln() - std::f64::consts::LN_2;
    }
    (1.0 - cdf).max(0.0)
}

/// Largest v >= 0 with nb_tail(v, k) <= alpha. The tail is increasing in v,
/// so v=0 is always feasible and an upward scan terminates.
pub fn compute_v_single(k: usize, alpha: f64) -> usize {
    let mut v = 0usize;
    while nb_tail(v + 1, k) <= alpha {
        v += 1;
    }
    v
}

/// Allowance for the derandomized procedure: selection requires selection
/// frequency >= eta over M runs, so k final false discoveries force the
/// aggregate count of per-run false selections to reach ceil(eta*M*k); the
/// per-run counts above threshold are each bounded by NB(v, 1/2), and their
/// sum by NB(M*v, 1/2). Returns the largest v with the aggregate tail at
/// that target below alpha.
pub fn compute_v_derandomized(k: usize, alpha: f64, eta: f64, m: usize) -> usize {
    assert!(eta > 0.0 && eta <= 1.0 && m >= 1 && k >= 1);
    let target = (eta * m as f64 * k as f64).ceil() as usize;
    let mut v = 0usize;
    while nb_tail(m * (v + 1), target.max(1)) <= alpha {
        v += 1;
    }
    v
}

/// Threshold selection for one run. Sorting is conceptual: the threshold is
/// computed from the multiset of (W, chi) pairs, so the result is invariant
/// to input order. chi=0 features are never selected and never counted as
/// negatives. At tied W values a negative blocks tied positives.
pub fn threshold_select(stats: &WStatistics, v: usize) -> SelectionResult {
    let p = stats.w.len();
    let negs: Vec<f64> = (0..p)
        .filter(|&j| stats.chi[j] == -1)
        .map(|j| stats.w[j])
        .collect();

    // smallest W strictly above x among all entries, if any
    let next_above = |x: f64| -> Option<f64> {
        stats
            .w
            .iter()
            .cloned()
            .filter(|&w| w > x)
            .fold(None, |acc: Option<f64>, w| {
                Some(acc.map_or(w, |a: f64| a.min(w)))
            })
    };

    let threshold: Option<f64> = if v == 0 {
        if negs.is_empty() {
            // select every positive; smallest W works as the threshold
            stats.w.iter().cloned().fold(None, |acc, w| {
                Some(acc.map_or(w, |a: f64| a.min(w)))
            })
        } else {
            let wmax_neg = negs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            next_above(wmax_neg)
        }
    } else if negs.len() < v {
        // fewer than v negatives: threshold falls to the smallest statistic
        stats.w.iter().cloned().fold(None, |acc, w| {
            Some(acc.map_or(w, |a: f64| a.min(w)))
        })
    } else {
        let mut sorted = negs.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let wv = sorted[v - 1];
        if sorted.len() > v && sorted[v] == wv {
            // the (v+1)-th negative ties the v-th: move strictly above
            next_above(wv)
        } else {
            Some(wv)
        }
    };

    let (selected, n_negatives_above) = match threshold {
        None => (Vec::new(), 0),
        Some(t) => {
            let selected: Vec<usize> = (0..p)
                .filter(|&j| stats.chi[j] == 1 && stats.w[j] >= t)
                .collect();
            let n_neg = (0..p)
                .filter(|&j| stats.chi[j] == -1 && stats.w[j] >= t)
                .count();
            (selected, n_neg)
        }
    };

    SelectionResult {
        selected,
        threshold,
        v_used: v,
        n_negatives_above,
    }
}

/// One base-procedure run: generate a knockoff copy, fit the Cox lasso path
/// on the augmented design, split entry lambdas into (Z, Z~) and threshold.
pub fn base_knockoff_selection(
    d: &Dataset,
    seed: u64,
    cfg: &FilterConfig,
    fit_opts: &FitOptions,
    ko_opts: &KnockoffOptions,
) -> Result<SelectionResult> {
    cfg.validate()?;
    let stats = base_knockoff_stats(d, seed, fit_opts, ko_opts)?;
    Ok(threshold_select(&stats, cfg.resolve_v()))
}

/// Statistics half of the base run, exposed for diagnostics and validity
/// checks.
pub fn base_knockoff_stats(
    d: &Dataset,
    seed: u64,
    fit_opts: &FitOptions,
    ko_opts: &KnockoffOptions,
) -> Result<WStatistics> {
    let p = d.p();
    let ko = generate_knockoffs(d, seed, ko_opts)?;
    let aug = augmented_dataset(d, &ko);
    let mm = to_model_matrix(&aug);
    let resp = Response::Cox {
        time: aug.time.clone(),
        event: aug.event.clone(),
    };
    let path = lasso_path(&resp, &mm, fit_opts)?;
    let z_all = feature_entry_lambdas(&path, &mm, aug.p());
    Ok(knockoff_w_stats(&z_all[..p], &z_all[p..]))
}
