//! Sequential knockoff generation for mixed continuous/categorical
//! covariates: column by column, model the conditional distribution of X_j
//! given the other originals and the knockoffs generated so far, then sample
//! the knockoff entry row-wise (Normal for continuous columns, multinomial
//! over levels for categorical ones). The response never enters.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{encode_columns, ColumnKind, Dataset, ModelMatrix};
use crate::error::{Error, Result};
use crate::seed;
use crate::solver::{
    coordinate_descent_fit, cv_select_penalty, lambda_max, Coefficients, FitOptions, Response,
};

/// One knockoff copy of a covariate matrix (column-major, kinds identical to
/// the source dataset).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KnockoffMatrix {
    pub x_tilde: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Options for the conditional fits inside knockoff generation. The paths
/// here only feed cross-validated penalty selection, so a coarser grid than
/// the main Cox path is enough.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KnockoffOptions {
    pub folds: usize,
    pub fit: FitOptions,
}

impl Default for KnockoffOptions {
    fn default() -> Self {
        KnockoffOptions {
            folds: 10,
            fit: FitOptions {
                n_lambda: 50,
                lambda_min_ratio: 0.05,
                tol: 1e-6,
                max_iter: 100_000,
                standardize: true,
            },
        }
    }
}

/// Independent Normal draws per row at the fitted conditional means.
pub fn sample_continuous_conditional(mu: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dist = Normal::new(0.0, sigma).expect("sigma must be positive");
    mu.iter().map(|&m| m + dist.sample(rng)).collect()
}

/// Independent categorical draws per row; `probs[i]` must be a probability
/// vector over levels.
pub fn sample_categorical_conditional(
    probs: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(probs.len());
    for (i, row) in probs.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-8 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::Contract(format!(
                "row {i} is not a probability vector (sum={sum})"
            )));
        }
        let u: f64 = rng.gen::<f64>() * sum;
        let mut acc = 0.0;
        let mut level = row.len() - 1;
        for (l, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                level = l;
                break;
            }
        }
        out.push(level as f64);
    }
    Ok(out)
}

/// Fit a penalized conditional model of `resp` on `mm` at a cross-validated
/// penalty and return the coefficients.
fn conditional_fit(
    resp: &Response,
    mm: &ModelMatrix,
    opts: &KnockoffOptions,
    cv_seed: u64,
) -> Result<Coefficients> {
    if opts.fit.standardize {
        // Keep the CV-selected penalty, the warm path grid and the fits on
        // one scale by standardizing here once; map the model back at the end.
        let (smm, scales) = crate::solver::cd::standardized(mm);
        let inner = KnockoffOptions {
            folds: opts.folds,
            fit: FitOptions {
                standardize: false,
                ..opts.fit.clone()
            },
        };
        let mut coef = conditional_fit(resp, &smm, &inner, cv_seed)?;
        for block in coef.slopes.iter_mut() {
            for (b, s) in block.iter_mut().zip(scales.iter()) {
                *b /= s;
            }
        }
        return Ok(coef);
    }
    let lambda = cv_select_penalty(resp, mm, opts.folds, cv_seed, &opts.fit)?;
    // warm down the grid to the selected penalty
    let lmax = lambda_max(resp, mm)?;
    let mut warm = Coefficients::zeros(resp, mm.q());
    if lmax > 0.0 {
        let nl = opts.fit.n_lambda;
        for t in 0..nl {
            let l = lmax * opts.fit.lambda_min_ratio.powf(t as f64 / (nl - 1) as f64);
            if l < lambda * (1.0 - 1e-12) {
                break;
            }
            let (coef, _) = coordinate_descent_fit(resp, mm, l, Some(&warm), &opts.fit)?;
            warm = coef;
        }
    }
    Ok(warm)
}

fn population_sd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Generate one knockoff copy of the covariates of `d`. Deterministic given
/// the seed; consumes only the covariates, never the outcome.
pub fn generate_knockoffs(d: &Dataset, seed: u64, opts: &KnockoffOptions) -> Result<KnockoffMatrix> {
    let n = d.n();
    let p = d.p();
    if n < 10 {
        return Err(Error::Contract("need n >= 10 for knockoff generation".into()));
    }
    let mut x_tilde: Vec<Vec<f64>> = Vec::with_capacity(p);

    for j in 0..p {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(seed, j as u64));
        let cv_seed = seed::mix(seed, (p + j) as u64);

        // predictors: all original columns except j, then knockoffs 1..j-1
        let mut pred_cols: Vec<Vec<f64>> = Vec::new();
        let mut pred_kinds: Vec<ColumnKind> = Vec::new();
        let mut pred_names: Vec<String> = Vec::new();
        for l in 0..p {
            if l != j {
                pred_cols.push(d.x[l].clone());
                pred_kinds.push(d.kinds[l].clone());
                pred_names.push(d.names[l].clone());
            }
        }
        for (l, col) in x_tilde.iter().enumerate() {
            pred_cols.push(col.clone());
            pred_kinds.push(d.kinds[l].clone());
            pred_names.push(format!("{}.tilde", d.names[l]));
        }
        let mm = encode_columns(&pred_cols, &pred_kinds, &pred_names);

        let col = match &d.kinds[j] {
            ColumnKind::Continuous => {
                let y = d.x[j].clone();
                let (mu, df) = if mm.q() == 0 {
                    let mean = y.iter().sum::<f64>() / n as f64;
                    (vec![mean; n], 0usize)
                } else {
                    let resp = Response::Gaussian(y.clone());
                    let coef = conditional_fit(&resp, &mm, opts, cv_seed).map_err(|e| {
                        Error::KnockoffColumn {
                            column: j,
                            name: d.names[j].clone(),
                            source: Box::new(e),
                        }
                    })?;
                    let df = coef.beta().iter().filter(|&&b| b != 0.0).count();
                    let mut mu = vec![coef.intercepts[0]; n];
                    for (c, &b) in coef.beta().iter().enumerate() {
                        if b != 0.0 {
                            for i in 0..n {
                                mu[i] += b * mm.cols[c][i];
                            }
                        }
                    }
                    (mu, df)
                };
                let rss: f64 = y.iter().zip(mu.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
                let denom = if n > df + 1 { (n - df - 1) as f64 } else { n as f64 };
                let sigma_floor = 1e-8 * population_sd(&y);
                let sigma = (rss / denom).sqrt().max(sigma_floor).max(f64::MIN_POSITIVE);
                sample_continuous_conditional(&mu, sigma, &mut rng)
            }
            ColumnKind::Categorical { levels } => {
                let classes = levels.len();
                let y: Vec<usize> = d.x[j].iter().map(|&v| v as usize).collect();
                let probs: Vec<Vec<f64>> = if mm.q() == 0 {
                    let mut counts = vec![0.0; classes];
                    for &c in &y {
                        counts[c] += 1.0;
                    }
                    let marginal: Vec<f64> = counts.iter().map(|&c| c / n as f64).collect();
                    vec![marginal; n]
                } else {
                    let resp = Response::Multinomial { y, classes };
                    let coef = conditional_fit(&resp, &mm, opts, cv_seed).map_err(|e| {
                        Error::KnockoffColumn {
                            column: j,
                            name: d.names[j].clone(),
                            source: Box::new(e),
                        }
                    })?;
                    class_probabilities(&mm, &coef, classes)
                };
                sample_categorical_conditional(&probs, &mut rng)?
            }
        };
        x_tilde.push(col);
    }

    Ok(KnockoffMatrix { x_tilde, seed })
}

/// Row-wise class probabilities of a reference-coded multinomial fit.
fn class_probabilities(mm: &ModelMatrix, coef: &Coefficients, classes: usize) -> Vec<Vec<f64>> {
    let n = mm.n();
    let mut etas = vec![vec![0.0; n]; classes - 1];
    for (b, eta) in etas.iter_mut().enumerate() {
        let b0 = coef.intercepts[b];
        for e in eta.iter_mut() {
            *e = b0;
        }
        for (c, &s) in coef.slopes[b].iter().enumerate() {
            if s != 0.0 {
                for i in 0..n {
                    eta[i] += s * mm.cols[c][i];
                }
            }
        }
    }
    (0..n)
        .map(|i| {
            let mut m = 0.0f64;
            for eta in &etas {
                m = m.max(eta[i]);
            }
            let mut denom = (-m).exp();
            for eta in &etas {
                denom += (eta[i] - m).exp();
            }
            let mut row = Vec::with_capacity(classes);
            row.push((-m).exp() / denom);
            for eta in &etas {
                row.push((eta[i] - m).exp() / denom);
            }
            row
        })
        .collect()
}

/// Source covariates and their knockoffs side by side as one 2p-feature
/// dataset; knockoff features carry a ".tilde" name suffix.
pub fn augmented_dataset(d: &Dataset, ko: &KnockoffMatrix) -> Dataset {
    let mut x = d.x.clone();
    x.extend(ko.x_tilde.iter().cloned());
    let mut kinds = d.kinds.clone();
    kinds.extend(d.kinds.iter().cloned());
    let mut names = d.names.clone();
    names.extend(d.names.iter().map(|s| format!("{s}.tilde")));
    Dataset {
        x,
        kinds,
        time: d.time.clone(),
        event: d.event.clone(),
        names,
    }
}
