//! Pathwise L1-penalized estimation for three likelihood families: Cox
//! partial likelihood (Breslow ties), Gaussian least squares and multinomial
//! logistic regression (reference-class coding). All losses are mean-scaled
//! (divided by n) so penalty levels are comparable across sample sizes.

pub(crate) mod cd;
mod cv;
mod families;

pub use cd::{coordinate_descent_fit, lambda_max, lasso_path};
pub use cv::{cv_folds, cv_select_penalty};
pub use families::{negative_log_likelihood, score};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::data::ModelMatrix;

/// Likelihood family of a penalized fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    CoxBreslow,
    Gaussian,
    Multinomial { classes: usize },
}

/// Outcome data for a fit; carries the family implicitly.
#[derive(Clone, Debug)]
pub enum Response {
    Gaussian(Vec<f64>),
    Cox { time: Vec<f64>, event: Vec<u8> },
    Multinomial { y: Vec<usize>, classes: usize },
}

impl Response {
    pub fn family(&self) -> Family {
        match self {
            Response::Gaussian(_) => Family::Gaussian,
            Response::Cox { .. } => Family::CoxBreslow,
            Response::Multinomial { classes, .. } => Family::Multinomial { classes: *classes },
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Response::Gaussian(y) => y.len(),
            Response::Cox { time, .. } => time.len(),
            Response::Multinomial { y, .. } => y.len(),
        }
    }

    /// Number of coefficient blocks: 1 for Gaussian/Cox, classes-1 for
    /// multinomial (reference class 0 carries no parameters).
    pub fn n_blocks(&self) -> usize {
        match self {
            Response::Multinomial { classes, .. } => classes - 1,
            _ => 1,
        }
    }

    pub fn has_intercept(&self) -> bool {
        !matches!(self, Response::Cox { .. })
    }

    pub fn validate(&self, mm: &ModelMatrix) -> Result<()> {
        if self.n() != mm.n() {
            return Err(Error::Dimension(format!(
                "response has n={}, model matrix has n={}",
                self.n(),
                mm.n()
            )));
        }
        match self {
            Response::Cox { time, event } => {
                if time.len() != event.len() {
                    return Err(Error::Dimension("time/event length mismatch".into()));
                }
                if !event.iter().any(|&e| e == 1) {
                    return Err(Error::DegenerateResponse(
                        "Cox response has no events (all censored)".into(),
                    ));
                }
            }
            Response::Multinomial { y, classes } => {
                if *classes < 2 {
                    return Err(Error::Contract("multinomial needs >= 2 classes".into()));
                }
                if y.iter().any(|&c| c >= *classes) {
                    return Err(Error::Contract("class label out of range".into()));
                }
            }
            Response::Gaussian(_) => {}
        }
        Ok(())
    }
}

/// Coefficients of one penalized fit: `slopes[b][j]` is the coefficient of
/// model column `j` in block `b`; `intercepts` has one entry per block
/// (empty for Cox).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub slopes: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
}

impl Coefficients {
    pub fn zeros(resp: &Response, q: usize) -> Self {
        let blocks = resp.n_blocks();
        Coefficients {
            slopes: vec![vec![0.0; q]; blocks],
            intercepts: if resp.has_intercept() {
                vec![0.0; blocks]
            } else {
                Vec::new()
            },
        }
    }

    /// Single-block slope vector (Gaussian/Cox convenience).
    pub fn beta(&self) -> &[f64] {
        &self.slopes[0]
    }

    pub fn l1_norm(&self) -> f64 {
        self.slopes
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v.abs())
            .sum()
    }

    /// True if model column `j` is active in any block.
    pub fn column_active(&self, j: usize) -> bool {
        self.slopes.iter().any(|b| b[j] != 0.0)
    }
}

/// Options controlling a coordinate-descent fit and path grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitOptions {
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    /// Relative objective-change convergence tolerance for the outer loop.
    pub tol: f64,
    /// Cap on total coordinate sweeps per fit.
    pub max_iter: usize,
    pub standardize: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            n_lambda: 200,
            lambda_min_ratio: 1e-3,
            tol: 1e-7,
            max_iter: 100_000,
            standardize: false,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_lambda == 0 || self.max_iter == 0 {
            return Err(Error::Config("n_lambda and max_iter must be positive".into()));
        }
        if !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
            return Err(Error::Config("lambda_min_ratio must be in (0,1)".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        Ok(())
    }
}

/// Coefficient vectors along a decreasing penalty grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathResult {
    pub lambdas: Vec<f64>,
    pub coefficients: Vec<Coefficients>,
    pub converged: Vec<bool>,
}

impl PathResult {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// Largest grid lambda at which each model column is active (0 if never).
/// For multinomial, a column is active when any class slope is nonzero.
pub fn entry_lambdas(path: &PathResult) -> Vec<f64> {
    let q = path.coefficients.first().map_or(0, |c| c.slopes[0].len());
    let mut z = vec![0.0; q];
    for (t, coef) in path.coefficients.iter().enumerate() {
        for (j, zj) in z.iter_mut().enumerate() {
            if *zj == 0.0 && coef.column_active(j) {
                *zj = path.lambdas[t];
            }
        }
    }
    z
}

/// Entry lambdas aggregated to source features: Z of a feature is the max
/// over its model columns.
pub fn feature_entry_lambdas(path: &PathResult, mm: &ModelMatrix, p: usize) -> Vec<f64> {
    let col_z = entry_lambdas(path);
    let mut z = vec![0.0; p];
    for (c, &f) in mm.column_map.iter().enumerate() {
        if col_z[c] > z[f] {
            z[f] = col_z[c];
        }
    }
    z
}
