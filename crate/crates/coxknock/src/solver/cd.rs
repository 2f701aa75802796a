//! Cyclic coordinate descent on an iteratively reweighted quadratic
//! approximation, with warm-started path computation. Convergence is declared
//! only after the exact (not approximated) KKT conditions hold at the iterate.

use crate::data::ModelMatrix;
use crate::error::{Error, Result};

use super::families::{etas_from_coef, Prepared};
use super::{Coefficients, FitOptions, PathResult, Response};

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Smallest penalty at which the all-zero-slope solution is optimal: the max
/// absolute mean-scaled score at the null model (intercept profiled out for
/// Gaussian/multinomial). Returns 0 for zero-variance designs.
pub fn lambda_max(resp: &Response, mm: &ModelMatrix) -> Result<f64> {
    resp.validate(mm)?;
    let n = resp.n() as f64;
    let prep = Prepared::new(resp);
    let intercepts = prep.null_intercepts();
    let etas: Vec<Vec<f64>> = (0..resp.n_blocks())
        .map(|b| vec![intercepts.get(b).copied().unwrap_or(0.0); resp.n()])
        .collect();
    let (_, g, _) = prep.stats(&etas, false);
    let mut lmax = 0.0f64;
    for gb in &g {
        for col in &mm.cols {
            let s: f64 = col.iter().zip(gb.iter()).map(|(&x, &gi)| x * gi).sum::<f64>() / n;
            lmax = lmax.max(s.abs());
        }
    }
    Ok(lmax)
}

struct Engine<'a> {
    mm: &'a ModelMatrix,
    prep: Prepared,
    n: usize,
    q: usize,
    blocks: usize,
    has_intercept: bool,
    sweeps: usize,
}

impl<'a> Engine<'a> {
    fn new(resp: &Response, mm: &'a ModelMatrix) -> Engine<'a> {
        Engine {
            mm,
            prep: Prepared::new(resp),
            n: resp.n(),
            q: mm.q(),
            blocks: resp.n_blocks(),
            has_intercept: resp.has_intercept(),
            sweeps: 0,
        }
    }

    /// One weighted-lasso cycle over the given coordinates of one block.
    /// `resid[i]` holds z_i - eta_b[i]; `den[j]` = (1/n) sum w x_j^2.
    /// Returns the largest den-scaled squared coefficient change.
    #[allow(clippy::too_many_arguments)]
    fn cycle(
        &mut self,
        coords: &[usize],
        w: &[f64],
        den: &[f64],
        slopes: &mut [f64],
        intercept: Option<&mut f64>,
        resid: &mut [f64],
        eta: &mut [f64],
        lambda: f64,
        sum_w: f64,
    ) -> f64 {
        let n = self.n as f64;
        let mut dmax = 0.0f64;
        if let Some(b0) = intercept {
            let num: f64 = w.iter().zip(resid.iter()).map(|(&wi, &ri)| wi * ri).sum();
            let delta = num / sum_w;
            if delta != 0.0 {
                *b0 += delta;
                for (r, e) in resid.iter_mut().zip(eta.iter_mut()) {
                    *r -= delta;
                    *e += delta;
                }
                dmax = dmax.max(sum_w / n * delta * delta);
            }
        }
        for &j in coords {
            if den[j] <= 0.0 {
                continue;
            }
            let col = &self.mm.cols[j];
            let old = slopes[j];
            let mut num = 0.0;
            for i in 0..self.n {
                num += w[i] * col[i] * resid[i];
            }
            num = num / n + den[j] * old;
            let new = soft_threshold(num, lambda) / den[j];
            if new != old {
                let delta = new - old;
                slopes[j] = new;
                for i in 0..self.n {
                    resid[i] -= delta * col[i];
                    eta[i] += delta * col[i];
                }
                dmax = dmax.max(den[j] * delta * delta);
            }
        }
        self.sweeps += 1;
        dmax
    }

    /// Exact-KKT violation of the mean-scaled penalized objective at `coef`.
    fn kkt_violation(&self, coef: &Coefficients, etas: &[Vec<f64>], lambda: f64) -> f64 {
        let n = self.n as f64;
        let (_, g, _) = self.prep.stats(etas, false);
        let mut worst = 0.0f64;
        for (b, gb) in g.iter().enumerate() {
            if self.has_intercept {
                let gi: f64 = gb.iter().sum::<f64>() / n;
                worst = worst.max(gi.abs());
            }
            for j in 0..self.q {
                let s: f64 =
                    self.mm.cols[j].iter().zip(gb.iter()).map(|(&x, &v)| x * v).sum::<f64>() / n;
                let beta = coef.slopes[b][j];
                let viol = if beta != 0.0 {
                    (s + lambda * beta.signum()).abs()
                } else {
                    (s.abs() - lambda).max(0.0)
                };
                worst = worst.max(viol);
            }
        }
        worst
    }

    fn fit(
        &mut self,
        lambda: f64,
        warm: &Coefficients,
        opts: &FitOptions,
    ) -> Result<(Coefficients, bool)> {
        let mut coef = warm.clone();
        let mut etas = etas_from_coef(self.mm, &coef, self.n);
        let kkt_tol = if lambda > 0.0 {
            5e-7f64.min(0.1 * lambda)
        } else {
            5e-7
        };
        let n = self.n as f64;

        let (nll0, _, _) = self.prep.stats(&etas, false);
        let mut obj = nll0 + lambda * coef.l1_norm();
        let mut inner_thr = (opts.tol * 1e-3).min(1e-10) * (1.0 + obj.abs());
        let mut bad_steps = 0usize;

        loop {
            // one IRLS pass: per block, build the local quadratic and solve it
            for b in 0..self.blocks {
                let (_, g, h) = self.prep.stats(&etas, true);
                let w = &h[b];
                let sum_w: f64 = w.iter().sum();
                // working residual z - eta = -g/h
                let mut resid: Vec<f64> = g[b]
                    .iter()
                    .zip(w.iter())
                    .map(|(&gi, &wi)| if wi > 0.0 { -gi / wi } else { 0.0 })
                    .collect();
                let den: Vec<f64> = self
                    .mm
                    .cols
                    .iter()
                    .map(|col| {
                        col.iter().zip(w.iter()).map(|(&x, &wi)| wi * x * x).sum::<f64>() / n
                    })
                    .collect();
                let all: Vec<usize> = (0..self.q).collect();
                let mut slopes = std::mem::take(&mut coef.slopes[b]);
                let mut eta_b = std::mem::take(&mut etas[b]);
                loop {
                    let mut b0 = coef.intercepts.get(b).copied();
                    let d_full = self.cycle(
                        &all,
                        w,
                        &den,
                        &mut slopes,
                        b0.as_mut(),
                        &mut resid,
                        &mut eta_b,
                        lambda,
                        sum_w,
                    );
                    if let Some(v) = b0 {
                        coef.intercepts[b] = v;
                    }
                    if d_full < inner_thr || self.sweeps > opts.max_iter {
                        break;
                    }
                    let active: Vec<usize> =
                        (0..self.q).filter(|&j| slopes[j] != 0.0).collect();
                    loop {
                        let mut b0 = coef.intercepts.get(b).copied();
                        let d = self.cycle(
                            &active,
                            w,
                            &den,
                            &mut slopes,
                            b0.as_mut(),
                            &mut resid,
                            &mut eta_b,
                            lambda,
                            sum_w,
                        );
                        if let Some(v) = b0 {
                            coef.intercepts[b] = v;
                        }
                        if d < inner_thr || self.sweeps > opts.max_iter {
                            break;
                        }
                    }
                }
                coef.slopes[b] = slopes;
                etas[b] = eta_b;
            }

            let (nll, _, _) = self.prep.stats(&etas, false);
            let new_obj = nll + lambda * coef.l1_norm();
            if !new_obj.is_finite() {
                return Err(Error::Numerical(format!(
                    "objective became non-finite at lambda={lambda}"
                )));
            }
            if new_obj > obj + 1e-8 * (1.0 + obj.abs()) {
                bad_steps += 1;
                if bad_steps >= 4 {
                    return Err(Error::Numerical(format!(
                        "objective diverging at lambda={lambda}: {obj} -> {new_obj}"
                    )));
                }
            } else {
                bad_steps = 0;
            }
            let rel_change = (obj - new_obj).abs() / (1.0 + obj.abs());
            obj = new_obj;

            if self.sweeps > opts.max_iter {
                return Ok((coef, false));
            }
            if rel_change < opts.tol {
                if self.kkt_violation(&coef, &etas, lambda) <= kkt_tol {
                    return Ok((coef, true));
                }
                // converged in objective but not in exact KKT: tighten the
                // inner threshold and keep iterating
                inner_thr *= 0.1;
                if inner_thr < 1e-300 {
                    return Ok((coef, false));
                }
            }
        }
    }
}

pub(crate) fn standardized(mm: &ModelMatrix) -> (ModelMatrix, Vec<f64>) {
    let n = mm.n() as f64;
    let mut scales = Vec::with_capacity(mm.q());
    let cols = mm
        .cols
        .iter()
        .map(|col| {
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 0.0 {
                scales.push(sd);
                col.iter().map(|&x| x / sd).collect()
            } else {
                scales.push(1.0);
                col.clone()
            }
        })
        .collect();
    (
        ModelMatrix {
            cols,
            column_map: mm.column_map.clone(),
            col_names: mm.col_names.clone(),
        },
        scales,
    )
}

fn rescale_coef(coef: &mut Coefficients, scales: &[f64]) {
    for block in coef.slopes.iter_mut() {
        for (b, s) in block.iter_mut().zip(scales.iter()) {
            *b /= s;
        }
    }
}

/// Minimize mean-scaled NLL + lambda * ||slopes||_1 by cyclic coordinate
/// descent, warm-started from `warm` when given. Returns the coefficients and
/// a convergence flag.
pub fn coordinate_descent_fit(
    resp: &Response,
    mm: &ModelMatrix,
    lambda: f64,
    warm: Option<&Coefficients>,
    opts: &FitOptions,
) -> Result<(Coefficients, bool)> {
    resp.validate(mm)?;
    opts.validate()?;
    if lambda < 0.0 {
        return Err(Error::Config("lambda must be nonnegative".into()));
    }
    if opts.standardize {
        let (smm, scales) = standardized(mm);
        let mut engine = Engine::new(resp, &smm);
        let mut warm_scaled = warm.cloned().unwrap_or_else(|| Coefficients::zeros(resp, mm.q()));
        for block in warm_scaled.slopes.iter_mut() {
            for (b, s) in block.iter_mut().zip(scales.iter()) {
                *b *= s;
            }
        }
        let (mut coef, converged) = engine.fit(lambda, &warm_scaled, opts)?;
        rescale_coef(&mut coef, &scales);
        Ok((coef, converged))
    } else {
        let mut engine = Engine::new(resp, mm);
        let warm_owned;
        let warm_ref = match warm {
            Some(w) => w,
            None => {
                warm_owned = Coefficients::zeros(resp, mm.q());
                &warm_owned
            }
        };
        engine.fit(lambda, warm_ref, opts)
    }
}

/// Warm-started pathwise fit over a log-spaced grid from lambda_max down to
/// lambda_min_ratio * lambda_max. The first grid point is solved exactly by
/// the null model. Fit errors mark the affected grid point (and the rest of
/// the path, which would inherit a broken warm start) as non-converged.
pub fn lasso_path(resp: &Response, mm: &ModelMatrix, opts: &FitOptions) -> Result<PathResult> {
    resp.validate(mm)?;
    opts.validate()?;
    if opts.standardize {
        // Standardize once so the lambda grid and every warm-started fit live
        // on the same (unit-variance) scale; coefficients are mapped back.
        let (smm, scales) = standardized(mm);
        let inner = FitOptions {
            standardize: false,
            ..opts.clone()
        };
        let mut res = lasso_path(resp, &smm, &inner)?;
        for coef in res.coefficients.iter_mut() {
            rescale_coef(coef, &scales);
        }
        return Ok(res);
    }
    let lmax = lambda_max(resp, mm)?;
    let q = mm.q();

    let prep = Prepared::new(resp);
    let mut null = Coefficients::zeros(resp, q);
    if resp.has_intercept() {
        null.intercepts = prep.null_intercepts();
    }

    if lmax <= 0.0 {
        // zero-variance design: the null model is optimal at every penalty
        return Ok(PathResult {
            lambdas: vec![0.0],
            coefficients: vec![null],
            converged: vec![true],
        });
    }

    let nl = opts.n_lambda;
    let lambdas: Vec<f64> = (0..nl)
        .map(|t| {
            if nl == 1 {
                lmax
            } else {
                lmax * opts.lambda_min_ratio.powf(t as f64 / (nl - 1) as f64)
            }
        })
        .collect();

    let mut coefficients = Vec::with_capacity(nl);
    let mut converged = Vec::with_capacity(nl);
    coefficients.push(null);
    converged.push(true);

    let mut broken = false;
    for t in 1..nl {
        if broken {
            coefficients.push(coefficients[t - 1].clone());
            converged.push(false);
            continue;
        }
        match coordinate_descent_fit(resp, mm, lambdas[t], Some(&coefficients[t - 1]), opts) {
            Ok((coef, ok)) => {
                coefficients.push(coef);
                converged.push(ok);
            }
            Err(_) => {
                coefficients.push(coefficients[t - 1].clone());
                converged.push(false);
                broken = true;
            }
        }
    }

    Ok(PathResult {
        lambdas,
        coefficients,
        converged,
    })
}
