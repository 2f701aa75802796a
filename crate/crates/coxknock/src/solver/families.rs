//! Likelihood internals per family: mean-scaled negative log-likelihood,
//! per-observation gradients/curvatures for the IRLS quadratic approximation,
//! and null-model intercepts. Cox uses the Breslow convention: tied event
//! times share one risk set.

use crate::data::ModelMatrix;
use crate::error::{Error, Result};

use super::{Coefficients, Response};

/// Floor on multinomial IRLS weights; p(1-p) below this is clamped.
const W_FLOOR: f64 = 1e-6;

/// Precomputed sort/tie structure for the Cox partial likelihood.
#[derive(Clone, Debug)]
pub(crate) struct CoxIndex {
    /// Observation indices sorted by ascending observed time.
    order: Vec<usize>,
    event: Vec<u8>,
    /// Distinct event times as (first_rank, event_count); risk set of a
    /// block is all ranks >= first_rank.
    blocks: Vec<(usize, usize)>,
}

impl CoxIndex {
    pub fn new(time: &[f64], event: &[u8]) -> CoxIndex {
        let n = time.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| time[a].partial_cmp(&time[b]).unwrap().then(a.cmp(&b)));
        let mut blocks = Vec::new();
        let mut r = 0;
        while r < n {
            let t = time[order[r]];
            let mut d = 0;
            let first = r;
            while r < n && time[order[r]] == t {
                if event[order[r]] == 1 {
                    d += 1;
                }
                r += 1;
            }
            if d > 0 {
                blocks.push((first, d));
            }
        }
        CoxIndex {
            order,
            event: event.to_vec(),
            blocks,
        }
    }

    /// Mean-scaled NLL plus per-observation gradient g_i = d(n·nll)/d eta_i
    /// and diagonal curvature h_i. Shift-invariant in eta.
    fn stats(&self, eta: &[f64], want_curvature: bool) -> (f64, Vec<f64>, Vec<f64>) {
        let n = eta.len();
        let m = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = eta.iter().map(|&e| (e - m).exp()).collect();

        // suffix sums of exp(eta - m) in time order
        let mut suffix = vec![0.0; n + 1];
        for r in (0..n).rev() {
            suffix[r] = suffix[r + 1] + w[self.order[r]];
        }

        let mut nll = 0.0;
        // cumulative d_b / S_b and d_b / S_b^2 over blocks (shifted scale)
        let mut cum1 = vec![0.0; self.blocks.len()];
        let mut cum2 = vec![0.0; self.blocks.len()];
        let mut a1 = 0.0;
        let mut a2 = 0.0;
        for (b, &(first, d)) in self.blocks.iter().enumerate() {
            let s = suffix[first];
            nll += d as f64 * (s.ln() + m);
            a1 += d as f64 / s;
            a2 += d as f64 / (s * s);
            cum1[b] = a1;
            cum2[b] = a2;
        }
        for i in 0..n {
            if self.event[i] == 1 {
                nll -= eta[i];
            }
        }
        nll /= n as f64;

        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n];
        // walk ranks ascending, tracking the last block whose time <= O_i
        let mut b = 0usize;
        let mut c1 = 0.0;
        let mut c2 = 0.0;
        for r in 0..n {
            while b < self.blocks.len() && self.blocks[b].0 <= r {
                c1 = cum1[b];
                c2 = cum2[b];
                b += 1;
            }
            let i = self.order[r];
            g[i] = w[i] * c1 - if self.event[i] == 1 { 1.0 } else { 0.0 };
            if want_curvature {
                h[i] = (w[i] * c1 - w[i] * w[i] * c2).max(0.0);
            }
        }
        (nll, g, h)
    }
}

/// Prepared response: family data plus any precomputed index structure.
#[derive(Clone, Debug)]
pub(crate) enum Prepared {
    Gaussian { y: Vec<f64> },
    Cox(CoxIndex),
    Multinomial { y: Vec<usize>, classes: usize },
}

impl Prepared {
    pub fn new(resp: &Response) -> Prepared {
        match resp {
            Response::Gaussian(y) => Prepared::Gaussian { y: y.clone() },
            Response::Cox { time, event } => Prepared::Cox(CoxIndex::new(time, event)),
            Response::Multinomial { y, classes } => Prepared::Multinomial {
                y: y.clone(),
                classes: *classes,
            },
        }
    }

    /// Mean-scaled NLL together with per-block observation gradients; the
    /// curvature vector is filled only when `want_curvature` is set.
    pub fn stats(
        &self,
        etas: &[Vec<f64>],
        want_curvature: bool,
    ) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        match self {
            Prepared::Gaussian { y } => {
                let eta = &etas[0];
                let n = y.len() as f64;
                let mut nll = 0.0;
                let mut g = vec![0.0; y.len()];
                for i in 0..y.len() {
                    let r = eta[i] - y[i];
                    nll += r * r;
                    g[i] = r;
                }
                (nll / (2.0 * n), vec![g], vec![vec![1.0; y.len()]])
            }
            Prepared::Cox(idx) => {
                let (nll, g, h) = idx.stats(&etas[0], want_curvature);
                (nll, vec![g], vec![h])
            }
            Prepared::Multinomial { y, classes } => {
                let n = y.len();
                let blocks = classes - 1;
                let mut nll = 0.0;
                let mut g = vec![vec![0.0; n]; blocks];
                let mut h = vec![vec![0.0; n]; blocks];
                for i in 0..n {
                    let mut m = 0.0f64;
                    for eta in etas.iter() {
                        m = m.max(eta[i]);
                    }
                    let mut denom = (-m).exp();
                    for eta in etas.iter() {
                        denom += (eta[i] - m).exp();
                    }
                    let logp_ref = -m - denom.ln();
                    if y[i] == 0 {
                        nll -= logp_ref;
                    }
                    for (c, eta) in etas.iter().enumerate() {
                        let p = (eta[i] - m).exp() / denom;
                        if y[i] == c + 1 {
                            nll -= eta[i] - m - denom.ln();
                        }
                        let ind = if y[i] == c + 1 { 1.0 } else { 0.0 };
                        g[c][i] = p - ind;
                        if want_curvature {
                            h[c][i] = (p * (1.0 - p)).max(W_FLOOR);
                        }
                    }
                }
                (nll / n as f64, g, h)
            }
        }
    }

    /// Intercepts of the unpenalized null model (all slopes zero).
    pub fn null_intercepts(&self) -> Vec<f64> {
        match self {
            Prepared::Gaussian { y } => {
                vec![y.iter().sum::<f64>() / y.len() as f64]
            }
            Prepared::Cox(_) => Vec::new(),
            Prepared::Multinomial { y, classes } => {
                let mut counts = vec![0.0f64; *classes];
                for &c in y {
                    counts[c] += 1.0;
                }
                // clamp so empty classes give large negative, finite intercepts
                let c0 = counts[0].max(0.5);
                (1..*classes)
                    .map(|c| (counts[c].max(0.5) / c0).ln())
                    .collect()
            }
        }
    }
}

pub(crate) fn etas_from_coef(mm: &ModelMatrix, coef: &Coefficients, n: usize) -> Vec<Vec<f64>> {
    coef.slopes
        .iter()
        .enumerate()
        .map(|(b, slopes)| {
            let b0 = coef.intercepts.get(b).copied().unwrap_or(0.0);
            let mut eta = vec![b0; n];
            for (j, &s) in slopes.iter().enumerate() {
                if s != 0.0 {
                    let col = &mm.cols[j];
                    for (e, &v) in eta.iter_mut().zip(col.iter()) {
                        *e += s * v;
                    }
                }
            }
            eta
        })
        .collect()
}

/// Mean-scaled negative log-likelihood of `coef` under the response family.
pub fn negative_log_likelihood(
    resp: &Response,
    mm: &ModelMatrix,
    coef: &Coefficients,
) -> Result<f64> {
    resp.validate(mm)?;
    if coef.slopes[0].len() != mm.q() {
        return Err(Error::Dimension("coefficient length != q".into()));
    }
    let prep = Prepared::new(resp);
    let etas = etas_from_coef(mm, coef, resp.n());
    Ok(prep.stats(&etas, false).0)
}

/// Gradient of the mean-scaled NLL with respect to every slope and intercept,
/// returned in coefficient layout.
pub fn score(resp: &Response, mm: &ModelMatrix, coef: &Coefficients) -> Result<Coefficients> {
    resp.validate(mm)?;
    let n = resp.n();
    let prep = Prepared::new(resp);
    let etas = etas_from_coef(mm, coef, n);
    let (_, g, _) = prep.stats(&etas, false);
    let grad_slopes = g
        .iter()
        .map(|gb| {
            mm.cols
                .iter()
                .map(|col| col.iter().zip(gb.iter()).map(|(&x, &gi)| x * gi).sum::<f64>() / n as f64)
                .collect()
        })
        .collect();
    let grad_intercepts = if resp.has_intercept() {
        g.iter()
            .map(|gb| gb.iter().sum::<f64>() / n as f64)
            .collect()
    } else {
        Vec::new()
    };
    Ok(Coefficients {
        slopes: grad_slopes,
        intercepts: grad_intercepts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coef1(q: usize, intercept: bool) -> Coefficients {
        Coefficients {
            slopes: vec![vec![0.0; q]],
            intercepts: if intercept { vec![0.0] } else { Vec::new() },
        }
    }

    #[test]
    fn cox_two_subjects_hand_value() {
        // times (1,2), both events, beta = 0: risk sets {1,2} then {2}
        let mm = ModelMatrix::from_columns(vec![vec![1.0, 0.0]]);
        let resp = Response::Cox {
            time: vec![1.0, 2.0],
            event: vec![1, 1],
        };
        let nll = negative_log_likelihood(&resp, &mm, &coef1(1, false)).unwrap();
        let expected = 0.5 * (2.0f64.ln() + 1.0f64.ln());
        assert!((nll - expected).abs() < 1e-12, "{nll} vs {expected}");
    }

    #[test]
    fn cox_null_is_mean_log_risk_set_sizes() {
        // distinct event times, no ties, beta=0: (1/n) sum log |risk set|
        let n = 7;
        let time: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let event = vec![1u8; n];
        let mm = ModelMatrix::from_columns(vec![(0..n).map(|i| i as f64).collect()]);
        let resp = Response::Cox {
            time,
            event: event.clone(),
        };
        let nll = negative_log_likelihood(&resp, &mm, &coef1(1, false)).unwrap();
        let expected: f64 =
            (1..=n).map(|i| ((n - i + 1) as f64).ln()).sum::<f64>() / n as f64;
        assert!((nll - expected).abs() < 1e-12);
    }

    #[test]
    fn cox_breslow_ties_share_risk_set() {
        // two events tied at t=1 plus one censored later; at beta = 0 each
        // tied event sees the full risk set of size 3
        let mm = ModelMatrix::from_columns(vec![vec![0.0, 0.0, 0.0]]);
        let resp = Response::Cox {
            time: vec![1.0, 1.0, 2.0],
            event: vec![1, 1, 0],
        };
        let nll = negative_log_likelihood(&resp, &mm, &coef1(1, false)).unwrap();
        let expected = 2.0 * 3.0f64.ln() / 3.0;
        assert!((nll - expected).abs() < 1e-12);
    }

    #[test]
    fn cox_shift_invariance_via_gradient_consistency() {
        let mm = ModelMatrix::from_columns(vec![vec![1.0, -0.5, 0.3, 2.0], vec![0.2, 1.0, -1.0, 0.5]]);
        let resp = Response::Cox {
            time: vec![3.0, 1.0, 2.0, 2.0],
            event: vec![1, 0, 1, 1],
        };
        let mut coef = coef1(2, false);
        coef.slopes[0] = vec![0.4, -0.7];
        // finite-difference check of the score
        let s = score(&resp, &mm, &coef).unwrap();
        let eps = 1e-6;
        for j in 0..2 {
            let mut cp = coef.clone();
            cp.slopes[0][j] += eps;
            let mut cm = coef.clone();
            cm.slopes[0][j] -= eps;
            let fp = negative_log_likelihood(&resp, &mm, &cp).unwrap();
            let fm = negative_log_likelihood(&resp, &mm, &cm).unwrap();
            let fd = (fp - fm) / (2.0 * eps);
            assert!((s.slopes[0][j] - fd).abs() < 1e-7, "j={j}");
        }
    }

    #[test]
    fn gaussian_zero_everything_is_zero_loss() {
        let mm = ModelMatrix::from_columns(vec![vec![1.0, 2.0, 3.0]]);
        let resp = Response::Gaussian(vec![0.0, 0.0, 0.0]);
        let nll = negative_log_likelihood(&resp, &mm, &coef1(1, true)).unwrap();
        assert_eq!(nll, 0.0);
    }

    #[test]
    fn all_censored_cox_is_degenerate() {
        let mm = ModelMatrix::from_columns(vec![vec![1.0, 2.0]]);
        let resp = Response::Cox {
            time: vec![1.0, 2.0],
            event: vec![0, 0],
        };
        assert!(matches!(
            negative_log_likelihood(&resp, &mm, &coef1(1, false)),
            Err(Error::DegenerateResponse(_))
        ));
    }

    #[test]
    fn multinomial_gradient_matches_finite_differences() {
        let mm = ModelMatrix::from_columns(vec![
            vec![1.0, -0.5, 0.3, 2.0, 0.1],
            vec![0.2, 1.0, -1.0, 0.5, -0.3],
        ]);
        let resp = Response::Multinomial {
            y: vec![0, 1, 2, 1, 0],
            classes: 3,
        };
        let coef = Coefficients {
            slopes: vec![vec![0.3, -0.2], vec![-0.1, 0.4]],
            intercepts: vec![0.1, -0.2],
        };
        let s = score(&resp, &mm, &coef).unwrap();
        let eps = 1e-6;
        for b in 0..2 {
            for j in 0..2 {
                let mut cp = coef.clone();
                cp.slopes[b][j] += eps;
                let mut cm = coef.clone();
                cm.slopes[b][j] -= eps;
                let fd = (negative_log_likelihood(&resp, &mm, &cp).unwrap()
                    - negative_log_likelihood(&resp, &mm, &cm).unwrap())
                    / (2.0 * eps);
                assert!((s.slopes[b][j] - fd).abs() < 1e-7, "b={b} j={j}");
            }
        }
    }
}
