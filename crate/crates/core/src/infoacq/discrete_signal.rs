//! Finitely many signal states: values, the splitting argument and the
//! multi-start simplex optimiser.

use std::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::dist::{DiscreteDist, NormalLaw};
use crate::error::{Error, Result};
use crate::sinkhorn::{log_sum_exp, solve_discrete_discrete, Init, MultiplierSolution, SinkhornOptions};
use crate::transport::{w2_squared, QuantileFn};

pub const DEFAULT_RESTARTS: usize = 8;

/// `I_m = (1 / q_m) integral_{Q_{m-1}}^{Q_m} G^{-1}(u) du` for each state.
/// Requires strictly positive masses.
pub fn interval_means(q: &[f64], g: NormalLaw) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(q.len());
    let mut lo = 0.0;
    for (m, &qm) in q.iter().enumerate() {
        if !(qm > 0.0) {
            return Err(Error::Domain(format!("signal state {m} has non-positive mass {qm}")));
        }
        let hi = if m + 1 == q.len() { 1.0 } else { (lo + qm).min(1.0) };
        out.push(g.partial_quantile_integral(lo, hi)? / (hi - lo));
        lo = hi;
    }
    Ok(out)
}

/// `lambda sum_m q_m log sum_n e^{(v_n I_m + mu_n)/lambda} + lambda sum_n p_n log p_n - sum_n mu_n p_n`
/// at fixed multipliers.
pub fn dual_objective(payoff: &DiscreteDist, i_values: &[f64], q: &[f64], mu: &[f64], lambda: f64) -> f64 {
    let mut buf = vec![0.0; payoff.len()];
    let mut first = 0.0;
    for (&im, &qm) in i_values.iter().zip(q) {
        if qm <= 0.0 {
            continue;
        }
        for ((b, &v), &m) in buf.iter_mut().zip(payoff.atoms()).zip(mu) {
            *b = (v * im + m) / lambda;
        }
        first += qm * log_sum_exp(&buf);
    }
    let (ent, adj) = payoff
        .probs()
        .iter()
        .zip(mu)
        .filter(|(p, _)| **p > 0.0)
        .fold((0.0, 0.0), |(e, a), (p, m)| (e + p * p.ln(), a + p * m));
    lambda * first + lambda * ent - adj
}

/// Replace state `m` by two adjacent states carrying `frac` and `1 - frac`
/// of its mass.
pub fn split_state(q: &[f64], m: usize, frac: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(q.len() + 1);
    out.extend_from_slice(&q[..m]);
    out.push(q[m] * frac);
    out.push(q[m] * (1.0 - frac));
    out.extend_from_slice(&q[m + 1..]);
    out
}

/// Value and decomposition for a given signal marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSignalValue {
    pub value: f64,
    /// Signal masses after dropping empty states.
    pub q: Vec<f64>,
    pub i_values: Vec<f64>,
    /// `E[v | s_m]` per state.
    pub conditional_means: Vec<f64>,
    pub expected_profit: f64,
    pub info_cost: f64,
    pub mutual_information: f64,
    pub profit_potential: f64,
    pub leakage_w2sq: f64,
    pub mu: MultiplierSolution,
}

struct Solved {
    q: Vec<f64>,
    i_values: Vec<f64>,
    value: f64,
    mu: MultiplierSolution,
}

fn solve_value(payoff: &DiscreteDist, q: &[f64], params: &ModelParams, opts: &SinkhornOptions) -> Result<Solved> {
    if q.is_empty() || q.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::Domain("signal marginal must be a nonnegative vector".into()));
    }
    let kept: Vec<f64> = q.iter().copied().filter(|&x| x > 0.0).collect();
    let total: f64 = kept.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Domain("signal marginal has no mass".into()));
    }
    let q: Vec<f64> = kept.iter().map(|x| x / total).collect();
    let i_values = interval_means(&q, params.noise_law())?;
    let mu = solve_discrete_discrete(payoff, &i_values, &q, params.lambda, opts)?;
    let value = dual_objective(payoff, &i_values, &q, &mu.mu, params.lambda);
    Ok(Solved { q, i_values, value, mu })
}

/// Value of the signal marginal `q`; zero-mass states are dropped and the
/// rest renormalised before solving.
pub fn discrete_signal_value(
    payoff: &DiscreteDist,
    q: &[f64],
    params: &ModelParams,
    opts: &SinkhornOptions,
) -> Result<DiscreteSignalValue> {
    let Solved { q, i_values, value, mu } = solve_value(payoff, q, params, opts)?;
    let g = params.noise_law();
    let lambda = params.lambda;
    let mut buf = vec![0.0; payoff.len()];
    let mut conditional_means = Vec::with_capacity(q.len());
    let mut mi = 0.0;
    for (&im, &qm) in i_values.iter().zip(&q) {
        for ((b, &v), &m) in buf.iter_mut().zip(payoff.atoms()).zip(&mu.mu) {
            *b = (v * im + m) / lambda;
        }
        crate::sinkhorn::softmax_in_place(&mut buf);
        conditional_means.push(buf.iter().zip(payoff.atoms()).map(|(p, v)| p * v).sum());
        mi += qm
            * buf
                .iter()
                .zip(payoff.probs())
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, pr)| p * (p / pr).ln())
                .sum::<f64>();
    }
    let mean: f64 = conditional_means.iter().zip(&q).map(|(m, w)| m * w).sum();
    let var: f64 = conditional_means
        .iter()
        .zip(&q)
        .map(|(m, w)| w * (m - mean) * (m - mean))
        .sum();
    let expected_profit: f64 = conditional_means
        .iter()
        .zip(&i_values)
        .zip(&q)
        .map(|((m, i), w)| m * i * w)
        .sum();
    let centred: Vec<f64> = conditional_means.iter().map(|m| m - mean).collect();
    let leakage = w2_squared(&QuantileFn::step(&centred, &q)?, &QuantileFn::normal(g))?;
    let mi = mi.max(0.0);
    Ok(DiscreteSignalValue {
        value,
        q,
        i_values,
        conditional_means,
        expected_profit,
        info_cost: lambda * mi,
        mutual_information: mi,
        profit_potential: var,
        leakage_w2sq: leakage,
        mu,
    })
}

/// Simplex optimiser settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    /// Evaluation budget per restart is `evals_per_dim * dim` (at least 200).
    pub evals_per_dim: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    pub initial_step: f64,
    pub seed: u64,
    /// Sinkhorn tolerance inside the objective.
    pub inner_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            evals_per_dim: 400,
            f_tol: 1e-12,
            x_tol: 1e-9,
            initial_step: 0.25,
            seed: 7,
            inner_tol: 1e-12,
        }
    }
}

/// Best signal marginal found over the restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteOptimum {
    pub m: usize,
    pub q_star: Vec<f64>,
    pub value: f64,
    pub detail: DiscreteSignalValue,
    /// Best value reached by each restart (`-inf` when it failed).
    pub restart_values: Vec<f64>,
    /// Spread between the best and worst successful restart.
    pub dispersion: f64,
    pub evaluations: usize,
}

fn softmax_params(theta: &[f64]) -> Vec<f64> {
    let mut q: Vec<f64> = theta.iter().copied().chain(std::iter::once(0.0)).collect();
    crate::sinkhorn::softmax_in_place(&mut q);
    q
}

fn logits(q: &[f64]) -> Vec<f64> {
    let last = q[q.len() - 1].max(1e-300).ln();
    q[..q.len() - 1].iter().map(|x| x.max(1e-300).ln() - last).collect()
}

struct NmResult {
    x: Vec<f64>,
    f: f64,
    evals: usize,
}

/// Minimise `f` by Nelder–Mead with dimension-adaptive coefficients.
fn nelder_mead(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], step: f64, max_evals: usize, f_tol: f64, x_tol: f64) -> NmResult {
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        simplex.push(x);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    let mut evals = n + 1;
    let mut order: Vec<usize> = (0..=n).collect();
    while evals < max_evals {
        order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
        let (best, worst, second) = (order[0], order[n], order[n - 1]);
        let spread = fv[worst] - fv[best];
        let size = simplex
            .iter()
            .map(|x| x.iter().zip(&simplex[best]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread.abs() <= f_tol && size <= x_tol {
            break;
        }
        let mut centroid = vec![0.0; n];
        for &i in &order[..n] {
            for (c, x) in centroid.iter_mut().zip(&simplex[i]) {
                *c += x / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(alpha);
        let fr = f(&xr);
        evals += 1;
        if fr < fv[best] {
            let xe = along(alpha * gamma);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[worst] = xe;
                fv[worst] = fe;
            } else {
                simplex[worst] = xr;
                fv[worst] = fr;
            }
        } else if fr < fv[second] {
            simplex[worst] = xr;
            fv[worst] = fr;
        } else {
            let (xc, fc) = if fr < fv[worst] {
                let xc = along(alpha * rho);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(-rho);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < fv[worst].min(fr) {
                simplex[worst] = xc;
                fv[worst] = fc;
            } else {
                let xb = simplex[best].clone();
                for &i in &order[1..] {
                    for (x, b) in simplex[i].iter_mut().zip(&xb) {
                        *x = b + sigma * (*x - b);
                    }
                    fv[i] = f(&simplex[i]);
                    evals += 1;
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| fv[a].total_cmp(&fv[b])).unwrap();
    NmResult {
        x: simplex[best].clone(),
        f: fv[best],
        evals,
    }
}

/// Maximise the value over signal marginals with `m` states: multi-start
/// Nelder–Mead on softmax logits. Restart 0 starts from `warm` (or the
/// uniform marginal); the others from seeded perturbations of the uniform
/// marginal.
pub fn optimize_discrete_signal(
    payoff: &DiscreteDist,
    m: usize,
    params: &ModelParams,
    restarts: usize,
    warm: Option<&[f64]>,
    nm: &NelderMeadOptions,
) -> Result<DiscreteOptimum> {
    if m == 0 {
        return Err(Error::Domain("need at least one signal state".into()));
    }
    if let Some(w) = warm {
        if w.len() != m {
            return Err(Error::Config(format!("warm start has {} states, expected {m}", w.len())));
        }
    }
    let inner = SinkhornOptions::default().with_tol(nm.inner_tol);
    if m == 1 {
        let detail = discrete_signal_value(payoff, &[1.0], params, &inner)?;
        return Ok(DiscreteOptimum {
            m,
            q_star: vec![1.0],
            value: detail.value,
            detail,
            restart_values: vec![],
            dispersion: 0.0,
            evaluations: 1,
        });
    }
    let dim = m - 1;
    let max_evals = (nm.evals_per_dim * dim).max(200);
    let mut rng = ChaCha8Rng::seed_from_u64(nm.seed ^ (m as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    let mut restart_values = Vec::with_capacity(restarts.max(1));
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut evaluations = 0;
    for r in 0..restarts.max(1) {
        let x0 = match (r, warm) {
            (0, Some(w)) => logits(w),
            (0, None) => vec![0.0; dim],
            _ => (0..dim).map(|_| noise.sample(&mut rng)).collect(),
        };
        let last_mu: RefCell<Option<Vec<f64>>> = RefCell::new(None);
        let objective = |theta: &[f64]| -> f64 {
            let q = softmax_params(theta);
            let opts = match last_mu.borrow().as_ref() {
                Some(mu) => inner.clone().with_init(Init::Warm(mu.clone())),
                None => inner.clone(),
            };
            match solve_value(payoff, &q, params, &opts) {
                Ok(v) => {
                    let value = v.value;
                    *last_mu.borrow_mut() = Some(v.mu.mu);
                    -value
                }
                Err(_) => f64::INFINITY,
            }
        };
        let res = nelder_mead(objective, &x0, nm.initial_step, max_evals, nm.f_tol, nm.x_tol);
        evaluations += res.evals;
        let v = -res.f;
        restart_values.push(if v.is_finite() { v } else { f64::NEG_INFINITY });
        if v.is_finite() && best.as_ref().is_none_or(|(_, bv)| v > *bv) {
            best = Some((res.x, v));
        }
    }
    let (theta, _) = best.ok_or_else(|| Error::Domain("every restart failed in the Sinkhorn step".into()))?;
    let q_star = softmax_params(&theta);
    let detail = discrete_signal_value(payoff, &q_star, params, &inner)?;
    let ok: Vec<f64> = restart_values.iter().copied().filter(|v| v.is_finite()).collect();
    let dispersion = ok.iter().copied().fold(f64::NEG_INFINITY, f64::max) - ok.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(DiscreteOptimum {
        m,
        q_star,
        value: detail.value,
        detail,
        restart_values,
        dispersion,
        evaluations,
    })
}

/// Grow a marginal to `m` states by halving the heaviest state repeatedly.
pub(crate) fn refine_marginal(q: &[f64], m: usize) -> Vec<f64> {
    let mut out = q.to_vec();
    while out.len() < m {
        let (i, _) = out
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
        out = split_state(&out, i, 0.5);
    }
    out
}

/// Optimise along an increasing sequence of state counts, warm-starting each
/// level from the refined optimum of the previous one.
pub fn discrete_convergence(
    payoff: &DiscreteDist,
    params: &ModelParams,
    counts: &[usize],
    restarts: usize,
    nm: &NelderMeadOptions,
) -> Result<Vec<DiscreteOptimum>> {
    let mut out: Vec<DiscreteOptimum> = Vec::with_capacity(counts.len());
    for &m in counts {
        let warm = out
            .last()
            .filter(|prev| prev.q_star.len() <= m)
            .map(|prev| refine_marginal(&prev.q_star, m));
        out.push(optimize_discrete_signal(payoff, m, params, restarts, warm.as_deref(), nm)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::SQRT_2PI;
    use crate::infoacq::Prior;

    fn sym() -> (DiscreteDist, ModelParams) {
        let d = DiscreteDist::two_point(-2.0, 2.0, 0.5).unwrap();
        let p = ModelParams::new(2.0, 1.0, 1.0, Prior::Discrete(d.clone())).unwrap();
        (d, p)
    }

    #[test]
    fn interval_means_of_halves() {
        let i = interval_means(&[0.5, 0.5], NormalLaw::standard()).unwrap();
        assert!((i[1] - 2.0 / SQRT_2PI).abs() < 1e-15);
        assert!((i[0] + i[1]).abs() < 1e-15);
        assert!(interval_means(&[0.0, 1.0], NormalLaw::standard()).is_err());
    }

    #[test]
    fn single_state_is_worthless() {
        let (d, p) = sym();
        let v = discrete_signal_value(&d, &[1.0], &p, &SinkhornOptions::default()).unwrap();
        assert!(v.value.abs() < 1e-12);
        assert!(v.expected_profit.abs() < 1e-12 && v.info_cost.abs() < 1e-12);
    }

    #[test]
    fn zero_mass_states_are_dropped() {
        let (d, p) = sym();
        let a = discrete_signal_value(&d, &[0.5, 0.0, 0.5], &p, &SinkhornOptions::default()).unwrap();
        let b = discrete_signal_value(&d, &[0.5, 0.5], &p, &SinkhornOptions::default()).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.q.len(), 2);
    }

    #[test]
    fn value_matches_profit_minus_cost() {
        let d = DiscreteDist::new(vec![-1.0, 0.5, 2.0], vec![0.2, 0.5, 0.3]).unwrap();
        let p = ModelParams::new(1.3, 0.8, 1.0, Prior::Discrete(d.clone())).unwrap();
        let v = discrete_signal_value(&d, &[0.1, 0.3, 0.25, 0.35], &p, &SinkhornOptions::default()).unwrap();
        assert!((v.value - (v.expected_profit - v.info_cost)).abs() < 1e-9);
        let s2 = p.noise_law().variance();
        let alt = 0.5 * (v.profit_potential + s2 - v.leakage_w2sq);
        assert!((alt - v.expected_profit).abs() < 1e-9, "{alt} vs {}", v.expected_profit);
    }

    #[test]
    fn nelder_mead_minimises_quadratic() {
        let r = nelder_mead(|x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2), &[0.0, 0.0], 0.5, 2000, 1e-14, 1e-9);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] + 2.0).abs() < 1e-5);
    }

    #[test]
    fn refine_splits_heaviest() {
        let q = refine_marginal(&[0.5, 0.25, 0.25], 4);
        assert_eq!(q, vec![0.25, 0.25, 0.25, 0.25]);
    }
}
