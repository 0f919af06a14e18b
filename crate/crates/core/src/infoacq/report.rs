//! Value, decomposition and moments of the optimal posterior.

use serde::{Deserialize, Serialize};

use super::posterior::{build_posterior, PosteriorKernel};
use super::ModelParams;
use crate::dist::{normal_quantile, QuadratureRule};
use crate::error::{Error, Result};
use crate::sinkhorn::{log_sum_exp, MultiplierSolution};
use crate::transport::{u_points, w2_squared, QuantileFn};

/// Moments of the law of `E[v | s]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub std: f64,
    /// `None` when the variance vanishes.
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
}

impl Moments {
    pub fn from_central(mean: f64, variance: f64, m3: f64, m4: f64) -> Self {
        let variance = variance.max(0.0);
        let std = variance.sqrt();
        let (skewness, kurtosis) = if variance > 0.0 {
            (Some(m3 / (variance * std)), Some(m4 / (variance * variance)))
        } else {
            (None, None)
        };
        Self {
            mean,
            variance,
            std,
            skewness,
            kurtosis,
        }
    }
}

/// Optimal value and its decomposition for one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub lambda: f64,
    pub sigma_z: f64,
    pub horizon: f64,
    /// `lambda E[log sum_n e^{(v_n z + mu_n)/lambda}] + lambda sum_n p_n log p_n - sum_n mu_n p_n`.
    pub value: f64,
    /// `expected_profit - info_cost`.
    pub value_decomposed: f64,
    /// `(Var + sigma_z^2 T - leakage_w2sq) / 2`.
    pub expected_profit: f64,
    /// `lambda * mutual_information`.
    pub info_cost: f64,
    /// In nats.
    pub mutual_information: f64,
    /// `Var(E[v | s])`.
    pub profit_potential: f64,
    /// `W_2^2` between the centred law of `E[v | s]` and the noise law.
    pub leakage_w2sq: f64,
    /// `W_2^2` between the uncentred law and the noise law.
    pub w2sq: f64,
    /// `leakage_w2sq - (std(E[v | s]) - sigma_z sqrt(T))^2`.
    pub gelbrich_residual: f64,
    pub moments: Moments,
    pub sinkhorn_residual: f64,
    pub sinkhorn_iterations: usize,
}

/// Moments of `m(z)` by quadrature in `z`.
pub fn posterior_moments(kernel: &PosteriorKernel, rule: &QuadratureRule) -> Result<Moments> {
    let ms: Vec<(f64, f64)> = rule
        .scaled(kernel.signal())
        .map(|(z, w)| (kernel.mean(z), w))
        .collect();
    if let Some(index) = ms.iter().position(|(m, _)| !m.is_finite()) {
        return Err(Error::NonFinite {
            context: "posterior moments",
            index,
        });
    }
    let mean: f64 = ms.iter().map(|(m, w)| w * m).sum();
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for (m, w) in &ms {
        let d = m - mean;
        let d2 = d * d;
        m2 += w * d2;
        m3 += w * d2 * d;
        m4 += w * d2 * d2;
    }
    Ok(Moments::from_central(mean, m2, m3, m4))
}

/// How the continuous signal is drawn when evaluating the value.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalChoice {
    /// `z ~ N(0, sigma_z^2 T)` integrated with the given rule.
    Normal(QuadratureRule),
    /// `s ~ U(0, 1)` mapped through `G^{-1}`.
    Uniform,
    /// Standard logistic `s` mapped through `G^{-1}(Q(s))`.
    Logistic,
}

const LOGISTIC_HALF_WIDTH: f64 = 40.0;
const LOGISTIC_STEP: f64 = 0.01;

/// Signal points `(z, weight)` with `z = G^{-1}(Q(s))` for the chosen signal law.
fn signal_points(kernel: &PosteriorKernel, choice: &SignalChoice) -> Result<Vec<(f64, f64)>> {
    let g = kernel.signal();
    Ok(match choice {
        SignalChoice::Normal(rule) => rule.scaled(g).collect(),
        SignalChoice::Uniform => u_points(&[])
            .into_iter()
            .map(|p| (g.mean + g.std * p.score, p.weight))
            .collect(),
        SignalChoice::Logistic => {
            let n = (2.0 * LOGISTIC_HALF_WIDTH / LOGISTIC_STEP).round() as usize;
            let mut pts = Vec::with_capacity(n + 1);
            for i in 0..=n {
                let s = -LOGISTIC_HALF_WIDTH + LOGISTIC_STEP * i as f64;
                // the smaller of Q(s) and 1 - Q(s), without cancellation
                let small = 1.0 / (1.0 + s.abs().exp());
                let score = if s < 0.0 {
                    normal_quantile(small)?
                } else {
                    -normal_quantile(small)?
                };
                let e = (-s.abs()).exp();
                let density = e / ((1.0 + e) * (1.0 + e));
                let w = if i == 0 || i == n { 0.5 } else { 1.0 } * LOGISTIC_STEP * density;
                pts.push((g.mean + g.std * score, w));
            }
            pts
        }
    })
}

/// Closed-form optimal value with the expectation over the signal taken
/// under `choice`.
pub fn value_with_signal(kernel: &PosteriorKernel, choice: &SignalChoice) -> Result<f64> {
    let lambda = kernel.lambda();
    let atoms = kernel.atoms();
    let offsets = kernel.offsets();
    let mut buf = vec![0.0; atoms.len()];
    let mut expected_lse = 0.0;
    for (index, (z, w)) in signal_points(kernel, choice)?.into_iter().enumerate() {
        for ((b, a), v) in buf.iter_mut().zip(offsets).zip(atoms) {
            *b = a + v * z / lambda;
        }
        let lse = log_sum_exp(&buf);
        if !lse.is_finite() {
            return Err(Error::NonFinite {
                context: "optimal value",
                index,
            });
        }
        expected_lse += w * lse;
    }
    let p = kernel.prior_masses();
    let entropy_term: f64 = p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum();
    let adjustment: f64 = p.iter().zip(offsets).map(|(x, a)| x * a).sum();
    Ok(lambda * (expected_lse + entropy_term - adjustment))
}

/// `E_z[KL(p(. | z) || p)]` in nats.
fn mutual_information(kernel: &PosteriorKernel, rule: &QuadratureRule) -> f64 {
    let p = kernel.prior_masses();
    let mut buf = vec![0.0; kernel.len()];
    let mut mi = 0.0;
    for (z, w) in rule.scaled(kernel.signal()) {
        kernel.posterior_into(z, &mut buf);
        let kl: f64 = buf
            .iter()
            .zip(p)
            .filter(|(q, _)| **q > 0.0)
            .map(|(q, pr)| q * (q / pr).ln())
            .sum();
        mi += w * kl;
    }
    mi.max(0.0)
}

/// Fill an [`EquilibriumReport`] from solved multipliers.
pub fn optimal_value(params: &ModelParams, mu: &MultiplierSolution, rule: &QuadratureRule) -> Result<EquilibriumReport> {
    let kernel = build_posterior(params, mu)?;
    report_for_kernel(params, &kernel, mu, rule)
}

pub(crate) fn report_for_kernel(
    params: &ModelParams,
    kernel: &PosteriorKernel,
    mu: &MultiplierSolution,
    rule: &QuadratureRule,
) -> Result<EquilibriumReport> {
    let value = value_with_signal(kernel, &SignalChoice::Normal(rule.clone()))?;
    let moments = posterior_moments(kernel, rule)?;
    let mi = mutual_information(kernel, rule);
    let info_cost = params.lambda * mi;
    let noise = params.noise_law();
    let g = QuantileFn::normal(noise);
    let f = kernel.quantile_fn();
    let leakage = w2_squared(&f.shifted(-moments.mean), &g)?;
    let w2sq = w2_squared(&f, &g)?;
    let s2 = noise.variance();
    let expected_profit = 0.5 * (moments.variance + s2 - leakage);
    Ok(EquilibriumReport {
        lambda: params.lambda,
        sigma_z: params.sigma_z,
        horizon: params.horizon,
        value,
        value_decomposed: expected_profit - info_cost,
        expected_profit,
        info_cost,
        mutual_information: mi,
        profit_potential: moments.variance,
        leakage_w2sq: leakage,
        w2sq,
        gelbrich_residual: leakage - (moments.std - noise.std).powi(2),
        moments,
        sinkhorn_residual: mu.residual,
        sinkhorn_iterations: mu.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sinkhorn::{solve, SinkhornOptions};

    fn setup(p_hi: f64, lambda: f64) -> (ModelParams, MultiplierSolution) {
        let p = ModelParams::two_state(lambda, 1.0, 1.0, -2.0, 2.0, p_hi).unwrap();
        let mu = solve(&p.kernel_spec().unwrap(), &p.default_rule(), &SinkhornOptions::default()).unwrap();
        (p, mu)
    }

    #[test]
    fn value_equals_decomposition() {
        for &(ph, lam) in &[(0.5, 2.0), (0.3, 2.0), (0.7, 0.5), (0.5, 8.0)] {
            let (p, mu) = setup(ph, lam);
            let r = optimal_value(&p, &mu, &p.default_rule()).unwrap();
            assert!((r.value - r.value_decomposed).abs() < 1e-8, "{ph} {lam}: {r:?}");
            assert!(r.info_cost >= 0.0 && r.profit_potential >= 0.0);
        }
    }

    #[test]
    fn gauge_shift_leaves_value() {
        let (p, mu) = setup(0.3, 2.0);
        let r0 = optimal_value(&p, &mu, &QuadratureRule::default()).unwrap();
        let r1 = optimal_value(&p, &mu.shifted(3.7), &QuadratureRule::default()).unwrap();
        assert!((r0.value - r1.value).abs() < 1e-10);
    }

    #[test]
    fn moments_none_for_zero_variance() {
        let m = Moments::from_central(1.0, 0.0, 0.0, 0.0);
        assert!(m.skewness.is_none() && m.kurtosis.is_none());
    }
}
