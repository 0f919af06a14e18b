//! Logit posteriors and the law of the conditional expected payoff.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ModelParams, Prior};
use crate::dist::{normal_cdf, normal_pdf, GridDist, NormalLaw, QuadratureRule};
use crate::error::{Error, Result};
use crate::sinkhorn::{softmax_in_place, MultiplierSolution, Payoff};
use crate::transport::QuantileFn;

/// Something that maps a signal value to `E[v | z]`.
pub trait ConditionalMean: Send + Sync {
    fn conditional_mean(&self, z: f64) -> f64;

    /// `(m(z), m'(z))`; central differences unless overridden.
    fn conditional_mean_and_slope(&self, z: f64) -> (f64, f64) {
        let h = 1e-5 * (1.0 + z.abs());
        let d = (self.conditional_mean(z + h) - self.conditional_mean(z - h)) / (2.0 * h);
        (self.conditional_mean(z), d)
    }
}

/// `z -> intercept + slope * z`; the normal-prior conditional mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMean {
    pub intercept: f64,
    pub slope: f64,
}

impl ConditionalMean for AffineMean {
    fn conditional_mean(&self, z: f64) -> f64 {
        self.intercept + self.slope * z
    }

    fn conditional_mean_and_slope(&self, z: f64) -> (f64, f64) {
        (self.conditional_mean(z), self.slope)
    }
}

/// `p(v_n | z) = softmax_n(offset_n + v_n z / lambda)` over the payoff
/// atoms with positive prior mass. For grid payoffs the offsets absorb the
/// log trapezoid weights, so the softmax returns node masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorKernel {
    atoms: Vec<f64>,
    offsets: Vec<f64>,
    prior_masses: Vec<f64>,
    /// Trapezoid weights for grid payoffs, `None` for discrete ones.
    node_weights: Option<Vec<f64>>,
    lambda: f64,
    signal: NormalLaw,
}

/// Assemble the kernel from solved multipliers.
pub fn build_posterior(params: &ModelParams, mu: &MultiplierSolution) -> Result<PosteriorKernel> {
    let payoff = params.prior.payoff()?;
    let atoms = payoff.atoms();
    if mu.mu.len() != atoms.len() {
        return Err(Error::Config(format!(
            "{} multipliers for a prior with {} atoms",
            mu.mu.len(),
            atoms.len()
        )));
    }
    if (mu.lambda - params.lambda).abs() > 1e-15 * params.lambda {
        return Err(Error::Config(format!(
            "multipliers solved at lambda {} but model has lambda {}",
            mu.lambda, params.lambda
        )));
    }
    let masses = payoff.masses();
    let tw = match &payoff {
        Payoff::Grid(g) => Some(g.trapezoid_weights()),
        Payoff::Discrete(_) => None,
    };
    let mut k = PosteriorKernel {
        atoms: Vec::new(),
        offsets: Vec::new(),
        prior_masses: Vec::new(),
        node_weights: tw.as_ref().map(|_| Vec::new()),
        lambda: params.lambda,
        signal: params.noise_law(),
    };
    for (i, (&v, &m)) in atoms.iter().zip(&mu.mu).enumerate() {
        if !m.is_finite() {
            continue;
        }
        let lw = tw.as_ref().map_or(0.0, |w| w[i].ln());
        k.atoms.push(v);
        k.offsets.push(m / params.lambda + lw);
        k.prior_masses.push(masses[i]);
        if let (Some(nw), Some(w)) = (k.node_weights.as_mut(), tw.as_ref()) {
            nw.push(w[i]);
        }
    }
    if k.atoms.is_empty() {
        return Err(Error::Config("no payoff atom carries a finite multiplier".into()));
    }
    let total: f64 = k.prior_masses.iter().sum();
    k.prior_masses.iter_mut().for_each(|p| *p /= total);
    Ok(k)
}

impl PosteriorKernel {
    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// `mu_n / lambda`, plus the log trapezoid weight for grid payoffs.
    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn prior_masses(&self) -> &[f64] {
        &self.prior_masses
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn signal(&self) -> NormalLaw {
        self.signal
    }

    pub fn is_grid(&self) -> bool {
        self.node_weights.is_some()
    }

    pub fn node_weights(&self) -> Option<&[f64]> {
        self.node_weights.as_deref()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Posterior masses at `z` written into `out`; returns the log normaliser
    /// `log sum_n exp(offset_n + v_n z / lambda)`.
    pub fn posterior_into(&self, z: f64, out: &mut [f64]) -> f64 {
        let slope = z / self.lambda;
        for ((o, &a), &v) in out.iter_mut().zip(&self.offsets).zip(&self.atoms) {
            *o = a + v * slope;
        }
        softmax_in_place(out)
    }

    /// Posterior masses at `z`.
    pub fn posterior(&self, z: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.atoms.len()];
        self.posterior_into(z, &mut out);
        out
    }

    /// `E[v | z]`.
    pub fn mean(&self, z: f64) -> f64 {
        self.mean_and_slope(z).0
    }

    /// `(m(z), m'(z))` with `m'(z) = Var(v | z) / lambda`.
    pub fn mean_and_slope(&self, z: f64) -> (f64, f64) {
        let mut buf = vec![0.0; self.atoms.len()];
        self.posterior_into(z, &mut buf);
        let m: f64 = buf.iter().zip(&self.atoms).map(|(p, v)| p * v).sum();
        let var: f64 = buf
            .iter()
            .zip(&self.atoms)
            .map(|(p, v)| p * (v - m) * (v - m))
            .sum();
        (m, var / self.lambda)
    }

    /// `(m, m', m'')` with `m'' = kappa_3(v | z) / lambda^2`.
    pub fn mean_slope_curvature(&self, z: f64) -> (f64, f64, f64) {
        let mut buf = vec![0.0; self.atoms.len()];
        self.posterior_into(z, &mut buf);
        let m: f64 = buf.iter().zip(&self.atoms).map(|(p, v)| p * v).sum();
        let (var, k3) = buf.iter().zip(&self.atoms).fold((0.0, 0.0), |(a, b), (p, v)| {
            let d = v - m;
            (a + p * d * d, b + p * d * d * d)
        });
        (m, var / self.lambda, k3 / (self.lambda * self.lambda))
    }

    /// `z` with `m(z) = v`, by bisection down to a bracket of 1e-13. `None`
    /// when `v` lies outside the numerical range of `m`.
    pub fn inverse_mean(&self, v: f64) -> Option<f64> {
        let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
        let mut expand = 0;
        while self.mean(lo) > v {
            lo *= 2.0;
            expand += 1;
            if expand > 1100 || !lo.is_finite() {
                return None;
            }
        }
        expand = 0;
        while self.mean(hi) < v {
            hi *= 2.0;
            expand += 1;
            if expand > 1100 || !hi.is_finite() {
                return None;
            }
        }
        while hi - lo > 1e-13 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.mean(mid) < v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    /// Density of `m(z)`, `z ~ signal`, at `v` by change of variables.
    pub fn density_at(&self, v: f64) -> f64 {
        let lo = self.atoms[0];
        let hi = self.atoms[self.atoms.len() - 1];
        if v <= lo || v >= hi {
            return 0.0;
        }
        match self.inverse_mean(v) {
            Some(z) => {
                let (_, slope) = self.mean_and_slope(z);
                if slope < 1e-300 {
                    return 0.0;
                }
                self.signal_pdf(z) / slope
            }
            None => 0.0,
        }
    }

    fn signal_pdf(&self, z: f64) -> f64 {
        normal_pdf((z - self.signal.mean) / self.signal.std) / self.signal.std
    }
}

impl PosteriorKernel {
    /// Quantile function of `m(z)`, `z ~ signal`, as the pushforward of the
    /// signal law through `m`.
    pub fn quantile_fn(&self) -> QuantileFn {
        let k = Arc::new(self.clone());
        QuantileFn::pushforward(self.signal, move |z| k.mean(z))
    }
}

impl ConditionalMean for PosteriorKernel {
    fn conditional_mean(&self, z: f64) -> f64 {
        self.mean(z)
    }

    fn conditional_mean_and_slope(&self, z: f64) -> (f64, f64) {
        self.mean_and_slope(z)
    }
}

/// Default node count of the uniform `z` grid behind [`posterior_mean_law`].
pub const DENSITY_NODES: usize = 17_001;
/// Half width, in signal standard deviations, of that grid.
pub const DENSITY_HALF_WIDTH: f64 = 8.5;

/// Uniform `z` rule used to tabulate the law of `E[v | z]`.
pub fn density_rule() -> QuadratureRule {
    QuadratureRule::trapezoid(DENSITY_NODES, DENSITY_HALF_WIDTH)
}

/// Tabulated law of `E[v | z]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMeanLaw {
    pub grid: GridDist,
    /// Mass of the change-of-variables density minus one, by the
    /// derivative-corrected trapezoid rule on the nodes. Equals
    /// `-truncated_mass` up to quadrature error.
    pub normalization_error: f64,
    /// Signal nodes dropped because `m` is numerically flat there.
    pub truncated: usize,
    /// Signal probability beyond the outermost kept nodes. That mass sits
    /// within rounding distance of the ends of the support.
    pub truncated_mass: f64,
    /// `df/dv` at the grid nodes.
    pub slopes: Vec<f64>,
}

impl PosteriorMeanLaw {
    /// Cubic Hermite interpolation of the change-of-variables density,
    /// before the grid's trapezoid renormalisation; zero off the grid.
    pub fn density_at(&self, v: f64) -> f64 {
        let x = self.grid.nodes();
        let f = self.grid.density();
        let scale = self.grid.raw_mass();
        let n = x.len();
        if v < x[0] || v > x[n - 1] {
            return 0.0;
        }
        let i = x.partition_point(|&u| u <= v).clamp(1, n - 1);
        let h = x[i] - x[i - 1];
        let t = (v - x[i - 1]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * f[i - 1] * scale
            + (t3 - 2.0 * t2 + t) * h * self.slopes[i - 1]
            + (-2.0 * t3 + 3.0 * t2) * f[i] * scale
            + (t3 - t2) * h * self.slopes[i]
    }

    /// `int v^k f(v) dv` for `k` in `0..=1` by the corrected trapezoid rule.
    fn raw_moments(&self) -> [f64; 2] {
        let x = self.grid.nodes();
        let scale = self.grid.raw_mass();
        let f: Vec<f64> = self.grid.density().iter().map(|d| d * scale).collect();
        let df = &self.slopes;
        let mut out = [0.0; 2];
        for i in 0..x.len() - 1 {
            let h = x[i + 1] - x[i];
            let cells = [
                (f[i], f[i + 1], df[i], df[i + 1]),
                (
                    x[i] * f[i],
                    x[i + 1] * f[i + 1],
                    f[i] + x[i] * df[i],
                    f[i + 1] + x[i + 1] * df[i + 1],
                ),
            ];
            for (o, (a, b, da, db)) in out.iter_mut().zip(cells) {
                let trap = 0.5 * h * (a + b);
                let corr = h * h / 12.0 * (da - db);
                // unresolved cells keep the plain rule
                *o += if corr.abs() <= 0.1 * trap.abs().max(1e-300) { trap + corr } else { trap };
            }
        }
        out
    }

    /// Mass of the tabulated density.
    pub fn mass(&self) -> f64 {
        self.raw_moments()[0]
    }

    /// Mean of the normalised law.
    pub fn mean(&self) -> f64 {
        let [m0, m1] = self.raw_moments();
        m1 / m0
    }
}

/// Relative mismatch between a cell's v-gap and `int m'(z) dz` above which
/// the cell counts as lost to rounding.
const RESOLUTION_TOL: f64 = 1e-3;

struct Node {
    z: f64,
    m: f64,
    slope: f64,
    curv: f64,
}

/// Whether `m(b) - m(a)` agrees with the corrected trapezoid of `m'`.
fn resolved(a: &Node, b: &Node) -> bool {
    let h = b.z - a.z;
    let predicted = 0.5 * h * (a.slope + b.slope) + h * h / 12.0 * (a.curv - b.curv);
    let actual = b.m - a.m;
    actual > 0.0 && predicted > 0.0 && (actual - predicted).abs() <= RESOLUTION_TOL * predicted
}

/// Law of `m(z)`, `z ~ N(0, sigma_z^2 T)`, on the images `m(z_i)` of the
/// rule's nodes, with density `phi_z(z_i) / m'(z_i)`. The grid grows outward
/// from the steepest node and stops on each side at the first cell whose
/// v-gap is no longer resolved in floating point.
pub fn posterior_mean_law(kernel: &PosteriorKernel, rule: &QuadratureRule) -> Result<PosteriorMeanLaw> {
    let sig = kernel.signal;
    let mut zs: Vec<f64> = rule.nodes().iter().map(|&x| sig.mean + sig.std * x).collect();
    zs.sort_by(f64::total_cmp);
    let all: Vec<Node> = zs
        .iter()
        .map(|&z| {
            let (m, slope, curv) = kernel.mean_slope_curvature(z);
            Node { z, m, slope, curv }
        })
        .collect();
    let usable = |n: &Node| n.slope >= 1e-300 && (kernel.signal_pdf(n.z) / n.slope).is_finite();
    let Some(peak) = (0..all.len())
        .filter(|&i| usable(&all[i]))
        .max_by(|&i, &j| all[i].slope.total_cmp(&all[j].slope))
    else {
        return Err(Error::Domain(
            "conditional mean is numerically constant; no density to tabulate".into(),
        ));
    };
    let mut lo = peak;
    while lo > 0 && usable(&all[lo - 1]) && resolved(&all[lo - 1], &all[lo]) {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < all.len() && usable(&all[hi + 1]) && resolved(&all[hi], &all[hi + 1]) {
        hi += 1;
    }
    if hi == lo {
        return Err(Error::Domain(
            "conditional mean is numerically constant; no density to tabulate".into(),
        ));
    }
    let kept = &all[lo..=hi];
    let mut nodes = Vec::with_capacity(kept.len());
    let mut density = Vec::with_capacity(kept.len());
    let mut slopes = Vec::with_capacity(kept.len());
    for n in kept {
        let pdf = kernel.signal_pdf(n.z);
        // df/dv = (phi'/m' - phi m''/m'^2) / m'
        let dpdf = -(n.z - sig.mean) / (sig.std * sig.std) * pdf;
        let dd = (dpdf / n.slope - pdf * n.curv / (n.slope * n.slope)) / n.slope;
        nodes.push(n.m);
        density.push(pdf / n.slope);
        slopes.push(if dd.is_finite() { dd } else { 0.0 });
    }
    let truncated_mass =
        normal_cdf((kept[0].z - sig.mean) / sig.std) + normal_cdf(-(kept[kept.len() - 1].z - sig.mean) / sig.std);
    let grid = GridDist::new(nodes, density)?;
    let mut law = PosteriorMeanLaw {
        normalization_error: 0.0,
        grid,
        truncated: all.len() - kept.len(),
        truncated_mass,
        slopes,
    };
    law.normalization_error = law.mass() - 1.0;
    Ok(law)
}

/// Closed-form density of `E[v | z]` for a two-point prior, as printed:
/// `lambda / (s (v2 - v)(v - v1)) * phi(lambda / (s (v1 - v2)) * log((v2 - v)/(v - v1)) - (mu1 - mu2) / (s (v1 - v2)))`
/// with `s = sigma_z sqrt(T)`.
pub fn two_state_density(v: f64, params: &ModelParams, mu1: f64, mu2: f64) -> Result<f64> {
    let Prior::Discrete(d) = &params.prior else {
        return Err(Error::Config("two-state density needs a discrete prior".into()));
    };
    if d.len() != 2 {
        return Err(Error::Config(format!("two-state density needs 2 atoms, got {}", d.len())));
    }
    let (v1, v2) = (d.atoms()[0], d.atoms()[1]);
    if v <= v1 || v >= v2 {
        return Ok(0.0);
    }
    let s = params.noise_scale();
    let lam = params.lambda;
    let arg = lam / (s * (v1 - v2)) * ((v2 - v) / (v - v1)).ln() - (mu1 - mu2) / (s * (v1 - v2));
    Ok(lam / (s * (v2 - v) * (v - v1)) * normal_pdf(arg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sinkhorn::{solve, SinkhornOptions};

    fn kernel(p_hi: f64, lambda: f64) -> (ModelParams, MultiplierSolution, PosteriorKernel) {
        let p = ModelParams::two_state(lambda, 1.0, 1.0, -2.0, 2.0, p_hi).unwrap();
        let mu = solve(&p.kernel_spec().unwrap(), &QuadratureRule::default(), &SinkhornOptions::default()).unwrap();
        let k = build_posterior(&p, &mu).unwrap();
        (p, mu, k)
    }

    #[test]
    fn symmetric_kernel_at_zero() {
        let (_, _, k) = kernel(0.5, 2.0);
        let p = k.posterior(0.0);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert!(k.mean(0.0).abs() < 1e-15);
    }

    #[test]
    fn far_signal_selects_top_atom() {
        let (_, _, k) = kernel(0.3, 2.0);
        let z = 50.0 * 2.0 / 4.0;
        assert!(k.posterior(z)[1] > 1.0 - 1e-9);
    }

    #[test]
    fn inverse_mean_round_trip() {
        let (_, _, k) = kernel(0.3, 2.0);
        for &z in &[-3.0, -0.4, 0.0, 1.1, 2.5] {
            let back = k.inverse_mean(k.mean(z)).unwrap();
            assert!((back - z).abs() < 1e-9, "{z} vs {back}");
        }
        assert!(k.inverse_mean(2.5).is_none());
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let (_, mu, _) = kernel(0.5, 2.0);
        let p3 = ModelParams::new(
            2.0,
            1.0,
            1.0,
            Prior::Discrete(crate::dist::DiscreteDist::new(vec![-1.0, 0.0, 1.0], vec![0.3, 0.4, 0.3]).unwrap()),
        )
        .unwrap();
        assert!(matches!(build_posterior(&p3, &mu), Err(Error::Config(_))));
    }

    #[test]
    fn closed_form_density_outside_support_is_zero() {
        let (p, mu, _) = kernel(0.5, 2.0);
        assert_eq!(two_state_density(-2.0, &p, mu.mu[0], mu.mu[1]).unwrap(), 0.0);
        assert_eq!(two_state_density(3.0, &p, mu.mu[0], mu.mu[1]).unwrap(), 0.0);
        let a = two_state_density(0.7, &p, 0.0, 0.0).unwrap();
        let b = two_state_density(-0.7, &p, 0.0, 0.0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn tabulated_density_matches_closed_form() {
        for (ph, lam) in [(0.5, 0.5), (0.5, 2.0), (0.7, 0.5), (0.7, 2.0)] {
            let (p, mu, k) = kernel(ph, lam);
            let law = posterior_mean_law(&k, &density_rule()).unwrap();
            for i in 1..100 {
                let v = -2.0 + 0.04 * i as f64;
                let exact = two_state_density(v, &p, mu.mu[0], mu.mu[1]).unwrap();
                assert!((law.density_at(v) - exact).abs() < 1e-8, "{ph} {lam} {v}");
                if ph == 0.5 {
                    assert!((law.density_at(v) - law.density_at(-v)).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn resolved_law_has_unit_mass_and_prior_mean() {
        let (p, _, k) = kernel(0.7, 2.0);
        let law = posterior_mean_law(&k, &density_rule()).unwrap();
        assert!(law.truncated_mass < 1e-12);
        assert!(law.normalization_error.abs() < 1e-8);
        assert!((law.mean() - p.prior.mean()).abs() < 1e-8);
    }
}
