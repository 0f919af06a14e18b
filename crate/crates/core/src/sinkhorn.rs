//! Log-domain Sinkhorn solvers for the Bayes-plausibility multipliers.
//!
//! With `a_n = mu_n / lambda` the posterior over payoff atoms given a signal
//! value `z` is `softmax_n(a_n + v_n z / lambda)`; the multipliers are chosen
//! so that its average over the signal law reproduces the prior masses.

use serde::{Deserialize, Serialize};

use crate::dist::{DiscreteDist, GridDist, NormalLaw, QuadratureRule};
use crate::error::{domain, Error, Result};

/// Prior masses below this are dropped before solving.
pub const PRUNE_BELOW: f64 = 1e-14;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;
/// Consecutive residual increases that switch on damping.
const OSCILLATION_WINDOW: usize = 5;
const DAMPING: f64 = 0.5;

/// `log sum_i exp(x_i)` with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Overwrite `buf` with `softmax(buf)`; returns the log normaliser.
pub fn softmax_in_place(buf: &mut [f64]) -> f64 {
    let m = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in buf.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    let inv = 1.0 / sum;
    buf.iter_mut().for_each(|x| *x *= inv);
    m + sum.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payoff {
    Discrete(DiscreteDist),
    Grid(GridDist),
}

impl Payoff {
    pub fn atoms(&self) -> &[f64] {
        match self {
            Payoff::Discrete(d) => d.atoms(),
            Payoff::Grid(g) => g.nodes(),
        }
    }

    /// Prior mass attached to each atom (trapezoid masses for grids).
    pub fn masses(&self) -> Vec<f64> {
        match self {
            Payoff::Discrete(d) => d.probs().to_vec(),
            Payoff::Grid(g) => g.masses(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Payoff::Discrete(d) => d.mean(),
            Payoff::Grid(g) => g.mean(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Payoff::Discrete(d) => d.variance(),
            Payoff::Grid(g) => g.variance(),
        }
    }

    pub fn is_grid(&self) -> bool {
        matches!(self, Payoff::Grid(_))
    }
}

/// Law of the signal the posterior is indexed by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SignalSpec {
    Normal(NormalLaw),
    /// Finitely many signal states with conditional values `I_m` and masses `q_m`.
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub payoff: Payoff,
    pub signal: SignalSpec,
    pub lambda: f64,
}

impl KernelSpec {
    pub fn new(payoff: Payoff, signal: SignalSpec, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        if let SignalSpec::Discrete { values, probs } = &signal {
            if values.len() != probs.len() || values.is_empty() {
                return Err(Error::Config("discrete signal needs one mass per value".into()));
            }
            if values.iter().any(|v| !v.is_finite())
                || probs.iter().any(|q| !(q.is_finite() && *q >= 0.0))
            {
                return Err(Error::Config("discrete signal values and masses must be finite".into()));
            }
            let total: f64 = probs.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("signal masses sum to {total}, not 1")));
            }
        }
        Ok(Self {
            payoff,
            signal,
            lambda,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gauge {
    /// `sum_n p_n mu_n = 0` over the surviving atoms.
    MeanZero,
}

/// Starting point of the iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// `xi = 1`.
    Uniform,
    /// `xi` equal to the prior masses.
    Prior,
    /// Multipliers from an earlier solve, one per atom.
    Warm(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub init: Init,
    pub record_trace: bool,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            init: Init::Prior,
            record_trace: false,
        }
    }
}

impl SinkhornOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_trace(mut self) -> Self {
        self.record_trace = true;
        self
    }
}

/// Solved multipliers with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSolution {
    /// One multiplier per payoff atom or grid node; pruned atoms carry `-inf`.
    pub mu: Vec<f64>,
    pub lambda: f64,
    pub gauge: Gauge,
    /// Max Bayes-plausibility violation at the returned multipliers. For grid
    /// payoffs it is measured on densities rather than masses.
    pub residual: f64,
    pub iterations: usize,
    /// Indices of atoms dropped for having negligible prior mass.
    pub pruned: Vec<usize>,
    /// Whether oscillation forced the damped update.
    pub damped: bool,
    /// Residual after each iteration, when requested.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trace: Vec<f64>,
}

impl MultiplierSolution {
    /// Copy with every finite multiplier shifted by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.mu.iter_mut().filter(|m| m.is_finite()).for_each(|m| *m += c);
        out
    }
}

/// Signal points `(z, weight)` with weights summing to one.
fn signal_points(signal: &SignalSpec, rule: &QuadratureRule) -> (Vec<f64>, Vec<f64>) {
    match signal {
        SignalSpec::Normal(law) => rule.scaled(*law).unzip(),
        SignalSpec::Discrete { values, probs } => values
            .iter()
            .zip(probs)
            .filter(|(_, &q)| q > 0.0)
            .map(|(&v, &q)| (v, q))
            .unzip(),
    }
}

/// Average posterior `s_n = sum_k w_k softmax_n(a_n + v_n z_k / lambda)`.
fn posterior_average(a: &[f64], v: &[f64], z: &[f64], w: &[f64], lambda: f64, s: &mut [f64], buf: &mut [f64]) {
    s.iter_mut().for_each(|x| *x = 0.0);
    for (&zk, &wk) in z.iter().zip(w) {
        let slope = zk / lambda;
        for ((b, &an), &vn) in buf.iter_mut().zip(a).zip(v) {
            *b = an + vn * slope;
        }
        softmax_in_place(buf);
        for (sn, &bn) in s.iter_mut().zip(buf.iter()) {
            *sn += wk * bn;
        }
    }
}

struct Reduced {
    keep: Vec<usize>,
    pruned: Vec<usize>,
    v: Vec<f64>,
    mass: Vec<f64>,
    /// residual scale per atom (1 for masses, 1/w for grid densities)
    scale: Vec<f64>,
}

fn reduce(payoff: &Payoff) -> Result<Reduced> {
    let atoms = payoff.atoms();
    let masses = payoff.masses();
    let tw = match payoff {
        Payoff::Grid(g) => Some(g.trapezoid_weights()),
        Payoff::Discrete(_) => None,
    };
    let mut r = Reduced {
        keep: Vec::new(),
        pruned: Vec::new(),
        v: Vec::new(),
        mass: Vec::new(),
        scale: Vec::new(),
    };
    for (i, (&v, &p)) in atoms.iter().zip(&masses).enumerate() {
        if p < PRUNE_BELOW {
            r.pruned.push(i);
        } else {
            r.keep.push(i);
            r.v.push(v);
            r.mass.push(p);
            r.scale.push(tw.as_ref().map_or(1.0, |w| 1.0 / w[i]));
        }
    }
    if r.keep.is_empty() {
        return domain("every payoff atom has negligible prior mass");
    }
    let total: f64 = r.mass.iter().sum();
    r.mass.iter_mut().for_each(|p| *p /= total);
    Ok(r)
}

fn solve_reduced(spec: &KernelSpec, z: &[f64], w: &[f64], opts: &SinkhornOptions) -> Result<MultiplierSolution> {
    let lambda = spec.lambda;
    let r = reduce(&spec.payoff)?;
    let n = r.v.len();
    let log_mass: Vec<f64> = r.mass.iter().map(|p| p.ln()).collect();
    let log_w: Vec<f64> = match &spec.payoff {
        Payoff::Grid(g) => {
            let tw = g.trapezoid_weights();
            r.keep.iter().map(|&i| tw[i].ln()).collect()
        }
        Payoff::Discrete(_) => vec![0.0; n],
    };
    let mut a: Vec<f64> = match &opts.init {
        Init::Uniform => log_w.clone(),
        Init::Prior => log_mass.clone(),
        Init::Warm(mu) => {
            if mu.len() != spec.payoff.atoms().len() {
                return Err(Error::Config(format!(
                    "warm start has {} multipliers for {} atoms",
                    mu.len(),
                    spec.payoff.atoms().len()
                )));
            }
            r.keep
                .iter()
                .zip(&log_w)
                .map(|(&i, lw)| mu[i] / lambda + lw)
                .map(|x| if x.is_finite() { x } else { 0.0 })
                .collect()
        }
    };

    let mut s = vec![0.0; n];
    let mut buf = vec![0.0; n];
    let mut trace = Vec::new();
    let mut step = 1.0;
    let mut damped = false;
    let mut rises = 0;
    let mut prev = f64::INFINITY;
    let mut iterations = 0;
    let residual = loop {
        posterior_average(&a, &r.v, z, w, lambda, &mut s, &mut buf);
        let res = s
            .iter()
            .zip(&r.mass)
            .zip(&r.scale)
            .map(|((si, pi), sc)| (si - pi).abs() * sc)
            .fold(0.0, f64::max);
        if !res.is_finite() {
            return Err(Error::NonFinite {
                context: "sinkhorn residual",
                index: iterations,
            });
        }
        if opts.record_trace {
            trace.push(res);
        }
        if n == 1 || res < opts.tol {
            break res;
        }
        if iterations >= opts.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                residual: res,
                tol: opts.tol,
            });
        }
        if res > prev {
            rises += 1;
            if rises >= OSCILLATION_WINDOW && !damped {
                damped = true;
                step = DAMPING;
            }
        } else {
            rises = 0;
        }
        prev = res;
        for ((ai, lp), si) in a.iter_mut().zip(&log_mass).zip(&s) {
            *ai += step * (lp - si.ln());
        }
        iterations += 1;
    };

    // back to mu on the payoff support, then fix the gauge
    let mut mu_kept: Vec<f64> = a.iter().zip(&log_w).map(|(ai, lw)| lambda * (ai - lw)).collect();
    if n == 1 {
        mu_kept[0] = 0.0;
    }
    let centre: f64 = mu_kept.iter().zip(&r.mass).map(|(m, p)| m * p).sum();
    let mut mu = vec![f64::NEG_INFINITY; spec.payoff.atoms().len()];
    for (&i, m) in r.keep.iter().zip(&mu_kept) {
        mu[i] = m - centre;
    }
    Ok(MultiplierSolution {
        mu,
        lambda,
        gauge: Gauge::MeanZero,
        residual,
        iterations,
        pruned: r.pruned,
        damped,
        trace,
    })
}

/// Discrete payoff against a continuous (normal) signal.
pub fn solve_discrete_continuous(
    spec: &KernelSpec,
    rule: &QuadratureRule,
    opts: &SinkhornOptions,
) -> Result<MultiplierSolution> {
    if !matches!(spec.payoff, Payoff::Discrete(_)) || !matches!(spec.signal, SignalSpec::Normal(_)) {
        return Err(Error::Config("expected a discrete payoff and a normal signal".into()));
    }
    let (z, w) = signal_points(&spec.signal, rule);
    solve_reduced(spec, &z, &w, opts)
}

/// Discrete payoff against finitely many signal states with values `I_m`.
pub fn solve_discrete_discrete(
    payoff: &DiscreteDist,
    i_values: &[f64],
    q: &[f64],
    lambda: f64,
    opts: &SinkhornOptions,
) -> Result<MultiplierSolution> {
    let spec = KernelSpec::new(
        Payoff::Discrete(payoff.clone()),
        SignalSpec::Discrete {
            values: i_values.to_vec(),
            probs: q.to_vec(),
        },
        lambda,
    )?;
    let (z, w) = signal_points(&spec.signal, &QuadratureRule::gauss_hermite(1));
    solve_reduced(&spec, &z, &w, opts)
}

/// Payoff with a density on a grid against a normal signal.
pub fn solve_continuous_continuous(
    payoff: &GridDist,
    signal: NormalLaw,
    lambda: f64,
    rule: &QuadratureRule,
    opts: &SinkhornOptions,
) -> Result<MultiplierSolution> {
    let spec = KernelSpec::new(Payoff::Grid(payoff.clone()), SignalSpec::Normal(signal), lambda)?;
    let (z, w) = signal_points(&spec.signal, rule);
    solve_reduced(&spec, &z, &w, opts)
}

/// Dispatch on the payoff and signal kinds.
pub fn solve(spec: &KernelSpec, rule: &QuadratureRule, opts: &SinkhornOptions) -> Result<MultiplierSolution> {
    let (z, w) = signal_points(&spec.signal, rule);
    solve_reduced(spec, &z, &w, opts)
}

/// `max_n |E[p(v_n | signal)] - p_n|` evaluated with `rule`, independently of
/// the rule the multipliers were solved with. Grid payoffs are compared on
/// densities.
pub fn bayes_residual(spec: &KernelSpec, mu: &[f64], rule: &QuadratureRule) -> Result<f64> {
    let atoms = spec.payoff.atoms();
    if mu.len() != atoms.len() {
        return Err(Error::Config(format!("{} multipliers for {} atoms", mu.len(), atoms.len())));
    }
    let masses = spec.payoff.masses();
    let tw = match &spec.payoff {
        Payoff::Grid(g) => g.trapezoid_weights(),
        Payoff::Discrete(_) => vec![1.0; atoms.len()],
    };
    let a: Vec<f64> = mu
        .iter()
        .zip(&tw)
        .map(|(m, w)| m / spec.lambda + w.ln())
        .collect();
    let (z, w) = signal_points(&spec.signal, rule);
    let mut s = vec![0.0; atoms.len()];
    let mut buf = vec![0.0; atoms.len()];
    posterior_average(&a, atoms, &z, &w, spec.lambda, &mut s, &mut buf);
    let scale = spec.payoff.is_grid();
    Ok(s.iter()
        .zip(&masses)
        .zip(&tw)
        .map(|((si, pi), wi)| if scale { (si - pi).abs() / wi } else { (si - pi).abs() })
        .fold(0.0, f64::max))
}

/// Outcome of moving prior mass between two atoms and re-solving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityProbe {
    /// `(p_n, mu_n)` before the shift.
    pub before: Vec<(f64, f64)>,
    /// `(p_n, mu_n)` after the shift.
    pub after: Vec<(f64, f64)>,
    /// `mu_to - mu_from` before and after; free of the additive gauge.
    pub difference_before: f64,
    pub difference_after: f64,
}

impl MonotonicityProbe {
    pub fn increased(&self) -> bool {
        self.difference_after > self.difference_before
    }
}

/// Move `delta` of prior mass from atom `from` to atom `to`, re-solve, and
/// report `mu_to - mu_from` before and after.
pub fn multiplier_monotonicity_probe(
    spec: &KernelSpec,
    from: usize,
    to: usize,
    delta: f64,
    rule: &QuadratureRule,
    opts: &SinkhornOptions,
) -> Result<MonotonicityProbe> {
    let Payoff::Discrete(d) = &spec.payoff else {
        return domain("monotonicity probe needs a discrete payoff");
    };
    let n = d.len();
    if from >= n || to >= n || from == to {
        return domain(format!("invalid atom pair ({from}, {to}) for {n} atoms"));
    }
    let mut probs = d.probs().to_vec();
    probs[from] -= delta;
    probs[to] += delta;
    if probs.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return domain(format!("shift {delta} pushes a probability outside (0, 1)"));
    }
    let shifted = KernelSpec {
        payoff: Payoff::Discrete(DiscreteDist::new(d.atoms().to_vec(), probs.clone())?),
        ..spec.clone()
    };
    let s0 = solve(spec, rule, opts)?;
    let s1 = solve(&shifted, rule, opts)?;
    Ok(MonotonicityProbe {
        before: d.probs().iter().copied().zip(s0.mu.iter().copied()).collect(),
        after: probs.into_iter().zip(s1.mu.iter().copied()).collect(),
        difference_before: s0.mu[to] - s0.mu[from],
        difference_after: s1.mu[to] - s1.mu[from],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(p_hi: f64, lambda: f64) -> KernelSpec {
        KernelSpec::new(
            Payoff::Discrete(DiscreteDist::two_point(-2.0, 2.0, p_hi).unwrap()),
            SignalSpec::Normal(NormalLaw::standard()),
            lambda,
        )
        .unwrap()
    }

    #[test]
    fn lse_and_softmax() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 2]), f64::NEG_INFINITY);
        let mut b = [-1000.0, 0.0, 1e-3];
        softmax_in_place(&mut b);
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(b[0], 0.0);
    }

    #[test]
    fn symmetric_two_state_has_zero_multipliers() {
        let sol = solve_discrete_continuous(&two_state(0.5, 2.0), &QuadratureRule::default(), &SinkhornOptions::default())
            .unwrap();
        assert!(sol.mu.iter().all(|m| m.abs() < 1e-12), "{:?}", sol.mu);
    }

    #[test]
    fn asymmetric_two_state_orders_multipliers() {
        let spec = two_state(0.7, 2.0);
        let sol = solve_discrete_continuous(&spec, &QuadratureRule::default(), &SinkhornOptions::default()).unwrap();
        assert!(sol.mu[1] > sol.mu[0]);
        assert!(sol.residual < 1e-10);
        let gauge: f64 = sol.mu[0] * 0.3 + sol.mu[1] * 0.7;
        assert!(gauge.abs() < 1e-14);
        let cross = bayes_residual(&spec, &sol.mu, &QuadratureRule::cross_check()).unwrap();
        assert!(cross < 1e-9, "{cross}");
    }

    #[test]
    fn pruned_atom_leaves_single_survivor() {
        let d = DiscreteDist::new(vec![-1.0, 1.0], vec![1.0, 0.0]).unwrap();
        let spec = KernelSpec::new(Payoff::Discrete(d), SignalSpec::Normal(NormalLaw::standard()), 1.0).unwrap();
        let sol = solve(&spec, &QuadratureRule::default(), &SinkhornOptions::default()).unwrap();
        assert_eq!(sol.pruned, vec![1]);
        assert_eq!(sol.mu[0], 0.0);
        assert_eq!(sol.mu[1], f64::NEG_INFINITY);
    }

    #[test]
    fn single_signal_state_reproduces_prior() {
        let d = DiscreteDist::new(vec![-1.0, 0.5, 2.0], vec![0.2, 0.5, 0.3]).unwrap();
        let lambda = 1.5;
        let sol = solve_discrete_discrete(&d, &[0.0], &[1.0], lambda, &SinkhornOptions::default()).unwrap();
        let raw: Vec<f64> = d.probs().iter().map(|p| lambda * p.ln()).collect();
        let c: f64 = raw.iter().zip(d.probs()).map(|(m, p)| m * p).sum();
        for (m, r) in sol.mu.iter().zip(&raw) {
            assert!((m - (r - c)).abs() < 1e-12);
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let spec = two_state(0.7, 0.05);
        let err = solve(&spec, &QuadratureRule::default(), &SinkhornOptions::default().with_max_iter(3)).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { iterations: 3, .. }));
    }

    #[test]
    fn rejects_bad_lambda() {
        let d = DiscreteDist::two_point(0.0, 1.0, 0.5).unwrap();
        assert!(KernelSpec::new(Payoff::Discrete(d), SignalSpec::Normal(NormalLaw::standard()), 0.0).is_err());
    }

    #[test]
    fn probe_rejects_bad_shift() {
        let spec = two_state(0.5, 2.0);
        let r = QuadratureRule::default();
        assert!(multiplier_monotonicity_probe(&spec, 0, 1, 0.6, &r, &SinkhornOptions::default()).is_err());
        let p = multiplier_monotonicity_probe(&spec, 0, 1, 0.0, &r, &SinkhornOptions::default()).unwrap();
        assert_eq!(p.difference_before, p.difference_after);
    }
}
