//! Quantile functions and one-dimensional Wasserstein-2 transport.

use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::dist::{normal_cdf, normal_quantile, DiscreteDist, GaussLegendre, GridDist, NormalLaw};
use crate::error::{domain, Error, Result};

type ScoreMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// How the quantile function is represented.
#[derive(Clone)]
pub enum QuantileRepr {
    /// Closed-form normal quantile.
    Normal(NormalLaw),
    /// Piecewise constant: `values[m]` on `(breaks[m-1], breaks[m]]`, where
    /// `breaks` are the interior cumulative probabilities.
    Step { breaks: Vec<f64>, values: Vec<f64> },
    /// Piecewise-linear inverse of a tabulated cdf.
    Interpolated { probs: Vec<f64>, values: Vec<f64> },
    /// `u -> map(base.mean + base.std * Phi^{-1}(u))` for a nondecreasing map.
    Pushforward { base: NormalLaw, map: ScoreMap },
}

impl fmt::Debug for QuantileRepr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Normal(law) => f.debug_tuple("Normal").field(law).finish(),
            Self::Step { breaks, values } => f
                .debug_struct("Step")
                .field("breaks", breaks)
                .field("values", values)
                .finish(),
            Self::Interpolated { probs, .. } => f
                .debug_struct("Interpolated")
                .field("nodes", &probs.len())
                .finish(),
            Self::Pushforward { base, .. } => {
                f.debug_struct("Pushforward").field("base", base).finish()
            }
        }
    }
}

/// Nondecreasing quantile function `F^{-1}` on `(0, 1)`, plus a constant shift.
#[derive(Debug, Clone)]
pub struct QuantileFn {
    repr: QuantileRepr,
    shift: f64,
}

impl QuantileFn {
    pub fn normal(law: NormalLaw) -> Self {
        Self {
            repr: QuantileRepr::Normal(law),
            shift: 0.0,
        }
    }

    /// Step quantile of a discrete law; zero-mass atoms are skipped.
    pub fn from_discrete(d: &DiscreteDist) -> Self {
        Self::step(d.atoms(), d.probs()).expect("validated discrete law")
    }

    /// Step quantile taking value `values[m]` with probability `probs[m]`.
    pub fn step(values: &[f64], probs: &[f64]) -> Result<Self> {
        if values.len() != probs.len() || values.is_empty() {
            return domain("step quantile needs one probability per value");
        }
        let mut kept_v = Vec::new();
        let mut kept_p = Vec::new();
        for (&v, &p) in values.iter().zip(probs) {
            if p < 0.0 || !p.is_finite() || !v.is_finite() {
                return domain("step quantile needs finite values and nonnegative masses");
            }
            if p > 0.0 {
                kept_v.push(v);
                kept_p.push(p);
            }
        }
        if kept_v.is_empty() || kept_v.windows(2).any(|w| w[0] > w[1]) {
            return domain("step quantile values must be nondecreasing with positive total mass");
        }
        let total: f64 = kept_p.iter().sum();
        let mut breaks = Vec::with_capacity(kept_p.len() - 1);
        let mut acc = 0.0;
        for p in &kept_p[..kept_p.len() - 1] {
            acc += p / total;
            breaks.push(acc);
        }
        Ok(Self {
            repr: QuantileRepr::Step {
                breaks,
                values: kept_v,
            },
            shift: 0.0,
        })
    }

    /// Piecewise-linear inverse of the grid cdf. Each flat cdf stretch is
    /// collapsed to a single jump of the quantile: only its end nodes are kept,
    /// and a leading or trailing stretch keeps only the node next to the mass.
    pub fn from_grid(g: &GridDist) -> Self {
        let (x, c) = (g.nodes(), g.cdf());
        let n = x.len();
        let mut probs = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && c[j + 1] <= c[i] {
                j += 1;
            }
            let leading = i == 0;
            let trailing = j == n - 1;
            if !leading || j == i {
                probs.push(c[i]);
                values.push(x[i]);
            }
            if j > i && !trailing {
                probs.push(c[i]);
                values.push(x[j]);
            }
            i = j + 1;
        }
        Self {
            repr: QuantileRepr::Interpolated { probs, values },
            shift: 0.0,
        }
    }

    /// Law of `map(X)`, `X ~ base`, for a nondecreasing `map`.
    pub fn pushforward(base: NormalLaw, map: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            repr: QuantileRepr::Pushforward {
                base,
                map: Arc::new(map),
            },
            shift: 0.0,
        }
    }

    pub fn repr(&self) -> &QuantileRepr {
        &self.repr
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Same law translated by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            repr: self.repr.clone(),
            shift: self.shift + c,
        }
    }

    /// `F^{-1}(u)`.
    pub fn eval(&self, u: f64) -> f64 {
        match &self.repr {
            QuantileRepr::Normal(_) | QuantileRepr::Pushforward { .. } => {
                match normal_quantile(u) {
                    Ok(x) => self.at_normal_score(x),
                    Err(_) => f64::NAN,
                }
            }
            _ => self.eval_u(u),
        }
    }

    /// `F^{-1}(Phi(x))`, without the round trip through `u` where the
    /// representation allows it.
    pub fn at_normal_score(&self, x: f64) -> f64 {
        match &self.repr {
            QuantileRepr::Normal(law) => law.mean + law.std * x + self.shift,
            QuantileRepr::Pushforward { base, map } => map(base.mean + base.std * x) + self.shift,
            _ => self.eval_u(normal_cdf(x)),
        }
    }

    fn eval_u(&self, u: f64) -> f64 {
        let raw = match &self.repr {
            QuantileRepr::Step { breaks, values } => {
                // value m on (breaks[m-1], breaks[m]]
                values[breaks.partition_point(|&b| b < u)]
            }
            QuantileRepr::Interpolated { probs, values } => {
                let n = probs.len();
                if n == 1 || u <= probs[0] {
                    values[0]
                } else if u >= probs[n - 1] {
                    values[n - 1]
                } else {
                    let i = probs.partition_point(|&p| p <= u).clamp(1, n - 1);
                    let dp = probs[i] - probs[i - 1];
                    if dp > 0.0 {
                        let t = (u - probs[i - 1]) / dp;
                        values[i - 1] + t * (values[i] - values[i - 1])
                    } else {
                        values[i]
                    }
                }
            }
            QuantileRepr::Normal(_) | QuantileRepr::Pushforward { .. } => {
                return self.eval(u);
            }
        };
        raw + self.shift
    }

    /// `F(x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        let y = x - self.shift;
        match &self.repr {
            QuantileRepr::Normal(law) => law.cdf(y),
            QuantileRepr::Step { breaks, values } => {
                let k = values.partition_point(|&v| v <= y);
                if k == 0 {
                    0.0
                } else if k == values.len() {
                    1.0
                } else {
                    breaks[k - 1]
                }
            }
            QuantileRepr::Interpolated { probs, values } => {
                let n = values.len();
                if y < values[0] {
                    0.0
                } else if y >= values[n - 1] {
                    1.0
                } else {
                    let i = values.partition_point(|&v| v <= y).clamp(1, n - 1);
                    let t = (y - values[i - 1]) / (values[i] - values[i - 1]);
                    probs[i - 1] + t * (probs[i] - probs[i - 1])
                }
            }
            QuantileRepr::Pushforward { base, map } => {
                let (mut lo, mut hi) = (-40.0, 40.0);
                let g = |s: f64| map(base.mean + base.std * s);
                if g(lo) > y {
                    return 0.0;
                }
                if g(hi) <= y {
                    return 1.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if g(mid) <= y {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                normal_cdf(0.5 * (lo + hi))
            }
        }
    }

    /// Points in `(0, 1)` where the quantile jumps or kinks.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.repr {
            QuantileRepr::Step { breaks, .. } => breaks.clone(),
            QuantileRepr::Interpolated { probs, .. } => {
                let mut b: Vec<f64> = probs
                    .iter()
                    .copied()
                    .filter(|&p| p > 0.0 && p < 1.0)
                    .collect();
                b.dedup();
                b
            }
            _ => Vec::new(),
        }
    }

    /// `integral_0^1 F^{-1}(u) du`.
    pub fn mean(&self) -> Result<f64> {
        integrate_u(&[self], |v| v[0])
    }

    /// `integral_0^1 F^{-1}(u)^2 du`.
    pub fn second_moment(&self) -> Result<f64> {
        integrate_u(&[self], |v| v[0] * v[0])
    }

    pub fn variance(&self) -> Result<f64> {
        integrate_u(&[self], |v| v[0]).and_then(|m| Ok(self.second_moment()? - m * m))
    }
}

// ---------------------------------------------------------------------------
// u-quadrature

/// Lower end of the `u` range used for continuous quantiles.
pub const U_MIN: f64 = 1e-300;
/// Upper end of the `u` range used for continuous quantiles.
pub const U_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

const GL_POINTS: usize = 64;
const INTERIOR_PANEL: f64 = 0.02;

fn gauss_legendre_64() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(GL_POINTS))
}

/// A breakpoint on `[0, 1]` carrying `1 - u` exactly where it matters.
#[derive(Debug, Clone, Copy)]
struct Cut {
    u: f64,
    tail: f64,
}

fn base_cuts() -> Vec<Cut> {
    let mut cuts = vec![Cut { u: 0.0, tail: 1.0 }];
    for k in (2..=16).rev() {
        let u = 10f64.powi(-k);
        cuts.push(Cut { u, tail: 1.0 - u });
    }
    let n_interior = ((1.0 - 2.0 * 0.01) / INTERIOR_PANEL).round() as usize;
    for i in 0..=n_interior {
        let u = 0.01 + INTERIOR_PANEL * i as f64;
        cuts.push(Cut { u, tail: 1.0 - u });
    }
    for k in 3..=15 {
        let tail = 10f64.powi(-k);
        cuts.push(Cut { u: 1.0 - tail, tail });
    }
    cuts.push(Cut { u: 1.0, tail: 0.0 });
    cuts
}

/// Quadrature point on `(0, 1)`: `u`, its normal score `Phi^{-1}(u)` and a weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UPoint {
    pub u: f64,
    pub score: f64,
    pub weight: f64,
}

/// Composite Gauss–Legendre points on `(0, 1)`: geometrically graded panels
/// towards both ends, uniform panels inside, and extra cuts at `extra`.
/// Scores near `u = 1` are computed from `1 - u` to keep tail precision.
pub fn u_points(extra: &[f64]) -> Vec<UPoint> {
    let mut cuts = base_cuts();
    for &b in extra {
        if b > 0.0 && b < 1.0 {
            cuts.push(Cut { u: b, tail: 1.0 - b });
        }
    }
    cuts.sort_by(|a, b| a.u.total_cmp(&b.u));
    cuts.dedup_by(|a, b| a.u == b.u);
    let gl = gauss_legendre_64();
    let mut pts = Vec::with_capacity(cuts.len() * GL_POINTS);
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.u >= 0.5 {
            // integrate over the tail variable t = 1 - u
            for (t, wt) in gl.mapped(b.tail, a.tail) {
                let t = t.max(1.0 - U_MAX);
                pts.push(UPoint {
                    u: 1.0 - t,
                    score: -normal_quantile(t).unwrap_or(f64::NAN),
                    weight: wt,
                });
            }
        } else {
            for (u, wt) in gl.mapped(a.u, b.u) {
                let u = u.max(U_MIN);
                pts.push(UPoint {
                    u,
                    score: normal_quantile(u).unwrap_or(f64::NAN),
                    weight: wt,
                });
            }
        }
    }
    pts
}

fn integrate_u(fs: &[&QuantileFn], g: impl Fn(&[f64]) -> f64) -> Result<f64> {
    let mut extra = Vec::new();
    for f in fs {
        extra.extend(f.breakpoints());
    }
    let pts = u_points(&extra);
    let mut vals = vec![0.0; fs.len()];
    let mut acc = 0.0;
    for (index, p) in pts.iter().enumerate() {
        for (slot, f) in vals.iter_mut().zip(fs) {
            *slot = match f.repr {
                QuantileRepr::Normal(_) | QuantileRepr::Pushforward { .. } => {
                    f.at_normal_score(p.score)
                }
                _ => f.eval_u(p.u),
            };
        }
        let y = g(&vals);
        if !y.is_finite() {
            return Err(Error::NonFinite {
                context: "quantile integral",
                index,
            });
        }
        acc += p.weight * y;
    }
    Ok(acc)
}

/// `W_2^2(F, G) = integral_0^1 (F^{-1} - G^{-1})^2 du`.
pub fn w2_squared(f: &QuantileFn, g: &QuantileFn) -> Result<f64> {
    integrate_u(&[f, g], |v| (v[0] - v[1]) * (v[0] - v[1]))
}

/// `integral_0^1 F^{-1}(u) G^{-1}(u) du`.
pub fn cross_profit_integral(f: &QuantileFn, g: &QuantileFn) -> Result<f64> {
    integrate_u(&[f, g], |v| v[0] * v[1])
}

/// Moment lower bound on `W_2^2(F, G)` for normal `G`.
pub fn gelbrich_lower_bound(mean_f: f64, std_f: f64, g: NormalLaw) -> f64 {
    debug_assert!(std_f >= 0.0);
    (g.mean - mean_f).powi(2) + (g.std - std_f).powi(2)
}

/// Both sides of `W_2^2(F, G) = E[F]^2 + W_2^2(F - E[F], G)` for zero-mean `G`.
pub fn mallows_center_check(f: &QuantileFn, mean_f: f64, g: NormalLaw) -> Result<(f64, f64)> {
    if g.mean != 0.0 {
        return domain(format!("Mallows decomposition needs a zero-mean G, got mean {}", g.mean));
    }
    let gq = QuantileFn::normal(g);
    let lhs = w2_squared(f, &gq)?;
    let rhs = mean_f * mean_f + w2_squared(&f.shifted(-mean_f), &gq)?;
    Ok((lhs, rhs))
}

/// Monotone map `y -> F^{-1}(G(y))` pushing `G` forward to `F`.
#[derive(Debug, Clone)]
pub struct PricingMap {
    f: QuantileFn,
    g: NormalLaw,
}

impl PricingMap {
    pub fn apply(&self, y: f64) -> f64 {
        self.f.at_normal_score((y - self.g.mean) / self.g.std)
    }

    pub fn quantile(&self) -> &QuantileFn {
        &self.f
    }

    pub fn noise_law(&self) -> NormalLaw {
        self.g
    }
}

pub fn pricing_map(f: &QuantileFn, g: NormalLaw) -> PricingMap {
    PricingMap { f: f.clone(), g }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::SQRT_2PI;

    fn n01() -> NormalLaw {
        NormalLaw::standard()
    }

    #[test]
    fn identical_normals_have_zero_distance() {
        let g = QuantileFn::normal(n01());
        assert_eq!(w2_squared(&g, &g).unwrap(), 0.0);
    }

    #[test]
    fn normal_pair_matches_closed_form() {
        let f = QuantileFn::normal(NormalLaw::new(0.7, 0.4).unwrap());
        let g = QuantileFn::normal(NormalLaw::new(0.0, 1.3).unwrap());
        let w = w2_squared(&f, &g).unwrap();
        let exact = 0.49 + 0.81;
        assert!((w - exact).abs() < 1e-12, "{w} vs {exact}");
    }

    #[test]
    fn normal_moments_by_u_quadrature() {
        let f = QuantileFn::normal(NormalLaw::new(0.5, 2.0).unwrap());
        assert!((f.mean().unwrap() - 0.5).abs() < 1e-13);
        assert!((f.second_moment().unwrap() - 4.25).abs() < 1e-12);
    }

    #[test]
    fn step_quantile_and_cdf() {
        let d = DiscreteDist::new(vec![-1.0, 0.0, 3.0], vec![0.2, 0.5, 0.3]).unwrap();
        let q = QuantileFn::from_discrete(&d);
        assert_eq!(q.eval(0.1), -1.0);
        assert_eq!(q.eval(0.2), -1.0);
        assert_eq!(q.eval(0.21), 0.0);
        assert_eq!(q.eval(0.9), 3.0);
        assert_eq!(q.cdf(-2.0), 0.0);
        assert!((q.cdf(0.5) - 0.7).abs() < 1e-15);
        assert_eq!(q.cdf(3.0), 1.0);
        assert!((q.mean().unwrap() - 0.7).abs() < 1e-14);
        assert!(QuantileFn::step(&[1.0, 0.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn two_point_against_normal_closed_form() {
        // integral (F^{-1} - G^{-1})^2 = 4 + 1 - 2 * 2 * 2 / sqrt(2 pi)
        let d = DiscreteDist::two_point(-2.0, 2.0, 0.5).unwrap();
        let w = w2_squared(&QuantileFn::from_discrete(&d), &QuantileFn::normal(n01())).unwrap();
        let exact = 5.0 - 8.0 / SQRT_2PI;
        assert!((w - exact).abs() < 1e-12);
    }

    #[test]
    fn grid_quantile_inverts_cdf() {
        let g = GridDist::double_exponential(0.0, 1.0, 2001).unwrap();
        let q = QuantileFn::from_grid(&g);
        for &u in &[0.01, 0.3, 0.5, 0.77, 0.999] {
            assert!((q.cdf(q.eval(u)) - u).abs() < 1e-12);
        }
        assert!(q.eval(0.5).abs() < 1e-12);
        // Laplace quantile at 0.9: ln(5)
        assert!((q.eval(0.9) - 5f64.ln()).abs() < 1e-4);
    }

    #[test]
    fn grid_quantile_merges_flat_segments() {
        let nodes = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let g = GridDist::new(nodes, vec![1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let q = QuantileFn::from_grid(&g);
        match q.repr() {
            QuantileRepr::Interpolated { probs, values } => {
                assert!(probs.windows(2).all(|w| w[0] <= w[1]));
                assert_eq!(values, &vec![0.0, 1.0, 3.0, 4.0]);
                assert!(probs[0] == 0.0 && probs[1] == 0.5 && probs[2] == 0.5);
            }
            _ => unreachable!(),
        }
        assert!((q.eval(0.75) - 3.5).abs() < 1e-12);
        assert_eq!(q.eval(0.25), 0.5);
        assert!((q.cdf(2.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pushforward_cdf_inverts_quantile() {
        let q = QuantileFn::pushforward(n01(), |x| x.tanh());
        for &u in &[0.05, 0.5, 0.8] {
            assert!((q.cdf(q.eval(u)) - u).abs() < 1e-12);
        }
        assert!(q.mean().unwrap().abs() < 1e-14);
    }

    #[test]
    fn mallows_rejects_nonzero_mean() {
        let f = QuantileFn::normal(n01());
        assert!(mallows_center_check(&f, 0.0, NormalLaw::new(1.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn pricing_map_is_affine_for_normals() {
        let g = NormalLaw::new(0.0, 2.0).unwrap();
        let f = QuantileFn::normal(NormalLaw::new(1.0, 0.5).unwrap());
        let h = pricing_map(&f, g);
        for i in -10..=10 {
            let y = 0.9 * i as f64;
            assert!((h.apply(y) - (1.0 + 0.25 * y)).abs() < 1e-12);
        }
    }
}
