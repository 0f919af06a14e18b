//! Market-maker pricing rule `H(t, y) = E[m(y + sigma_z sqrt(T - t) X)]`.

use rayon::prelude::*;

use crate::dist::{NormalLaw, QuadratureRule};
use crate::infoacq::ConditionalMean;
use crate::transport::QuantileFn;

/// Standard-normal rule for the smoothing integral.
const PRICE_NODES: usize = 801;
const PRICE_HALF_WIDTH: f64 = 8.5;
/// Conditional-mean table spacing in signal standard deviations.
const TABLE_STEP: f64 = 0.002;

fn price_rule() -> QuadratureRule {
    QuadratureRule::trapezoid(PRICE_NODES, PRICE_HALF_WIDTH)
}

/// `H(t, y)` for the quantile function `f` of the posterior-mean law, with
/// `H(T, .) = F^{-1} o G` and `g = N(0, sigma_z^2 T)`.
pub fn price_function(t: f64, y: f64, f: &QuantileFn, g: NormalLaw, horizon: f64) -> f64 {
    let remaining = (horizon - t).max(0.0);
    if remaining == 0.0 {
        return f.at_normal_score(y / g.std);
    }
    let s = g.std * (remaining / horizon).sqrt();
    price_rule()
        .nodes()
        .iter()
        .zip(price_rule().weights())
        .map(|(x, w)| w * f.at_normal_score((y + s * x) / g.std))
        .sum()
}

/// Cubic Hermite interpolant on `[0, 1]` between `(f0, d0)` and `(f1, d1)`
/// with derivatives already scaled by the cell width.
#[inline]
fn hermite(f0: f64, d0: f64, f1: f64, d1: f64, u: f64) -> f64 {
    let u2 = u * u;
    let u3 = u2 * u;
    (2.0 * u3 - 3.0 * u2 + 1.0) * f0 + (u3 - 2.0 * u2 + u) * d0 + (-2.0 * u3 + 3.0 * u2) * f1 + (u3 - u2) * d1
}

#[inline]
fn hermite_slope(f0: f64, d0: f64, f1: f64, d1: f64, u: f64, h: f64) -> f64 {
    let u2 = u * u;
    ((6.0 * u2 - 6.0 * u) * f0 + (3.0 * u2 - 4.0 * u + 1.0) * d0 + (-6.0 * u2 + 6.0 * u) * f1 + (3.0 * u2 - 2.0 * u) * d1) / h
}

/// `m(z)` and `m'(z)` tabulated on a uniform grid, interpolated by cubic
/// Hermite; direct evaluation off the grid.
pub struct MeanTable<'a> {
    src: &'a dyn ConditionalMean,
    lo: f64,
    h: f64,
    m: Vec<f64>,
    dm: Vec<f64>,
}

impl<'a> MeanTable<'a> {
    /// Table over `signal.mean +- half_width * signal.std`.
    pub fn new(src: &'a dyn ConditionalMean, signal: NormalLaw, half_width: f64) -> Self {
        let nodes = (2.0 * half_width / TABLE_STEP).ceil() as usize + 1;
        let lo = signal.mean - half_width * signal.std;
        let h = 2.0 * half_width * signal.std / (nodes - 1) as f64;
        let (m, dm): (Vec<f64>, Vec<f64>) = (0..nodes)
            .into_par_iter()
            .map(|i| src.conditional_mean_and_slope(lo + h * i as f64))
            .unzip();
        Self { src, lo, h, m, dm }
    }

    #[inline]
    fn cell(&self, z: f64) -> Option<(usize, f64)> {
        let x = (z - self.lo) / self.h;
        if !(x >= 0.0 && x < (self.m.len() - 1) as f64) {
            return None;
        }
        let i = x as usize;
        Some((i, x - i as f64))
    }

    #[inline]
    pub fn value(&self, z: f64) -> f64 {
        match self.cell(z) {
            Some((i, u)) => hermite(self.m[i], self.dm[i] * self.h, self.m[i + 1], self.dm[i + 1] * self.h, u),
            None => self.src.conditional_mean(z),
        }
    }

    #[inline]
    pub fn slope(&self, z: f64) -> f64 {
        match self.cell(z) {
            Some((i, u)) => {
                hermite_slope(self.m[i], self.dm[i] * self.h, self.m[i + 1], self.dm[i + 1] * self.h, u, self.h)
            }
            None => self.src.conditional_mean_and_slope(z).1,
        }
    }
}

/// Grid sizes for [`PriceCache`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PriceGrid {
    pub n_t: usize,
    pub n_y: usize,
    /// Half width of the `y` range in units of `sigma_z sqrt(T)`.
    pub y_half_width: u32,
}

impl Default for PriceGrid {
    fn default() -> Self {
        Self {
            n_t: 201,
            n_y: 801,
            y_half_width: 8,
        }
    }
}

/// `H` and `dH/dy` on a `(t, y)` grid over `[0, t_max]`; cubic Lagrange in
/// `t`, cubic Hermite in `y`, direct quadrature outside the `y` range.
pub struct PriceCache<'a> {
    table: MeanTable<'a>,
    horizon: f64,
    signal_std: f64,
    t_max: f64,
    dt: f64,
    y_lo: f64,
    dy: f64,
    n_y: usize,
    h: Vec<f64>,
    hy: Vec<f64>,
}

impl<'a> PriceCache<'a> {
    pub fn new(src: &'a dyn ConditionalMean, signal: NormalLaw, horizon: f64, t_max: f64, grid: PriceGrid) -> Self {
        assert!(grid.n_t >= 4 && grid.n_y >= 2 && t_max > 0.0 && t_max <= horizon);
        let table = MeanTable::new(src, signal, grid.y_half_width as f64 + PRICE_HALF_WIDTH + 1.0);
        let dt = t_max / (grid.n_t - 1) as f64;
        let half = grid.y_half_width as f64 * signal.std;
        let dy = 2.0 * half / (grid.n_y - 1) as f64;
        let y_lo = signal.mean - half;
        let mut cache = Self {
            table,
            horizon,
            signal_std: signal.std,
            t_max,
            dt,
            y_lo,
            dy,
            n_y: grid.n_y,
            h: Vec::new(),
            hy: Vec::new(),
        };
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..grid.n_t)
            .into_par_iter()
            .map(|i| {
                let t = (i as f64 * dt).min(t_max);
                (0..grid.n_y).map(|k| cache.direct_with_slope(t, y_lo + k as f64 * dy)).unzip()
            })
            .collect();
        for (h, hy) in rows {
            cache.h.extend(h);
            cache.hy.extend(hy);
        }
        cache
    }

    fn spread(&self, t: f64) -> f64 {
        self.signal_std * ((self.horizon - t).max(0.0) / self.horizon).sqrt()
    }

    /// `(H, dH/dy)` by quadrature over the tabulated conditional mean.
    pub fn direct_with_slope(&self, t: f64, y: f64) -> (f64, f64) {
        let s = self.spread(t);
        if s == 0.0 {
            return (self.table.value(y), self.table.slope(y));
        }
        let rule = price_rule();
        let mut acc = (0.0, 0.0);
        for (x, w) in rule.nodes().iter().zip(rule.weights()) {
            let z = y + s * x;
            acc.0 += w * self.table.value(z);
            acc.1 += w * self.table.slope(z);
        }
        acc
    }

    pub fn direct(&self, t: f64, y: f64) -> f64 {
        self.direct_with_slope(t, y).0
    }

    /// Interpolated `H(t, y)` for `t` in `[0, t_max]`.
    #[inline]
    pub fn eval(&self, t: f64, y: f64) -> f64 {
        let yx = (y - self.y_lo) / self.dy;
        if !(yx >= 0.0 && yx < (self.n_y - 1) as f64) || !(0.0..=self.t_max).contains(&t) {
            return self.direct(t, y);
        }
        let k = yx as usize;
        let u = yx - k as f64;
        let n_t = self.h.len() / self.n_y;
        let tx = t / self.dt;
        let i0 = (tx.floor() as isize - 1).clamp(0, n_t as isize - 4) as usize;
        let mut out = 0.0;
        for j in 0..4 {
            let node = i0 + j;
            let mut l = 1.0;
            for r in 0..4 {
                if r != j {
                    l *= (tx - (i0 + r) as f64) / (j as f64 - r as f64);
                }
            }
            let base = node * self.n_y + k;
            out += l
                * hermite(
                    self.h[base],
                    self.hy[base] * self.dy,
                    self.h[base + 1],
                    self.hy[base + 1] * self.dy,
                    u,
                );
        }
        out
    }

    pub fn conditional_mean(&self, z: f64) -> f64 {
        self.table.value(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infoacq::AffineMean;

    struct Tanh;
    impl ConditionalMean for Tanh {
        fn conditional_mean(&self, z: f64) -> f64 {
            2.0 * z.tanh()
        }
    }

    #[test]
    fn identity_law_gives_identity_price() {
        let g = NormalLaw::standard();
        let f = QuantileFn::normal(g);
        for &t in &[0.0, 0.3, 0.9, 1.0] {
            for &y in &[-2.0, 0.0, 0.7] {
                assert!((price_function(t, y, &f, g, 1.0) - y).abs() < 1e-10);
            }
        }
        let a = AffineMean { intercept: 0.0, slope: 1.0 };
        let c = PriceCache::new(&a, g, 1.0, 0.999, PriceGrid::default());
        assert!((c.eval(0.37, 1.234) - 1.234).abs() < 1e-10);
    }

    #[test]
    fn odd_mean_prices_zero_at_origin() {
        let g = NormalLaw::standard();
        let c = PriceCache::new(&Tanh, g, 1.0, 0.999, PriceGrid::default());
        for &t in &[0.0, 0.25, 0.5, 0.99] {
            assert!(c.eval(t, 0.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cache_matches_direct_quadrature() {
        let g = NormalLaw::standard();
        let c = PriceCache::new(&Tanh, g, 1.0, 0.999, PriceGrid::default());
        let f = QuantileFn::pushforward(g, |z| 2.0 * z.tanh());
        let mut worst: f64 = 0.0;
        for i in 0..37 {
            let t = 0.999 * i as f64 / 36.5;
            for j in 0..41 {
                let y = -4.0 + 0.19 * j as f64;
                worst = worst.max((c.eval(t, y) - price_function(t, y, &f, g, 1.0)).abs());
            }
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn terminal_price_is_pricing_map() {
        let g = NormalLaw { mean: 0.0, std: 1.5 };
        let f = QuantileFn::pushforward(g, |z| 2.0 * (z / 1.5).tanh());
        let pm = crate::transport::pricing_map(&f, g);
        for &y in &[-1.0, 0.2, 2.5] {
            assert!((price_function(2.0, y, &f, g, 2.0) - pm.apply(y)).abs() < 1e-12);
        }
    }
}
