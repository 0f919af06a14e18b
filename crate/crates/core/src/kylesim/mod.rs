//! Monte Carlo check of the Kyle equilibrium: bridge strategy, pricing rule,
//! profit and inconspicuousness of the total order flow.

mod price;

pub use price::{price_function, MeanTable, PriceCache, PriceGrid};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{ks_critical_1pct, ks_statistic, normal_cdf, NormalLaw};
use crate::error::{Error, Result};
use crate::infoacq::{ConditionalMean, ModelParams};

/// Fraction of rejected paths above which a run fails.
pub const MAX_REJECTED_FRACTION: f64 = 1e-3;
/// Number of equal intervals in the price-martingale check.
pub const MARTINGALE_INTERVALS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    /// Paths stop at `T - t_epsilon`.
    pub t_epsilon: f64,
    pub seed: u64,
    pub sigma_z: f64,
    pub horizon: f64,
    #[serde(default)]
    pub price_grid: PriceGrid,
}

impl SimConfig {
    pub fn new(params: &ModelParams, n_paths: usize, n_steps: usize, t_epsilon: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            n_paths,
            n_steps,
            t_epsilon,
            seed,
            sigma_z: params.sigma_z,
            horizon: params.horizon,
            price_grid: PriceGrid::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be positive".into()));
        }
        if self.n_steps < 100 {
            return Err(Error::Config(format!("n_steps must be at least 100, got {}", self.n_steps)));
        }
        if !(self.sigma_z > 0.0 && self.horizon > 0.0 && self.sigma_z.is_finite() && self.horizon.is_finite()) {
            return Err(Error::Config("sigma_z and horizon must be positive".into()));
        }
        if !(self.t_epsilon > 0.0 && self.t_epsilon < self.horizon / 10.0) {
            return Err(Error::Config(format!(
                "t_epsilon must lie in (0, T/10), got {}",
                self.t_epsilon
            )));
        }
        if self.price_grid.n_t < 4 || self.price_grid.n_y < 2 || self.price_grid.y_half_width == 0 {
            return Err(Error::Config("price grid too small".into()));
        }
        Ok(())
    }

    pub fn noise_law(&self) -> NormalLaw {
        NormalLaw {
            mean: 0.0,
            std: self.sigma_z * self.horizon.sqrt(),
        }
    }

    fn dt(&self) -> f64 {
        (self.horizon - self.t_epsilon) / self.n_steps as f64
    }

    fn step_at(&self, t: f64) -> usize {
        ((t / self.dt()).round() as usize).clamp(1, self.n_steps)
    }
}

/// KS statistic of `Y_t / (sigma_z sqrt(t))` against the standard normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsCheck {
    pub t: f64,
    pub statistic: f64,
    pub critical_1pct: f64,
}

impl KsCheck {
    pub fn passes(&self) -> bool {
        self.statistic < self.critical_1pct
    }
}

/// Mean of `|Y_{T - eps} - zeta|` at two stopping distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeCheck {
    pub eps_coarse: f64,
    pub deviation_coarse: f64,
    pub eps_fine: f64,
    pub deviation_fine: f64,
}

impl BridgeCheck {
    /// Observed ratio against `sqrt(eps_coarse / eps_fine)`.
    pub fn rate_ratio(&self) -> f64 {
        (self.deviation_coarse / self.deviation_fine) / (self.eps_coarse / self.eps_fine).sqrt()
    }
}

/// Sample mean and standard error of `P_{t1} - P_{t0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Increment {
    pub t0: f64,
    pub t1: f64,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub n_paths: usize,
    pub rejected: usize,
    pub mean_profit: f64,
    pub profit_std_error: f64,
    /// Sample mean of `m(z)^2`.
    pub mean_signal_value_sq: f64,
    /// KS of `Y_{T - eps}` against `N(0, sigma_z^2 (T - eps))`.
    pub ks_stat_y_t: f64,
    /// Mean `|H(T - eps, Y_{T - eps}) - m(z)|`.
    pub terminal_price_gap: f64,
    /// Mean `(m(z) - P_{T - eps}) (zeta - Y_{T - eps})`, a first-order size of
    /// the profit left after the stop time.
    pub tail_estimate: f64,
    pub inconspicuousness: Vec<KsCheck>,
    pub bridge: BridgeCheck,
    pub price_increments: Vec<Increment>,
}

struct PathOutcome {
    profit: f64,
    m: f64,
    y_ks: [f64; 3],
    y_end: f64,
    gap: f64,
    tail: f64,
    dev_coarse: f64,
    dev_fine: f64,
    prices: [f64; MARTINGALE_INTERVALS + 1],
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Per-path stream: the run seed picks the key, the path index the stream.
fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Simulate the bridge strategy toward `zeta = z` (the signal itself, since
/// `G o F^{-1}(m(z)) = z` for increasing `m`) against the cached pricing rule.
pub fn simulate_equilibrium(cfg: &SimConfig, mean: &dyn ConditionalMean) -> Result<SimResult> {
    cfg.validate()?;
    let g = cfg.noise_law();
    let t_stop = cfg.horizon - cfg.t_epsilon;
    let cache = PriceCache::new(mean, g, cfg.horizon, t_stop, cfg.price_grid);
    let dt = cfg.dt();
    let sd = cfg.sigma_z * dt.sqrt();
    let n = cfg.n_steps;
    let ks_steps = [0.25, 0.5, 0.75].map(|f| cfg.step_at(f * cfg.horizon));
    let eps_coarse = 10.0 * cfg.t_epsilon;
    let coarse_step = cfg.step_at(cfg.horizon - eps_coarse);
    let mart_steps: Vec<usize> = (0..=MARTINGALE_INTERVALS).map(|j| j * n / MARTINGALE_INTERVALS).collect();

    let outcomes: Vec<Option<PathOutcome>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|index| {
            let mut rng = path_rng(cfg.seed, index);
            let z: f64 = g.std * rng.sample::<f64, _>(StandardNormal);
            let m = cache.conditional_mean(z);
            let mut y = 0.0;
            let mut profit = 0.0;
            let mut out = PathOutcome {
                profit: 0.0,
                m,
                y_ks: [0.0; 3],
                y_end: 0.0,
                gap: 0.0,
                tail: 0.0,
                dev_coarse: 0.0,
                dev_fine: 0.0,
                prices: [0.0; MARTINGALE_INTERVALS + 1],
            };
            let mut mart = 0;
            for k in 0..n {
                let t = k as f64 * dt;
                let p = cache.eval(t, y);
                if mart <= MARTINGALE_INTERVALS && mart_steps[mart] == k {
                    out.prices[mart] = p;
                    mart += 1;
                }
                if k == coarse_step {
                    out.dev_coarse = (y - z).abs();
                }
                for (slot, &s) in out.y_ks.iter_mut().zip(&ks_steps) {
                    if k == s {
                        *slot = y;
                    }
                }
                let dx = (z - y) * dt / (cfg.horizon - t);
                profit += (m - p) * dx;
                y += dx + sd * rng.sample::<f64, _>(StandardNormal);
            }
            let p_end = cache.eval(t_stop, y);
            out.prices[MARTINGALE_INTERVALS] = p_end;
            for (slot, &s) in out.y_ks.iter_mut().zip(&ks_steps) {
                if s == n {
                    *slot = y;
                }
            }
            if coarse_step == n {
                out.dev_coarse = (y - z).abs();
            }
            out.profit = profit;
            out.y_end = y;
            out.gap = (p_end - m).abs();
            out.tail = (m - p_end) * (z - y);
            out.dev_fine = (y - z).abs();
            let finite = profit.is_finite() && y.is_finite() && p_end.is_finite();
            finite.then_some(out)
        })
        .collect();

    let rejected = outcomes.iter().filter(|o| o.is_none()).count();
    if rejected as f64 > MAX_REJECTED_FRACTION * cfg.n_paths as f64 {
        return Err(Error::PathsRejected {
            rejected,
            total: cfg.n_paths,
        });
    }
    let ok: Vec<&PathOutcome> = outcomes.iter().flatten().collect();
    if ok.len() < 2 {
        return Err(Error::Domain("need at least two accepted paths".into()));
    }
    let (mean_profit, profit_std_error) = mean_se(ok.iter().map(|o| o.profit));
    let avg = |f: &dyn Fn(&PathOutcome) -> f64| ok.iter().map(|o| f(o)).sum::<f64>() / ok.len() as f64;
    let ks_for = |t: f64, sample: Vec<f64>| {
        let scale = cfg.sigma_z * t.sqrt();
        KsCheck {
            t,
            statistic: ks_statistic(&sample, |x| normal_cdf(x / scale)),
            critical_1pct: ks_critical_1pct(sample.len()),
        }
    };
    let inconspicuousness = (0..3)
        .map(|j| ks_for(ks_steps[j] as f64 * dt, ok.iter().map(|o| o.y_ks[j]).collect()))
        .collect();
    let ks_end = ks_for(t_stop, ok.iter().map(|o| o.y_end).collect());
    let price_increments = (0..MARTINGALE_INTERVALS)
        .map(|j| {
            let (mean, std_error) = mean_se(ok.iter().map(|o| o.prices[j + 1] - o.prices[j]));
            Increment {
                t0: mart_steps[j] as f64 * dt,
                t1: mart_steps[j + 1] as f64 * dt,
                mean,
                std_error,
            }
        })
        .collect();
    Ok(SimResult {
        n_paths: cfg.n_paths,
        rejected,
        mean_profit,
        profit_std_error,
        mean_signal_value_sq: avg(&|o| o.m * o.m),
        ks_stat_y_t: ks_end.statistic,
        terminal_price_gap: avg(&|o| o.gap),
        tail_estimate: avg(&|o| o.tail),
        inconspicuousness,
        bridge: BridgeCheck {
            eps_coarse: cfg.horizon - coarse_step as f64 * dt,
            deviation_coarse: avg(&|o| o.dev_coarse),
            eps_fine: cfg.t_epsilon,
            deviation_fine: avg(&|o| o.dev_fine),
        },
        price_increments,
    })
}

/// KS statistics of the total order flow at `T/4`, `T/2` and `3T/4`.
pub fn inconspicuousness_test(cfg: &SimConfig, mean: &dyn ConditionalMean) -> Result<Vec<KsCheck>> {
    Ok(simulate_equilibrium(cfg, mean)?.inconspicuousness)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infoacq::AffineMean;

    fn cfg(n_paths: usize, seed: u64) -> SimConfig {
        let p = ModelParams::two_state(2.0, 1.0, 1.0, -2.0, 2.0, 0.5).unwrap();
        let mut c = SimConfig::new(&p, n_paths, 200, 1e-3, seed).unwrap();
        c.price_grid = PriceGrid {
            n_t: 41,
            n_y: 201,
            y_half_width: 8,
        };
        c
    }

    #[test]
    fn rejects_bad_config() {
        let p = ModelParams::two_state(2.0, 1.0, 1.0, -2.0, 2.0, 0.5).unwrap();
        assert!(SimConfig::new(&p, 10, 99, 1e-3, 0).is_err());
        assert!(SimConfig::new(&p, 10, 100, 0.2, 0).is_err());
        assert!(SimConfig::new(&p, 10, 100, 0.0, 0).is_err());
    }

    #[test]
    fn constant_mean_earns_nothing() {
        let flat = AffineMean { intercept: 0.3, slope: 0.0 };
        let r = simulate_equilibrium(&cfg(4000, 1), &flat).unwrap();
        assert!(r.mean_profit.abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn same_seed_same_result() {
        let m = AffineMean { intercept: 0.0, slope: 0.8 };
        let a = simulate_equilibrium(&cfg(500, 9), &m).unwrap();
        let b = simulate_equilibrium(&cfg(500, 9), &m).unwrap();
        assert_eq!(a, b);
        let c = simulate_equilibrium(&cfg(500, 10), &m).unwrap();
        assert_ne!(a.mean_profit, c.mean_profit);
    }

    #[test]
    fn linear_mean_profit() {
        // m(z) = b z gives expected profit b sigma^2 T
        let m = AffineMean { intercept: 0.0, slope: 0.5 };
        let r = simulate_equilibrium(&cfg(20_000, 3), &m).unwrap();
        assert!((r.mean_profit - 0.5).abs() < 4.0 * r.profit_std_error + 2e-3, "{r:?}");
        assert!(r.inconspicuousness.iter().all(KsCheck::passes), "{r:?}");
    }
}
