//! The informed trader's information-acquisition problem.

mod discrete_signal;
mod normal_prior;
mod posterior;
mod report;
mod sweep;

use serde::{Deserialize, Serialize};

use crate::dist::{DiscreteDist, GridDist, NormalLaw, QuadratureRule, CROSS_CHECK_POINTS, DEFAULT_GRID_NODES};
use crate::error::{Error, Result};
use crate::sinkhorn::{KernelSpec, Payoff, SignalSpec};

pub use discrete_signal::{
    discrete_convergence, discrete_signal_value, dual_objective, interval_means, optimize_discrete_signal, split_state,
    DiscreteOptimum, DiscreteSignalValue, NelderMeadOptions, DEFAULT_RESTARTS,
};
pub use normal_prior::{normal_foc_residual, normal_prior_objective, solve_normal_prior, NormalPriorSolution};
pub use posterior::{
    build_posterior, density_rule, posterior_mean_law, two_state_density, AffineMean, ConditionalMean,
    PosteriorKernel, PosteriorMeanLaw, DENSITY_HALF_WIDTH, DENSITY_NODES,
};
pub use report::{
    optimal_value, posterior_moments, value_with_signal, EquilibriumReport, Moments, SignalChoice,
};
pub use sweep::{comparative_statics_sweep, solve_equilibrium, Equilibrium, SweepAxis, SweepPoint};

/// Prior law of the payoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Prior {
    Discrete(DiscreteDist),
    Grid(GridDist),
    Normal(NormalLaw),
}

impl Prior {
    /// Payoff representation used by the Sinkhorn solvers; a normal prior is
    /// tabulated on the default grid.
    pub fn payoff(&self) -> Result<Payoff> {
        Ok(match self {
            Prior::Discrete(d) => Payoff::Discrete(d.clone()),
            Prior::Grid(g) => Payoff::Grid(g.clone()),
            Prior::Normal(law) => Payoff::Grid(GridDist::normal(*law, DEFAULT_GRID_NODES)?),
        })
    }

    pub fn mean(&self) -> f64 {
        match self {
            Prior::Discrete(d) => d.mean(),
            Prior::Grid(g) => g.mean(),
            Prior::Normal(law) => law.mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Prior::Discrete(d) => d.variance(),
            Prior::Grid(g) => g.variance(),
            Prior::Normal(law) => law.variance(),
        }
    }
}

/// Economic primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Marginal cost of information.
    pub lambda: f64,
    /// Noise-trade volatility.
    pub sigma_z: f64,
    /// Trading horizon.
    pub horizon: f64,
    pub prior: Prior,
}

const HERMITE_SAFE_WIDTH: f64 = 1.0;
const TRAPEZOID_HALF_WIDTH: f64 = 8.5;
const MAX_TRAPEZOID_NODES: usize = 400_001;

impl ModelParams {
    pub fn new(lambda: f64, sigma_z: f64, horizon: f64, prior: Prior) -> Result<Self> {
        for (name, x) in [("lambda", lambda), ("sigma_z", sigma_z), ("horizon", horizon)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {x}")));
            }
        }
        if !prior.variance().is_finite() {
            return Err(Error::Config("prior must have a finite second moment".into()));
        }
        Ok(Self {
            lambda,
            sigma_z,
            horizon,
            prior,
        })
    }

    /// Symmetric or asymmetric two-state prior on `{lo, hi}`.
    pub fn two_state(lambda: f64, sigma_z: f64, horizon: f64, lo: f64, hi: f64, p_hi: f64) -> Result<Self> {
        Self::new(lambda, sigma_z, horizon, Prior::Discrete(DiscreteDist::two_point(lo, hi, p_hi)?))
    }

    /// `sigma_z * sqrt(horizon)`.
    pub fn noise_scale(&self) -> f64 {
        self.sigma_z * self.horizon.sqrt()
    }

    /// Terminal noise order flow `N(0, sigma_z^2 T)`; also the signal law.
    pub fn noise_law(&self) -> NormalLaw {
        NormalLaw {
            mean: 0.0,
            std: self.noise_scale(),
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(lambda, self.sigma_z, self.horizon, self.prior.clone())
    }

    pub fn with_sigma_z(&self, sigma_z: f64) -> Result<Self> {
        Self::new(self.lambda, sigma_z, self.horizon, self.prior.clone())
    }

    /// Signal quadrature suited to this model. Discrete priors with a small
    /// `lambda` make the posterior switch between adjacent atoms over a
    /// `z`-width of about `lambda / gap`; when that is narrow relative to the
    /// Hermite node spacing a trapezoid rule resolving the switch is used.
    pub fn default_rule(&self) -> QuadratureRule {
        let Prior::Discrete(d) = &self.prior else {
            return QuadratureRule::default();
        };
        let gap = d.atoms().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        if gap <= 0.0 {
            return QuadratureRule::default();
        }
        let width = self.lambda / (gap * self.noise_scale());
        if width >= HERMITE_SAFE_WIDTH {
            return QuadratureRule::default();
        }
        let h = width / 3.0;
        let n = ((2.0 * TRAPEZOID_HALF_WIDTH / h).ceil() as usize + 1).clamp(CROSS_CHECK_POINTS + 2, MAX_TRAPEZOID_NODES);
        QuadratureRule::trapezoid(n | 1, TRAPEZOID_HALF_WIDTH)
    }

    /// Kernel specification with the normal signal.
    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.prior.payoff()?, SignalSpec::Normal(self.noise_law()), self.lambda)
    }
}
