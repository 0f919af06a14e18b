//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use kyle_infoacq::dist::{DiscreteDist, GridDist, NormalLaw, QuadratureRule, DEFAULT_GRID_NODES};
use kyle_infoacq::infoacq::{ModelParams, Prior, SweepAxis};
use kyle_infoacq::sinkhorn::SinkhornOptions;
use kyle_infoacq::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    NormalPrior,
    TwoState,
    ContinuousPayoff,
    #[serde(alias = "discrete-M-sweep")]
    DiscreteMSweep,
    Simulate,
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub lambda: f64,
    pub sigma_z: f64,
    #[serde(default = "one")]
    pub horizon: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorSpec {
    TwoState {
        lo: f64,
        hi: f64,
        p_hi: f64,
    },
    Discrete {
        atoms: Vec<f64>,
        probs: Vec<f64>,
    },
    DoubleExponential {
        #[serde(default)]
        loc: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "default_nodes")]
        nodes: usize,
    },
    Normal {
        #[serde(default)]
        mean: f64,
        std: f64,
    },
}

fn default_nodes() -> usize {
    DEFAULT_GRID_NODES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Signal quadrature size; unset picks a rule per model.
    #[serde(default)]
    pub quad_points: Option<usize>,
}

fn default_tol() -> f64 {
    kyle_infoacq::sinkhorn::DEFAULT_TOL
}

fn default_max_iter() -> usize {
    kyle_infoacq::sinkhorn::DEFAULT_MAX_ITER
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
            quad_points: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteSection {
    pub counts: Vec<usize>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_restarts() -> usize {
    kyle_infoacq::infoacq::DEFAULT_RESTARTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub n_paths: usize,
    pub n_steps: usize,
    #[serde(default = "default_eps")]
    pub t_epsilon: f64,
}

fn default_eps() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub model: ModelSection,
    pub prior: PriorSpec,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub discrete: Option<DiscreteSection>,
    #[serde(default)]
    pub simulation: Option<SimulationSection>,
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

impl ExperimentConfig {
    /// Parse only; call [`Self::validate`] after applying overrides.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    /// Field-level checks beyond what parsing enforces.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.params()?;
        if !(self.solver.tol > 0.0) {
            return Err(config_err(format!("solver.tol must be positive, got {}", self.solver.tol)));
        }
        if self.solver.max_iter == 0 {
            return Err(config_err("solver.max_iter must be positive"));
        }
        if let Some(n) = self.solver.quad_points {
            if n < 2 {
                return Err(config_err("solver.quad_points must be at least 2"));
            }
        }
        match self.experiment {
            ExperimentKind::Sweep => {
                let s = self.sweep.as_ref().ok_or_else(|| config_err("sweep experiment needs a [sweep] table"))?;
                if s.grid.is_empty() {
                    return Err(config_err("sweep.grid must be nonempty"));
                }
                if let Some(x) = s.grid.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
                    return Err(config_err(format!("sweep.grid values must be positive, got {x}")));
                }
            }
            ExperimentKind::DiscreteMSweep => {
                let d = self
                    .discrete
                    .as_ref()
                    .ok_or_else(|| config_err("discrete-M-sweep needs a [discrete] table"))?;
                if d.counts.is_empty() || d.counts.contains(&0) {
                    return Err(config_err("discrete.counts must be nonempty positive integers"));
                }
                if !matches!(self.prior, PriorSpec::TwoState { .. } | PriorSpec::Discrete { .. }) {
                    return Err(config_err("discrete-M-sweep needs a discrete prior"));
                }
            }
            ExperimentKind::Simulate => {
                let s = self
                    .simulation
                    .as_ref()
                    .ok_or_else(|| config_err("simulate needs a [simulation] table"))?;
                kyle_infoacq::kylesim::SimConfig::new(&self.params()?, s.n_paths, s.n_steps, s.t_epsilon, self.seed)?;
            }
            ExperimentKind::NormalPrior => {
                if !matches!(self.prior, PriorSpec::Normal { .. }) {
                    return Err(config_err("normal-prior needs prior.kind = \"normal\""));
                }
            }
            ExperimentKind::TwoState => {
                if !matches!(self.prior, PriorSpec::TwoState { .. }) {
                    return Err(config_err("two-state needs prior.kind = \"two-state\""));
                }
            }
            ExperimentKind::ContinuousPayoff => {
                if !matches!(self.prior, PriorSpec::DoubleExponential { .. } | PriorSpec::Normal { .. }) {
                    return Err(config_err("continuous-payoff needs a double-exponential or normal prior"));
                }
            }
        }
        Ok(())
    }

    pub fn prior(&self) -> kyle_infoacq::Result<Prior> {
        Ok(match &self.prior {
            PriorSpec::TwoState { lo, hi, p_hi } => Prior::Discrete(DiscreteDist::two_point(*lo, *hi, *p_hi)?),
            PriorSpec::Discrete { atoms, probs } => Prior::Discrete(DiscreteDist::new(atoms.clone(), probs.clone())?),
            PriorSpec::DoubleExponential { loc, scale, nodes } => {
                Prior::Grid(GridDist::double_exponential(*loc, *scale, *nodes)?)
            }
            PriorSpec::Normal { mean, std } => Prior::Normal(NormalLaw::new(*mean, *std)?),
        })
    }

    pub fn params(&self) -> kyle_infoacq::Result<ModelParams> {
        let prior = self.prior().map_err(|e| Error::Config(format!("prior: {e}")))?;
        ModelParams::new(self.model.lambda, self.model.sigma_z, self.model.horizon, prior)
    }

    pub fn sinkhorn_options(&self) -> SinkhornOptions {
        SinkhornOptions::default()
            .with_tol(self.solver.tol)
            .with_max_iter(self.solver.max_iter)
    }

    /// Fixed rule when `quad_points` is set, otherwise `None`.
    pub fn fixed_rule(&self) -> Option<QuadratureRule> {
        self.solver.quad_points.map(QuadratureRule::with_points)
    }

    pub fn rule_for(&self, params: &ModelParams) -> QuadratureRule {
        self.fixed_rule().unwrap_or_else(|| params.default_rule())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_two_state() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
experiment = "two-state"
[model]
lambda = 2.0
sigma_z = 1.0
[prior]
kind = "two-state"
lo = -2.0
hi = 2.0
p_hi = 0.5
"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.model.horizon, 1.0);
        assert_eq!(cfg.solver, SolverSection::default());
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        let bad = r#"
experiment = "two-state"
[model]
lambda = -1.0
sigma_z = 1.0
[prior]
kind = "two-state"
lo = -2.0
hi = 2.0
p_hi = 0.5
"#;
        let cfg: ExperimentConfig = toml::from_str(bad).unwrap();
        assert!(cfg.validate().is_err());
        let typo = bad.replace("sigma_z", "sigmaz");
        assert!(toml::from_str::<ExperimentConfig>(&typo).is_err());
    }
}
