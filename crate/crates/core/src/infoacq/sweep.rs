//! Solve pipeline and comparative statics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::posterior::{build_posterior, PosteriorKernel};
use super::report::{report_for_kernel, EquilibriumReport};
use super::ModelParams;
use crate::dist::QuadratureRule;
use crate::error::{Error, Result};
use crate::sinkhorn::{solve, MultiplierSolution, SinkhornOptions};

/// Multipliers, kernel and report for one parameter point.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub params: ModelParams,
    pub mu: MultiplierSolution,
    pub kernel: PosteriorKernel,
    pub report: EquilibriumReport,
}

/// Sinkhorn, posterior and report in sequence.
pub fn solve_equilibrium(params: &ModelParams, rule: &QuadratureRule, opts: &SinkhornOptions) -> Result<Equilibrium> {
    let spec = params.kernel_spec()?;
    let mu = solve(&spec, rule, opts)?;
    let kernel = build_posterior(params, &mu)?;
    let report = report_for_kernel(params, &kernel, &mu, rule)?;
    Ok(Equilibrium {
        params: params.clone(),
        mu,
        kernel,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Lambda,
    SigmaZ,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::SigmaZ => "sigma_z",
        }
    }
}

/// One grid point of a sweep; failures are kept rather than aborting.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub outcome: std::result::Result<EquilibriumReport, Error>,
}

/// Reports along `grid` for the chosen axis, other parameters from `base`.
/// Points are solved in parallel and returned in grid order. With `rule`
/// unset each point uses [`ModelParams::default_rule`].
pub fn comparative_statics_sweep(
    base: &ModelParams,
    axis: SweepAxis,
    grid: &[f64],
    rule: Option<&QuadratureRule>,
    opts: &SinkhornOptions,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if let Some(x) = grid.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::Config(format!("sweep grid values must be positive, got {x}")));
    }
    Ok(grid
        .par_iter()
        .map(|&x| {
            let outcome = match axis {
                SweepAxis::Lambda => base.with_lambda(x),
                SweepAxis::SigmaZ => base.with_sigma_z(x),
            }
            .and_then(|p| match rule {
                Some(r) => solve_equilibrium(&p, r, opts),
                None => solve_equilibrium(&p, &p.default_rule(), opts),
            })
            .map(|e| e.report);
            SweepPoint { axis_value: x, outcome }
        })
        .collect())
}
