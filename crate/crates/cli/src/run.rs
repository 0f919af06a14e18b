//! Config-driven experiments.

use std::path::Path;

use kyle_infoacq::infoacq::{
    comparative_statics_sweep, density_rule, discrete_convergence, posterior_mean_law, solve_equilibrium,
    solve_normal_prior, Equilibrium, NelderMeadOptions, Prior,
};
use kyle_infoacq::kylesim::{simulate_equilibrium, SimConfig, SimResult};
use kyle_infoacq::sinkhorn::solve;
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::figures::SolveDiagnostic;
use crate::output::{write_csv, write_json, Table};

/// How a run ended when it produced output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    Partial { failed: usize, total: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutput {
    pub status: Status,
    pub files: Vec<String>,
    pub diagnostics: Vec<SolveDiagnostic>,
}

struct Sink<'a> {
    out: &'a Path,
    comment: String,
    files: Vec<String>,
    diagnostics: Vec<SolveDiagnostic>,
}

impl Sink<'_> {
    fn csv(&mut self, name: &str, t: &Table) -> anyhow::Result<()> {
        write_csv(&self.out.join(name), &self.comment, t)?;
        self.files.push(name.into());
        Ok(())
    }

    fn json(&mut self, name: &str, v: &impl Serialize) -> anyhow::Result<()> {
        write_json(&self.out.join(name), v)?;
        self.files.push(name.into());
        Ok(())
    }

    fn note(&mut self, label: impl Into<String>, residual: f64, iterations: usize) {
        self.diagnostics.push(SolveDiagnostic {
            label: label.into(),
            residual,
            iterations,
        });
    }

    fn finish(self, status: Status) -> RunOutput {
        RunOutput {
            status,
            files: self.files,
            diagnostics: self.diagnostics,
        }
    }
}

fn comment(cfg: &ExperimentConfig) -> String {
    let m = &cfg.model;
    let prior = serde_json::to_string(&cfg.prior).unwrap_or_default();
    format!(
        "experiment={} lambda={} sigma_z={} T={} prior={} tol={:?} max_iter={} quad={} seed={}",
        serde_json::to_value(cfg.experiment)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        m.lambda,
        m.sigma_z,
        m.horizon,
        prior,
        cfg.solver.tol,
        cfg.solver.max_iter,
        cfg.solver.quad_points.map_or("auto".to_string(), |q| q.to_string()),
        cfg.seed
    )
}

fn sink<'a>(cfg: &ExperimentConfig, out: &'a Path) -> Sink<'a> {
    Sink {
        out,
        comment: comment(cfg),
        files: Vec::new(),
        diagnostics: Vec::new(),
    }
}

fn equilibrium(cfg: &ExperimentConfig, s: &mut Sink) -> anyhow::Result<Equilibrium> {
    let p = cfg.params()?;
    let eq = solve_equilibrium(&p, &cfg.rule_for(&p), &cfg.sinkhorn_options())?;
    s.note("equilibrium", eq.mu.residual, eq.mu.iterations);
    Ok(eq)
}

fn equilibrium_files(eq: &Equilibrium, s: &mut Sink) -> anyhow::Result<()> {
    s.json("report.json", &eq.report)?;
    let law = posterior_mean_law(&eq.kernel, &density_rule())?;
    let mut d = Table::new(&["v", "density"]);
    for v in law.grid.nodes().iter().step_by(10) {
        d.push(vec![*v, law.density_at(*v)]);
    }
    s.csv("density.csv", &d)?;
    let atoms = eq.kernel.atoms().to_vec();
    let sig = eq.kernel.signal();
    let mut cols: Vec<String> = vec!["z".into(), "mean".into()];
    let discrete = !eq.kernel.is_grid() && atoms.len() <= 16;
    if discrete {
        cols.extend(atoms.iter().map(|v| format!("p_{v}")));
    }
    let mut t = Table {
        columns: cols,
        rows: Vec::new(),
    };
    for i in 0..=400 {
        let z = sig.mean + sig.std * (-4.0 + 8.0 * i as f64 / 400.0);
        let mut row = vec![z, eq.kernel.mean(z)];
        if discrete {
            row.extend(eq.kernel.posterior(z));
        }
        t.push(row);
    }
    s.csv("posterior.csv", &t)?;
    Ok(())
}

#[derive(Serialize)]
struct NormalPriorOutput {
    sigma_v: f64,
    xi_star: f64,
    precision: f64,
    value: f64,
    foc_residual: f64,
    continuous_variance: f64,
    closed_form_variance: f64,
    relative_error: f64,
}

#[derive(Serialize)]
struct SimulationOutput<'a> {
    result: &'a SimResult,
    /// `(E[m^2] + sigma_z^2 T - W2^2(F, G)) / 2` from the transport module.
    analytic_profit: f64,
    z_score: f64,
    config: &'a SimConfig,
}

/// Solve, simulate and write `simulation.json`.
pub fn run_simulation(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<RunOutput> {
    let sim = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| kyle_infoacq::Error::Config("simulate needs a [simulation] table".into()))?;
    let mut s = sink(cfg, out);
    let eq = equilibrium(cfg, &mut s)?;
    let sc = SimConfig::new(&eq.params, sim.n_paths, sim.n_steps, sim.t_epsilon, cfg.seed)?;
    let result = simulate_equilibrium(&sc, &eq.kernel)?;
    let r = &eq.report;
    let second = r.moments.variance + r.moments.mean * r.moments.mean;
    let analytic = 0.5 * (second + eq.params.noise_law().variance() - r.w2sq);
    let z = (result.mean_profit - analytic) / result.profit_std_error;
    s.json(
        "simulation.json",
        &SimulationOutput {
            result: &result,
            analytic_profit: analytic,
            z_score: z,
            config: &sc,
        },
    )?;
    Ok(s.finish(Status::Success))
}

/// Multipliers only, with the residual trace.
pub fn run_sinkhorn(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<RunOutput> {
    let mut s = sink(cfg, out);
    let p = cfg.params()?;
    let mu = solve(&p.kernel_spec()?, &cfg.rule_for(&p), &cfg.sinkhorn_options().with_trace())?;
    s.note("sinkhorn", mu.residual, mu.iterations);
    let mut t = Table::new(&["iteration", "residual"]);
    for (i, r) in mu.trace.iter().enumerate() {
        t.push(vec![(i + 1) as f64, *r]);
    }
    s.csv("trace.csv", &t)?;
    let mut m = Table::new(&["atom", "mu"]);
    for (v, x) in p.prior.payoff()?.atoms().iter().zip(&mu.mu) {
        m.push(vec![*v, *x]);
    }
    s.csv("multipliers.csv", &m)?;
    Ok(s.finish(Status::Success))
}

pub fn run_config(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<RunOutput> {
    let mut s = sink(cfg, out);
    match cfg.experiment {
        ExperimentKind::TwoState | ExperimentKind::ContinuousPayoff => {
            let eq = equilibrium(cfg, &mut s)?;
            equilibrium_files(&eq, &mut s)?;
        }
        ExperimentKind::NormalPrior => {
            let p = cfg.params()?;
            let Prior::Normal(law) = &p.prior else {
                unreachable!("validated")
            };
            let closed = solve_normal_prior(law.std, &p)?;
            let eq = equilibrium(cfg, &mut s)?;
            let target = closed.xi_star * law.std * law.std;
            let var = eq.report.moments.variance;
            s.json(
                "normal_prior.json",
                &NormalPriorOutput {
                    sigma_v: law.std,
                    xi_star: closed.xi_star,
                    precision: closed.precision,
                    value: closed.value,
                    foc_residual: closed.foc_residual,
                    continuous_variance: var,
                    closed_form_variance: target,
                    relative_error: (var - target).abs() / target,
                },
            )?;
            equilibrium_files(&eq, &mut s)?;
        }
        ExperimentKind::DiscreteMSweep => {
            let p = cfg.params()?;
            let Prior::Discrete(payoff) = &p.prior else {
                unreachable!("validated")
            };
            let d = cfg.discrete.as_ref().expect("validated");
            let eq = equilibrium(cfg, &mut s)?;
            let mut counts = d.counts.clone();
            counts.sort_unstable();
            counts.dedup();
            let nm = NelderMeadOptions {
                seed: cfg.seed,
                inner_tol: cfg.solver.tol.min(1e-12),
                ..NelderMeadOptions::default()
            };
            let optima = discrete_convergence(payoff, &p, &counts, d.restarts, &nm)?;
            let mut t = Table::new(&[
                "m",
                "value",
                "expected_profit",
                "info_cost",
                "profit_potential",
                "leakage_w2sq",
                "restart_dispersion",
                "continuous_value",
            ]);
            for o in &optima {
                let x = &o.detail;
                s.note(format!("M={}", o.m), x.mu.residual, x.mu.iterations);
                t.push(vec![
                    o.m as f64,
                    o.value,
                    x.expected_profit,
                    x.info_cost,
                    x.profit_potential,
                    x.leakage_w2sq,
                    o.dispersion,
                    eq.report.value,
                ]);
            }
            s.csv("discrete.csv", &t)?;
            s.json("optima.json", &optima)?;
        }
        ExperimentKind::Simulate => return run_simulation(cfg, out),
        ExperimentKind::Sweep => {
            let sw = cfg.sweep.as_ref().expect("validated");
            let p = cfg.params()?;
            let fixed = cfg.fixed_rule();
            let points = comparative_statics_sweep(&p, sw.axis, &sw.grid, fixed.as_ref(), &cfg.sinkhorn_options())?;
            let mut t = Table::new(&[
                sw.axis.name(),
                "ok",
                "value",
                "expected_profit",
                "info_cost",
                "mutual_information",
                "profit_potential",
                "leakage_w2sq",
                "w2sq",
                "gelbrich_residual",
                "mean",
                "skewness",
                "kurtosis",
                "sinkhorn_residual",
                "sinkhorn_iterations",
            ]);
            let mut failures = Vec::new();
            for pt in &points {
                match &pt.outcome {
                    Ok(r) => {
                        s.note(format!("{}={}", sw.axis.name(), pt.axis_value), r.sinkhorn_residual, r.sinkhorn_iterations);
                        t.push(vec![
                            pt.axis_value,
                            1.0,
                            r.value,
                            r.expected_profit,
                            r.info_cost,
                            r.mutual_information,
                            r.profit_potential,
                            r.leakage_w2sq,
                            r.w2sq,
                            r.gelbrich_residual,
                            r.moments.mean,
                            r.moments.skewness.unwrap_or(f64::NAN),
                            r.moments.kurtosis.unwrap_or(f64::NAN),
                            r.sinkhorn_residual,
                            r.sinkhorn_iterations as f64,
                        ]);
                    }
                    Err(e) => {
                        let mut row = vec![f64::NAN; t.columns.len()];
                        row[0] = pt.axis_value;
                        row[1] = 0.0;
                        t.push(row);
                        failures.push(serde_json::json!({ "axis_value": pt.axis_value, "error": e.to_string() }));
                    }
                }
            }
            s.csv("sweep.csv", &t)?;
            if !failures.is_empty() {
                s.json("failures.json", &failures)?;
                if failures.len() == points.len() {
                    anyhow::bail!(kyle_infoacq::Error::Domain(format!(
                        "every sweep point failed; first: {}",
                        failures[0]["error"]
                    )));
                }
                return Ok(s.finish(Status::Partial {
                    failed: failures.len(),
                    total: points.len(),
                }));
            }
        }
    }
    Ok(s.finish(Status::Success))
}
