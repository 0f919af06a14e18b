//! Figure data with the caption parameter sets hard-coded.

use std::path::{Path, PathBuf};

use kyle_infoacq::dist::{GridDist, QuadratureRule, DEFAULT_GRID_NODES};
use kyle_infoacq::infoacq::{
    density_rule, discrete_convergence, posterior_mean_law, solve_equilibrium, Equilibrium, ModelParams,
    NelderMeadOptions, Prior, DEFAULT_RESTARTS,
};
use kyle_infoacq::sinkhorn::SinkhornOptions;
use serde::Serialize;

use crate::output::{write_csv, write_json, write_svg, Series, Table};

pub const FIGURES: [&str; 8] = ["fig1", "fig2", "fig3", "fig4", "fig5", "figB1", "figB2", "figB3"];

/// Grids for the two-state figures: density panels, then curve panels.
pub const LAMBDA_DENSITY: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
pub const SIGMA_DENSITY: [f64; 4] = [0.25, 0.5, 1.0, 2.0];
pub const DISCRETE_COUNTS: [usize; 9] = [1, 2, 3, 4, 6, 8, 16, 32, 64];
pub const DEXP_LAMBDA_DENSITY: [f64; 4] = [0.05, 0.5, 2.0, 20.0];
pub const DEXP_SIGMA_DENSITY: [f64; 4] = [0.25, 0.5, 1.0, 2.0];
pub const DEXP_CURVE: [f64; 9] = [0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0];

/// `0.25 * 2^(k/4)` up to 16, then 20.
pub fn lambda_curve() -> Vec<f64> {
    let mut g: Vec<f64> = (0..=24).map(|k| 0.25 * 2f64.powf(k as f64 / 4.0)).collect();
    g.push(20.0);
    g
}

/// `0.1 * 2^(k/4)` up to 6.4.
pub fn sigma_curve() -> Vec<f64> {
    (0..=24).map(|k| 0.1 * 2f64.powf(k as f64 / 4.0)).collect()
}

#[derive(Debug, Clone, Default)]
pub struct FigureSettings {
    pub tol: Option<f64>,
    pub quad: Option<usize>,
    pub seed: Option<u64>,
}

impl FigureSettings {
    fn opts(&self) -> SinkhornOptions {
        let o = SinkhornOptions::default();
        match self.tol {
            Some(t) => o.with_tol(t),
            None => o,
        }
    }

    fn rule(&self, p: &ModelParams) -> QuadratureRule {
        self.quad.map(QuadratureRule::with_points).unwrap_or_else(|| p.default_rule())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveDiagnostic {
    pub label: String,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FigureOutput {
    pub name: String,
    pub dir: PathBuf,
    pub files: Vec<String>,
    pub parameters: String,
    pub grids: serde_json::Value,
    pub diagnostics: Vec<SolveDiagnostic>,
    /// Figure-specific checks recorded alongside the data.
    pub checks: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    Lambda,
    Sigma,
}

impl Axis {
    fn column(self) -> &'static str {
        match self {
            Axis::Lambda => "lambda",
            Axis::Sigma => "sigma_z",
        }
    }

    fn apply(self, base: &ModelParams, x: f64) -> kyle_infoacq::Result<ModelParams> {
        match self {
            Axis::Lambda => base.with_lambda(x),
            Axis::Sigma => base.with_sigma_z(x),
        }
    }
}

struct Writer<'a> {
    dir: PathBuf,
    comment: String,
    files: Vec<String>,
    diagnostics: Vec<SolveDiagnostic>,
    settings: &'a FigureSettings,
}

impl Writer<'_> {
    fn table(&mut self, stem: &str, table: &Table) -> anyhow::Result<()> {
        let name = format!("{stem}.csv");
        write_csv(&self.dir.join(&name), &self.comment, table)?;
        self.files.push(name);
        Ok(())
    }

    fn plot(&mut self, stem: &str, title: &str, x: &str, y: &str, series: &[Series]) -> anyhow::Result<()> {
        let name = format!("{stem}.svg");
        write_svg(&self.dir.join(&name), title, x, y, series)?;
        self.files.push(name);
        Ok(())
    }

    fn solve(&mut self, label: String, p: &ModelParams) -> anyhow::Result<Equilibrium> {
        let eq = solve_equilibrium(p, &self.settings.rule(p), &self.settings.opts())?;
        self.diagnostics.push(SolveDiagnostic {
            label,
            residual: eq.mu.residual,
            iterations: eq.mu.iterations,
        });
        Ok(eq)
    }

    fn solve_all(&mut self, axis: Axis, base: &ModelParams, grid: &[f64]) -> anyhow::Result<Vec<Equilibrium>> {
        use rayon::prelude::*;
        let opts = self.settings.opts();
        let settings = self.settings;
        let solved: Vec<kyle_infoacq::Result<Equilibrium>> = grid
            .par_iter()
            .map(|&x| {
                let p = axis.apply(base, x)?;
                solve_equilibrium(&p, &settings.rule(&p), &opts)
            })
            .collect();
        let mut out = Vec::with_capacity(grid.len());
        for (x, eq) in grid.iter().zip(solved) {
            let eq = eq?;
            self.diagnostics.push(SolveDiagnostic {
                label: format!("{}={x}", axis.column()),
                residual: eq.mu.residual,
                iterations: eq.mu.iterations,
            });
            out.push(eq);
        }
        Ok(out)
    }
}

fn nan_or(x: Option<f64>) -> f64 {
    x.unwrap_or(f64::NAN)
}

fn grouped(table: &Table, key: usize, x: usize, y: usize, label: &str) -> Vec<Series> {
    let mut out: Vec<Series> = Vec::new();
    for row in &table.rows {
        let name = format!("{label}={}", row[key]);
        match out.last_mut() {
            Some(s) if s.label == name => s.points.push((row[x], row[y])),
            _ => out.push(Series::new(name, vec![(row[x], row[y])])),
        }
    }
    out
}

fn column_series(table: &Table, x: usize, ys: &[usize]) -> Vec<Series> {
    ys.iter()
        .map(|&j| {
            Series::new(
                table.columns[j].clone(),
                table.rows.iter().map(|r| (r[x], r[j])).collect(),
            )
        })
        .collect()
}

/// Two-state comparative statics: densities, posterior, W2, moments.
fn two_state_statics(w: &mut Writer, p_hi: f64, axis: Axis) -> anyhow::Result<serde_json::Value> {
    let (v1, v2) = (-2.0, 2.0);
    let base = ModelParams::two_state(2.0, 1.0, 1.0, v1, v2, p_hi)?;
    let (density_grid, curve_grid) = match axis {
        Axis::Lambda => (LAMBDA_DENSITY.to_vec(), lambda_curve()),
        Axis::Sigma => (SIGMA_DENSITY.to_vec(), sigma_curve()),
    };
    let col = axis.column();

    let eqs = w.solve_all(axis, &base, &density_grid)?;
    let mut a = Table::new(&[col, "v", "density"]);
    let mut b = Table::new(&[col, "z", "p_v2"]);
    for (x, eq) in density_grid.iter().zip(&eqs) {
        let law = posterior_mean_law(&eq.kernel, &density_rule())?;
        for i in 1..400 {
            let v = v1 + (v2 - v1) * i as f64 / 400.0;
            a.push(vec![*x, v, law.density_at(v)]);
        }
        for i in 0..=400 {
            let z = -4.0 + 8.0 * i as f64 / 400.0;
            b.push(vec![*x, z, eq.kernel.posterior(z)[1]]);
        }
    }
    w.table("panelA", &a)?;
    w.plot("panelA", "Density of E[v|s]", "v", "density", &grouped(&a, 0, 1, 2, col))?;
    w.table("panelB", &b)?;
    w.plot("panelB", "Posterior p(v2|z)", "z", "p(v2|z)", &grouped(&b, 0, 1, 2, col))?;

    let curve = w.solve_all(axis, &base, &curve_grid)?;
    let mut c = Table::new(&[col, "leakage_w2", "leakage_w2sq", "gelbrich_residual"]);
    let mut d = Table::new(&[col, "skewness", "kurtosis", "variance"]);
    for (x, eq) in curve_grid.iter().zip(&curve) {
        let r = &eq.report;
        c.push(vec![*x, r.leakage_w2sq.max(0.0).sqrt(), r.leakage_w2sq, r.gelbrich_residual]);
        d.push(vec![*x, nan_or(r.moments.skewness), nan_or(r.moments.kurtosis), r.moments.variance]);
    }
    w.table("panelC", &c)?;
    w.plot("panelC", "W2 between centred law and noise", col, "W2", &column_series(&c, 0, &[1, 3]))?;
    w.table("panelD", &d)?;
    w.plot("panelD", "Skewness and kurtosis", col, "moment", &column_series(&d, 0, &[1, 2]))?;
    Ok(serde_json::json!({ "density": density_grid, "curve": curve_grid }))
}

/// Values and components against the number of signal states.
fn convergence(w: &mut Writer, p_hi: f64) -> anyhow::Result<(serde_json::Value, serde_json::Value)> {
    let params = ModelParams::two_state(2.0, 1.0, 1.0, -2.0, 2.0, p_hi)?;
    let Prior::Discrete(payoff) = &params.prior else {
        unreachable!("two-state prior is discrete")
    };
    let cont = w.solve("continuous".into(), &params)?.report;
    let nm = NelderMeadOptions {
        seed: w.settings.seed.unwrap_or(NelderMeadOptions::default().seed),
        ..NelderMeadOptions::default()
    };
    let optima = discrete_convergence(payoff, &params, &DISCRETE_COUNTS, DEFAULT_RESTARTS, &nm)?;
    let mut a = Table::new(&["m", "value", "continuous_value", "restart_dispersion"]);
    let mut b = Table::new(&["m", "profit_potential", "continuous_profit_potential"]);
    let mut c = Table::new(&["m", "leakage_w2sq", "continuous_leakage_w2sq"]);
    let mut d = Table::new(&["m", "info_cost", "continuous_info_cost"]);
    for o in &optima {
        let m = o.m as f64;
        let s = &o.detail;
        a.push(vec![m, o.value, cont.value, o.dispersion]);
        b.push(vec![m, s.profit_potential, cont.profit_potential]);
        c.push(vec![m, s.leakage_w2sq, cont.leakage_w2sq]);
        d.push(vec![m, s.info_cost, cont.info_cost]);
        w.diagnostics.push(SolveDiagnostic {
            label: format!("M={}", o.m),
            residual: s.mu.residual,
            iterations: s.mu.iterations,
        });
    }
    for (stem, t, title) in [
        ("panelA", &a, "Optimal value"),
        ("panelB", &b, "Var(E[v|s])"),
        ("panelC", &c, "W2^2 between centred law and noise"),
        ("panelD", &d, "Information cost"),
    ] {
        w.table(stem, t)?;
        w.plot(stem, title, "M", &t.columns[1].clone(), &column_series(t, 0, &[1, 2]))?;
    }
    let monotone = optima.windows(2).all(|p| p[1].value >= p[0].value);
    let gap = cont.value - optima.last().map_or(f64::NAN, |o| o.value);
    let q: Vec<_> = optima
        .iter()
        .map(|o| serde_json::json!({ "m": o.m, "q_star": o.q_star, "restart_values": o.restart_values }))
        .collect();
    write_json(&w.dir.join("optima.json"), &q)?;
    w.files.push("optima.json".into());
    Ok((
        serde_json::json!({ "m": DISCRETE_COUNTS }),
        serde_json::json!({ "value_nondecreasing_in_m": monotone, "continuous_minus_largest_m": gap }),
    ))
}

/// Double-exponential payoff: densities and kurtosis.
fn double_exponential(w: &mut Writer, axis: Axis) -> anyhow::Result<serde_json::Value> {
    let prior = Prior::Grid(GridDist::double_exponential(0.0, 1.0, DEFAULT_GRID_NODES)?);
    let base = ModelParams::new(1.0, 1.0, 1.0, prior)?;
    let density_grid = match axis {
        Axis::Lambda => DEXP_LAMBDA_DENSITY,
        Axis::Sigma => DEXP_SIGMA_DENSITY,
    };
    let col = axis.column();
    let eqs = w.solve_all(axis, &base, &density_grid)?;
    let mut a = Table::new(&[col, "v", "density"]);
    for (x, eq) in density_grid.iter().zip(&eqs) {
        let law = posterior_mean_law(&eq.kernel, &density_rule())?;
        for i in 0..=600 {
            let v = -6.0 + 12.0 * i as f64 / 600.0;
            a.push(vec![*x, v, law.density_at(v)]);
        }
    }
    w.table("panelA", &a)?;
    w.plot("panelA", "Density of E[v|s]", "v", "density", &grouped(&a, 0, 1, 2, col))?;
    let curve = w.solve_all(axis, &base, &DEXP_CURVE)?;
    let mut b = Table::new(&[col, "kurtosis", "skewness", "variance"]);
    for (x, eq) in DEXP_CURVE.iter().zip(&curve) {
        let m = &eq.report.moments;
        b.push(vec![*x, nan_or(m.kurtosis), nan_or(m.skewness), m.variance]);
    }
    w.table("panelB", &b)?;
    w.plot("panelB", "Kurtosis of E[v|s]", col, "kurtosis", &column_series(&b, 0, &[1]))?;
    Ok(serde_json::json!({ "density": density_grid, "curve": DEXP_CURVE }))
}

pub fn dir_name(name: &str) -> Option<&'static str> {
    Some(match name {
        "fig1" => "sym_pri_lam",
        "fig2" => "sym_pri_sig",
        "fig3" => "sym_conv",
        "fig4" => "cont_payoff_lam",
        "fig5" => "cont_payoff_sig",
        "figB1" => "asy_pri_lam",
        "figB2" => "asy_pri_sig",
        "figB3" => "asy_conv",
        _ => return None,
    })
}

fn parameters(name: &str) -> &'static str {
    match name {
        "fig1" => "N=2 v1=-2 v2=2 p_v1=0.5 p_v2=0.5 sigma_z=1 T=1 axis=lambda",
        "fig2" => "N=2 v1=-2 v2=2 p_v1=0.5 p_v2=0.5 lambda=2 T=1 axis=sigma_z",
        "fig3" => "N=2 v1=-2 v2=2 p_v1=0.5 p_v2=0.5 lambda=2 sigma_z=1 T=1 axis=M",
        "fig4" => "prior=double-exponential rho(v)=0.5exp(-|v|) sigma_z=1 T=1 axis=lambda",
        "fig5" => "prior=double-exponential rho(v)=0.5exp(-|v|) lambda=1 T=1 axis=sigma_z",
        "figB1" => "N=2 v1=-2 v2=2 p_v1=0.3 p_v2=0.7 sigma_z=1 T=1 axis=lambda",
        "figB2" => "N=2 v1=-2 v2=2 p_v1=0.3 p_v2=0.7 lambda=2 T=1 axis=sigma_z",
        "figB3" => "N=2 v1=-2 v2=2 p_v1=0.3 p_v2=0.7 lambda=2 sigma_z=1 T=1 axis=M",
        _ => "",
    }
}

/// Write every panel of figure `name` under `out/<figure directory>`.
pub fn run_figure(name: &str, out: &Path, settings: &FigureSettings) -> anyhow::Result<FigureOutput> {
    let dir_leaf = dir_name(name).ok_or_else(|| {
        kyle_infoacq::Error::Config(format!("unknown figure {name:?}; expected one of {}", FIGURES.join(", ")))
    })?;
    let dir = out.join(dir_leaf);
    std::fs::create_dir_all(&dir).map_err(|e| {
        kyle_infoacq::Error::Config(format!("cannot create output directory {}: {e}", dir.display()))
    })?;
    let params = parameters(name);
    let solver = format!(
        "tol={:?} quad={}",
        settings.tol.unwrap_or(kyle_infoacq::sinkhorn::DEFAULT_TOL),
        settings.quad.map_or("auto".to_string(), |q| q.to_string())
    );
    let mut w = Writer {
        dir: dir.clone(),
        comment: format!("figure={name} {params} {solver}"),
        files: Vec::new(),
        diagnostics: Vec::new(),
        settings,
    };
    let (grids, checks) = match name {
        "fig1" => (two_state_statics(&mut w, 0.5, Axis::Lambda)?, serde_json::Value::Null),
        "fig2" => (two_state_statics(&mut w, 0.5, Axis::Sigma)?, serde_json::Value::Null),
        "figB1" => (two_state_statics(&mut w, 0.7, Axis::Lambda)?, serde_json::Value::Null),
        "figB2" => (two_state_statics(&mut w, 0.7, Axis::Sigma)?, serde_json::Value::Null),
        "fig3" => convergence(&mut w, 0.5)?,
        "figB3" => convergence(&mut w, 0.7)?,
        "fig4" => (double_exponential(&mut w, Axis::Lambda)?, serde_json::Value::Null),
        "fig5" => (double_exponential(&mut w, Axis::Sigma)?, serde_json::Value::Null),
        _ => unreachable!("checked by dir_name"),
    };
    Ok(FigureOutput {
        name: name.to_string(),
        dir,
        files: w.files,
        parameters: params.to_string(),
        grids,
        diagnostics: w.diagnostics,
        checks,
    })
}
