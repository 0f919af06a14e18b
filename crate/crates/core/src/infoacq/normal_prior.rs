//! Closed-form problem for a normal prior.

use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPriorSolution {
    /// Fraction of prior variance resolved by the signal.
    pub xi_star: f64,
    /// Conditional precision of the signal, `xi / ((1 - xi) sigma_v^2)`.
    pub precision: f64,
    pub value: f64,
    /// `|xi^{-1/2} (1 - xi) - lambda / (sigma_v sigma_z sqrt(T))|`.
    pub foc_residual: f64,
}

/// Objective `sigma_v sigma_z sqrt(T) sqrt(xi) - (lambda / 2) log(1 / (1 - xi))`.
pub fn normal_prior_objective(xi: f64, sigma_v: f64, params: &ModelParams) -> f64 {
    sigma_v * params.noise_scale() * xi.sqrt() + 0.5 * params.lambda * (-xi).ln_1p()
}

/// Absolute first-order-condition residual at `xi`.
pub fn normal_foc_residual(xi: f64, sigma_v: f64, params: &ModelParams) -> f64 {
    let c = params.lambda / (sigma_v * params.noise_scale());
    ((1.0 - xi) / xi.sqrt() - c).abs()
}

/// Optimal `xi` from the first-order condition, by bisection on `(0, 1)`
/// where `xi^{-1/2} (1 - xi)` decreases from infinity to zero.
pub fn solve_normal_prior(sigma_v: f64, params: &ModelParams) -> Result<NormalPriorSolution> {
    if !(sigma_v > 0.0 && sigma_v.is_finite()) {
        return domain(format!("sigma_v must be positive, got {sigma_v}"));
    }
    let c = params.lambda / (sigma_v * params.noise_scale());
    // bisect on s = sqrt(xi): (1 - s^2) / s = c
    let g = |s: f64| (1.0 - s) * (1.0 + s) / s - c;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = if lo == 0.0 || g(lo).abs() > g(hi).abs() { hi } else { lo };
    let xi = s * s;
    Ok(NormalPriorSolution {
        xi_star: xi,
        precision: xi / ((1.0 - xi) * sigma_v * sigma_v),
        value: normal_prior_objective(xi, sigma_v, params),
        foc_residual: normal_foc_residual(xi, sigma_v, params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::NormalLaw;
    use crate::infoacq::Prior;

    fn params(lambda: f64, sigma_z: f64, sigma_v: f64) -> ModelParams {
        ModelParams::new(lambda, sigma_z, 1.0, Prior::Normal(NormalLaw::new(0.0, sigma_v).unwrap())).unwrap()
    }

    // sqrt(xi) = (-c + sqrt(c^2 + 4)) / 2 solves the quadratic s^2 + c s - 1 = 0
    fn closed_form(c: f64) -> f64 {
        let s = 2.0 / (c + (c * c + 4.0).sqrt());
        s * s
    }

    #[test]
    fn matches_quadratic_root() {
        for &(lam, sz, sv) in &[(1.0, 1.0, 1.0), (0.5, 2.0, 0.3), (8.0, 0.7, 1.9), (1e-8, 1.0, 1.0)] {
            let p = params(lam, sz, sv);
            let sol = solve_normal_prior(sv, &p).unwrap();
            let c = lam / (sv * sz);
            assert!((sol.xi_star - closed_form(c)).abs() < 1e-14, "{lam} {sz} {sv}");
            assert!(sol.foc_residual < 1e-12);
        }
    }

    #[test]
    fn costless_limit_resolves_everything() {
        let sol = solve_normal_prior(1.0, &params(1e-8, 1.0, 1.0)).unwrap();
        assert!(sol.xi_star > 1.0 - 1e-7);
    }

    #[test]
    fn rejects_bad_sigma() {
        assert!(solve_normal_prior(0.0, &params(1.0, 1.0, 1.0)).is_err());
    }
}
