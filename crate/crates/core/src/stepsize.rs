//! Step size selection without a line search, plus baseline policies.
//!
//! Each round the server holds a direction `p` with `pᵀ∇H > 0`. The qnd2r
//! policy first evaluates condition A from the previous round's q statistic.
//! If A holds, it takes the short step `η = δ·pᵀ∇H/‖p‖²` without asking the
//! clients anything extra. Otherwise it tries the unit step and keeps it when
//! condition B (sufficient decrease) holds, falling back to the short step.

use std::fmt;
use std::str::FromStr;

use crate::error::{check_dim, Error, Result};
use crate::problem::ProblemSpec;
use crate::{Matrix, Vector};

/// Backtracking gives up after this many reductions.
pub const MAX_BACKTRACKS: usize = 50;

/// `q = ‖s − B⁻¹z‖/‖B⁻¹s‖ + (1/γ)‖ηp‖ + ‖∇H‖`, all from the previous round.
pub fn compute_q(
    s: &Vector,
    z: &Vector,
    inv_hessian: &Matrix,
    eta_p: &Vector,
    gradient: &Vector,
    gamma: f64,
) -> Result<f64> {
    let n = inv_hessian.nrows();
    for v in [s, z, eta_p, gradient] {
        check_dim(n, v.len())?;
    }
    let bs = inv_hessian * s;
    let denom = bs.norm();
    if denom == 0.0 {
        return Err(Error::DegenerateStep);
    }
    let mismatch = (s - inv_hessian * z).norm();
    Ok(mismatch / denom + eta_p.norm() / gamma + gradient.norm())
}

/// `(1 − 2σ)·pᵀg / (4‖p‖²)`.
pub fn condition_a_threshold(p: &Vector, gradient: &Vector, sigma: f64) -> f64 {
    (1.0 - 2.0 * sigma) * p.dot(gradient) / (4.0 * p.norm_squared())
}

/// Condition A: `q_prev ≥ (1 − 2σ)·pᵀg / (4‖p‖²)`. When it holds the unit
/// step is not attempted.
pub fn check_condition_a(q_prev: f64, p: &Vector, gradient: &Vector, sigma: f64) -> bool {
    q_prev >= condition_a_threshold(p, gradient, sigma)
}

/// Condition B: `H(y − p) ≤ H(y) − σ·pᵀg`.
pub fn check_condition_b(h_trial: f64, h_current: f64, p: &Vector, gradient: &Vector, sigma: f64) -> bool {
    h_trial <= h_current - sigma * p.dot(gradient)
}

/// `η = δ·pᵀg/‖p‖²`.
pub fn short_step_size(delta: f64, p: &Vector, gradient: &Vector) -> f64 {
    delta * p.dot(gradient) / p.norm_squared()
}

/// Largest `η ∈ {1, ρ, ρ², …}` with `H(y − ηp) ≤ H(y) − c·η·pᵀg`.
///
/// `h_at(η)` must return `H(y − ηp)`; every call is one envelope
/// evaluation. Returns the accepted `η` and the number of evaluations.
pub fn backtracking_search<F>(
    mut h_at: F,
    h_current: f64,
    gradient: &Vector,
    p: &Vector,
    armijo_c: f64,
    rho: f64,
) -> Result<(f64, usize)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let slope = p.dot(gradient);
    if !(slope > 0.0) {
        return Err(Error::InvalidInput(format!(
            "backtracking needs a descent direction (pᵀg = {slope:e})"
        )));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidInput(format!("shrink factor must lie in (0, 1), got {rho}")));
    }
    let mut eta = 1.0;
    for evaluations in 1..=MAX_BACKTRACKS + 1 {
        if h_at(eta)? <= h_current - armijo_c * eta * slope {
            return Ok((eta, evaluations));
        }
        eta *= rho;
    }
    Err(Error::LineSearchFailed {
        reductions: MAX_BACKTRACKS,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    /// Condition A first, unit trial and condition B only when A fails.
    Qnd2r,
    /// Always try the unit step and test condition B once.
    MbfgsBOnly,
    /// Armijo backtracking from the unit step.
    Backtracking,
    /// Always take the unit step.
    Unit,
    /// Gradient descent on the envelope with step γ (ADMM).
    AdmmGd,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Qnd2r,
        PolicyKind::MbfgsBOnly,
        PolicyKind::Backtracking,
        PolicyKind::Unit,
        PolicyKind::AdmmGd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Qnd2r => "qnd2r",
            PolicyKind::MbfgsBOnly => "mbfgs_b_only",
            PolicyKind::Backtracking => "backtracking",
            PolicyKind::Unit => "unit",
            PolicyKind::AdmmGd => "admm_gd",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = PolicyKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidInput(format!("unknown policy {s:?} (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepsizePolicy {
    pub kind: PolicyKind,
    pub sigma: f64,
    pub delta: f64,
    /// Backtracking shrink factor.
    pub rho: f64,
    /// Backtracking sufficient-decrease constant.
    pub armijo_c: f64,
}

impl StepsizePolicy {
    pub const DEFAULT_RHO: f64 = 0.5;

    /// Takes σ and δ from the problem; backtracking uses `ρ = 1/2` and `c = σ`.
    pub fn new(kind: PolicyKind, spec: &ProblemSpec) -> Self {
        StepsizePolicy {
            kind,
            sigma: spec.sigma,
            delta: spec.delta,
            rho: Self::DEFAULT_RHO,
            armijo_c: spec.sigma,
        }
    }
}

/// What was decided in one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepsizeDecision {
    pub eta: f64,
    pub used_unit: bool,
    /// `None` when the policy never evaluates condition A.
    pub cond_a: Option<bool>,
    /// `None` when condition B was not evaluated this round.
    pub cond_b: Option<bool>,
}

impl StepsizeDecision {
    /// Short step chosen because condition A held.
    pub fn short_after_a(eta: f64) -> Self {
        StepsizeDecision {
            eta,
            used_unit: false,
            cond_a: Some(true),
            cond_b: None,
        }
    }

    /// Outcome of a unit trial; `cond_a` is `Some(false)` under qnd2r and
    /// `None` for policies that skip condition A.
    pub fn after_trial(cond_a: Option<bool>, cond_b: bool, short_eta: f64) -> Self {
        StepsizeDecision {
            eta: if cond_b { 1.0 } else { short_eta },
            used_unit: cond_b,
            cond_a,
            cond_b: Some(cond_b),
        }
    }

    /// A step that involved no condition at all.
    pub fn unconditional(eta: f64) -> Self {
        StepsizeDecision {
            eta,
            used_unit: eta == 1.0,
            cond_a: None,
            cond_b: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn q_hand_value() {
        let q = compute_q(&dvector![2.0], &dvector![4.0], &dmatrix![0.5], &dvector![1.0], &dvector![3.0], 0.5).unwrap();
        assert_relative_eq!(q, 5.0, epsilon = 1e-15);
    }

    #[test]
    fn q_secant_exact_case() {
        // quadratic envelope with Hessian A and B⁻¹ = A⁻¹: z = A s
        let a = dmatrix![2.0, 0.5; 0.5, 1.0];
        let inv = a.clone().try_inverse().unwrap();
        let s = dvector![0.3, -0.7];
        let z = &a * &s;
        let eta_p = dvector![0.1, 0.2];
        let g = dvector![1.0, -1.0];
        let gamma = 0.25;
        let q = compute_q(&s, &z, &inv, &eta_p, &g, gamma).unwrap();
        assert_relative_eq!(q, eta_p.norm() / gamma + g.norm(), epsilon = 1e-14);
    }

    #[test]
    fn q_degenerate_step() {
        let err = compute_q(&dvector![0.0], &dvector![1.0], &dmatrix![1.0], &dvector![0.0], &dvector![1.0], 1.0);
        assert!(matches!(err, Err(Error::DegenerateStep)));
    }

    #[test]
    fn condition_a_cases() {
        let g = dvector![1.0, 2.0];
        // p = g gives threshold (1 − 2σ)/4 = 0.125 at σ = 0.25
        assert!(check_condition_a(0.2, &g, &g, 0.25));
        assert!(!check_condition_a(0.1, &g, &g, 0.25));
        assert!(!check_condition_a(0.0, &g, &g, 0.1));
        let sigma = 0.5 - 1e-12;
        assert!(check_condition_a(1e-9, &g, &g, sigma));
    }

    #[test]
    fn condition_b_cases() {
        let g = dvector![1.0, 0.5];
        let p = dvector![0.5, 0.5];
        assert!(!check_condition_b(3.0, 3.0, &p, &g, 0.1));
        assert!(check_condition_b(2.0, 3.0, &p, &g, 0.0));
        assert!(check_condition_b(3.0, 3.0, &p, &g, 0.0));

        // quadratic H(y) = ½yᵀAy with exact Newton direction: decrease is ½pᵀg
        let a = dmatrix![3.0, 1.0; 1.0, 2.0];
        let y = dvector![1.0, -2.0];
        let h = |v: &Vector| 0.5 * v.dot(&(&a * v));
        let grad = &a * &y;
        let p = a.clone().try_inverse().unwrap() * &grad;
        assert!(check_condition_b(h(&(&y - &p)), h(&y), &p, &grad, 0.49));
    }

    #[test]
    fn short_step_cases() {
        let g = dvector![1.0, -3.0];
        assert_relative_eq!(short_step_size(0.02, &g, &g), 0.02, epsilon = 1e-16);
        assert_relative_eq!(short_step_size(0.01, &dvector![1.0, 1.0], &dvector![2.0, 0.0]), 0.01, epsilon = 1e-16);
    }

    #[test]
    fn backtracking_on_quadratic_newton_takes_unit() {
        let a = dmatrix![3.0, 1.0; 1.0, 2.0];
        let y = dvector![1.0, -2.0];
        let h = |v: &Vector| 0.5 * v.dot(&(&a * v));
        let grad = &a * &y;
        let p = a.clone().try_inverse().unwrap() * &grad;
        let (eta, evals) = backtracking_search(|eta| Ok(h(&(&y - &p * eta))), h(&y), &grad, &p, 0.25, 0.5).unwrap();
        assert_eq!(eta, 1.0);
        assert_eq!(evals, 1);
    }

    #[test]
    fn backtracking_shrinks_long_steps() {
        let y = dvector![1.0];
        let h = |v: &Vector| 0.5 * v.norm_squared();
        let grad = y.clone();
        let p = dvector![8.0];
        let (eta, evals) = backtracking_search(|eta| Ok(h(&(&y - &p * eta))), h(&y), &grad, &p, 0.1, 0.5).unwrap();
        assert!(evals >= 1);
        assert!(eta < 1.0);
        assert!(h(&(&y - &p * eta)) <= h(&y) - 0.1 * eta * p.dot(&grad));
    }

    #[test]
    fn backtracking_rejects_ascent_and_gives_up() {
        let g = dvector![1.0];
        assert!(backtracking_search(|_| Ok(0.0), 0.0, &g, &dvector![-1.0], 0.1, 0.5).is_err());
        let mut calls = 0;
        let err = backtracking_search(
            |_| {
                calls += 1;
                Ok(1.0)
            },
            0.0,
            &g,
            &g,
            0.1,
            0.5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::LineSearchFailed { reductions: MAX_BACKTRACKS }));
        assert_eq!(calls, MAX_BACKTRACKS + 1);
    }

    #[test]
    fn policy_names_roundtrip() {
        for kind in PolicyKind::ALL {
            assert_eq!(kind.name().parse::<PolicyKind>().unwrap(), kind);
        }
        assert!("newton".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn decision_constructors_respect_invariant() {
        let d = StepsizeDecision::after_trial(Some(false), true, 0.01);
        assert!(d.used_unit && d.eta == 1.0);
        let d = StepsizeDecision::after_trial(Some(false), false, 0.01);
        assert!(!d.used_unit && d.eta == 0.01);
        let d = StepsizeDecision::short_after_a(0.02);
        assert_eq!(d.cond_b, None);
        assert!(!d.used_unit);
    }
}
