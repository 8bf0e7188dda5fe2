//! Client side: the proximal subproblem solver and the per-round state machine.

use std::sync::Arc;

use nalgebra::linalg::Cholesky;

use crate::error::{check_dim, Error, Result};
use crate::problem::LocalLoss;
use crate::protocol::{ClientReply, Downlink};
use crate::Vector;

pub const MAX_PROX_ITERATIONS: usize = 100;
const MAX_STEP_HALVINGS: usize = 60;
const ARMIJO_INNER: f64 = 1e-4;
const ROUNDING_SLACK: f64 = 64.0 * f64::EPSILON;

#[derive(Debug, Clone, PartialEq)]
pub struct ProxSolution {
    pub x: Vector,
    /// Newton iterations taken.
    pub iterations: usize,
}

/// Minimizes `f(x) + cᵀx + (γ/2)‖x‖²` from `x = 0`.
pub fn prox_solve(loss: &dyn LocalLoss, c: &Vector, gamma: f64, tol: f64) -> Result<ProxSolution> {
    prox_solve_from(loss, c, gamma, tol, &Vector::zeros(loss.dim()))
}

/// Damped Newton on `f(x) + cᵀx + (γ/2)‖x‖²` starting at `start`, until the
/// gradient norm is at most `tol`.
///
/// A step is accepted on sufficient decrease of the objective or, when the
/// objective changes only at rounding level, on a decrease of the gradient
/// norm.
pub fn prox_solve_from(
    loss: &dyn LocalLoss,
    c: &Vector,
    gamma: f64,
    tol: f64,
    start: &Vector,
) -> Result<ProxSolution> {
    let d = loss.dim();
    check_dim(d, c.len())?;
    check_dim(d, start.len())?;
    if !(gamma > 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "prox solve needs gamma > 0 and tol > 0 (gamma={gamma}, tol={tol})"
        )));
    }
    let objective = |x: &Vector| loss.value_at(x) + c.dot(x) + 0.5 * gamma * x.norm_squared();
    let gradient = |x: &Vector| loss.gradient_at(x) + c + x * gamma;

    let mut x = start.clone();
    let mut grad = gradient(&x);
    let mut grad_norm = grad.norm();
    for iteration in 0..MAX_PROX_ITERATIONS {
        if !grad_norm.is_finite() {
            return Err(Error::Numerical("non-finite gradient in prox solve".into()));
        }
        if grad_norm <= tol {
            return Ok(ProxSolution { x, iterations: iteration });
        }
        let mut hess = loss.hessian_at(&x);
        for k in 0..d {
            hess[(k, k)] += gamma;
        }
        let chol = Cholesky::new(hess)
            .ok_or_else(|| Error::Numerical("prox Hessian is not positive definite".into()))?;
        let step = -chol.solve(&grad);
        let slope = grad.dot(&step);
        let phi0 = objective(&x);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_STEP_HALVINGS {
            let trial = &x + &step * t;
            let trial_grad = gradient(&trial);
            let trial_norm = trial_grad.norm();
            let phi = objective(&trial);
            let flat = phi <= phi0 + ROUNDING_SLACK * phi0.abs().max(1.0);
            if phi <= phi0 + ARMIJO_INNER * t * slope || (flat && trial_norm < grad_norm) {
                accepted = Some((trial, trial_grad, trial_norm));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((nx, ng, nn)) => {
                x = nx;
                grad = ng;
                grad_norm = nn;
            }
            None => {
                return Err(Error::ProxNotConverged {
                    iterations: iteration + 1,
                    residual: grad_norm,
                })
            }
        }
    }
    if grad_norm <= tol {
        Ok(ProxSolution { x, iterations: MAX_PROX_ITERATIONS })
    } else {
        Err(Error::ProxNotConverged {
            iterations: MAX_PROX_ITERATIONS,
            residual: grad_norm,
        })
    }
}

/// `v = −(γ/2)‖x‖² − f(x) − xᵀc`: this client's share of the envelope value.
pub fn compute_v(loss: &dyn LocalLoss, x: &Vector, c: &Vector, gamma: f64) -> Result<f64> {
    check_dim(loss.dim(), x.len())?;
    check_dim(loss.dim(), c.len())?;
    Ok(-0.5 * gamma * x.norm_squared() - loss.value_at(x) - x.dot(c))
}

/// A unit-step trial awaiting the server's verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub x: Vector,
    pub v: f64,
    pub delta: Vector,
}

/// One client: its loss, the running coefficient `u = yᵢ − 2τŷ` of the
/// committed server iterate, and the latest committed primal.
#[derive(Clone)]
pub struct ClientState {
    id: usize,
    loss: Arc<dyn LocalLoss>,
    gamma: f64,
    inner_tol: f64,
    initialized: bool,
    u: Vector,
    x_current: Vector,
    trial: Option<Trial>,
    prox_solves: usize,
    newton_iters: usize,
}

impl std::fmt::Debug for ClientState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClientState")
            .field("id", &self.id)
            .field("u", &self.u)
            .field("x_current", &self.x_current)
            .field("trial", &self.trial)
            .field("prox_solves", &self.prox_solves)
            .finish_non_exhaustive()
    }
}

impl ClientState {
    pub fn new(id: usize, loss: Arc<dyn LocalLoss>, gamma: f64, inner_tol: f64) -> Self {
        let d = loss.dim();
        ClientState {
            id,
            loss,
            gamma,
            inner_tol,
            initialized: false,
            u: Vector::zeros(d),
            x_current: Vector::zeros(d),
            trial: None,
            prox_solves: 0,
            newton_iters: 0,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn loss(&self) -> &dyn LocalLoss {
        self.loss.as_ref()
    }

    pub fn u(&self) -> &Vector {
        &self.u
    }

    pub fn x_current(&self) -> &Vector {
        &self.x_current
    }

    pub fn trial(&self) -> Option<&Trial> {
        self.trial.as_ref()
    }

    /// Proximal solves performed so far.
    pub fn prox_solves(&self) -> usize {
        self.prox_solves
    }

    /// Newton iterations over all proximal solves so far.
    pub fn newton_iters(&self) -> usize {
        self.newton_iters
    }

    fn solve(&mut self, coefficient: &Vector) -> Result<(Vector, f64)> {
        let sol = prox_solve_from(
            self.loss.as_ref(),
            coefficient,
            self.gamma,
            self.inner_tol,
            &self.x_current,
        )?;
        self.prox_solves += 1;
        self.newton_iters += sol.iterations;
        let v = compute_v(self.loss.as_ref(), &sol.x, coefficient, self.gamma)?;
        Ok((sol.x, v))
    }

    fn ensure_initialized(&self) -> Result<()> {
        if self.initialized {
            Ok(())
        } else {
            Err(Error::Protocol(format!("client {} used before initialization", self.id)))
        }
    }

    /// Solves for `coefficient`, adopts it as `u` and reports `(x, v)`.
    pub fn initialize(&mut self, coefficient: &Vector) -> Result<ClientReply> {
        check_dim(self.loss.dim(), coefficient.len())?;
        let (x, v) = self.solve(coefficient)?;
        self.u = coefficient.clone();
        self.x_current = x.clone();
        self.trial = None;
        self.initialized = true;
        Ok(ClientReply::PrimalAndValue { x, v })
    }

    /// Opens a round. With `flag_a` the step is final and `u` advances at
    /// once; otherwise the result is held as a trial and only `v` is sent.
    pub fn handle_direction(&mut self, flag_a: bool, delta: &Vector) -> Result<ClientReply> {
        self.ensure_initialized()?;
        check_dim(self.loss.dim(), delta.len())?;
        let coefficient = &self.u - delta;
        let (x, v) = self.solve(&coefficient)?;
        if flag_a {
            self.u = coefficient;
            self.x_current = x.clone();
            self.trial = None;
            Ok(ClientReply::PrimalAndValue { x, v })
        } else {
            self.trial = Some(Trial {
                x,
                v,
                delta: delta.clone(),
            });
            Ok(ClientReply::ValueOnly { v })
        }
    }

    /// Closes a round that went through a trial. Acceptance commits the trial
    /// without further work; rejection re-solves with the scaled delta.
    pub fn handle_verdict(&mut self, flag_b: bool, eta: Option<f64>) -> Result<ClientReply> {
        self.ensure_initialized()?;
        let trial = self
            .trial
            .take()
            .ok_or_else(|| Error::Protocol(format!("client {}: verdict without a pending trial", self.id)))?;
        match (flag_b, eta) {
            (true, None) => {
                self.u -= &trial.delta;
                self.x_current = trial.x.clone();
                Ok(ClientReply::PrimalOnly { x: trial.x })
            }
            (false, Some(eta)) => {
                let coefficient = &self.u - &trial.delta * eta;
                let (x, v) = self.solve(&coefficient)?;
                self.u = coefficient;
                self.x_current = x.clone();
                Ok(ClientReply::PrimalAndValue { x, v })
            }
            (true, Some(_)) => Err(Error::Protocol("accepting verdict must not carry a stepsize".into())),
            (false, None) => Err(Error::Protocol("rejecting verdict must carry a stepsize".into())),
        }
    }

    /// Gradient step on the envelope: apply `delta`, return the primal only.
    pub fn handle_step(&mut self, delta: &Vector) -> Result<ClientReply> {
        self.ensure_initialized()?;
        check_dim(self.loss.dim(), delta.len())?;
        let coefficient = &self.u - delta;
        let (x, _) = self.solve(&coefficient)?;
        self.u = coefficient;
        self.x_current = x.clone();
        self.trial = None;
        Ok(ClientReply::PrimalOnly { x })
    }

    pub fn handle(&mut self, message: &Downlink) -> Result<ClientReply> {
        match message {
            Downlink::Init { coefficient } => self.initialize(coefficient),
            Downlink::Direction { flag_a, delta } => self.handle_direction(*flag_a, delta),
            Downlink::Verdict { flag_b, eta } => self.handle_verdict(*flag_b, *eta),
            Downlink::Step { delta } => self.handle_step(delta),
        }
    }

    /// `v` at the committed state. Harness-side; not protocol traffic.
    pub fn local_value(&self) -> f64 {
        -0.5 * self.gamma * self.x_current.norm_squared()
            - self.loss.value_at(&self.x_current)
            - self.x_current.dot(&self.u)
    }

    /// `∇fᵢ(x_current)`. Harness-side; not protocol traffic.
    pub fn local_gradient(&self) -> Vector {
        self.loss.gradient_at(&self.x_current)
    }
}
