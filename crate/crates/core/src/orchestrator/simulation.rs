use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::bfgs::{BfgsState, CurvaturePair, UpdateOutcome};
use crate::client::{prox_solve, ClientState};
use crate::envelope::{
    assemble_gradient, assemble_value, dual_shift, optimality_residual, EnvelopeCoefficients, StackedVector,
};
use crate::error::{check_dim, Error, Result};
use crate::problem::{LocalLoss, ProblemSpec};
use crate::protocol::{Downlink, Message, Uplink};
use crate::stepsize::{
    backtracking_search, check_condition_a, check_condition_b, compute_q, short_step_size, PolicyKind,
    StepsizeDecision, StepsizePolicy,
};
use crate::Vector;

use super::ledger::{CostLedger, Costs};
use super::log::MessageLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Run client work on the rayon pool. Results do not depend on this.
    pub parallel: bool,
    /// Keep every message in a [`MessageLog`].
    pub record_messages: bool,
    /// Cholesky-test `B⁻¹` after every round.
    pub check_definiteness: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            parallel: true,
            record_messages: true,
            check_definiteness: false,
        }
    }
}

/// Data kept from round `k−1` for the curvature pair and `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreviousStep {
    /// `y^k − y^{k−1}`.
    pub s: Vector,
    /// `∇H(y^k) − ∇H(y^{k−1})`.
    pub z: Vector,
    /// The step actually taken, `y^{k−1} − y^k`.
    pub eta_p: Vector,
    /// `∇H(y^{k−1})`.
    pub gradient: Vector,
}

impl PreviousStep {
    pub fn pair(&self) -> CurvaturePair {
        CurvaturePair {
            s: self.s.clone(),
            z: self.z.clone(),
        }
    }
}

/// Everything the server holds between rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub round: usize,
    pub y: StackedVector,
    pub x: StackedVector,
    pub v: Vec<f64>,
    pub gradient: StackedVector,
    pub h_value: f64,
    pub bfgs: BfgsState,
    pub prev: Option<PreviousStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub residual: f64,
    pub h_value: f64,
    pub grad_norm: f64,
    /// `None` for the bootstrap row.
    pub decision: Option<StepsizeDecision>,
    pub q: Option<f64>,
    /// `pᵀ∇H` at the start of the round.
    pub descent: Option<f64>,
    pub bfgs_update: Option<UpdateOutcome>,
    /// `‖B⁻¹z − s‖/‖s‖` after an accepted update.
    pub secant_residual: Option<f64>,
    pub inv_hessian_pd: Option<bool>,
    pub costs: Costs,
    pub cumulative: Costs,
    pub wall_ms: f64,
}

impl RoundMetrics {
    pub fn eta(&self) -> Option<f64> {
        self.decision.map(|d| d.eta)
    }
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub policy: PolicyKind,
    pub rounds: Vec<RoundMetrics>,
    pub converged: bool,
    /// Mean of the final client primals.
    pub central_model: Vector,
    pub final_y: StackedVector,
    pub log: Option<MessageLog>,
}

impl RunTrace {
    pub fn last(&self) -> &RoundMetrics {
        self.rounds.last().expect("a trace always holds the bootstrap row")
    }

    pub fn final_residual(&self) -> f64 {
        self.last().residual
    }

    /// First row whose residual is at or below `target`.
    pub fn first_reaching(&self, target: f64) -> Option<&RoundMetrics> {
        self.rounds.iter().find(|r| r.residual <= target)
    }
}

struct RoundOutcome {
    decision: StepsizeDecision,
    q: Option<f64>,
    descent: Option<f64>,
    bfgs_update: Option<UpdateOutcome>,
    secant_residual: Option<f64>,
}

/// Server plus simulated clients, advanced one round at a time.
pub struct Simulation {
    spec: ProblemSpec,
    coeffs: EnvelopeCoefficients,
    policy: StepsizePolicy,
    options: RunOptions,
    server: ServerState,
    clients: Vec<ClientState>,
    ledger: CostLedger,
    log: MessageLog,
    metrics: Vec<RoundMetrics>,
    converged: bool,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("policy", &self.policy)
            .field("round", &self.server.round)
            .field("converged", &self.converged)
            .finish_non_exhaustive()
    }
}

impl Simulation {
    /// Round 0: clients solve at `y0` and, for quasi-Newton policies, at
    /// `y1` (default `y0 − γ∇H(y0)`) so that a first curvature pair exists.
    pub fn bootstrap(
        spec: ProblemSpec,
        losses: Vec<Arc<dyn LocalLoss>>,
        policy: StepsizePolicy,
        y0: StackedVector,
        y1: Option<StackedVector>,
        options: RunOptions,
    ) -> Result<Self> {
        spec.validate()?;
        check_dim(spec.m, losses.len())?;
        for loss in &losses {
            check_dim(spec.d, loss.dim())?;
        }
        let layout = StackedVector::zeros(spec.m, spec.d);
        layout.same_layout(&y0)?;
        if let Some(y1) = &y1 {
            layout.same_layout(y1)?;
        }
        let coeffs = EnvelopeCoefficients::new(spec.lambda, spec.m, spec.gamma)?;
        let clients = losses
            .into_iter()
            .enumerate()
            .map(|(i, loss)| ClientState::new(i, loss, spec.gamma, spec.inner_tol))
            .collect();
        let n = spec.m * spec.d;
        let mut sim = Simulation {
            spec,
            coeffs,
            policy,
            options,
            server: ServerState {
                round: 0,
                y: y0.clone(),
                x: StackedVector::zeros(spec.m, spec.d),
                v: vec![0.0; spec.m],
                gradient: StackedVector::zeros(spec.m, spec.d),
                h_value: 0.0,
                bfgs: BfgsState::new(n),
                prev: None,
            },
            clients,
            ledger: CostLedger::new(),
            log: MessageLog::new(),
            metrics: Vec::new(),
            converged: false,
        };
        let started = Instant::now();
        sim.init_round(y0, y1).map_err(|e| e.in_round(0))?;
        sim.close_round(started, None)?;
        Ok(sim)
    }

    fn init_round(&mut self, y0: StackedVector, y1: Option<StackedVector>) -> Result<()> {
        let (x0, v0) = self.initialize_at(&y0)?;
        let g0 = assemble_gradient(&self.coeffs, &y0, &x0)?;
        let h0 = assemble_value(&self.coeffs, &y0, v0.iter().sum());
        self.commit(y0.clone(), x0, v0, g0.clone(), h0, None);

        if self.policy.kind == PolicyKind::AdmmGd {
            return Ok(());
        }
        let y1 = match y1 {
            Some(y1) if y1 == y0 => {
                return Err(Error::InvalidInput("bootstrap points must differ".into()));
            }
            Some(y1) => y1,
            None if g0.norm() == 0.0 => {
                // already stationary; nothing to pair with
                self.converged = true;
                return Ok(());
            }
            None => y0.add_scaled(-self.coeffs.gamma, &g0),
        };
        let (x1, v1) = self.initialize_at(&y1)?;
        let g1 = assemble_gradient(&self.coeffs, &y1, &x1)?;
        let h1 = assemble_value(&self.coeffs, &y1, v1.iter().sum());
        let prev = PreviousStep {
            s: y1.as_vector() - y0.as_vector(),
            z: g1.as_vector() - g0.as_vector(),
            eta_p: y0.as_vector() - y1.as_vector(),
            gradient: g0.into_vector(),
        };
        self.commit(y1, x1, v1, g1, h1, Some(prev));
        Ok(())
    }

    fn initialize_at(&mut self, y: &StackedVector) -> Result<(StackedVector, Vec<f64>)> {
        let shifted = dual_shift(self.coeffs.tau, y);
        let messages = (0..self.spec.m)
            .map(|i| Downlink::Init {
                coefficient: shifted.block_owned(i),
            })
            .collect();
        let replies = self.exchange(messages)?;
        primal_and_values(&replies)
    }

    fn commit(
        &mut self,
        y: StackedVector,
        x: StackedVector,
        v: Vec<f64>,
        gradient: StackedVector,
        h_value: f64,
        prev: Option<PreviousStep>,
    ) {
        let server = &mut self.server;
        server.y = y;
        server.x = x;
        server.v = v;
        server.gradient = gradient;
        server.h_value = h_value;
        server.prev = prev;
    }

    /// Sends one message to every client and collects the replies in client
    /// order, charging the ledger for traffic and client work.
    fn exchange(&mut self, messages: Vec<Downlink>) -> Result<Vec<Uplink>> {
        check_dim(self.clients.len(), messages.len())?;
        let round = self.server.round_in_progress(self.metrics.len());
        let before: (usize, usize) = self.client_work();
        for (i, msg) in messages.iter().enumerate() {
            self.ledger.charge_down(msg.cost());
            if self.options.record_messages {
                self.log.record(round, i, Message::Down(msg.clone()));
            }
        }
        let replies: Vec<(usize, Result<Uplink>)> = if self.options.parallel {
            self.clients
                .par_iter_mut()
                .zip(messages.par_iter())
                .map(|(client, msg)| (client.id(), client.handle(msg)))
                .collect()
        } else {
            self.clients
                .iter_mut()
                .zip(messages.iter())
                .map(|(client, msg)| (client.id(), client.handle(msg)))
                .collect()
        };
        let replies = collect_in_client_order(replies, self.clients.len())?;
        let after = self.client_work();
        self.ledger.charge_compute(after.0 - before.0, after.1 - before.1);
        for (i, reply) in replies.iter().enumerate() {
            self.ledger.charge_up(reply.cost());
            if self.options.record_messages {
                self.log.record(round, i, Message::Up(reply.clone()));
            }
        }
        Ok(replies)
    }

    fn client_work(&self) -> (usize, usize) {
        self.clients
            .iter()
            .fold((0, 0), |(p, n), c| (p + c.prox_solves(), n + c.newton_iters()))
    }

    /// Runs one round. Returns `None` once the run has stopped.
    pub fn step(&mut self) -> Result<Option<&RoundMetrics>> {
        if self.converged || self.server.round >= self.spec.max_rounds {
            return Ok(None);
        }
        let round = self.server.round + 1;
        let started = Instant::now();
        let outcome = match self.policy.kind {
            PolicyKind::AdmmGd => self.gradient_round(),
            _ => self.quasi_newton_round(),
        }
        .map_err(|e| e.in_round(round))?;
        let Some(outcome) = outcome else {
            // stationary or degenerate: stop without traffic
            self.converged = true;
            return Ok(None);
        };
        self.server.round = round;
        self.close_round(started, Some(outcome))?;
        Ok(self.metrics.last())
    }

    fn close_round(&mut self, started: Instant, outcome: Option<RoundOutcome>) -> Result<()> {
        let costs = self.ledger.close_round();
        let residual = self.residual()?;
        let inv_hessian_pd = self
            .options
            .check_definiteness
            .then(|| self.server.bfgs.is_positive_definite());
        let row = RoundMetrics {
            round: self.server.round,
            residual,
            h_value: self.server.h_value,
            grad_norm: self.server.gradient.norm(),
            decision: outcome.as_ref().map(|o| o.decision),
            q: outcome.as_ref().and_then(|o| o.q),
            descent: outcome.as_ref().and_then(|o| o.descent),
            bfgs_update: outcome.as_ref().and_then(|o| o.bfgs_update),
            secant_residual: outcome.as_ref().and_then(|o| o.secant_residual),
            inv_hessian_pd,
            costs,
            cumulative: self.ledger.cumulative(),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        if residual <= self.spec.stop_tol {
            self.converged = true;
        }
        self.metrics.push(row);
        Ok(())
    }

    fn quasi_newton_round(&mut self) -> Result<Option<RoundOutcome>> {
        let g = self.server.gradient.as_vector().clone();
        if g.norm() == 0.0 {
            return Ok(None);
        }
        let prev = self
            .server
            .prev
            .clone()
            .ok_or_else(|| Error::Protocol("no previous step to build a curvature pair".into()))?;
        let q = match compute_q(
            &prev.s,
            &prev.z,
            self.server.bfgs.inv_hessian(),
            &prev.eta_p,
            &prev.gradient,
            self.coeffs.gamma,
        ) {
            Ok(q) => q,
            Err(Error::DegenerateStep) => return Ok(None),
            Err(e) => return Err(e),
        };
        let pair = prev.pair();
        let update = self.server.bfgs.update(&pair)?;
        let secant_residual = (update == UpdateOutcome::Accepted).then(|| self.server.bfgs.secant_residual(&pair));
        let p = self.server.bfgs.direction(&g)?;
        let descent = p.dot(&g);
        if !(descent > 0.0) {
            return Err(Error::Numerical(format!("not a descent direction (pᵀg = {descent:e})")));
        }
        let p_stacked = StackedVector::from_vector(p.clone(), self.spec.m, self.spec.d)?;
        let shifted = dual_shift(self.coeffs.tau, &p_stacked);
        let short = short_step_size(self.policy.delta, &p, &g);
        let sigma = self.policy.sigma;

        let (decision, x, v) = match self.policy.kind {
            PolicyKind::Qnd2r if check_condition_a(q, &p, &g, sigma) => {
                let (x, v) = self.direct_step(&shifted, short)?;
                (StepsizeDecision::short_after_a(short), x, v)
            }
            PolicyKind::Qnd2r => self.unit_trial(Some(false), &p_stacked, &shifted, short)?,
            PolicyKind::MbfgsBOnly => self.unit_trial(None, &p_stacked, &shifted, short)?,
            PolicyKind::Unit => {
                let (x, v) = self.direct_step(&shifted, 1.0)?;
                (StepsizeDecision::unconditional(1.0), x, v)
            }
            PolicyKind::Backtracking => self.backtrack(&p_stacked, &shifted)?,
            PolicyKind::AdmmGd => unreachable!("handled by gradient_round"),
        };
        self.advance(&p_stacked, decision.eta, x, v)?;
        Ok(Some(RoundOutcome {
            decision,
            q: Some(q),
            descent: Some(descent),
            bfgs_update: Some(update),
            secant_residual,
        }))
    }

    /// `Direction(A)` with `η·shifted`; clients commit at once.
    fn direct_step(&mut self, shifted: &StackedVector, eta: f64) -> Result<(StackedVector, Vec<f64>)> {
        let messages = (0..self.spec.m)
            .map(|i| Downlink::Direction {
                flag_a: true,
                delta: shifted.block_owned(i) * eta,
            })
            .collect();
        let replies = self.exchange(messages)?;
        primal_and_values(&replies)
    }

    /// Unit trial, condition B on the reported values, then the verdict.
    fn unit_trial(
        &mut self,
        cond_a: Option<bool>,
        p: &StackedVector,
        shifted: &StackedVector,
        short: f64,
    ) -> Result<(StepsizeDecision, StackedVector, Vec<f64>)> {
        let v_trial = self.send_trial(shifted, 1.0)?;
        let y_trial = self.server.y.add_scaled(-1.0, p);
        let h_trial = self.trial_value(&y_trial, &v_trial);
        let cond_b = check_condition_b(
            h_trial,
            self.server.h_value,
            p.as_vector(),
            self.server.gradient.as_vector(),
            self.policy.sigma,
        );
        let decision = StepsizeDecision::after_trial(cond_a, cond_b, short);
        if cond_b {
            let x = self.accept_trial()?;
            Ok((decision, x, v_trial))
        } else {
            let messages = vec![
                Downlink::Verdict {
                    flag_b: false,
                    eta: Some(short),
                };
                self.spec.m
            ];
            let replies = self.exchange(messages)?;
            let (x, v) = primal_and_values(&replies)?;
            Ok((decision, x, v))
        }
    }

    fn backtrack(
        &mut self,
        p: &StackedVector,
        shifted: &StackedVector,
    ) -> Result<(StepsizeDecision, StackedVector, Vec<f64>)> {
        let y = self.server.y.clone();
        let g = self.server.gradient.as_vector().clone();
        let h = self.server.h_value;
        let (armijo_c, rho) = (self.policy.armijo_c, self.policy.rho);
        let mut last_values = Vec::new();
        let (eta, _) = backtracking_search(
            |eta| {
                let values = self.send_trial(shifted, eta)?;
                let h_trial = self.trial_value(&y.add_scaled(-eta, p), &values);
                last_values = values;
                Ok(h_trial)
            },
            h,
            &g,
            p.as_vector(),
            armijo_c,
            rho,
        )?;
        let x = self.accept_trial()?;
        let decision = StepsizeDecision {
            eta,
            used_unit: eta == 1.0,
            cond_a: None,
            cond_b: Some(true),
        };
        Ok((decision, x, last_values))
    }

    fn send_trial(&mut self, shifted: &StackedVector, eta: f64) -> Result<Vec<f64>> {
        let messages = (0..self.spec.m)
            .map(|i| Downlink::Direction {
                flag_a: false,
                delta: shifted.block_owned(i) * eta,
            })
            .collect();
        let replies = self.exchange(messages)?;
        replies
            .iter()
            .map(|r| match r {
                Uplink::ValueOnly { v } => Ok(*v),
                other => Err(unexpected_reply(other)),
            })
            .collect()
    }

    fn trial_value(&mut self, y_trial: &StackedVector, values: &[f64]) -> f64 {
        self.ledger.charge_envelope_evaluation();
        assemble_value(&self.coeffs, y_trial, values.iter().sum())
    }

    fn accept_trial(&mut self) -> Result<StackedVector> {
        let messages = vec![Downlink::Verdict { flag_b: true, eta: None }; self.spec.m];
        let replies = self.exchange(messages)?;
        let blocks = replies
            .iter()
            .map(|r| match r {
                Uplink::PrimalOnly { x } => Ok(x.clone()),
                other => Err(unexpected_reply(other)),
            })
            .collect::<Result<Vec<_>>>()?;
        StackedVector::from_blocks(&blocks)
    }

    /// Commits `y − η·p` with the primals and values the clients reported.
    fn advance(&mut self, p: &StackedVector, eta: f64, x: StackedVector, v: Vec<f64>) -> Result<()> {
        let y_old = self.server.y.clone();
        let g_old = self.server.gradient.clone();
        let y = y_old.add_scaled(-eta, p);
        let h = assemble_value(&self.coeffs, &y, v.iter().sum());
        let g = assemble_gradient(&self.coeffs, &y, &x)?;
        let prev = PreviousStep {
            s: y.as_vector() - y_old.as_vector(),
            z: g.as_vector() - g_old.as_vector(),
            eta_p: p.as_vector() * eta,
            gradient: g_old.into_vector(),
        };
        self.commit(y, x, v, g, h, Some(prev));
        Ok(())
    }

    /// Envelope gradient step `y − γ∇H(y)`. Clients send primals only, so
    /// `H` is tracked harness-side from the committed client states.
    fn gradient_round(&mut self) -> Result<Option<RoundOutcome>> {
        let g = self.server.gradient.clone();
        if g.norm() == 0.0 {
            return Ok(None);
        }
        let step = self.coeffs.gamma;
        let shifted = dual_shift(self.coeffs.tau, &g);
        let messages = (0..self.spec.m)
            .map(|i| Downlink::Step {
                delta: shifted.block_owned(i) * step,
            })
            .collect();
        let replies = self.exchange(messages)?;
        let blocks = replies
            .iter()
            .map(|r| match r {
                Uplink::PrimalOnly { x } => Ok(x.clone()),
                other => Err(unexpected_reply(other)),
            })
            .collect::<Result<Vec<_>>>()?;
        let x = StackedVector::from_blocks(&blocks)?;
        let y = self.server.y.add_scaled(-step, &g);
        let v: Vec<f64> = self.clients.iter().map(ClientState::local_value).collect();
        let h = assemble_value(&self.coeffs, &y, v.iter().sum());
        let gradient = assemble_gradient(&self.coeffs, &y, &x)?;
        self.commit(y, x, v, gradient, h, None);
        Ok(Some(RoundOutcome {
            decision: StepsizeDecision {
                eta: step,
                used_unit: false,
                cond_a: None,
                cond_b: None,
            },
            q: None,
            descent: None,
            bfgs_update: None,
            secant_residual: None,
        }))
    }

    /// Optimality residual at the committed client primals.
    pub fn residual(&self) -> Result<f64> {
        optimality_residual(&self.server.x, &self.local_gradients(), self.spec.lambda)
    }

    pub fn local_gradients(&self) -> Vec<Vector> {
        self.clients.iter().map(ClientState::local_gradient).collect()
    }

    /// `(∇H(y), H(y))` at the committed `y` from fresh cold-started proximal
    /// solves. Bypasses the protocol and the ledger.
    pub fn recompute_envelope(&self) -> Result<(StackedVector, f64)> {
        let shifted = dual_shift(self.coeffs.tau, &self.server.y);
        let mut blocks = Vec::with_capacity(self.spec.m);
        let mut v_sum = 0.0;
        for (i, client) in self.clients.iter().enumerate() {
            let c = shifted.block_owned(i);
            let sol = prox_solve(client.loss(), &c, self.coeffs.gamma, self.spec.inner_tol)?;
            v_sum += crate::client::compute_v(client.loss(), &sol.x, &c, self.coeffs.gamma)?;
            blocks.push(sol.x);
        }
        let x = StackedVector::from_blocks(&blocks)?;
        let g = assemble_gradient(&self.coeffs, &self.server.y, &x)?;
        Ok((g, assemble_value(&self.coeffs, &self.server.y, v_sum)))
    }

    /// Runs until convergence or the round cap.
    pub fn run_to_completion(mut self) -> Result<RunTrace> {
        while self.step()?.is_some() {}
        Ok(self.into_trace())
    }

    pub fn into_trace(self) -> RunTrace {
        RunTrace {
            policy: self.policy.kind,
            central_model: self.server.x.block_mean(),
            final_y: self.server.y,
            converged: self.converged,
            rounds: self.metrics,
            log: self.options.record_messages.then_some(self.log),
        }
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn coefficients(&self) -> &EnvelopeCoefficients {
        &self.coeffs
    }

    pub fn policy(&self) -> &StepsizePolicy {
        &self.policy
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn log(&self) -> &MessageLog {
        &self.log
    }

    pub fn metrics(&self) -> &[RoundMetrics] {
        &self.metrics
    }

    pub fn is_converged(&self) -> bool {
        self.converged
    }
}

impl ServerState {
    /// Round number used for messages while the round is still open.
    fn round_in_progress(&self, closed_rows: usize) -> usize {
        if closed_rows == 0 {
            0
        } else {
            self.round + 1
        }
    }
}

/// Orders replies by client index, whatever order they completed in. Fails on
/// a missing or duplicated client, or on the first client error by index.
pub fn collect_in_client_order(replies: Vec<(usize, Result<Uplink>)>, m: usize) -> Result<Vec<Uplink>> {
    let mut slots: Vec<Option<Result<Uplink>>> = (0..m).map(|_| None).collect();
    for (i, reply) in replies {
        let slot = slots
            .get_mut(i)
            .ok_or_else(|| Error::Protocol(format!("reply from unknown client {i}")))?;
        if slot.is_some() {
            return Err(Error::Protocol(format!("duplicate reply from client {i}")));
        }
        *slot = Some(reply);
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| Error::Protocol(format!("no reply from client {i}")))?)
        .collect()
}

fn primal_and_values(replies: &[Uplink]) -> Result<(StackedVector, Vec<f64>)> {
    let mut blocks = Vec::with_capacity(replies.len());
    let mut values = Vec::with_capacity(replies.len());
    for reply in replies {
        match reply {
            Uplink::PrimalAndValue { x, v } => {
                blocks.push(x.clone());
                values.push(*v);
            }
            other => return Err(unexpected_reply(other)),
        }
    }
    Ok((StackedVector::from_blocks(&blocks)?, values))
}

fn unexpected_reply(reply: &Uplink) -> Error {
    let kind = match reply {
        Uplink::PrimalAndValue { .. } => "PrimalAndValue",
        Uplink::ValueOnly { .. } => "ValueOnly",
        Uplink::PrimalOnly { .. } => "PrimalOnly",
    };
    Error::Protocol(format!("unexpected {kind} reply"))
}
