//! Server-side driver: bootstrap, round loop, cost ledger and message log.

mod ledger;
mod log;
mod simulation;

use std::sync::Arc;

pub use ledger::{CostLedger, Costs};
pub use log::{LogEntry, MessageLog, RoundTrace};
pub use simulation::{
    collect_in_client_order, PreviousStep, RoundMetrics, RunOptions, RunTrace, ServerState, Simulation,
};

use crate::envelope::StackedVector;
use crate::error::Result;
use crate::problem::{LocalLoss, ProblemSpec};
use crate::stepsize::{PolicyKind, StepsizePolicy};

/// Runs `kind` from `y⁰ = 0` with default options.
pub fn run(spec: ProblemSpec, losses: Vec<Arc<dyn LocalLoss>>, kind: PolicyKind) -> Result<RunTrace> {
    run_with(spec, losses, kind, RunOptions::default())
}

pub fn run_with(
    spec: ProblemSpec,
    losses: Vec<Arc<dyn LocalLoss>>,
    kind: PolicyKind,
    options: RunOptions,
) -> Result<RunTrace> {
    let y0 = StackedVector::zeros(spec.m, spec.d);
    let policy = StepsizePolicy::new(kind, &spec);
    Simulation::bootstrap(spec, losses, policy, y0, None, options)?.run_to_completion()
}

/// Gradient steps on the envelope with stepsize `γ`.
pub fn run_admm(spec: ProblemSpec, losses: Vec<Arc<dyn LocalLoss>>) -> Result<RunTrace> {
    run(spec, losses, PolicyKind::AdmmGd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::QuadraticLoss;
    use nalgebra::dvector;

    fn tiny() -> (ProblemSpec, Vec<Arc<dyn LocalLoss>>) {
        let spec = ProblemSpec::new(2, 2, 1.0).unwrap().with_max_rounds(300);
        let losses: Vec<Arc<dyn LocalLoss>> = vec![
            Arc::new(QuadraticLoss::isotropic(dvector![1.0, -1.0], 1.0).unwrap()),
            Arc::new(QuadraticLoss::isotropic(dvector![3.0, 0.5], 2.0).unwrap()),
        ];
        (spec, losses)
    }

    #[test]
    fn every_policy_solves_a_tiny_quadratic() {
        // Σ cᵢ(x − aᵢ) + λx = 0 ⇒ x = Σ cᵢaᵢ / (Σ cᵢ + λ)
        let expected = dvector![(1.0 + 6.0) / 4.0, (-1.0 + 1.0) / 4.0];
        for kind in PolicyKind::ALL {
            let (spec, losses) = tiny();
            let trace = run(spec, losses, kind).unwrap();
            assert!(trace.converged, "{kind} did not converge");
            assert!((&trace.central_model - &expected).norm() < 1e-5, "{kind}");
        }
    }

    #[test]
    fn ledger_matches_log_replay() {
        let (spec, losses) = tiny();
        let trace = run(spec, losses, PolicyKind::Qnd2r).unwrap();
        let log = trace.log.as_ref().unwrap();
        let replay = log.replay_round_costs();
        for row in &trace.rounds {
            let (down, up) = replay[&row.round];
            assert_eq!((row.costs.scalars_down, row.costs.scalars_up), (down, up));
        }
    }

    #[test]
    fn order_restored_and_gaps_rejected() {
        use crate::protocol::Uplink;
        let replies = vec![
            (1, Ok(Uplink::ValueOnly { v: 1.0 })),
            (0, Ok(Uplink::ValueOnly { v: 0.0 })),
        ];
        let ordered = collect_in_client_order(replies, 2).unwrap();
        assert_eq!(ordered[0], Uplink::ValueOnly { v: 0.0 });
        assert!(collect_in_client_order(vec![(0, Ok(Uplink::ValueOnly { v: 0.0 }))], 2).is_err());
        let dup = vec![
            (0, Ok(Uplink::ValueOnly { v: 0.0 })),
            (0, Ok(Uplink::ValueOnly { v: 0.0 })),
        ];
        assert!(collect_in_client_order(dup, 2).is_err());
    }
}
