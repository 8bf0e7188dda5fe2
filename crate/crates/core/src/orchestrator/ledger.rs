use std::ops::{Add, AddAssign};

/// Communication and computation counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Costs {
    /// Scalars sent server → clients, summed over clients.
    pub scalars_down: usize,
    /// Scalars sent clients → server, summed over clients.
    pub scalars_up: usize,
    pub prox_solves: usize,
    pub inner_newton_iters: usize,
    /// Envelope values assembled at trial points (line-search style evaluations).
    pub envelope_evaluations: usize,
}

impl Costs {
    pub fn communication(&self) -> usize {
        self.scalars_down + self.scalars_up
    }
}

impl Add for Costs {
    type Output = Costs;

    fn add(self, rhs: Costs) -> Costs {
        Costs {
            scalars_down: self.scalars_down + rhs.scalars_down,
            scalars_up: self.scalars_up + rhs.scalars_up,
            prox_solves: self.prox_solves + rhs.prox_solves,
            inner_newton_iters: self.inner_newton_iters + rhs.inner_newton_iters,
            envelope_evaluations: self.envelope_evaluations + rhs.envelope_evaluations,
        }
    }
}

impl AddAssign for Costs {
    fn add_assign(&mut self, rhs: Costs) {
        *self = *self + rhs;
    }
}

/// Per-round and cumulative cost accounting. Round 0 is the bootstrap.
#[derive(Debug, Clone, Default)]
pub struct CostLedger {
    current: Costs,
    cumulative: Costs,
    history: Vec<Costs>,
}

impl CostLedger {
    pub fn new() -> Self {
        CostLedger::default()
    }

    pub fn charge_down(&mut self, scalars: usize) {
        self.current.scalars_down += scalars;
    }

    pub fn charge_up(&mut self, scalars: usize) {
        self.current.scalars_up += scalars;
    }

    pub fn charge_compute(&mut self, prox_solves: usize, newton_iters: usize) {
        self.current.prox_solves += prox_solves;
        self.current.inner_newton_iters += newton_iters;
    }

    pub fn charge_envelope_evaluation(&mut self) {
        self.current.envelope_evaluations += 1;
    }

    /// Costs charged since the last close.
    pub fn current(&self) -> Costs {
        self.current
    }

    /// Seals the open round and returns its costs.
    pub fn close_round(&mut self) -> Costs {
        let closed = std::mem::take(&mut self.current);
        self.cumulative += closed;
        self.history.push(closed);
        closed
    }

    /// Totals over closed rounds.
    pub fn cumulative(&self) -> Costs {
        self.cumulative
    }

    pub fn rounds(&self) -> &[Costs] {
        &self.history
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_accumulate() {
        let mut ledger = CostLedger::new();
        ledger.charge_down(4);
        ledger.charge_up(5);
        ledger.charge_compute(2, 9);
        let first = ledger.close_round();
        assert_eq!(first.communication(), 9);
        ledger.charge_envelope_evaluation();
        ledger.charge_down(1);
        ledger.close_round();
        assert_eq!(ledger.rounds().len(), 2);
        let total = ledger.cumulative();
        assert_eq!(total.scalars_down, 5);
        assert_eq!(total.prox_solves, 2);
        assert_eq!(total.envelope_evaluations, 1);
        assert_eq!(ledger.current(), Costs::default());
    }
}
