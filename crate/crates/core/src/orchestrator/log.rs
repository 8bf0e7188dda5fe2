use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::protocol::{Downlink, Message, Uplink};

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub round: usize,
    pub client: usize,
    pub message: Message,
}

/// The message shapes a client may see within one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundTrace {
    /// Round 0: one or two initialization exchanges.
    Bootstrap { exchanges: usize },
    /// `Direction(A) → PrimalAndValue`.
    Direct,
    /// `Direction(¬A) → ValueOnly → Verdict(B) → PrimalOnly`.
    TrialAccepted,
    /// `Direction(¬A) → ValueOnly → Verdict(¬B, η) → PrimalAndValue`.
    TrialRejected,
    /// Several trials before an accepting verdict (backtracking baseline).
    Backtracked { trials: usize },
    /// `Step → PrimalOnly` (envelope gradient step).
    GradientStep,
}

impl RoundTrace {
    /// Per-client `(down, up)` scalar cost for model dimension `d`.
    pub fn expected_costs(self, d: usize) -> (usize, usize) {
        match self {
            RoundTrace::Bootstrap { exchanges } => (exchanges * d, exchanges * (d + 1)),
            RoundTrace::Direct => (d + 1, d + 1),
            RoundTrace::TrialAccepted => (d + 2, d + 1),
            RoundTrace::TrialRejected => (d + 3, d + 2),
            RoundTrace::Backtracked { trials } => (trials * (d + 1) + 1, trials + d),
            RoundTrace::GradientStep => (d, d),
        }
    }

    /// Proximal solves one client performs.
    pub fn prox_solves(self) -> usize {
        match self {
            RoundTrace::Bootstrap { exchanges } => exchanges,
            RoundTrace::Direct | RoundTrace::TrialAccepted | RoundTrace::GradientStep => 1,
            RoundTrace::TrialRejected => 2,
            RoundTrace::Backtracked { trials } => trials,
        }
    }
}

/// Every message that crossed the simulated network, in send order.
#[derive(Debug, Clone, Default)]
pub struct MessageLog {
    entries: Vec<LogEntry>,
}

impl MessageLog {
    pub fn new() -> Self {
        MessageLog::default()
    }

    pub fn record(&mut self, round: usize, client: usize, message: Message) {
        self.entries.push(LogEntry { round, client, message });
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn messages(&self, round: usize, client: usize) -> Vec<&Message> {
        self.entries
            .iter()
            .filter(|e| e.round == round && e.client == client)
            .map(|e| &e.message)
            .collect()
    }

    /// `(down, up)` scalars for one client in one round.
    pub fn client_round_costs(&self, round: usize, client: usize) -> (usize, usize) {
        self.entries
            .iter()
            .filter(|e| e.round == round && e.client == client)
            .fold((0, 0), |(down, up), e| match &e.message {
                Message::Down(m) => (down + m.cost(), up),
                Message::Up(m) => (down, up + m.cost()),
            })
    }

    /// `(down, up)` scalar totals per round, recomputed from the messages.
    pub fn replay_round_costs(&self) -> BTreeMap<usize, (usize, usize)> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            let slot: &mut (usize, usize) = out.entry(e.round).or_default();
            match &e.message {
                Message::Down(m) => slot.0 += m.cost(),
                Message::Up(m) => slot.1 += m.cost(),
            }
        }
        out
    }

    /// Matches one client's messages in a round against the legal shapes.
    pub fn classify(&self, round: usize, client: usize) -> Result<RoundTrace> {
        classify_sequence(&self.messages(round, client))
            .ok_or_else(|| Error::Protocol(format!("illegal message sequence for client {client} in round {round}")))
    }
}

fn classify_sequence(msgs: &[&Message]) -> Option<RoundTrace> {
    use Message::{Down, Up};

    let is_init_pair = |pair: &[&Message]| {
        matches!(
            pair,
            [Down(Downlink::Init { .. }), Up(Uplink::PrimalAndValue { .. })]
        )
    };
    match msgs {
        [Down(Downlink::Direction { flag_a: true, .. }), Up(Uplink::PrimalAndValue { .. })] => {
            return Some(RoundTrace::Direct)
        }
        [Down(Downlink::Step { .. }), Up(Uplink::PrimalOnly { .. })] => return Some(RoundTrace::GradientStep),
        [Down(Downlink::Direction { flag_a: false, .. }), Up(Uplink::ValueOnly { .. }), Down(Downlink::Verdict { flag_b: false, eta: Some(_) }), Up(Uplink::PrimalAndValue { .. })] => {
            return Some(RoundTrace::TrialRejected)
        }
        _ => {}
    }
    if !msgs.is_empty() && msgs.len() % 2 == 0 && msgs.chunks(2).all(is_init_pair) {
        return Some(RoundTrace::Bootstrap {
            exchanges: msgs.len() / 2,
        });
    }
    // one or more (Direction(¬A), ValueOnly) trials, then an accepting verdict
    let (tail, trials) = msgs.split_at(msgs.len().checked_sub(2)?);
    let closes = matches!(
        trials,
        [Down(Downlink::Verdict { flag_b: true, eta: None }), Up(Uplink::PrimalOnly { .. })]
    );
    let opens = !tail.is_empty()
        && tail.len() % 2 == 0
        && tail.chunks(2).all(|pair| {
            matches!(
                pair,
                [Down(Downlink::Direction { flag_a: false, .. }), Up(Uplink::ValueOnly { .. })]
            )
        });
    if !(closes && opens) {
        return None;
    }
    match tail.len() / 2 {
        1 => Some(RoundTrace::TrialAccepted),
        trials => Some(RoundTrace::Backtracked { trials }),
    }
}
