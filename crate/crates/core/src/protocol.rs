//! Messages exchanged between the server and one client, with their cost in
//! transmitted scalars. A d-vector costs `d`; a flag or a scalar costs 1.

use crate::Vector;

/// Server to client.
#[derive(Debug, Clone, PartialEq)]
pub enum Downlink {
    /// Bootstrap: solve the proximal subproblem for this coefficient and
    /// adopt it as the running offset.
    Init { coefficient: Vector },
    /// Round opener. `flag_a` is the outcome of the cheap server-side test;
    /// `delta` is the change of the client coefficient for this round.
    Direction { flag_a: bool, delta: Vector },
    /// Outcome of the sufficient-decrease test at the unit trial. `eta` is
    /// present exactly when the trial was rejected.
    Verdict { flag_b: bool, eta: Option<f64> },
    /// Plain envelope gradient step (ADMM baseline): apply `delta` and
    /// return the new primal.
    Step { delta: Vector },
}

/// Client to server.
#[derive(Debug, Clone, PartialEq)]
pub enum Uplink {
    PrimalAndValue { x: Vector, v: f64 },
    ValueOnly { v: f64 },
    PrimalOnly { x: Vector },
}

pub type ClientReply = Uplink;

impl Downlink {
    pub fn cost(&self) -> usize {
        match self {
            Downlink::Init { coefficient } => coefficient.len(),
            Downlink::Direction { delta, .. } => 1 + delta.len(),
            Downlink::Verdict { eta, .. } => 1 + usize::from(eta.is_some()),
            Downlink::Step { delta } => delta.len(),
        }
    }
}

impl Uplink {
    pub fn cost(&self) -> usize {
        match self {
            Uplink::PrimalAndValue { x, .. } => x.len() + 1,
            Uplink::ValueOnly { .. } => 1,
            Uplink::PrimalOnly { x } => x.len(),
        }
    }

    pub fn primal(&self) -> Option<&Vector> {
        match self {
            Uplink::PrimalAndValue { x, .. } | Uplink::PrimalOnly { x } => Some(x),
            Uplink::ValueOnly { .. } => None,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Uplink::PrimalAndValue { v, .. } | Uplink::ValueOnly { v } => Some(*v),
            Uplink::PrimalOnly { .. } => None,
        }
    }
}

/// Either direction, as recorded in the message log.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Down(Downlink),
    Up(Uplink),
}

impl Message {
    pub fn cost(&self) -> usize {
        match self {
            Message::Down(m) => m.cost(),
            Message::Up(m) => m.cost(),
        }
    }
}
