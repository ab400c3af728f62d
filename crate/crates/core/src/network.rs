//! Synchronous message delivery between graph neighbours and the
//! communication ledger.
//!
//! A round takes one outgoing message per agent and hands a copy to every
//! neighbour. Agents never see each other's state except through these
//! deliveries; an agent's own contribution to a weighted aggregate is read
//! locally and costs nothing.

use nalgebra::DVector;

use crate::graph::MixingMatrix;

/// A message that can be put on the wire.
pub trait WirePayload: Clone {
    fn sender(&self) -> usize;

    /// Number of scalars one delivery of this message transmits.
    fn scalar_count(&self) -> usize;
}

/// Communication cost of one iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IterationComm {
    pub rounds: u64,
    pub scalars: u64,
}

/// Running totals of rounds and transmitted scalars.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommLedger {
    pub rounds_total: u64,
    pub scalars_total: u64,
    pub per_iteration: Vec<IterationComm>,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin_iteration(&mut self) {
        self.per_iteration.push(IterationComm::default());
    }

    fn record_round(&mut self, scalars: u64) {
        self.rounds_total += 1;
        self.scalars_total += scalars;
        if let Some(last) = self.per_iteration.last_mut() {
            last.rounds += 1;
            last.scalars += scalars;
        }
    }

    pub fn iterations(&self) -> usize {
        self.per_iteration.len()
    }
}

/// Delivers every agent's message to each of its neighbours and records the
/// round. `inbox[i]` holds the messages agent `i` received, in ascending
/// sender order.
pub fn deliver<M: WirePayload>(
    w: &MixingMatrix,
    outgoing: &[M],
    ledger: &mut CommLedger,
) -> Vec<Vec<M>> {
    let graph = w.graph();
    assert_eq!(outgoing.len(), graph.n(), "one message per agent");
    let mut inbox: Vec<Vec<M>> = vec![Vec::new(); graph.n()];
    let mut scalars = 0u64;
    for msg in outgoing {
        let from = msg.sender();
        for &to in graph.neighbors(from) {
            inbox[to].push(msg.clone());
            scalars += msg.scalar_count() as u64;
        }
    }
    for msgs in &mut inbox {
        msgs.sort_by_key(WirePayload::sender);
    }
    ledger.record_round(scalars);
    inbox
}

/// `Σ_j W_ji x_j` for agent `i`: its own term plus whatever arrived.
pub fn mix<'a, M: WirePayload + 'a>(
    w: &MixingMatrix,
    i: usize,
    own: &DVector<f64>,
    inbox: &'a [M],
    field: impl Fn(&'a M) -> &'a DVector<f64>,
) -> DVector<f64> {
    let mut acc = own * w.weight(i, i);
    for msg in inbox {
        acc.axpy(w.weight(msg.sender(), i), field(msg), 1.0);
    }
    acc
}

/// Single-vector payload used by the one-round baselines.
#[derive(Debug, Clone)]
pub struct VectorMessage {
    pub sender: usize,
    pub payload: DVector<f64>,
}

impl WirePayload for VectorMessage {
    fn sender(&self) -> usize {
        self.sender
    }

    fn scalar_count(&self) -> usize {
        self.payload.len()
    }
}

/// One mixing round over single vectors: returns `(W ⊗ I) x` computed by
/// message passing.
pub fn mix_round(
    w: &MixingMatrix,
    xs: &[DVector<f64>],
    ledger: &mut CommLedger,
) -> Vec<DVector<f64>> {
    let outgoing: Vec<_> = xs
        .iter()
        .enumerate()
        .map(|(i, x)| VectorMessage {
            sender: i,
            payload: x.clone(),
        })
        .collect();
    let inbox = deliver(w, &outgoing, ledger);
    (0..xs.len())
        .map(|i| mix(w, i, &xs[i], &inbox[i], |m| &m.payload))
        .collect()
}
