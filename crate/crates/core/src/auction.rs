//! Upstream side of the market.
//!
//! Each upstream sells its upload one layer at a time. Within a layer the
//! auction runs in rounds: collect bids, serve them best price first,
//! report grants, collect revised bids. Allocations are recomputed from the
//! full layer supply every round and only become final at the fixed point,
//! the first round in which no bidder changes any bid.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::AuctionError;
use crate::overlay::PeerId;
use crate::trace::{RoundRecord, TraceSink};
use crate::units::{apportion, Bandwidth, Price};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bid {
    pub downstream: PeerId,
    pub upstream: PeerId,
    pub layer: usize,
    pub quantity: Bandwidth,
    pub unit_price: Price,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub downstream: PeerId,
    pub upstream: PeerId,
    pub layer: usize,
    pub granted: Bandwidth,
    pub unit_price: Price,
}

/// Serves bids from the highest unit price down. A price tier that fits in
/// what is left is served in full; the tier that does not fit shares the
/// rest in proportion to requested quantity, with leftover 0.1 kbps units
/// going to the largest remainders (ties to the lower peer id). The result
/// has one allocation per bid, in input order, and does not depend on that
/// order.
pub fn allocate_round(remaining: Bandwidth, bids: &[Bid]) -> Vec<Allocation> {
    let mut order: Vec<usize> = (0..bids.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&bids[a], &bids[b]);
        y.unit_price
            .cmp(&x.unit_price)
            .then(x.downstream.cmp(&y.downstream))
            .then(x.layer.cmp(&y.layer))
            .then(x.upstream.cmp(&y.upstream))
            .then(x.quantity.cmp(&y.quantity))
    });

    let mut granted = vec![Bandwidth::ZERO; bids.len()];
    let mut left = remaining.units();
    let mut start = 0;
    while start < order.len() && left > 0 {
        let price = bids[order[start]].unit_price;
        let end = order[start..]
            .iter()
            .position(|&i| bids[i].unit_price != price)
            .map_or(order.len(), |p| start + p);
        let tier = &order[start..end];
        let demand: u64 = tier.iter().map(|&i| bids[i].quantity.units()).sum();
        if demand <= left {
            for &i in tier {
                granted[i] = bids[i].quantity;
            }
            left -= demand;
        } else {
            let weights: Vec<u64> = tier.iter().map(|&i| bids[i].quantity.units()).collect();
            for (&i, share) in tier.iter().zip(apportion(left, &weights)) {
                granted[i] = Bandwidth::from_units(share);
            }
            left = 0;
        }
        start = end;
    }

    bids.iter()
        .zip(granted)
        .map(|(b, g)| Allocation {
            downstream: b.downstream,
            upstream: b.upstream,
            layer: b.layer,
            granted: g,
            unit_price: b.unit_price,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub layer: usize,
    pub remaining_before: Bandwidth,
    pub granted: Bandwidth,
    pub rounds: u32,
    pub status: LayerStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerStep {
    Open(usize),
    Done,
}

/// Per-upstream record of the layer sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionLedger {
    pub upstream: PeerId,
    pub upload: Bandwidth,
    pub top_layer: usize,
    pub layers: Vec<LayerRecord>,
    pub done: bool,
}

impl AuctionLedger {
    pub fn new(upstream: PeerId, upload: Bandwidth, top_layer: usize) -> Self {
        AuctionLedger {
            upstream,
            upload,
            top_layer,
            layers: Vec::new(),
            done: false,
        }
    }

    pub fn granted_total(&self) -> Bandwidth {
        self.layers.iter().map(|l| l.granted).sum()
    }

    pub fn remaining(&self) -> Bandwidth {
        self.upload - self.granted_total()
    }

    pub fn open_layer(&self) -> Option<usize> {
        self.layers
            .last()
            .filter(|l| l.status == LayerStatus::Open)
            .map(|l| l.layer)
    }

    /// Opens the next layer, or reports that this upstream is finished
    /// because the top layer closed or no upload is left.
    pub fn advance_layer(&mut self) -> Result<LayerStep, AuctionError> {
        if let Some(k) = self.open_layer() {
            return Err(AuctionError::Ledger {
                upstream: self.upstream,
                reason: format!("cannot advance while layer {k} is open"),
            });
        }
        if self.done {
            return Ok(LayerStep::Done);
        }
        let next = self.layers.last().map_or(0, |l| l.layer + 1);
        let remaining = self.remaining();
        if next > self.top_layer || remaining.is_zero() {
            self.done = true;
            return Ok(LayerStep::Done);
        }
        self.layers.push(LayerRecord {
            layer: next,
            remaining_before: remaining,
            granted: Bandwidth::ZERO,
            rounds: 0,
            status: LayerStatus::Open,
        });
        Ok(LayerStep::Open(next))
    }

    /// Records the final grants of the open layer and closes it.
    pub fn close_layer(
        &mut self,
        layer: usize,
        granted: Bandwidth,
        rounds: u32,
    ) -> Result<(), AuctionError> {
        let upstream = self.upstream;
        let rec = match self.layers.last_mut() {
            Some(r) if r.status == LayerStatus::Open && r.layer == layer => r,
            _ => {
                return Err(AuctionError::Ledger {
                    upstream,
                    reason: format!("layer {layer} is not the open layer"),
                })
            }
        };
        if granted > rec.remaining_before {
            return Err(AuctionError::Conservation(format!(
                "upstream {upstream} granted {granted} in layer {layer} with only {} left",
                rec.remaining_before
            )));
        }
        rec.granted = granted;
        rec.rounds = rounds;
        rec.status = LayerStatus::Closed;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Revision {
    /// Current bids stand.
    Done,
    Rebid(Vec<Bid>),
}

/// A bidder as seen by the engine.
pub trait Participant {
    fn peer(&self) -> PeerId;
    /// Outstanding bids, quantity zero bids excluded.
    fn bids(&self) -> Vec<Bid>;
    /// Reacts to this round's grants for the participant's bids.
    fn revise(&mut self, grants: &[Allocation]) -> Result<Revision, AuctionError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionOutcome {
    /// Final grants, one per outstanding bid at the fixed point.
    pub allocations: Vec<Allocation>,
    pub rounds: u32,
}

/// Runs rounds until no participant revises, or fails once `max_rounds`
/// rounds have passed without reaching that point. `phase` labels trace
/// records and diagnostics. Upstreams missing from `supply` have nothing
/// to sell.
pub fn run_auction<P: Participant>(
    phase: Option<usize>,
    supply: &BTreeMap<PeerId, Bandwidth>,
    participants: &mut [P],
    max_rounds: u32,
    trace: &mut dyn TraceSink,
) -> Result<AuctionOutcome, AuctionError> {
    let index: BTreeMap<PeerId, usize> = participants
        .iter()
        .enumerate()
        .map(|(i, p)| (p.peer(), i))
        .collect();
    let mut round = 0;
    loop {
        round += 1;
        let mut by_upstream: BTreeMap<PeerId, Vec<Bid>> = BTreeMap::new();
        for p in participants.iter() {
            for bid in p.bids() {
                by_upstream.entry(bid.upstream).or_default().push(bid);
            }
        }
        let mut allocations = Vec::new();
        for (upstream, bids) in &by_upstream {
            let remaining = supply.get(upstream).copied().unwrap_or_default();
            let grants = allocate_round(remaining, bids);
            if trace.enabled() {
                trace.record(&RoundRecord {
                    phase,
                    round,
                    upstream: *upstream,
                    remaining,
                    bids: bids.clone(),
                    grants: grants.clone(),
                });
            }
            allocations.extend(grants);
        }

        let mut per_peer: Vec<Vec<Allocation>> = vec![Vec::new(); participants.len()];
        for a in &allocations {
            if let Some(&i) = index.get(&a.downstream) {
                per_peer[i].push(*a);
            }
        }
        let mut changed = false;
        for (p, grants) in participants.iter_mut().zip(&per_peer) {
            if let Revision::Rebid(_) = p.revise(grants)? {
                changed = true;
            }
        }
        if !changed {
            return Ok(AuctionOutcome {
                allocations,
                rounds: round,
            });
        }
        if round >= max_rounds {
            return Err(AuctionError::NonConvergence {
                phase: phase.map_or_else(|| "all layers".to_string(), |k| format!("layer {k}")),
                max_rounds,
            });
        }
    }
}

/// One synchronized layer phase: every ledger with layer `layer` open sells
/// its remaining upload to `bidders`; the ledgers are closed with the final
/// grants.
pub fn run_layer_auction<P: Participant>(
    ledgers: &mut [AuctionLedger],
    layer: usize,
    bidders: &mut [P],
    max_rounds: u32,
    trace: &mut dyn TraceSink,
) -> Result<AuctionOutcome, AuctionError> {
    let mut supply = BTreeMap::new();
    for l in ledgers.iter() {
        match l.open_layer() {
            Some(k) if k == layer => {
                supply.insert(l.upstream, l.layers.last().map(|r| r.remaining_before).unwrap_or_default());
            }
            Some(k) => {
                return Err(AuctionError::Ledger {
                    upstream: l.upstream,
                    reason: format!("layer {k} is open while running layer {layer}"),
                })
            }
            None => {}
        }
    }
    let outcome = if bidders.is_empty() || supply.is_empty() {
        AuctionOutcome {
            allocations: Vec::new(),
            rounds: 0,
        }
    } else {
        run_auction(Some(layer), &supply, bidders, max_rounds, trace)?
    };
    let mut totals: BTreeMap<PeerId, Bandwidth> = BTreeMap::new();
    for a in &outcome.allocations {
        if a.layer != layer {
            return Err(AuctionError::Conservation(format!(
                "grant for layer {} during layer {layer} phase",
                a.layer
            )));
        }
        *totals.entry(a.upstream).or_default() += a.granted;
    }
    for l in ledgers.iter_mut() {
        if l.open_layer() == Some(layer) {
            let g = totals.get(&l.upstream).copied().unwrap_or_default();
            l.close_layer(layer, g, outcome.rounds)?;
        }
    }
    Ok(outcome)
}
