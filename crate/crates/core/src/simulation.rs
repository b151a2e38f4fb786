//! Full scenario runs.
//!
//! The proposed mechanism runs one synchronized phase per layer, base layer
//! first: every upstream with upload left opens the layer, every subscribed
//! downstream negotiates it, and the final grants shrink both the upstream
//! remainders and the link headrooms seen by the next layer. The baseline is
//! the same market without layer awareness: one auction per upstream in
//! which the bids of all layers compete on price, each layer water-filled
//! on its own against the full link capacity.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::auction::{
    run_auction, run_layer_auction, Allocation, AuctionLedger, Bid, LayerStep, Participant,
    Revision,
};
use crate::bidder::BidderState;
use crate::config::Mode;
use crate::error::{AuctionError, SimulationError};
use crate::overlay::{validate_overlay, DownstreamInfo, Overlay, PeerId};
use crate::trace::TraceSink;
use crate::units::{apportion, Bandwidth, Payment};

/// Abort limit for one auction when none is configured.
pub const DEFAULT_ROUND_LIMIT: u32 = 100;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationParams {
    /// Rounds after which an auction that is still changing aborts.
    pub max_rounds: Option<u32>,
}

impl SimulationParams {
    pub fn round_limit(&self) -> u32 {
        self.max_rounds.unwrap_or(DEFAULT_ROUND_LIMIT)
    }
}

/// Nominal convergence bound: the highest reference price plus two.
pub fn round_bound(overlay: &Overlay) -> u32 {
    overlay.max_reference_price().get() + 2
}

/// What one downstream obtained for one subscribed layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOutcome {
    pub downstream: PeerId,
    pub class_id: u8,
    pub layer: usize,
    pub demand: Bandwidth,
    pub granted: Bandwidth,
    pub residual: Bandwidth,
    pub payment: Payment,
    pub budget: Payment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    /// `None` for the single all-layer baseline auction.
    pub layer: Option<usize>,
    pub rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub mode: Mode,
    pub round_limit: u32,
    pub overlay: Overlay,
    /// Final non-zero grants ordered by layer, downstream, upstream.
    pub grants: Vec<Allocation>,
    /// One entry per downstream and subscribed layer.
    pub outcomes: Vec<LayerOutcome>,
    pub phases: Vec<PhaseStats>,
}

impl ScenarioResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn check_overlay(overlay: &Overlay) -> Result<(), SimulationError> {
    let v = validate_overlay(overlay);
    if v.is_empty() {
        return Ok(());
    }
    let list: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    Err(SimulationError::InvalidOverlay(list.join("; ")))
}

fn outcome_of(b: &BidderState, class_id: u8) -> LayerOutcome {
    LayerOutcome {
        downstream: b.peer,
        class_id,
        layer: b.layer,
        demand: b.demand,
        granted: b.granted_total(),
        residual: b.residual(),
        payment: b.payment(),
        budget: b.budget,
    }
}

fn finish(
    mode: Mode,
    overlay: &Overlay,
    round_limit: u32,
    mut grants: Vec<Allocation>,
    mut outcomes: Vec<LayerOutcome>,
    phases: Vec<PhaseStats>,
) -> Result<ScenarioResult, SimulationError> {
    grants.retain(|a| !a.granted.is_zero());
    grants.sort_by_key(|a| (a.layer, a.downstream, a.upstream));
    outcomes.sort_by_key(|o| (o.downstream, o.layer));
    let result = ScenarioResult {
        mode,
        round_limit,
        overlay: overlay.clone(),
        grants,
        outcomes,
        phases,
    };
    let broken = conservation_violations(&result);
    if !broken.is_empty() {
        return Err(AuctionError::Conservation(broken.join("; ")).into());
    }
    Ok(result)
}

/// Layered mechanism: one synchronized auction phase per layer.
pub fn run_scenario(
    overlay: &Overlay,
    params: &SimulationParams,
    trace: &mut dyn TraceSink,
) -> Result<ScenarioResult, SimulationError> {
    check_overlay(overlay)?;
    let limit = params.round_limit();
    let infos = overlay.downstreams();
    let mut headroom: Vec<Bandwidth> = overlay
        .links
        .iter()
        .map(|l| l.available - l.allocated)
        .collect();
    let mut ledgers: Vec<AuctionLedger> = overlay
        .upstreams()
        .map(|(id, upload)| AuctionLedger::new(id, upload, overlay.layer_spec.top()))
        .collect();

    let mut grants = Vec::new();
    let mut outcomes = Vec::new();
    let mut phases = Vec::new();
    for layer in 0..overlay.layer_spec.count {
        let mut open = BTreeSet::new();
        for l in &mut ledgers {
            if let LayerStep::Open(_) = l.advance_layer()? {
                open.insert(l.upstream);
            }
        }
        let rate = overlay.layer_spec.rate(layer);
        let subscribed: Vec<&DownstreamInfo> =
            infos.iter().filter(|d| d.subscribed_level >= layer).collect();
        let mut bidders: Vec<BidderState> = subscribed
            .iter()
            .map(|d| {
                let links = d
                    .links
                    .iter()
                    .map(|&li| (overlay.links[li].upstream, li, headroom[li]))
                    .filter(|(up, _, _)| open.contains(up));
                BidderState::new(d.id, layer, rate, d.reference_price, links)
            })
            .collect();
        for b in &mut bidders {
            b.initial_bids();
        }
        let outcome = run_layer_auction(&mut ledgers, layer, &mut bidders, limit, trace)?;
        log::debug!("layer {layer}: {} bidders, {} rounds", bidders.len(), outcome.rounds);
        for (b, d) in bidders.iter().zip(&subscribed) {
            for l in &b.links {
                headroom[l.link] -= l.granted;
            }
            outcomes.push(outcome_of(b, d.class_id));
        }
        grants.extend(outcome.allocations);
        phases.push(PhaseStats {
            layer: Some(layer),
            rounds: outcome.rounds,
        });
    }
    finish(Mode::Proposed, overlay, limit, grants, outcomes, phases)
}

/// Layer-agnostic bidder: one water-fill per subscribed layer, all against
/// the full link capacity, with the combined request per link trimmed to
/// stay below that capacity.
struct LayerBlindBidder {
    peer: PeerId,
    class_id: u8,
    layers: Vec<BidderState>,
    link_max: BTreeMap<usize, u64>,
}

impl LayerBlindBidder {
    fn enforce_link_limits(&mut self) {
        for (&link, &max) in &self.link_max {
            let reqs: Vec<u64> = self
                .layers
                .iter()
                .map(|s| {
                    s.links
                        .iter()
                        .find(|l| l.link == link)
                        .map_or(0, |l| l.requested.units())
                })
                .collect();
            if reqs.iter().sum::<u64>() <= max {
                continue;
            }
            for (s, units) in self.layers.iter_mut().zip(apportion(max, &reqs)) {
                s.set_request(link, units);
            }
        }
    }
}

impl Participant for LayerBlindBidder {
    fn peer(&self) -> PeerId {
        self.peer
    }

    fn bids(&self) -> Vec<Bid> {
        self.layers.iter().flat_map(|s| s.bids()).collect()
    }

    fn revise(&mut self, grants: &[Allocation]) -> Result<Revision, AuctionError> {
        let before = self.bids();
        for s in &mut self.layers {
            s.revise_bids(grants)?;
        }
        self.enforce_link_limits();
        let after = self.bids();
        Ok(if after == before {
            Revision::Done
        } else {
            Revision::Rebid(after)
        })
    }
}

/// Layer-agnostic comparison mechanism on the same overlay.
pub fn run_baseline(
    overlay: &Overlay,
    params: &SimulationParams,
    trace: &mut dyn TraceSink,
) -> Result<ScenarioResult, SimulationError> {
    check_overlay(overlay)?;
    let limit = params.round_limit();
    let supply: BTreeMap<PeerId, Bandwidth> = overlay
        .upstreams()
        .filter(|(_, u)| !u.is_zero())
        .collect();
    let mut bidders: Vec<LayerBlindBidder> = overlay
        .downstreams()
        .iter()
        .map(|d| {
            let full = |li: usize| {
                let l = &overlay.links[li];
                (l.upstream, li, l.available - l.allocated)
            };
            let layers: Vec<BidderState> = (0..=d.subscribed_level)
                .map(|k| {
                    let mut s = BidderState::new(
                        d.id,
                        k,
                        overlay.layer_spec.rate(k),
                        d.reference_price,
                        d.links.iter().map(|&li| full(li)),
                    );
                    s.initial_bids();
                    s
                })
                .collect();
            let link_max = layers
                .first()
                .map(|s| s.links.iter().map(|l| (l.link, l.max_units)).collect())
                .unwrap_or_default();
            let mut b = LayerBlindBidder {
                peer: d.id,
                class_id: d.class_id,
                layers,
                link_max,
            };
            b.enforce_link_limits();
            b
        })
        .collect();

    let outcome = if bidders.is_empty() || supply.is_empty() {
        crate::auction::AuctionOutcome {
            allocations: Vec::new(),
            rounds: 0,
        }
    } else {
        run_auction(None, &supply, &mut bidders, limit, trace)?
    };
    let outcomes = bidders
        .iter()
        .flat_map(|b| b.layers.iter().map(move |s| outcome_of(s, b.class_id)))
        .collect();
    let phases = vec![PhaseStats {
        layer: None,
        rounds: outcome.rounds,
    }];
    finish(Mode::Baseline, overlay, limit, outcome.allocations, outcomes, phases)
}

pub fn run_mode(
    mode: Mode,
    overlay: &Overlay,
    params: &SimulationParams,
    trace: &mut dyn TraceSink,
) -> Result<ScenarioResult, SimulationError> {
    match mode {
        Mode::Proposed => run_scenario(overlay, params, trace),
        Mode::Baseline => run_baseline(overlay, params, trace),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConvergence {
    pub layer: Option<usize>,
    pub rounds: u32,
    /// More rounds than the nominal bound.
    pub over_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStats {
    pub bound: u32,
    pub phases: Vec<PhaseConvergence>,
    pub max_rounds: u32,
    pub total_rounds: u32,
    pub phases_over_bound: usize,
}

pub fn convergence_stats(result: &ScenarioResult) -> ConvergenceStats {
    let bound = round_bound(&result.overlay);
    let phases: Vec<PhaseConvergence> = result
        .phases
        .iter()
        .map(|p| PhaseConvergence {
            layer: p.layer,
            rounds: p.rounds,
            over_bound: p.rounds > bound,
        })
        .collect();
    ConvergenceStats {
        bound,
        max_rounds: phases.iter().map(|p| p.rounds).max().unwrap_or(0),
        total_rounds: phases.iter().map(|p| p.rounds).sum(),
        phases_over_bound: phases.iter().filter(|p| p.over_bound).count(),
        phases,
    }
}

/// Checks upload conservation per upstream, strict headroom per link and
/// the layer budget per downstream, all in exact fixed-point arithmetic.
pub fn conservation_violations(result: &ScenarioResult) -> Vec<String> {
    let mut out = Vec::new();
    let overlay = &result.overlay;
    let mut per_upstream: BTreeMap<PeerId, Bandwidth> = BTreeMap::new();
    let mut per_link: BTreeMap<(PeerId, PeerId), Bandwidth> = BTreeMap::new();
    for a in &result.grants {
        *per_upstream.entry(a.upstream).or_default() += a.granted;
        *per_link.entry((a.downstream, a.upstream)).or_default() += a.granted;
    }
    for (id, upload) in overlay.upstreams() {
        let used = per_upstream.get(&id).copied().unwrap_or_default();
        if used > upload {
            out.push(format!("upstream {id} granted {used} of {upload}"));
        }
    }
    let links: BTreeMap<(PeerId, PeerId), Bandwidth> = overlay
        .links
        .iter()
        .map(|l| ((l.downstream, l.upstream), l.available - l.allocated))
        .collect();
    for (key, used) in &per_link {
        match links.get(key) {
            Some(&cap) if *used < cap => {}
            Some(&cap) => out.push(format!(
                "link {}->{} carries {used}, not below {cap}",
                key.1, key.0
            )),
            None => out.push(format!("grant on missing link {}->{}", key.1, key.0)),
        }
    }
    for o in &result.outcomes {
        if o.payment > o.budget {
            out.push(format!(
                "peer {} paid {} for layer {} over budget {}",
                o.downstream,
                o.payment.currency(),
                o.layer,
                o.budget.currency()
            ));
        }
        if o.granted > o.demand {
            out.push(format!(
                "peer {} received {} for layer {} above its demand {}",
                o.downstream, o.granted, o.layer, o.demand
            ));
        }
    }
    out
}
