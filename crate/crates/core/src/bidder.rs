//! Downstream side of the market: layer budgets, water-filling demand over
//! upstream links, and price escalation between rounds.

use std::collections::BTreeMap;

use crate::auction::{Allocation, Bid, Participant, Revision};
use crate::cost::CostCurve;
use crate::error::AuctionError;
use crate::overlay::PeerId;
use crate::units::{Bandwidth, Payment, Price, UNITS_PER_KBPS};

/// Budget for one layer: reference price times layer rate.
pub fn layer_budget(reference_price: Price, rate: Bandwidth) -> Payment {
    rate.cost_at(reference_price)
}

/// One link as seen by the water-filling solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Offer {
    pub price: f64,
    pub curve: CostCurve,
    /// Largest load the link may take, at most the curve ceiling.
    pub limit: f64,
}

impl Offer {
    pub fn new(price: f64, curve: CostCurve) -> Self {
        Offer {
            price,
            curve,
            limit: curve.ceiling(),
        }
    }

    pub fn with_limit(mut self, limit: f64) -> Self {
        self.limit = limit.clamp(0.0, self.curve.ceiling());
        self
    }

    /// Load taken at water level `level`.
    pub fn load_at(&self, level: f64) -> f64 {
        self.curve.inverse_marginal(self.price, level).min(self.limit)
    }

    /// `price + E'(b)`.
    pub fn marginal(&self, b: f64) -> f64 {
        self.price + self.curve.marginal(b.min(self.curve.ceiling())).unwrap_or(f64::INFINITY)
    }

    /// `price * b + E(b)`.
    pub fn total_cost(&self, b: f64) -> f64 {
        self.price * b + self.curve.cost(b).unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaterFill {
    pub quantities: Vec<f64>,
    /// Common marginal cost of every link with positive load.
    pub level: f64,
    /// Demand the links could not absorb.
    pub shortfall: f64,
}

/// Solver tolerance on the placed total, kbps.
const FILL_TOLERANCE: f64 = 1e-7;

/// Splits `demand` over `offers` minimizing `Σ price·b + E(b)`.
///
/// The optimum equalizes `price + E'(b)` at a common level on every link
/// that carries load; links whose entry threshold lies above that level get
/// nothing. The level is found by bisection on the monotone map from level
/// to total load.
pub fn water_fill(demand: f64, offers: &[Offer]) -> WaterFill {
    let floor = offers
        .iter()
        .map(|o| o.price + o.curve.entry_marginal())
        .fold(f64::INFINITY, f64::min);
    if offers.is_empty() || !(demand > 0.0) {
        return WaterFill {
            quantities: vec![0.0; offers.len()],
            level: floor,
            shortfall: demand.max(0.0),
        };
    }
    let capacity: f64 = offers.iter().map(|o| o.limit).sum();
    let ceiling = offers
        .iter()
        .filter(|o| o.limit > 0.0)
        .map(|o| o.marginal(o.limit))
        .fold(floor, f64::max);
    if demand >= capacity - FILL_TOLERANCE {
        return WaterFill {
            quantities: offers.iter().map(|o| o.limit).collect(),
            level: ceiling,
            shortfall: (demand - capacity).max(0.0),
        };
    }
    let total = |level: f64| offers.iter().map(|o| o.load_at(level)).sum::<f64>();
    let (mut lo, mut hi) = (floor, ceiling);
    let mut level = hi;
    for _ in 0..2000 {
        level = 0.5 * (lo + hi);
        let t = total(level);
        if (t - demand).abs() <= FILL_TOLERANCE || level <= lo || level >= hi {
            break;
        }
        if t < demand {
            lo = level;
        } else {
            hi = level;
        }
    }
    WaterFill {
        quantities: offers.iter().map(|o| o.load_at(level)).collect(),
        level,
        shortfall: 0.0,
    }
}

/// Rounds real-valued loads onto the 0.1 kbps grid so they sum to `target`
/// units (as far as the per-link maxima allow), flooring first and then
/// handing out units by largest fractional part.
pub fn quantize(amounts: &[f64], max_units: &[u64], target: u64) -> Vec<u64> {
    let scale = UNITS_PER_KBPS as f64;
    let mut units: Vec<u64> = amounts
        .iter()
        .zip(max_units)
        .map(|(&a, &m)| ((a.max(0.0) * scale).floor() as u64).min(m))
        .collect();
    let mut order: Vec<usize> = (0..amounts.len()).collect();
    let frac = |i: usize| amounts[i].max(0.0) * scale - (amounts[i].max(0.0) * scale).floor();
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    let mut sum: u64 = units.iter().sum();
    while sum > target {
        // only reachable through float noise; trim the smallest fractions
        let i = *order
            .iter()
            .rev()
            .find(|&&i| units[i] > 0)
            .expect("positive sum has a positive entry");
        units[i] -= 1;
        sum -= 1;
    }
    let mut progressed = true;
    while sum < target && progressed {
        progressed = false;
        for &i in &order {
            if sum == target {
                break;
            }
            if units[i] < max_units[i] {
                units[i] += 1;
                sum += 1;
                progressed = true;
            }
        }
    }
    units
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    pub upstream: PeerId,
    /// Index into the overlay's link list.
    pub link: usize,
    pub curve: CostCurve,
    pub max_units: u64,
    pub price: Price,
    pub requested: Bandwidth,
    pub granted: Bandwidth,
    /// Under-served at the reference price; the request is frozen and the
    /// bidder counts only what it is granted here.
    pub capped: bool,
}

impl LinkState {
    fn offer(&self) -> Offer {
        Offer::new(self.price.as_f64(), self.curve)
            .with_limit(self.max_units as f64 / UNITS_PER_KBPS as f64)
    }
}

/// One downstream negotiating one layer across its upstream links.
#[derive(Debug, Clone, PartialEq)]
pub struct BidderState {
    pub peer: PeerId,
    pub layer: usize,
    pub demand: Bandwidth,
    pub reference_price: Price,
    pub budget: Payment,
    pub links: Vec<LinkState>,
    /// Capped-link grants the current open requests were planned around.
    capped_basis: Bandwidth,
}

impl BidderState {
    /// `links` are `(upstream, overlay link index, headroom)`; the headroom is
    /// the link capacity left for this layer. Links with no usable headroom
    /// are dropped.
    pub fn new(
        peer: PeerId,
        layer: usize,
        demand: Bandwidth,
        reference_price: Price,
        links: impl IntoIterator<Item = (PeerId, usize, Bandwidth)>,
    ) -> Self {
        let links = links
            .into_iter()
            .filter(|(_, _, headroom)| headroom.units() > 1)
            .map(|(upstream, link, headroom)| {
                let curve = CostCurve::utilization(headroom.kbps()).expect("positive headroom");
                let ceiling_units = (curve.ceiling() * UNITS_PER_KBPS as f64).floor() as u64;
                LinkState {
                    upstream,
                    link,
                    curve,
                    max_units: ceiling_units.min(headroom.units() - 1),
                    price: Price::ONE,
                    requested: Bandwidth::ZERO,
                    granted: Bandwidth::ZERO,
                    capped: false,
                }
            })
            .collect();
        BidderState {
            peer,
            layer,
            demand,
            reference_price,
            budget: layer_budget(reference_price, demand),
            links,
            capped_basis: Bandwidth::ZERO,
        }
    }

    /// Unit price 1 everywhere, demand water-filled over all links.
    pub fn initial_bids(&mut self) -> Vec<Bid> {
        for l in &mut self.links {
            l.price = Price::ONE;
            l.requested = Bandwidth::ZERO;
            l.granted = Bandwidth::ZERO;
            l.capped = false;
        }
        self.capped_basis = Bandwidth::ZERO;
        self.plan();
        self.bids()
    }

    /// Water-fills `amount` over the links in `over`, rewriting their requests.
    fn fill(&mut self, amount: Bandwidth, over: &[usize]) {
        let offers: Vec<Offer> = over.iter().map(|&i| self.links[i].offer()).collect();
        let maxima: Vec<u64> = over.iter().map(|&i| self.links[i].max_units).collect();
        let fill = water_fill(amount.kbps(), &offers);
        let target = amount.units().min(maxima.iter().sum());
        for (&i, u) in over.iter().zip(quantize(&fill.quantities, &maxima, target)) {
            self.links[i].requested = Bandwidth::from_units(u);
        }
    }

    fn plan(&mut self) {
        let open: Vec<usize> = (0..self.links.len()).collect();
        self.fill(self.demand, &open);
    }

    /// Replans the whole demand at fixed per-link prices (one per link, in
    /// link order, each clamped to `1..=reference_price`) and returns the
    /// resulting bids. Grants are cleared.
    pub fn bids_at(&mut self, prices: &[Price]) -> Vec<Bid> {
        for (l, &p) in self.links.iter_mut().zip(prices) {
            l.price = p.min(self.reference_price).max(Price::ONE);
            l.granted = Bandwidth::ZERO;
            l.capped = false;
        }
        self.capped_basis = Bandwidth::ZERO;
        self.plan();
        self.bids()
    }

    /// Records grants without revising; returns the realized cost they imply.
    pub fn settle(&mut self, grants: &[Allocation]) -> f64 {
        for l in &mut self.links {
            l.granted = grants
                .iter()
                .filter(|g| g.downstream == self.peer && g.layer == self.layer && g.upstream == l.upstream)
                .map(|g| g.granted)
                .sum();
        }
        self.realized_cost()
    }

    pub fn bids(&self) -> Vec<Bid> {
        self.links
            .iter()
            .filter(|l| !l.requested.is_zero())
            .map(|l| Bid {
                downstream: self.peer,
                upstream: l.upstream,
                layer: self.layer,
                quantity: l.requested,
                unit_price: l.price,
            })
            .collect()
    }

    /// Applies this round's grants. Fully served links keep their bids.
    /// Every under-served link below the reference price has its price
    /// raised one unit, and the demand not held by the other links is
    /// water-filled over these escalated links. An under-served link already
    /// at the reference price is capped: its request is frozen and only its
    /// grant counts, with the shortfall water-filled over the open links.
    /// Returns [`Revision::Done`] when the bids come out unchanged.
    pub fn revise_bids(&mut self, grants: &[Allocation]) -> Result<Revision, AuctionError> {
        let before = self.bids();
        let mut got: BTreeMap<PeerId, Bandwidth> = BTreeMap::new();
        for g in grants.iter().filter(|g| g.downstream == self.peer && g.layer == self.layer) {
            *got.entry(g.upstream).or_default() += g.granted;
        }
        for l in &mut self.links {
            let g = got.get(&l.upstream).copied().unwrap_or_default();
            if g > l.requested {
                return Err(AuctionError::OverGrant {
                    upstream: l.upstream,
                    downstream: self.peer,
                    granted: g.units(),
                    requested: l.requested.units(),
                });
            }
            l.granted = g;
        }
        let mut escalated = Vec::new();
        let mut newly_capped = false;
        for i in 0..self.links.len() {
            let l = &self.links[i];
            if l.capped || l.granted >= l.requested {
                continue;
            }
            if l.price < self.reference_price {
                self.links[i].price = l.price.escalate(self.reference_price);
                escalated.push(i);
            } else {
                let frozen: Bandwidth = self
                    .links
                    .iter()
                    .enumerate()
                    .filter(|&(j, o)| j != i && o.capped)
                    .map(|(_, o)| o.requested)
                    .sum();
                let l = &mut self.links[i];
                l.capped = true;
                l.requested = l.requested.min(self.demand.saturating_sub(frozen));
                newly_capped = true;
            }
        }
        let capped_kept: Bandwidth = self.links.iter().filter(|l| l.capped).map(|l| l.granted).sum();
        if escalated.is_empty() && !newly_capped && capped_kept == self.capped_basis {
            return Ok(Revision::Done);
        }
        self.capped_basis = capped_kept;
        let residual = self.demand.saturating_sub(capped_kept);
        let satisfied: Vec<usize> = (0..self.links.len())
            .filter(|&i| !self.links[i].capped && !escalated.contains(&i))
            .collect();
        let held: Bandwidth = satisfied.iter().map(|&i| self.links[i].requested).sum();
        if escalated.is_empty() || held > residual {
            // shortfall on links that cannot be bid up moves to the others
            let open: Vec<usize> = (0..self.links.len()).filter(|&i| !self.links[i].capped).collect();
            self.fill(residual, &open);
        } else {
            self.fill(residual - held, &escalated);
        }
        let after = self.bids();
        Ok(if after == before {
            Revision::Done
        } else {
            Revision::Rebid(after)
        })
    }

    pub fn granted_total(&self) -> Bandwidth {
        self.links.iter().map(|l| l.granted).sum()
    }

    pub fn residual(&self) -> Bandwidth {
        self.demand.saturating_sub(self.granted_total())
    }

    pub fn payment(&self) -> Payment {
        self.links.iter().map(|l| l.granted.cost_at(l.price)).sum()
    }

    /// Realized `Σ price·granted + E(granted)` over this layer's links.
    pub fn realized_cost(&self) -> f64 {
        self.links
            .iter()
            .map(|l| l.offer().total_cost(l.granted.kbps()))
            .sum()
    }

    /// Overwrites the request on one link; used when an outside constraint
    /// trims what the water-fill asked for.
    pub fn set_request(&mut self, link: usize, units: u64) {
        if let Some(l) = self.links.iter_mut().find(|l| l.link == link) {
            l.requested = Bandwidth::from_units(units);
        }
    }
}

impl Participant for BidderState {
    fn peer(&self) -> PeerId {
        self.peer
    }

    fn bids(&self) -> Vec<Bid> {
        BidderState::bids(self)
    }

    fn revise(&mut self, grants: &[Allocation]) -> Result<Revision, AuctionError> {
        self.revise_bids(grants)
    }
}
