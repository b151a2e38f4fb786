//! Evaluation quantities computed from a finished scenario.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::Mode;
use crate::cost::utilization_cost;
use crate::overlay::PeerId;
use crate::simulation::{convergence_stats, ConvergenceStats, ScenarioResult};
use crate::units::Bandwidth;

fn layer_totals(result: &ScenarioResult) -> BTreeMap<(PeerId, usize), Bandwidth> {
    let mut m = BTreeMap::new();
    for a in &result.grants {
        *m.entry((a.downstream, a.layer)).or_default() += a.granted;
    }
    m
}

/// Mean over subscribers of layer `layer` of the fraction of its rate they
/// were granted; `None` when nobody subscribes to it.
pub fn delivery_ratio(result: &ScenarioResult, layer: usize) -> Option<f64> {
    if layer >= result.overlay.layer_spec.count {
        return None;
    }
    let rate = result.overlay.layer_spec.rate(layer);
    let totals = layer_totals(result);
    let subs: Vec<PeerId> = result
        .overlay
        .downstreams()
        .iter()
        .filter(|d| d.subscribed_level >= layer)
        .map(|d| d.id)
        .collect();
    if subs.is_empty() {
        return None;
    }
    let sum: f64 = subs
        .iter()
        .map(|id| {
            let g = totals.get(&(*id, layer)).copied().unwrap_or_default();
            (g.kbps() / rate.kbps()).min(1.0)
        })
        .sum();
    Some(sum / subs.len() as f64)
}

/// Share of granted bandwidth spent on layers that cannot be decoded
/// because some lower layer was not delivered at full rate.
pub fn useless_chunk_ratio(result: &ScenarioResult) -> f64 {
    let totals = layer_totals(result);
    let spec = &result.overlay.layer_spec;
    let mut all = 0u64;
    let mut useless = 0u64;
    for d in result.overlay.downstreams() {
        let mut broken = false;
        for k in 0..spec.count {
            let g = totals.get(&(d.id, k)).copied().unwrap_or_default();
            all += g.units();
            if broken {
                useless += g.units();
            }
            if g < spec.rate(k) {
                broken = true;
            }
        }
    }
    if all == 0 {
        0.0
    } else {
        useless as f64 / all as f64
    }
}

/// Per-peer streaming cost: the utilization cost of each link's aggregate
/// grant against the link's original capacity, summed over the peer's links.
pub fn peer_costs(result: &ScenarioResult) -> BTreeMap<PeerId, f64> {
    let overlay = &result.overlay;
    let mut per_link: BTreeMap<(PeerId, PeerId), Bandwidth> = BTreeMap::new();
    for a in &result.grants {
        *per_link.entry((a.downstream, a.upstream)).or_default() += a.granted;
    }
    let mut costs: BTreeMap<PeerId, f64> = overlay
        .downstreams()
        .iter()
        .map(|d| (d.id, 0.0))
        .collect();
    for l in &overlay.links {
        let g = per_link
            .get(&(l.downstream, l.upstream))
            .copied()
            .unwrap_or_default();
        if g.is_zero() {
            continue;
        }
        let c = utilization_cost(l.available.kbps(), g.kbps())
            .expect("conserved grants stay below link capacity");
        *costs.entry(l.downstream).or_default() += c;
    }
    costs
}

/// Mean per-peer cost over peers of class `class_id`, or over all peers;
/// `None` for an empty selection.
pub fn avg_streaming_cost(result: &ScenarioResult, class_id: Option<u8>) -> Option<f64> {
    let costs = peer_costs(result);
    let selected: Vec<f64> = result
        .overlay
        .downstreams()
        .iter()
        .filter(|d| class_id.is_none_or(|c| d.class_id == c))
        .map(|d| costs[&d.id])
        .collect();
    if selected.is_empty() {
        None
    } else {
        Some(selected.iter().sum::<f64>() / selected.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: u8,
    pub peers: usize,
    pub avg_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Mode,
    pub seed: u64,
    pub delivery_ratio: Vec<Option<f64>>,
    pub useless_chunk_ratio: f64,
    pub avg_cost: Option<f64>,
    pub classes: Vec<ClassMetrics>,
    pub convergence: ConvergenceStats,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Cost of the `i`-th class in table order (Q1 first).
    pub fn class_cost(&self, i: usize) -> Option<f64> {
        self.classes.get(i).and_then(|c| c.avg_cost)
    }
}

pub fn build_report(result: &ScenarioResult) -> MetricsReport {
    let overlay = &result.overlay;
    let infos = overlay.downstreams();
    let classes = overlay
        .classes
        .iter()
        .map(|c| ClassMetrics {
            class_id: c.id,
            peers: infos.iter().filter(|d| d.class_id == c.id).count(),
            avg_cost: avg_streaming_cost(result, Some(c.id)),
        })
        .collect();
    MetricsReport {
        mode: result.mode,
        seed: overlay.seed,
        delivery_ratio: (0..overlay.layer_spec.count)
            .map(|k| delivery_ratio(result, k))
            .collect(),
        useless_chunk_ratio: useless_chunk_ratio(result),
        avg_cost: avg_streaming_cost(result, None),
        classes,
        convergence: convergence_stats(result),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::Allocation;
    use crate::overlay::{LayerSpec, Link, Overlay, Peer, PriorityClass};
    use crate::simulation::{run_scenario, SimulationParams};
    use crate::trace::NoTrace;
    use crate::units::Price;

    fn kbps(k: u64) -> Bandwidth {
        Bandwidth::from_whole_kbps(k)
    }

    fn overlay(downstreams: &[(u8, usize)], x: u64) -> Overlay {
        let mut peers = vec![Peer::Upstream {
            id: PeerId(0),
            upload: kbps(5000),
        }];
        let mut links = Vec::new();
        for (i, &(class_id, level)) in downstreams.iter().enumerate() {
            let id = PeerId(i as u32 + 1);
            peers.push(Peer::Downstream {
                id,
                download: kbps(700),
                class_id,
                subscribed_level: level,
            });
            links.push(Link {
                downstream: id,
                upstream: PeerId(0),
                available: kbps(x),
                allocated: Bandwidth::ZERO,
            });
        }
        Overlay {
            seed: 3,
            layer_spec: LayerSpec::new(vec![kbps(200), kbps(100)]),
            classes: vec![
                PriorityClass {
                    id: 1,
                    reference_price: Price::new(2).unwrap(),
                    population_share: 0.5,
                },
                PriorityClass {
                    id: 2,
                    reference_price: Price::ONE,
                    population_share: 0.5,
                },
            ],
            peers,
            links,
        }
    }

    fn result(o: Overlay, grants: &[(u32, usize, u64)]) -> ScenarioResult {
        ScenarioResult {
            mode: Mode::Proposed,
            round_limit: 4,
            overlay: o,
            grants: grants
                .iter()
                .map(|&(d, layer, units)| Allocation {
                    downstream: PeerId(d),
                    upstream: PeerId(0),
                    layer,
                    granted: Bandwidth::from_units(units),
                    unit_price: Price::ONE,
                })
                .collect(),
            outcomes: vec![],
            phases: vec![],
        }
    }

    #[test]
    fn delivery_ratio_examples() {
        let full = result(overlay(&[(1, 1)], 1000), &[(1, 0, 2000), (1, 1, 1000)]);
        assert_eq!(delivery_ratio(&full, 0), Some(1.0));
        assert_eq!(delivery_ratio(&full, 1), Some(1.0));
        let half = result(overlay(&[(1, 1)], 1000), &[(1, 0, 2000), (1, 1, 500)]);
        assert_eq!(delivery_ratio(&half, 1), Some(0.5));
        let none = result(overlay(&[(1, 1)], 1000), &[]);
        assert_eq!(delivery_ratio(&none, 0), Some(0.0));
        let base_only = result(overlay(&[(1, 0)], 1000), &[]);
        assert_eq!(delivery_ratio(&base_only, 1), None);
    }

    #[test]
    fn useless_examples() {
        let ok = result(overlay(&[(1, 1)], 1000), &[(1, 0, 2000), (1, 1, 1000)]);
        assert_eq!(useless_chunk_ratio(&ok), 0.0);
        let bad = result(overlay(&[(1, 1)], 1000), &[(1, 0, 1500), (1, 1, 1000)]);
        assert!((useless_chunk_ratio(&bad) - 0.4).abs() < 1e-12);
        let empty = result(overlay(&[(1, 1)], 1000), &[]);
        assert_eq!(useless_chunk_ratio(&empty), 0.0);
    }

    #[test]
    fn cost_examples() {
        let one = result(overlay(&[(1, 1)], 1000), &[(1, 0, 2000), (1, 1, 3000)]);
        assert!((avg_streaming_cost(&one, None).unwrap() - 1.0).abs() < 1e-12);
        let zero = result(overlay(&[(1, 1)], 1000), &[]);
        assert_eq!(avg_streaming_cost(&zero, None), Some(0.0));
        // 500/500 = 1 and 750/250 = 3
        let two = result(
            overlay(&[(1, 1), (2, 1)], 1000),
            &[(1, 0, 5000), (2, 0, 7500)],
        );
        assert!((avg_streaming_cost(&two, None).unwrap() - 2.0).abs() < 1e-12);
        assert!((avg_streaming_cost(&two, Some(1)).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(avg_streaming_cost(&one, Some(2)), None);
    }

    #[test]
    fn class_means_combine_to_overall() {
        let two = result(
            overlay(&[(1, 1), (2, 1), (2, 0)], 1000),
            &[(1, 0, 5000), (2, 0, 7500), (3, 0, 100)],
        );
        let r = build_report(&two);
        let combined: f64 = r
            .classes
            .iter()
            .map(|c| c.avg_cost.unwrap_or(0.0) * c.peers as f64)
            .sum::<f64>()
            / 3.0;
        assert!((combined - r.avg_cost.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn abundant_report() {
        let r = run_scenario(
            &overlay(&[(1, 1), (2, 1)], 10_000),
            &SimulationParams::default(),
            &mut NoTrace,
        )
        .unwrap();
        let rep = build_report(&r);
        assert!(rep.delivery_ratio.iter().all(|d| *d == Some(1.0)));
        assert_eq!(rep.useless_chunk_ratio, 0.0);
        assert_eq!(rep, build_report(&r));
    }

    #[test]
    fn empty_report() {
        let r = run_scenario(&overlay(&[], 1000), &SimulationParams::default(), &mut NoTrace).unwrap();
        let rep = build_report(&r);
        assert!(rep.delivery_ratio.iter().all(Option::is_none));
        assert_eq!(rep.avg_cost, None);
        assert_eq!(rep.useless_chunk_ratio, 0.0);
    }
}
