use std::collections::BTreeMap;

use proptest::prelude::*;

use layercast::auction::{allocate_round, Bid};
use layercast::bidder::{water_fill, Offer};
use layercast::config::{KbpsRange, ScenarioConfig};
use layercast::cost::CostCurve;
use layercast::overlay::{generate_overlay, subscribe_quality, validate_overlay, LayerSpec};
use layercast::simulation::{conservation_violations, run_baseline, run_scenario, SimulationParams};
use layercast::trace::{MemoryTrace, NoTrace};
use layercast::units::{apportion, Bandwidth, Price};
use layercast::{Mode, PeerId};

fn bids() -> impl Strategy<Value = Vec<Bid>> {
    prop::collection::vec((1u32..6, 1u64..3000, 1u32..5), 0..8).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (d, q, p))| Bid {
                downstream: PeerId(d * 10 + i as u32),
                upstream: PeerId(0),
                layer: 0,
                quantity: Bandwidth::from_units(q),
                unit_price: Price::new(p).unwrap(),
            })
            .collect()
    })
}

fn small_config() -> impl Strategy<Value = (ScenarioConfig, u64)> {
    (2usize..8, 3usize..25, 1usize..4, 200.0f64..1500.0, any::<u64>()).prop_map(
        |(n_up, n_down, degree, upload_mid, seed)| {
            let cfg = ScenarioConfig {
                n_upstream: n_up,
                n_downstream: n_down,
                degree: degree.min(n_up),
                upload_range: KbpsRange(upload_mid * 0.5, upload_mid * 1.5),
                ..ScenarioConfig::default()
            };
            (cfg, seed)
        },
    )
}

proptest! {
    #[test]
    fn apportion_is_exact_and_proportional(total in 0u64..100_000, weights in prop::collection::vec(0u64..10_000, 1..8)) {
        let shares = apportion(total, &weights);
        let sum: u64 = weights.iter().sum();
        if sum == 0 {
            prop_assert!(shares.iter().all(|&s| s == 0));
        } else {
            prop_assert_eq!(shares.iter().sum::<u64>(), total);
            for (&s, &w) in shares.iter().zip(&weights) {
                let exact = total as f64 * w as f64 / sum as f64;
                prop_assert!((s as f64 - exact).abs() < 1.0);
            }
        }
    }

    #[test]
    fn allocation_conserves_and_respects_requests(remaining in 0u64..20_000, bids in bids()) {
        let grants = allocate_round(Bandwidth::from_units(remaining), &bids);
        prop_assert_eq!(grants.len(), bids.len());
        let total: u64 = grants.iter().map(|a| a.granted.units()).sum();
        let asked: u64 = bids.iter().map(|b| b.quantity.units()).sum();
        prop_assert_eq!(total, remaining.min(asked));
        for (a, b) in grants.iter().zip(&bids) {
            prop_assert!(a.granted <= b.quantity);
        }
        // a higher price is never cut while a lower one is served
        for a in &grants {
            for b in &grants {
                if a.unit_price > b.unit_price && !b.granted.is_zero() {
                    let bid = bids.iter().find(|x| x.downstream == a.downstream).unwrap();
                    prop_assert_eq!(a.granted, bid.quantity);
                }
            }
        }
    }

    #[test]
    fn allocation_ignores_bid_order(remaining in 0u64..20_000, bids in bids(), rot in 0usize..8) {
        let grants = allocate_round(Bandwidth::from_units(remaining), &bids);
        let mut shuffled = bids.clone();
        shuffled.reverse();
        if !shuffled.is_empty() {
            let r = rot % shuffled.len();
            shuffled.rotate_left(r);
        }
        let other = allocate_round(Bandwidth::from_units(remaining), &shuffled);
        let by_peer = |gs: &[layercast::auction::Allocation]| -> BTreeMap<PeerId, Bandwidth> {
            gs.iter().map(|a| (a.downstream, a.granted)).collect()
        };
        prop_assert_eq!(by_peer(&grants), by_peer(&other));
    }

    #[test]
    fn water_fill_meets_kkt(
        links in prop::collection::vec((300.0f64..2000.0, 1u32..5), 1..5),
        frac in 0.0f64..0.5,
    ) {
        let offers: Vec<Offer> = links
            .iter()
            .map(|&(x, p)| Offer::new(p as f64, CostCurve::utilization(x).unwrap()))
            .collect();
        let demand = frac * links.iter().map(|l| l.0).sum::<f64>();
        let wf = water_fill(demand, &offers);
        prop_assert!((wf.quantities.iter().sum::<f64>() - demand).abs() < 1e-6);
        prop_assert_eq!(wf.shortfall, 0.0);
        for (&(x, p), &b) in links.iter().zip(&wf.quantities) {
            prop_assert!(b >= 0.0 && b < x);
            let m = p as f64 + x / ((x - b) * (x - b));
            if b > 1e-9 {
                prop_assert!((m - wf.level).abs() < 1e-3);
            } else {
                prop_assert!(m >= wf.level - 1e-3);
            }
        }
    }

    #[test]
    fn marginal_inverts(x in 10.0f64..5000.0, t in 0.0f64..0.99, p in 1u32..5) {
        let c = CostCurve::utilization(x).unwrap();
        let b = t * c.ceiling();
        let level = p as f64 + c.marginal(b).unwrap();
        let back = c.inverse_marginal(p as f64, level);
        prop_assert!((back - b).abs() <= 1e-6 * x.max(1.0));
    }

    #[test]
    fn subscription_grows_with_download(a in 0u64..20_000, b in 0u64..20_000) {
        let spec = LayerSpec::new(
            [200u64, 100, 100, 100, 100, 100].iter().map(|&r| Bandwidth::from_whole_kbps(r)).collect(),
        );
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(
            subscribe_quality(Bandwidth::from_units(lo), &spec)
                <= subscribe_quality(Bandwidth::from_units(hi), &spec)
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generated_overlays_are_valid((cfg, seed) in small_config()) {
        prop_assume!(cfg.validate().is_ok());
        let o = generate_overlay(&cfg, seed).unwrap();
        prop_assert!(validate_overlay(&o).is_empty());
        prop_assert_eq!(o.downstream_count(), cfg.n_downstream);
        prop_assert_eq!(o.upstream_count(), cfg.n_upstream);
    }

    #[test]
    fn scenarios_conserve_in_both_modes((cfg, seed) in small_config()) {
        prop_assume!(cfg.validate().is_ok());
        let o = generate_overlay(&cfg, seed).unwrap();
        let params = SimulationParams::default();
        for r in [
            run_scenario(&o, &params, &mut NoTrace).unwrap(),
            run_baseline(&o, &params, &mut NoTrace).unwrap(),
        ] {
            prop_assert!(conservation_violations(&r).is_empty());
            for out in &r.outcomes {
                prop_assert!(out.payment <= out.budget);
                prop_assert!(out.granted <= out.demand);
            }
        }
    }

    #[test]
    fn bid_prices_never_fall((cfg, seed) in small_config()) {
        prop_assume!(cfg.validate().is_ok());
        let o = generate_overlay(&cfg, seed).unwrap();
        let mut trace = MemoryTrace::default();
        run_scenario(&o, &SimulationParams::default(), &mut trace).unwrap();
        let mut last: BTreeMap<(Option<usize>, PeerId, PeerId, usize), Price> = BTreeMap::new();
        let mut records = trace.0;
        records.sort_by_key(|r| (r.phase, r.round));
        for rec in &records {
            for b in &rec.bids {
                let key = (rec.phase, b.downstream, b.upstream, b.layer);
                if let Some(&p) = last.get(&key) {
                    prop_assert!(b.unit_price >= p);
                }
                last.insert(key, b.unit_price);
            }
        }
    }

    #[test]
    fn modes_coincide_under_abundance((cfg, seed) in small_config()) {
        let cfg = ScenarioConfig {
            degree: 1,
            upload_range: KbpsRange(100_000.0, 200_000.0),
            link_range: KbpsRange(50_000.0, 60_000.0),
            ..cfg
        };
        prop_assume!(cfg.validate().is_ok());
        let o = generate_overlay(&cfg, seed).unwrap();
        let params = SimulationParams::default();
        let a = layercast::run_mode(Mode::Proposed, &o, &params, &mut NoTrace).unwrap();
        let b = layercast::run_mode(Mode::Baseline, &o, &params, &mut NoTrace).unwrap();
        prop_assert_eq!(&a.grants, &b.grants);
        prop_assert!(a.grants.iter().all(|g| g.unit_price == Price::ONE));
    }
}
