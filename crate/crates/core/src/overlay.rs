//! Peers, links, layers and priority classes, plus seeded topology
//! generation.
//!
//! An [`Overlay`] is a bipartite graph: downstream peers on one side,
//! upstream peers on the other, and capacitated links between them. It is
//! immutable once generated and serializes to JSON so a run can be replayed
//! from a saved topology.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::ConfigError;
use crate::units::{Bandwidth, Price};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeerId(pub u32);

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub count: usize,
    /// Per-layer rate; index 0 is the base layer.
    pub rates: Vec<Bandwidth>,
}

impl LayerSpec {
    pub fn new(rates: Vec<Bandwidth>) -> Self {
        LayerSpec {
            count: rates.len(),
            rates,
        }
    }

    /// Index of the top layer.
    pub fn top(&self) -> usize {
        self.rates.len().saturating_sub(1)
    }

    pub fn rate(&self, layer: usize) -> Bandwidth {
        self.rates[layer]
    }

    /// Total rate of layers `0..=level`.
    pub fn cumulative(&self, level: usize) -> Bandwidth {
        self.rates[..=level].iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityClass {
    /// 1 is the highest priority.
    pub id: u8,
    pub reference_price: Price,
    pub population_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Peer {
    Upstream {
        id: PeerId,
        upload: Bandwidth,
    },
    Downstream {
        id: PeerId,
        download: Bandwidth,
        class_id: u8,
        subscribed_level: usize,
    },
}

impl Peer {
    pub fn id(&self) -> PeerId {
        match self {
            Peer::Upstream { id, .. } | Peer::Downstream { id, .. } => *id,
        }
    }

    pub fn is_upstream(&self) -> bool {
        matches!(self, Peer::Upstream { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub downstream: PeerId,
    pub upstream: PeerId,
    /// Available bandwidth of the path, the pole of the streaming cost.
    pub available: Bandwidth,
    /// Bandwidth already granted on this link by completed layers.
    #[serde(default)]
    pub allocated: Bandwidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub seed: u64,
    pub layer_spec: LayerSpec,
    pub classes: Vec<PriorityClass>,
    pub peers: Vec<Peer>,
    pub links: Vec<Link>,
}

/// Downstream view used by the simulation: class, level and link indices.
#[derive(Debug, Clone)]
pub struct DownstreamInfo {
    pub id: PeerId,
    pub class_id: u8,
    pub reference_price: Price,
    pub subscribed_level: usize,
    pub links: Vec<usize>,
}

impl Overlay {
    pub fn upstreams(&self) -> impl Iterator<Item = (PeerId, Bandwidth)> + '_ {
        self.peers.iter().filter_map(|p| match p {
            Peer::Upstream { id, upload } => Some((*id, *upload)),
            _ => None,
        })
    }

    pub fn downstream_count(&self) -> usize {
        self.peers.iter().filter(|p| !p.is_upstream()).count()
    }

    pub fn upstream_count(&self) -> usize {
        self.peers.iter().filter(|p| p.is_upstream()).count()
    }

    pub fn class(&self, id: u8) -> Option<&PriorityClass> {
        self.classes.iter().find(|c| c.id == id)
    }

    pub fn max_reference_price(&self) -> Price {
        self.classes
            .iter()
            .map(|c| c.reference_price)
            .max()
            .unwrap_or(Price::ONE)
    }

    /// Downstream peers in id order with their link indices. Peers whose
    /// class is unknown get the lowest reference price.
    pub fn downstreams(&self) -> Vec<DownstreamInfo> {
        let mut by_peer: BTreeMap<PeerId, Vec<usize>> = BTreeMap::new();
        for (i, l) in self.links.iter().enumerate() {
            by_peer.entry(l.downstream).or_default().push(i);
        }
        let mut out: Vec<DownstreamInfo> = self
            .peers
            .iter()
            .filter_map(|p| match p {
                Peer::Downstream {
                    id,
                    class_id,
                    subscribed_level,
                    ..
                } => Some(DownstreamInfo {
                    id: *id,
                    class_id: *class_id,
                    reference_price: self
                        .class(*class_id)
                        .map(|c| c.reference_price)
                        .unwrap_or(Price::ONE),
                    subscribed_level: *subscribed_level,
                    links: by_peer.remove(id).unwrap_or_default(),
                }),
                _ => None,
            })
            .collect();
        out.sort_by_key(|d| d.id);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("overlay serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Largest `k` with `rates[0] + … + rates[k] <= download`; 0 when even the
/// base layer does not fit.
pub fn subscribe_quality(download: Bandwidth, layers: &LayerSpec) -> usize {
    let mut total = Bandwidth::ZERO;
    let mut level = 0;
    for (k, &rate) in layers.rates.iter().enumerate() {
        total += rate;
        if total > download {
            break;
        }
        level = k;
    }
    level
}

/// Independent random streams derived from one scenario seed. Each draw
/// family gets its own stream so changing one parameter never shifts the
/// draws of another.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Stream {
    Upload = 1,
    Download = 2,
    Topology = 3,
    LinkCapacity = 4,
    Classes = 5,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

/// Per-class head counts by largest remainder, so each class is within one
/// peer of `share * n`.
fn class_counts(shares: &[f64], n: usize) -> Vec<usize> {
    let exact: Vec<f64> = shares.iter().map(|s| s * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

pub fn generate_overlay(config: &ScenarioConfig, seed: u64) -> Result<Overlay, ConfigError> {
    if config.degree > config.n_upstream {
        return Err(ConfigError::invalid(
            "degree",
            format!(
                "connectivity degree {} exceeds the {} upstream peers",
                config.degree, config.n_upstream
            ),
        ));
    }
    let layer_spec = LayerSpec::new(config.layer_bandwidths());
    let classes: Vec<PriorityClass> = config
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| PriorityClass {
            id: (i + 1) as u8,
            reference_price: Price::new(c.reference_price).unwrap_or(Price::ONE),
            population_share: c.share,
        })
        .collect();

    let m = config.n_upstream;
    let n = config.n_downstream;

    let mut rng = stream(seed, Stream::Upload);
    let uploads: Vec<Bandwidth> = (0..m)
        .map(|_| config.upload_range.sample(rng.gen::<f64>()))
        .collect();

    let mut rng = stream(seed, Stream::Download);
    let downloads: Vec<Bandwidth> = (0..n)
        .map(|_| config.download_range.sample(rng.gen::<f64>()))
        .collect();

    let shares: Vec<f64> = config.classes.iter().map(|c| c.share).collect();
    let mut class_of: Vec<u8> = class_counts(&shares, n)
        .into_iter()
        .enumerate()
        .flat_map(|(i, c)| std::iter::repeat_n((i + 1) as u8, c))
        .collect();
    class_of.shuffle(&mut stream(seed, Stream::Classes));

    let mut peers = Vec::with_capacity(m + n);
    for (j, &upload) in uploads.iter().enumerate() {
        peers.push(Peer::Upstream {
            id: PeerId(j as u32),
            upload,
        });
    }
    for (i, &download) in downloads.iter().enumerate() {
        peers.push(Peer::Downstream {
            id: PeerId((m + i) as u32),
            download,
            class_id: class_of[i],
            subscribed_level: subscribe_quality(download, &layer_spec),
        });
    }

    let mut topo = stream(seed, Stream::Topology);
    let mut caps = stream(seed, Stream::LinkCapacity);
    let mut links = Vec::with_capacity(n * config.degree);
    for (i, &download) in downloads.iter().enumerate() {
        let mut chosen = rand::seq::index::sample(&mut topo, m, config.degree).into_vec();
        chosen.sort_unstable();
        for j in chosen {
            let drawn = config.link_range.sample(caps.gen::<f64>());
            let available = drawn.min(uploads[j]).min(download);
            links.push(Link {
                downstream: PeerId((m + i) as u32),
                upstream: PeerId(j as u32),
                available,
                allocated: Bandwidth::ZERO,
            });
        }
    }

    Ok(Overlay {
        seed,
        layer_spec,
        classes,
        peers,
        links,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    LayerCount { count: usize, rates: usize },
    LayerRate { layer: usize },
    ClassPrices { class_id: u8 },
    ClassShares { sum: f64 },
    DuplicatePeer { id: PeerId },
    Capacity { id: PeerId },
    UnknownClass { id: PeerId, class_id: u8 },
    Level { id: PeerId, level: usize, top: usize },
    Isolated { id: PeerId },
    Endpoint { link: usize, reason: &'static str },
    DuplicateLink { link: usize },
    LinkCapacity { link: usize },
    LinkAllocation { link: usize, allocated: Bandwidth, available: Bandwidth },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LayerCount { count, rates } => {
                write!(f, "layer count {count} does not match {rates} rates")
            }
            Violation::LayerRate { layer } => write!(f, "layer {layer} has a zero rate"),
            Violation::ClassPrices { class_id } => write!(
                f,
                "class {class_id} reference price is not below the previous class"
            ),
            Violation::ClassShares { sum } => write!(f, "class shares sum to {sum}, not 1"),
            Violation::DuplicatePeer { id } => write!(f, "peer {id} appears twice"),
            Violation::Capacity { id } => write!(f, "peer {id} has zero capacity"),
            Violation::UnknownClass { id, class_id } => {
                write!(f, "peer {id} references unknown class {class_id}")
            }
            Violation::Level { id, level, top } => {
                write!(f, "peer {id} subscribes to level {level} beyond top layer {top}")
            }
            Violation::Isolated { id } => write!(f, "downstream peer {id} has no upstream link"),
            Violation::Endpoint { link, reason } => write!(f, "link {link}: {reason}"),
            Violation::DuplicateLink { link } => write!(f, "link {link} duplicates an earlier link"),
            Violation::LinkCapacity { link } => write!(f, "link {link} has zero available bandwidth"),
            Violation::LinkAllocation {
                link,
                allocated,
                available,
            } => write!(
                f,
                "link {link} has {allocated} allocated, not below its available {available}"
            ),
        }
    }
}

/// Lists every broken invariant; an empty list means the overlay is sound.
pub fn validate_overlay(overlay: &Overlay) -> Vec<Violation> {
    let mut out = Vec::new();
    let spec = &overlay.layer_spec;
    if spec.count != spec.rates.len() || spec.rates.is_empty() {
        out.push(Violation::LayerCount {
            count: spec.count,
            rates: spec.rates.len(),
        });
    }
    for (k, r) in spec.rates.iter().enumerate() {
        if r.is_zero() {
            out.push(Violation::LayerRate { layer: k });
        }
    }
    let mut classes: Vec<&PriorityClass> = overlay.classes.iter().collect();
    classes.sort_by_key(|c| c.id);
    for w in classes.windows(2) {
        if w[1].reference_price >= w[0].reference_price {
            out.push(Violation::ClassPrices { class_id: w[1].id });
        }
    }
    let sum: f64 = classes.iter().map(|c| c.population_share).sum();
    if !classes.is_empty() && (sum - 1.0).abs() > 1e-9 {
        out.push(Violation::ClassShares { sum });
    }

    let mut kinds: BTreeMap<PeerId, bool> = BTreeMap::new();
    for p in &overlay.peers {
        if kinds.insert(p.id(), p.is_upstream()).is_some() {
            out.push(Violation::DuplicatePeer { id: p.id() });
        }
        match p {
            Peer::Upstream { id, upload } => {
                if upload.is_zero() {
                    out.push(Violation::Capacity { id: *id });
                }
            }
            Peer::Downstream {
                id,
                download,
                class_id,
                subscribed_level,
            } => {
                if download.is_zero() {
                    out.push(Violation::Capacity { id: *id });
                }
                if overlay.class(*class_id).is_none() {
                    out.push(Violation::UnknownClass {
                        id: *id,
                        class_id: *class_id,
                    });
                }
                if *subscribed_level > spec.top() {
                    out.push(Violation::Level {
                        id: *id,
                        level: *subscribed_level,
                        top: spec.top(),
                    });
                }
            }
        }
    }

    let mut connected = BTreeSet::new();
    let mut seen = BTreeSet::new();
    for (i, l) in overlay.links.iter().enumerate() {
        match (kinds.get(&l.downstream), kinds.get(&l.upstream)) {
            (Some(false), Some(true)) => {
                connected.insert(l.downstream);
            }
            (None, _) | (_, None) => out.push(Violation::Endpoint {
                link: i,
                reason: "endpoint is not a known peer",
            }),
            _ => out.push(Violation::Endpoint {
                link: i,
                reason: "link must join a downstream peer to an upstream peer",
            }),
        }
        if !seen.insert((l.downstream, l.upstream)) {
            out.push(Violation::DuplicateLink { link: i });
        }
        if l.available.is_zero() {
            out.push(Violation::LinkCapacity { link: i });
        } else if l.allocated >= l.available {
            out.push(Violation::LinkAllocation {
                link: i,
                allocated: l.allocated,
                available: l.available,
            });
        }
    }
    for p in &overlay.peers {
        if let Peer::Downstream { id, .. } = p {
            if !connected.contains(id) {
                out.push(Violation::Isolated { id: *id });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_layers() -> LayerSpec {
        LayerSpec::new(
            [200, 100, 100, 100, 100, 100]
                .iter()
                .map(|&k| Bandwidth::from_whole_kbps(k))
                .collect(),
        )
    }

    fn small_config() -> ScenarioConfig {
        ScenarioConfig {
            n_upstream: 2,
            n_downstream: 3,
            degree: 2,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn subscribe_levels() {
        let l = default_layers();
        assert_eq!(subscribe_quality(Bandwidth::from_whole_kbps(700), &l), 5);
        assert_eq!(subscribe_quality(Bandwidth::from_whole_kbps(250), &l), 0);
        assert_eq!(subscribe_quality(Bandwidth::from_whole_kbps(150), &l), 0);
        assert_eq!(subscribe_quality(Bandwidth::from_whole_kbps(399), &l), 1);
        assert_eq!(subscribe_quality(Bandwidth::from_whole_kbps(5000), &l), 5);
    }

    #[test]
    fn small_overlay_is_complete_bipartite() {
        let o = generate_overlay(&small_config(), 7).unwrap();
        assert_eq!(o.links.len(), 6);
        assert_eq!(o.upstream_count(), 2);
        assert_eq!(o.downstream_count(), 3);
        assert!(validate_overlay(&o).is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_overlay(&small_config(), 7).unwrap().to_json();
        let b = generate_overlay(&small_config(), 7).unwrap().to_json();
        assert_eq!(a, b);
        let c = generate_overlay(&small_config(), 8).unwrap().to_json();
        assert_ne!(a, c);
    }

    #[test]
    fn uploads_within_range() {
        let cfg = ScenarioConfig {
            n_downstream: 500,
            ..ScenarioConfig::default()
        };
        let o = generate_overlay(&cfg, 3).unwrap();
        for (_, u) in o.upstreams() {
            assert!(u >= Bandwidth::from_whole_kbps(256) && u <= Bandwidth::from_whole_kbps(2048));
        }
    }

    #[test]
    fn degree_above_upstreams_is_config_error() {
        let cfg = ScenarioConfig {
            n_upstream: 2,
            degree: 3,
            ..ScenarioConfig::default()
        };
        assert!(generate_overlay(&cfg, 1).is_err());
    }

    #[test]
    fn sweep_of_upload_leaves_topology_alone() {
        let cfg = ScenarioConfig::default();
        let low = cfg
            .with_sweep_value(crate::config::SweepKey::UploadMid, 600.0)
            .unwrap();
        let a = generate_overlay(&cfg, 11).unwrap();
        let b = generate_overlay(&low, 11).unwrap();
        let ends = |o: &Overlay| -> Vec<(PeerId, PeerId)> {
            o.links.iter().map(|l| (l.downstream, l.upstream)).collect()
        };
        assert_eq!(ends(&a), ends(&b));
        let classes = |o: &Overlay| -> Vec<u8> {
            o.peers
                .iter()
                .filter_map(|p| match p {
                    Peer::Downstream { class_id, .. } => Some(*class_id),
                    _ => None,
                })
                .collect()
        };
        assert_eq!(classes(&a), classes(&b));
    }

    #[test]
    fn saturated_link_is_reported() {
        let mut o = generate_overlay(&small_config(), 7).unwrap();
        o.links[2].allocated = o.links[2].available;
        let v = validate_overlay(&o);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::LinkAllocation { link: 2, .. }));
        assert!(v[0].to_string().contains("link 2"));
    }

    #[test]
    fn isolated_downstream_is_reported() {
        let mut o = generate_overlay(&small_config(), 7).unwrap();
        let victim = o.links[0].downstream;
        o.links.retain(|l| l.downstream != victim);
        let v = validate_overlay(&o);
        assert_eq!(v, vec![Violation::Isolated { id: victim }]);
    }

    #[test]
    fn class_counts_within_one() {
        assert_eq!(class_counts(&[0.1, 0.3, 0.6], 500), vec![50, 150, 300]);
        let c = class_counts(&[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 10);
        assert_eq!(c.iter().sum::<usize>(), 10);
        assert!(c.iter().all(|&x| x == 3 || x == 4));
    }

    #[test]
    fn json_round_trip() {
        let o = generate_overlay(&small_config(), 5).unwrap();
        let back = Overlay::from_json(&o.to_json()).unwrap();
        assert_eq!(o, back);
    }
}
