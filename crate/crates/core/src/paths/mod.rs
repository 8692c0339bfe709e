//! Route enumeration over the expanded network.
//!
//! Path search runs on a derived graph in which every platform is split into
//! a departure half (reached by entry or transfer, left by boarding) and an
//! arrival half (reached by alighting, left by exit or transfer). Gate nodes
//! other than the trip's own origin and destination are blocked. Under these
//! rules every simple path is a valid trip: it enters once, boards after
//! every entry or transfer, and exits once.

mod yen;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Direction, ExpandedNetwork, LinkId, LinkKind, NodeId, NodeKind, OdPair};

pub use yen::{yen_k_shortest, Arc, SearchGraph, SearchPath};

/// Path costs are compared in integer micro-minutes so ties are exact.
pub const COST_SCALE: f64 = 1e6;

pub fn quantize(minutes: f64) -> u64 {
    (minutes * COST_SCALE).round() as u64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSearchConfig {
    pub k: usize,
    pub detour_factor: f64,
}

impl Default for PathSearchConfig {
    fn default() -> Self {
        PathSearchConfig {
            k: 3,
            detour_factor: 1.5,
        }
    }
}

/// A boarding at a platform in a train direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WaitEvent {
    pub platform: NodeId,
    pub direction: Direction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub path_id: usize,
    pub od: OdPair,
    pub links: Vec<LinkId>,
    pub nodes: Vec<NodeId>,
    pub wait_events: Vec<WaitEvent>,
    pub prior_cost_min: f64,
}

impl Path {
    pub fn transfer_count(&self, net: &ExpandedNetwork) -> usize {
        self.links
            .iter()
            .filter(|&&l| net.link(l).kind == LinkKind::Transfer)
            .count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageWarning {
    pub od: OdPair,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct PathSearch {
    pub paths: Vec<Path>,
    pub warning: Option<CoverageWarning>,
}

fn search_node(node: NodeId, arrival: bool) -> usize {
    2 * node + usize::from(arrival)
}

/// Reusable search structure for one network and one weight vector.
pub struct TransitSearch<'a> {
    net: &'a ExpandedNetwork,
    graph: SearchGraph,
    weights: Vec<f64>,
    base_blocked: Vec<bool>,
}

impl<'a> TransitSearch<'a> {
    pub fn new(net: &'a ExpandedNetwork, weights: &[f64]) -> Result<Self> {
        if weights.len() != net.links().len() {
            return Err(Error::InvalidWeights(format!(
                "{} weights for {} links",
                weights.len(),
                net.links().len()
            )));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::InvalidWeights(format!("link {i} has weight {w}")));
        }

        let n = 2 * net.nodes().len();
        let group: Vec<usize> = (0..n).map(|v| v / 2).collect();
        let mut base_blocked = vec![true; n];
        for node in net.nodes() {
            base_blocked[search_node(node.node_id, false)] = node.kind == NodeKind::GateMachine;
            if node.kind == NodeKind::Platform {
                base_blocked[search_node(node.node_id, true)] = false;
            }
        }

        let arcs = net.links().iter().map(|l| {
            let (from, to) = match l.kind {
                LinkKind::Entry => (search_node(l.tail, false), search_node(l.head, false)),
                LinkKind::Exit => (search_node(l.tail, true), search_node(l.head, false)),
                LinkKind::Board => (search_node(l.tail, false), search_node(l.head, false)),
                LinkKind::Alight => (search_node(l.tail, false), search_node(l.head, true)),
                LinkKind::Transfer => (search_node(l.tail, true), search_node(l.head, false)),
                LinkKind::Vehicle => (search_node(l.tail, false), search_node(l.head, false)),
            };
            (from, to, quantize(weights[l.link_id]), l.link_id)
        });
        let graph = SearchGraph::new(group, arcs.collect::<Vec<_>>());
        Ok(TransitSearch {
            net,
            graph,
            weights: weights.to_vec(),
            base_blocked,
        })
    }

    pub fn k_shortest(&self, od: OdPair, cfg: &PathSearchConfig) -> Result<PathSearch> {
        let net = self.net;
        let origin = net
            .resolve_station(od.origin)
            .ok_or(Error::UnknownStation(od.origin))?;
        let destination = net
            .resolve_station(od.destination)
            .ok_or(Error::UnknownStation(od.destination))?;
        if origin == destination {
            return Err(Error::SameOriginDestination(origin));
        }
        if cfg.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        let od = OdPair::new(origin, destination);
        let src = search_node(net.gate(origin).expect("station has a gate"), false);
        let dst = search_node(net.gate(destination).expect("station has a gate"), false);
        let mut blocked = self.base_blocked.clone();
        blocked[src] = false;
        blocked[dst] = false;

        let found = yen_k_shortest(
            &self.graph,
            src,
            dst,
            cfg.k,
            &blocked,
            Some(cfg.detour_factor),
        );
        if found.is_empty() {
            return Ok(PathSearch {
                paths: Vec::new(),
                warning: Some(CoverageWarning {
                    od,
                    reason: "destination unreachable".into(),
                }),
            });
        }
        let paths = found
            .iter()
            .enumerate()
            .map(|(rank, sp)| self.to_path(rank, od, sp))
            .collect();
        Ok(PathSearch {
            paths,
            warning: None,
        })
    }

    fn to_path(&self, path_id: usize, od: OdPair, sp: &SearchPath) -> Path {
        let links: Vec<LinkId> = sp.payloads(&self.graph).collect();
        let nodes = sp.nodes.iter().map(|&v| v / 2).collect();
        let wait_events = links
            .iter()
            .map(|&l| self.net.link(l))
            .filter(|l| l.kind == LinkKind::Board)
            .map(|l| WaitEvent {
                platform: l.tail,
                direction: l.direction,
            })
            .collect();
        let prior_cost_min = links.iter().map(|&l| self.weights[l]).sum();
        Path {
            path_id,
            od,
            links,
            nodes,
            wait_events,
            prior_cost_min,
        }
    }
}

/// Up to `k` loopless paths for one OD pair, cheapest first.
pub fn k_shortest_paths(
    net: &ExpandedNetwork,
    od: OdPair,
    k: usize,
    weights: &[f64],
    detour_factor: f64,
) -> Result<PathSearch> {
    TransitSearch::new(net, weights)?.k_shortest(od, &PathSearchConfig { k, detour_factor })
}

/// Paths for many OD pairs. Path ids are assigned in `(od, rank)` order.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PathSet {
    pub by_od: BTreeMap<OdPair, Vec<Path>>,
    pub warnings: Vec<CoverageWarning>,
}

impl PathSet {
    pub fn get(&self, od: &OdPair) -> &[Path] {
        self.by_od.get(od).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.by_od.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Enumerates paths for every OD pair in parallel.
pub fn enumerate_paths(
    net: &ExpandedNetwork,
    ods: &[OdPair],
    cfg: &PathSearchConfig,
    weights: &[f64],
) -> Result<PathSet> {
    let search = TransitSearch::new(net, weights)?;
    let results: Vec<(OdPair, PathSearch)> = ods
        .par_iter()
        .map(|&od| search.k_shortest(od, cfg).map(|r| (od, r)))
        .collect::<Result<_>>()?;

    let mut set = PathSet::default();
    let mut next_id = 0;
    let mut sorted: BTreeMap<OdPair, PathSearch> = BTreeMap::new();
    for (od, r) in results {
        sorted.insert(od, r);
    }
    for (od, mut r) in sorted {
        if let Some(w) = r.warning.take() {
            set.warnings.push(w);
        }
        if r.paths.is_empty() {
            continue;
        }
        for p in &mut r.paths {
            p.path_id = next_id;
            next_id += 1;
        }
        set.by_od.insert(od, r.paths);
    }
    Ok(set)
}
