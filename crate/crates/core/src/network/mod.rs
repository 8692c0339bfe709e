//! Expanded network representation.
//!
//! Each station is exploded into a gate-machine node, one platform node per
//! line it serves, and two train-gate nodes (up and down) per platform. Walks
//! between gate and platform, boarding, alighting, in-vehicle segments and
//! transfers are all explicit directed links, so waiting and walking occupy
//! distinct graph elements.

mod snapshot;
mod table;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_FORMAT, SNAPSHOT_VERSION};
pub use table::{
    load_link_table, read_link_table, write_link_table, LinkRow, ENTRY_EXIT_LINE, TRANSFER_LINE,
};

pub type StationId = u32;
pub type LineId = u32;
pub type NodeId = usize;
pub type LinkId = usize;

/// Ordered origin/destination station pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OdPair {
    pub origin: StationId,
    pub destination: StationId,
}

impl OdPair {
    pub fn new(origin: StationId, destination: StationId) -> Self {
        OdPair {
            origin,
            destination,
        }
    }
}

impl fmt::Display for OdPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.origin, self.destination)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
    None,
}

impl Direction {
    /// Wire encoding: 0 up, 1 down, 2 transfer/entry/exit.
    pub fn code(self) -> u8 {
        match self {
            Direction::Up => 0,
            Direction::Down => 1,
            Direction::None => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Direction::Up),
            1 => Some(Direction::Down),
            2 => Some(Direction::None),
            _ => None,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::None => Direction::None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::None => "none",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    GateMachine,
    Platform,
    TrainGate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LinkKind {
    Entry,
    Exit,
    Vehicle,
    Transfer,
    Board,
    Alight,
}

impl LinkKind {
    /// Kinds that carry a time-invariant travel-time variable.
    pub fn is_learnable(self) -> bool {
        matches!(
            self,
            LinkKind::Entry | LinkKind::Exit | LinkKind::Vehicle | LinkKind::Transfer
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LinkKind::Entry => "entry",
            LinkKind::Exit => "exit",
            LinkKind::Vehicle => "vehicle",
            LinkKind::Transfer => "transfer",
            LinkKind::Board => "board",
            LinkKind::Alight => "alight",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub station_id: StationId,
    pub name: String,
    pub lines: BTreeSet<LineId>,
    pub is_transfer: bool,
}

impl Station {
    pub fn new(station_id: StationId, name: impl Into<String>, lines: BTreeSet<LineId>) -> Self {
        let is_transfer = lines.len() >= 2;
        Station {
            station_id,
            name: name.into(),
            lines,
            is_transfer,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub node_id: NodeId,
    pub station_id: StationId,
    pub kind: NodeKind,
    pub line: Option<LineId>,
    pub direction: Direction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub link_id: LinkId,
    pub tail: NodeId,
    pub head: NodeId,
    pub kind: LinkKind,
    pub line: Option<LineId>,
    pub direction: Direction,
    pub distance_m: Option<f64>,
    pub prior_time_min: f64,
}

/// Conversion constants from link distances to prior travel times.
///
/// Walk-link distances in a link table are train-equivalent distances, so the
/// default walk-link speed equals the train speed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorTimes {
    pub train_speed_kmh: f64,
    pub walk_link_speed_kmh: f64,
    pub default_walk_min: f64,
    pub board_wait_min: f64,
}

impl Default for PriorTimes {
    fn default() -> Self {
        PriorTimes {
            train_speed_kmh: 30.0,
            walk_link_speed_kmh: 30.0,
            default_walk_min: 1.0,
            board_wait_min: 2.0,
        }
    }
}

impl PriorTimes {
    pub fn time_for(&self, kind: LinkKind, distance_m: Option<f64>) -> f64 {
        let per_min = |kmh: f64| kmh * 1000.0 / 60.0;
        match kind {
            LinkKind::Vehicle => match distance_m {
                Some(d) => d / per_min(self.train_speed_kmh),
                None => self.default_walk_min,
            },
            LinkKind::Entry | LinkKind::Exit | LinkKind::Transfer => match distance_m {
                Some(d) => d / per_min(self.walk_link_speed_kmh),
                None => self.default_walk_min,
            },
            LinkKind::Board => self.board_wait_min,
            LinkKind::Alight => 0.0,
        }
    }
}

/// Nodes and station-internal links produced by expanding one station.
#[derive(Clone, Debug)]
pub struct StationExpansion {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
}

/// Expands a station into gate, platform and train-gate nodes plus the
/// entry, exit, board, alight and transfer links between them.
///
/// Node and link ids are assigned consecutively from `first_node` and
/// `first_link`. Order: the gate, then per line (ascending) the platform and
/// its up and down train gates.
pub fn expand_station(
    station: &Station,
    first_node: NodeId,
    first_link: LinkId,
    priors: &PriorTimes,
) -> Result<StationExpansion> {
    if station.lines.is_empty() {
        return Err(Error::StationWithoutLines(station.station_id));
    }
    let sid = station.station_id;
    let mut nodes = Vec::with_capacity(1 + 3 * station.lines.len());
    let mut links = Vec::new();

    let gate = first_node;
    nodes.push(Node {
        node_id: gate,
        station_id: sid,
        kind: NodeKind::GateMachine,
        line: None,
        direction: Direction::None,
    });

    let mut platforms = Vec::with_capacity(station.lines.len());
    for &line in &station.lines {
        let platform = first_node + nodes.len();
        nodes.push(Node {
            node_id: platform,
            station_id: sid,
            kind: NodeKind::Platform,
            line: Some(line),
            direction: Direction::None,
        });
        let up = platform + 1;
        let down = platform + 2;
        for (id, dir) in [(up, Direction::Up), (down, Direction::Down)] {
            nodes.push(Node {
                node_id: id,
                station_id: sid,
                kind: NodeKind::TrainGate,
                line: Some(line),
                direction: dir,
            });
        }
        platforms.push((line, platform));

        let mut push = |tail, head, kind, dir| {
            links.push(Link {
                link_id: first_link + links.len(),
                tail,
                head,
                kind,
                line: Some(line),
                direction: dir,
                distance_m: None,
                prior_time_min: priors.time_for(kind, None),
            });
        };
        push(gate, platform, LinkKind::Entry, Direction::None);
        push(platform, gate, LinkKind::Exit, Direction::None);
        push(platform, up, LinkKind::Board, Direction::Up);
        push(platform, down, LinkKind::Board, Direction::Down);
        push(up, platform, LinkKind::Alight, Direction::Up);
        push(down, platform, LinkKind::Alight, Direction::Down);
    }

    for &(_, from) in &platforms {
        for &(_, to) in &platforms {
            if from != to {
                links.push(Link {
                    link_id: first_link + links.len(),
                    tail: from,
                    head: to,
                    kind: LinkKind::Transfer,
                    line: None,
                    direction: Direction::None,
                    distance_m: None,
                    prior_time_min: priors.time_for(LinkKind::Transfer, None),
                });
            }
        }
    }

    Ok(StationExpansion { nodes, links })
}

/// Immutable expanded network. Safe to share between threads.
#[derive(Clone, Debug)]
pub struct ExpandedNetwork {
    stations: Vec<Station>,
    nodes: Vec<Node>,
    links: Vec<Link>,
    adjacency: Vec<Vec<LinkId>>,
    incoming: Vec<Vec<LinkId>>,
    aliases: BTreeMap<StationId, StationId>,
    link_table: Vec<LinkRow>,
    station_pos: BTreeMap<StationId, usize>,
    gates: BTreeMap<StationId, NodeId>,
    platforms: BTreeMap<(StationId, LineId), NodeId>,
}

impl ExpandedNetwork {
    /// Assembles a network from its parts without validating invariants.
    /// Use [`validate_network`] for diagnostics.
    pub fn from_parts(
        stations: Vec<Station>,
        nodes: Vec<Node>,
        links: Vec<Link>,
        aliases: BTreeMap<StationId, StationId>,
        link_table: Vec<LinkRow>,
    ) -> Result<Self> {
        for (i, n) in nodes.iter().enumerate() {
            if n.node_id != i {
                return Err(Error::Format(format!(
                    "node at position {i} has id {}",
                    n.node_id
                )));
            }
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        let mut incoming = vec![Vec::new(); nodes.len()];
        for (i, l) in links.iter().enumerate() {
            if l.link_id != i {
                return Err(Error::Format(format!(
                    "link at position {i} has id {}",
                    l.link_id
                )));
            }
            if l.tail >= nodes.len() || l.head >= nodes.len() {
                return Err(Error::Format(format!("link {i} references a missing node")));
            }
            adjacency[l.tail].push(i);
            incoming[l.head].push(i);
        }
        let station_pos = stations
            .iter()
            .enumerate()
            .map(|(i, s)| (s.station_id, i))
            .collect();
        let mut gates = BTreeMap::new();
        let mut platforms = BTreeMap::new();
        for n in &nodes {
            match n.kind {
                NodeKind::GateMachine => {
                    gates.insert(n.station_id, n.node_id);
                }
                NodeKind::Platform => {
                    if let Some(line) = n.line {
                        platforms.insert((n.station_id, line), n.node_id);
                    }
                }
                NodeKind::TrainGate => {}
            }
        }
        Ok(ExpandedNetwork {
            stations,
            nodes,
            links,
            adjacency,
            incoming,
            aliases,
            link_table,
            station_pos,
            gates,
            platforms,
        })
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id]
    }

    pub fn outgoing(&self, node: NodeId) -> &[LinkId] {
        &self.adjacency[node]
    }

    pub fn incoming(&self, node: NodeId) -> &[LinkId] {
        &self.incoming[node]
    }

    /// Station-code aliases (code used in link tables and AFC records →
    /// physical station id). Physical ids map to themselves.
    pub fn aliases(&self) -> &BTreeMap<StationId, StationId> {
        &self.aliases
    }

    /// Link-table rows the network was loaded from (empty when built by hand).
    pub fn link_table(&self) -> &[LinkRow] {
        &self.link_table
    }

    pub fn station(&self, id: StationId) -> Option<&Station> {
        self.station_pos.get(&id).map(|&i| &self.stations[i])
    }

    /// Resolves a station code to its physical station id.
    pub fn resolve_station(&self, code: StationId) -> Option<StationId> {
        match self.aliases.get(&code) {
            Some(&s) => Some(s),
            None => self.station_pos.contains_key(&code).then_some(code),
        }
    }

    pub fn gate(&self, station: StationId) -> Option<NodeId> {
        self.gates.get(&station).copied()
    }

    pub fn platform(&self, station: StationId, line: LineId) -> Option<NodeId> {
        self.platforms.get(&(station, line)).copied()
    }

    pub fn station_ids(&self) -> impl Iterator<Item = StationId> + '_ {
        self.stations.iter().map(|s| s.station_id)
    }

    /// All ordered pairs of distinct stations.
    pub fn all_od_pairs(&self) -> Vec<OdPair> {
        let ids: Vec<_> = self.station_ids().collect();
        let mut out = Vec::with_capacity(ids.len() * ids.len().saturating_sub(1));
        for &o in &ids {
            for &d in &ids {
                if o != d {
                    out.push(OdPair::new(o, d));
                }
            }
        }
        out
    }

    pub fn prior_times(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.prior_time_min).collect()
    }

    /// True when a train departs from this train gate, i.e. boarding there
    /// leads somewhere.
    pub fn is_departing(&self, train_gate: NodeId) -> bool {
        self.adjacency[train_gate]
            .iter()
            .any(|&l| self.links[l].kind == LinkKind::Vehicle)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    OrphanNode {
        node: NodeId,
    },
    PlatformWithoutBoard {
        platform: NodeId,
    },
    PlatformWithoutAlight {
        platform: NodeId,
    },
    PlatformWithoutGate {
        platform: NodeId,
    },
    MissingOppositeDirection {
        link: LinkId,
    },
    LineDisconnected {
        line: LineId,
        stations: Vec<StationId>,
    },
    DuplicateLink {
        link: LinkId,
        first: LinkId,
    },
    StationNodeCount {
        station: StationId,
        expected: usize,
        found: usize,
    },
}

/// Lists invariant violations; an empty report means the network is valid.
pub fn validate_network(net: &ExpandedNetwork) -> Vec<Violation> {
    let mut out = Vec::new();

    for n in net.nodes() {
        if net.outgoing(n.node_id).is_empty() && net.incoming(n.node_id).is_empty() {
            out.push(Violation::OrphanNode { node: n.node_id });
        }
    }

    for st in net.stations() {
        let expected = 1 + 3 * st.lines.len();
        let found = net
            .nodes()
            .iter()
            .filter(|n| n.station_id == st.station_id)
            .count();
        if expected != found {
            out.push(Violation::StationNodeCount {
                station: st.station_id,
                expected,
                found,
            });
        }
    }

    for n in net.nodes().iter().filter(|n| n.kind == NodeKind::Platform) {
        let has = |kind: LinkKind, outgoing: bool| {
            let ids = if outgoing {
                net.outgoing(n.node_id)
            } else {
                net.incoming(n.node_id)
            };
            ids.iter().any(|&l| net.link(l).kind == kind)
        };
        if !has(LinkKind::Board, true) {
            out.push(Violation::PlatformWithoutBoard {
                platform: n.node_id,
            });
        }
        if !has(LinkKind::Alight, false) {
            out.push(Violation::PlatformWithoutAlight {
                platform: n.node_id,
            });
        }
        if !has(LinkKind::Entry, false) || !has(LinkKind::Exit, true) {
            out.push(Violation::PlatformWithoutGate {
                platform: n.node_id,
            });
        }
    }

    let mut seen: BTreeMap<(NodeId, NodeId, LinkKind, Direction), LinkId> = BTreeMap::new();
    for l in net.links() {
        let key = (l.tail, l.head, l.kind, l.direction);
        if let Some(&first) = seen.get(&key) {
            out.push(Violation::DuplicateLink {
                link: l.link_id,
                first,
            });
        } else {
            seen.insert(key, l.link_id);
        }
    }

    // Every vehicle segment needs its counterpart in the opposite direction.
    let mut segments = BTreeSet::new();
    for l in net.links().iter().filter(|l| l.kind == LinkKind::Vehicle) {
        let (a, b) = (net.node(l.tail).station_id, net.node(l.head).station_id);
        segments.insert((l.line, l.direction, a, b));
    }
    for l in net.links().iter().filter(|l| l.kind == LinkKind::Vehicle) {
        let (a, b) = (net.node(l.tail).station_id, net.node(l.head).station_id);
        if !segments.contains(&(l.line, l.direction.opposite(), b, a)) {
            out.push(Violation::MissingOppositeDirection { link: l.link_id });
        }
    }

    // Stations of a line must form one connected component over its segments.
    let mut by_line: BTreeMap<LineId, BTreeSet<StationId>> = BTreeMap::new();
    for st in net.stations() {
        for &line in &st.lines {
            by_line.entry(line).or_default().insert(st.station_id);
        }
    }
    for (line, members) in by_line {
        let mut adj: BTreeMap<StationId, Vec<StationId>> = BTreeMap::new();
        for &(l, _, a, b) in &segments {
            if l == Some(line) {
                adj.entry(a).or_default().push(b);
                adj.entry(b).or_default().push(a);
            }
        }
        let start = *members.iter().next().expect("non-empty line");
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(s) = stack.pop() {
            for &n in adj.get(&s).into_iter().flatten() {
                if seen.insert(n) {
                    stack.push(n);
                }
            }
        }
        let missing: Vec<_> = members.difference(&seen).copied().collect();
        if !missing.is_empty() {
            out.push(Violation::LineDisconnected {
                line,
                stations: missing,
            });
        }
    }

    out
}
