//! Link-distance tables.
//!
//! One row per directed link between station codes:
//!
//! ```text
//! origin_station,destination_station,direction,line,origin_name,destination_name,distance_m
//! 1,2,0,1,Pingguoyuan,Gucheng,2606
//! 10001,1,2,10000,Pingguoyuan,Pingguoyuan,1000
//! ```
//!
//! Direction 0 is up, 1 is down, 2 marks transfer and entry/exit rows.
//! Transfer rows use line 100 and join two codes of the same physical station
//! (e.g. 4 on line 1 and 104 on the ring line). Entry/exit rows use line
//! 10000 with a pseudo gate code on the other end.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{
    expand_station, Direction, ExpandedNetwork, LineId, LinkKind, NodeId, NodeKind, PriorTimes,
    Station, StationId,
};
use crate::error::{Error, Result};

pub const TRANSFER_LINE: LineId = 100;
pub const ENTRY_EXIT_LINE: LineId = 10000;

const HEADER: [&str; 7] = [
    "origin_station",
    "destination_station",
    "direction",
    "line",
    "origin_name",
    "destination_name",
    "distance_m",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkRow {
    pub origin_station: StationId,
    pub destination_station: StationId,
    pub direction: u8,
    pub line: LineId,
    pub origin_name: String,
    pub destination_name: String,
    pub distance_m: f64,
}

impl LinkRow {
    pub fn new(
        origin: StationId,
        destination: StationId,
        direction: u8,
        line: LineId,
        origin_name: &str,
        destination_name: &str,
        distance_m: f64,
    ) -> Self {
        LinkRow {
            origin_station: origin,
            destination_station: destination,
            direction,
            line,
            origin_name: origin_name.to_string(),
            destination_name: destination_name.to_string(),
            distance_m,
        }
    }
}

pub fn read_link_table<R: Read>(reader: R) -> Result<Vec<LinkRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(HEADER.iter().copied()) {
        return Err(Error::Format(format!(
            "link table header must be `{}`, found `{}`",
            HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

pub fn write_link_table<W: Write>(writer: W, rows: &[LinkRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        wtr.write_record(HEADER)?;
    }
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

enum RowKind {
    Vehicle(Direction),
    Transfer,
    Gate,
}

fn invalid(row: usize, reason: impl Into<String>) -> Error {
    Error::InvalidRow {
        row,
        reason: reason.into(),
    }
}

fn classify(i: usize, r: &LinkRow) -> Result<RowKind> {
    if !r.distance_m.is_finite() || r.distance_m <= 0.0 {
        return Err(Error::NonPositiveDistance {
            row: i,
            distance: r.distance_m,
        });
    }
    let dir = Direction::from_code(r.direction)
        .ok_or_else(|| invalid(i, format!("unknown direction code {}", r.direction)))?;
    match (r.line, dir) {
        (TRANSFER_LINE, Direction::None) => Ok(RowKind::Transfer),
        (ENTRY_EXIT_LINE, Direction::None) => Ok(RowKind::Gate),
        (TRANSFER_LINE | ENTRY_EXIT_LINE, _) => {
            Err(invalid(i, "transfer and entry/exit rows need direction 2"))
        }
        (_, Direction::None) => Err(invalid(i, "vehicle rows need direction 0 or 1")),
        _ if r.origin_station == r.destination_station => {
            Err(invalid(i, "vehicle row joins a station to itself"))
        }
        (_, d) => Ok(RowKind::Vehicle(d)),
    }
}

struct UnionFind {
    parent: BTreeMap<StationId, StationId>,
}

impl UnionFind {
    fn find(&mut self, x: StationId) -> StationId {
        let p = self.parent[&x];
        if p == x {
            return x;
        }
        let root = self.find(p);
        self.parent.insert(x, root);
        root
    }
}

/// Builds an expanded network from link-table rows.
pub fn load_link_table(rows: &[LinkRow], priors: &PriorTimes) -> Result<ExpandedNetwork> {
    if rows.is_empty() {
        return Err(Error::NoLinks);
    }

    let mut kinds = Vec::with_capacity(rows.len());
    let mut seen: BTreeMap<(StationId, StationId, u8, LineId), usize> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        kinds.push(classify(i, r)?);
        let key = (r.origin_station, r.destination_station, r.direction, r.line);
        if let Some(&first) = seen.get(&key) {
            return Err(Error::DuplicateRow { row: i, first });
        }
        seen.insert(key, i);
    }

    // Station codes and their lines come from vehicle rows.
    let mut code_lines: BTreeMap<StationId, BTreeSet<LineId>> = BTreeMap::new();
    let mut code_name: BTreeMap<StationId, String> = BTreeMap::new();
    for (r, kind) in rows.iter().zip(&kinds) {
        if let RowKind::Vehicle(_) = kind {
            for (code, name) in [
                (r.origin_station, &r.origin_name),
                (r.destination_station, &r.destination_name),
            ] {
                code_lines.entry(code).or_default().insert(r.line);
                code_name.entry(code).or_insert_with(|| name.clone());
            }
        }
    }

    let mut uf = UnionFind {
        parent: code_lines.keys().map(|&c| (c, c)).collect(),
    };
    let mut group_lines: BTreeMap<StationId, BTreeSet<LineId>> = code_lines.clone();
    for (i, (r, kind)) in rows.iter().zip(&kinds).enumerate() {
        if let RowKind::Transfer = kind {
            for code in [r.origin_station, r.destination_station] {
                if !code_lines.contains_key(&code) {
                    return Err(Error::DanglingStation {
                        row: i,
                        station: code,
                    });
                }
            }
            let (a, b) = (uf.find(r.origin_station), uf.find(r.destination_station));
            if a != b {
                let (keep, drop) = (a.min(b), a.max(b));
                let moved = group_lines.remove(&drop).unwrap_or_default();
                let target = group_lines.entry(keep).or_default();
                if !target.is_disjoint(&moved) {
                    return Err(invalid(
                        i,
                        "transfer row joins two codes serving the same line",
                    ));
                }
                target.extend(moved);
                uf.parent.insert(drop, keep);
            }
        }
    }

    // Gate rows: exactly one end must be a known station code.
    let mut gate_rows = Vec::new();
    for (i, (r, kind)) in rows.iter().zip(&kinds).enumerate() {
        if let RowKind::Gate = kind {
            let o = code_lines.contains_key(&r.origin_station);
            let d = code_lines.contains_key(&r.destination_station);
            let (code, kind) = match (o, d) {
                (false, true) => (r.destination_station, LinkKind::Entry),
                (true, false) => (r.origin_station, LinkKind::Exit),
                (false, false) => {
                    return Err(Error::DanglingStation {
                        row: i,
                        station: r.destination_station,
                    })
                }
                (true, true) => return Err(invalid(i, "entry/exit row between two stations")),
            };
            gate_rows.push((code, kind, r.distance_m));
        }
    }

    let codes: Vec<StationId> = code_lines.keys().copied().collect();
    let aliases: BTreeMap<StationId, StationId> = codes.iter().map(|&c| (c, uf.find(c))).collect();

    let mut stations = Vec::new();
    let mut nodes = Vec::new();
    let mut links = Vec::new();
    for (&sid, lines) in &group_lines {
        let st = Station::new(sid, code_name[&sid].clone(), lines.clone());
        let e = expand_station(&st, nodes.len(), links.len(), priors)?;
        nodes.extend(e.nodes);
        links.extend(e.links);
        stations.push(st);
    }

    let mut train_gate: BTreeMap<(StationId, LineId, Direction), NodeId> = BTreeMap::new();
    let mut platform: BTreeMap<(StationId, LineId), NodeId> = BTreeMap::new();
    for n in &nodes {
        match (n.kind, n.line) {
            (NodeKind::TrainGate, Some(l)) => {
                train_gate.insert((n.station_id, l, n.direction), n.node_id);
            }
            (NodeKind::Platform, Some(l)) => {
                platform.insert((n.station_id, l), n.node_id);
            }
            _ => {}
        }
    }

    for (r, kind) in rows.iter().zip(&kinds) {
        if let RowKind::Vehicle(dir) = *kind {
            let a = aliases[&r.origin_station];
            let b = aliases[&r.destination_station];
            let link_id = links.len();
            links.push(super::Link {
                link_id,
                tail: train_gate[&(a, r.line, dir)],
                head: train_gate[&(b, r.line, dir)],
                kind: LinkKind::Vehicle,
                line: Some(r.line),
                direction: dir,
                distance_m: Some(r.distance_m),
                prior_time_min: priors.time_for(LinkKind::Vehicle, Some(r.distance_m)),
            });
        }
    }

    // Walk-link distances. Explicit rows win; a missing direction of an
    // entry/exit pair or a transfer pair borrows its counterpart.
    let mut explicit: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    for &(code, kind, dist) in &gate_rows {
        let sid = aliases[&code];
        let gate = nodes
            .iter()
            .find(|n| n.station_id == sid && n.kind == NodeKind::GateMachine)
            .map(|n| n.node_id)
            .expect("every station has a gate");
        for &line in &code_lines[&code] {
            let p = platform[&(sid, line)];
            let key = if kind == LinkKind::Entry {
                (gate, p)
            } else {
                (p, gate)
            };
            explicit.insert(key, dist);
        }
    }
    for (r, kind) in rows.iter().zip(&kinds) {
        if let RowKind::Transfer = kind {
            let sid = aliases[&r.origin_station];
            for &lo in &code_lines[&r.origin_station] {
                for &ld in &code_lines[&r.destination_station] {
                    if lo != ld {
                        explicit.insert((platform[&(sid, lo)], platform[&(sid, ld)]), r.distance_m);
                    }
                }
            }
        }
    }
    for l in links.iter_mut() {
        if matches!(
            l.kind,
            LinkKind::Entry | LinkKind::Exit | LinkKind::Transfer
        ) {
            let d = explicit
                .get(&(l.tail, l.head))
                .or_else(|| explicit.get(&(l.head, l.tail)))
                .copied();
            if d.is_some() {
                l.distance_m = d;
                l.prior_time_min = priors.time_for(l.kind, d);
            }
        }
    }

    ExpandedNetwork::from_parts(stations, nodes, links, aliases, rows.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::validate_network;
    use crate::Error;

    fn line_rows() -> Vec<LinkRow> {
        vec![
            LinkRow::new(1, 2, 0, 1, "Pingguoyuan", "Gucheng", 2606.0),
            LinkRow::new(2, 1, 1, 1, "Gucheng", "Pingguoyuan", 2606.0),
        ]
    }

    #[test]
    fn single_vehicle_row_becomes_up_link() {
        let net = load_link_table(&line_rows()[..1], &PriorTimes::default()).unwrap();
        let vehicles: Vec<_> = net
            .links()
            .iter()
            .filter(|l| l.kind == LinkKind::Vehicle)
            .collect();
        assert_eq!(vehicles.len(), 1);
        let v = vehicles[0];
        assert_eq!(v.direction, Direction::Up);
        let (t, h) = (net.node(v.tail), net.node(v.head));
        assert_eq!((t.station_id, h.station_id), (1, 2));
        assert_eq!((t.kind, h.kind), (NodeKind::TrainGate, NodeKind::TrainGate));
        assert!((v.prior_time_min - 5.212).abs() < 1e-12);
    }

    #[test]
    fn empty_table_is_rejected() {
        let err = load_link_table(&[], &PriorTimes::default()).unwrap_err();
        assert_eq!(err.to_string(), "no links");
    }

    #[test]
    fn duplicate_row_reports_index() {
        let mut rows = line_rows();
        rows.push(rows[0].clone());
        match load_link_table(&rows, &PriorTimes::default()) {
            Err(Error::DuplicateRow { row: 2, first: 0 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_positive_distance_is_rejected() {
        let mut rows = line_rows();
        rows[1].distance_m = 0.0;
        assert!(matches!(
            load_link_table(&rows, &PriorTimes::default()),
            Err(Error::NonPositiveDistance { row: 1, .. })
        ));
    }

    #[test]
    fn dangling_transfer_reference_is_rejected() {
        let mut rows = line_rows();
        rows.push(LinkRow::new(
            2,
            102,
            2,
            TRANSFER_LINE,
            "Gucheng",
            "Gucheng",
            100.0,
        ));
        assert!(matches!(
            load_link_table(&rows, &PriorTimes::default()),
            Err(Error::DanglingStation {
                row: 2,
                station: 102
            })
        ));
    }

    #[test]
    fn gate_rows_set_entry_and_exit_distance() {
        let mut rows = line_rows();
        rows.push(LinkRow::new(
            10001,
            1,
            2,
            ENTRY_EXIT_LINE,
            "Pingguoyuan",
            "Pingguoyuan",
            1000.0,
        ));
        let net = load_link_table(&rows, &PriorTimes::default()).unwrap();
        let walks: Vec<_> = net
            .links()
            .iter()
            .filter(|l| {
                matches!(l.kind, LinkKind::Entry | LinkKind::Exit)
                    && net.node(l.tail).station_id == 1
            })
            .collect();
        assert_eq!(walks.len(), 2);
        for l in walks {
            assert_eq!(l.distance_m, Some(1000.0));
            assert!((l.prior_time_min - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transfer_rows_merge_aliases() {
        let rows = vec![
            LinkRow::new(1, 2, 0, 1, "A", "B", 1000.0),
            LinkRow::new(2, 1, 1, 1, "B", "A", 1000.0),
            LinkRow::new(102, 5, 0, 2, "B", "C", 1000.0),
            LinkRow::new(5, 102, 1, 2, "C", "B", 1000.0),
            LinkRow::new(2, 102, 2, TRANSFER_LINE, "B", "B", 250.0),
        ];
        let net = load_link_table(&rows, &PriorTimes::default()).unwrap();
        assert_eq!(net.stations().len(), 3);
        assert_eq!(net.resolve_station(102), Some(2));
        let st = net.station(2).unwrap();
        assert!(st.is_transfer);
        let transfers: Vec<_> = net
            .links()
            .iter()
            .filter(|l| l.kind == LinkKind::Transfer)
            .collect();
        assert_eq!(transfers.len(), 2);
        for t in transfers {
            assert_eq!(t.distance_m, Some(250.0));
        }
        assert!(validate_network(&net).is_empty());
    }

    #[test]
    fn header_must_match() {
        let csv = "a,b\n1,2\n";
        assert!(matches!(
            read_link_table(csv.as_bytes()),
            Err(Error::Format(_))
        ));
    }
}
