//! Versioned JSON snapshot of an expanded network.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{ExpandedNetwork, Link, LinkRow, Node, Station, StationId};
use crate::error::{Error, Result};

pub const SNAPSHOT_FORMAT: &str = "urt-network";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    version: u32,
    stations: Vec<Station>,
    nodes: Vec<Node>,
    links: Vec<Link>,
    aliases: Vec<(StationId, StationId)>,
    #[serde(default)]
    link_table: Vec<LinkRow>,
}

pub fn write_snapshot<W: Write>(writer: W, net: &ExpandedNetwork) -> Result<()> {
    let snap = Snapshot {
        format: SNAPSHOT_FORMAT.to_string(),
        version: SNAPSHOT_VERSION,
        stations: net.stations().to_vec(),
        nodes: net.nodes().to_vec(),
        links: net.links().to_vec(),
        aliases: net.aliases().iter().map(|(&a, &b)| (a, b)).collect(),
        link_table: net.link_table().to_vec(),
    };
    serde_json::to_writer_pretty(writer, &snap)?;
    Ok(())
}

pub fn read_snapshot<R: Read>(reader: R) -> Result<ExpandedNetwork> {
    let snap: Snapshot = serde_json::from_reader(reader)?;
    if snap.format != SNAPSHOT_FORMAT {
        return Err(Error::Format(format!(
            "unexpected format `{}`",
            snap.format
        )));
    }
    if snap.version != SNAPSHOT_VERSION {
        return Err(Error::Format(format!(
            "unsupported snapshot version {}",
            snap.version
        )));
    }
    let aliases: BTreeMap<_, _> = snap.aliases.into_iter().collect();
    ExpandedNetwork::from_parts(
        snap.stations,
        snap.nodes,
        snap.links,
        aliases,
        snap.link_table,
    )
}
