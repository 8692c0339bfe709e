//! Fare-collection records: parsing, interval binning and aggregation into
//! mean OD travel times per entry interval.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ExpandedNetwork, OdPair, StationId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AfcRecord {
    pub card_id: String,
    pub origin: StationId,
    pub destination: StationId,
    pub entry_time_min: f64,
    pub exit_time_min: f64,
}

impl AfcRecord {
    pub fn travel_time_min(&self) -> f64 {
        self.exit_time_min - self.entry_time_min
    }

    pub fn od(&self) -> OdPair {
        OdPair::new(self.origin, self.destination)
    }
}

/// Contiguous half-open entry-time intervals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalSpec {
    pub start_min: f64,
    pub width_min: f64,
    pub count: usize,
}

impl Default for IntervalSpec {
    /// 7:00 to 12:00 in half-hour steps.
    fn default() -> Self {
        IntervalSpec {
            start_min: 420.0,
            width_min: 30.0,
            count: 10,
        }
    }
}

impl IntervalSpec {
    pub fn new(start_min: f64, width_min: f64, count: usize) -> Result<Self> {
        if !start_min.is_finite() || !(width_min.is_finite() && width_min > 0.0) || count == 0 {
            return Err(Error::Config(format!(
                "bad interval spec: start {start_min}, width {width_min}, count {count}"
            )));
        }
        Ok(IntervalSpec {
            start_min,
            width_min,
            count,
        })
    }

    pub fn end_min(&self) -> f64 {
        self.start_min + self.count as f64 * self.width_min
    }

    pub fn interval_start(&self, h: usize) -> f64 {
        self.start_min + h as f64 * self.width_min
    }
}

/// Index of the interval containing `entry_time_min`, or `None` outside the
/// window.
pub fn bin_interval(entry_time_min: f64, spec: &IntervalSpec) -> Option<usize> {
    if !(entry_time_min >= spec.start_min && entry_time_min < spec.end_min()) {
        return None;
    }
    let h = ((entry_time_min - spec.start_min) / spec.width_min).floor() as usize;
    Some(h.min(spec.count - 1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    NonPositiveTravel,
    EqualOd,
    UnknownStation,
    Malformed,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::NonPositiveTravel => "non-positive travel",
            DropReason::EqualOd => "equal OD",
            DropReason::UnknownStation => "unknown station",
            DropReason::Malformed => "malformed",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    pub non_positive_travel: usize,
    pub equal_od: usize,
    pub unknown_station: usize,
    pub malformed: usize,
}

impl DropCounts {
    pub fn add(&mut self, reason: DropReason) {
        match reason {
            DropReason::NonPositiveTravel => self.non_positive_travel += 1,
            DropReason::EqualOd => self.equal_od += 1,
            DropReason::UnknownStation => self.unknown_station += 1,
            DropReason::Malformed => self.malformed += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.non_positive_travel + self.equal_od + self.unknown_station + self.malformed
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseSummary {
    pub rows: usize,
    pub valid: usize,
    pub dropped: DropCounts,
}

struct Columns {
    card: usize,
    origin: usize,
    destination: usize,
    entry: usize,
    exit: usize,
}

fn locate_columns(headers: &csv::StringRecord) -> Result<Columns> {
    let find = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.contains(&h.trim()))
            .ok_or_else(|| Error::Format(format!("missing AFC column `{}`", names[0])))
    };
    Ok(Columns {
        card: find(&["card_id"])?,
        origin: find(&["entry_station"])?,
        destination: find(&["exit_station"])?,
        entry: find(&["entry_time_min", "entry_time"])?,
        exit: find(&["exit_time_min", "exit_time"])?,
    })
}

fn parse_row(
    row: &csv::StringRecord,
    cols: &Columns,
    net: Option<&ExpandedNetwork>,
) -> std::result::Result<AfcRecord, DropReason> {
    let field = |i: usize| row.get(i).map(str::trim).ok_or(DropReason::Malformed);
    let station = |i: usize| {
        field(i)?
            .parse::<StationId>()
            .map_err(|_| DropReason::Malformed)
    };
    let time = |i: usize| {
        field(i)?
            .parse::<f64>()
            .ok()
            .filter(|t| t.is_finite())
            .ok_or(DropReason::Malformed)
    };
    let card_id = field(cols.card)?.to_string();
    let mut origin = station(cols.origin)?;
    let mut destination = station(cols.destination)?;
    let entry_time_min = time(cols.entry)?;
    let exit_time_min = time(cols.exit)?;

    if let Some(net) = net {
        origin = net
            .resolve_station(origin)
            .ok_or(DropReason::UnknownStation)?;
        destination = net
            .resolve_station(destination)
            .ok_or(DropReason::UnknownStation)?;
    }
    if origin == destination {
        return Err(DropReason::EqualOd);
    }
    if exit_time_min <= entry_time_min {
        return Err(DropReason::NonPositiveTravel);
    }
    Ok(AfcRecord {
        card_id,
        origin,
        destination,
        entry_time_min,
        exit_time_min,
    })
}

/// Streams valid records to `sink` in input order. When a network is given,
/// station codes are resolved to physical stations and unknown codes are
/// dropped. More than half the rows being invalid is an error.
pub fn stream_afc<R: Read>(
    reader: R,
    net: Option<&ExpandedNetwork>,
    mut sink: impl FnMut(AfcRecord),
) -> Result<ParseSummary> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let cols = locate_columns(rdr.headers()?)?;
    let mut summary = ParseSummary::default();
    let mut row = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {
                summary.rows += 1;
                match parse_row(&row, &cols, net) {
                    Ok(rec) => {
                        summary.valid += 1;
                        sink(rec);
                    }
                    Err(reason) => summary.dropped.add(reason),
                }
            }
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => {
                summary.rows += 1;
                summary.dropped.add(DropReason::Malformed);
            }
        }
    }
    if summary.dropped.total() * 2 > summary.rows {
        return Err(Error::CorruptInput {
            invalid: summary.dropped.total(),
            total: summary.rows,
        });
    }
    Ok(summary)
}

pub fn parse_afc<R: Read>(
    reader: R,
    net: Option<&ExpandedNetwork>,
) -> Result<(Vec<AfcRecord>, ParseSummary)> {
    let mut records = Vec::new();
    let summary = stream_afc(reader, net, |r| records.push(r))?;
    Ok((records, summary))
}

pub fn write_afc<W: Write>(writer: W, records: &[AfcRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "card_id",
        "entry_station",
        "exit_station",
        "entry_time_min",
        "exit_time_min",
    ])?;
    for r in records {
        wtr.write_record([
            r.card_id.clone(),
            r.origin.to_string(),
            r.destination.to_string(),
            r.entry_time_min.to_string(),
            r.exit_time_min.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean_travel_min: f64,
    pub count: usize,
    /// Filled in by matrix completion rather than observed.
    #[serde(default)]
    pub imputed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationTable {
    pub rows: BTreeMap<(OdPair, usize), Cell>,
    pub spec: IntervalSpec,
}

impl ObservationTable {
    pub fn new(spec: IntervalSpec) -> Self {
        ObservationTable {
            rows: BTreeMap::new(),
            spec,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, od: OdPair, h: usize) -> Option<&Cell> {
        self.rows.get(&(od, h))
    }

    /// Distinct OD pairs with at least one cell, in ascending order.
    pub fn od_pairs(&self) -> Vec<OdPair> {
        let mut ods: Vec<OdPair> = self.rows.keys().map(|(od, _)| *od).collect();
        ods.dedup();
        ods
    }

    pub fn total_count(&self) -> usize {
        self.rows.values().map(|c| c.count).sum()
    }
}

/// Sums are held in integer picominutes so that merging and reordering are
/// exact.
const FIXED_SCALE: f64 = 1e12;

#[derive(Clone, Copy, Debug)]
struct Accumulator {
    sum: i128,
    count: usize,
    min: f64,
    max: f64,
}

impl Accumulator {
    fn new() -> Self {
        Accumulator {
            sum: 0,
            count: 0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    fn push(&mut self, travel: f64) {
        self.sum += (travel * FIXED_SCALE).round() as i128;
        self.count += 1;
        self.min = self.min.min(travel);
        self.max = self.max.max(travel);
    }

    fn merge(&mut self, other: &Accumulator) {
        self.sum += other.sum;
        self.count += other.count;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    fn mean(&self) -> f64 {
        let mean = self.sum as f64 / self.count as f64 / FIXED_SCALE;
        mean.clamp(self.min, self.max)
    }
}

/// Single-pass aggregation with memory proportional to the number of active
/// cells.
#[derive(Clone, Debug)]
pub struct Aggregator {
    spec: IntervalSpec,
    cells: HashMap<(OdPair, usize), Accumulator>,
    out_of_window: usize,
}

impl Aggregator {
    pub fn new(spec: IntervalSpec) -> Self {
        Aggregator {
            spec,
            cells: HashMap::new(),
            out_of_window: 0,
        }
    }

    pub fn push(&mut self, record: &AfcRecord) {
        match bin_interval(record.entry_time_min, &self.spec) {
            Some(h) => self
                .cells
                .entry((record.od(), h))
                .or_insert_with(Accumulator::new)
                .push(record.travel_time_min()),
            None => self.out_of_window += 1,
        }
    }

    pub fn merge(&mut self, other: &Aggregator) {
        for (key, acc) in &other.cells {
            self.cells
                .entry(*key)
                .or_insert_with(Accumulator::new)
                .merge(acc);
        }
        self.out_of_window += other.out_of_window;
    }

    pub fn out_of_window(&self) -> usize {
        self.out_of_window
    }

    pub fn active_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn finish(&self) -> ObservationTable {
        let rows = self
            .cells
            .iter()
            .map(|(&key, acc)| {
                let cell = Cell {
                    mean_travel_min: acc.mean(),
                    count: acc.count,
                    imputed: false,
                };
                (key, cell)
            })
            .collect();
        ObservationTable {
            rows,
            spec: self.spec,
        }
    }
}

pub fn aggregate(records: &[AfcRecord], spec: &IntervalSpec) -> ObservationTable {
    let mut agg = Aggregator::new(*spec);
    records.iter().for_each(|r| agg.push(r));
    agg.finish()
}

/// Aggregation that first drops, per cell, travel times outside the
/// `[lo, hi]` percentile band (linear interpolation between order
/// statistics). Needs all records of a cell in memory.
pub fn aggregate_trimmed(
    records: &[AfcRecord],
    spec: &IntervalSpec,
    lo_pct: f64,
    hi_pct: f64,
) -> Result<ObservationTable> {
    if !(0.0..=100.0).contains(&lo_pct) || !(lo_pct..=100.0).contains(&hi_pct) {
        return Err(Error::Config(format!(
            "bad percentile band [{lo_pct}, {hi_pct}]"
        )));
    }
    let mut by_cell: BTreeMap<(OdPair, usize), Vec<f64>> = BTreeMap::new();
    for r in records {
        if let Some(h) = bin_interval(r.entry_time_min, spec) {
            by_cell
                .entry((r.od(), h))
                .or_default()
                .push(r.travel_time_min());
        }
    }
    let mut table = ObservationTable::new(*spec);
    for (key, mut times) in by_cell {
        times.sort_by(f64::total_cmp);
        let lo = percentile(&times, lo_pct);
        let hi = percentile(&times, hi_pct);
        let mut acc = Accumulator::new();
        times
            .iter()
            .filter(|&&t| t >= lo && t <= hi)
            .for_each(|&t| acc.push(t));
        if acc.count > 0 {
            table.rows.insert(
                key,
                Cell {
                    mean_travel_min: acc.mean(),
                    count: acc.count,
                    imputed: false,
                },
            );
        }
    }
    Ok(table)
}

fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let below = pos.floor() as usize;
    let above = pos.ceil() as usize;
    sorted[below] + (sorted[above] - sorted[below]) * (pos - below as f64)
}

#[derive(Serialize, Deserialize)]
struct TableRow {
    origin: StationId,
    destination: StationId,
    interval: usize,
    mean_travel_min: f64,
    count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    imputed: Option<bool>,
}

/// Writes the table as CSV. The `imputed` column is included when
/// `with_imputed` is set.
pub fn write_table<W: Write>(
    writer: W,
    table: &ObservationTable,
    with_imputed: bool,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (&(od, h), cell) in &table.rows {
        wtr.serialize(TableRow {
            origin: od.origin,
            destination: od.destination,
            interval: h,
            mean_travel_min: cell.mean_travel_min,
            count: cell.count,
            imputed: with_imputed.then_some(cell.imputed),
        })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_table<R: Read>(reader: R, spec: IntervalSpec) -> Result<ObservationTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut table = ObservationTable::new(spec);
    for row in rdr.deserialize::<TableRow>() {
        let row = row?;
        if row.interval >= spec.count {
            return Err(Error::Format(format!(
                "interval {} outside 0..{}",
                row.interval, spec.count
            )));
        }
        table.rows.insert(
            (OdPair::new(row.origin, row.destination), row.interval),
            Cell {
                mean_travel_min: row.mean_travel_min,
                count: row.count,
                imputed: row.imputed.unwrap_or(false),
            },
        );
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(o: StationId, d: StationId, entry: f64, exit: f64) -> AfcRecord {
        AfcRecord {
            card_id: "c".into(),
            origin: o,
            destination: d,
            entry_time_min: entry,
            exit_time_min: exit,
        }
    }

    #[test]
    fn parses_processed_record() {
        let csv =
            "card_id,entry_station,exit_station,entry_time,exit_time\n74873***,19,37,849,875\n";
        let (recs, summary) = parse_afc(csv.as_bytes(), None).unwrap();
        assert_eq!(summary.valid, 1);
        assert_eq!(recs[0].travel_time_min(), 26.0);
    }

    #[test]
    fn fractional_travel_time_is_kept() {
        let csv = "card_id,entry_station,exit_station,entry_time_min,exit_time_min\n1000,5,10,55,65.356\n";
        let (recs, _) = parse_afc(csv.as_bytes(), None).unwrap();
        assert!((recs[0].travel_time_min() - 10.356).abs() < 1e-12);
    }

    #[test]
    fn drops_are_counted_by_reason() {
        let csv = "card_id,entry_station,exit_station,entry_time_min,exit_time_min\n\
                   a,1,2,10,20\nb,1,2,10,20\nc,1,2,10,21\nd,1,1,10,20\ne,1,2,10,10\nf,1,x,1,2\n";
        let (recs, summary) = parse_afc(csv.as_bytes(), None).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(summary.dropped.equal_od, 1);
        assert_eq!(summary.dropped.non_positive_travel, 1);
        assert_eq!(summary.dropped.malformed, 1);
    }

    #[test]
    fn mostly_invalid_input_is_corrupt() {
        let csv = "card_id,entry_station,exit_station,entry_time_min,exit_time_min\n\
                   a,1,2,10,5\nb,1,2,10,20\nc,3,3,1,2\n";
        assert!(matches!(
            parse_afc(csv.as_bytes(), None),
            Err(Error::CorruptInput {
                invalid: 2,
                total: 3
            })
        ));
    }

    #[test]
    fn binning() {
        let spec = IntervalSpec::default();
        assert_eq!(bin_interval(449.0, &spec), Some(0));
        assert_eq!(bin_interval(455.0, &spec), Some(1));
        assert_eq!(bin_interval(419.9, &spec), None);
        assert_eq!(bin_interval(720.0, &spec), None);
        assert_eq!(bin_interval(719.999, &spec), Some(9));
    }

    #[test]
    fn cell_mean_and_count() {
        let spec = IntervalSpec::default();
        let recs = [
            record(1, 2, 430.0, 440.356),
            record(1, 2, 431.0, 442.644),
            record(1, 2, 300.0, 310.0),
        ];
        let table = aggregate(&recs, &spec);
        let cell = table.get(OdPair::new(1, 2), 0).unwrap();
        assert_eq!(cell.count, 2);
        assert!((cell.mean_travel_min - 11.0).abs() < 1e-12);
        assert_eq!(table.len(), 1);
    }

    #[test]
    fn trimming_drops_extremes() {
        let spec = IntervalSpec::default();
        let mut recs: Vec<AfcRecord> = (0..99).map(|_| record(1, 2, 430.0, 440.0)).collect();
        recs.push(record(1, 2, 430.0, 530.0));
        let table = aggregate_trimmed(&recs, &spec, 1.0, 99.0).unwrap();
        let cell = table.get(OdPair::new(1, 2), 0).unwrap();
        assert_eq!(cell.count, 99);
        assert_eq!(cell.mean_travel_min, 10.0);
    }

    #[test]
    fn table_csv_round_trip() {
        let spec = IntervalSpec::default();
        let recs = [record(1, 2, 430.0, 440.1), record(3, 2, 500.0, 517.25)];
        let table = aggregate(&recs, &spec);
        let mut buf = Vec::new();
        write_table(&mut buf, &table, false).unwrap();
        assert_eq!(read_table(buf.as_slice(), spec).unwrap(), table);
    }
}
