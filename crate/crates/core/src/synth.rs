//! Synthetic networks, ground truth and fare-collection records with known
//! route choices, plus the noise and OD-deletion perturbations used for
//! sensitivity runs.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::afc::{AfcRecord, IntervalSpec};
use crate::error::{Error, Result};
use crate::network::{
    load_link_table, ExpandedNetwork, LinkKind, LinkRow, OdPair, PriorTimes, StationId,
    ENTRY_EXIT_LINE, TRANSFER_LINE,
};
use crate::paths::PathSet;
use crate::rng::{self, label};
use crate::vectorize::{Variable, VariableIndex};

fn vehicle_rows(line: u32, stations: &[StationId], distances: &[f64], ring: bool) -> Vec<LinkRow> {
    let mut seq = stations.to_vec();
    if ring {
        seq.push(stations[0]);
    }
    assert_eq!(seq.len() - 1, distances.len());
    let name = |s: StationId| format!("S{s}");
    let mut rows = Vec::new();
    for (w, &d) in seq.windows(2).zip(distances) {
        rows.push(LinkRow::new(
            w[0],
            w[1],
            0,
            line,
            &name(w[0]),
            &name(w[1]),
            d,
        ));
    }
    for (w, &d) in seq.windows(2).zip(distances).rev() {
        rows.push(LinkRow::new(
            w[1],
            w[0],
            1,
            line,
            &name(w[1]),
            &name(w[0]),
            d,
        ));
    }
    rows
}

fn gate_rows(stations: impl IntoIterator<Item = StationId>, distance_m: f64) -> Vec<LinkRow> {
    let mut rows = Vec::new();
    for s in stations {
        let name = format!("S{s}");
        rows.push(LinkRow::new(
            ENTRY_EXIT_LINE + s,
            s,
            2,
            ENTRY_EXIT_LINE,
            &name,
            &name,
            distance_m,
        ));
        rows.push(LinkRow::new(
            s,
            ENTRY_EXIT_LINE + s,
            2,
            ENTRY_EXIT_LINE,
            &name,
            &name,
            distance_m,
        ));
    }
    rows
}

fn transfer_rows(pairs: &[(StationId, StationId)], distance_m: f64) -> Vec<LinkRow> {
    let mut rows = Vec::new();
    for &(a, b) in pairs {
        let (na, nb) = (format!("S{a}"), format!("S{b}"));
        rows.push(LinkRow::new(a, b, 2, TRANSFER_LINE, &na, &nb, distance_m));
        rows.push(LinkRow::new(b, a, 2, TRANSFER_LINE, &nb, &na, distance_m));
    }
    rows
}

/// Two lines crossing at station 2: line 1 runs 1-2-3, line 2 runs 4-2-5.
pub fn fig3_link_table() -> Vec<LinkRow> {
    let mut rows = vehicle_rows(1, &[1, 2, 3], &[1800.0, 2200.0], false);
    rows.extend(vehicle_rows(2, &[4, 2, 5], &[2000.0, 1600.0], false));
    rows.extend(gate_rows(1..=5, 500.0));
    rows
}

/// Three lines and 14 stations. Line 1 runs 1 to 7, line 2 is the ring
/// 8-9-4-10-2-8 and line 3 runs 11-9-3-10-12-13-6-14. Codes above 100 are the
/// ring's and line 3's codes for shared stations, joined by transfer rows.
pub fn fig8_link_table() -> Vec<LinkRow> {
    let mut rows = vehicle_rows(
        1,
        &[1, 2, 3, 4, 5, 6, 7],
        &[1500.0, 1800.0, 2100.0, 1700.0, 2400.0, 1900.0],
        false,
    );
    rows.extend(vehicle_rows(
        2,
        &[8, 9, 104, 10, 102],
        &[1600.0, 2000.0, 1800.0, 2200.0, 1700.0],
        true,
    ));
    rows.extend(vehicle_rows(
        3,
        &[11, 109, 103, 110, 12, 13, 106, 14],
        &[1900.0, 1500.0, 2300.0, 1600.0, 2000.0, 1800.0, 2100.0],
        false,
    ));
    rows.extend(transfer_rows(
        &[(2, 102), (3, 103), (4, 104), (6, 106), (9, 109), (10, 110)],
        600.0,
    ));
    rows.extend(gate_rows(1..=14, 500.0));
    rows
}

pub fn build_fig3_network() -> ExpandedNetwork {
    load_link_table(&fig3_link_table(), &PriorTimes::default()).expect("built-in table is valid")
}

pub fn build_fig8_network() -> ExpandedNetwork {
    load_link_table(&fig8_link_table(), &PriorTimes::default()).expect("built-in table is valid")
}

/// Uniform sampling ranges (minutes) for the ground-truth variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRanges {
    pub vehicle: (f64, f64),
    pub entry_exit: (f64, f64),
    pub transfer: (f64, f64),
    pub wait: (f64, f64),
}

impl Default for TruthRanges {
    fn default() -> Self {
        TruthRanges {
            vehicle: (1.5, 6.0),
            entry_exit: (0.5, 2.0),
            transfer: (1.0, 4.0),
            wait: (0.5, 5.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub index: VariableIndex,
    pub t: Vec<f64>,
    pub theta: f64,
}

pub const DEFAULT_THETA: f64 = 0.3;

/// Draws every variable independently from its range. Waits are drawn per
/// interval, so they vary over the day.
pub fn sample_ground_truth(
    net: &ExpandedNetwork,
    spec: &IntervalSpec,
    ranges: &TruthRanges,
    seed: u64,
) -> Result<GroundTruth> {
    for (lo, hi) in [
        ranges.vehicle,
        ranges.entry_exit,
        ranges.transfer,
        ranges.wait,
    ] {
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("bad truth range [{lo}, {hi}]")));
        }
    }
    let index = VariableIndex::build(net, spec.count);
    let mut rng = rng::stream(seed, &[label::GROUND_TRUTH]);
    let t = index
        .variables()
        .iter()
        .map(|v| {
            let (lo, hi) = match *v {
                Variable::Link(l) => match net.link(l).kind {
                    LinkKind::Vehicle => ranges.vehicle,
                    LinkKind::Transfer => ranges.transfer,
                    _ => ranges.entry_exit,
                },
                Variable::Wait { .. } => ranges.wait,
            };
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        })
        .collect();
    Ok(GroundTruth {
        index,
        t,
        theta: DEFAULT_THETA,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    pub base_records_per_cell: usize,
    pub interval_multipliers: Vec<f64>,
    /// Per-OD multipliers; ODs not listed use 1.
    #[serde(default)]
    pub od_multipliers: Vec<(OdPair, f64)>,
}

impl DemandProfile {
    /// `base` records per cell scaled by a bump peaking about a third of the
    /// way into the window (mid-morning for the default window).
    pub fn peaked(base: usize, intervals: usize) -> Self {
        let peak = 0.3 * intervals as f64;
        let width = (0.2 * intervals as f64).max(1.0);
        let interval_multipliers = (0..intervals)
            .map(|h| {
                let z = (h as f64 + 0.5 - peak) / width;
                0.5 + (-z * z).exp()
            })
            .collect();
        DemandProfile {
            base_records_per_cell: base,
            interval_multipliers,
            od_multipliers: Vec::new(),
        }
    }

    /// The same count in every interval.
    pub fn flat(base: usize, intervals: usize) -> Self {
        DemandProfile {
            base_records_per_cell: base,
            interval_multipliers: vec![1.0; intervals],
            od_multipliers: Vec::new(),
        }
    }

    pub fn od_multiplier(&self, od: OdPair) -> f64 {
        self.od_multipliers
            .iter()
            .find(|(o, _)| *o == od)
            .map_or(1.0, |&(_, m)| m)
    }

    pub fn records_in_cell(&self, od: OdPair, h: usize) -> usize {
        let m = self.interval_multipliers.get(h).copied().unwrap_or(0.0);
        (self.base_records_per_cell as f64 * m * self.od_multiplier(od)).round() as usize
    }

    fn validate(&self, intervals: usize) -> Result<()> {
        if self.interval_multipliers.len() != intervals {
            return Err(Error::Config(format!(
                "{} interval multipliers for {intervals} intervals",
                self.interval_multipliers.len()
            )));
        }
        let all = self
            .interval_multipliers
            .iter()
            .chain(self.od_multipliers.iter().map(|(_, m)| m));
        if all.clone().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::Config(
                "demand multipliers must be non-negative".into(),
            ));
        }
        if !self.interval_multipliers.iter().any(|&m| m > 0.0) {
            return Err(Error::Config("no positive interval multiplier".into()));
        }
        Ok(())
    }
}

/// Which path a synthetic record actually took. Never written to the AFC
/// file itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteLabel {
    pub card_id: String,
    pub od: OdPair,
    pub interval: usize,
    pub path_id: usize,
    pub rank: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampledAfc {
    pub records: Vec<AfcRecord>,
    pub labels: Vec<RouteLabel>,
    pub skipped_ods: Vec<OdPair>,
}

/// Max-shifted logit probabilities of choosing each cost.
pub fn logit_probabilities(costs: &[f64], theta: f64) -> Vec<f64> {
    let utilities: Vec<f64> = costs.iter().map(|&c| -theta * c).collect();
    let m = utilities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = utilities.iter().map(|&u| (u - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// Draws records cell by cell. Each cell has its own random stream derived
/// from the seed and the cell key, so the output does not depend on thread
/// scheduling. Records come out sorted by (OD, interval).
pub fn sample_afc(
    paths: &PathSet,
    ods: &[OdPair],
    truth: &GroundTruth,
    demand: &DemandProfile,
    spec: &IntervalSpec,
    seed: u64,
) -> Result<SampledAfc> {
    demand.validate(spec.count)?;
    if !(truth.theta.is_finite() && truth.theta > 0.0) {
        return Err(Error::Config(format!(
            "theta must be positive, got {}",
            truth.theta
        )));
    }
    let mut ods: Vec<OdPair> = ods.to_vec();
    ods.sort();
    ods.dedup();
    let (covered, skipped_ods): (Vec<OdPair>, Vec<OdPair>) =
        ods.into_iter().partition(|od| !paths.get(od).is_empty());
    let cells: Vec<(OdPair, usize)> = covered
        .iter()
        .flat_map(|&od| (0..spec.count).map(move |h| (od, h)))
        .collect();

    type Draw = (f64, f64, usize, usize);
    let per_cell: Vec<Vec<Draw>> = cells
        .par_iter()
        .map(|&(od, h)| -> Result<Vec<Draw>> {
            let n = demand.records_in_cell(od, h);
            let options = paths.get(&od);
            let costs = options
                .iter()
                .map(|p| truth.index.path_cost(p, h, &truth.t))
                .collect::<Result<Vec<f64>>>()?;
            let probs = logit_probabilities(&costs, truth.theta);
            let mut rng = rng::stream(
                seed,
                &[
                    label::SAMPLE_CELL,
                    od.origin.into(),
                    od.destination.into(),
                    h as u64,
                ],
            );
            let lo = spec.interval_start(h);
            Ok((0..n)
                .map(|_| {
                    let entry = lo + rng.random::<f64>() * spec.width_min;
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut rank = probs.len() - 1;
                    for (k, p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            rank = k;
                            break;
                        }
                    }
                    (entry, costs[rank], options[rank].path_id, rank)
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut out = SampledAfc {
        skipped_ods,
        ..SampledAfc::default()
    };
    for (&(od, h), draws) in cells.iter().zip(per_cell) {
        for (entry, travel, path_id, rank) in draws {
            let card_id = format!("{:09}", out.records.len());
            out.records.push(AfcRecord {
                card_id: card_id.clone(),
                origin: od.origin,
                destination: od.destination,
                entry_time_min: entry,
                exit_time_min: entry + travel,
            });
            out.labels.push(RouteLabel {
                card_id,
                od,
                interval: h,
                path_id,
                rank,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub noise_fraction: f64,
    pub od_deletion_fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbed {
    pub records: Vec<AfcRecord>,
    pub deleted_ods: Vec<OdPair>,
}

/// Applies multiplicative Gaussian noise with standard deviation
/// `noise_fraction / 2` to every travel time, then removes every record of a
/// uniformly chosen `od_deletion_fraction` of the OD pairs present.
pub fn perturb(records: &[AfcRecord], p: &Perturbation) -> Result<Perturbed> {
    for (name, f) in [
        ("noise fraction", p.noise_fraction),
        ("OD deletion fraction", p.od_deletion_fraction),
    ] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Config(format!("{name} {f} outside [0, 1]")));
        }
    }
    let mut out: Vec<AfcRecord> = records.to_vec();

    if p.noise_fraction > 0.0 {
        let normal = Normal::new(0.0, p.noise_fraction / 2.0).expect("finite std");
        let mut rng = rng::stream(p.seed, &[label::NOISE]);
        for r in &mut out {
            let travel = r.travel_time_min();
            let noisy = loop {
                let v = travel * (1.0 + normal.sample(&mut rng));
                if v > 0.0 {
                    break v;
                }
            };
            r.exit_time_min = r.entry_time_min + noisy;
        }
    }

    let ods: Vec<OdPair> = out
        .iter()
        .map(AfcRecord::od)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n_delete = (p.od_deletion_fraction * ods.len() as f64).round() as usize;
    let mut rng = rng::stream(p.seed, &[label::DELETION]);
    let mut deleted_ods: Vec<OdPair> = index::sample(&mut rng, ods.len(), n_delete)
        .into_iter()
        .map(|i| ods[i])
        .collect();
    deleted_ods.sort();
    let deleted: BTreeSet<OdPair> = deleted_ods.iter().copied().collect();
    out.retain(|r| !deleted.contains(&r.od()));
    Ok(Perturbed {
        records: out,
        deleted_ods,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::validate_network;

    #[test]
    fn fig3_shape() {
        let net = build_fig3_network();
        assert_eq!(net.nodes().len(), 23);
        assert!(validate_network(&net).is_empty());
        for s in net.stations() {
            assert_eq!(s.is_transfer, s.station_id == 2);
        }
    }

    #[test]
    fn fig8_shape() {
        let net = build_fig8_network();
        assert!(
            validate_network(&net).is_empty(),
            "{:?}",
            validate_network(&net)
        );
        let transfer: Vec<StationId> = net
            .stations()
            .iter()
            .filter(|s| s.is_transfer)
            .map(|s| s.station_id)
            .collect();
        assert_eq!(transfer, vec![2, 3, 4, 6, 9, 10]);
        assert_eq!(net.stations().len(), 14);
        assert_eq!(net.resolve_station(104), Some(4));
        assert_eq!(net.resolve_station(110), Some(10));
    }

    #[test]
    fn truth_is_reproducible_and_positive() {
        let net = build_fig3_network();
        let spec = IntervalSpec::default();
        let a = sample_ground_truth(&net, &spec, &TruthRanges::default(), 3).unwrap();
        let b = sample_ground_truth(&net, &spec, &TruthRanges::default(), 3).unwrap();
        assert_eq!(a, b);
        assert!(a.t.iter().all(|&v| v > 0.0));
        let c = sample_ground_truth(&net, &spec, &TruthRanges::default(), 4).unwrap();
        assert_ne!(a.t, c.t);
    }

    #[test]
    fn peaked_profile_peaks_mid_morning() {
        let d = DemandProfile::peaked(200, 10);
        let argmax = d
            .interval_multipliers
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!((2..=3).contains(&argmax));
        assert!(d.interval_multipliers.iter().all(|&m| m > 0.0));
    }

    fn trip(o: StationId, d: StationId, travel: f64) -> AfcRecord {
        AfcRecord {
            card_id: "x".into(),
            origin: o,
            destination: d,
            entry_time_min: 430.0,
            exit_time_min: 430.0 + travel,
        }
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let recs = vec![trip(1, 2, 10.0), trip(2, 1, 12.5)];
        let p = perturb(&recs, &Perturbation::default()).unwrap();
        assert_eq!(p.records, recs);
        assert!(p.deleted_ods.is_empty());
    }

    #[test]
    fn full_deletion_empties_the_set() {
        let recs = vec![trip(1, 2, 10.0), trip(2, 1, 12.5), trip(1, 2, 11.0)];
        let p = perturb(
            &recs,
            &Perturbation {
                od_deletion_fraction: 1.0,
                ..Perturbation::default()
            },
        )
        .unwrap();
        assert!(p.records.is_empty());
        assert_eq!(p.deleted_ods, vec![OdPair::new(1, 2), OdPair::new(2, 1)]);
    }
}
