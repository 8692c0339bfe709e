use std::collections::{BTreeMap, BTreeSet};

use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};
use urt_estimate::afc::{AfcRecord, IntervalSpec};
use urt_estimate::network::{
    load_link_table, LinkKind, LinkRow, OdPair, PriorTimes, ENTRY_EXIT_LINE,
};
use urt_estimate::paths::{enumerate_paths, Path, PathSearchConfig, PathSet};
use urt_estimate::synth::{
    build_fig3_network, build_fig8_network, perturb, sample_afc, sample_ground_truth,
    DemandProfile, GroundTruth, Perturbation, TruthRanges,
};
use urt_estimate::vectorize::VariableIndex;

fn all_paths(net: &urt_estimate::network::ExpandedNetwork) -> PathSet {
    enumerate_paths(
        net,
        &net.all_od_pairs(),
        &PathSearchConfig::default(),
        &net.prior_times(),
    )
    .unwrap()
}

/// Path cost summed straight from the link list.
fn oracle_cost(
    net: &urt_estimate::network::ExpandedNetwork,
    truth: &GroundTruth,
    path: &Path,
    h: usize,
) -> f64 {
    path.links
        .iter()
        .map(|&l| {
            let link = net.link(l);
            match link.kind {
                LinkKind::Board => {
                    truth.t[truth
                        .index
                        .wait_column(link.tail, link.direction, h)
                        .unwrap()]
                }
                LinkKind::Alight => 0.0,
                _ => truth.t[truth.index.link_column(l).unwrap()],
            }
        })
        .sum()
}

#[test]
fn truth_respects_ranges_and_varies_with_seed() {
    let net = build_fig8_network();
    let spec = IntervalSpec::default();
    let ranges = TruthRanges::default();
    let first = sample_ground_truth(&net, &spec, &ranges, 0).unwrap();
    let n_link = first.index.n_link_columns();
    for seed in 1..=100 {
        let g = sample_ground_truth(&net, &spec, &ranges, seed).unwrap();
        assert_ne!(g.t, first.t, "seed {seed}");
        for (c, &v) in g.t.iter().enumerate() {
            assert!(v > 0.0);
            if c >= n_link {
                assert!((ranges.wait.0..ranges.wait.1).contains(&v));
            }
        }
    }
}

#[test]
fn noiseless_travel_time_equals_labeled_route_cost() {
    let net = build_fig8_network();
    let spec = IntervalSpec::default();
    let truth = sample_ground_truth(&net, &spec, &TruthRanges::default(), 4).unwrap();
    let paths = all_paths(&net);
    let demand = DemandProfile::flat(3, spec.count);
    let s = sample_afc(&paths, &net.all_od_pairs(), &truth, &demand, &spec, 9).unwrap();
    let by_id: BTreeMap<usize, &Path> = paths
        .by_od
        .values()
        .flatten()
        .map(|p| (p.path_id, p))
        .collect();
    assert_eq!(s.records.len(), s.labels.len());
    for (r, label) in s.records.iter().zip(&s.labels) {
        assert_eq!(r.card_id, label.card_id);
        let cost = oracle_cost(&net, &truth, by_id[&label.path_id], label.interval);
        assert!(
            (r.travel_time_min() - cost).abs() <= 1e-9,
            "{} vs {cost}",
            r.travel_time_min()
        );
        let lo = spec.interval_start(label.interval);
        assert!(r.entry_time_min >= lo && r.entry_time_min < lo + spec.width_min);
    }
}

#[test]
fn record_counts_follow_the_demand_profile() {
    let net = build_fig3_network();
    let spec = IntervalSpec::default();
    let truth = sample_ground_truth(&net, &spec, &TruthRanges::default(), 1).unwrap();
    let mut demand = DemandProfile::peaked(40, spec.count);
    demand.od_multipliers.push((OdPair::new(1, 3), 2.5));
    let s = sample_afc(
        &all_paths(&net),
        &net.all_od_pairs(),
        &truth,
        &demand,
        &spec,
        2,
    )
    .unwrap();
    let mut counts: BTreeMap<(OdPair, usize), usize> = BTreeMap::new();
    for l in &s.labels {
        *counts.entry((l.od, l.interval)).or_default() += 1;
    }
    for od in net.all_od_pairs() {
        for h in 0..spec.count {
            let m =
                demand.interval_multipliers[h] * if od == OdPair::new(1, 3) { 2.5 } else { 1.0 };
            let want = (40.0 * m).round() as usize;
            assert_eq!(counts.get(&(od, h)).copied().unwrap_or(0), want);
        }
    }
}

#[test]
fn route_frequencies_pass_chi_square() {
    let net = build_fig8_network();
    let spec = IntervalSpec::default();
    let truth = sample_ground_truth(&net, &spec, &TruthRanges::default(), 5).unwrap();
    let paths = all_paths(&net);
    let multi: Vec<OdPair> = paths
        .by_od
        .iter()
        .filter(|(_, p)| p.len() >= 2)
        .map(|(od, _)| *od)
        .take(5)
        .collect();
    assert!(!multi.is_empty());
    let mut demand = DemandProfile::flat(0, spec.count);
    demand.interval_multipliers = vec![0.0; spec.count];
    demand.interval_multipliers[3] = 1.0;
    demand.base_records_per_cell = 10_000;
    let s = sample_afc(&paths, &multi, &truth, &demand, &spec, 17).unwrap();
    for od in multi {
        let options = paths.get(&od);
        let costs: Vec<f64> = options
            .iter()
            .map(|p| oracle_cost(&net, &truth, p, 3))
            .collect();
        let z: f64 = costs.iter().map(|c| (-truth.theta * c).exp()).sum();
        let expected: Vec<f64> = costs
            .iter()
            .map(|c| 10_000.0 * (-truth.theta * c).exp() / z)
            .collect();
        let mut observed = vec![0usize; options.len()];
        for l in s.labels.iter().filter(|l| l.od == od) {
            observed[l.rank] += 1;
        }
        assert_eq!(observed.iter().sum::<usize>(), 10_000);
        let stat: f64 = observed
            .iter()
            .zip(&expected)
            .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
            .sum();
        let critical = ChiSquared::new((options.len() - 1) as f64)
            .unwrap()
            .inverse_cdf(0.99);
        assert!(
            stat <= critical,
            "{od:?}: statistic {stat} above {critical}"
        );
    }
}

fn ring_table() -> Vec<LinkRow> {
    let seq = [1u32, 2, 3, 4, 1];
    let mut rows = Vec::new();
    for w in seq.windows(2) {
        rows.push(LinkRow::new(w[0], w[1], 0, 1, "a", "b", 2000.0));
        rows.push(LinkRow::new(w[1], w[0], 1, 1, "b", "a", 2000.0));
    }
    for s in 1..=4 {
        rows.push(LinkRow::new(
            ENTRY_EXIT_LINE + s,
            s,
            2,
            ENTRY_EXIT_LINE,
            "g",
            "g",
            400.0,
        ));
    }
    rows
}

#[test]
fn equal_cost_routes_split_evenly() {
    let net = load_link_table(&ring_table(), &PriorTimes::default()).unwrap();
    let spec = IntervalSpec::default();
    let od = OdPair::new(1, 3);
    let paths = all_paths(&net);
    assert_eq!(paths.get(&od).len(), 2);
    let index = VariableIndex::build(&net, spec.count);
    let truth = GroundTruth {
        t: vec![2.0; index.total_columns()],
        index,
        theta: 0.7,
    };
    let n = 10_000u64;
    let demand = DemandProfile::flat(n as usize, spec.count);
    let s = sample_afc(&paths, &[od], &truth, &demand, &spec, 23).unwrap();
    let binom = Binomial::new(0.5, n).unwrap();
    for h in 0..spec.count {
        let first = s
            .labels
            .iter()
            .filter(|l| l.interval == h && l.rank == 0)
            .count() as u64;
        let p_low = binom.cdf(first);
        let p_high = 1.0
            - if first == 0 {
                0.0
            } else {
                binom.cdf(first - 1)
            };
        let p_value = (2.0 * p_low.min(p_high)).min(1.0);
        assert!(
            p_value >= 0.01,
            "interval {h}: {first} of {n}, p = {p_value}"
        );
    }
}

fn copies(n: usize, travel: f64) -> Vec<AfcRecord> {
    (0..n)
        .map(|i| AfcRecord {
            card_id: i.to_string(),
            origin: 1 + (i % 7) as u32,
            destination: 20,
            entry_time_min: 430.0,
            exit_time_min: 430.0 + travel,
        })
        .collect()
}

#[test]
fn noise_has_the_stated_spread() {
    let records = copies(10_000, 20.0);
    let p = Perturbation {
        noise_fraction: 0.2,
        od_deletion_fraction: 0.0,
        seed: 31,
    };
    let out = perturb(&records, &p).unwrap();
    let times: Vec<f64> = out.records.iter().map(AfcRecord::travel_time_min).collect();
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((1.9..=2.1).contains(&std), "std {std}");
    assert!((mean - 20.0).abs() < 0.1);
    assert!(times.iter().all(|&t| t > 0.0));
}

#[test]
fn zero_noise_leaves_records_unchanged() {
    let records = copies(100, 12.5);
    let out = perturb(&records, &Perturbation::default()).unwrap();
    assert_eq!(out.records, records);
    assert!(out.deleted_ods.is_empty());
}

#[test]
fn deletion_removes_exactly_the_listed_ods() {
    let records = copies(700, 10.0);
    for fraction in [0.0, 0.2, 0.5, 1.0] {
        let p = Perturbation {
            noise_fraction: 0.0,
            od_deletion_fraction: fraction,
            seed: 8,
        };
        let out = perturb(&records, &p).unwrap();
        let deleted: BTreeSet<OdPair> = out.deleted_ods.iter().copied().collect();
        assert_eq!(deleted.len(), (fraction * 7.0_f64).round() as usize);
        let kept: Vec<&AfcRecord> = records
            .iter()
            .filter(|r| !deleted.contains(&r.od()))
            .collect();
        assert_eq!(out.records.iter().collect::<Vec<_>>(), kept);
    }
    let all = perturb(
        &records,
        &Perturbation {
            noise_fraction: 0.0,
            od_deletion_fraction: 1.0,
            seed: 8,
        },
    )
    .unwrap();
    assert!(all.records.is_empty());
}

#[test]
fn perturbation_is_deterministic() {
    let records = copies(500, 15.0);
    let p = Perturbation {
        noise_fraction: 0.1,
        od_deletion_fraction: 0.3,
        seed: 77,
    };
    assert_eq!(
        perturb(&records, &p).unwrap(),
        perturb(&records, &p).unwrap()
    );
    assert!(perturb(
        &records,
        &Perturbation {
            noise_fraction: 1.5,
            ..p
        }
    )
    .is_err());
}
