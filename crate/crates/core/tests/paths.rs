use proptest::prelude::*;
use urt_estimate::network::{
    load_link_table, ExpandedNetwork, LinkKind, LinkRow, NodeKind, OdPair, PriorTimes,
    ENTRY_EXIT_LINE,
};
use urt_estimate::paths::{
    enumerate_paths, k_shortest_paths, quantize, yen_k_shortest, PathSearchConfig, SearchGraph,
};
use urt_estimate::synth::build_fig3_network;

/// Every simple path, sorted by (cost, nodes).
fn all_simple_paths(
    n: usize,
    arcs: &[(usize, usize, u64)],
    src: usize,
    dst: usize,
    blocked: &[bool],
) -> Vec<(u64, Vec<usize>)> {
    #[allow(clippy::too_many_arguments)]
    fn dfs(
        v: usize,
        dst: usize,
        arcs: &[(usize, usize, u64)],
        blocked: &[bool],
        seen: &mut Vec<bool>,
        nodes: &mut Vec<usize>,
        cost: u64,
        out: &mut Vec<(u64, Vec<usize>)>,
    ) {
        if v == dst {
            out.push((cost, nodes.clone()));
            return;
        }
        for &(a, b, c) in arcs {
            if a == v && !seen[b] && !blocked[b] {
                seen[b] = true;
                nodes.push(b);
                dfs(b, dst, arcs, blocked, seen, nodes, cost + c, out);
                nodes.pop();
                seen[b] = false;
            }
        }
    }
    let mut out = Vec::new();
    if blocked[src] || blocked[dst] || src == dst {
        return out;
    }
    let mut seen = vec![false; n];
    seen[src] = true;
    dfs(
        src,
        dst,
        arcs,
        blocked,
        &mut seen,
        &mut vec![src],
        0,
        &mut out,
    );
    out.sort();
    out
}

fn random_digraph() -> impl Strategy<Value = (usize, Vec<(usize, usize, u64)>)> {
    (2usize..=12).prop_flat_map(|n| {
        let arc = (0..n, 0..n, 1u64..6);
        (Just(n), prop::collection::vec(arc, 0..40)).prop_map(|(n, raw)| {
            // One arc per ordered pair keeps the tie order on node sequences
            // alone.
            let mut arcs: Vec<(usize, usize, u64)> = Vec::new();
            for (a, b, c) in raw {
                if a != b && !arcs.iter().any(|&(x, y, _)| x == a && y == b) {
                    arcs.push((a, b, c));
                }
            }
            (n, arcs)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn yen_matches_exhaustive_enumeration(
        (n, arcs) in random_digraph(),
        k in 1usize..6,
        src_seed in any::<usize>(),
        dst_seed in any::<usize>(),
        block_mask in any::<u16>(),
        detour in prop::option::of(1.0f64..2.0),
    ) {
        let src = src_seed % n;
        let dst = dst_seed % n;
        let blocked: Vec<bool> = (0..n)
            .map(|v| v != src && v != dst && block_mask & (1 << v) != 0)
            .collect();
        let g = SearchGraph::plain(n, arcs.iter().enumerate().map(|(i, &(a, b, c))| (a, b, c, i)));
        let got: Vec<(u64, Vec<usize>)> = yen_k_shortest(&g, src, dst, k, &blocked, detour)
            .into_iter()
            .map(|p| (p.cost, p.nodes))
            .collect();
        let mut want = all_simple_paths(n, &arcs, src, dst, &blocked);
        if let (Some(f), Some(first)) = (detour, want.first()) {
            let cap = (first.0 as f64 * f).floor() as u64;
            want.retain(|p| p.0 <= cap);
        }
        want.truncate(k);
        prop_assert_eq!(got, want);
    }
}

/// A path in network terms: link ids plus its tie-break key.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct OraclePath {
    cost: u64,
    key: Vec<usize>,
    links: Vec<usize>,
}

/// Walks the expanded network directly: gate, entry walk, boarding,
/// riding, alighting, then either an exit walk or a transfer walk that
/// must be followed by another boarding. No node is visited twice and no
/// gate other than the endpoints is touched.
fn brute_force_routes(net: &ExpandedNetwork, weights: &[f64], od: OdPair) -> Vec<OraclePath> {
    let src = net.gate(od.origin).unwrap();
    let dst = net.gate(od.destination).unwrap();
    let mut out = Vec::new();
    let mut seen = vec![false; net.nodes().len()];
    seen[src] = true;
    #[allow(clippy::too_many_arguments)]
    fn go(
        net: &ExpandedNetwork,
        weights: &[f64],
        dst: usize,
        v: usize,
        cost: u64,
        key: &mut Vec<usize>,
        links: &mut Vec<usize>,
        last: Option<LinkKind>,
        seen: &mut Vec<bool>,
        out: &mut Vec<OraclePath>,
    ) {
        if v == dst && last.is_some() {
            out.push(OraclePath {
                cost,
                key: key.clone(),
                links: links.clone(),
            });
            return;
        }
        for &l in net.outgoing(v) {
            let link = net.link(l);
            let allowed = matches!(
                (last, link.kind),
                (None, LinkKind::Entry)
                    | (Some(LinkKind::Entry | LinkKind::Transfer), LinkKind::Board)
                    | (
                        Some(LinkKind::Board | LinkKind::Vehicle),
                        LinkKind::Vehicle | LinkKind::Alight
                    )
                    | (Some(LinkKind::Alight), LinkKind::Exit | LinkKind::Transfer)
            );
            let head = link.head;
            if !allowed || seen[head] {
                continue;
            }
            if net.node(head).kind == NodeKind::GateMachine && head != dst {
                continue;
            }
            let half = usize::from(link.kind == LinkKind::Alight);
            seen[head] = true;
            key.push(2 * head + half);
            links.push(l);
            go(
                net,
                weights,
                dst,
                head,
                cost + quantize(weights[l]),
                key,
                links,
                Some(link.kind),
                seen,
                out,
            );
            links.pop();
            key.pop();
            seen[head] = false;
        }
    }
    go(
        net,
        weights,
        dst,
        src,
        0,
        &mut vec![2 * src],
        &mut Vec::new(),
        None,
        &mut seen,
        &mut out,
    );
    out.sort();
    out
}

fn check_against_oracle(
    net: &ExpandedNetwork,
    weights: &[f64],
    k: usize,
    detour: f64,
) -> Result<(), TestCaseError> {
    for od in net.all_od_pairs() {
        let got = k_shortest_paths(net, od, k, weights, detour).unwrap();
        let mut want = brute_force_routes(net, weights, od);
        if let Some(first) = want.first() {
            let cap = (first.cost as f64 * detour).floor() as u64;
            want.retain(|p| p.cost <= cap);
        }
        want.truncate(k);
        let got_links: Vec<Vec<usize>> = got.paths.iter().map(|p| p.links.clone()).collect();
        let want_links: Vec<Vec<usize>> = want.iter().map(|p| p.links.clone()).collect();
        prop_assert_eq!(got_links, want_links, "od {:?}", od);
        prop_assert_eq!(got.warning.is_some(), want.is_empty());
    }
    Ok(())
}

fn line_table(stations: usize, ring: bool, distances: &[f64]) -> Vec<LinkRow> {
    let mut seq: Vec<u32> = (1..=stations as u32).collect();
    if ring {
        seq.push(1);
    }
    let mut rows = Vec::new();
    for (w, &d) in seq.windows(2).zip(distances) {
        rows.push(LinkRow::new(w[0], w[1], 0, 1, "a", "b", d));
        rows.push(LinkRow::new(w[1], w[0], 1, 1, "b", "a", d));
    }
    for s in 1..=stations as u32 {
        rows.push(LinkRow::new(
            ENTRY_EXIT_LINE + s,
            s,
            2,
            ENTRY_EXIT_LINE,
            "g",
            "g",
            400.0,
        ));
        rows.push(LinkRow::new(
            s,
            ENTRY_EXIT_LINE + s,
            2,
            ENTRY_EXIT_LINE,
            "g",
            "g",
            400.0,
        ));
    }
    rows
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn transit_search_matches_brute_force(
        stations in 2usize..=3,
        ring in any::<bool>(),
        distances in prop::collection::vec(500.0f64..3000.0, 3),
        weight_seed in prop::collection::vec(0u32..5, 64),
        k in 1usize..5,
        detour in prop_oneof![Just(1.5f64), Just(10.0)],
    ) {
        let ring = ring && stations == 3;
        let n_segments = if ring { stations } else { stations - 1 };
        let net = load_link_table(&line_table(stations, ring, &distances[..n_segments]), &PriorTimes::default()).unwrap();
        prop_assert!(net.nodes().len() <= 12);
        // Small integer weights produce many ties.
        let weights: Vec<f64> = (0..net.links().len())
            .map(|i| f64::from(weight_seed[i % weight_seed.len()]) + 1.0)
            .collect();
        check_against_oracle(&net, &weights, k, detour)?;
        check_against_oracle(&net, &net.prior_times(), k, detour)?;
    }
}

#[test]
fn fig3_paths_match_brute_force() {
    let net = build_fig3_network();
    let weights = net.prior_times();
    for k in 1..=4 {
        for detour in [1.5, 100.0] {
            check_against_oracle(&net, &weights, k, detour).unwrap();
        }
    }
}

#[test]
fn fig3_has_one_route_per_od() {
    let net = build_fig3_network();
    let set = enumerate_paths(
        &net,
        &net.all_od_pairs(),
        &PathSearchConfig::default(),
        &net.prior_times(),
    )
    .unwrap();
    assert_eq!(set.len(), 20);
    assert!(set.warnings.is_empty());
    for (i, p) in set.by_od.values().flatten().enumerate() {
        assert_eq!(p.path_id, i);
    }
}

#[test]
fn transfer_route_visits_expected_link_kinds() {
    let net = build_fig3_network();
    let r = k_shortest_paths(&net, OdPair::new(4, 5), 3, &net.prior_times(), 1.5).unwrap();
    assert_eq!(r.paths.len(), 1);
    let kinds: Vec<LinkKind> = r.paths[0].links.iter().map(|&l| net.link(l).kind).collect();
    use LinkKind::*;
    assert_eq!(kinds, vec![Entry, Board, Vehicle, Vehicle, Alight, Exit]);
    assert_eq!(r.paths[0].wait_events.len(), 1);
}

#[test]
fn rejects_degenerate_requests() {
    let net = build_fig3_network();
    let w = net.prior_times();
    assert!(k_shortest_paths(&net, OdPair::new(1, 1), 3, &w, 1.5).is_err());
    assert!(k_shortest_paths(&net, OdPair::new(1, 99), 3, &w, 1.5).is_err());
    assert!(k_shortest_paths(&net, OdPair::new(1, 2), 0, &w, 1.5).is_err());
    let mut bad = w.clone();
    bad[0] = -1.0;
    assert!(k_shortest_paths(&net, OdPair::new(1, 2), 3, &bad, 1.5).is_err());
}
