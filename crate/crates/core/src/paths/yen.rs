//! Yen's k-shortest loopless paths on an integer-weighted digraph.
//!
//! Ties are broken by lexicographic node sequence, so the output is the
//! prefix of the list of all simple paths sorted by `(cost, nodes)`.
//!
//! Nodes may be grouped: a path is simple when it visits each *group* at
//! most once. With singleton groups this is ordinary node-simplicity.

use std::collections::BTreeSet;

const INF: u64 = u64::MAX;

#[derive(Clone, Copy, Debug)]
pub struct Arc {
    pub to: usize,
    pub cost: u64,
    pub payload: usize,
}

#[derive(Clone, Debug)]
pub struct SearchGraph {
    out: Vec<Vec<Arc>>,
    rev: Vec<Vec<(usize, usize)>>,
    group: Vec<usize>,
    n_groups: usize,
}

impl SearchGraph {
    /// `arcs` are `(from, to, cost, payload)`; `group[v]` is the simplicity
    /// group of node `v`.
    pub fn new(
        group: Vec<usize>,
        arcs: impl IntoIterator<Item = (usize, usize, u64, usize)>,
    ) -> Self {
        let n = group.len();
        let mut out = vec![Vec::new(); n];
        for (from, to, cost, payload) in arcs {
            out[from].push(Arc { to, cost, payload });
        }
        for list in &mut out {
            list.sort_by_key(|a| (a.to, a.cost, a.payload));
        }
        let mut rev = vec![Vec::new(); n];
        for (u, list) in out.iter().enumerate() {
            for (i, a) in list.iter().enumerate() {
                rev[a.to].push((u, i));
            }
        }
        let n_groups = group.iter().map(|&g| g + 1).max().unwrap_or(0);
        SearchGraph {
            out,
            rev,
            group,
            n_groups,
        }
    }

    /// Singleton groups.
    pub fn plain(n: usize, arcs: impl IntoIterator<Item = (usize, usize, u64, usize)>) -> Self {
        Self::new((0..n).collect(), arcs)
    }

    pub fn len(&self) -> usize {
        self.out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.out.is_empty()
    }

    pub fn arcs(&self, node: usize) -> &[Arc] {
        &self.out[node]
    }

    pub fn group(&self, node: usize) -> usize {
        self.group[node]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SearchPath {
    pub cost: u64,
    pub nodes: Vec<usize>,
    /// Index of each traversed arc within its tail's arc list.
    pub arcs: Vec<usize>,
}

impl SearchPath {
    pub fn payloads<'a>(&'a self, g: &'a SearchGraph) -> impl Iterator<Item = usize> + 'a {
        self.nodes
            .iter()
            .zip(&self.arcs)
            .map(move |(&u, &i)| g.out[u][i].payload)
    }
}

struct SpurSearch<'a> {
    g: &'a SearchGraph,
    target: usize,
    blocked: &'a [bool],
    forbidden: &'a [bool],
    removed: &'a BTreeSet<(usize, usize)>,
    dist: Vec<u64>,
    visited: Vec<bool>,
    nodes: Vec<usize>,
    arcs: Vec<usize>,
    best: Option<SearchPath>,
}

impl SpurSearch<'_> {
    fn allowed(&self, v: usize) -> bool {
        !self.blocked[v] && !self.forbidden[self.g.group[v]]
    }

    /// Distances to the target over allowed nodes and non-removed arcs.
    fn reverse_dijkstra(&mut self) {
        let mut dist = vec![INF; self.g.len()];
        let mut heap = BTreeSet::new();
        dist[self.target] = 0;
        heap.insert((0u64, self.target));
        while let Some((d, v)) = heap.pop_first() {
            if d > dist[v] {
                continue;
            }
            for &(u, i) in &self.g.rev[v] {
                if !self.allowed(u) || self.removed.contains(&(u, i)) {
                    continue;
                }
                let nd = d.saturating_add(self.g.out[u][i].cost);
                if nd < dist[u] {
                    if dist[u] != INF {
                        heap.remove(&(dist[u], u));
                    }
                    dist[u] = nd;
                    heap.insert((nd, u));
                }
            }
        }
        self.dist = dist;
    }

    fn candidates(&self, u: usize) -> impl Iterator<Item = (usize, Arc)> + '_ {
        self.g.out[u]
            .iter()
            .copied()
            .enumerate()
            .filter(move |&(i, a)| {
                self.allowed(a.to)
                    && !self.visited[self.g.group[a.to]]
                    && self.dist[a.to] != INF
                    && !self.removed.contains(&(u, i))
            })
    }

    /// Depth-first search restricted to arcs on some shortest path. The
    /// first hit, explored in node order, is the lexicographically smallest
    /// shortest path.
    fn tight(&mut self, u: usize, cost: u64, goal: u64) -> bool {
        if u == self.target {
            return true;
        }
        let next: Vec<_> = self.candidates(u).collect();
        for (i, a) in next {
            if cost + a.cost + self.dist[a.to] != goal {
                continue;
            }
            self.enter(u, i, a.to);
            if self.tight(a.to, cost + a.cost, goal) {
                return true;
            }
            self.leave(a.to);
        }
        false
    }

    /// Branch and bound over all arcs, for when group constraints rule out
    /// every unconstrained shortest path.
    fn bound(&mut self, u: usize, cost: u64) {
        if u == self.target {
            let better = self.best.as_ref().is_none_or(|b| cost < b.cost);
            if better {
                self.best = Some(SearchPath {
                    cost,
                    nodes: self.nodes.clone(),
                    arcs: self.arcs.clone(),
                });
            }
            return;
        }
        let next: Vec<_> = self.candidates(u).collect();
        for (i, a) in next {
            let lb = cost + a.cost + self.dist[a.to];
            if self.best.as_ref().is_some_and(|b| lb >= b.cost) {
                continue;
            }
            self.enter(u, i, a.to);
            self.bound(a.to, cost + a.cost);
            self.leave(a.to);
        }
    }

    fn enter(&mut self, _u: usize, arc: usize, v: usize) {
        self.arcs.push(arc);
        self.nodes.push(v);
        self.visited[self.g.group[v]] = true;
    }

    fn leave(&mut self, v: usize) {
        self.arcs.pop();
        self.nodes.pop();
        self.visited[self.g.group[v]] = false;
    }
}

/// Cheapest group-simple path from `spur` to `target`, lexicographically
/// smallest among equals.
fn spur_path(
    g: &SearchGraph,
    spur: usize,
    target: usize,
    blocked: &[bool],
    forbidden: &[bool],
    removed: &BTreeSet<(usize, usize)>,
) -> Option<SearchPath> {
    let mut s = SpurSearch {
        g,
        target,
        blocked,
        forbidden,
        removed,
        dist: Vec::new(),
        visited: vec![false; g.n_groups],
        nodes: vec![spur],
        arcs: Vec::new(),
        best: None,
    };
    s.reverse_dijkstra();
    let goal = s.dist[spur];
    if goal == INF {
        return None;
    }
    s.visited[g.group[spur]] = true;
    if s.tight(spur, 0, goal) {
        return Some(SearchPath {
            cost: goal,
            nodes: s.nodes,
            arcs: s.arcs,
        });
    }
    s.bound(spur, 0);
    s.best
}

/// Up to `k` group-simple paths from `source` to `target`, ascending by
/// `(cost, nodes)`. Nodes with `blocked[v]` are never visited. When
/// `detour_factor` is set, paths costing more than that multiple of the
/// shortest path are dropped.
pub fn yen_k_shortest(
    g: &SearchGraph,
    source: usize,
    target: usize,
    k: usize,
    blocked: &[bool],
    detour_factor: Option<f64>,
) -> Vec<SearchPath> {
    assert_eq!(blocked.len(), g.len(), "blocked mask must cover every node");
    if k == 0 || blocked[source] || blocked[target] || source == target {
        return Vec::new();
    }
    let no_groups = vec![false; g.n_groups];
    let Some(first) = spur_path(g, source, target, blocked, &no_groups, &BTreeSet::new()) else {
        return Vec::new();
    };
    let max_cost = detour_factor.map(|f| (first.cost as f64 * f).floor() as u64);
    let within = |c: u64| max_cost.is_none_or(|m| c <= m);

    let mut accepted = vec![first];
    let mut candidates: BTreeSet<SearchPath> = BTreeSet::new();
    let mut forbidden = vec![false; g.n_groups];

    while accepted.len() < k {
        let last = accepted.last().expect("non-empty").clone();
        for i in 0..last.nodes.len() - 1 {
            let spur = last.nodes[i];
            let root_nodes = &last.nodes[..=i];
            let root_arcs = &last.arcs[..i];

            let mut removed = BTreeSet::new();
            for p in &accepted {
                if p.nodes.len() > i + 1 && p.nodes[..=i] == *root_nodes {
                    removed.insert((spur, p.arcs[i]));
                }
            }
            // Root nodes before the spur are off limits; the spur's own group
            // is marked visited by the spur search itself.
            forbidden.iter_mut().for_each(|f| *f = false);
            for &n in &root_nodes[..i] {
                forbidden[g.group[n]] = true;
            }

            if let Some(tail) = spur_path(g, spur, target, blocked, &forbidden, &removed) {
                let root_cost: u64 = root_nodes
                    .iter()
                    .zip(root_arcs)
                    .map(|(&u, &a)| g.out[u][a].cost)
                    .sum();
                let mut nodes = root_nodes.to_vec();
                nodes.extend_from_slice(&tail.nodes[1..]);
                let mut arcs = root_arcs.to_vec();
                arcs.extend_from_slice(&tail.arcs);
                let cand = SearchPath {
                    cost: root_cost + tail.cost,
                    nodes,
                    arcs,
                };
                if within(cand.cost) && !accepted.contains(&cand) {
                    candidates.insert(cand);
                }
            }
        }
        match candidates.pop_first() {
            Some(next) => accepted.push(next),
            None => break,
        }
    }
    accepted
}
