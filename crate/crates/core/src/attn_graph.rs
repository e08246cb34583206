//! Thresholded attention graphs and their topological features.
//!
//! The directed graph has an edge `i -> j` whenever `w_ij >= thr` and
//! `i != j`. Its undirected shadow joins `{i, j}` if either direction passes.
//! Directed features: strongly connected components, edge count, simple
//! cycles, average degree. Undirected features: Betti numbers, greedy
//! matching number, chordality.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::AttentionMap;

/// Default early-stop bound for simple cycle enumeration.
pub const DEFAULT_CYCLE_CAP: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGraph {
    node_count: usize,
    threshold: f64,
    /// Sorted out-neighbour lists.
    out_adj: Vec<Vec<usize>>,
    /// Sorted undirected neighbour lists.
    und_adj: Vec<Vec<usize>>,
}

impl AttentionGraph {
    /// Builds the graph of `weights` at `threshold`. Self-loops are never added.
    pub fn from_map(weights: AttentionMap<'_>, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidThreshold(threshold));
        }
        let k = weights.size();
        let mut edges = Vec::new();
        for i in 0..k {
            for j in 0..k {
                if i != j && weights.get(i, j) >= threshold {
                    edges.push((i, j));
                }
            }
        }
        let mut g = AttentionGraph::from_edges(k, edges);
        g.threshold = threshold;
        Ok(g)
    }

    /// Builds a graph from explicit directed edges; self-loops and duplicates
    /// are dropped. The threshold is recorded as NaN.
    pub fn from_edges(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut out_adj = vec![Vec::new(); node_count];
        let mut und_adj = vec![Vec::new(); node_count];
        for (i, j) in edges {
            assert!(i < node_count && j < node_count, "edge ({i}, {j}) out of range");
            if i == j {
                continue;
            }
            out_adj[i].push(j);
            und_adj[i].push(j);
            und_adj[j].push(i);
        }
        for list in out_adj.iter_mut().chain(und_adj.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        AttentionGraph {
            node_count,
            threshold: f64::NAN,
            out_adj,
            und_adj,
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn out_neighbors(&self, v: usize) -> &[usize] {
        &self.out_adj[v]
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.und_adj[v]
    }

    pub fn edge_count(&self) -> usize {
        self.out_adj.iter().map(Vec::len).sum()
    }

    pub fn directed_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out_adj
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().map(move |&j| (i, j)))
    }

    /// Undirected edges as `(min, max)` pairs in sorted order.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.und_adj
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    pub fn undirected_edge_count(&self) -> usize {
        self.und_adj.iter().map(Vec::len).sum::<usize>() / 2
    }
}

pub fn build_graph(weights: AttentionMap<'_>, threshold: f64) -> Result<AttentionGraph> {
    AttentionGraph::from_map(weights, threshold)
}

/// Number of strongly connected components, singletons included
/// (iterative Tarjan).
pub fn strongly_connected_components(g: &AttentionGraph) -> usize {
    scc_labels(g, |_| true).1
}

/// Tarjan's algorithm restricted to the vertices accepted by `keep`.
/// Returns per-vertex component labels (`usize::MAX` for excluded vertices)
/// and the number of components.
fn scc_labels(g: &AttentionGraph, keep: impl Fn(usize) -> bool) -> (Vec<usize>, usize) {
    const UNSEEN: usize = usize::MAX;
    let n = g.node_count;
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![UNSEEN; n];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut count = 0;
    // (vertex, position in its neighbour list)
    let mut call: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNSEEN || !keep(root) {
            continue;
        }
        call.push((root, 0));
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            let ns = &g.out_adj[v];
            if *pos < ns.len() {
                let w = ns[*pos];
                *pos += 1;
                if !keep(w) {
                    continue;
                }
                if index[w] == UNSEEN {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp[w] = count;
                        if w == v {
                            break;
                        }
                    }
                    count += 1;
                }
            }
        }
    }
    (comp, count)
}

/// Counts directed simple cycles with Johnson's circuit search, stopping
/// once `cap` cycles have been found. Returns `(count, cap_hit)`; when the
/// cap is reached the count is `cap`.
pub fn simple_cycle_count(g: &AttentionGraph, cap: usize) -> (usize, bool) {
    assert!(cap >= 1, "cycle cap must be positive");
    let mut search = CycleSearch::new(g.node_count, cap);
    let n = g.node_count;
    let mut start = 0;
    while start < n {
        // strongly connected component containing the least vertex >= start
        // that lies on a cycle of the subgraph induced by {start, ...}
        let (comp, _) = scc_labels(g, |v| v >= start);
        let mut sizes = vec![0usize; n];
        for v in start..n {
            sizes[comp[v]] += 1;
        }
        let Some(s) = (start..n).find(|&v| sizes[comp[v]] > 1) else {
            break;
        };
        let target = comp[s];
        let members: Vec<bool> = (0..n).map(|v| v >= s && comp[v] == target).collect();
        for v in (0..n).filter(|&v| members[v]) {
            search.blocked[v] = false;
            search.block_map[v].clear();
        }
        search.circuit(g, &members, s, s);
        if search.count >= cap {
            return (cap, true);
        }
        start = s + 1;
    }
    (search.count, false)
}

struct CycleSearch {
    blocked: Vec<bool>,
    block_map: Vec<Vec<usize>>,
    count: usize,
    cap: usize,
}

impl CycleSearch {
    fn new(n: usize, cap: usize) -> Self {
        CycleSearch {
            blocked: vec![false; n],
            block_map: vec![Vec::new(); n],
            count: 0,
            cap,
        }
    }

    fn unblock(&mut self, u: usize) {
        let mut work = vec![u];
        while let Some(u) = work.pop() {
            if !self.blocked[u] {
                continue;
            }
            self.blocked[u] = false;
            work.append(&mut self.block_map[u]);
        }
    }

    // Recursion depth is bounded by the component size (<= 1024 tokens).
    fn circuit(&mut self, g: &AttentionGraph, members: &[bool], v: usize, s: usize) -> bool {
        let mut found = false;
        self.blocked[v] = true;
        for &w in &g.out_adj[v] {
            if self.count >= self.cap {
                return true;
            }
            if !members[w] {
                continue;
            }
            if w == s {
                self.count += 1;
                found = true;
            } else if !self.blocked[w] && self.circuit(g, members, w, s) {
                found = true;
            }
        }
        if found {
            self.unblock(v);
        } else {
            for &w in &g.out_adj[v] {
                if members[w] && !self.block_map[w].contains(&v) {
                    self.block_map[w].push(v);
                }
            }
        }
        found
    }
}

/// Mean of in-degree + out-degree over all nodes.
pub fn average_vertex_degree(g: &AttentionGraph) -> f64 {
    if g.node_count == 0 {
        return 0.0;
    }
    2.0 * g.edge_count() as f64 / g.node_count as f64
}

/// `(betti0, betti1)` of the undirected shadow: connected components and
/// cycle rank `|E| - V + betti0`.
pub fn betti_numbers(g: &AttentionGraph) -> (usize, usize) {
    let mut parent: Vec<usize> = (0..g.node_count).collect();
    fn find(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    let mut components = g.node_count;
    for (a, b) in g.undirected_edges() {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
            components -= 1;
        }
    }
    let betti1 = g.undirected_edge_count() + components - g.node_count;
    (components, betti1)
}

/// Greedy maximal matching over undirected edges taken in `(min, max)`
/// order. This is maximal, not necessarily maximum.
pub fn greedy_matching(g: &AttentionGraph) -> Vec<(usize, usize)> {
    let mut matched = vec![false; g.node_count];
    let mut out = Vec::new();
    for (a, b) in g.undirected_edges() {
        if !matched[a] && !matched[b] {
            matched[a] = true;
            matched[b] = true;
            out.push((a, b));
        }
    }
    out
}

pub fn matching_number(g: &AttentionGraph) -> usize {
    greedy_matching(g).len()
}

/// Maximum cardinality search order (first visited first). Ties go to the
/// smallest vertex index.
pub fn maximum_cardinality_search(g: &AttentionGraph) -> Vec<usize> {
    let n = g.node_count;
    // buckets[w] holds unnumbered vertices with weight w, as a doubly linked list
    let mut weight = vec![0usize; n];
    let mut numbered = vec![false; n];
    let mut head: Vec<Option<usize>> = vec![None; n + 1];
    let mut next: Vec<Option<usize>> = vec![None; n];
    let mut prev: Vec<Option<usize>> = vec![None; n];

    let link = |v: usize, w: usize, head: &mut Vec<Option<usize>>, next: &mut Vec<Option<usize>>, prev: &mut Vec<Option<usize>>| {
        next[v] = head[w];
        prev[v] = None;
        if let Some(h) = head[w] {
            prev[h] = Some(v);
        }
        head[w] = Some(v);
    };
    let unlink = |v: usize, w: usize, head: &mut Vec<Option<usize>>, next: &mut Vec<Option<usize>>, prev: &mut Vec<Option<usize>>| {
        match prev[v] {
            Some(p) => next[p] = next[v],
            None => head[w] = next[v],
        }
        if let Some(nx) = next[v] {
            prev[nx] = prev[v];
        }
    };

    for v in (0..n).rev() {
        link(v, 0, &mut head, &mut next, &mut prev);
    }
    let mut order = Vec::with_capacity(n);
    let mut top = 0usize;
    for _ in 0..n {
        while head[top].is_none() {
            top -= 1;
        }
        let v = head[top].expect("non-empty bucket");
        unlink(v, top, &mut head, &mut next, &mut prev);
        numbered[v] = true;
        order.push(v);
        for &u in &g.und_adj[v] {
            if !numbered[u] {
                unlink(u, weight[u], &mut head, &mut next, &mut prev);
                weight[u] += 1;
                link(u, weight[u], &mut head, &mut next, &mut prev);
                top = top.max(weight[u]);
            }
        }
    }
    order
}

/// Chordality test: maximum cardinality search, then the Tarjan–Yannakakis
/// check that the reverse visit order is a perfect elimination ordering.
pub fn is_chordal(g: &AttentionGraph) -> bool {
    let n = g.node_count;
    // elimination order: reverse of the visit order
    let mut order = maximum_cardinality_search(g);
    order.reverse();
    let mut position = vec![0usize; n];
    for (i, &v) in order.iter().enumerate() {
        position[v] = i;
    }
    // Each vertex's later-eliminated neighbours must form a clique. It is
    // enough that every later neighbour is adjacent to the first of them
    // (the follower), which a marker array checks in O(|V| + |E|).
    let mut follower = vec![usize::MAX; n];
    let mut index = vec![usize::MAX; n];
    for (i, &v) in order.iter().enumerate() {
        follower[v] = v;
        index[v] = i;
        for &w in &g.und_adj[v] {
            if position[w] < i {
                index[w] = i;
                if follower[w] == w {
                    follower[w] = v;
                }
            }
        }
        for &w in &g.und_adj[v] {
            if position[w] < i && index[follower[w]] < i {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphFeatureVector {
    pub scc_count: usize,
    pub edge_count: usize,
    pub simple_cycle_count: usize,
    pub cycle_cap_hit: bool,
    pub avg_vertex_degree: f64,
    pub betti0: usize,
    pub betti1: usize,
    pub matching_number: usize,
    pub chordal: bool,
}

impl GraphFeatureVector {
    pub const NAMES: [&'static str; 9] = [
        "scc_count",
        "edge_count",
        "simple_cycle_count",
        "cycle_cap_hit",
        "avg_vertex_degree",
        "betti0",
        "betti1",
        "matching_number",
        "chordal",
    ];

    /// Names of the two features added on top of the base graph set.
    pub const NOVEL: [&'static str; 2] = ["matching_number", "chordal"];

    pub fn values(&self) -> [f64; 9] {
        [
            self.scc_count as f64,
            self.edge_count as f64,
            self.simple_cycle_count as f64,
            f64::from(u8::from(self.cycle_cap_hit)),
            self.avg_vertex_degree,
            self.betti0 as f64,
            self.betti1 as f64,
            self.matching_number as f64,
            f64::from(u8::from(self.chordal)),
        ]
    }

    pub fn of_graph(g: &AttentionGraph, cycle_cap: usize) -> Self {
        let (simple_cycle_count, cycle_cap_hit) = simple_cycle_count(g, cycle_cap);
        let (betti0, betti1) = betti_numbers(g);
        GraphFeatureVector {
            scc_count: strongly_connected_components(g),
            edge_count: g.edge_count(),
            simple_cycle_count,
            cycle_cap_hit,
            avg_vertex_degree: average_vertex_degree(g),
            betti0,
            betti1,
            matching_number: matching_number(g),
            chordal: is_chordal(g),
        }
    }
}

/// All graph features of `weights` at `threshold`, from one graph build.
pub fn graph_features(weights: AttentionMap<'_>, threshold: f64) -> Result<GraphFeatureVector> {
    let g = build_graph(weights, threshold)?;
    Ok(GraphFeatureVector::of_graph(&g, DEFAULT_CYCLE_CAP))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: usize) -> AttentionGraph {
        AttentionGraph::from_edges(
            n,
            (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))),
        )
    }

    fn undirected(n: usize, edges: &[(usize, usize)]) -> AttentionGraph {
        AttentionGraph::from_edges(n, edges.iter().copied())
    }

    #[test]
    fn threshold_extremes() {
        let w = [0.4f32, 0.3, 0.3, 0.2, 0.5, 0.3, 0.1, 0.1, 0.8];
        let map = AttentionMap::new(3, &w);
        let g = build_graph(map, 1.0).unwrap();
        assert_eq!(g.edge_count(), 0);
        let g = build_graph(map, 0.0).unwrap();
        assert_eq!(g.edge_count(), 6);
        assert!(matches!(build_graph(map, 1.5), Err(Error::InvalidThreshold(_))));
        assert!(matches!(build_graph(map, -0.1), Err(Error::InvalidThreshold(_))));
    }

    #[test]
    fn scc_examples() {
        let dag = AttentionGraph::from_edges(5, [(0, 1), (1, 2), (0, 3), (3, 4), (2, 4)]);
        assert_eq!(strongly_connected_components(&dag), 5);
        let g = AttentionGraph::from_edges(3, [(0, 1), (1, 0), (1, 2)]);
        assert_eq!(strongly_connected_components(&g), 2);
        assert_eq!(strongly_connected_components(&complete(4)), 1);
    }

    #[test]
    fn cycle_examples() {
        let dag = AttentionGraph::from_edges(4, [(0, 1), (1, 2), (0, 3)]);
        assert_eq!(simple_cycle_count(&dag, 500), (0, false));
        let two = AttentionGraph::from_edges(2, [(0, 1), (1, 0)]);
        assert_eq!(simple_cycle_count(&two, 500), (1, false));
        assert_eq!(simple_cycle_count(&complete(4), 500), (20, false));
        assert_eq!(simple_cycle_count(&complete(4), 20), (20, true));
        assert_eq!(simple_cycle_count(&complete(4), 7), (7, true));
        // K6 has 409 simple cycles, K7 has 2365
        assert_eq!(simple_cycle_count(&complete(6), 500), (409, false));
        assert_eq!(simple_cycle_count(&complete(7), 500), (500, true));
    }

    #[test]
    fn degree_examples() {
        assert_eq!(average_vertex_degree(&AttentionGraph::from_edges(3, [])), 0.0);
        assert_eq!(average_vertex_degree(&AttentionGraph::from_edges(2, [(0, 1)])), 1.0);
        assert_eq!(average_vertex_degree(&complete(4)), 6.0);
    }

    #[test]
    fn betti_examples() {
        let tree = undirected(6, &[(0, 1), (0, 2), (1, 3), (1, 4), (2, 5)]);
        assert_eq!(betti_numbers(&tree), (1, 0));
        let triangles = undirected(6, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]);
        assert_eq!(betti_numbers(&triangles), (2, 2));
        assert_eq!(betti_numbers(&AttentionGraph::from_edges(7, [])), (7, 0));
        // reciprocal edges collapse to one undirected edge
        let g = AttentionGraph::from_edges(2, [(0, 1), (1, 0)]);
        assert_eq!(betti_numbers(&g), (1, 0));
    }

    #[test]
    fn matching_examples() {
        assert_eq!(matching_number(&AttentionGraph::from_edges(4, [])), 0);
        let path = undirected(4, &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(greedy_matching(&path), vec![(0, 1), (2, 3)]);
        // greedy takes (1,2) first on this labelling and stops at 1
        let path = undirected(4, &[(0, 2), (1, 2), (2, 3), (1, 0)]);
        assert_eq!(matching_number(&path), 2);
        let star = undirected(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        assert_eq!(matching_number(&star), 1);
    }

    #[test]
    fn chordality_examples() {
        let c4 = undirected(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        assert!(!is_chordal(&c4));
        let c4_chord = undirected(4, &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]);
        assert!(is_chordal(&c4_chord));
        let c5 = undirected(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]);
        assert!(!is_chordal(&c5));
        let forest = undirected(7, &[(0, 1), (1, 2), (3, 4), (3, 5)]);
        assert!(is_chordal(&forest));
        assert!(is_chordal(&complete(5)));
        // C4 plus a pendant and an isolated vertex
        let g = undirected(6, &[(0, 1), (1, 2), (2, 3), (3, 0), (3, 4)]);
        assert!(!is_chordal(&g));
    }

    #[test]
    fn mcs_visits_every_vertex_once() {
        let g = undirected(6, &[(0, 1), (1, 2), (4, 5)]);
        let mut order = maximum_cardinality_search(&g);
        order.sort_unstable();
        assert_eq!(order, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn features_at_full_threshold() {
        let w = [0.5f32, 0.5, 0.25, 0.75];
        let f = graph_features(AttentionMap::new(2, &w), 1.0).unwrap();
        assert_eq!(
            f,
            GraphFeatureVector {
                scc_count: 2,
                edge_count: 0,
                simple_cycle_count: 0,
                cycle_cap_hit: false,
                avg_vertex_degree: 0.0,
                betti0: 2,
                betti1: 0,
                matching_number: 0,
                chordal: true,
            }
        );
    }
}
