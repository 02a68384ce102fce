//! Simple undirected host graphs: construction, generators, squaring, and
//! the edge-list file format.
//!
//! Vertices are `0..n`. Adjacency lists are kept sorted, which makes edge
//! queries a binary search and serialization canonical.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::util::{derive_seed, fnv1a64};

/// Simple undirected graph with sorted per-vertex neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<usize>>,
    regular_degree: Option<usize>,
}

impl Graph {
    /// Builds a graph from an edge list, validating simplicity.
    ///
    /// Rejects self-loops, duplicate edges, and out-of-range endpoints.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Graph> {
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) out of range for n = {n}"
                )));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at {u}")));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        for (v, list) in adj.iter_mut().enumerate() {
            list.sort_unstable();
            if list.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidGraph(format!("duplicate edge at vertex {v}")));
            }
        }
        Ok(Graph::from_sorted_adj(adj))
    }

    fn from_sorted_adj(adj: Vec<Vec<usize>>) -> Graph {
        let regular_degree = match adj.first() {
            Some(first) => {
                let d = first.len();
                if adj.iter().all(|l| l.len() == d) {
                    Some(d)
                } else {
                    None
                }
            }
            None => None,
        };
        Graph {
            adj,
            regular_degree,
        }
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    /// Degree if the graph is regular.
    pub fn regular_degree(&self) -> Option<usize> {
        self.regular_degree
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].binary_search(&v).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(|l| l.len()).sum::<usize>() / 2
    }

    /// All edges as (u, v) with u < v, in sorted order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for u in 0..self.n() {
            for &v in &self.adj[u] {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// BFS distances from `from`; `usize::MAX` marks unreachable vertices.
    pub fn bfs_distances(&self, from: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n()];
        let mut queue = std::collections::VecDeque::new();
        dist[from] = 0;
        queue.push_back(from);
        while let Some(u) = queue.pop_front() {
            for &w in &self.adj[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        if self.n() == 0 {
            return true;
        }
        self.bfs_distances(0).iter().all(|&d| d != usize::MAX)
    }

    /// True iff `u` and `v` are distinct and at distance at most 2.
    ///
    /// Checks adjacency, then scans for a common neighbor; does not build
    /// the square, so it can serve as an independent oracle for it.
    pub fn within_distance_two(&self, u: usize, v: usize) -> bool {
        if u == v {
            return false;
        }
        if self.has_edge(u, v) {
            return true;
        }
        // Sorted-list intersection.
        let (a, b) = (&self.adj[u], &self.adj[v]);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }

    /// The square: adds an edge between every pair at distance exactly 2.
    pub fn square(&self) -> Graph {
        let n = self.n();
        let mut adj: Vec<Vec<usize>> = Vec::with_capacity(n);
        let mut mark = vec![false; n];
        for u in 0..n {
            let mut touched = Vec::new();
            for &v in self.neighbors(u) {
                if !mark[v] {
                    mark[v] = true;
                    touched.push(v);
                }
                for &w in &self.adj[v] {
                    if w != u && !mark[w] {
                        mark[w] = true;
                        touched.push(w);
                    }
                }
            }
            touched.sort_unstable();
            for &v in &touched {
                mark[v] = false;
            }
            adj.push(touched);
        }
        Graph::from_sorted_adj(adj)
    }

    /// Stable content hash of (n, edge list), for trial records.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(16 + 16 * self.edge_count());
        bytes.extend_from_slice(&(self.n() as u64).to_le_bytes());
        for (u, v) in self.edges() {
            bytes.extend_from_slice(&(u as u64).to_le_bytes());
            bytes.extend_from_slice(&(v as u64).to_le_bytes());
        }
        fnv1a64(&bytes)
    }
}

// ---------------------------------------------------------------------------
// Named constructors
// ---------------------------------------------------------------------------

pub fn complete(n: usize) -> Graph {
    let adj = (0..n)
        .map(|u| (0..n).filter(|&v| v != u).collect())
        .collect();
    Graph::from_sorted_adj(adj)
}

pub fn cycle(n: usize) -> Graph {
    assert!(n >= 3, "cycle needs n >= 3");
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    Graph::from_edges(n, &edges).expect("cycle is simple")
}

pub fn path_graph(n: usize) -> Graph {
    let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
    Graph::from_edges(n, &edges).expect("path is simple")
}

/// The Petersen graph: outer 5-cycle 0..5, inner pentagram 5..10, spokes.
pub fn petersen() -> Graph {
    let mut edges = Vec::new();
    for i in 0..5 {
        edges.push((i, (i + 1) % 5));
        edges.push((5 + i, 5 + (i + 2) % 5));
        edges.push((i, 5 + i));
    }
    Graph::from_edges(10, &edges).expect("petersen is simple")
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Random d-regular graph by the pairing model with edge-swap repair.
///
/// Stubs are shuffled and paired; loops and duplicate edges are then repaired
/// by random switches with clean edges. A bounded number of repair rounds and
/// full restarts keeps the result deterministic per seed.
pub fn gen_random_regular(n: usize, d: usize, seed: u64) -> Result<Graph> {
    if d >= n {
        return Err(Error::Infeasible(format!("d = {d} must be < n = {n}")));
    }
    if d == 0 || !(n * d).is_multiple_of(2) {
        return Err(Error::Infeasible(format!("n*d = {} must be even and d >= 1", n * d)));
    }
    let restarts = 100;
    for attempt in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, attempt));
        if let Some(g) = try_pairing(n, d, &mut rng) {
            return Ok(g);
        }
    }
    Err(Error::RetriesExhausted(restarts as usize))
}

fn try_pairing(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Option<Graph> {
    let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, d)).collect();
    stubs.shuffle(rng);
    let half = stubs.len() / 2;
    let mut pairs: Vec<(usize, usize)> = (0..half).map(|i| (stubs[i], stubs[i + half])).collect();

    let mut seen = std::collections::HashSet::with_capacity(half * 2);
    let is_bad = |p: (usize, usize), seen: &std::collections::HashSet<(usize, usize)>| {
        p.0 == p.1 || seen.contains(&ordered(p))
    };
    let mut bad: Vec<usize> = Vec::new();
    for (i, &p) in pairs.iter().enumerate() {
        if is_bad(p, &seen) {
            bad.push(i);
        } else {
            seen.insert(ordered(p));
        }
    }

    // Repair each defective pair by switching with a random clean pair.
    let budget = 200 * (bad.len() + 1);
    let mut steps = 0;
    while let Some(&i) = bad.last() {
        steps += 1;
        if steps > budget {
            return None;
        }
        let j = rng.random_range(0..half);
        if j == i || bad.contains(&j) {
            continue;
        }
        let (a, b) = pairs[i];
        let (c, e) = pairs[j];
        // Proposed switch: (a, c) and (b, e).
        let p1 = (a, c);
        let p2 = (b, e);
        if p1.0 == p1.1 || p2.0 == p2.1 {
            continue;
        }
        seen.remove(&ordered((c, e)));
        if seen.contains(&ordered(p1)) || seen.contains(&ordered(p2)) || ordered(p1) == ordered(p2)
        {
            seen.insert(ordered((c, e)));
            continue;
        }
        seen.insert(ordered(p1));
        seen.insert(ordered(p2));
        pairs[i] = p1;
        pairs[j] = p2;
        bad.pop();
    }
    Graph::from_edges(n, &pairs).ok()
}

fn ordered(p: (usize, usize)) -> (usize, usize) {
    if p.0 <= p.1 {
        p
    } else {
        (p.1, p.0)
    }
}

/// Paley graph on a prime q ≡ 1 (mod 4): u ~ v iff u − v is a nonzero
/// quadratic residue. (q−1)/2-regular with λ = (1 + √q)/2.
pub fn gen_paley(q: usize) -> Result<Graph> {
    if !is_prime(q) {
        return Err(Error::Infeasible(format!("q = {q} is not prime")));
    }
    if q % 4 != 1 {
        return Err(Error::Infeasible(format!("q = {q} is not 1 mod 4")));
    }
    let mut residue = vec![false; q];
    for x in 1..q {
        residue[x * x % q] = true;
    }
    let mut edges = Vec::new();
    for u in 0..q {
        for v in (u + 1)..q {
            if residue[(v - u) % q] {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(q, &edges)
}

fn is_prime(q: usize) -> bool {
    if q < 2 {
        return false;
    }
    let mut i = 2;
    while i * i <= q {
        if q.is_multiple_of(i) {
            return false;
        }
        i += 1;
    }
    true
}

// ---------------------------------------------------------------------------
// Edge-list file format: header "n m", then one sorted "u v" pair per line.
// ---------------------------------------------------------------------------

pub fn write_edge_list<W: Write>(g: &Graph, mut w: W) -> Result<()> {
    writeln!(w, "{} {}", g.n(), g.edge_count())?;
    for (u, v) in g.edges() {
        writeln!(w, "{u} {v}")?;
    }
    Ok(())
}

pub fn read_edge_list<R: BufRead>(r: R) -> Result<Graph> {
    let mut lines = r.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or(Error::Parse { line: 1, msg: "empty file".into() })?;
    let header = header?;
    let mut it = header.split_whitespace();
    let n: usize = parse_field(it.next(), 1, "vertex count")?;
    let m: usize = parse_field(it.next(), 1, "edge count")?;
    let mut edges = Vec::with_capacity(m);
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let u: usize = parse_field(it.next(), idx + 1, "endpoint")?;
        let v: usize = parse_field(it.next(), idx + 1, "endpoint")?;
        edges.push((u, v));
    }
    if edges.len() != m {
        return Err(Error::Parse {
            line: edges.len() + 2,
            msg: format!("expected {m} edges, found {}", edges.len()),
        });
    }
    Graph::from_edges(n, &edges)
}

pub(crate) fn parse_field<T: std::str::FromStr>(
    tok: Option<&str>,
    line: usize,
    what: &str,
) -> Result<T> {
    tok.ok_or(Error::Parse { line, msg: format!("missing {what}") })?
        .parse()
        .map_err(|_| Error::Parse { line, msg: format!("bad {what}") })
}

pub fn save_graph(g: &Graph, path: &std::path::Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_edge_list(g, std::io::BufWriter::new(f))
}

pub fn load_graph(path: &std::path::Path) -> Result<Graph> {
    let f = std::fs::File::open(path)?;
    read_edge_list(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_simple_regular(g: &Graph, d: usize) {
        for v in 0..g.n() {
            assert_eq!(g.degree(v), d, "vertex {v} degree");
            assert!(!g.has_edge(v, v));
            for &w in g.neighbors(v) {
                assert!(g.has_edge(w, v), "adjacency must be symmetric");
            }
            assert!(g.neighbors(v).windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn random_regular_4_3_is_k4_for_any_seed() {
        for seed in 0..8 {
            let g = gen_random_regular(4, 3, seed).unwrap();
            assert_eq!(g, complete(4));
        }
    }

    #[test]
    fn random_regular_6_2_is_disjoint_cycles() {
        for seed in 0..8 {
            let g = gen_random_regular(6, 2, seed).unwrap();
            assert_simple_regular(&g, 2);
        }
    }

    #[test]
    fn random_regular_rejects_infeasible() {
        assert!(gen_random_regular(5, 3, 0).is_err()); // odd n*d
        assert!(gen_random_regular(4, 4, 0).is_err()); // d >= n
    }

    #[test]
    fn random_regular_large_dense_repairs() {
        let g = gen_random_regular(1000, 50, 7).unwrap();
        assert_simple_regular(&g, 50);
        assert!(g.is_connected());
    }

    #[test]
    fn random_regular_deterministic_per_seed() {
        let a = gen_random_regular(60, 6, 3).unwrap();
        let b = gen_random_regular(60, 6, 3).unwrap();
        assert_eq!(a, b);
        let c = gen_random_regular(60, 6, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn paley_5_is_c5() {
        let g = gen_paley(5).unwrap();
        assert_eq!(g.n(), 5);
        assert_eq!(g.regular_degree(), Some(2));
        assert!(g.has_edge(0, 1) && g.has_edge(0, 4));
        assert!(!g.has_edge(0, 2));
    }

    #[test]
    fn paley_rejects_bad_q() {
        assert!(gen_paley(9).is_err()); // not prime
        assert!(gen_paley(7).is_err()); // 3 mod 4
    }

    #[test]
    fn paley_13_is_6_regular() {
        let g = gen_paley(13).unwrap();
        assert_simple_regular(&g, 6);
    }

    #[test]
    fn square_of_c5_is_k5() {
        assert_eq!(cycle(5).square(), complete(5));
    }

    #[test]
    fn square_of_path4_adds_exactly_ac_bd() {
        let p = path_graph(4);
        let sq = p.square();
        assert_eq!(sq.edge_count(), 5);
        assert!(sq.has_edge(0, 2) && sq.has_edge(1, 3));
        assert!(!sq.has_edge(0, 3));
    }

    #[test]
    fn square_of_petersen_is_k10() {
        assert_eq!(petersen().square(), complete(10));
    }

    #[test]
    fn petersen_structure() {
        let g = petersen();
        assert_simple_regular(&g, 3);
        assert_eq!(g.edge_count(), 15);
    }

    #[test]
    fn edge_list_roundtrip_petersen() {
        let g = petersen();
        let mut buf = Vec::new();
        write_edge_list(&g, &mut buf).unwrap();
        let back = read_edge_list(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn truncated_edge_list_reports_line() {
        let text = "4 3\n0 1\n0 2\n";
        let err = read_edge_list(std::io::Cursor::new(text)).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other}"),
        }
    }

    proptest! {
        // u ~ v in square(g) iff dist_g(u, v) in {1, 2}, with BFS as oracle.
        #[test]
        fn square_matches_bfs_oracle(n in 2usize..=64, seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut edges = Vec::new();
            for u in 0..n {
                for v in (u + 1)..n {
                    if rng.random_range(0..4) == 0 {
                        edges.push((u, v));
                    }
                }
            }
            let g = Graph::from_edges(n, &edges).unwrap();
            let sq = g.square();
            for u in 0..n {
                let dist = g.bfs_distances(u);
                for (v, &dv) in dist.iter().enumerate() {
                    if u == v { continue; }
                    let expect = dv == 1 || dv == 2;
                    prop_assert_eq!(sq.has_edge(u, v), expect, "u={} v={}", u, v);
                }
            }
        }

        #[test]
        fn generated_regular_graphs_are_simple_and_regular(
            n in 6usize..40, half_d in 1usize..4, seed in 0u64..20
        ) {
            let d = 2 * half_d;
            prop_assume!(d < n);
            let g = gen_random_regular(n, d, seed).unwrap();
            for v in 0..n {
                prop_assert_eq!(g.degree(v), d);
                prop_assert!(!g.has_edge(v, v));
                for &w in g.neighbors(v) {
                    prop_assert!(g.has_edge(w, v));
                }
            }
        }
    }
}
