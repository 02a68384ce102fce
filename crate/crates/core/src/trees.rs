//! Bounded-degree trees and the decomposition toolkit the embedder feeds
//! on: leaf/parent census, bare-path extraction, the spike transform,
//! balanced tree divisions, separated subsets, and stage plans.
//!
//! A "length-k bare path" has k+1 vertices, every one of degree exactly 2
//! in the ambient tree, endpoints included. Distances are edge counts.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::util::derive_seed;

/// A tree on vertices `0..n` with a declared degree bound `delta`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    adj: Vec<Vec<usize>>,
    delta: usize,
}

impl Tree {
    /// Validates connectivity, edge count n−1, and the degree bound.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], delta: usize) -> Result<Tree> {
        if n == 0 {
            return Err(Error::InvalidTree("empty tree".into()));
        }
        if edges.len() != n - 1 {
            return Err(Error::InvalidTree(format!(
                "{} edges for {} vertices",
                edges.len(),
                n
            )));
        }
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n || u == v {
                return Err(Error::InvalidTree(format!("bad edge ({u}, {v})")));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in adj.iter_mut() {
            list.sort_unstable();
            if list.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidTree("duplicate edge".into()));
            }
        }
        let t = Tree { adj, delta };
        if !t.is_connected() {
            return Err(Error::InvalidTree("not connected".into()));
        }
        let max_deg = t.max_degree();
        if max_deg > delta {
            return Err(Error::InvalidTree(format!(
                "max degree {max_deg} exceeds delta {delta}"
            )));
        }
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n().saturating_sub(1));
        for u in 0..self.n() {
            for &v in &self.adj[u] {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    fn is_connected(&self) -> bool {
        self.bfs_distances(0).iter().all(|&d| d != usize::MAX)
    }

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

    /// BFS order and parent array rooted at `root`.
    pub fn bfs_order(&self, root: usize) -> (Vec<usize>, Vec<usize>) {
        let mut parent = vec![usize::MAX; self.n()];
        let mut order = Vec::with_capacity(self.n());
        let mut queue = std::collections::VecDeque::new();
        parent[root] = root;
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &w in &self.adj[u] {
                if parent[w] == usize::MAX {
                    parent[w] = u;
                    queue.push_back(w);
                }
            }
        }
        (order, parent)
    }

    /// Induced subtree on `keep` (which must be connected in `self`),
    /// re-numbered 0..keep.len(). Returns the new tree and new→old ids.
    pub fn induced(&self, keep: &[usize]) -> Result<(Tree, Vec<usize>)> {
        let mut sorted = keep.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut old_to_new = vec![usize::MAX; self.n()];
        for (new, &old) in sorted.iter().enumerate() {
            old_to_new[old] = new;
        }
        let mut edges = Vec::new();
        for &u in &sorted {
            for &v in &self.adj[u] {
                if u < v && old_to_new[v] != usize::MAX {
                    edges.push((old_to_new[u], old_to_new[v]));
                }
            }
        }
        let t = Tree::from_edges(sorted.len(), &edges, self.delta)?;
        Ok((t, sorted))
    }
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Random tree by degree-capped weighted attachment; when `leaf_target` is
/// set (a fraction of n), regenerates with an adapted leaf-attachment
/// weight until the leaf count lands within ±10% of the target.
pub fn gen_tree(n: usize, delta: usize, leaf_target: Option<f64>, seed: u64) -> Result<Tree> {
    if n < 2 || delta < 2 {
        return Err(Error::Infeasible(format!("need n >= 2 and delta >= 2, got ({n}, {delta})")));
    }
    if let Some(frac) = leaf_target {
        if !(0.0..=1.0).contains(&frac) {
            return Err(Error::Infeasible(format!("leaf_target {frac} out of [0,1]")));
        }
        let want = frac * n as f64;
        if delta == 2 && (want - 2.0).abs() > 0.1 * want {
            // A Δ=2 tree is a path with exactly two leaves.
            return Err(Error::Infeasible(format!(
                "delta = 2 forces 2 leaves, target was {want:.1}"
            )));
        }
    }
    let attempts = 400;
    let mut leaf_weight = 1.0_f64;
    for attempt in 0..attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, attempt));
        let t = attach_tree(n, delta, leaf_weight, &mut rng);
        let Some(frac) = leaf_target else {
            return Ok(t);
        };
        let want = frac * n as f64;
        let got = t.adj.iter().filter(|l| l.len() == 1).count() as f64;
        if (got - want).abs() <= 0.10 * want {
            return Ok(t);
        }
        // More leaf-attachment suppresses leaf creation.
        leaf_weight = (leaf_weight * (got / want).powf(1.5)).clamp(1e-4, 1e4);
    }
    Err(Error::RetriesExhausted(attempts as usize))
}

fn attach_tree(n: usize, delta: usize, leaf_weight: f64, rng: &mut ChaCha8Rng) -> Tree {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for v in 1..n {
        let weights: Vec<f64> = (0..v)
            .map(|u| {
                if adj[u].len() >= delta {
                    0.0
                } else if adj[u].len() <= 1 {
                    leaf_weight
                } else {
                    1.0
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let mut pick = rng.random_range(0.0..total);
        let mut chosen = 0;
        for (u, w) in weights.iter().enumerate() {
            if *w > 0.0 {
                chosen = u;
                if pick < *w {
                    break;
                }
                pick -= *w;
            }
        }
        adj[chosen].push(v);
        adj[v].push(chosen);
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
    }
    Tree { adj, delta }
}

pub fn path_tree(n: usize) -> Tree {
    let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
    Tree::from_edges(n, &edges, 2).expect("path is a tree")
}

pub fn star_tree(n: usize) -> Tree {
    let edges: Vec<_> = (1..n).map(|i| (0, i)).collect();
    Tree::from_edges(n, &edges, n - 1).expect("star is a tree")
}

/// Spine of ⌈n/2⌉ vertices with the rest attached as legs.
pub fn caterpillar_tree(n: usize, delta: usize, seed: u64) -> Result<Tree> {
    if n < 2 || delta < 3 {
        return Err(Error::Infeasible("caterpillar needs n >= 2, delta >= 3".into()));
    }
    let spine = n.div_ceil(2);
    let mut edges: Vec<_> = (1..spine).map(|i| (i - 1, i)).collect();
    let mut capacity: Vec<usize> = (0..spine)
        .map(|i| {
            let spine_deg = if spine == 1 {
                0
            } else if i == 0 || i == spine - 1 {
                1
            } else {
                2
            };
            delta - spine_deg
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for leg in spine..n {
        let open: Vec<usize> = (0..spine).filter(|&i| capacity[i] > 0).collect();
        if open.is_empty() {
            return Err(Error::Infeasible(format!(
                "no spine capacity for {n} vertices at delta {delta}"
            )));
        }
        let host = open[rng.random_range(0..open.len())];
        capacity[host] -= 1;
        edges.push((host, leg));
    }
    Tree::from_edges(n, &edges, delta)
}

/// Complete binary tree truncated to n vertices.
pub fn binary_tree(n: usize) -> Tree {
    let edges: Vec<_> = (1..n).map(|i| ((i - 1) / 2, i)).collect();
    Tree::from_edges(n, &edges, 3).expect("binary heap shape is a tree")
}

/// Center with `legs` paths of near-equal length.
pub fn spider_tree(n: usize, legs: usize) -> Result<Tree> {
    if legs == 0 || n < legs + 1 {
        return Err(Error::Infeasible(format!("spider needs n > legs, got ({n}, {legs})")));
    }
    let mut edges = Vec::with_capacity(n - 1);
    let mut next = 1;
    for leg in 0..legs {
        let len = (n - 1) / legs + usize::from(leg < (n - 1) % legs);
        let mut prev = 0;
        for _ in 0..len {
            edges.push((prev, next));
            prev = next;
            next += 1;
        }
    }
    Tree::from_edges(n, &edges, legs.max(2))
}

// ---------------------------------------------------------------------------
// Census and decomposition
// ---------------------------------------------------------------------------

/// Leaves L and parents-of-leaves P, both sorted.
pub fn leaf_census(t: &Tree) -> (Vec<usize>, Vec<usize>) {
    let leaves: Vec<usize> = (0..t.n()).filter(|&v| t.degree(v) == 1).collect();
    let mut parents: Vec<usize> = leaves.iter().map(|&l| t.neighbors(l)[0]).collect();
    parents.sort_unstable();
    parents.dedup();
    (leaves, parents)
}

/// Vertex-disjoint bare paths of length `k` (k+1 vertices each).
#[derive(Debug, Clone)]
pub struct BarePathSet {
    pub paths: Vec<Vec<usize>>,
    pub k: usize,
}

/// Greedy decomposition: each maximal chain of degree-2 vertices is cut
/// into ⌊len/(k+1)⌋ pieces aligned from the chain's start. The count meets
/// the structural floor ⌈n/(k+1) − (2ℓ−2)⌉ for a tree with ℓ leaves.
pub fn extract_bare_paths(t: &Tree, k: usize) -> BarePathSet {
    assert!(k >= 1, "path length must be at least 1");
    let mut visited = vec![false; t.n()];
    let mut paths = Vec::new();
    for u in 0..t.n() {
        if t.degree(u) == 2 {
            continue;
        }
        for &v in t.neighbors(u) {
            if t.degree(v) != 2 || visited[v] {
                continue;
            }
            // Walk the chain starting at v, away from u.
            let mut chain = Vec::new();
            let (mut prev, mut cur) = (u, v);
            loop {
                visited[cur] = true;
                chain.push(cur);
                let next = *t
                    .neighbors(cur)
                    .iter()
                    .find(|&&w| w != prev)
                    .expect("degree-2 vertex has two neighbors");
                if t.degree(next) != 2 {
                    break;
                }
                prev = cur;
                cur = next;
            }
            for piece in chain.chunks_exact(k + 1) {
                paths.push(piece.to_vec());
            }
        }
    }
    BarePathSet { paths, k }
}

/// The floor ⌈n/(k+1) − (2ℓ−2)⌉ on the number of length-k bare paths in an
/// n-vertex tree with ℓ leaves; may be non-positive.
pub fn bare_path_floor(n: usize, k: usize, leaves: usize) -> i64 {
    let val = n as f64 / (k + 1) as f64 - (2 * leaves) as f64 + 2.0;
    val.ceil() as i64
}

/// True iff `path` is a bare path of `t`: consecutive vertices adjacent,
/// every vertex of ambient degree exactly 2.
pub fn is_bare_path(t: &Tree, path: &[usize]) -> bool {
    path.iter().all(|&v| t.degree(v) == 2)
        && path.windows(2).all(|w| t.neighbors(w[0]).contains(&w[1]))
}

/// Record of replacing bare paths a–b–c–d with the spike {ab, bc, bd}.
///
/// Both trees share the vertex set; in the transformed tree each `c` has
/// become a leaf hanging off `b`, and any host embedding of the transformed
/// tree yields the original tree in the host's square (c and d share the
/// neighbor b).
#[derive(Debug, Clone)]
pub struct SpikeRecord {
    pub original_tree: Tree,
    pub transformed_tree: Tree,
    pub replaced: Vec<[usize; 4]>,
}

/// Rewires each length-3 bare path a–b–c–d to edges {ab, bc, bd}.
pub fn spike_transform(t: &Tree, paths: &BarePathSet) -> Result<SpikeRecord> {
    if paths.k != 3 {
        return Err(Error::Precondition(format!(
            "spike transform needs length-3 paths, got k = {}",
            paths.k
        )));
    }
    let mut used = vec![false; t.n()];
    for p in &paths.paths {
        if p.len() != 4 || !is_bare_path(t, p) {
            return Err(Error::Precondition(format!("{p:?} is not a length-3 bare path")));
        }
        for &v in p {
            if used[v] {
                return Err(Error::Precondition(format!("paths overlap at vertex {v}")));
            }
            used[v] = true;
        }
    }
    let mut drop = std::collections::HashSet::new();
    let mut add = Vec::new();
    let mut replaced = Vec::new();
    for p in &paths.paths {
        let (b, c, d) = (p[1], p[2], p[3]);
        drop.insert((c.min(d), c.max(d)));
        add.push((b, d));
        replaced.push([p[0], p[1], p[2], p[3]]);
    }
    let mut edges: Vec<(usize, usize)> = t
        .edges()
        .into_iter()
        .filter(|e| !drop.contains(e))
        .collect();
    edges.extend(add);
    let delta = if replaced.is_empty() { t.delta } else { t.delta.max(3) };
    let transformed = Tree::from_edges(t.n(), &edges, delta)?;
    for r in &replaced {
        debug_assert_eq!(transformed.degree(r[2]), 1, "spiked c must be a leaf");
    }
    Ok(SpikeRecord {
        original_tree: t.clone(),
        transformed_tree: transformed,
        replaced,
    })
}

/// Two subtrees sharing one vertex whose union is the whole tree, each
/// holding at least |Q|/3 of the marked set.
#[derive(Debug, Clone)]
pub struct Divide {
    pub side_a: Vec<usize>,
    pub side_b: Vec<usize>,
    pub shared: usize,
}

/// Splits `t` at a Q-weighted centroid so both sides keep ≥ |Q|/3 of `q`.
///
/// Walk: starting from vertex 0, descend into any child subtree holding
/// more than half of Q. At the stopping vertex every component of T − c
/// holds ≤ |Q|/2, and the components are grouped (heaviest alone when it
/// reaches |Q|/3, otherwise greedily in attachment order) so both sides
/// make the third.
pub fn divide_tree(t: &Tree, q: &[usize]) -> Result<Divide> {
    if q.is_empty() {
        return Err(Error::Precondition("Q must be nonempty".into()));
    }
    let n = t.n();
    let mut in_q = vec![false; n];
    for &v in q {
        if v >= n {
            return Err(Error::Precondition(format!("Q vertex {v} out of range")));
        }
        in_q[v] = true;
    }
    let total: usize = in_q.iter().filter(|&&b| b).count();

    // Subtree weights rooted at 0.
    let (order, parent) = t.bfs_order(0);
    let mut sub = vec![0usize; n];
    for &v in order.iter().rev() {
        sub[v] += usize::from(in_q[v]);
        if parent[v] != v {
            sub[parent[v]] += sub[v];
        }
    }
    let mut c = 0;
    'walk: loop {
        for &x in t.neighbors(c) {
            if parent[x] == c && 2 * sub[x] > total {
                c = x;
                continue 'walk;
            }
        }
        break;
    }

    // Components of T − c with their Q-weights, keyed by attachment order.
    let mut comp_of = vec![usize::MAX; n];
    let mut comps: Vec<(Vec<usize>, usize)> = Vec::new();
    for &start in t.neighbors(c) {
        if comp_of[start] != usize::MAX {
            continue;
        }
        let mut verts = Vec::new();
        let mut weight = 0;
        let mut queue = std::collections::VecDeque::new();
        comp_of[start] = comps.len();
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            verts.push(u);
            weight += usize::from(in_q[u]);
            for &w in t.neighbors(u) {
                if w != c && comp_of[w] == usize::MAX {
                    comp_of[w] = comps.len();
                    queue.push_back(w);
                }
            }
        }
        comps.push((verts, weight));
    }

    let c_weight = usize::from(in_q[c]);
    let mut a_idx: Vec<usize> = Vec::new();
    let heaviest = (0..comps.len()).max_by_key(|&i| comps[i].1);
    match heaviest {
        Some(h) if 3 * comps[h].1 >= total => a_idx.push(h),
        _ => {
            let mut a_weight = c_weight;
            for (i, (_, w)) in comps.iter().enumerate() {
                if 3 * a_weight >= total {
                    break;
                }
                a_idx.push(i);
                a_weight += w;
            }
        }
    }

    let in_a = |i: usize| a_idx.contains(&i);
    let mut side_a = vec![c];
    let mut side_b = vec![c];
    for (i, (verts, _)) in comps.iter().enumerate() {
        if in_a(i) {
            side_a.extend_from_slice(verts);
        } else {
            side_b.extend_from_slice(verts);
        }
    }
    side_a.sort_unstable();
    side_b.sort_unstable();

    let count = |side: &[usize]| side.iter().filter(|&&v| in_q[v]).count();
    debug_assert!(3 * count(&side_a) >= total, "side A holds < |Q|/3");
    debug_assert!(3 * count(&side_b) >= total, "side B holds < |Q|/3");
    Ok(Divide { side_a, side_b, shared: c })
}

/// Greedy ball-exclusion: repeatedly keep the lowest-id vertex of X and
/// drop every X-vertex within distance sep−1 of it. The result is pairwise
/// ≥ sep apart and has size at least |X| / (3·Δ^(sep−1)).
pub fn separated_subset(t: &Tree, x: &[usize], sep: usize) -> Vec<usize> {
    assert!(sep >= 2 && sep.is_multiple_of(2), "separation must be even and >= 2");
    let mut alive: Vec<usize> = x.to_vec();
    alive.sort_unstable();
    alive.dedup();
    let mut in_x = vec![false; t.n()];
    for &v in &alive {
        in_x[v] = true;
    }
    let mut q = Vec::new();
    for &v in alive.iter() {
        if !in_x[v] {
            continue;
        }
        q.push(v);
        // Drop X-vertices within distance sep−1 by bounded BFS.
        let mut dist = std::collections::HashMap::new();
        let mut queue = std::collections::VecDeque::new();
        dist.insert(v, 0usize);
        queue.push_back(v);
        in_x[v] = false;
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            if du == sep - 1 {
                continue;
            }
            for &w in t.neighbors(u) {
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                    e.insert(du + 1);
                    in_x[w] = false;
                    queue.push_back(w);
                }
            }
        }
    }
    q
}

// ---------------------------------------------------------------------------
// Stage plans
// ---------------------------------------------------------------------------

/// Iterated division of a tree into subtrees T₁…T_ℓ glued at cut vertices,
/// with a (4i+8)-separated target set Qᵢ inside each stage.
#[derive(Debug, Clone)]
pub struct StagePlan {
    /// Sorted vertex lists of T₁…T_ℓ, in the planned tree's ids.
    pub subtrees: Vec<Vec<usize>>,
    /// t₁…t_ℓ; stage i is embedded rooted at tᵢ.
    pub cut_vertices: Vec<usize>,
    /// Q₁…Q_ℓ; Qᵢ ⊆ V(Tᵢ), (4i+8)-separated, excluding tᵢ.
    pub separated_sets: Vec<Vec<usize>>,
}

impl StagePlan {
    pub fn ell(&self) -> usize {
        self.subtrees.len()
    }
}

/// Builds the stage plan: each step divides the remaining subtree so both
/// sides keep a third of the remaining Q, peels off the side containing
/// the current cut vertex, and extracts a (4i+8)-separated Qᵢ from it.
///
/// Fails with `PlanInfeasible` if some |Qᵢ| drops below `size_floor(i)`
/// (stage indices are 1-based in the floor callback).
pub fn build_stage_plan(
    t_prime: &Tree,
    q: &[usize],
    ell: usize,
    t1: usize,
    size_floor: &dyn Fn(usize) -> usize,
) -> Result<StagePlan> {
    if ell == 0 {
        return Err(Error::Precondition("ell must be >= 1".into()));
    }
    if t1 >= t_prime.n() {
        return Err(Error::Precondition(format!("t1 = {t1} out of range")));
    }
    if q.is_empty() {
        return Err(Error::PlanInfeasible("Q is empty".into()));
    }

    // Current subtree, as a concrete tree plus a map to t_prime ids.
    let mut cur = t_prime.clone();
    let mut cur_to_orig: Vec<usize> = (0..t_prime.n()).collect();
    let mut t_cur = t1;
    let in_q: std::collections::HashSet<usize> = q.iter().copied().collect();

    let mut subtrees = Vec::with_capacity(ell);
    let mut cuts = Vec::with_capacity(ell);
    let mut seps = Vec::with_capacity(ell);

    struct Remainder {
        tree: Tree,
        to_orig: Vec<usize>,
        shared: usize,
    }

    for i in 1..=ell {
        let (stage_vertices, stage_root, next): (Vec<usize>, usize, Option<Remainder>) =
            if i == ell {
                (cur_to_orig.clone(), t_cur, None)
            } else {
                let q_cur: Vec<usize> = (0..cur.n())
                    .filter(|&v| in_q.contains(&cur_to_orig[v]))
                    .collect();
                if q_cur.is_empty() {
                    return Err(Error::PlanInfeasible(format!("no Q left at stage {i}")));
                }
                let div = divide_tree(&cur, &q_cur)?;
                let (take, rest) = if div.side_a.contains(&t_cur) {
                    (div.side_a, div.side_b)
                } else {
                    (div.side_b, div.side_a)
                };
                let stage: Vec<usize> = take.iter().map(|&v| cur_to_orig[v]).collect();
                let root = t_cur;
                let (rest_tree, rest_ids) = cur.induced(&rest)?;
                let shared = rest_ids
                    .iter()
                    .position(|&old| old == div.shared)
                    .expect("shared vertex is on both sides");
                let to_orig: Vec<usize> = rest_ids.iter().map(|&v| cur_to_orig[v]).collect();
                (stage, root, Some(Remainder { tree: rest_tree, to_orig, shared }))
            };

        // Separated target set inside this stage, via the stage's own tree.
        let root_orig = cur_to_orig[stage_root];
        let stage_tree_ids: Vec<usize> = stage_vertices.clone();
        let (stage_tree, stage_new_to_orig) = {
            // stage_vertices are t_prime ids; induce from t_prime directly.
            t_prime.induced(&stage_tree_ids)?
        };
        let q_in_stage: Vec<usize> = (0..stage_tree.n())
            .filter(|&v| in_q.contains(&stage_new_to_orig[v]))
            .collect();
        let sep = 4 * i + 8;
        let mut qi: Vec<usize> = separated_subset(&stage_tree, &q_in_stage, sep)
            .into_iter()
            .map(|v| stage_new_to_orig[v])
            .collect();
        qi.retain(|&v| v != root_orig);
        if qi.len() < size_floor(i) {
            return Err(Error::PlanInfeasible(format!(
                "stage {i}: |Q_{i}| = {} below floor {}",
                qi.len(),
                size_floor(i)
            )));
        }

        subtrees.push(stage_vertices);
        cuts.push(root_orig);
        seps.push(qi);

        if let Some(rem) = next {
            cur = rem.tree;
            cur_to_orig = rem.to_orig;
            t_cur = rem.shared;
        }
    }

    Ok(StagePlan {
        subtrees,
        cut_vertices: cuts,
        separated_sets: seps,
    })
}

// ---------------------------------------------------------------------------
// Parent-array file format: header "n delta", then one line of n parents,
// 1-based with the root marked 0.
// ---------------------------------------------------------------------------

pub fn write_parent_array<W: Write>(t: &Tree, mut w: W) -> Result<()> {
    writeln!(w, "{} {}", t.n(), t.delta())?;
    let (_, parent) = t.bfs_order(0);
    let fields: Vec<String> = (0..t.n())
        .map(|v| {
            if parent[v] == v {
                "0".to_string()
            } else {
                (parent[v] + 1).to_string()
            }
        })
        .collect();
    writeln!(w, "{}", fields.join(" "))?;
    Ok(())
}

pub fn read_parent_array<R: BufRead>(r: R) -> Result<Tree> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or(Error::Parse { line: 1, msg: "empty file".into() })??;
    let mut it = header.split_whitespace();
    let n: usize = crate::graphs::parse_field(it.next(), 1, "vertex count")?;
    let delta: usize = crate::graphs::parse_field(it.next(), 1, "delta")?;
    let body = lines
        .next()
        .ok_or(Error::Parse { line: 2, msg: "missing parent line".into() })??;
    let parents: Vec<usize> = body
        .split_whitespace()
        .map(|tok| crate::graphs::parse_field(Some(tok), 2, "parent"))
        .collect::<Result<_>>()?;
    if parents.len() != n {
        return Err(Error::Parse {
            line: 2,
            msg: format!("expected {n} parents, found {}", parents.len()),
        });
    }
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut roots = 0;
    for (v, &p) in parents.iter().enumerate() {
        if p == 0 {
            roots += 1;
        } else {
            edges.push((p - 1, v));
        }
    }
    if roots != 1 {
        return Err(Error::Parse { line: 2, msg: format!("{roots} roots, expected 1") });
    }
    Tree::from_edges(n, &edges, delta)
}

pub fn save_tree(t: &Tree, path: &std::path::Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_parent_array(t, std::io::BufWriter::new(f))
}

pub fn load_tree(path: &std::path::Path) -> Result<Tree> {
    let f = std::fs::File::open(path)?;
    read_parent_array(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gen_tree_minimal_is_single_edge() {
        let t = gen_tree(2, 2, None, 5).unwrap();
        assert_eq!(t.n(), 2);
        assert_eq!(t.edges(), vec![(0, 1)]);
    }

    #[test]
    fn gen_tree_delta2_is_a_path() {
        let t = gen_tree(10, 2, None, 3).unwrap();
        let leaves = (0..10).filter(|&v| t.degree(v) == 1).count();
        assert_eq!(leaves, 2);
        assert!((0..10).all(|v| t.degree(v) <= 2));
    }

    #[test]
    fn gen_tree_hits_leaf_target() {
        let t = gen_tree(500, 3, Some(0.3), 9).unwrap();
        let leaves = (0..500).filter(|&v| t.degree(v) == 1).count();
        assert!((135..=165).contains(&leaves), "got {leaves} leaves");
        assert!(t.max_degree() <= 3);
    }

    #[test]
    fn gen_tree_low_leaf_target_reachable() {
        let t = gen_tree(400, 3, Some(0.05), 2).unwrap();
        let leaves = (0..400).filter(|&v| t.degree(v) == 1).count();
        assert!((18..=22).contains(&leaves), "got {leaves} leaves");
    }

    #[test]
    fn gen_tree_rejects_infeasible() {
        assert!(gen_tree(1, 2, None, 0).is_err());
        assert!(gen_tree(10, 2, Some(0.5), 0).is_err());
    }

    #[test]
    fn census_of_star() {
        let t = star_tree(6);
        let (l, p) = leaf_census(&t);
        assert_eq!(l, vec![1, 2, 3, 4, 5]);
        assert_eq!(p, vec![0]);
    }

    #[test]
    fn census_of_p4() {
        let t = path_tree(4);
        let (l, p) = leaf_census(&t);
        assert_eq!(l, vec![0, 3]);
        assert_eq!(p, vec![1, 2]);
    }

    #[test]
    fn bare_paths_empty_for_star() {
        let t = star_tree(6);
        let set = extract_bare_paths(&t, 3);
        assert!(set.paths.is_empty());
        assert!(bare_path_floor(6, 3, 5) <= 0);
    }

    #[test]
    fn bare_paths_p10_k3_finds_two() {
        let t = path_tree(10);
        let set = extract_bare_paths(&t, 3);
        assert_eq!(set.paths.len(), 2);
        assert_eq!(bare_path_floor(10, 3, 2), 1);
        for p in &set.paths {
            assert_eq!(p.len(), 4);
            assert!(is_bare_path(&t, p));
        }
    }

    #[test]
    fn bare_paths_spider_meets_floor() {
        let t = spider_tree(31, 3).unwrap();
        let set = extract_bare_paths(&t, 3);
        // Each 10-edge leg has 9 interior degree-2 vertices: two pieces each.
        assert_eq!(set.paths.len(), 6);
        assert_eq!(bare_path_floor(31, 3, 3), 4);
        assert!(set.paths.len() as i64 >= 4);
    }

    #[test]
    fn long_paths_yield_an_eighth_of_n_in_spikes() {
        // A Hamilton path has ⌊(n−2)/4⌋ length-3 bare paths, at least n/8.
        for n in [100usize, 500, 1000] {
            let t = path_tree(n);
            let set = extract_bare_paths(&t, 3);
            assert_eq!(set.paths.len(), (n - 2) / 4);
            assert!(8 * set.paths.len() >= n);
        }
    }

    #[test]
    fn bare_paths_are_disjoint() {
        let t = path_tree(50);
        let set = extract_bare_paths(&t, 3);
        let mut seen = std::collections::HashSet::new();
        for p in &set.paths {
            for &v in p {
                assert!(seen.insert(v), "vertex {v} reused");
            }
        }
    }

    #[test]
    fn spike_on_single_path() {
        // A 6-vertex path: interior chain 1..=4 gives one bare path.
        let t = path_tree(6);
        let set = extract_bare_paths(&t, 3);
        assert_eq!(set.paths.len(), 1);
        let rec = spike_transform(&t, &set).unwrap();
        let [a, b, c, d] = rec.replaced[0];
        let tt = &rec.transformed_tree;
        assert!(tt.neighbors(a).contains(&b));
        assert!(tt.neighbors(b).contains(&c));
        assert!(tt.neighbors(b).contains(&d));
        assert!(!tt.neighbors(c).contains(&d));
        assert_eq!(tt.degree(c), 1, "c becomes a leaf");
        assert_eq!(tt.n(), t.n());
    }

    #[test]
    fn spike_identity_on_empty_paths() {
        let t = path_tree(10);
        let rec = spike_transform(&t, &BarePathSet { paths: vec![], k: 3 }).unwrap();
        assert_eq!(rec.transformed_tree, t);
    }

    #[test]
    fn spike_p10_gains_leaves_and_degree_3() {
        let t = path_tree(10);
        let set = extract_bare_paths(&t, 3);
        let rec = spike_transform(&t, &set).unwrap();
        let tt = &rec.transformed_tree;
        let leaves = (0..10).filter(|&v| tt.degree(v) == 1).count();
        assert!(leaves >= 4);
        assert_eq!(tt.max_degree(), 3);
    }

    #[test]
    fn spike_rejects_non_bare_input() {
        let t = star_tree(5);
        let fake = BarePathSet { paths: vec![vec![0, 1, 2, 3]], k: 3 };
        assert!(spike_transform(&t, &fake).is_err());
    }

    #[test]
    fn divide_single_edge() {
        let t = path_tree(2);
        let div = divide_tree(&t, &[0, 1]).unwrap();
        let ca = div.side_a.iter().filter(|v| [0, 1].contains(v)).count();
        let cb = div.side_b.iter().filter(|v| [0, 1].contains(v)).count();
        assert!(ca >= 1 && cb >= 1);
        assert!(div.side_a.contains(&div.shared) && div.side_b.contains(&div.shared));
    }

    #[test]
    fn divide_p9_splits_middle() {
        let t = path_tree(9);
        let q: Vec<usize> = (0..9).collect();
        let div = divide_tree(&t, &q).unwrap();
        assert_eq!(div.side_a.len().min(div.side_b.len()), 5);
        assert_eq!(div.side_a.len().max(div.side_b.len()), 5);
        assert_eq!(div.shared, 4);
    }

    #[test]
    fn divide_star_on_leaves() {
        let t = star_tree(7);
        let q: Vec<usize> = (1..7).collect();
        let div = divide_tree(&t, &q).unwrap();
        let count = |s: &[usize]| s.iter().filter(|&&v| v >= 1).count();
        assert!(count(&div.side_a) >= 2);
        assert!(count(&div.side_b) >= 2);
        assert_eq!(div.shared, 0);
    }

    fn all_trees_up_to(n_max: usize) -> Vec<Tree> {
        // All labeled trees via Prüfer sequences, deduplicated by edge set.
        let mut out = Vec::new();
        for n in 2..=n_max {
            if n == 2 {
                out.push(path_tree(2));
                continue;
            }
            let len = n - 2;
            let mut seq = vec![0usize; len];
            let mut seen = std::collections::HashSet::new();
            loop {
                let t = tree_from_pruefer(n, &seq);
                if seen.insert(t.edges()) {
                    out.push(t);
                }
                // Advance the sequence as a base-n counter.
                let mut pos = 0;
                while pos < len {
                    seq[pos] += 1;
                    if seq[pos] < n {
                        break;
                    }
                    seq[pos] = 0;
                    pos += 1;
                }
                if pos == len {
                    break;
                }
            }
        }
        out
    }

    fn tree_from_pruefer(n: usize, seq: &[usize]) -> Tree {
        let mut degree = vec![1usize; n];
        for &v in seq {
            degree[v] += 1;
        }
        let mut edges = Vec::with_capacity(n - 1);
        let mut deg = degree.clone();
        for &v in seq {
            let leaf = (0..n).find(|&u| deg[u] == 1).unwrap();
            edges.push((leaf, v));
            deg[leaf] = 0;
            deg[v] -= 1;
        }
        let rest: Vec<usize> = (0..n).filter(|&u| deg[u] == 1).collect();
        edges.push((rest[0], rest[1]));
        Tree::from_edges(n, &edges, n - 1).unwrap()
    }

    #[test]
    fn divide_exhaustive_small_trees() {
        for t in all_trees_up_to(7) {
            let n = t.n();
            for mask in 1u32..(1 << n) {
                let q: Vec<usize> = (0..n).filter(|&v| mask >> v & 1 == 1).collect();
                let div = divide_tree(&t, &q).unwrap();
                let count =
                    |s: &[usize]| 3 * s.iter().filter(|v| q.contains(v)).count();
                assert!(count(&div.side_a) >= q.len(), "side A starved");
                assert!(count(&div.side_b) >= q.len(), "side B starved");
                // Union is everything; intersection is exactly the shared vertex.
                let inter: Vec<usize> = div
                    .side_a
                    .iter()
                    .filter(|v| div.side_b.contains(v))
                    .copied()
                    .collect();
                assert_eq!(inter, vec![div.shared]);
                let mut union = div.side_a.clone();
                union.extend_from_slice(&div.side_b);
                union.sort_unstable();
                union.dedup();
                assert_eq!(union.len(), n);
            }
        }
    }

    #[test]
    fn separated_star_leaves_sep2_keeps_all() {
        let t = star_tree(7);
        let x: Vec<usize> = (1..7).collect();
        let q = separated_subset(&t, &x, 2);
        assert_eq!(q, x);
    }

    #[test]
    fn separated_path_every_fourth() {
        let t = path_tree(40);
        let x: Vec<usize> = (0..40).collect();
        let q = separated_subset(&t, &x, 4);
        assert_eq!(q.len(), 10);
        assert!(q.iter().enumerate().all(|(i, &v)| v == 4 * i));
    }

    #[test]
    fn separated_respects_pairwise_distance_by_bfs() {
        let t = gen_tree(200, 3, None, 77).unwrap();
        let x: Vec<usize> = (0..200).step_by(3).collect();
        let q = separated_subset(&t, &x, 6);
        assert!(q.len() as f64 >= x.len() as f64 / (3.0 * 3f64.powi(5)));
        for (i, &u) in q.iter().enumerate() {
            let dist = t.bfs_distances(u);
            for &v in &q[i + 1..] {
                assert!(dist[v] >= 6, "pair ({u}, {v}) at distance {}", dist[v]);
            }
        }
    }

    #[test]
    fn stage_plan_single_stage() {
        let t = path_tree(30);
        let q: Vec<usize> = (0..30).step_by(12).collect();
        let plan = build_stage_plan(&t, &q, 1, 5, &|_| 1).unwrap();
        assert_eq!(plan.ell(), 1);
        assert_eq!(plan.subtrees[0].len(), 30);
        assert!(!plan.separated_sets[0].contains(&5));
    }

    #[test]
    fn stage_plan_empty_q_fails() {
        let t = path_tree(10);
        let err = build_stage_plan(&t, &[], 2, 0, &|_| 1).unwrap_err();
        assert!(matches!(err, Error::PlanInfeasible(_)));
    }

    #[test]
    fn stage_plan_p1000_satisfies_structure() {
        let t = path_tree(1000);
        let q: Vec<usize> = (0..1000).step_by(12).collect();
        let plan = build_stage_plan(&t, &q, 3, 500, &|_| 1).unwrap();
        assert_eq!(plan.ell(), 3);

        // Union of subtrees covers the tree.
        let mut union: Vec<usize> = plan.subtrees.iter().flatten().copied().collect();
        union.sort_unstable();
        union.dedup();
        assert_eq!(union.len(), 1000);

        // Consecutive subtrees intersect exactly at the next cut vertex.
        for i in 0..2 {
            let a: std::collections::HashSet<_> = plan.subtrees[i].iter().collect();
            let inter: Vec<usize> = plan.subtrees[i + 1]
                .iter()
                .filter(|v| a.contains(v))
                .copied()
                .collect();
            assert_eq!(inter, vec![plan.cut_vertices[i + 1]]);
        }

        // Q_i lives in T_i, avoids t_i, and is (4i+8)-separated.
        for (idx, qi) in plan.separated_sets.iter().enumerate() {
            let i = idx + 1;
            assert!(!qi.contains(&plan.cut_vertices[idx]));
            let inside: std::collections::HashSet<_> = plan.subtrees[idx].iter().collect();
            assert!(qi.iter().all(|v| inside.contains(v)));
            for (a_pos, &u) in qi.iter().enumerate() {
                let dist = t.bfs_distances(u);
                for &v in &qi[a_pos + 1..] {
                    assert!(dist[v] >= 4 * i + 8);
                }
            }
        }
    }

    #[test]
    fn parent_array_roundtrip() {
        let t = path_tree(10);
        let mut buf = Vec::new();
        write_parent_array(&t, &mut buf).unwrap();
        let back = read_parent_array(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn parent_array_bad_file_reports_line() {
        let err = read_parent_array(std::io::Cursor::new("5 2\n0 1 1 2\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn caterpillar_has_many_leaves() {
        let t = caterpillar_tree(100, 3, 4).unwrap();
        let leaves = (0..100).filter(|&v| t.degree(v) == 1).count();
        assert!(leaves >= 40);
        assert!(t.max_degree() <= 3);
    }

    #[test]
    fn binary_tree_shape() {
        let t = binary_tree(31);
        assert_eq!(t.max_degree(), 3);
        let leaves = (0..31).filter(|&v| t.degree(v) == 1).count();
        assert_eq!(leaves, 16);
    }

    proptest! {
        #[test]
        fn generated_trees_respect_bounds(n in 2usize..120, delta in 2usize..6, seed in 0u64..30) {
            let t = gen_tree(n, delta, None, seed).unwrap();
            prop_assert_eq!(t.n(), n);
            prop_assert_eq!(t.edges().len(), n - 1);
            prop_assert!(t.max_degree() <= delta);
        }

        // |P| >= |L| / Δ for parents of leaves.
        #[test]
        fn census_parent_bound(n in 3usize..200, seed in 0u64..100) {
            let t = gen_tree(n, 3, None, seed).unwrap();
            let (l, p) = leaf_census(&t);
            prop_assert!(3 * p.len() >= l.len());
        }

        // Greedy bare-path extraction always meets the structural floor.
        #[test]
        fn bare_path_count_meets_floor(n in 5usize..200, seed in 0u64..40, k in 1usize..5) {
            let t = gen_tree(n, 3, None, seed).unwrap();
            let (l, _) = leaf_census(&t);
            let set = extract_bare_paths(&t, k);
            for p in &set.paths {
                prop_assert!(is_bare_path(&t, p));
                prop_assert_eq!(p.len(), k + 1);
            }
            prop_assert!(set.paths.len() as i64 >= bare_path_floor(n, k, l.len()));
        }

        // Spiked trees keep n, bound degree by max(Δ, 3), and gain a leaf per path.
        #[test]
        fn spike_structural_properties(n in 12usize..150, seed in 0u64..30) {
            let t = gen_tree(n, 3, Some(0.08), seed).unwrap_or_else(|_| path_tree(n));
            let set = extract_bare_paths(&t, 3);
            let before: usize = (0..n).filter(|&v| t.degree(v) == 1).count();
            let rec = spike_transform(&t, &set).unwrap();
            let tt = &rec.transformed_tree;
            prop_assert_eq!(tt.n(), n);
            prop_assert!(tt.max_degree() <= t.max_degree().max(3));
            let after: usize = (0..n).filter(|&v| tt.degree(v) == 1).count();
            prop_assert!(after >= before + rec.replaced.len());
        }
    }
}
