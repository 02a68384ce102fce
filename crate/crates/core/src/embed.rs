//! The embedding engine: grow a partial injective tree image inside a host
//! leaf-by-leaf, with journaled rollbacks on dead ends, staged covering of
//! the reserved matchmaker set, and a final Hall matching between the
//! images of leaf-parents and the leftover host vertices.
//!
//! The theory tracks a (D,m)-extendable subgraph S = F ∪ I(X): F is the
//! embedded image, X the still-uncovered reserve. Operationally the engine
//! scores candidate hosts by residual expansion, never places ordinary
//! vertices on the reserve, and steers cover-eligible tree vertices (and
//! their parents) toward it. Extendability is checked exactly only at
//! small sizes; end-to-end soundness rests on [`verify_embedding`].

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Step};
use crate::graphs::Graph;
use crate::matchmakers::{sample_disjoint_sets, select_matchmakers, MatchmakerFamily};
use crate::spectral::SpectralCertificate;
use crate::trees::{
    build_stage_plan, extract_bare_paths, leaf_census, separated_subset, spike_transform,
    StagePlan, Tree,
};
use crate::util::derive_seed;

// ---------------------------------------------------------------------------
// Results and verification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbedMode {
    #[serde(rename = "into-G")]
    IntoG,
    #[serde(rename = "into-G-square")]
    IntoGSquare,
}

impl std::fmt::Display for EmbedMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EmbedMode::IntoG => f.write_str("into-G"),
            EmbedMode::IntoGSquare => f.write_str("into-G-square"),
        }
    }
}

/// A total injective map from tree vertices to host vertices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Embedding {
    pub mode: EmbedMode,
    /// Host vertex per tree vertex.
    pub map: Vec<usize>,
    pub verified: bool,
}

#[derive(Debug, Clone)]
pub struct Verification {
    pub ok: bool,
    pub counterexample: Option<String>,
}

/// Independent acceptance oracle: totality, injectivity, and per-edge
/// adjacency (mode into-G) or distance ≤ 2 via neighbor intersection
/// (mode into-G²). Never consults embedder internals or `Graph::square`.
pub fn verify_embedding(host: &Graph, tree: &Tree, map: &[usize], mode: EmbedMode) -> Verification {
    let fail = |msg: String| Verification { ok: false, counterexample: Some(msg) };
    if map.len() != tree.n() {
        return fail(format!("map covers {} of {} tree vertices", map.len(), tree.n()));
    }
    let mut seen = vec![false; host.n()];
    for (v, &h) in map.iter().enumerate() {
        if h >= host.n() {
            return fail(format!("tree vertex {v} mapped outside host: {h}"));
        }
        if seen[h] {
            return fail(format!("host vertex {h} used twice (second: tree vertex {v})"));
        }
        seen[h] = true;
    }
    for (u, v) in tree.edges() {
        let (hu, hv) = (map[u], map[v]);
        let ok = match mode {
            EmbedMode::IntoG => host.has_edge(hu, hv),
            EmbedMode::IntoGSquare => host.within_distance_two(hu, hv),
        };
        if !ok {
            return fail(format!(
                "tree edge ({u}, {v}) maps to ({hu}, {hv}), not within reach for {mode}"
            ));
        }
    }
    Verification { ok: true, counterexample: None }
}

// ---------------------------------------------------------------------------
// Extendability
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum ExtendabilityVerdict {
    /// Exact: the defining inequality holds for every U with 1 ≤ |U| ≤ 2m.
    Extendable,
    /// A concrete U (or a degree-cap breach, witness of size 1) refutes it.
    NotExtendable { witness: Vec<usize>, deficit: i64 },
    /// Sampled mode found no refutation; margin is from the stronger
    /// sufficient condition |N(U) ∖ V(S)| ≥ D|U| over the samples.
    LikelyExtendable { samples: usize, weakest_margin: i64 },
}

impl ExtendabilityVerdict {
    pub fn holds(&self) -> bool {
        !matches!(self, ExtendabilityVerdict::NotExtendable { .. })
    }
}

#[derive(Debug, Clone, Copy)]
pub enum CheckMode {
    Exact,
    Sampled { trials: usize, seed: u64 },
}

/// Evaluates |Γ(U) ∖ V(S)| ≥ (D−1)|U| − Σ_{u ∈ U∩V(S)} (d_S(u) − 1) over
/// all U ⊆ allowed with 1 ≤ |U| ≤ 2m, after checking Δ(S) ≤ D.
pub fn extendability_exact(
    host: &Graph,
    allowed: &[bool],
    in_s: &[bool],
    s_deg: &[u32],
    d_param: usize,
    m: usize,
) -> ExtendabilityVerdict {
    if let Some(v) = (0..host.n()).find(|&v| s_deg[v] as usize > d_param) {
        return ExtendabilityVerdict::NotExtendable {
            witness: vec![v],
            deficit: s_deg[v] as i64 - d_param as i64,
        };
    }
    let universe: Vec<usize> = (0..host.n()).filter(|&v| allowed[v]).collect();
    let cap = 2 * m;
    let mut stack: Vec<usize> = Vec::new();
    let mut verdict = ExtendabilityVerdict::Extendable;
    enumerate_subsets(&universe, cap, &mut stack, &mut |u_set| {
        match eq1_slack(host, allowed, in_s, s_deg, d_param, u_set) {
            slack if slack < 0 => {
                verdict = ExtendabilityVerdict::NotExtendable {
                    witness: u_set.to_vec(),
                    deficit: -slack,
                };
                false
            }
            _ => true,
        }
    });
    verdict
}

fn enumerate_subsets(
    universe: &[usize],
    cap: usize,
    stack: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]) -> bool,
) -> bool {
    fn rec(
        universe: &[usize],
        start: usize,
        cap: usize,
        stack: &mut Vec<usize>,
        visit: &mut impl FnMut(&[usize]) -> bool,
    ) -> bool {
        for i in start..universe.len() {
            stack.push(universe[i]);
            if !visit(stack) {
                return false;
            }
            if stack.len() < cap && !rec(universe, i + 1, cap, stack, visit) {
                return false;
            }
            stack.pop();
        }
        true
    }
    rec(universe, 0, cap, stack, visit)
}

/// LHS − RHS of the extendability inequality for one U; negative = violated.
fn eq1_slack(
    host: &Graph,
    allowed: &[bool],
    in_s: &[bool],
    s_deg: &[u32],
    d_param: usize,
    u_set: &[usize],
) -> i64 {
    let mut gamma = std::collections::HashSet::new();
    for &u in u_set {
        for &w in host.neighbors(u) {
            if allowed[w] && !in_s[w] {
                gamma.insert(w);
            }
        }
    }
    let mut rhs = (d_param as i64 - 1) * u_set.len() as i64;
    for &u in u_set {
        if in_s[u] {
            rhs -= s_deg[u] as i64 - 1;
        }
    }
    gamma.len() as i64 - rhs
}

// ---------------------------------------------------------------------------
// Embedding state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PlaceRecord {
    pub tree_v: usize,
    pub host_v: usize,
    pub parent_host: Option<usize>,
    pub was_reserved: bool,
}

/// Partial injective embedding of a tree into G′ = G − V₁, with the
/// uncovered part of V₂ held as a reserved set and a rollback journal.
#[derive(Debug, Clone)]
pub struct EmbeddingState<'g> {
    host: &'g Graph,
    d_param: usize,
    m: usize,
    v0: usize,
    blocked: Vec<bool>,
    mapping: Vec<Option<usize>>,
    inverse: Vec<Option<usize>>,
    image_degrees: Vec<u32>,
    reserved: Vec<bool>,
    reserved_count: usize,
    /// Per host vertex: used neighbors + 1 if itself used; 0 means fresh.
    shadow: Vec<u32>,
    journal: Vec<PlaceRecord>,
    rollback_spent: usize,
    rollback_budget: usize,
    pub init_audit: Option<ExtendabilityVerdict>,
}

/// Builds the initial state from a matchmaker family: `fam.sets` is read
/// as [V₁, V₂, V₃]; V₁ is blocked out of the host, V₂ reserved.
pub fn init_state<'g>(
    g: &'g Graph,
    fam: &MatchmakerFamily,
    cert: &SpectralCertificate,
    d_param: usize,
    v0: usize,
) -> Result<EmbeddingState<'g>> {
    let empty = Vec::new();
    let v1 = fam.sets.first().unwrap_or(&empty);
    let v2 = fam.sets.get(1).unwrap_or(&empty);
    let v3 = fam.sets.get(2).unwrap_or(&empty);
    EmbeddingState::from_sets(g, v1, v2, v3, cert, d_param, v0, 50 * g.n())
}

impl<'g> EmbeddingState<'g> {
    #[allow(clippy::too_many_arguments)]
    pub fn from_sets(
        g: &'g Graph,
        v1: &[usize],
        v2: &[usize],
        v3: &[usize],
        cert: &SpectralCertificate,
        d_param: usize,
        v0: usize,
        rollback_budget: usize,
    ) -> Result<EmbeddingState<'g>> {
        if d_param < 3 {
            return Err(Error::Precondition(format!("D = {d_param} must be >= 3")));
        }
        let n = g.n();
        if v0 >= n {
            return Err(Error::Precondition(format!("v0 = {v0} out of range")));
        }
        for (name, set) in [("V1", v1), ("V2", v2), ("V3", v3)] {
            if set.contains(&v0) {
                return Err(Error::Precondition(format!("v0 = {v0} lies inside {name}")));
            }
        }
        let mut blocked = vec![false; n];
        for &v in v1 {
            blocked[v] = true;
        }
        let mut reserved = vec![false; n];
        let mut reserved_count = 0;
        for &v in v2 {
            if blocked[v] {
                return Err(Error::Precondition(format!("vertex {v} in both V1 and V2")));
            }
            if !reserved[v] {
                reserved[v] = true;
                reserved_count += 1;
            }
        }
        let mut state = EmbeddingState {
            host: g,
            d_param,
            m: cert.m,
            v0,
            blocked,
            mapping: Vec::new(),
            inverse: vec![None; n],
            image_degrees: vec![0; n],
            reserved,
            reserved_count,
            shadow: vec![0; n],
            journal: Vec::new(),
            rollback_spent: 0,
            rollback_budget,
            init_audit: None,
        };
        let audit_mode = if 2 * cert.m <= 12 || n <= 20 {
            CheckMode::Exact
        } else {
            CheckMode::Sampled { trials: 200, seed: derive_seed(0xa0d1, v0 as u64) }
        };
        state.init_audit = Some(check_extendable(&state, audit_mode)?);
        Ok(state)
    }

    pub fn host(&self) -> &Graph {
        self.host
    }

    pub fn d_param(&self) -> usize {
        self.d_param
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn v0(&self) -> usize {
        self.v0
    }

    pub fn reserved_count(&self) -> usize {
        self.reserved_count
    }

    pub fn reserved_vertices(&self) -> Vec<usize> {
        (0..self.host.n()).filter(|&v| self.reserved[v]).collect()
    }

    pub fn is_blocked(&self, v: usize) -> bool {
        self.blocked[v]
    }

    pub fn rollbacks_spent(&self) -> usize {
        self.rollback_spent
    }

    pub fn journal_len(&self) -> usize {
        self.journal.len()
    }

    pub fn image_size(&self) -> usize {
        self.journal.len()
    }

    pub fn mapped(&self, tree_v: usize) -> Option<usize> {
        self.mapping.get(tree_v).copied().flatten()
    }

    pub fn preimage(&self, host_v: usize) -> Option<usize> {
        self.inverse[host_v]
    }

    pub fn image_degree(&self, host_v: usize) -> u32 {
        self.image_degrees[host_v]
    }

    /// Grows the mapping table to hold `n` tree vertices.
    pub fn ensure_tree_capacity(&mut self, n: usize) {
        if self.mapping.len() < n {
            self.mapping.resize(n, None);
        }
    }

    /// Returns V₁ to the host; used once growth is over and only the
    /// final matching still places vertices.
    pub fn release_blocked(&mut self) {
        self.blocked.fill(false);
    }

    fn is_free(&self, v: usize) -> bool {
        !self.blocked[v] && self.inverse[v].is_none() && !self.reserved[v]
    }

    fn place(
        &mut self,
        tree_v: usize,
        host_v: usize,
        parent_host: Option<usize>,
        allow_reserved: bool,
    ) -> Result<()> {
        self.ensure_tree_capacity(tree_v + 1);
        if self.blocked[host_v] || self.inverse[host_v].is_some() {
            return Err(Error::Precondition(format!("host {host_v} unavailable")));
        }
        if self.mapping[tree_v].is_some() {
            return Err(Error::Precondition(format!("tree vertex {tree_v} already placed")));
        }
        let was_reserved = self.reserved[host_v];
        if was_reserved && !allow_reserved {
            return Err(Error::Precondition(format!("host {host_v} is reserved")));
        }
        if was_reserved {
            self.reserved[host_v] = false;
            self.reserved_count -= 1;
        }
        self.mapping[tree_v] = Some(host_v);
        self.inverse[host_v] = Some(tree_v);
        self.shadow[host_v] += 1;
        for &w in self.host.neighbors(host_v) {
            self.shadow[w] += 1;
        }
        if let Some(p) = parent_host {
            debug_assert!(self.host.has_edge(p, host_v));
            self.image_degrees[p] += 1;
            self.image_degrees[host_v] += 1;
        }
        self.journal.push(PlaceRecord { tree_v, host_v, parent_host, was_reserved });
        #[cfg(debug_assertions)]
        self.assert_invariants();
        Ok(())
    }

    /// Pops up to `k` journal entries, never below `floor`; returns the
    /// popped records newest-first. Counts against the rollback budget.
    fn rollback(&mut self, k: usize, floor: usize) -> Result<Vec<PlaceRecord>> {
        let mut popped = Vec::new();
        while popped.len() < k && self.journal.len() > floor {
            if self.rollback_spent >= self.rollback_budget {
                return Err(Error::RollbackBudget(self.rollback_budget));
            }
            let rec = self.journal.pop().expect("journal above floor");
            self.mapping[rec.tree_v] = None;
            self.inverse[rec.host_v] = None;
            self.shadow[rec.host_v] -= 1;
            for &w in self.host.neighbors(rec.host_v) {
                self.shadow[w] -= 1;
            }
            if let Some(p) = rec.parent_host {
                self.image_degrees[p] -= 1;
                self.image_degrees[rec.host_v] -= 1;
            }
            if rec.was_reserved {
                self.reserved[rec.host_v] = true;
                self.reserved_count += 1;
            }
            self.rollback_spent += 1;
            popped.push(rec);
        }
        #[cfg(debug_assertions)]
        self.assert_invariants();
        Ok(popped)
    }

    fn rollback_to(&mut self, floor: usize) -> Result<()> {
        let over = self.journal.len().saturating_sub(floor);
        self.rollback(over, floor).map(|_| ())
    }

    /// Freshness score: unblocked, unused, unreserved neighbors that no
    /// used vertex touches yet.
    fn fresh_score(&self, y: usize) -> usize {
        self.host
            .neighbors(y)
            .iter()
            .filter(|&&w| self.shadow[w] == 0 && !self.blocked[w] && !self.reserved[w])
            .count()
    }

    fn reserve_adjacency(&self, y: usize) -> usize {
        self.host.neighbors(y).iter().filter(|&&w| self.reserved[w]).count()
    }

    #[cfg(debug_assertions)]
    fn assert_invariants(&self) {
        for (t, &h) in self.mapping.iter().enumerate() {
            if let Some(h) = h {
                assert_eq!(self.inverse[h], Some(t), "mapping/inverse mismatch");
                assert!(!self.blocked[h], "image on blocked vertex");
                assert!(!self.reserved[h], "image on reserved vertex");
            }
        }
        for v in 0..self.host.n() {
            assert!(
                (self.image_degrees[v] as usize) <= self.d_param,
                "image degree cap exceeded at {v}"
            );
        }
        assert_eq!(self.reserved.iter().filter(|&&r| r).count(), self.reserved_count);
    }
}

/// Checks extendability of S = image ∪ I(reserved) ∪ {v₀} within G′.
///
/// Exact mode enumerates every U with 1 ≤ |U| ≤ 2m and is gated to small
/// instances; sampled mode checks all singletons exactly plus random U,
/// reporting the margin of the stronger sufficient condition.
pub fn check_extendable(
    state: &EmbeddingState,
    mode: CheckMode,
) -> Result<ExtendabilityVerdict> {
    let n = state.host.n();
    let allowed: Vec<bool> = (0..n).map(|v| !state.blocked[v]).collect();
    let mut in_s: Vec<bool> = (0..n)
        .map(|v| state.inverse[v].is_some() || state.reserved[v])
        .collect();
    in_s[state.v0] = true;
    match mode {
        CheckMode::Exact => {
            if 2 * state.m > 12 && n > 20 {
                return Err(Error::Precondition(format!(
                    "exact check infeasible: 2m = {} on {} vertices",
                    2 * state.m,
                    n
                )));
            }
            Ok(extendability_exact(
                state.host,
                &allowed,
                &in_s,
                &state.image_degrees,
                state.d_param,
                state.m,
            ))
        }
        CheckMode::Sampled { trials, seed } => {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            if let Some(v) = (0..n).find(|&v| state.image_degrees[v] as usize > state.d_param) {
                return Ok(ExtendabilityVerdict::NotExtendable {
                    witness: vec![v],
                    deficit: state.image_degrees[v] as i64 - state.d_param as i64,
                });
            }
            let universe: Vec<usize> = (0..n).filter(|&v| allowed[v]).collect();
            let mut weakest = i64::MAX;
            let mut samples = 0;
            for &u in &universe {
                let slack = eq1_slack(
                    state.host,
                    &allowed,
                    &in_s,
                    &state.image_degrees,
                    state.d_param,
                    &[u],
                );
                samples += 1;
                if slack < 0 {
                    return Ok(ExtendabilityVerdict::NotExtendable {
                        witness: vec![u],
                        deficit: -slack,
                    });
                }
            }
            for _ in 0..trials {
                let size = rng.random_range(1..=(2 * state.m).min(universe.len()));
                let mut u_set = Vec::with_capacity(size);
                while u_set.len() < size {
                    let v = universe[rng.random_range(0..universe.len())];
                    if !u_set.contains(&v) {
                        u_set.push(v);
                    }
                }
                samples += 1;
                let slack = eq1_slack(
                    state.host,
                    &allowed,
                    &in_s,
                    &state.image_degrees,
                    state.d_param,
                    &u_set,
                );
                if slack < 0 {
                    return Ok(ExtendabilityVerdict::NotExtendable {
                        witness: u_set,
                        deficit: -slack,
                    });
                }
                // Margin of the sufficient condition |N(U) ∖ (U ∪ S)| ≥ D|U|.
                let mut ext = std::collections::HashSet::new();
                for &u in &u_set {
                    for &w in state.host.neighbors(u) {
                        if allowed[w] && !in_s[w] && !u_set.contains(&w) {
                            ext.insert(w);
                        }
                    }
                }
                weakest =
                    weakest.min(ext.len() as i64 - (state.d_param * u_set.len()) as i64);
            }
            Ok(ExtendabilityVerdict::LikelyExtendable {
                samples,
                weakest_margin: if weakest == i64::MAX { 0 } else { weakest },
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Leaf extension and the traversal driver
// ---------------------------------------------------------------------------

/// Extends the image by one leaf hanging off `parent_image`.
///
/// Candidates are the parent's free neighbors, scored by residual
/// expansion (fresh-neighbor count, ties to the smallest id). When
/// `prefer` is given, reserved vertices in it that neighbor the parent are
/// taken first; choosing one covers it.
pub fn extend_leaf(
    state: &mut EmbeddingState,
    tree_v: usize,
    parent_image: usize,
    prefer: Option<&[usize]>,
) -> Result<usize> {
    if state.inverse[parent_image].is_none() {
        return Err(Error::Precondition(format!("parent image {parent_image} not placed")));
    }
    if state.image_degrees[parent_image] as usize > state.d_param - 1 {
        return Err(Error::Precondition(format!(
            "parent image {parent_image} is saturated at degree {}",
            state.image_degrees[parent_image]
        )));
    }
    let choice = choose_candidate(state, parent_image, prefer, false, 0)
        .ok_or(Error::DeadEnd)?;
    state.place(tree_v, choice.0, Some(parent_image), choice.1)?;
    Ok(choice.0)
}

/// Picks (host, covers_reserved). `rot` rotates through the sorted
/// candidate list so retries explore alternatives deterministically;
/// vetoed candidates sort last but stay eligible.
fn choose_candidate(
    state: &EmbeddingState,
    parent_image: usize,
    prefer: Option<&[usize]>,
    lookahead: bool,
    veto: Option<&dyn Fn(&EmbeddingState, usize) -> bool>,
    rot: u32,
) -> Option<(usize, bool)> {
    if let Some(targets) = prefer {
        let mut covered: Vec<usize> = state
            .host
            .neighbors(parent_image)
            .iter()
            .copied()
            .filter(|&y| state.reserved[y] && targets.binary_search(&y).is_ok())
            .collect();
        if !covered.is_empty() {
            covered.sort_unstable();
            return Some((covered[rot as usize % covered.len()], true));
        }
    }
    let mut cands: Vec<usize> = state
        .host
        .neighbors(parent_image)
        .iter()
        .copied()
        .filter(|&y| state.is_free(y))
        .collect();
    if cands.is_empty() {
        return None;
    }
    let vetoed = |y: usize| veto.is_some_and(|f| f(state, y));
    if lookahead && state.reserved_count > 0 {
        cands.sort_by_key(|&y| {
            (
                vetoed(y),
                std::cmp::Reverse(state.reserve_adjacency(y)),
                std::cmp::Reverse(state.fresh_score(y)),
                y,
            )
        });
    } else {
        cands.sort_by_key(|&y| (vetoed(y), std::cmp::Reverse(state.fresh_score(y)), y));
    }
    Some((cands[rot as usize % cands.len()], false))
}

struct DriveCtx<'a> {
    /// Tree parent per tree vertex; usize::MAX for roots.
    parent_of: &'a [usize],
    /// Cover-eligible tree vertices (the stage's Qᵢ).
    q_mark: Option<&'a [bool]>,
    /// Tree vertices with a cover-eligible child in this traversal.
    child_has_q: Option<&'a [bool]>,
    /// Hosts to take only as a last resort.
    veto: Option<&'a dyn Fn(&EmbeddingState, usize) -> bool>,
    attempts: &'a mut [u32],
    deadends: &'a mut [u32],
    rot_salt: u32,
    floor: usize,
}

/// Processes tree vertices in BFS order, placing each next to its parent's
/// image. Dead ends trigger exponentially deepening rollbacks; rolled-back
/// vertices are re-queued in their original relative order with a rotated
/// candidate choice.
fn drive(state: &mut EmbeddingState, items: &[usize], ctx: &mut DriveCtx) -> Result<()> {
    let mut queue: VecDeque<usize> = items.iter().copied().collect();
    while let Some(&v) = queue.front() {
        if state.mapped(v).is_some() {
            queue.pop_front();
            continue;
        }
        let pv = ctx.parent_of[v];
        let parent_img = state
            .mapped(pv)
            .expect("BFS order places parents before children");
        let wants_cover = ctx.q_mark.is_some_and(|q| q[v]) && state.reserved_count > 0;
        let lookahead = ctx.child_has_q.is_some_and(|c| c[v]) && state.reserved_count > 0;
        let reserved_list;
        let prefer = if wants_cover {
            reserved_list = state.reserved_vertices();
            Some(reserved_list.as_slice())
        } else {
            None
        };
        let rot = ctx.attempts[v].wrapping_add(ctx.rot_salt);
        match choose_candidate(state, parent_img, prefer, lookahead, ctx.veto, rot) {
            Some((host_v, covers)) => {
                state.place(v, host_v, Some(parent_img), covers)?;
                #[cfg(debug_assertions)]
                if covers {
                    debug_assert!(ctx.q_mark.is_some_and(|q| q[v]), "only Q may cover");
                }
                queue.pop_front();
            }
            None => {
                ctx.deadends[v] = ctx.deadends[v].saturating_add(1);
                let depth = 1usize << ctx.deadends[v].min(6);
                let popped = state.rollback(depth, ctx.floor)?;
                if popped.is_empty() {
                    return Err(Error::DeadEnd);
                }
                for rec in &popped {
                    queue.push_front(rec.tree_v);
                }
                let earliest = popped.last().expect("nonempty").tree_v;
                ctx.attempts[earliest] = ctx.attempts[earliest].wrapping_add(1);
            }
        }
    }
    Ok(())
}

/// Embeds the whole tree `t` with `root` placed at `at`, by BFS-ordered
/// leaf extension with rollbacks. Tree vertex ids index the state mapping
/// directly.
pub fn embed_subtree(
    state: &mut EmbeddingState,
    t: &Tree,
    root: usize,
    at: usize,
) -> Result<()> {
    if 2 * t.max_degree() > state.d_param {
        return Err(Error::Precondition(format!(
            "tree degree {} exceeds D/2 = {}",
            t.max_degree(),
            state.d_param / 2
        )));
    }
    state.ensure_tree_capacity(t.n());
    match state.mapped(root) {
        Some(h) if h == at => {}
        Some(h) => {
            return Err(Error::Precondition(format!("root already placed at {h}, not {at}")));
        }
        None => state.place(root, at, None, false)?,
    }
    let (order, parent) = t.bfs_order(root);
    let items: Vec<usize> = order.into_iter().filter(|&v| v != root).collect();
    let mut attempts = vec![0u32; t.n()];
    let mut deadends = vec![0u32; t.n()];
    // Never roll back past the root placement.
    let floor = state.journal_len();
    let mut ctx = DriveCtx {
        parent_of: &parent,
        q_mark: None,
        child_has_q: None,
        attempts: &mut attempts,
        deadends: &mut deadends,
        rot_salt: 0,
        floor,
    };
    drive(state, &items, &mut ctx)
}

// ---------------------------------------------------------------------------
// Staged covering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CoverReport {
    /// (attempts used, uncovered after) per stage.
    pub stages: Vec<(usize, usize)>,
}

/// Embeds the planned subtrees in order, steering each stage's separated
/// set onto the still-reserved vertices. After stage i the reserve must
/// have shrunk to `shrink_floor(i)` (0 on the last stage) or the stage is
/// rolled back and retried with rotated choices.
///
/// `to_full` maps the planned tree's ids into the state's tree ids; pass
/// the identity when covering a standalone tree.
pub fn cover_stages(
    state: &mut EmbeddingState,
    plan: &StagePlan,
    t_plan: &Tree,
    to_full: &[usize],
    v0: usize,
    shrink_floor: &dyn Fn(usize) -> usize,
    stage_retries: usize,
) -> Result<CoverReport> {
    let ell = plan.ell();
    let full_n = to_full.iter().copied().max().unwrap_or(0) + 1;
    state.ensure_tree_capacity(full_n);

    let root_full = to_full[plan.cut_vertices[0]];
    match state.mapped(root_full) {
        Some(h) if h == v0 => {}
        Some(h) => {
            return Err(Error::Precondition(format!("plan root already at {h}, not {v0}")));
        }
        None => state.place(root_full, v0, None, false)?,
    }

    let mut report = CoverReport::default();
    let mut attempts = vec![0u32; full_n];
    let mut deadends = vec![0u32; full_n];

    for i in 0..ell {
        let stage_no = i + 1;
        let members: std::collections::HashSet<usize> =
            plan.subtrees[i].iter().copied().collect();
        let root = plan.cut_vertices[i];

        // BFS order within the stage subtree, in plan ids.
        let mut order = Vec::with_capacity(members.len());
        let mut parent = vec![usize::MAX; t_plan.n()];
        let mut queue = VecDeque::new();
        parent[root] = root;
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &w in t_plan.neighbors(u) {
                if members.contains(&w) && parent[w] == usize::MAX {
                    parent[w] = u;
                    queue.push_back(w);
                }
            }
        }

        let mut q_mark = vec![false; full_n];
        for &q in &plan.separated_sets[i] {
            q_mark[to_full[q]] = true;
        }
        let mut child_has_q = vec![false; full_n];
        for &v in &order {
            if v != root && q_mark[to_full[v]] {
                child_has_q[to_full[parent[v]]] = true;
            }
        }
        let mut parent_full = vec![usize::MAX; full_n];
        for &v in &order {
            if v != root {
                parent_full[to_full[v]] = to_full[parent[v]];
            }
        }
        let items: Vec<usize> =
            order.iter().filter(|&&v| v != root).map(|&v| to_full[v]).collect();

        let floor = state.journal_len();
        let target = if stage_no == ell { 0 } else { shrink_floor(stage_no) };
        let mut done = false;
        let mut used_attempts = 0;
        for attempt in 0..=stage_retries {
            used_attempts = attempt + 1;
            let mut ctx = DriveCtx {
                parent_of: &parent_full,
                q_mark: Some(&q_mark),
                child_has_q: Some(&child_has_q),
                attempts: &mut attempts,
                deadends: &mut deadends,
                rot_salt: attempt as u32 * 7,
                floor,
            };
            match drive(state, &items, &mut ctx) {
                Ok(()) if state.reserved_count() <= target => {
                    done = true;
                    break;
                }
                Ok(()) => state.rollback_to(floor).map_err(|e| step_error(Step::Covering, e))?,
                Err(Error::DeadEnd) => {
                    state.rollback_to(floor).map_err(|e| step_error(Step::Covering, e))?
                }
                Err(e) => return Err(step_error(Step::Covering, e)),
            }
        }
        report.stages.push((used_attempts, state.reserved_count()));
        if !done {
            return Err(Error::EmbedFailed {
                step: Step::Covering,
                reason: format!(
                    "stage {stage_no}: reserve stuck at {} (target {target}) after {} attempts",
                    state.reserved_count(),
                    stage_retries + 1
                ),
            });
        }
    }

    debug_assert!(
        (0..t_plan.n()).all(|v| state.mapped(to_full[v]).is_some()),
        "stage union must cover the planned tree"
    );
    Ok(report)
}

// ---------------------------------------------------------------------------
// Hall matching
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum HallOutcome {
    /// Pairs (a, b) of host vertices covering all of A.
    Matching(Vec<(usize, usize)>),
    /// U ⊆ A with |N(U)| < |U|.
    Witness(Vec<usize>),
}

/// Maximum matching in the bipartite graph the host induces between A and
/// B, by augmenting paths. Perfect matchings come back as pairs; otherwise
/// the König-style set U ⊆ A with |N(U)| < |U| is the failure value.
pub fn hall_finish(host: &Graph, a: &[usize], b: &[usize]) -> Result<HallOutcome> {
    if a.len() != b.len() {
        return Err(Error::Precondition(format!("|A| = {} != |B| = {}", a.len(), b.len())));
    }
    let b_index: std::collections::HashMap<usize, usize> =
        b.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    if a.iter().any(|v| b_index.contains_key(v)) {
        return Err(Error::Precondition("A and B overlap".into()));
    }
    let adj: Vec<Vec<usize>> = a
        .iter()
        .map(|&av| {
            host.neighbors(av)
                .iter()
                .filter_map(|w| b_index.get(w).copied())
                .collect()
        })
        .collect();

    let mut match_of_b: Vec<Option<usize>> = vec![None; b.len()];
    let mut match_of_a: Vec<Option<usize>> = vec![None; a.len()];
    for start in 0..a.len() {
        let mut visited = vec![false; b.len()];
        augment(start, &adj, &mut visited, &mut match_of_a, &mut match_of_b);
    }

    if match_of_a.iter().all(Option::is_some) {
        let pairs = match_of_a
            .iter()
            .enumerate()
            .map(|(i, &mb)| (a[i], b[mb.expect("all matched")]))
            .collect();
        return Ok(HallOutcome::Matching(pairs));
    }

    // Alternating reachability from unmatched A-vertices.
    let mut in_u = vec![false; a.len()];
    let mut seen_b = vec![false; b.len()];
    let mut stack: Vec<usize> = (0..a.len()).filter(|&i| match_of_a[i].is_none()).collect();
    for &i in &stack {
        in_u[i] = true;
    }
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen_b[j] {
                seen_b[j] = true;
                if let Some(i2) = match_of_b[j] {
                    if !in_u[i2] {
                        in_u[i2] = true;
                        stack.push(i2);
                    }
                }
            }
        }
    }
    let witness: Vec<usize> = (0..a.len()).filter(|&i| in_u[i]).map(|i| a[i]).collect();
    debug_assert!(seen_b.iter().filter(|&&s| s).count() < witness.len());
    Ok(HallOutcome::Witness(witness))
}

fn augment(
    i: usize,
    adj: &[Vec<usize>],
    visited: &mut [bool],
    match_of_a: &mut [Option<usize>],
    match_of_b: &mut [Option<usize>],
) -> bool {
    for &j in &adj[i] {
        if visited[j] {
            continue;
        }
        visited[j] = true;
        let free = match match_of_b[j] {
            None => true,
            Some(i2) => augment(i2, adj, visited, match_of_a, match_of_b),
        };
        if free {
            match_of_b[j] = Some(i);
            match_of_a[i] = Some(j);
            return true;
        }
    }
    false
}

// ---------------------------------------------------------------------------
// Pipelines
// ---------------------------------------------------------------------------

/// Tunable knobs for the embedding pipelines. The asymptotic theory fixes
/// no concrete constants; these defaults are tuned for hosts around
/// d/λ ≈ 3–5 and are all overridable.
#[derive(Debug, Clone)]
pub struct EmbedParams {
    /// Matchmaker strength for the coloring construction.
    pub t_param: f64,
    /// Extendability degree cap D; defaults to max(3, 4Δ).
    pub d_param: Option<usize>,
    /// Stage count; defaults to ⌊log_{D−1}(2m)⌋ + 1, clamped to 1..=6.
    pub ell: Option<usize>,
    /// Leaf-fraction threshold separating the direct branch from spikes.
    pub alpha: f64,
    /// Minimum leaves required by the direct branch.
    pub leaf_floor: usize,
    /// Minimum certified d/λ for embed_in_square.
    pub ratio_floor: f64,
    pub trial_retries: usize,
    pub stage_retries: usize,
    pub matchmaker_retries: usize,
    /// Rollback budget = factor × host order.
    pub rollback_factor: usize,
    /// Cap on the reserved coverage target V₂.
    pub v2_cap: usize,
    pub seed: u64,
}

impl Default for EmbedParams {
    fn default() -> Self {
        EmbedParams {
            t_param: 4.0,
            d_param: None,
            ell: None,
            alpha: 0.1,
            leaf_floor: 2,
            ratio_floor: 2.0,
            trial_retries: 6,
            stage_retries: 4,
            matchmaker_retries: 200,
            rollback_factor: 50,
            v2_cap: 25,
            seed: 0,
        }
    }
}

impl EmbedParams {
    pub fn effective_d(&self, delta: usize) -> usize {
        self.d_param.unwrap_or_else(|| (4 * delta).max(3))
    }

    fn effective_ell(&self, d: usize, m: usize) -> usize {
        self.ell.unwrap_or_else(|| {
            let base = (2.0 * m as f64).ln() / ((d - 1).max(2) as f64).ln();
            (base.floor() as usize + 1).clamp(1, 6)
        })
    }
}

/// Per-run accounting surfaced to trial records.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct EmbedStats {
    pub rollbacks: usize,
    pub attempts: usize,
}

/// Embeds a spanning tree with many leaves directly into G.
///
/// Pipeline: pick the matchmaker sets, build the 12-separated parent set Q
/// and the stage plan for T − L, cover V₂ while embedding stages, add all
/// but one leaf per parent, then finish the withheld leaves by a perfect
/// matching between the parent images and the leftover vertices. The
/// returned embedding has passed [`verify_embedding`].
pub fn embed_spanning_tree(
    g: &Graph,
    cert: &SpectralCertificate,
    t: &Tree,
    params: &EmbedParams,
) -> Result<Embedding> {
    embed_spanning_tree_with_stats(g, cert, t, params).map(|(e, _)| e)
}

/// [`embed_spanning_tree`] plus rollback/attempt accounting.
pub fn embed_spanning_tree_with_stats(
    g: &Graph,
    cert: &SpectralCertificate,
    t: &Tree,
    params: &EmbedParams,
) -> Result<(Embedding, EmbedStats)> {
    if t.n() != g.n() {
        return Err(Error::Precondition(format!(
            "spanning embedding needs |T| = |G|, got {} vs {}",
            t.n(),
            g.n()
        )));
    }
    let d_param = params.effective_d(t.max_degree().max(1));
    if 2 * t.max_degree() > d_param {
        return Err(Error::Precondition(format!(
            "tree degree {} above D/2 = {}",
            t.max_degree(),
            d_param / 2
        )));
    }
    if t.n() <= 2 {
        let map: Vec<usize> = (0..t.n()).collect();
        let verified = verify_embedding(g, t, &map, EmbedMode::IntoG);
        if !verified.ok {
            return Err(Error::EmbedFailed {
                step: Step::Verify,
                reason: verified.counterexample.unwrap_or_default(),
            });
        }
        let e = Embedding { mode: EmbedMode::IntoG, map, verified: true };
        return Ok((e, EmbedStats::default()));
    }
    let (leaves, _) = leaf_census(t);
    if leaves.len() < params.leaf_floor {
        return Err(Error::Precondition(format!(
            "{} leaves below the configured floor {}",
            leaves.len(),
            params.leaf_floor
        )));
    }

    let mut last = Error::EmbedFailed { step: Step::Init, reason: "no attempts made".into() };
    let mut stats = EmbedStats::default();
    for attempt in 0..params.trial_retries.max(1) {
        stats.attempts = attempt + 1;
        match try_spanning_once(g, cert, t, params, d_param, derive_seed(params.seed, attempt as u64))
        {
            Ok((e, rollbacks)) => {
                stats.rollbacks += rollbacks;
                return Ok((e, stats));
            }
            Err(e) => last = e,
        }
    }
    Err(last)
}

fn try_spanning_once(
    g: &Graph,
    cert: &SpectralCertificate,
    t: &Tree,
    params: &EmbedParams,
    d_param: usize,
    seed: u64,
) -> Result<(Embedding, usize)> {
    let n = g.n();
    let (leaves, parents) = leaf_census(t);
    let is_leaf = mark(n_bools(t.n()), &leaves);
    let is_parent = mark(n_bools(t.n()), &parents);

    // Anchor vertex: smallest id that is neither a leaf nor a parent of one.
    let t_star = (0..t.n())
        .find(|&v| !is_leaf[v] && !is_parent[v])
        .or_else(|| (0..t.n()).find(|&v| !is_leaf[v]))
        .unwrap_or(0);

    // T' = T − L with id maps.
    let interior: Vec<usize> = (0..t.n()).filter(|&v| !is_leaf[v]).collect();
    let (t_prime, prime_to_t) = t.induced(&interior)?;
    let t_in_prime = invert_ids(t.n(), &prime_to_t);

    // 12-separated parents, translated into T' ids.
    let q_full = separated_subset(t, &parents, 12);
    let q_prime: Vec<usize> = q_full
        .iter()
        .filter_map(|&v| t_in_prime[v])
        .collect();
    if q_prime.is_empty() && t_prime.n() > 1 {
        return Err(Error::EmbedFailed {
            step: Step::SeparatedParents,
            reason: "no separated parents available".into(),
        });
    }
    let t_star_prime = t_in_prime[t_star].expect("anchor is interior");

    // Stage plan, degrading the stage count when the tree is too shallow.
    let mut plan = None;
    let mut ell = params.effective_ell(d_param, cert.m);
    while ell >= 1 {
        match build_stage_plan(&t_prime, &q_prime, ell, t_star_prime, &|_| 0) {
            Ok(p) => {
                plan = Some(p);
                break;
            }
            Err(_) if ell > 1 => ell -= 1,
            Err(e) => {
                return Err(Error::EmbedFailed { step: Step::StagePlan, reason: e.to_string() })
            }
        }
    }
    let plan = plan.expect("loop yields a plan or returns");

    // Matchmaker sets: the coloring construction when its preconditions
    // can hold, otherwise verified sampling sized to this instance.
    let d = cert.d;
    let k_pred = (d as f64 / (params.t_param * cert.lambda)).floor() as usize;
    let q1_len = plan.separated_sets.first().map_or(0, Vec::len);
    let v2_size = (q1_len / 3).min(params.v2_cap);
    let v1_size = (2 * parents.len() / 5).min(n / 8);
    let v3_size = (n / 10).min(n.saturating_sub(v1_size + v2_size + 1));
    let sets = if k_pred >= 6 {
        select_matchmakers(g, cert, params.t_param, 3, params.matchmaker_retries, seed)
            .map(|fam| fam.sets)
            .ok()
    } else {
        None
    };
    let sets = match sets {
        Some(s) if s[0].len() <= parents.len() => s,
        _ => {
            let theta1 = usize::from(v1_size * d >= 8 * n);
            sample_disjoint_sets(
                g,
                &[v1_size, v2_size, v3_size],
                &[theta1, 0, 0],
                params.matchmaker_retries.max(20),
                seed,
            )
            .map_err(|e| Error::EmbedFailed { step: Step::Matchmakers, reason: e.to_string() })?
            .0
        }
    };
    let v0 = (0..n)
        .find(|v| !sets.iter().any(|s| s.contains(v)))
        .ok_or(Error::EmbedFailed {
            step: Step::Matchmakers,
            reason: "matchmakers exhausted the host".into(),
        })?;

    let mut state = EmbeddingState::from_sets(
        g,
        &sets[0],
        sets.get(1).map_or(&[][..], Vec::as_slice),
        sets.get(2).map_or(&[][..], Vec::as_slice),
        cert,
        d_param,
        v0,
        params.rollback_factor * n,
    )
    .map_err(|e| Error::EmbedFailed { step: Step::Init, reason: e.to_string() })?;
    state.ensure_tree_capacity(t.n());

    // Stage shrink floors: geometric in D−1, final stage must reach zero.
    let m = cert.m;
    let shrink = move |i: usize| -> usize {
        let denom = (d_param - 1).pow(i.min(12) as u32) as f64;
        ((2.0 * m as f64 / denom).ceil() as usize).max(1)
    };
    cover_stages(
        &mut state,
        &plan,
        &t_prime,
        &prime_to_t,
        v0,
        &shrink,
        params.stage_retries,
    )?;

    // All leaves except one withheld per parent.
    let mut withheld: Vec<(usize, usize)> = Vec::with_capacity(parents.len());
    let mut rest: Vec<(usize, usize)> = Vec::new();
    for &p in &parents {
        let mut kids: Vec<usize> = t
            .neighbors(p)
            .iter()
            .copied()
            .filter(|&c| is_leaf[c])
            .collect();
        kids.sort_unstable();
        withheld.push((p, kids[0]));
        for &c in &kids[1..] {
            rest.push((c, p));
        }
    }
    let mut parent_of = vec![usize::MAX; t.n()];
    for &(c, p) in &rest {
        parent_of[c] = p;
    }
    // Most-constrained parents first: images with few free neighbors left
    // get their leaves before the neighborhood fills further.
    let free_around = |host_v: usize| {
        state
            .host()
            .neighbors(host_v)
            .iter()
            .filter(|&&w| state.is_free(w))
            .count()
    };
    rest.sort_by_key(|&(c, p)| {
        let img = state.mapped(p).expect("parents are placed");
        (free_around(img), img, c)
    });
    let items: Vec<usize> = rest.iter().map(|&(c, _)| c).collect();
    let mut attempts = vec![0u32; t.n()];
    let mut deadends = vec![0u32; t.n()];
    let floor = state.journal_len();
    let mut ctx = DriveCtx {
        parent_of: &parent_of,
        q_mark: None,
        child_has_q: None,
        attempts: &mut attempts,
        deadends: &mut deadends,
        rot_salt: 0,
        floor,
    };
    drive(&mut state, &items, &mut ctx).map_err(|e| step_error(Step::Remainder, e))?;

    // Hall matching between parent images and everything still unused,
    // V₁ included again.
    state.release_blocked();
    let a: Vec<usize> = parents
        .iter()
        .map(|&p| state.mapped(p).expect("parents are interior"))
        .collect();
    let b: Vec<usize> = (0..n).filter(|&v| state.preimage(v).is_none()).collect();
    if a.len() != b.len() {
        return Err(Error::EmbedFailed {
            step: Step::HallMatching,
            reason: format!("leftover {} vs parents {}", b.len(), a.len()),
        });
    }
    match hall_finish(g, &a, &b)? {
        HallOutcome::Matching(pairs) => {
            let by_a: std::collections::HashMap<usize, usize> = pairs.into_iter().collect();
            for &(p, leaf) in &withheld {
                let a_img = state.mapped(p).expect("parent placed");
                let b_img = by_a[&a_img];
                state.place(leaf, b_img, Some(a_img), false).map_err(|e| {
                    Error::EmbedFailed { step: Step::HallMatching, reason: e.to_string() }
                })?;
            }
        }
        HallOutcome::Witness(u) => {
            return Err(Error::EmbedFailed {
                step: Step::HallMatching,
                reason: format!("Hall violation on {} parents", u.len()),
            });
        }
    }

    let map: Vec<usize> = (0..t.n())
        .map(|v| state.mapped(v).expect("embedding is total"))
        .collect();
    let verdict = verify_embedding(g, t, &map, EmbedMode::IntoG);
    if !verdict.ok {
        return Err(Error::EmbedFailed {
            step: Step::Verify,
            reason: verdict.counterexample.unwrap_or_default(),
        });
    }
    let e = Embedding { mode: EmbedMode::IntoG, map, verified: true };
    Ok((e, state.rollbacks_spent()))
}

/// Embeds a spanning tree into G² per the two-branch strategy: delegate to
/// the direct pipeline when the tree has ≥ α·n leaves, otherwise spike
/// length-3 bare paths into extra leaves, embed the transformed tree into
/// G, and read the same vertex map as an embedding of T into G².
pub fn embed_in_square(
    g: &Graph,
    cert: &SpectralCertificate,
    t: &Tree,
    params: &EmbedParams,
) -> Result<Embedding> {
    embed_in_square_with_stats(g, cert, t, params).map(|(e, _)| e)
}

/// [`embed_in_square`] plus rollback/attempt accounting.
pub fn embed_in_square_with_stats(
    g: &Graph,
    cert: &SpectralCertificate,
    t: &Tree,
    params: &EmbedParams,
) -> Result<(Embedding, EmbedStats)> {
    if cert.ratio < params.ratio_floor {
        return Err(Error::Precondition(format!(
            "certified ratio {:.2} below floor {:.2}",
            cert.ratio, params.ratio_floor
        )));
    }
    let (leaves, _) = leaf_census(t);
    if leaves.len() as f64 >= params.alpha * t.n() as f64 {
        return embed_spanning_tree_with_stats(g, cert, t, params);
    }
    let paths = extract_bare_paths(t, 3);
    if paths.paths.len() + leaves.len() < params.leaf_floor.max(2) {
        return Err(Error::Infeasible(format!(
            "{} bare paths + {} leaves cannot reach the leaf floor; alpha mistuned",
            paths.paths.len(),
            leaves.len()
        )));
    }
    let record = spike_transform(t, &paths)?;
    let (inner, stats) = embed_spanning_tree_with_stats(g, cert, &record.transformed_tree, params)?;
    let verdict = verify_embedding(g, t, &inner.map, EmbedMode::IntoGSquare);
    if !verdict.ok {
        return Err(Error::EmbedFailed {
            step: Step::Verify,
            reason: verdict.counterexample.unwrap_or_default(),
        });
    }
    let e = Embedding { mode: EmbedMode::IntoGSquare, map: inner.map, verified: true };
    Ok((e, stats))
}

fn step_error(step: Step, e: Error) -> Error {
    match e {
        wrapped @ Error::EmbedFailed { .. } => wrapped,
        other => Error::EmbedFailed { step, reason: other.to_string() },
    }
}

fn n_bools(n: usize) -> Vec<bool> {
    vec![false; n]
}

fn mark(mut v: Vec<bool>, at: &[usize]) -> Vec<bool> {
    for &i in at {
        v[i] = true;
    }
    v
}

fn invert_ids(n: usize, new_to_old: &[usize]) -> Vec<Option<usize>> {
    let mut inv = vec![None; n];
    for (new, &old) in new_to_old.iter().enumerate() {
        inv[old] = Some(new);
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{complete, cycle, gen_paley, gen_random_regular, petersen, Graph};
    use crate::spectral::estimate_lambda;
    use crate::trees::{gen_tree, path_tree, star_tree};

    fn fake_cert(g: &Graph, m: usize) -> SpectralCertificate {
        match estimate_lambda(g, 1e-8) {
            Ok(mut cert) => {
                cert.m = m;
                cert
            }
            Err(_) => SpectralCertificate {
                n: g.n(),
                d: g.neighbors(0).len(),
                lambda: 1.0,
                lambda_error: 0.0,
                ratio: 3.0,
                m,
            },
        }
    }

    fn blank_state<'g>(g: &'g Graph, d: usize, m: usize) -> EmbeddingState<'g> {
        let cert = fake_cert(g, m);
        EmbeddingState::from_sets(g, &[], &[], &[], &cert, d, 0, 10 * g.n()).unwrap()
    }

    // Independent re-implementation of the extendability quantifier over
    // bitmasks, for cross-checking the production evaluator.
    fn oracle_extendable(
        g: &Graph,
        in_s: u32,
        s_deg: &[u32],
        d: usize,
        m: usize,
    ) -> bool {
        let n = g.n();
        if (0..n).any(|v| s_deg[v] as usize > d) {
            return false;
        }
        let nbr: Vec<u32> = (0..n)
            .map(|v| g.neighbors(v).iter().fold(0u32, |acc, &w| acc | 1 << w))
            .collect();
        for mask in 1u32..(1 << n) {
            let size = mask.count_ones() as usize;
            if size > 2 * m {
                continue;
            }
            let mut gamma = 0u32;
            for (v, &nb) in nbr.iter().enumerate() {
                if mask >> v & 1 == 1 {
                    gamma |= nb;
                }
            }
            let lhs = (gamma & !in_s).count_ones() as i64;
            let mut rhs = (d as i64 - 1) * size as i64;
            for (v, &sd) in s_deg.iter().enumerate() {
                if mask >> v & 1 == 1 && in_s >> v & 1 == 1 {
                    rhs -= sd as i64 - 1;
                }
            }
            if lhs < rhs {
                return false;
            }
        }
        true
    }

    #[test]
    fn empty_s_in_k5_is_extendable() {
        let g = complete(5);
        let verdict = extendability_exact(&g, &[true; 5], &[false; 5], &[0; 5], 3, 1);
        assert_eq!(verdict, ExtendabilityVerdict::Extendable);
    }

    #[test]
    fn spanning_star_of_k5_violates_eq1() {
        let g = complete(5);
        // S = star centered at 0 covering all of K5.
        let in_s = [true; 5];
        let s_deg = [4u32, 1, 1, 1, 1];
        let verdict = extendability_exact(&g, &[true; 5], &in_s, &s_deg, 3, 1);
        assert!(matches!(verdict, ExtendabilityVerdict::NotExtendable { .. }));
        // Center exceeds D = 3, and Eq. (1) fails at the leaves too.
        assert!(!oracle_extendable(&g, 0b11111, &s_deg, 3, 1));
    }

    #[test]
    fn singleton_condition_matches_hand_computation() {
        // u outside S in a d-regular host: need |Γ(u) ∖ V(S)| ≥ D−1.
        let g = cycle(6);
        let mut in_s = [false; 6];
        in_s[2] = true;
        in_s[3] = true;
        let mut s_deg = [0u32; 6];
        s_deg[2] = 1;
        s_deg[3] = 1;
        // Vertex 0 has neighbors {1, 5}, none in S: slack = 2 − (D−1).
        let slack = eq1_slack(&g, &[true; 6], &in_s, &s_deg, 3, &[0]);
        assert_eq!(slack, 0);
    }

    #[test]
    fn exact_matches_bitmask_oracle_on_small_hosts() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let hosts = vec![complete(6), cycle(6), petersen_small(), path_host(7)];
        for g in &hosts {
            let n = g.n();
            for _ in 0..60 {
                // Random subgraph S with at most 4 edges.
                let mut in_s = vec![false; n];
                let mut s_deg = vec![0u32; n];
                let edges = g.edges();
                for _ in 0..rng.random_range(0..=4usize) {
                    let (u, v) = edges[rng.random_range(0..edges.len())];
                    in_s[u] = true;
                    in_s[v] = true;
                    s_deg[u] += 1;
                    s_deg[v] += 1;
                }
                for d in [3usize, 4] {
                    for m in [1usize, 2] {
                        let got = extendability_exact(
                            g,
                            &vec![true; n],
                            &in_s,
                            &s_deg,
                            d,
                            m,
                        )
                        .holds();
                        let mask = in_s
                            .iter()
                            .enumerate()
                            .fold(0u32, |acc, (i, &b)| acc | (u32::from(b) << i));
                        assert_eq!(got, oracle_extendable(g, mask, &s_deg, d, m));
                    }
                }
            }
        }
    }

    fn petersen_small() -> Graph {
        petersen()
    }

    fn path_host(n: usize) -> Graph {
        crate::graphs::path_graph(n)
    }

    #[test]
    fn init_state_reserves_v2_exactly() {
        let g = complete(20);
        let cert = fake_cert(&g, 1);
        let fam = MatchmakerFamily {
            t_param: 1.0,
            k: 2,
            sets: vec![vec![1, 2], vec![3, 4, 5], vec![6]],
            guaranteed_min_degree: 1.0,
        };
        let state = init_state(&g, &fam, &cert, 3, 0).unwrap();
        assert_eq!(state.reserved_vertices(), vec![3, 4, 5]);
        assert!(state.is_blocked(1) && state.is_blocked(2));
        assert!(state.init_audit.as_ref().unwrap().holds());
    }

    #[test]
    fn init_state_rejects_v0_in_matchmakers() {
        let g = complete(20);
        let cert = fake_cert(&g, 1);
        let fam = MatchmakerFamily {
            t_param: 1.0,
            k: 2,
            sets: vec![vec![1], vec![0], vec![]],
            guaranteed_min_degree: 1.0,
        };
        assert!(init_state(&g, &fam, &cert, 3, 0).is_err());
    }

    #[test]
    fn exact_check_gated_by_feasibility_bound() {
        let g = complete(200);
        let cert = fake_cert(&g, 20); // 2m = 40 > 12 on 200 > 20 vertices
        let state =
            EmbeddingState::from_sets(&g, &[], &[], &[], &cert, 3, 0, 100).unwrap();
        let err = check_extendable(&state, CheckMode::Exact).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
        // Sampled mode still works there.
        let verdict =
            check_extendable(&state, CheckMode::Sampled { trials: 50, seed: 1 }).unwrap();
        assert!(verdict.holds());
    }

    #[test]
    fn init_exact_audit_passes_on_k20_with_tiny_sets() {
        let g = complete(20);
        let cert = fake_cert(&g, 1);
        let state = EmbeddingState::from_sets(
            &g,
            &[1],
            &[2, 3],
            &[4],
            &cert,
            3,
            0,
            100,
        )
        .unwrap();
        assert_eq!(state.init_audit, Some(ExtendabilityVerdict::Extendable));
    }

    #[test]
    fn extend_leaf_prefers_requested_vertex() {
        let g = complete(10);
        let cert = fake_cert(&g, 1);
        let mut state =
            EmbeddingState::from_sets(&g, &[], &[7], &[], &cert, 3, 0, 100).unwrap();
        state.ensure_tree_capacity(4);
        state.place(0, 0, None, false).unwrap();
        let got = extend_leaf(&mut state, 1, 0, Some(&[7])).unwrap();
        assert_eq!(got, 7);
        assert_eq!(state.reserved_count(), 0);
    }

    #[test]
    fn extend_leaf_rejects_saturated_parent() {
        let g = complete(10);
        let cert = fake_cert(&g, 1);
        let mut state = blank_state(&g, 3, 1);
        let _ = cert;
        state.ensure_tree_capacity(8);
        state.place(0, 0, None, false).unwrap();
        for (tv, hv) in [(1, 1), (2, 2), (3, 3)] {
            state.place(tv, hv, Some(0), false).unwrap();
        }
        let err = extend_leaf(&mut state, 4, 0, None).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn embed_p5_into_k10_is_a_path() {
        let g = complete(10);
        let t = path_tree(5);
        let mut state = blank_state(&g, 4, 1);
        embed_subtree(&mut state, &t, 0, 3).unwrap();
        let map: Vec<usize> = (0..5).map(|v| state.mapped(v).unwrap()).collect();
        assert_eq!(map[0], 3);
        assert!(verify_embedding(&g, &t, &map, EmbedMode::IntoG).ok);
    }

    #[test]
    fn embed_random_tree_into_paley_101() {
        let g = gen_paley(101).unwrap();
        let t = gen_tree(50, 3, None, 4).unwrap();
        let mut state = blank_state(&g, 12, 6);
        embed_subtree(&mut state, &t, 0, 17).unwrap();
        let map: Vec<usize> = (0..50).map(|v| state.mapped(v).unwrap()).collect();
        assert!(verify_embedding(&g, &t, &map, EmbedMode::IntoG).ok);
    }

    #[test]
    fn dead_end_recovers_by_rollback() {
        // Lollipop host: triangle {0,1,2} with a pendant path 2-3-4.
        // Greedily embedding P5 from vertex 0 can strand itself in the
        // triangle; the driver must roll back and route along the path.
        let g = Graph::from_edges(5, &[(0, 1), (0, 2), (1, 2), (2, 3), (3, 4)]).unwrap();
        let t = path_tree(5);
        let mut state = blank_state(&g, 4, 1);
        embed_subtree(&mut state, &t, 0, 0).unwrap();
        let map: Vec<usize> = (0..5).map(|v| state.mapped(v).unwrap()).collect();
        assert!(verify_embedding(&g, &t, &map, EmbedMode::IntoG).ok);
        assert!(state.rollbacks_spent() > 0, "instance must force a rollback");
    }

    #[test]
    fn embed_single_vertex_tree_only_maps_root() {
        let g = complete(6);
        let t = Tree::from_edges(1, &[], 2).unwrap();
        let mut state = blank_state(&g, 3, 1);
        embed_subtree(&mut state, &t, 0, 4).unwrap();
        assert_eq!(state.mapped(0), Some(4));
        assert_eq!(state.image_size(), 1);
    }

    #[test]
    fn random_place_rollback_sequences_restore_snapshots() {
        use rand::{Rng, SeedableRng};
        // Random interleavings of placements and rollbacks; every rollback
        // must land the state exactly on an earlier snapshot.
        for seed in 0..25u64 {
            let g = gen_random_regular(40, 8, seed).unwrap();
            let mut state = blank_state(&g, 8, 2);
            state.ensure_tree_capacity(40);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let snap = |s: &EmbeddingState| {
                (
                    (0..40).map(|v| s.mapped(v)).collect::<Vec<_>>(),
                    s.image_degrees.clone(),
                    s.shadow.clone(),
                    s.reserved_count(),
                )
            };
            state.place(0, 0, None, false).unwrap();
            let mut snapshots = vec![snap(&state)];
            let mut next_tree_v = 1;
            for _ in 0..60 {
                if next_tree_v < 40 && (state.image_size() < 2 || rng.random_range(0..3) > 0) {
                    // Extend from a random already-placed vertex if possible.
                    let anchors: Vec<usize> = (0..next_tree_v)
                        .filter_map(|v| state.mapped(v))
                        .filter(|&h| (state.image_degree(h) as usize) < 8)
                        .collect();
                    let anchor = anchors[rng.random_range(0..anchors.len())];
                    if extend_leaf(&mut state, next_tree_v, anchor, None).is_ok() {
                        next_tree_v += 1;
                        snapshots.push(snap(&state));
                    }
                } else if snapshots.len() > 1 {
                    let back = rng.random_range(1..snapshots.len().min(5));
                    state.rollback(back, 1).unwrap();
                    for _ in 0..back {
                        snapshots.pop();
                        next_tree_v -= 1;
                    }
                    assert_eq!(snap(&state), *snapshots.last().unwrap(), "seed {seed}");
                }
            }
        }
    }

    #[test]
    fn rollback_restores_previous_state_exactly() {
        let g = complete(12);
        let mut state = blank_state(&g, 4, 1);
        state.ensure_tree_capacity(8);
        state.place(0, 0, None, false).unwrap();
        state.place(1, 1, Some(0), false).unwrap();
        let snapshot_map: Vec<Option<usize>> = (0..8).map(|v| state.mapped(v)).collect();
        let snapshot_deg = state.image_degrees.clone();
        let snapshot_shadow = state.shadow.clone();
        state.place(2, 2, Some(1), false).unwrap();
        state.place(3, 3, Some(2), false).unwrap();
        state.rollback(2, 0).unwrap();
        assert_eq!((0..8).map(|v| state.mapped(v)).collect::<Vec<_>>(), snapshot_map);
        assert_eq!(state.image_degrees, snapshot_deg);
        assert_eq!(state.shadow, snapshot_shadow);
    }

    #[test]
    fn cover_single_stage_covers_reserved_pair() {
        // Host K30, reserve two vertices, cover with a plan whose Q1 has
        // eight eligible tree vertices.
        let g = complete(30);
        let cert = fake_cert(&g, 2);
        let t = path_tree(25);
        let q: Vec<usize> = (1..25).step_by(3).collect();
        let plan = build_stage_plan(&t, &q, 1, 0, &|_| 1).unwrap();
        let mut state = EmbeddingState::from_sets(
            &g,
            &[],
            &[5, 9],
            &[],
            &cert,
            6,
            0,
            1000,
        )
        .unwrap();
        let ids: Vec<usize> = (0..25).collect();
        cover_stages(&mut state, &plan, &t, &ids, 0, &|_| 0, 3).unwrap();
        assert_eq!(state.reserved_count(), 0, "both reserved vertices covered");
        // Covered hosts carry preimages from Q.
        for h in [5, 9] {
            let pre = state.preimage(h).unwrap();
            assert!(plan.separated_sets[0].contains(&pre));
        }
    }

    #[test]
    fn cover_with_empty_reserve_is_plain_embedding() {
        let g = complete(20);
        let cert = fake_cert(&g, 1);
        let t = path_tree(12);
        let q: Vec<usize> = (0..12).collect();
        let plan = build_stage_plan(&t, &q, 2, 0, &|_| 0).unwrap();
        let mut state =
            EmbeddingState::from_sets(&g, &[], &[], &[], &cert, 6, 0, 1000).unwrap();
        let ids: Vec<usize> = (0..12).collect();
        cover_stages(&mut state, &plan, &t, &ids, 0, &|_| 0, 2).unwrap();
        assert!((0..12).all(|v| state.mapped(v).is_some()));
    }

    #[test]
    fn hall_complete_bipartite_matches() {
        let g = complete(10);
        let a = vec![0, 1, 2, 3, 4];
        let b = vec![5, 6, 7, 8, 9];
        match hall_finish(&g, &a, &b).unwrap() {
            HallOutcome::Matching(pairs) => {
                assert_eq!(pairs.len(), 5);
                let mut bs: Vec<usize> = pairs.iter().map(|&(_, b)| b).collect();
                bs.sort_unstable();
                assert_eq!(bs, b);
            }
            HallOutcome::Witness(_) => panic!("complete bipartite graph has a matching"),
        }
    }

    #[test]
    fn hall_violation_produces_witness() {
        // a1, a2 both adjacent only to b1.
        let g = Graph::from_edges(4, &[(0, 2), (1, 2)]).unwrap();
        match hall_finish(&g, &[0, 1], &[2, 3]).unwrap() {
            HallOutcome::Matching(_) => panic!("no perfect matching exists"),
            HallOutcome::Witness(u) => {
                assert_eq!(u, vec![0, 1]);
            }
        }
    }

    #[test]
    fn hall_agrees_with_exhaustive_oracle_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let k = rng.random_range(1..=6usize);
            let mut edges = Vec::new();
            for i in 0..k {
                for j in 0..k {
                    if rng.random_range(0..3) == 0 {
                        edges.push((i, k + j));
                    }
                }
            }
            let g = Graph::from_edges(2 * k, &edges).unwrap();
            let a: Vec<usize> = (0..k).collect();
            let b: Vec<usize> = (k..2 * k).collect();
            // Hall's condition, checked over every subset of A.
            let mut hall_holds = true;
            for mask in 1u32..(1 << k) {
                let mut nbrs = std::collections::HashSet::new();
                let mut size = 0;
                for i in 0..k {
                    if mask >> i & 1 == 1 {
                        size += 1;
                        for &w in g.neighbors(i) {
                            nbrs.insert(w);
                        }
                    }
                }
                if nbrs.len() < size {
                    hall_holds = false;
                    break;
                }
            }
            match hall_finish(&g, &a, &b).unwrap() {
                HallOutcome::Matching(pairs) => {
                    assert!(hall_holds);
                    assert_eq!(pairs.len(), k);
                    for (x, y) in pairs {
                        assert!(g.has_edge(x, y));
                    }
                }
                HallOutcome::Witness(u) => {
                    assert!(!hall_holds);
                    // The witness itself violates Hall's condition.
                    let mut nbrs = std::collections::HashSet::new();
                    for &x in &u {
                        for &w in g.neighbors(x) {
                            if b.contains(&w) {
                                nbrs.insert(w);
                            }
                        }
                    }
                    assert!(nbrs.len() < u.len());
                }
            }
        }
    }

    #[test]
    fn verify_accepts_identity_and_rejects_duplicates() {
        let t = path_tree(4);
        let host = crate::graphs::path_graph(4);
        let id: Vec<usize> = (0..4).collect();
        assert!(verify_embedding(&host, &t, &id, EmbedMode::IntoG).ok);
        let dup = vec![0, 1, 1, 3];
        let v = verify_embedding(&host, &t, &dup, EmbedMode::IntoG);
        assert!(!v.ok);
        assert!(v.counterexample.unwrap().contains("twice"));
    }

    #[test]
    fn verify_square_mode_uses_distance_two() {
        let host = crate::graphs::path_graph(3);
        let t = path_tree(2);
        // Map the edge to the two endpoints of the path: distance 2.
        let map = vec![0, 2];
        assert!(!verify_embedding(&host, &t, &map, EmbedMode::IntoG).ok);
        assert!(verify_embedding(&host, &t, &map, EmbedMode::IntoGSquare).ok);
    }

    #[test]
    fn star_into_complete_host() {
        let g = complete(30);
        let cert = estimate_lambda(&g, 1e-8).unwrap();
        let t = star_tree(30);
        let params = EmbedParams { d_param: Some(60), seed: 1, ..Default::default() };
        let e = embed_spanning_tree(&g, &cert, &t, &params).unwrap();
        assert!(e.verified);
        assert!(verify_embedding(&g, &t, &e.map, EmbedMode::IntoG).ok);
    }

    #[test]
    fn leafless_floor_precondition() {
        let g = complete(10);
        let cert = estimate_lambda(&g, 1e-8).unwrap();
        let t = path_tree(10);
        let params = EmbedParams { leaf_floor: 5, ..Default::default() };
        let err = embed_spanning_tree(&g, &cert, &t, &params).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn spanning_pipeline_on_midsize_random_regular() {
        let g = gen_random_regular(300, 24, 5).unwrap();
        let cert = estimate_lambda(&g, 1e-8).unwrap();
        let t = gen_tree(300, 3, Some(0.3), 8).unwrap();
        let params = EmbedParams { seed: 3, ..Default::default() };
        let e = embed_spanning_tree(&g, &cert, &t, &params).unwrap();
        assert!(verify_embedding(&g, &t, &e.map, EmbedMode::IntoG).ok);
    }

    #[test]
    fn square_pipeline_spikes_hamilton_path() {
        let g = gen_random_regular(300, 24, 6).unwrap();
        let cert = estimate_lambda(&g, 1e-8).unwrap();
        let t = path_tree(300);
        let params = EmbedParams { seed: 4, ..Default::default() };
        let e = embed_in_square(&g, &cert, &t, &params).unwrap();
        assert_eq!(e.mode, EmbedMode::IntoGSquare);
        assert!(verify_embedding(&g, &t, &e.map, EmbedMode::IntoGSquare).ok);
    }

    #[test]
    fn square_pipeline_delegates_on_many_leaves() {
        let g = gen_random_regular(200, 20, 7).unwrap();
        let cert = estimate_lambda(&g, 1e-8).unwrap();
        let t = gen_tree(200, 3, Some(0.3), 9).unwrap();
        let params = EmbedParams { seed: 5, ..Default::default() };
        let e = embed_in_square(&g, &cert, &t, &params).unwrap();
        assert_eq!(e.mode, EmbedMode::IntoG, "many-leaves branch embeds directly");
        assert!(verify_embedding(&g, &t, &e.map, EmbedMode::IntoGSquare).ok);
    }

    #[test]
    fn pipeline_is_deterministic_per_seed() {
        let g = gen_random_regular(200, 20, 3).unwrap();
        let cert = estimate_lambda(&g, 1e-8).unwrap();
        let t = gen_tree(200, 3, Some(0.3), 1).unwrap();
        let params = EmbedParams { seed: 9, ..Default::default() };
        let a = embed_spanning_tree(&g, &cert, &t, &params).unwrap();
        let b = embed_spanning_tree(&g, &cert, &t, &params).unwrap();
        assert_eq!(a.map, b.map);
    }

    #[test]
    fn square_pipeline_ratio_floor() {
        let g = cycle(12);
        let cert = estimate_lambda(&g, 1e-8).unwrap();
        let t = path_tree(12);
        let err = embed_in_square(&g, &cert, &t, &EmbedParams::default()).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }
}
