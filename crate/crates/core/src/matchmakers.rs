//! Matchmaker selection: small disjoint vertex sets V₁, V₂, V₃ into which
//! every host vertex keeps a guaranteed number of neighbors. V₁ is removed
//! from the host during embedding and returned at matching time, V₂ is the
//! coverage target, V₃ backs the expansion audits.
//!
//! The coloring construction needs k = ⌊d/(tλ)⌋ color classes and verifies
//! the per-class degree d/2k after each coloring, retrying with fresh seeds
//! instead of invoking the local lemma. At small d/λ no k satisfies the
//! preconditions; [`sample_disjoint_sets`] is the verified sampling
//! construction the pipeline falls back to there.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::Graph;
use crate::spectral::{AuditReport, SpectralCertificate};
use crate::util::derive_seed;

/// Disjoint vertex sets with a verified minimum degree into each.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchmakerFamily {
    #[serde(rename = "t")]
    pub t_param: f64,
    /// Number of color classes used by the construction.
    pub k: usize,
    pub sets: Vec<Vec<usize>>,
    /// Verified lower bound on d(v, Vᵢ) over all v and i; equals d/2k for
    /// the coloring construction.
    #[serde(rename = "min_degree")]
    pub guaranteed_min_degree: f64,
}

impl MatchmakerFamily {
    /// A1's size cap 4tλn/d.
    pub fn size_cap(&self, cert: &SpectralCertificate) -> f64 {
        4.0 * self.t_param * cert.lambda * cert.n as f64 / cert.d as f64
    }
}

/// Randomly k-colors the host with k = ⌊d/(t·λ)⌋ classes and retries until
/// every vertex has at least d/2k neighbors in every class, then returns
/// the `ell` smallest classes.
pub fn select_matchmakers(
    g: &Graph,
    cert: &SpectralCertificate,
    t_param: f64,
    ell: usize,
    max_retries: usize,
    seed: u64,
) -> Result<MatchmakerFamily> {
    let d = g.regular_degree().ok_or(Error::NotRegular)?;
    if ell == 0 || t_param <= 0.0 {
        return Err(Error::Precondition("need ell >= 1 and t > 0".into()));
    }
    let k = (d as f64 / (t_param * cert.lambda)).floor() as usize;
    if k < 2 * ell {
        return Err(Error::Precondition(format!(
            "k = floor(d / (t*lambda)) = {k} is below 2*ell = {} (d = {d}, t = {t_param}, \
             lambda = {:.4}); the coloring construction needs a larger d/lambda or smaller t",
            2 * ell,
            cert.lambda
        )));
    }
    let threshold = d as f64 / (2.0 * k as f64);
    let n = g.n();
    let cap = 4.0 * t_param * cert.lambda * n as f64 / d as f64;

    for attempt in 0..max_retries {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, attempt as u64));
        let color: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        if !coloring_ok(g, &color, k, threshold) {
            continue;
        }
        let mut classes: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (v, &c) in color.iter().enumerate() {
            classes[c].push(v);
        }
        classes.sort_by_key(|c| (c.len(), c.first().copied().unwrap_or(0)));
        let sets: Vec<Vec<usize>> = classes.into_iter().take(ell).collect();
        if sets.iter().any(|s| s.len() as f64 > cap) {
            continue;
        }
        debug_assert!(threshold >= t_param * cert.lambda / 4.0);
        return Ok(MatchmakerFamily {
            t_param,
            k,
            sets,
            guaranteed_min_degree: threshold,
        });
    }
    Err(Error::RetriesExhausted(max_retries))
}

fn coloring_ok(g: &Graph, color: &[usize], k: usize, threshold: f64) -> bool {
    let n = g.n();
    let mut counts = vec![0u32; k];
    for v in 0..n {
        counts.fill(0);
        for &w in g.neighbors(v) {
            counts[color[w]] += 1;
        }
        if counts.iter().any(|&c| (c as f64) < threshold) {
            return false;
        }
    }
    true
}

/// Draws `sizes` pairwise-disjoint random sets and retries until every
/// vertex has at least `min_into[i]` neighbors in set i. The verified
/// minimum degrees come back with the sets.
///
/// This is the desk-scale stand-in used when the coloring construction's
/// k = ⌊d/(tλ)⌋ cannot reach 2·ell.
pub fn sample_disjoint_sets(
    g: &Graph,
    sizes: &[usize],
    min_into: &[usize],
    max_retries: usize,
    seed: u64,
) -> Result<(Vec<Vec<usize>>, Vec<usize>)> {
    let n = g.n();
    let total: usize = sizes.iter().sum();
    if total > n {
        return Err(Error::Precondition(format!("set sizes sum to {total} > n = {n}")));
    }
    if min_into.len() != sizes.len() {
        return Err(Error::Precondition("sizes and min_into must align".into()));
    }
    for attempt in 0..max_retries {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5a17 + attempt as u64));
        let mut pool: Vec<usize> = (0..n).collect();
        pool.shuffle(&mut rng);
        let mut sets = Vec::with_capacity(sizes.len());
        let mut cursor = 0;
        for &s in sizes {
            let mut set: Vec<usize> = pool[cursor..cursor + s].to_vec();
            set.sort_unstable();
            sets.push(set);
            cursor += s;
        }
        let mins = min_degrees_into(g, &sets);
        if mins.iter().zip(min_into).all(|(&got, &want)| got >= want || want == 0) {
            return Ok((sets, mins));
        }
    }
    Err(Error::RetriesExhausted(max_retries))
}

fn min_degrees_into(g: &Graph, sets: &[Vec<usize>]) -> Vec<usize> {
    let n = g.n();
    let mut membership = vec![usize::MAX; n];
    for (i, set) in sets.iter().enumerate() {
        for &v in set {
            membership[v] = i;
        }
    }
    let mut mins = vec![usize::MAX; sets.len()];
    let mut counts = vec![0usize; sets.len()];
    for v in 0..n {
        counts.fill(0);
        for &w in g.neighbors(v) {
            if membership[w] != usize::MAX {
                counts[membership[w]] += 1;
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            if sets[i].is_empty() {
                continue;
            }
            mins[i] = mins[i].min(c);
        }
    }
    for (i, m) in mins.iter_mut().enumerate() {
        if sets[i].is_empty() {
            *m = 0;
        }
    }
    mins
}

/// Exhaustive audit of a family: disjointness, A1 size caps, and per-vertex
/// degrees into each set, with the worst vertex and its margin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyReport {
    pub disjoint_ok: bool,
    pub overlap_witness: Option<usize>,
    pub size_cap: f64,
    pub oversized_sets: Vec<usize>,
    pub required_min_degree: f64,
    /// (vertex, set index, degree) with the smallest degree-into found.
    pub worst: Option<(usize, usize, usize)>,
    /// worst degree minus the requirement; negative means a violation.
    pub margin: f64,
    pub violations: usize,
}

pub fn verify_matchmakers(
    g: &Graph,
    fam: &MatchmakerFamily,
    cert: &SpectralCertificate,
) -> FamilyReport {
    let n = g.n();
    let mut seen = vec![false; n];
    let mut overlap = None;
    for set in &fam.sets {
        for &v in set {
            if seen[v] && overlap.is_none() {
                overlap = Some(v);
            }
            seen[v] = true;
        }
    }
    let cap = fam.size_cap(cert);
    let oversized: Vec<usize> = fam
        .sets
        .iter()
        .enumerate()
        .filter(|(_, s)| s.len() as f64 > cap)
        .map(|(i, _)| i)
        .collect();

    let mut worst: Option<(usize, usize, usize)> = None;
    let mut violations = 0;
    let mut membership = vec![usize::MAX; n];
    for (i, set) in fam.sets.iter().enumerate() {
        for &v in set {
            membership[v] = i;
        }
    }
    let mut counts = vec![0usize; fam.sets.len()];
    for v in 0..n {
        counts.fill(0);
        for &w in g.neighbors(v) {
            if membership[w] != usize::MAX {
                counts[membership[w]] += 1;
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            if (c as f64) < fam.guaranteed_min_degree {
                violations += 1;
            }
            if worst.is_none_or(|(_, _, w)| c < w) {
                worst = Some((v, i, c));
            }
        }
    }
    let margin = worst.map_or(0.0, |(_, _, c)| c as f64 - fam.guaranteed_min_degree);
    FamilyReport {
        disjoint_ok: overlap.is_none(),
        overlap_witness: overlap,
        size_cap: cap,
        oversized_sets: oversized,
        required_min_degree: fam.guaranteed_min_degree,
        worst,
        margin,
        violations,
    }
}

/// Checks |N(S)∩X| ≥ D|S| for sampled S with |S| ≤ λn/d, under the
/// hypothesis that every vertex has at least 2Dλ neighbors in X.
///
/// Exhaustive over all subsets when n ≤ 12; the report's violation is
/// D|S| − |N(S)∩X|, so positive flags a failure with S as witness.
pub fn check_expansion(
    g: &Graph,
    x: &[usize],
    d_param: f64,
    cert: &SpectralCertificate,
    trials: usize,
    seed: u64,
) -> Result<AuditReport> {
    let n = g.n();
    let mut in_x = vec![false; n];
    for &v in x {
        in_x[v] = true;
    }
    let need = 2.0 * d_param * cert.lambda;
    for v in 0..n {
        let deg_x = g.neighbors(v).iter().filter(|&&w| in_x[w]).count();
        if (deg_x as f64) < need {
            return Err(Error::HypothesisViolation(format!(
                "vertex {v} has {deg_x} neighbors in X, below 2*D*lambda = {need:.2}"
            )));
        }
    }
    let m = cert.m.max(1);
    let mut report = ExpansionAccum::new();
    if n <= 12 {
        for mask in 1u32..(1 << n) {
            let s: Vec<usize> = (0..n).filter(|&v| mask >> v & 1 == 1).collect();
            if s.len() <= m {
                report.check(g, &in_x, d_param, &s);
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..trials {
            let size = 1 + i % m;
            let mut s: Vec<usize> = Vec::with_capacity(size);
            while s.len() < size {
                let v = rng.random_range(0..n);
                if !s.contains(&v) {
                    s.push(v);
                }
            }
            s.sort_unstable();
            report.check(g, &in_x, d_param, &s);
        }
    }
    Ok(report.0)
}

struct ExpansionAccum(AuditReport);

impl ExpansionAccum {
    fn new() -> Self {
        ExpansionAccum(AuditReport {
            samples_checked: 0,
            max_violation: f64::NEG_INFINITY,
            violating_pair: None,
        })
    }

    fn check(&mut self, g: &Graph, in_x: &[bool], d_param: f64, s: &[usize]) {
        let mut in_s = vec![false; g.n()];
        for &v in s {
            in_s[v] = true;
        }
        let mut hit = std::collections::HashSet::new();
        for &v in s {
            for &w in g.neighbors(v) {
                if !in_s[w] && in_x[w] {
                    hit.insert(w);
                }
            }
        }
        let violation = d_param * s.len() as f64 - hit.len() as f64;
        self.0.samples_checked += 1;
        if violation > self.0.max_violation {
            self.0.max_violation = violation;
            self.0.violating_pair = if violation > 0.0 {
                let mut ns: Vec<usize> = hit.into_iter().collect();
                ns.sort_unstable();
                Some((s.to_vec(), ns))
            } else {
                None
            };
        }
    }
}
