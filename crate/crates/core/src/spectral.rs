//! Spectral certification of pseudorandomness: estimate the largest
//! nontrivial adjacency eigenvalue λ, then audit the properties the
//! embedding pipeline relies on (edge-distribution mixing, joinedness).
//!
//! For an n-vertex d-regular graph the trivial eigenvalue d (all-ones
//! eigenvector) is removed by working with B = A − (d/n)·J, whose spectrum
//! agrees with A off the all-ones line and is 0 on it. Small instances get
//! an exact dense solve; larger ones use shifted power iteration on B with
//! per-step deflation of the all-ones direction.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::Graph;
use crate::util::derive_seed;

/// Above this order, λ is estimated iteratively instead of densely.
pub const DENSE_SOLVE_THRESHOLD: usize = 1024;

/// Iteration budget for one shifted power run.
const POWER_BUDGET: usize = 50_000;

const POWER_SEED: u64 = 0x53_70_65_63;

/// Certified spectral summary of a regular graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralCertificate {
    pub n: usize,
    pub d: usize,
    /// Estimate of max |μ| over nontrivial eigenvalues.
    pub lambda: f64,
    pub lambda_error: f64,
    /// d / λ, the pseudorandomness strength.
    pub ratio: f64,
    /// ⌈λ n / d⌉, the joinedness parameter.
    pub m: usize,
}

impl SpectralCertificate {
    fn new(n: usize, d: usize, lambda: f64, lambda_error: f64) -> SpectralCertificate {
        let lambda = lambda.max(0.0);
        SpectralCertificate {
            n,
            d,
            lambda,
            lambda_error,
            ratio: d as f64 / lambda.max(f64::MIN_POSITIVE),
            m: ((lambda * n as f64 / d as f64).ceil() as usize).max(1),
        }
    }

    /// Lower bound √(d(n−d)/(n−1)) that every λ must respect.
    pub fn second_eigenvalue_floor(&self) -> f64 {
        let (n, d) = (self.n as f64, self.d as f64);
        if self.n <= 1 {
            return 0.0;
        }
        (d * (n - d) / (n - 1.0)).sqrt()
    }
}

/// Estimates λ for a regular graph, within `tol` where the solver allows.
///
/// Dense path (n ≤ [`DENSE_SOLVE_THRESHOLD`]): full symmetric
/// eigendecomposition of B; `lambda_error` is machine-level. Iterative
/// path: shifted power iteration on B and on −B, stopping when the
/// Rayleigh residual drops below `tol`.
pub fn estimate_lambda(g: &Graph, tol: f64) -> Result<SpectralCertificate> {
    estimate_lambda_with_threshold(g, tol, DENSE_SOLVE_THRESHOLD)
}

/// As [`estimate_lambda`] with an explicit dense-solve cutoff.
pub fn estimate_lambda_with_threshold(
    g: &Graph,
    tol: f64,
    dense_threshold: usize,
) -> Result<SpectralCertificate> {
    if tol <= 0.0 {
        return Err(Error::Precondition("tol must be positive".into()));
    }
    let d = g.regular_degree().ok_or(Error::NotRegular)?;
    let n = g.n();
    if n < 2 {
        return Err(Error::Precondition("graph must have at least 2 vertices".into()));
    }
    if n <= dense_threshold {
        let lambda = dense_lambda(g, d);
        return Ok(SpectralCertificate::new(n, d, lambda, 1e-9_f64.min(tol)));
    }
    let (mu_max, err_hi) = shifted_power(g, d, tol, true)?;
    let (mu_min, err_lo) = shifted_power(g, d, tol, false)?;
    let lambda = mu_max.abs().max(mu_min.abs());
    Ok(SpectralCertificate::new(n, d, lambda, err_lo.max(err_hi)))
}

fn dense_lambda(g: &Graph, d: usize) -> f64 {
    let n = g.n();
    let shift = d as f64 / n as f64;
    let mut b = DMatrix::<f64>::from_element(n, n, -shift);
    for u in 0..n {
        for &v in g.neighbors(u) {
            b[(u, v)] = 1.0 - shift;
        }
    }
    let eig = b.symmetric_eigen();
    eig.eigenvalues.iter().fold(0.0_f64, |acc, &mu| acc.max(mu.abs()))
}

/// One power run on M = d·I + B (or d·I − B), restricted to the complement
/// of the all-ones direction. Returns the extreme eigenvalue of B on that
/// subspace (max if `top`, min otherwise) and a residual error bound.
fn shifted_power(g: &Graph, d: usize, tol: f64, top: bool) -> Result<(f64, f64)> {
    let n = g.n();
    let df = d as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(POWER_SEED, n as u64 + top as u64));
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    center(&mut x);
    normalize(&mut x);
    let mut y = vec![0.0; n];
    for _ in 0..POWER_BUDGET {
        apply_deflated(g, df, &x, &mut y, top);
        let theta = dot(&x, &y);
        let mut res = 0.0;
        for i in 0..n {
            let r = y[i] - theta * x[i];
            res += r * r;
        }
        let res = res.sqrt();
        center(&mut y);
        normalize(&mut y);
        std::mem::swap(&mut x, &mut y);
        if res <= tol {
            let mu = if top { theta - df } else { df - theta };
            return Ok((mu, res));
        }
    }
    Err(Error::NoConvergence(POWER_BUDGET))
}

fn apply_deflated(g: &Graph, d: f64, x: &[f64], y: &mut [f64], top: bool) {
    let n = g.n();
    let mean_term = d / n as f64 * x.iter().sum::<f64>();
    for u in 0..n {
        let mut s = 0.0;
        for &v in g.neighbors(u) {
            s += x[v];
        }
        let bu = s - mean_term;
        y[u] = if top { d * x[u] + bu } else { d * x[u] - bu };
    }
}

fn center(x: &mut [f64]) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    for v in x.iter_mut() {
        *v -= mean;
    }
}

fn normalize(x: &mut [f64]) {
    let norm = dot(x, x).sqrt();
    if norm > 0.0 {
        for v in x.iter_mut() {
            *v /= norm;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Audits
// ---------------------------------------------------------------------------

/// Outcome of a mixing / joinedness audit.
///
/// `max_violation > 0` means the audited inequality failed somewhere and
/// `violating_pair` holds the witness; otherwise the worst (most negative)
/// margin is recorded and no witness is present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub samples_checked: usize,
    pub max_violation: f64,
    pub violating_pair: Option<(Vec<usize>, Vec<usize>)>,
}

impl AuditReport {
    fn start() -> AuditReport {
        AuditReport {
            samples_checked: 0,
            max_violation: f64::NEG_INFINITY,
            violating_pair: None,
        }
    }

    fn record(&mut self, violation: f64, a: &[usize], b: &[usize]) {
        self.samples_checked += 1;
        if violation > self.max_violation {
            self.max_violation = violation;
            self.violating_pair = if violation > 0.0 {
                Some((a.to_vec(), b.to_vec()))
            } else {
                None
            };
        }
    }
}

/// Number of ordered pairs (a, b) with a ∈ A, b ∈ B, ab an edge. Edges
/// inside A ∩ B count twice, matching the mixing-lemma convention.
pub fn ordered_edge_count(g: &Graph, a: &[usize], b: &[usize]) -> usize {
    let mut in_b = vec![false; g.n()];
    for &v in b {
        in_b[v] = true;
    }
    let mut count = 0;
    for &u in a {
        count += g.neighbors(u).iter().filter(|&&w| in_b[w]).count();
    }
    count
}

fn mixing_violation(g: &Graph, lambda_bound: f64, a: &[usize], b: &[usize]) -> f64 {
    let d = g.regular_degree().unwrap_or(0) as f64;
    let n = g.n() as f64;
    let e = ordered_edge_count(g, a, b) as f64;
    let expected = d / n * a.len() as f64 * b.len() as f64;
    (e - expected).abs() - lambda_bound * ((a.len() * b.len()) as f64).sqrt()
}

/// Audits |e(A,B) − (d/n)|A||B|| < (λ + λ_err)·√(|A||B|) over sampled pairs.
///
/// Sizes sweep 1, ⌈√n⌉, ⌈n/10⌉, ⌈n/2⌉, n with disjoint, overlapping, and
/// A = B variants; all pairs of nonempty subsets are checked when n ≤ 12.
pub fn audit_mixing(
    g: &Graph,
    cert: &SpectralCertificate,
    samples: usize,
    seed: u64,
) -> AuditReport {
    let n = g.n();
    let bound = cert.lambda + cert.lambda_error;
    let mut report = AuditReport::start();
    if n <= 12 {
        let subsets: Vec<Vec<usize>> = (1u32..(1 << n))
            .map(|mask| (0..n).filter(|&v| mask >> v & 1 == 1).collect())
            .collect();
        for a in &subsets {
            for b in &subsets {
                report.record(mixing_violation(g, bound, a, b), a, b);
            }
        }
        return report;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = size_schedule(n);
    let mut i = 0;
    while report.samples_checked < samples {
        let sa = sizes[i % sizes.len()];
        let sb = sizes[(i / sizes.len()) % sizes.len()];
        i += 1;
        match i % 3 {
            0 if sa + sb <= n => {
                let mut pool = sample_subset(n, sa + sb, &mut rng);
                let b = pool.split_off(sa);
                report.record(mixing_violation(g, bound, &pool, &b), &pool, &b);
            }
            1 => {
                let a = sample_subset(n, sa, &mut rng);
                report.record(mixing_violation(g, bound, &a, &a), &a, &a);
            }
            _ => {
                let a = sample_subset(n, sa, &mut rng);
                let b = sample_subset(n, sb, &mut rng);
                report.record(mixing_violation(g, bound, &a, &b), &a, &b);
            }
        }
    }
    report
}

fn size_schedule(n: usize) -> Vec<usize> {
    let mut v = vec![
        1,
        (n as f64).sqrt().ceil() as usize,
        n.div_ceil(10),
        n.div_ceil(2),
        n,
    ];
    v.dedup();
    v
}

fn sample_subset(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    // Floyd's algorithm.
    let k = k.min(n);
    let mut chosen = std::collections::HashSet::with_capacity(k);
    for j in (n - k)..n {
        let t = rng.random_range(0..=j);
        let v = if chosen.contains(&t) { j } else { t };
        chosen.insert(v);
    }
    let mut out: Vec<usize> = chosen.into_iter().collect();
    out.sort_unstable();
    out
}

/// Looks for disjoint m-sets A, B with no edge between them. The report's
/// violation is 1 − e(A,B), so a positive value flags a witness pair.
/// Exhaustive over all disjoint pairs when that is small enough.
pub fn check_joined(g: &Graph, m: usize, trials: usize, seed: u64) -> AuditReport {
    let n = g.n();
    let mut report = AuditReport::start();
    if m == 0 || 2 * m > n {
        return report;
    }
    let exhaustive_cost = binomial(n, m).saturating_mul(binomial(n - m, m));
    if exhaustive_cost <= 200_000 {
        let sets = all_subsets_of_size(n, m);
        for a in &sets {
            for b in &sets {
                if disjoint(a, b) {
                    let e = ordered_edge_count(g, a, b);
                    report.record(1.0 - e as f64, a, b);
                }
            }
        }
        return report;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let mut pool = sample_subset(n, 2 * m, &mut rng);
        let b = pool.split_off(m);
        let e = ordered_edge_count(g, &pool, &b);
        report.record(1.0 - e as f64, &pool, &b);
    }
    report
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let mut r: usize = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

fn all_subsets_of_size(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for v in start..n {
            if n - v < k - cur.len() {
                break;
            }
            cur.push(v);
            rec(v + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

fn disjoint(a: &[usize], b: &[usize]) -> bool {
    // Both sorted.
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return false,
        }
    }
    true
}
