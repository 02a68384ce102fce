//! Experiment harness: configuration, seeded trial sweeps over hosts and
//! tree families, CSV/JSON persistence, and ratio-bucketed summaries.
//!
//! Trials are isolated and deterministic per (config, trial index); they
//! run on a worker pool but are collected in submission order, so the CSV
//! is reproducible byte-for-byte apart from the wall-time column.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{
    embed_in_square_with_stats, embed_spanning_tree_with_stats, verify_embedding, EmbedMode,
    EmbedParams,
};
use crate::error::{Error, Result};
use crate::graphs::{complete, gen_paley, gen_random_regular, Graph};
use crate::spectral::{estimate_lambda, SpectralCertificate};
use crate::trees::{
    binary_tree, caterpillar_tree, extract_bare_paths, gen_tree, leaf_census, path_tree,
    spider_tree, Tree,
};
use crate::util::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeFamily {
    Random,
    Path,
    Caterpillar,
    Binary,
    Spider,
}

impl std::fmt::Display for TreeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TreeFamily::Random => "random",
            TreeFamily::Path => "path",
            TreeFamily::Caterpillar => "caterpillar",
            TreeFamily::Binary => "binary",
            TreeFamily::Spider => "spider",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for TreeFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<TreeFamily> {
        match s {
            "random" => Ok(TreeFamily::Random),
            "path" => Ok(TreeFamily::Path),
            "caterpillar" => Ok(TreeFamily::Caterpillar),
            "binary" => Ok(TreeFamily::Binary),
            "spider" => Ok(TreeFamily::Spider),
            other => Err(Error::Config {
                field: "tree_family",
                msg: format!("unknown family `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HostSpec {
    RandomRegular { n: usize, d: usize },
    Paley { q: usize },
    Complete { n: usize },
}

impl HostSpec {
    pub fn n(&self) -> usize {
        match *self {
            HostSpec::RandomRegular { n, .. } => n,
            HostSpec::Paley { q } => q,
            HostSpec::Complete { n } => n,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub host: HostSpec,
    pub tree_family: TreeFamily,
    pub delta: usize,
    pub leaf_target: Option<f64>,
    pub trials: usize,
    pub seed: u64,
    pub mode: EmbedMode,
    /// Solver tolerance for the certificate.
    pub tol: f64,
    #[serde(skip)]
    pub embed: EmbedParams,
}

impl ExperimentConfig {
    pub fn new(host: HostSpec, tree_family: TreeFamily, delta: usize) -> ExperimentConfig {
        ExperimentConfig {
            host,
            tree_family,
            delta,
            leaf_target: None,
            trials: 1,
            seed: 0,
            mode: EmbedMode::IntoG,
            tol: 1e-8,
            embed: EmbedParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::Config { field: "trials", msg: "must be >= 1".into() });
        }
        if let HostSpec::RandomRegular { n, d } = self.host {
            if 5 * d > 3 * n {
                return Err(Error::Config {
                    field: "d",
                    msg: format!("d = {d} exceeds 3n/5 = {}", 3 * n / 5),
                });
            }
            if d >= n || n * d % 2 != 0 {
                return Err(Error::Config { field: "d", msg: "infeasible (n, d)".into() });
            }
        }
        if self.delta < 2 {
            return Err(Error::Config { field: "delta", msg: "must be >= 2".into() });
        }
        let d_cap = self.embed.effective_d(self.delta);
        if 2 * self.delta > d_cap {
            return Err(Error::Config {
                field: "delta",
                msg: format!("delta = {} above D/2 = {}", self.delta, d_cap / 2),
            });
        }
        if let Some(f) = self.leaf_target {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config { field: "leaf_target", msg: "must be in [0,1]".into() });
            }
        }
        Ok(())
    }
}

/// One row of an experiment: inputs, certificate numbers, tree statistics,
/// and the outcome with its independent re-verification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub ratio: f64,
    pub fingerprint: String,
    pub tree_family: TreeFamily,
    pub leaves: usize,
    pub bare_paths: usize,
    pub mode: EmbedMode,
    /// "success" or the name of the failing step.
    pub outcome: String,
    pub failing_step: String,
    pub verified: bool,
    pub rollbacks: usize,
    pub millis: u128,
}

pub fn build_tree(
    family: TreeFamily,
    n: usize,
    delta: usize,
    leaf_target: Option<f64>,
    seed: u64,
) -> Result<Tree> {
    match family {
        TreeFamily::Random => gen_tree(n, delta, leaf_target, seed),
        TreeFamily::Path => Ok(path_tree(n)),
        TreeFamily::Caterpillar => caterpillar_tree(n, delta.max(3), seed),
        TreeFamily::Binary => Ok(binary_tree(n)),
        TreeFamily::Spider => spider_tree(n, delta.max(3)),
    }
}

pub fn build_host(spec: HostSpec, seed: u64) -> Result<Graph> {
    match spec {
        HostSpec::RandomRegular { n, d } => gen_random_regular(n, d, seed),
        HostSpec::Paley { q } => gen_paley(q),
        HostSpec::Complete { n } => Ok(complete(n)),
    }
}

/// Runs the configured trials on a worker pool; records are returned in
/// trial order regardless of scheduling.
pub fn run_experiments(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    // Deterministic hosts are built and certified once.
    let shared: Option<(Graph, SpectralCertificate)> = match cfg.host {
        HostSpec::RandomRegular { .. } => None,
        spec => {
            let g = build_host(spec, 0)?;
            let cert = estimate_lambda(&g, cfg.tol)?;
            Some((g, cert))
        }
    };
    (0..cfg.trials)
        .into_par_iter()
        .map(|i| run_trial(cfg, shared.as_ref(), i))
        .collect()
}

fn run_trial(
    cfg: &ExperimentConfig,
    shared: Option<&(Graph, SpectralCertificate)>,
    index: usize,
) -> Result<TrialRecord> {
    let seed = derive_seed(cfg.seed, index as u64);
    let owned;
    let (g, cert) = match shared {
        Some((g, c)) => (g, c.clone()),
        None => {
            let g = build_host(cfg.host, seed)?;
            let cert = estimate_lambda(&g, cfg.tol)?;
            owned = g;
            (&owned, cert)
        }
    };
    let tree = build_tree(cfg.tree_family, g.n(), cfg.delta, cfg.leaf_target, seed)?;
    let (leaves, _) = leaf_census(&tree);
    let bare = extract_bare_paths(&tree, 3).paths.len();

    let mut params = cfg.embed.clone();
    params.seed = seed;
    let start = std::time::Instant::now();
    let result = match cfg.mode {
        EmbedMode::IntoG => embed_spanning_tree_with_stats(g, &cert, &tree, &params),
        EmbedMode::IntoGSquare => embed_in_square_with_stats(g, &cert, &tree, &params),
    };
    let millis = start.elapsed().as_millis();

    let (outcome, failing_step, verified, rollbacks) = match &result {
        Ok((e, stats)) => {
            let check = verify_embedding(g, &tree, &e.map, cfg.mode);
            ("success".to_string(), String::new(), check.ok, stats.rollbacks)
        }
        Err(Error::EmbedFailed { step, .. }) => {
            (step.to_string(), step.to_string(), false, 0)
        }
        Err(e) => {
            let label = match e {
                Error::Precondition(_) => "precondition",
                Error::Infeasible(_) => "infeasible",
                _ => "error",
            };
            (label.to_string(), label.to_string(), false, 0)
        }
    };
    Ok(TrialRecord {
        seed,
        n: g.n(),
        d: cert.d,
        lambda: cert.lambda,
        ratio: cert.ratio,
        fingerprint: format!("{:016x}", g.fingerprint()),
        tree_family: cfg.tree_family,
        leaves: leaves.len(),
        bare_paths: bare,
        mode: cfg.mode,
        outcome,
        failing_step,
        verified,
        rollbacks,
        millis,
    })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

pub const CSV_HEADER: &str =
    "seed,n,d,lambda,ratio,tree_family,leaves,mode,outcome,failing_step,rollbacks,millis";

pub fn write_csv<W: Write>(records: &[TrialRecord], mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{:.6},{:.4},{},{},{},{},{},{},{}",
            r.seed,
            r.n,
            r.d,
            r.lambda,
            r.ratio,
            r.tree_family,
            r.leaves,
            r.mode,
            r.outcome,
            r.failing_step,
            r.rollbacks,
            r.millis
        )?;
    }
    Ok(())
}

pub fn save_records_json(records: &[TrialRecord], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), records)?;
    Ok(())
}

pub fn load_records_json(path: &Path) -> Result<Vec<TrialRecord>> {
    let f = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

/// Success rates bucketed by d/λ (one decimal).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub successes: usize,
    pub all_verified: bool,
    pub groups: Vec<SummaryGroup>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryGroup {
    pub ratio: f64,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_millis: f64,
}

pub fn summarize(records: &[TrialRecord]) -> Summary {
    let mut buckets: std::collections::BTreeMap<i64, (usize, usize, u128)> =
        std::collections::BTreeMap::new();
    for r in records {
        let key = (r.ratio * 10.0).round() as i64;
        let e = buckets.entry(key).or_default();
        e.0 += 1;
        if r.outcome == "success" {
            e.1 += 1;
        }
        e.2 += r.millis;
    }
    let successes = records.iter().filter(|r| r.outcome == "success").count();
    Summary {
        total: records.len(),
        successes,
        all_verified: records
            .iter()
            .all(|r| r.outcome != "success" || r.verified),
        groups: buckets
            .into_iter()
            .map(|(key, (trials, wins, ms))| SummaryGroup {
                ratio: key as f64 / 10.0,
                trials,
                successes: wins,
                success_rate: wins as f64 / trials as f64,
                mean_millis: ms as f64 / trials as f64,
            })
            .collect(),
    }
}
