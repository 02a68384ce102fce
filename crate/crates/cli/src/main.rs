//! Command-line front end: generate hosts and trees, certify spectra,
//! audit pseudorandomness, run embeddings, and sweep experiments.
//!
//! Output files default into `$TREESQ_OUT` (falling back to the current
//! directory). Exit code is 0 only when every requested embedding
//! verified.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use treesq::embed::{EmbedMode, EmbedParams};
use treesq::error::Result;
use treesq::graphs;
use treesq::harness::{
    self, build_host, build_tree, run_experiments, summarize, ExperimentConfig, HostSpec,
    TreeFamily,
};
use treesq::spectral::{audit_mixing, check_joined, estimate_lambda};
use treesq::trees;
use treesq::util::derive_seed;

#[derive(Parser)]
#[command(
    name = "treesq",
    version,
    about = "Spanning trees in pseudorandom graphs and their squares"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a host graph (random regular, Paley, or complete).
    GenGraph {
        #[command(flatten)]
        host: HostArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output edge-list path; defaults to graph.txt under $TREESQ_OUT.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate λ and write a spectral certificate.
    Certify {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a bounded-degree tree.
    GenTree {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        delta: usize,
        #[arg(long, default_value = "random")]
        family: TreeFamilyArg,
        #[arg(long)]
        leaf_target: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit mixing and joinedness of a certified graph.
    Audit {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Joinedness set size; defaults to the certificate's m.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Embed a spanning tree directly into G.
    Embed {
        #[command(flatten)]
        job: EmbedArgs,
    },
    /// Embed a spanning tree into G² (spiking bare paths when needed).
    EmbedSquare {
        #[command(flatten)]
        job: EmbedArgs,
    },
    /// Run seeded experiment sweeps; emits CSV plus a JSON summary.
    Sweep {
        #[arg(long)]
        n: usize,
        /// Host degrees to sweep, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "50")]
        d: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "random")]
        families: Vec<TreeFamilyArg>,
        #[arg(long, default_value_t = 3)]
        delta: usize,
        #[arg(long)]
        leaf_target: Option<f64>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "into-g-square")]
        mode: ModeArg,
        #[command(flatten)]
        tuning: TuningArgs,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct HostArgs {
    /// Random regular host order (with --d).
    #[arg(long, conflicts_with_all = ["paley", "complete"])]
    n: Option<usize>,
    #[arg(long, requires = "n")]
    d: Option<usize>,
    /// Paley graph on prime q ≡ 1 (mod 4).
    #[arg(long)]
    paley: Option<usize>,
    /// Complete host Kₙ.
    #[arg(long)]
    complete: Option<usize>,
}

impl HostArgs {
    fn spec(&self) -> Result<HostSpec> {
        match (self.n, self.paley, self.complete) {
            (Some(n), None, None) => {
                let d = self.d.ok_or(treesq::Error::Config {
                    field: "d",
                    msg: "--d required with --n".into(),
                })?;
                Ok(HostSpec::RandomRegular { n, d })
            }
            (None, Some(q), None) => Ok(HostSpec::Paley { q }),
            (None, None, Some(n)) => Ok(HostSpec::Complete { n }),
            _ => Err(treesq::Error::Config {
                field: "host",
                msg: "pick exactly one of --n/--d, --paley, --complete".into(),
            }),
        }
    }
}

#[derive(Clone, Copy)]
struct TreeFamilyArg(TreeFamily);

impl std::str::FromStr for TreeFamilyArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.parse::<TreeFamily>().map(TreeFamilyArg).map_err(|e| e.to_string())
    }
}

#[derive(Clone, Copy)]
enum ModeArg {
    IntoG,
    IntoGSquare,
}

impl From<ModeArg> for EmbedMode {
    fn from(m: ModeArg) -> EmbedMode {
        match m {
            ModeArg::IntoG => EmbedMode::IntoG,
            ModeArg::IntoGSquare => EmbedMode::IntoGSquare,
        }
    }
}

impl std::str::FromStr for ModeArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<ModeArg, String> {
        match s.to_ascii_lowercase().as_str() {
            "into-g" | "g" => Ok(ModeArg::IntoG),
            "into-g-square" | "square" | "g2" => Ok(ModeArg::IntoGSquare),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    tree: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[command(flatten)]
    tuning: TuningArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct TuningArgs {
    /// Matchmaker strength t.
    #[arg(long, default_value_t = 4.0)]
    t_param: f64,
    /// Extendability degree cap D (default max(3, 4Δ)).
    #[arg(long)]
    d_param: Option<usize>,
    /// Stage count override.
    #[arg(long)]
    ell: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 2)]
    leaf_floor: usize,
    #[arg(long, default_value_t = 2.0)]
    ratio_floor: f64,
    #[arg(long, default_value_t = 6)]
    retries: usize,
    #[arg(long, default_value_t = 200)]
    matchmaker_retries: usize,
}

impl TuningArgs {
    fn params(&self, seed: u64) -> EmbedParams {
        EmbedParams {
            t_param: self.t_param,
            d_param: self.d_param,
            ell: self.ell,
            alpha: self.alpha,
            leaf_floor: self.leaf_floor,
            ratio_floor: self.ratio_floor,
            trial_retries: self.retries,
            matchmaker_retries: self.matchmaker_retries,
            seed,
            ..EmbedParams::default()
        }
    }
}

fn out_dir() -> PathBuf {
    std::env::var_os("TREESQ_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

fn resolve(out: Option<PathBuf>, default_name: &str) -> PathBuf {
    out.unwrap_or_else(|| out_dir().join(default_name))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::GenGraph { host, seed, out } => {
            let g = build_host(host.spec()?, seed)?;
            let path = resolve(out, "graph.txt");
            graphs::save_graph(&g, &path)?;
            println!(
                "wrote {} ({} vertices, {} edges)",
                path.display(),
                g.n(),
                g.edge_count()
            );
            Ok(true)
        }
        Cmd::Certify { graph, tol, out } => {
            let g = graphs::load_graph(&graph)?;
            let cert = estimate_lambda(&g, tol)?;
            let path = resolve(out, "certificate.json");
            std::fs::write(&path, serde_json::to_string_pretty(&cert)?)?;
            println!(
                "lambda = {:.6} (±{:.2e}), ratio d/lambda = {:.4}, m = {}",
                cert.lambda, cert.lambda_error, cert.ratio, cert.m
            );
            println!("wrote {}", path.display());
            Ok(true)
        }
        Cmd::GenTree { n, delta, family, leaf_target, seed, out } => {
            let t = build_tree(family.0, n, delta, leaf_target, seed)?;
            let leaves = (0..t.n()).filter(|&v| t.degree(v) == 1).count();
            let path = resolve(out, "tree.txt");
            trees::save_tree(&t, &path)?;
            println!("wrote {} ({} leaves)", path.display(), leaves);
            Ok(true)
        }
        Cmd::Audit { graph, tol, samples, m, seed } => {
            let g = graphs::load_graph(&graph)?;
            let cert = estimate_lambda(&g, tol)?;
            println!("lambda = {:.6}, ratio = {:.4}", cert.lambda, cert.ratio);
            let mixing = audit_mixing(&g, &cert, samples, seed);
            println!(
                "mixing: {} pairs checked, max violation {:.6}{}",
                mixing.samples_checked,
                mixing.max_violation,
                if mixing.max_violation > 0.0 { "  ** VIOLATION **" } else { "" }
            );
            let m = m.unwrap_or(cert.m);
            let joined = check_joined(&g, m, samples, derive_seed(seed, 1));
            match &joined.violating_pair {
                Some((a, b)) => {
                    println!("joined: edgeless disjoint {m}-set pair found: {a:?} vs {b:?}")
                }
                None => println!(
                    "joined: no edgeless pair among {} samples at m = {m}",
                    joined.samples_checked
                ),
            }
            Ok(mixing.max_violation <= 0.0)
        }
        Cmd::Embed { job } => run_embed(job, EmbedMode::IntoG),
        Cmd::EmbedSquare { job } => run_embed(job, EmbedMode::IntoGSquare),
        Cmd::Sweep {
            n,
            d,
            families,
            delta,
            leaf_target,
            trials,
            seed,
            mode,
            tuning,
            out_dir: dir,
        } => {
            let dir = dir.unwrap_or_else(out_dir);
            std::fs::create_dir_all(&dir)?;
            let mut all = Vec::new();
            for &deg in &d {
                for family in &families {
                    let mut cfg = ExperimentConfig::new(
                        HostSpec::RandomRegular { n, d: deg },
                        family.0,
                        delta,
                    );
                    cfg.leaf_target = leaf_target;
                    cfg.trials = trials;
                    cfg.seed = derive_seed(seed, deg as u64);
                    cfg.mode = mode.into();
                    cfg.embed = tuning.params(cfg.seed);
                    all.extend(run_experiments(&cfg)?);
                }
            }
            let csv_path = dir.join("trials.csv");
            let f = std::fs::File::create(&csv_path)?;
            harness::write_csv(&all, std::io::BufWriter::new(f))?;
            let summary = summarize(&all);
            let summary_path = dir.join("summary.json");
            std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
            println!(
                "{} trials, {} successes; wrote {} and {}",
                summary.total,
                summary.successes,
                csv_path.display(),
                summary_path.display()
            );
            for group in &summary.groups {
                println!(
                    "  d/lambda = {:>5.1}: {:>3}/{:<3} ({:.0}%), mean {:.0} ms",
                    group.ratio,
                    group.successes,
                    group.trials,
                    100.0 * group.success_rate,
                    group.mean_millis
                );
            }
            Ok(summary.successes == summary.total && summary.all_verified)
        }
    }
}

fn run_embed(job: EmbedArgs, mode: EmbedMode) -> Result<bool> {
    let g = graphs::load_graph(&job.graph)?;
    let t = trees::load_tree(&job.tree)?;
    let cert = estimate_lambda(&g, job.tol)?;
    let params = job.tuning.params(job.seed);
    let result = match mode {
        EmbedMode::IntoG => treesq::embed_spanning_tree(&g, &cert, &t, &params),
        EmbedMode::IntoGSquare => treesq::embed_in_square(&g, &cert, &t, &params),
    };
    match result {
        Ok(embedding) => {
            let check = treesq::verify_embedding(&g, &t, &embedding.map, embedding.mode);
            let path = resolve(job.out, "embedding.json");
            std::fs::write(&path, serde_json::to_string_pretty(&embedding)?)?;
            println!(
                "embedded ({}) and {}; wrote {}",
                embedding.mode,
                if check.ok { "verified" } else { "FAILED VERIFICATION" },
                path.display()
            );
            Ok(check.ok)
        }
        Err(e) => {
            eprintln!("embedding failed: {e}");
            Ok(false)
        }
    }
}
