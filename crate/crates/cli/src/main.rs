use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use vpr_cli::synth::{self, SynthConfig};
use vpr_cli::{cmd_eval, cmd_index, cmd_refine, cmd_retrieve, cmd_run, RefinerKind, RunConfig};
use vpr_core::AggregationMethod;
use vpr_refiner::SceneKind;

#[derive(Parser)]
#[command(
    name = "vpr",
    version,
    about = "Training-free visual place recognition with language-model reranking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the reference index from feature files.
    Index(RunArgs),
    /// Retrieve top-k candidates for every query.
    Retrieve(RunArgs),
    /// Rerank retrieved candidates with the configured refiner.
    Refine(RunArgs),
    /// Score coarse and refined rankings with Recall@K.
    Eval(RunArgs),
    /// Run index, retrieve, refine and eval in sequence.
    Run(RunArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

/// Overrides for the run configuration. The API key is only ever read from
/// the environment variable named in the config.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, value_name = "cls|gem")]
    aggregator: Option<AggregationMethod>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_name = "indoor|outdoor")]
    scene: Option<SceneKind>,
    #[arg(long, value_name = "live|mock:<kind>")]
    refiner: Option<RefinerKind>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    threshold_m: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.manifest {
            c.manifest = v;
        }
        if let Some(v) = self.features {
            c.features_dir = v;
        }
        if let Some(v) = self.aggregator {
            c.aggregation.method = v;
        }
        if let Some(v) = self.p {
            c.aggregation.p = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = self.scene {
            c.scene = v;
        }
        if let Some(v) = self.refiner {
            c.refiner = v;
        }
        if let Some(v) = self.model {
            c.client.model_id = v;
        }
        if let Some(v) = self.base_url {
            c.client.base_url = v;
        }
        if let Some(v) = self.cache_dir {
            c.client.cache_dir = Some(v);
        }
        if let Some(v) = self.threshold_m {
            c.eval.threshold_m = v;
        }
        if let Some(v) = self.ks {
            c.eval.ks = v;
        }
        if let Some(v) = self.subsample {
            c.eval.subsample_n = Some(v);
        }
        if let Some(v) = self.seed {
            c.eval.seed = v;
        }
        if let Some(v) = self.workers {
            c.workers = Some(v);
        }
        if let Some(v) = self.out_dir {
            c.out_dir = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = SynthConfig::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = SynthConfig::default().n_references)]
    references: usize,
    #[arg(long, default_value_t = SynthConfig::default().n_queries)]
    queries: usize,
    #[arg(long, default_value_t = SynthConfig::default().rank3_fraction)]
    rank3_fraction: f64,
    #[arg(long, default_value_t = SynthConfig::default().dim)]
    dim: usize,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Index(args) => {
            let s = cmd_index(&args.resolve()?)?;
            println!(
                "indexed {} references (dim {}) -> {}",
                s.count,
                s.dim,
                s.path.display()
            );
        }
        Command::Retrieve(args) => {
            let config = args.resolve()?;
            let (header, _) = cmd_retrieve(&config)?;
            println!(
                "retrieved top-{} for {} queries -> {}",
                header.k,
                header.n_queries,
                config.retrieval_path().display()
            );
        }
        Command::Refine(args) => {
            let config = args.resolve()?;
            let s = cmd_refine(&config)?;
            println!(
                "refined {} queries: {} parsed, {} fell back to coarse order, {} model calls -> {}",
                s.n_queries,
                s.n_parsed,
                s.n_fallback,
                s.backend_calls,
                config.rerank_path().display()
            );
        }
        Command::Eval(args) => print!("{}", cmd_eval(&args.resolve()?)?.render_table()),
        Command::Run(args) => print!("{}", cmd_run(&args.resolve()?)?.render_table()),
        Command::Synth(args) => {
            let cfg = SynthConfig {
                n_references: args.references,
                n_queries: args.queries,
                rank3_fraction: args.rank3_fraction,
                dim: args.dim,
                seed: args.seed,
                ..SynthConfig::default()
            };
            let s = synth::generate(&args.out_dir, &cfg)?;
            println!(
                "wrote {} references and {} queries ({} planted at rank 3) to {}; run with --config {}",
                s.n_references,
                s.n_queries,
                s.n_rank3,
                s.dir.display(),
                s.config_path.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
