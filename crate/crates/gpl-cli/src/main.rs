//! `gpl` drives the key-step discovery pipeline: generate synthetic tasks,
//! run stages over a task directory, export plots. Set `GPL_LOG` to control
//! log verbosity (error, warn, info, debug, trace).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpl_core::pipeline::{self, PipelineConfig, Stage};
use gpl_core::synth::{self, SynthSpec};

#[derive(Parser)]
#[command(name = "gpl", version, about = "Multi-video key-step discovery pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Rerun even when inputs are unchanged.
    #[arg(long)]
    force: bool,
    /// Worker threads for parallel sections (0 = all cores).
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Force seeded, byte-reproducible runs (overrides the config).
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Validate inputs and record which clips survive background filtering.
    Filter(StageArgs),
    /// Build the unity graph over all kept clips.
    Graph(StageArgs),
    /// Refine node embeddings with biased walks and skip-gram training.
    Embed(StageArgs),
    /// Cluster refined embeddings into key-steps.
    Cluster(StageArgs),
    /// Order clusters by average normalized time.
    Order(StageArgs),
    /// Score predictions against ground-truth annotations.
    Eval(StageArgs),
    /// Run every stage in sequence.
    All(StageArgs),
    /// Project trained embeddings to 2-D for external plotting.
    Project(StageArgs),
    /// Generate a synthetic task directory with planted key-steps.
    Synth {
        /// Generator spec (TOML).
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for the task files and manifest.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &StageArgs) -> gpl_core::Result<PipelineConfig> {
    let mut cfg = pipeline::load_config(&args.config)?;
    if args.deterministic {
        cfg.deterministic = true;
    }
    Ok(cfg)
}

fn run_stage(stage: Stage, args: &StageArgs) -> gpl_core::Result<()> {
    if args.threads != 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads)
            .build_global()
            .map_err(|e| gpl_core::Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(args)?;
    let outcomes = pipeline::run(&cfg, stage, args.force)?;
    for outcome in outcomes {
        println!(
            "{}: {}",
            outcome.stage.name(),
            if outcome.ran { "done" } else { "skipped (inputs unchanged)" }
        );
    }
    Ok(())
}

fn dispatch(cli: Cli) -> gpl_core::Result<()> {
    match cli.command {
        Command::Filter(args) => run_stage(Stage::Filter, &args),
        Command::Graph(args) => run_stage(Stage::Graph, &args),
        Command::Embed(args) => run_stage(Stage::Embed, &args),
        Command::Cluster(args) => run_stage(Stage::Cluster, &args),
        Command::Order(args) => run_stage(Stage::Order, &args),
        Command::Eval(args) => run_stage(Stage::Eval, &args),
        Command::All(args) => run_stage(Stage::All, &args),
        Command::Project(args) => {
            let cfg = load_config(&args)?;
            let path = pipeline::export_projection(&cfg)?;
            println!("projection written to {}", path.display());
            Ok(())
        }
        Command::Synth { spec, out } => {
            let raw = std::fs::read_to_string(&spec).map_err(|e| {
                gpl_core::Error::Config(format!("cannot read spec {}: {e}", spec.display()))
            })?;
            let spec: SynthSpec = toml::from_str(&raw)
                .map_err(|e| gpl_core::Error::Config(format!("spec parse: {e}")))?;
            let manifest = synth::write_task_dir(&spec, &out)?;
            println!(
                "wrote task {} ({} videos) to {}",
                manifest.task_name,
                manifest.videos.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GPL_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
