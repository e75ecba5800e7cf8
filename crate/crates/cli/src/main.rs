mod commands;
mod config;
mod failure;
mod layout;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{keys_help, RunConfig};
use layout::Layout;

#[derive(Parser)]
#[command(name = "discgan", version, about = "Cluster-specific underwater image synthesis")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration (required)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps worker threads
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render clean scenes under every water type into <out>/data
    #[command(after_help = keys_help("render"))]
    Render {
        /// Directory of <name>.ppm images with matching <name>.pfm depth maps
        #[arg(required_unless_present = "procedural", conflicts_with = "procedural")]
        input: Option<PathBuf>,
        /// Generate scenes procedurally instead of loading them
        #[arg(long)]
        procedural: bool,
    },
    /// Fit the style clusters into <out>/clusters
    #[command(after_help = keys_help("cluster"))]
    Cluster {
        /// Render set directory or features CSV [default: <out>/data]
        input: Option<PathBuf>,
    },
    /// Write the inertia-versus-k curve to <out>/reports/elbow.csv
    #[command(after_help = keys_help("elbow"))]
    Elbow {
        /// Render set directory or features CSV [default: <out>/data]
        input: Option<PathBuf>,
    },
    /// Train one cluster's network into <out>/checkpoints/<cluster>
    #[command(after_help = keys_help("train"))]
    Train {
        cluster: usize,
    },
    /// Translate content images into a cluster's style, into <out>/synth/<cluster>
    #[command(after_help = keys_help("synthesize"))]
    Synthesize {
        cluster: usize,
        /// Content image or directory [default: the cluster's validation scenes]
        content: Option<PathBuf>,
    },
    /// Score generated images against same-named references into <out>/reports
    #[command(after_help = keys_help("evaluate"))]
    Evaluate {
        /// Generated images, flat or one subdirectory per cluster [default: <out>/synth]
        generated: Option<PathBuf>,
        /// Reference images [default: <out>/data/rendered]
        reference: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Render { .. } => "render",
            Command::Cluster { .. } => "cluster",
            Command::Elbow { .. } => "elbow",
            Command::Train { .. } => "train",
            Command::Synthesize { .. } => "synthesize",
            Command::Evaluate { .. } => "evaluate",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    let config_path = cli
        .common
        .config
        .ok_or_else(|| failure::Failure::config("--config is required".into()))?;
    let cfg = RunConfig::load(&config_path, cli.common.seed)?;
    let layout = Layout::new(&cli.common.out);
    commands::echo_config(&layout, cli.command.name(), &cfg)?;
    let data = layout.data();
    match cli.command {
        Command::Render { input, .. } => commands::render(&cfg, &layout, input.as_deref()),
        Command::Cluster { input } => commands::cluster(&cfg, &layout, input.as_deref().unwrap_or(&data)),
        Command::Elbow { input } => commands::elbow(&cfg, &layout, input.as_deref().unwrap_or(&data)),
        Command::Train { cluster } => commands::train(&cfg, &layout, cluster),
        Command::Synthesize { cluster, content } => commands::synthesize(&cfg, &layout, cluster, content.as_deref()),
        Command::Evaluate { generated, reference } => commands::evaluate(
            &cfg,
            &layout,
            &generated.unwrap_or_else(|| layout.synth()),
            &reference.unwrap_or_else(|| data.join("rendered")),
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", failure::error_line(&e));
            ExitCode::FAILURE
        }
    }
}
