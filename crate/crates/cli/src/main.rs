use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "shufa",
    version,
    about = "Writer-style metric learning on synthetic glyph corpora"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every component, overriding the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize the glyph corpus and its manifest.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Write the effective configuration here and exit.
        #[arg(long, value_name = "PATH")]
        emit_config: Option<PathBuf>,
    },
    /// Split the corpus into triplet, category and query sets.
    Split {
        #[command(flatten)]
        common: Common,
    },
    /// Train the script-category network.
    TrainCcnet {
        #[command(flatten)]
        common: Common,
    },
    /// Triplet-train the embedding network.
    Train {
        #[command(flatten)]
        common: Common,
        /// Enable nine-palace attention.
        #[arg(long, overrides_with = "no_sa")]
        sa: bool,
        /// Disable nine-palace attention.
        #[arg(long = "no-sa")]
        no_sa: bool,
        /// Continue from this checkpoint.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Few-shot shot sweep on the query writers.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Comma-separated shot counts.
        #[arg(long, value_delimiter = ',')]
        shots: Option<Vec<usize>>,
        /// Evaluate the attention-free model.
        #[arg(long = "no-sa")]
        no_sa: bool,
    },
    /// Train an end-to-end writer classifier.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// vgg_small, resnet_small_A or resnet_small_B.
        #[arg(long, value_parser = parse_arch)]
        arch: shufanet::nets::Arch,
    },
    /// Class activation map of one image.
    Cam {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        /// Category network, baseline, or embedding network checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "class")]
        class_index: usize,
        /// jet, hot or gray.
        #[arg(long, value_parser = parse_colormap)]
        colormap: Option<shufanet::cam::Colormap>,
        /// Nearest-neighbour instead of bilinear upsampling.
        #[arg(long)]
        nearest: bool,
        /// Probe episode for embedding networks.
        #[arg(long, default_value_t = 0)]
        episode: usize,
        /// Probe shots for embedding networks; the largest configured by default.
        #[arg(long)]
        shots: Option<usize>,
    },
    /// Aggregate CSV outputs into tables and plots.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_arch(s: &str) -> Result<shufanet::nets::Arch, String> {
    shufanet::nets::Arch::parse(s).ok_or_else(|| format!("unknown architecture `{s}`"))
}

fn parse_colormap(s: &str) -> Result<shufanet::cam::Colormap, String> {
    shufanet::cam::Colormap::parse(s).ok_or_else(|| format!("unknown colormap `{s}`"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let bad_config = e
                .chain()
                .any(|c| matches!(c.downcast_ref(), Some(shufanet::ShufaError::Config { .. })));
            ExitCode::from(if bad_config { 1 } else { 2 })
        }
    }
}
