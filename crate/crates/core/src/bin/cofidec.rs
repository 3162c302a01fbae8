use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cofidec_core::bench::ArmMode;
use cofidec_core::cli_io::{
    cmd_barycenter, cmd_bench, cmd_decode, cmd_fuse_replay, cmd_views, BarycenterArgs, CliResult, DecodeArgs, InputSource, ViewsArgs,
};
use cofidec_core::fusion::FusionSolver;
use cofidec_core::ot::MetricKind;

/// Coarse-to-fine decoding with Wasserstein-barycenter fusion.
#[derive(Parser)]
#[command(name = "cofidec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Barycenter of distribution files under a ground metric.
    Barycenter {
        #[arg(long, num_args = 2.., required = true)]
        dists: Vec<PathBuf>,
        #[arg(long)]
        cost: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, default_value = "squared_euclidean")]
        metric: MetricKind,
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(long, default_value = "exact_lp")]
        solver: FusionSolver,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Caption one scene or image.
    Decode {
        #[command(flatten)]
        input: DecodeInput,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "cofidec")]
        mode: ArmMode,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the coarse patches and fine crops of an image.
    Views {
        #[arg(long)]
        image: PathBuf,
        /// Grid as rows,cols.
        #[arg(long, value_parser = parse_pair, default_value = "2,2")]
        n: (usize, usize),
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long, default_value_t = 2)]
        downsample: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment spec and write its report.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse the per-step triples of a logits dump.
    FuseReplay {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        cost: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct DecodeInput {
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected rows,cols, got '{s}'"))?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("invalid integer '{x}'"));
    Ok((parse(a)?, parse(b)?))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Barycenter { dists, cost, embeddings, metric, weights, solver, epsilon, out } => {
            cmd_barycenter(&BarycenterArgs { dists, cost, embeddings, metric, weights, solver, epsilon, out })
        }
        Command::Decode { input, config, mode, trace, out } => {
            let input = match (input.scene, input.image) {
                (Some(s), _) => InputSource::Scene(s),
                (None, Some(i)) => InputSource::Image(i),
                (None, None) => unreachable!("clap requires one input"),
            };
            cmd_decode(&DecodeArgs { input, config, mode, trace, out })
        }
        Command::Views { image, n, m, downsample, out } => {
            cmd_views(&ViewsArgs { image, grid: n, fine_count: m, downsample, out_dir: out })
        }
        Command::Bench { spec, out } => cmd_bench(&spec, &out),
        Command::FuseReplay { dump, cost, config, out } => cmd_fuse_replay(&dump, &cost, config.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cofidec: {e}");
            ExitCode::FAILURE
        }
    }
}
