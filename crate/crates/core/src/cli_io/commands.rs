//! The five commands. Each reads its inputs, computes everything in memory,
//! and only then writes its outputs through [`write_all`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::bench::{run_experiment, ArmMode};
use crate::decoding::{cofidec_decode, fuse_replay, regular_decode};
use crate::fusion::FusionSolver;
use crate::image::ImageGrid;
use crate::ot::{
    build_ground_metric, lp_barycenter, sinkhorn, sinkhorn_barycenter, Distribution, GroundMetric, MetricKind, SinkhornConfig,
    SolveStatus, TokenId,
};
use crate::scene_models::{render_scene, synthesize_feedback, CaptionVocab, ToyCaptioner};
use crate::views::{decompose, ViewConfig};

use super::config::{parse_config, parse_experiment, render_experiment, write_report, RunConfig};
use super::formats::{
    float, parse_cost, parse_dist, parse_dump, parse_embeddings, parse_grid, parse_scene, write_caption, write_dist, write_grid,
    write_replay, write_trace,
};
use super::{read_with, write_all, CliError, CliResult};

pub struct BarycenterArgs {
    pub dists: Vec<PathBuf>,
    pub cost: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub metric: MetricKind,
    /// Uniform when absent.
    pub weights: Option<Vec<f64>>,
    pub solver: FusionSolver,
    pub epsilon: Option<f64>,
    pub out: PathBuf,
}

fn load_metric(cost: Option<&Path>, embeddings: Option<&Path>, kind: MetricKind) -> CliResult<GroundMetric> {
    match (cost, embeddings) {
        (Some(c), None) => read_with(c, parse_cost),
        (None, Some(e)) => Ok(build_ground_metric(&read_with(e, parse_embeddings)?, kind)?),
        (Some(_), Some(_)) => Err(CliError::Usage("give either --cost or --embeddings, not both".into())),
        (None, None) => Err(CliError::Usage("a ground metric is required: pass --cost or --embeddings".into())),
    }
}

fn status_word(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Converged => "converged",
        SolveStatus::Truncated => "truncated",
    }
}

/// Writes the barycenter as a `.dist` file whose header comments carry the
/// solver and the objective `sum_k w_k W(P, P_k)`.
pub fn cmd_barycenter(args: &BarycenterArgs) -> CliResult<()> {
    if args.dists.len() < 2 {
        return Err(CliError::Usage(format!("at least two --dists files are required, got {}", args.dists.len())));
    }
    let metric = load_metric(args.cost.as_deref(), args.embeddings.as_deref(), args.metric)?;
    let dists = args.dists.iter().map(|p| read_with(p, parse_dist)).collect::<CliResult<Vec<Distribution>>>()?;
    let weights = args.weights.clone().unwrap_or_else(|| vec![1.0 / dists.len() as f64; dists.len()]);
    let mut text = format!("# solver {}\n", args.solver);
    let fused = match args.solver {
        FusionSolver::ExactLp => {
            if args.epsilon.is_some() {
                return Err(CliError::Usage("--epsilon only applies to the sinkhorn solver".into()));
            }
            let b = lp_barycenter(&dists, &weights, &metric)?;
            let _ = writeln!(text, "# objective {}", float(b.objective));
            b.distribution
        }
        FusionSolver::Sinkhorn => {
            let cfg = args.epsilon.map_or_else(SinkhornConfig::default, SinkhornConfig::with_epsilon);
            let b = sinkhorn_barycenter(&dists, &weights, &metric, &cfg)?;
            let mut objective = 0.0;
            for (d, w) in dists.iter().zip(&weights) {
                objective += w * sinkhorn(&b.distribution, d, &metric, &cfg)?.cost;
            }
            let _ = writeln!(text, "# objective {}", float(objective));
            let _ = writeln!(text, "# iterations {} {}", b.iterations, status_word(b.status));
            b.distribution
        }
    };
    text.push_str(&write_dist(&fused));
    write_all(&[(args.out.clone(), text)])
}

pub enum InputSource {
    /// Rendered with the config's cell size, noise and render seed.
    Scene(PathBuf),
    Image(PathBuf),
}

pub struct DecodeArgs {
    pub input: InputSource,
    pub config: Option<PathBuf>,
    pub mode: ArmMode,
    pub trace: Option<PathBuf>,
    pub out: PathBuf,
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), |p| read_with(p, parse_config))
}

pub fn cmd_decode(args: &DecodeArgs) -> CliResult<()> {
    let cfg = load_config(args.config.as_deref())?;
    cfg.decode.validate().map_err(CliError::Invalid)?;
    let vocab = CaptionVocab::standard();
    let cell = cfg.captioner.cell_px;
    let image = match &args.input {
        InputSource::Image(p) => read_with(p, parse_grid)?,
        InputSource::Scene(p) => {
            let scene = read_with(p, parse_scene)?;
            if scene.object_names().iter().map(String::as_str).ne(vocab.object_names())
                || scene.color_names().iter().map(String::as_str).ne(vocab.color_names())
            {
                return Err(CliError::Invalid(format!("{}: scene vocabulary differs from the captioner's", p.display())));
            }
            render_scene(&scene, cell, cfg.render_noise, cfg.render_seed)?
        }
    };
    let model = ToyCaptioner::new(vocab.clone(), cfg.captioner.clone())?;
    let decoded = match args.mode {
        ArmMode::Regular => regular_decode(&model, &[image], &[], &cfg.decode)?,
        ArmMode::CofiDec => {
            let metric = vocab.ground_metric(cfg.metric)?;
            let synth = |tokens: &[TokenId]| synthesize_feedback(tokens, &vocab, cell).map_err(|e| e.to_string());
            cofidec_decode(&model, &synth, &metric, &image, &[], &cfg.decode)?
        }
    };
    let mut outputs = vec![(args.out.clone(), write_caption(&decoded.tokens, decoded.status, Some(vocab.names())))];
    if let Some(trace) = &args.trace {
        outputs.push((trace.clone(), write_trace(&decoded)));
    }
    write_all(&outputs)
}

pub struct ViewsArgs {
    pub image: PathBuf,
    pub grid: (usize, usize),
    pub fine_count: usize,
    pub downsample: usize,
    pub out_dir: PathBuf,
}

pub const MANIFEST: &str = "manifest.txt";

/// Writes `coarse_<i>.grid`, `fine_<j>.grid` and a manifest listing each view
/// with its region (and saliency score for crops). The directory is created
/// if missing.
pub fn cmd_views(args: &ViewsArgs) -> CliResult<()> {
    let img: ImageGrid = read_with(&args.image, parse_grid)?;
    let cfg = ViewConfig { grid: args.grid, downsample: args.downsample, fine_count: args.fine_count, ..ViewConfig::default() };
    let (views, clamped) = decompose(&img, &cfg)?;
    fs::create_dir_all(&args.out_dir).map_err(|source| CliError::Io { path: args.out_dir.clone(), source })?;
    let mut manifest = format!("views {} {}\n", views.coarse().len(), views.fine().len());
    if clamped {
        manifest.push_str("# fewer crops than requested: the image has too few windows\n");
    }
    let mut outputs = Vec::new();
    for (i, p) in views.coarse().iter().enumerate() {
        let name = format!("coarse_{i}.grid");
        let r = p.region;
        let _ = writeln!(manifest, "coarse {i} {} {} {} {} {name}", r.x, r.y, r.w, r.h);
        outputs.push((args.out_dir.join(&name), write_grid(&p.pixels)));
    }
    for (j, c) in views.fine().iter().enumerate() {
        let name = format!("fine_{j}.grid");
        let r = c.region;
        let _ = writeln!(manifest, "fine {j} {} {} {} {} {} {name}", r.x, r.y, r.w, r.h, float(c.saliency_score));
        outputs.push((args.out_dir.join(&name), write_grid(&c.pixels)));
    }
    outputs.push((args.out_dir.join(MANIFEST), manifest));
    write_all(&outputs)
}

pub fn cmd_bench(spec: &Path, out: &Path) -> CliResult<()> {
    let spec = read_with(spec, parse_experiment)?;
    let report = run_experiment(&spec)?;
    write_all(&[(out.to_path_buf(), write_report(&render_experiment(&report)))])
}

/// Fuses every step of a dump with the config's fusion settings and writes
/// the fused distribution with its greedy token. Source or metric mismatches
/// fail with the step index.
pub fn cmd_fuse_replay(dump: &Path, cost: &Path, config: Option<&Path>, out: &Path) -> CliResult<()> {
    let cfg = load_config(config)?;
    let dump = read_with(dump, parse_dump)?;
    let metric = read_with(cost, parse_cost)?;
    let records = fuse_replay(&dump, &metric, &cfg.decode.fusion)?;
    write_all(&[(out.to_path_buf(), write_replay(&records))])
}
