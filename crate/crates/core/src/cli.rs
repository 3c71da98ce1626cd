//! Command-line front end.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::complete::{completion_s, Corruption, CorruptionKind};
use crate::error::{Error, Result};
use crate::fit::{assemble, fit, FitConfig, FitTrace, PartsModel};
use crate::geometry::PointCloud;
use crate::io;
use crate::losses::LossWeights;
use crate::metrics::{cov, jsd, mmd, part_point_stats, self_similarity, Distance, VoxelGrid, DEFAULT_GRID_RES};
use crate::synth::{generate, SynthSpec, Template};

#[derive(Debug, Parser)]
#[command(name = "simparts", version, about = "Fit, complete and evaluate point clouds with shared part shapes")]
pub struct Cli {
    /// Seed for every random choice [default: from the config file, else 0]
    #[arg(long, global = true, env = "SIMPARTS_SEED")]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a parts model to a point cloud
    Fit(FitArgs),
    /// Remove points from one labelled part
    Corrupt(CorruptArgs),
    /// Complete a corrupted cloud
    Complete(CompleteArgs),
    /// Compare two directories of clouds
    Eval(EvalArgs),
    /// Generate a synthetic labelled object and its generating model
    Synth(SynthArgs),
    /// Export a model's points or posed primitive surfaces
    Export(ExportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Table,
    Chair,
    Airplane,
}

impl Preset {
    pub fn weights(self) -> LossWeights {
        match self {
            Preset::Table => LossWeights::table(),
            Preset::Chair => LossWeights::chair(),
            Preset::Airplane => LossWeights::airplane(),
        }
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct FitParams {
    /// Number of canonical shapes M_s
    #[arg(long)]
    pub shapes: Option<usize>,
    /// Number of posed parts M_T
    #[arg(long)]
    pub parts: Option<usize>,
    /// Category weight preset
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// TOML file with fit settings; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub w_o: Option<f64>,
    #[arg(long)]
    pub w_d: Option<f64>,
    #[arg(long)]
    pub w_a: Option<f64>,
    /// Overlap threshold
    #[arg(long)]
    pub s: Option<f64>,
    /// Diversity scale
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub stage1_iters: Option<usize>,
    #[arg(long)]
    pub stage2_iters: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub stage2_step_size: Option<f64>,
    /// Adam step of the assignment logits
    #[arg(long)]
    pub logit_step_size: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Canonical points per shape N_p
    #[arg(long)]
    pub points_per_part: Option<usize>,
    #[arg(long)]
    pub surface_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub params: FitParams,
    /// Model file to write
    #[arg(long)]
    pub out: PathBuf,
    /// Report file [default: stdout]
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Cut,
    Hole,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub kind: Kind,
    /// Label of the part to corrupt
    #[arg(long)]
    pub part: usize,
    /// Number of points to remove
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Removed-index file [default: <out>.removed]
    #[arg(long)]
    pub removed: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Reconstruct with a fitted model
    R,
    /// Copy points across parts sharing a shape
    S,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Fitted model; without it the input is fitted first
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub params: FitParams,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    /// MMD and COV under Chamfer distance
    Cd,
    /// MMD and COV under earth mover's distance
    Emd,
    /// Jensen-Shannon divergence of voxel occupancy
    Jsd,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of reference clouds
    #[arg(long)]
    pub a: PathBuf,
    /// Directory of generated clouds
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "cd,emd,jsd")]
    pub metrics: Vec<Metric>,
    #[arg(long, default_value_t = DEFAULT_GRID_RES)]
    pub grid_res: usize,
    /// Lower corner of the voxel cube
    #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
    pub lo: f64,
    /// Upper corner of the voxel cube
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    pub hi: f64,
    /// Report file [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TemplateArg {
    Table4leg,
    ChairArms,
    PlaneWings,
}

impl From<TemplateArg> for Template {
    fn from(t: TemplateArg) -> Self {
        match t {
            TemplateArg::Table4leg => Template::Table4Leg,
            TemplateArg::ChairArms => Template::ChairArms,
            TemplateArg::PlaneWings => Template::PlaneWings,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub template: TemplateArg,
    /// Gaussian noise standard deviation
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    #[arg(long, default_value_t = 512)]
    pub points_per_part: usize,
    /// Labelled cloud to write
    #[arg(long)]
    pub out: PathBuf,
    /// Generating model to write
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExportWhat {
    Points,
    Primitives,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub what: ExportWhat,
    /// Surface samples per primitive
    #[arg(long, default_value_t = 256)]
    pub n_surface: usize,
    /// Output file; `.ply` selects PLY
    #[arg(long)]
    pub out: PathBuf,
}

/// Process exit status for an error: 1 when every restart diverged, 2 for
/// usage and I/O problems.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Diverged { .. } => 1,
        _ => 2,
    }
}

/// Ordered `key=value` report with an optional trailing trace table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub entries: Vec<(String, String)>,
    pub trace: Option<String>,
}

impl RunReport {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        if let Some(t) = &self.trace {
            out.push_str("# trace\n");
            out.push_str(t);
        }
        out
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Defaults, then the preset, then the config file, then flags.
pub fn resolve_config(params: &FitParams, seed: Option<u64>) -> Result<FitConfig> {
    let mut config = FitConfig::default();
    if let Some(p) = params.preset {
        config.weights = p.weights();
    }
    if let Some(path) = &params.config {
        let text = io::read_text(path)?;
        let parse_err = |msg: String| Error::Parse {
            path: path.clone(),
            line: 0,
            msg,
        };
        let over: toml::Table = toml::from_str(&text).map_err(|e| parse_err(e.message().to_string()))?;
        let mut base = toml::Table::try_from(&config).map_err(|e| parse_err(e.to_string()))?;
        merge_tables(&mut base, over);
        config = base.try_into().map_err(|e: toml::de::Error| parse_err(e.message().to_string()))?;
    }
    let w = &mut config.weights;
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut w.w_o, params.w_o);
    set(&mut w.w_d, params.w_d);
    set(&mut w.w_a, params.w_a);
    set(&mut w.s, params.s);
    set(&mut w.c1, params.c1);
    set(&mut config.step_size, params.step_size);
    set(&mut config.stage2_step_size, params.stage2_step_size);
    set(&mut config.logit_step_size, params.logit_step_size);
    let set_n = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set_n(&mut config.stage1_iters, params.stage1_iters);
    set_n(&mut config.stage2_iters, params.stage2_iters);
    set_n(&mut config.restarts, params.restarts);
    set_n(&mut config.n_points_per_part, params.points_per_part);
    set_n(&mut config.surface_samples, params.surface_samples);
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn part_counts(params: &FitParams) -> Result<(usize, usize)> {
    match (params.shapes, params.parts) {
        (Some(s), Some(p)) => Ok((s, p)),
        _ => Err(Error::invalid("fitting needs --shapes and --parts")),
    }
}

fn echo_config(report: &mut RunReport, config: &FitConfig) {
    report.push("seed", config.seed);
    report.push("stage1_iters", config.stage1_iters);
    report.push("stage2_iters", config.stage2_iters);
    report.push("step_size", config.step_size);
    report.push("stage2_step_size", config.stage2_step_size);
    report.push("logit_step_size", config.logit_step_size);
    report.push("restarts", config.restarts);
    report.push("points_per_part", config.n_points_per_part);
    report.push("surface_samples", config.surface_samples);
    let w = &config.weights;
    report.push("w_o", w.w_o);
    report.push("w_d", w.w_d);
    report.push("w_a", w.w_a);
    report.push("s", w.s);
    report.push("c1", w.c1);
}

fn fit_report(x: &PointCloud, model: &PartsModel, trace: &FitTrace, report: &mut RunReport) -> Result<()> {
    report.push("best_restart", trace.best_restart);
    let finals: Vec<String> = trace
        .restart_finals
        .iter()
        .map(|f| f.map_or("diverged".to_string(), |v| v.to_string()))
        .collect();
    report.push("restart_finals", finals.join(","));
    for failure in &trace.failures {
        report.push("failure", failure);
    }
    if let Some(best) = trace.restart_finals[trace.best_restart] {
        report.push("final_total", best);
    }
    report.push("hot", join(&model.hot()));
    if model.num_parts() >= 2 {
        let (mean, min) = self_similarity(model)?;
        report.push("self_similarity.mean_cd", mean);
        report.push("self_similarity.min_cd", min);
    }
    let stats = part_point_stats(x, model)?;
    report.push("part_counts", join(&stats.counts));
    report.push("part_sdev", stats.sdev);
    report.trace = Some(trace.to_table());
    Ok(())
}

fn emit(report: &RunReport, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => io::write_text(p, &report.render()),
        None => {
            print!("{}", report.render());
            Ok(())
        }
    }
}

fn cmd_fit(args: &FitArgs, seed: Option<u64>) -> Result<()> {
    let start = Instant::now();
    let x = io::read_cloud(&args.input)?;
    let config = resolve_config(&args.params, seed)?;
    let (m_s, m_t) = part_counts(&args.params)?;
    let (model, trace) = fit(&x, m_s, m_t, &config)?;
    io::write_model(&args.out, &model)?;
    let mut report = RunReport::default();
    report.push("command", "fit");
    report.push("input", args.input.display());
    report.push("out", args.out.display());
    report.push("shapes", m_s);
    report.push("parts", m_t);
    echo_config(&mut report, &config);
    fit_report(&x, &model, &trace, &mut report)?;
    report.push("elapsed_s", format!("{:.3}", start.elapsed().as_secs_f64()));
    emit(&report, args.report.as_deref())
}

fn cmd_corrupt(args: &CorruptArgs, seed: Option<u64>) -> Result<()> {
    let x = io::read_cloud(&args.input)?;
    let kind = match args.kind {
        Kind::Cut => CorruptionKind::Cut,
        Kind::Hole => CorruptionKind::Hole,
    };
    let corruption = Corruption {
        kind,
        part: args.part,
        k: args.k,
        seed: seed.unwrap_or(0),
    };
    let c = corruption.apply(&x)?;
    io::write_cloud(&args.out, &c.cloud)?;
    let removed = args.removed.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".removed");
        PathBuf::from(p)
    });
    io::write_text(&removed, &io::format_indices(&c.removed))
}

fn model_for(x: &PointCloud, model: Option<&Path>, params: &FitParams, seed: Option<u64>) -> Result<PartsModel> {
    match model {
        Some(path) => io::read_model(path),
        None => {
            let config = resolve_config(params, seed)?;
            let (m_s, m_t) = part_counts(params)?;
            Ok(fit(x, m_s, m_t, &config)?.0)
        }
    }
}

fn cmd_complete(args: &CompleteArgs, seed: Option<u64>) -> Result<()> {
    let x = io::read_cloud(&args.input)?;
    let model = model_for(&x, args.model.as_deref(), &args.params, seed)?;
    let out = match args.mode {
        Mode::R => assemble(&model).cloud,
        Mode::S => completion_s(&x, &model)?,
    };
    io::write_cloud(&args.out, &out)
}

fn read_dir_clouds(dir: &Path) -> Result<Vec<PointCloud>> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e, "xyz" | "txt" | "pts"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("{}: no point-cloud files (.xyz, .txt, .pts)", dir.display())));
    }
    paths.iter().map(|p| io::read_cloud(p)).collect()
}

pub fn eval_report(a: &[PointCloud], b: &[PointCloud], metrics: &[Metric], grid: &VoxelGrid) -> Result<RunReport> {
    let mut report = RunReport::default();
    report.push("command", "eval");
    report.push("clouds.a", a.len());
    report.push("clouds.b", b.len());
    for m in metrics {
        match m {
            Metric::Cd | Metric::Emd => {
                let d = if *m == Metric::Cd { Distance::Chamfer } else { Distance::Emd };
                let tag = d.name().to_lowercase();
                report.push(&format!("mmd-{tag}"), mmd(a, b, d)?);
                report.push(&format!("cov-{tag}"), cov(a, b, d)?);
            }
            Metric::Jsd => {
                let r = jsd(a, b, grid)?;
                report.push("jsd", r.value);
                report.push("jsd.grid_res", grid.res);
                report.push("jsd.clamped", r.clamped);
            }
        }
    }
    Ok(report)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let a = read_dir_clouds(&args.a)?;
    let b = read_dir_clouds(&args.b)?;
    let grid = VoxelGrid {
        res: args.grid_res,
        lo: crate::geometry::Vec3::repeat(args.lo),
        hi: crate::geometry::Vec3::repeat(args.hi),
    };
    let report = eval_report(&a, &b, &args.metrics, &grid)?;
    emit(&report, args.out.as_deref())
}

fn cmd_synth(args: &SynthArgs, seed: Option<u64>) -> Result<()> {
    let spec = SynthSpec {
        template: args.template.into(),
        noise_sigma: args.sigma,
        points_per_part: args.points_per_part,
        seed: seed.unwrap_or(0),
    };
    let s = generate(&spec)?;
    io::write_cloud(&args.out, &s.cloud)?;
    if let Some(path) = &args.truth {
        io::write_model(path, &s.truth)?;
    }
    Ok(())
}

fn cmd_export(args: &ExportArgs, seed: Option<u64>) -> Result<()> {
    let model = io::read_model(&args.model)?;
    let cloud = match args.what {
        ExportWhat::Points => assemble(&model).cloud,
        ExportWhat::Primitives => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
            let assembly = assemble(&model);
            let mut points = Vec::new();
            let mut labels = Vec::new();
            for (m, (sq, pose)) in assembly.primitives.iter().enumerate() {
                let samples = sq.sample_surface_even(args.n_surface, &mut rng)?;
                points.extend(samples.points().iter().map(|p| pose.apply(p)));
                labels.extend(std::iter::repeat_n(m, args.n_surface));
            }
            PointCloud::with_labels(points, labels)?
        }
    };
    io::write_cloud(&args.out, &cloud)
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, seed),
        Command::Corrupt(a) => cmd_corrupt(a, seed),
        Command::Complete(a) => cmd_complete(a, seed),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a, seed),
        Command::Export(a) => cmd_export(a, seed),
    }
}
