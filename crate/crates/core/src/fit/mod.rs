//! Per-object optimisation of a [`PartsModel`] and its assembly into a point
//! cloud.

mod adam;
mod init;
mod model;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use init::{init_model, kmeans, part_split, Clustering};
pub use model::{ModelGrad, ParamGroup, PartsModel, Shape};

use crate::error::{Error, Result};
use crate::geometry::{sample_angles, PointCloud, Pose, Superquadric, Vec3};
use crate::losses::{
    objective, posed_primitives, EvalContext, LossWeights, Stage, DEFAULT_SURFACE_SAMPLES, TERM_ASSIGNMENT,
    TERM_DIVERSITY, TERM_OVERLAP, TERM_POINTS, TERM_PRIM_POINTS,
};
use crate::spa::{sample_gumbel, select_shapes, AssignmentMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    /// Adam step of the primitive stage.
    pub step_size: f64,
    /// Adam step of the point stage.
    pub stage2_step_size: f64,
    /// Adam step of the assignment logits in both stages.
    pub logit_step_size: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub restarts: usize,
    /// Canonical points per shape, `N_p`.
    pub n_points_per_part: usize,
    /// Surface samples per part and iteration in the primitive stage.
    pub surface_samples: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            stage1_iters: 200,
            stage2_iters: 800,
            step_size: 1e-2,
            stage2_step_size: 5e-3,
            logit_step_size: 0.3,
            weights: LossWeights::default(),
            seed: 0,
            restarts: 5,
            n_points_per_part: 512,
            surface_samples: DEFAULT_SURFACE_SAMPLES,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let steps = [self.step_size, self.stage2_step_size, self.logit_step_size];
        if steps.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("step sizes must be positive, got {steps:?}")));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("at least one restart is required"));
        }
        if self.n_points_per_part == 0 || self.surface_samples == 0 {
            return Err(Error::invalid("point and surface sample counts must be positive"));
        }
        Ok(())
    }
}

/// Random stream of restart `r`: the config seed on stream `r`.
pub fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub restart: usize,
    /// 1 for primitives, 2 for points.
    pub stage: u8,
    pub iter: usize,
    pub total: f64,
    pub per_term: BTreeMap<&'static str, f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitTrace {
    pub rows: Vec<TraceRow>,
    /// Final noise-free point-stage total per restart, `None` if it diverged.
    pub restart_finals: Vec<Option<f64>>,
    pub failures: Vec<String>,
    pub best_restart: usize,
}

const TRACE_COLUMNS: [&str; 5] = [TERM_PRIM_POINTS, TERM_OVERLAP, TERM_DIVERSITY, TERM_ASSIGNMENT, TERM_POINTS];

impl FitTrace {
    /// Whitespace-separated table, one row per iteration; absent terms are `-`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("restart stage iter total");
        for c in TRACE_COLUMNS {
            out.push(' ');
            out.push_str(c);
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{} {} {} {:.9e}", row.restart, row.stage, row.iter, row.total);
            for c in TRACE_COLUMNS {
                match row.per_term.get(c) {
                    Some(v) => {
                        let _ = write!(out, " {v:.9e}");
                    }
                    None => out.push_str(" -"),
                }
            }
            out.push('\n');
        }
        out
    }
}

struct RestartOutcome {
    model: PartsModel,
    rows: Vec<TraceRow>,
    final_total: f64,
}

/// Noise-free point-stage total used to rank restarts.
pub fn final_total(x: &[Vec3], model: &PartsModel, weights: &LossWeights) -> Result<f64> {
    let noise = nalgebra::DMatrix::zeros(model.num_shapes(), model.num_parts());
    let mut ctx = EvalContext::new(x, model, noise, Vec::new())?;
    Ok(objective(Stage::Points, x, model, weights, &mut ctx).total)
}

fn run_stage(
    x: &[Vec3],
    model: &mut PartsModel,
    stage: Stage,
    config: &FitConfig,
    rng: &mut ChaCha8Rng,
    restart: usize,
    rows: &mut Vec<TraceRow>,
) -> Result<()> {
    let (iters, step, groups, tag) = match stage {
        Stage::Primitives => (
            config.stage1_iters,
            config.step_size,
            [ParamGroup::Primitives, ParamGroup::Poses, ParamGroup::Logits],
            1,
        ),
        Stage::Points => (
            config.stage2_iters,
            config.stage2_step_size,
            [ParamGroup::Points, ParamGroup::Poses, ParamGroup::Logits],
            2,
        ),
    };
    let mask = model.mask(&groups);
    let logits = model.mask(&[ParamGroup::Logits]);
    let rates = logits
        .iter()
        .map(|&is_logit| if is_logit { config.logit_step_size } else { step })
        .collect();
    let mut adam = Adam::with_rates(rates);
    let mut params = model.to_params();
    for iter in 0..iters {
        let noise = sample_gumbel(model.num_shapes(), model.num_parts(), rng);
        let angles = match stage {
            Stage::Primitives => sample_angles(config.surface_samples, rng),
            Stage::Points => Vec::new(),
        };
        let mut ctx = EvalContext::new(x, model, noise, angles)?;
        let report = objective(stage, x, model, &config.weights, &mut ctx);
        if !report.total.is_finite() || report.gradients.iter().any(|g| !g.is_finite()) {
            return Err(Error::invalid(format!(
                "restart {restart}: non-finite loss at stage {tag} iteration {iter}"
            )));
        }
        rows.push(TraceRow {
            restart,
            stage: tag,
            iter,
            total: report.total,
            per_term: report.per_term,
        });
        adam.step(&mut params, &report.gradients, &mask);
        model.set_params(&params)?;
        model.project();
        params = model.to_params();
    }
    Ok(())
}

fn run_restart(x: &[Vec3], m_s: usize, m_t: usize, config: &FitConfig, restart: usize) -> Result<RestartOutcome> {
    let mut rng = restart_rng(config.seed, restart);
    let mut model = init_model(x, m_s, m_t, config.n_points_per_part, &mut rng)?;
    let mut rows = Vec::new();
    run_stage(x, &mut model, Stage::Primitives, config, &mut rng, restart, &mut rows)?;
    run_stage(x, &mut model, Stage::Points, config, &mut rng, restart, &mut rows)?;
    let final_total = final_total(x, &model, &config.weights)?;
    if !final_total.is_finite() {
        return Err(Error::invalid(format!("restart {restart}: non-finite final loss")));
    }
    Ok(RestartOutcome {
        model,
        rows,
        final_total,
    })
}

/// Fits `m_s` shapes shared across `m_t` parts to `x`: the primitive stage,
/// then the point stage with primitives frozen, best of `config.restarts`
/// independent restarts by final point-stage total.
pub fn fit(x: &PointCloud, m_s: usize, m_t: usize, config: &FitConfig) -> Result<(PartsModel, FitTrace)> {
    config.validate()?;
    if m_s == 0 || m_s > m_t {
        return Err(Error::invalid(format!("need 1 ≤ M_s ≤ M_T, got M_s = {m_s}, M_T = {m_t}")));
    }
    if x.len() < m_t {
        return Err(Error::invalid(format!("{} points cannot seed {m_t} parts", x.len())));
    }
    let points = x.points();
    let outcomes: Vec<Result<RestartOutcome>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_restart(points, m_s, m_t, config, r))
        .collect();

    let mut trace = FitTrace::default();
    let mut best: Option<(usize, PartsModel, f64)> = None;
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => {
                trace.restart_finals.push(Some(o.final_total));
                trace.rows.extend(o.rows);
                if best.as_ref().is_none_or(|(_, _, b)| o.final_total < *b) {
                    best = Some((r, o.model, o.final_total));
                }
            }
            Err(e) => {
                trace.restart_finals.push(None);
                trace.failures.push(e.to_string());
            }
        }
    }
    match best {
        Some((r, model, _)) => {
            trace.best_restart = r;
            Ok((model, trace))
        }
        None => Err(Error::Diverged {
            restarts: config.restarts,
            last: trace.failures.last().cloned().unwrap_or_default(),
        }),
    }
}

/// Posed point cloud of a model under its frozen assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Assembly {
    /// `N_p · M_T` points, part by part, labelled with their part index.
    pub cloud: PointCloud,
    pub primitives: Vec<(Superquadric, Pose)>,
    /// Part index of every point of `cloud`.
    pub part_of: Vec<usize>,
    /// Shape index of every part.
    pub hot: Vec<usize>,
}

pub fn freeze_assignment(model: &PartsModel) -> AssignmentMatrix {
    model.freeze_assignment()
}

pub fn assemble(model: &PartsModel) -> Assembly {
    let assign = model.freeze_assignment();
    let hot = assign.hot();
    let canonical: Vec<Vec<Vec3>> = model.shapes.iter().map(|s| s.points.clone()).collect();
    let parts = select_shapes(&canonical, &assign.hard).expect("validated model has matching dimensions");
    let mut points = Vec::with_capacity(model.points_per_shape() * model.num_parts());
    let mut part_of = Vec::with_capacity(points.capacity());
    for (m, (part, pose)) in parts.iter().zip(&model.poses).enumerate() {
        points.extend(part.iter().map(|p| pose.apply(p)));
        part_of.extend(std::iter::repeat_n(m, part.len()));
    }
    let cloud = PointCloud::with_labels(points, part_of.clone()).expect("finite model yields a finite cloud");
    Assembly {
        cloud,
        primitives: posed_primitives(model, &hot),
        part_of,
        hot,
    }
}
