//! Reconstruction losses and the two stage objectives, each returning its
//! value together with the gradient over the flat model parameters.

mod chamfer;
mod engine;
mod gradcheck;
mod partition;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use chamfer::{chamfer, NnCache};
pub use gradcheck::{finite_diff_check, probe, GradCheckReport};
pub use partition::{partition_by_primitive, Partition};
pub(crate) use partition::partition_points;

use crate::error::{Error, Result};
use crate::fit::PartsModel;
use crate::geometry::{sample_angles, PointCloud, Pose, Superquadric, Vec3};
use crate::spa::AssignmentMatrix;
use engine::{Backward, Forward};

/// Surface samples per part used by the overlap and primitive-to-points terms.
pub const DEFAULT_SURFACE_SAMPLES: usize = 64;

pub const TERM_POINTS: &str = "points";
pub const TERM_PRIM_POINTS: &str = "prim_points";
pub const TERM_OVERLAP: &str = "overlap";
pub const TERM_DIVERSITY: &str = "diversity";
pub const TERM_ASSIGNMENT: &str = "assignment";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub w_o: f64,
    pub w_d: f64,
    pub w_a: f64,
    /// Overlap threshold on the indicator.
    pub s: f64,
    /// Diversity squash scale.
    pub c1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::table()
    }
}

impl LossWeights {
    pub fn table() -> Self {
        LossWeights { w_o: 1e-6, w_d: 1e-6, w_a: 0.1, s: 1.3, c1: 4.0 }
    }

    pub fn chair() -> Self {
        LossWeights { w_o: 2e-3, w_d: 3e-3, w_a: 0.1, s: 1.5, c1: 4.0 }
    }

    pub fn airplane() -> Self {
        LossWeights { w_o: 1e-3, w_d: 1e-5, w_a: 0.1, s: 1.0, c1: 4.0 }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "table" => Some(Self::table()),
            "chair" => Some(Self::chair()),
            "airplane" => Some(Self::airplane()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.w_o, self.w_d, self.w_a, self.s];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        if !(self.c1 > 0.0) || !self.c1.is_finite() {
            return Err(Error::invalid(format!("diversity scale must be positive, got {}", self.c1)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    /// Unweighted value of every term.
    pub per_term: BTreeMap<&'static str, f64>,
    /// Weight each term enters the total with.
    pub weights: BTreeMap<&'static str, f64>,
    /// Gradient of `total` in the layout of [`PartsModel::to_params`].
    pub gradients: Vec<f64>,
}

impl LossReport {
    pub fn term(&self, name: &str) -> f64 {
        self.per_term.get(name).copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Primitive fitting: `L_r + w_o L_o + w_d L_d + w_a L_a`.
    Primitives,
    /// Point fitting: `L_p + w_a L_a`.
    Points,
}

/// Everything an objective evaluation holds fixed: the Gumbel draw and its
/// assignment, the partition of the input, the surface sample angles and the
/// nearest-neighbour record.
#[derive(Clone, Debug)]
pub struct EvalContext {
    pub assign: AssignmentMatrix,
    pub noise: DMatrix<f64>,
    /// Forward selection override; `None` selects with `assign.hard`.
    pub forward: Option<DMatrix<f64>>,
    pub partition: Partition,
    pub angles: Vec<(f64, f64)>,
    pub nn: NnCache,
}

/// Each part's primitive under the given hard assignment, tagged with its pose.
pub fn posed_primitives(model: &PartsModel, hot: &[usize]) -> Vec<(Superquadric, Pose)> {
    hot.iter()
        .zip(&model.poses)
        .map(|(&i, pose)| (model.shapes[i].primitive.clone(), pose.clone()))
        .collect()
}

impl EvalContext {
    pub fn new(x: &[Vec3], model: &PartsModel, noise: DMatrix<f64>, angles: Vec<(f64, f64)>) -> Result<Self> {
        let assign = AssignmentMatrix::from_noise(&model.logits, &noise, model.tau)?;
        let partition = partition_points(x, &posed_primitives(model, &assign.hot()));
        Ok(EvalContext {
            assign,
            noise,
            forward: None,
            partition,
            angles,
            nn: NnCache::live(),
        })
    }

    /// Noise-free context with freshly drawn surface angles.
    pub fn deterministic<R: Rng + ?Sized>(
        x: &[Vec3],
        model: &PartsModel,
        surface_samples: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let noise = DMatrix::zeros(model.num_shapes(), model.num_parts());
        Self::new(x, model, noise, sample_angles(surface_samples, rng))
    }

    pub fn selection(&self) -> &DMatrix<f64> {
        self.forward.as_ref().unwrap_or(&self.assign.hard)
    }
}

/// Which terms an evaluation includes and the weight each enters the total
/// with. `None` leaves a term out of the evaluation entirely.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Terms {
    pub points: Option<f64>,
    pub prim_points: Option<f64>,
    pub overlap: Option<f64>,
    pub diversity: Option<f64>,
    pub assignment: Option<f64>,
    pub s: f64,
    pub c1: f64,
}

impl Terms {
    pub fn stage(stage: Stage, w: &LossWeights) -> Self {
        let base = Terms {
            assignment: Some(w.w_a),
            s: w.s,
            c1: w.c1,
            ..Terms::default()
        };
        match stage {
            Stage::Primitives => Terms {
                prim_points: Some(1.0),
                overlap: Some(w.w_o),
                diversity: Some(w.w_d),
                ..base
            },
            Stage::Points => Terms {
                points: Some(1.0),
                ..base
            },
        }
    }

    /// A single term at unit weight.
    pub fn only(name: &str, w: &LossWeights) -> Option<Self> {
        let base = Terms {
            s: w.s,
            c1: w.c1,
            ..Terms::default()
        };
        let one = Some(1.0);
        Some(match name {
            TERM_POINTS => Terms { points: one, ..base },
            TERM_PRIM_POINTS => Terms { prim_points: one, ..base },
            TERM_OVERLAP => Terms { overlap: one, ..base },
            TERM_DIVERSITY => Terms { diversity: one, ..base },
            TERM_ASSIGNMENT => Terms { assignment: one, ..base },
            _ => return None,
        })
    }

    fn needs_samples(&self) -> bool {
        self.prim_points.is_some() || self.overlap.is_some()
    }
}

/// Evaluates the selected terms and the gradient of their weighted sum.
pub fn evaluate(x: &[Vec3], model: &PartsModel, terms: &Terms, ctx: &mut EvalContext) -> LossReport {
    let sel = ctx.selection().clone();
    let angles: &[(f64, f64)] = if terms.needs_samples() { &ctx.angles } else { &[] };
    let fwd = Forward::new(model, x, &sel, angles, terms.points.is_some());
    let mut bwd = Backward::new(&fwd);
    let mut per_term = BTreeMap::new();
    let mut term_weights = BTreeMap::new();
    let mut add = |name, w: f64, v: f64| {
        per_term.insert(name, v);
        term_weights.insert(name, w);
    };
    if let Some(w) = terms.points {
        add(TERM_POINTS, w, engine::points(&fwd, &ctx.partition, w, &mut bwd, &mut ctx.nn));
    }
    if let Some(w) = terms.prim_points {
        let v = engine::points_to_primitives(&fwd, &ctx.partition, w, &mut bwd)
            + engine::primitives_to_points(&fwd, w, &mut bwd, &mut ctx.nn);
        add(TERM_PRIM_POINTS, w, v);
    }
    if let Some(w) = terms.overlap {
        add(TERM_OVERLAP, w, engine::overlap(&fwd, terms.s, w, &mut bwd));
    }
    if let Some(w) = terms.diversity {
        add(TERM_DIVERSITY, w, engine::diversity(&fwd, terms.c1, w, &mut bwd));
    }
    if let Some(w) = terms.assignment {
        add(TERM_ASSIGNMENT, w, engine::assignment(&fwd, w, &mut bwd));
    }
    let total = per_term.iter().map(|(k, v)| term_weights[k] * v).sum();
    let gradients = bwd.finish(&fwd, &ctx.assign).to_flat();
    LossReport {
        total,
        per_term,
        weights: term_weights,
        gradients,
    }
}

/// Evaluates a stage objective with its gradient.
pub fn objective(stage: Stage, x: &[Vec3], model: &PartsModel, weights: &LossWeights, ctx: &mut EvalContext) -> LossReport {
    debug_assert!(weights.validate().is_ok(), "invalid loss weights {weights:?}");
    evaluate(x, model, &Terms::stage(stage, weights), ctx)
}

pub fn stage1_objective(x: &[Vec3], model: &PartsModel, weights: &LossWeights, ctx: &mut EvalContext) -> LossReport {
    objective(Stage::Primitives, x, model, weights, ctx)
}

pub fn stage2_objective(x: &[Vec3], model: &PartsModel, weights: &LossWeights, ctx: &mut EvalContext) -> LossReport {
    objective(Stage::Points, x, model, weights, ctx)
}

/// Points loss `L_p` under the frozen assignment and a fresh partition.
pub fn points_loss(x: &PointCloud, model: &PartsModel) -> Result<f64> {
    let ctx = EvalContext::new(
        x.points(),
        model,
        DMatrix::zeros(model.num_shapes(), model.num_parts()),
        Vec::new(),
    )?;
    let sel = ctx.selection();
    let fwd = Forward::new(model, x.points(), sel, &[], true);
    let mut bwd = Backward::new(&fwd);
    Ok(engine::points(&fwd, &ctx.partition, 0.0, &mut bwd, &mut NnCache::live()))
}

/// Primitive/points distance `L_r` under the frozen assignment, with surface
/// samples at the given angles.
pub fn prim_points_loss(x: &PointCloud, model: &PartsModel, angles: &[(f64, f64)]) -> Result<f64> {
    let ctx = EvalContext::new(
        x.points(),
        model,
        DMatrix::zeros(model.num_shapes(), model.num_parts()),
        angles.to_vec(),
    )?;
    let sel = ctx.selection();
    let fwd = Forward::new(model, x.points(), sel, angles, false);
    let mut bwd = Backward::new(&fwd);
    Ok(engine::points_to_primitives(&fwd, &ctx.partition, 0.0, &mut bwd)
        + engine::primitives_to_points(&fwd, 0.0, &mut bwd, &mut NnCache::live()))
}

/// Overlap loss `L_o` of posed primitives, each sampled at `angles`.
pub fn overlap_loss(primitives: &[(Superquadric, Pose)], threshold: f64, angles: &[(f64, f64)]) -> f64 {
    let m_t = primitives.len();
    if m_t < 2 || angles.is_empty() {
        return 0.0;
    }
    let samples: Vec<Vec<Vec3>> = primitives
        .iter()
        .map(|(sq, pose)| angles.iter().map(|&(e, w)| pose.apply(&sq.surface_point(e, w))).collect())
        .collect();
    let denom = ((m_t - 1) * angles.len()) as f64;
    let per_part = primitives.iter().enumerate().map(|(m, (sq, pose))| {
        let hinge: f64 = samples
            .iter()
            .enumerate()
            .filter(|(o, _)| *o != m)
            .flat_map(|(_, s)| s.iter())
            .map(|y| (threshold - sq.indicator(&pose.inverse_apply(y))).max(0.0))
            .sum();
        hinge / denom
    });
    per_part.sum::<f64>() / m_t as f64
}

/// Diversity loss `tanh(-c1 Σ_{i≠j} ||α_i - α_j||² / (M_s (M_s - 1)))`.
pub fn diversity_loss(alphas: &[Vec3], c1: f64) -> f64 {
    engine::diversity_grad(alphas, c1).0
}

#[cfg(test)]
mod tests;
