use super::{evaluate, EvalContext, NnCache, Terms};
use crate::fit::PartsModel;
use crate::geometry::Vec3;

/// Below this magnitude gradient components are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter index where the largest error occurred.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub passed: bool,
}

/// Compares the analytic gradient returned by `objective` at `params` with
/// central differences of its value. The relative error of a component is
/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn finite_diff_check<F>(mut objective: F, params: &[f64], h: f64, tol: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let (_, analytic) = objective(params);
    let mut probe = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        probe[k] = params[k] + h;
        let fp = objective(&probe).0;
        probe[k] = params[k] - h;
        let fm = objective(&probe).0;
        probe[k] = params[k];
        numeric.push((fp - fm) / (2.0 * h));
    }
    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .enumerate()
        .fold((0, 0.0f64), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    GradCheckReport {
        max_rel_error,
        worst_index,
        passed: max_rel_error < tol,
        analytic,
        numeric,
    }
}

/// Objective over flat parameters with the partition, Gumbel draw, surface
/// angles and nearest-neighbour matches of `ctx` frozen. The assignment
/// follows the straight-through relaxation `hard + soft(λ) - soft(λ₀)`, so
/// finite differences in λ reproduce the straight-through gradient.
pub fn probe<'a>(
    x: &'a [Vec3],
    model: &'a PartsModel,
    terms: Terms,
    ctx: &EvalContext,
) -> impl FnMut(&[f64]) -> (f64, Vec<f64>) + 'a {
    let mut ctx = ctx.clone();
    ctx.forward = None;
    ctx.nn = NnCache::recording();
    evaluate(x, model, &terms, &mut ctx);
    let mut scratch = model.clone();
    move |params: &[f64]| {
        scratch.set_params(params).expect("probe parameters match the model layout");
        ctx.forward = Some(
            ctx.assign
                .relaxed(&scratch.logits, &ctx.noise)
                .expect("logit shape is fixed"),
        );
        ctx.nn.replay();
        let report = evaluate(x, &scratch, &terms, &mut ctx);
        (report.total, report.gradients)
    }
}
