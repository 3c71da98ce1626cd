//! Forward evaluation and reverse-mode accumulation of every loss term.
//!
//! Part quantities are linear mixes of shape quantities through the forward
//! selection matrix `S` (one-hot during fitting): primitive parameters
//! `θ̂_m = Σ_i S_im θ̃_i`, canonical points `Ŷ_m = Σ_i S_im Ỹ_i` and surface
//! samples `Ŝ_m = Σ_i S_im S̃_i`. Terms accumulate gradients with respect to
//! the part quantities and poses; [`Backward::finish`] pushes them onto the
//! shapes, the selection matrix and, through the soft assignment, the logits.

use nalgebra::{DMatrix, Matrix3};

use super::chamfer::{chamfer_grad, nearest, NnCache};
use super::partition::Partition;
use crate::fit::{ModelGrad, PartsModel};
use crate::geometry::{PoseGrad, SqParams, Superquadric, Vec3, N_PARAMS};
use crate::spa::{assignment_loss, assignment_loss_grad, AssignmentMatrix};

pub(crate) struct Forward<'a> {
    pub model: &'a PartsModel,
    pub x: &'a [Vec3],
    pub sel: &'a DMatrix<f64>,
    pub rots: Vec<Matrix3<f64>>,
    pub part_prims: Vec<Superquadric>,
    /// Canonical surface samples of each shape and their parameter Jacobians.
    shape_samples: Vec<Vec<Vec3>>,
    shape_jac: Vec<Vec<[Vec3; N_PARAMS]>>,
    part_samples: Vec<Vec<Vec3>>,
    part_points: Vec<Vec<Vec3>>,
}

fn mix_params(sel: &DMatrix<f64>, m: usize, shapes: &[SqParams]) -> SqParams {
    let mut out = [0.0; N_PARAMS];
    for (i, p) in shapes.iter().enumerate() {
        let a = sel[(i, m)];
        if a != 0.0 {
            for (o, v) in out.iter_mut().zip(p) {
                *o += a * v;
            }
        }
    }
    out
}

fn mix_points(sel: &DMatrix<f64>, m: usize, stacks: &[&[Vec3]]) -> Vec<Vec3> {
    let n = stacks.first().map_or(0, |s| s.len());
    let mut out = vec![Vec3::zeros(); n];
    for (i, stack) in stacks.iter().enumerate() {
        let a = sel[(i, m)];
        if a != 0.0 {
            for (o, p) in out.iter_mut().zip(stack.iter()) {
                *o += a * p;
            }
        }
    }
    out
}

impl<'a> Forward<'a> {
    pub fn new(
        model: &'a PartsModel,
        x: &'a [Vec3],
        sel: &'a DMatrix<f64>,
        angles: &[(f64, f64)],
        with_points: bool,
    ) -> Self {
        let m_t = model.num_parts();
        let shape_params: Vec<SqParams> = model.shapes.iter().map(|s| s.primitive.params()).collect();
        let part_prims = (0..m_t)
            .map(|m| Superquadric::from_params(&mix_params(sel, m, &shape_params)))
            .collect();
        let rots = model.poses.iter().map(|p| p.rotation()).collect();

        let (shape_samples, shape_jac): (Vec<Vec<Vec3>>, Vec<Vec<[Vec3; N_PARAMS]>>) = model
            .shapes
            .iter()
            .map(|s| {
                angles
                    .iter()
                    .map(|&(eta, omega)| s.primitive.surface_point_jacobian(eta, omega))
                    .unzip()
            })
            .unzip();
        let part_samples = if angles.is_empty() {
            vec![Vec::new(); m_t]
        } else {
            let stacks: Vec<&[Vec3]> = shape_samples.iter().map(Vec::as_slice).collect();
            (0..m_t).map(|m| mix_points(sel, m, &stacks)).collect()
        };
        let part_points = if with_points {
            let stacks: Vec<&[Vec3]> = model.shapes.iter().map(|s| s.points.as_slice()).collect();
            (0..m_t).map(|m| mix_points(sel, m, &stacks)).collect()
        } else {
            Vec::new()
        };
        Forward {
            model,
            x,
            sel,
            rots,
            part_prims,
            shape_samples,
            shape_jac,
            part_samples,
            part_points,
        }
    }

    fn parts(&self) -> usize {
        self.model.num_parts()
    }

    fn object_sample(&self, m: usize, k: usize) -> Vec3 {
        self.rots[m] * self.part_samples[m][k] + self.model.poses[m].t
    }
}

pub(crate) struct Backward {
    shape_prim: Vec<SqParams>,
    part_prim: Vec<SqParams>,
    part_samples: Vec<Vec<Vec3>>,
    part_points: Vec<Vec<Vec3>>,
    poses: Vec<PoseGrad>,
    d_assign: DMatrix<f64>,
}

impl Backward {
    pub fn new(fwd: &Forward) -> Self {
        let (m_s, m_t) = (fwd.model.num_shapes(), fwd.parts());
        Backward {
            shape_prim: vec![[0.0; N_PARAMS]; m_s],
            part_prim: vec![[0.0; N_PARAMS]; m_t],
            part_samples: fwd.part_samples.iter().map(|s| vec![Vec3::zeros(); s.len()]).collect(),
            part_points: fwd.part_points.iter().map(|s| vec![Vec3::zeros(); s.len()]).collect(),
            poses: vec![PoseGrad::default(); m_t],
            d_assign: DMatrix::zeros(m_s, m_t),
        }
    }

    fn add_part_prim(&mut self, m: usize, scale: f64, g: &SqParams) {
        for (o, v) in self.part_prim[m].iter_mut().zip(g) {
            *o += scale * v;
        }
    }

    /// Pushes part gradients back to shapes and logits.
    pub fn finish(self, fwd: &Forward, assign: &AssignmentMatrix) -> ModelGrad {
        let model = fwd.model;
        let (m_s, m_t) = (model.num_shapes(), model.num_parts());
        let mut grad = ModelGrad::zeros(model);
        let mut d_assign = self.d_assign;
        grad.primitives = self.shape_prim;
        let mut sample_grads: Vec<Vec<Vec3>> =
            fwd.shape_samples.iter().map(|s| vec![Vec3::zeros(); s.len()]).collect();

        for m in 0..m_t {
            for i in 0..m_s {
                let a = fwd.sel[(i, m)];
                let theta = model.shapes[i].primitive.params();
                let gp = &self.part_prim[m];
                d_assign[(i, m)] += theta.iter().zip(gp).map(|(t, g)| t * g).sum::<f64>();
                if a != 0.0 {
                    for (o, g) in grad.primitives[i].iter_mut().zip(gp) {
                        *o += a * g;
                    }
                }
                if !self.part_samples[m].is_empty() {
                    for (k, g) in self.part_samples[m].iter().enumerate() {
                        d_assign[(i, m)] += fwd.shape_samples[i][k].dot(g);
                        if a != 0.0 {
                            sample_grads[i][k] += a * g;
                        }
                    }
                }
                if !self.part_points.is_empty() {
                    for (k, g) in self.part_points[m].iter().enumerate() {
                        d_assign[(i, m)] += model.shapes[i].points[k].dot(g);
                        if a != 0.0 {
                            grad.points[i][k] += a * g;
                        }
                    }
                }
            }
        }
        for i in 0..m_s {
            for (k, g) in sample_grads[i].iter().enumerate() {
                for (p, col) in fwd.shape_jac[i][k].iter().enumerate() {
                    grad.primitives[i][p] += col.dot(g);
                }
            }
        }
        for (m, pg) in self.poses.iter().enumerate() {
            grad.quaternions[m] = pg.quaternion(&model.poses[m].q);
            grad.translations[m] = pg.d_t;
        }
        grad.logits = assign.lambda_grad(&d_assign);
        grad
    }
}

/// Radial distance from every input point to its part's primitive, averaged
/// over all points.
pub(crate) fn points_to_primitives(fwd: &Forward, partition: &Partition, weight: f64, bwd: &mut Backward) -> f64 {
    let n = fwd.x.len() as f64;
    let mut value = 0.0;
    for m in 0..fwd.parts() {
        let rot = &fwd.rots[m];
        let t = fwd.model.poses[m].t;
        for &idx in partition.members(m) {
            let offset = fwd.x[idx] - t;
            let local = rot.transpose() * offset;
            let (d, gx, gp) = fwd.part_prims[m].radial_distance_grad(&local);
            value += d / n;
            if weight != 0.0 {
                let c = weight / n;
                bwd.add_part_prim(m, c, &gp);
                bwd.poses[m].inverse_backward(rot, &offset, &(c * gx));
            }
        }
    }
    value
}

/// Mean squared distance from posed surface samples to the nearest input
/// point, averaged over parts.
pub(crate) fn primitives_to_points(fwd: &Forward, weight: f64, bwd: &mut Backward, nn: &mut NnCache) -> f64 {
    let m_t = fwd.parts();
    let mut value = 0.0;
    for m in 0..m_t {
        let n_s = fwd.part_samples[m].len();
        if n_s == 0 {
            continue;
        }
        let posed: Vec<Vec3> = (0..n_s).map(|k| fwd.object_sample(m, k)).collect();
        let matches = nn.query(|| posed.iter().map(|y| nearest(y, fwd.x)).collect());
        let c = 1.0 / (m_t * n_s) as f64;
        for (k, (y, &j)) in posed.iter().zip(&matches).enumerate() {
            let d = y - fwd.x[j];
            value += c * d.norm_squared();
            if weight != 0.0 {
                let dy = 2.0 * weight * c * d;
                let ds = bwd.poses[m].apply_backward(&fwd.rots[m], &fwd.part_samples[m][k], &dy);
                bwd.part_samples[m][k] += ds;
            }
        }
    }
    value
}

/// Hinge on the indicator of part `m` at the surface samples of all other
/// parts.
pub(crate) fn overlap(fwd: &Forward, threshold: f64, weight: f64, bwd: &mut Backward) -> f64 {
    let m_t = fwd.parts();
    if m_t < 2 {
        return 0.0;
    }
    let mut value = 0.0;
    for m in 0..m_t {
        let others: usize = (0..m_t).filter(|&o| o != m).map(|o| fwd.part_samples[o].len()).sum();
        if others == 0 {
            continue;
        }
        let c = 1.0 / (m_t * others) as f64;
        let (rot, t) = (&fwd.rots[m], fwd.model.poses[m].t);
        for o in (0..m_t).filter(|&o| o != m) {
            for (k, s) in fwd.part_samples[o].iter().enumerate() {
                let y = fwd.object_sample(o, k);
                let offset = y - t;
                let local = rot.transpose() * offset;
                let h = fwd.part_prims[m].indicator(&local);
                if threshold - h <= 0.0 {
                    continue;
                }
                value += c * (threshold - h);
                if weight != 0.0 {
                    let (_, gx, gp) = fwd.part_prims[m].indicator_grad(&local);
                    let scale = -weight * c;
                    bwd.add_part_prim(m, scale, &gp);
                    let dy = bwd.poses[m].inverse_backward(rot, &offset, &(scale * gx));
                    let ds = bwd.poses[o].apply_backward(&fwd.rots[o], s, &dy);
                    bwd.part_samples[o][k] += ds;
                }
            }
        }
    }
    value
}

/// Squashed mean pairwise squared distance between shape scales.
pub(crate) fn diversity(fwd: &Forward, c1: f64, weight: f64, bwd: &mut Backward) -> f64 {
    let alphas: Vec<Vec3> = fwd.model.shapes.iter().map(|s| s.primitive.alpha).collect();
    let (value, grads) = diversity_grad(&alphas, c1);
    if weight != 0.0 {
        for (i, g) in grads.iter().enumerate() {
            for k in 0..3 {
                bwd.shape_prim[i][k] += weight * g[k];
            }
        }
    }
    value
}

pub(crate) fn diversity_grad(alphas: &[Vec3], c1: f64) -> (f64, Vec<Vec3>) {
    let m_s = alphas.len();
    if m_s < 2 {
        return (0.0, vec![Vec3::zeros(); m_s]);
    }
    let pairs = (m_s * (m_s - 1)) as f64;
    let mut spread = 0.0;
    for (i, a) in alphas.iter().enumerate() {
        for (j, b) in alphas.iter().enumerate() {
            if i != j {
                spread += (a - b).norm_squared();
            }
        }
    }
    let value = (-c1 * spread / pairs).tanh();
    let outer = (1.0 - value * value) * (-c1 / pairs);
    let grads = alphas
        .iter()
        .map(|a| outer * 4.0 * alphas.iter().map(|b| a - b).sum::<Vec3>())
        .collect();
    (value, grads)
}

pub(crate) fn assignment(fwd: &Forward, weight: f64, bwd: &mut Backward) -> f64 {
    if weight != 0.0 {
        bwd.d_assign += weight * assignment_loss_grad(fwd.sel);
    }
    assignment_loss(fwd.sel)
}

/// Sum over parts of the canonical-frame Chamfer distance between the part's
/// input points and its selected canonical point set. A part without input
/// points is matched against the input centroid instead.
pub(crate) fn points(fwd: &Forward, partition: &Partition, weight: f64, bwd: &mut Backward, nn: &mut NnCache) -> f64 {
    let centroid = fwd.x.iter().sum::<Vec3>() / fwd.x.len() as f64;
    let mut value = 0.0;
    for m in 0..fwd.parts() {
        let (rot, t) = (&fwd.rots[m], fwd.model.poses[m].t);
        let members = partition.members(m);
        let offsets: Vec<Vec3> = if members.is_empty() {
            vec![centroid - t]
        } else {
            members.iter().map(|&i| fwd.x[i] - t).collect()
        };
        let local: Vec<Vec3> = offsets.iter().map(|o| rot.transpose() * o).collect();
        let (v, gx, gy) = chamfer_grad(&local, &fwd.part_points[m], nn);
        value += v;
        if weight != 0.0 {
            for (o, g) in offsets.iter().zip(&gx) {
                bwd.poses[m].inverse_backward(rot, o, &(weight * g));
            }
            for (acc, g) in bwd.part_points[m].iter_mut().zip(&gy) {
                *acc += weight * g;
            }
        }
    }
    value
}
