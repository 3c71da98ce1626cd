use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{Pose, SqParams, Superquadric, Vec3, N_PARAMS};
use crate::spa::{AssignmentLogits, AssignmentMatrix};

/// One latent canonical shape: a primitive plus a free point set, both in
/// the shape's own frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub primitive: Superquadric,
    pub points: Vec<Vec3>,
}

/// `M_s` canonical shapes shared across `M_T` posed parts.
#[derive(Clone, Debug, PartialEq)]
pub struct PartsModel {
    pub shapes: Vec<Shape>,
    pub poses: Vec<Pose>,
    pub logits: AssignmentLogits,
    pub tau: f64,
}

/// Parameter groups of the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Primitives,
    Points,
    Poses,
    Logits,
}

const POSE_PARAMS: usize = 7;

impl PartsModel {
    pub fn new(shapes: Vec<Shape>, poses: Vec<Pose>, logits: AssignmentLogits, tau: f64) -> Result<Self> {
        let model = PartsModel {
            shapes,
            poses,
            logits,
            tau,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let (m_s, m_t) = (self.shapes.len(), self.poses.len());
        if m_s == 0 {
            return Err(Error::invalid("a model needs at least one shape"));
        }
        if m_t < m_s {
            return Err(Error::invalid(format!("{m_t} parts cannot share {m_s} shapes")));
        }
        if self.logits.0.shape() != (m_s, m_t) {
            return Err(Error::dims(format!(
                "logits are {:?}, expected ({m_s}, {m_t})",
                self.logits.0.shape()
            )));
        }
        let n_p = self.shapes[0].points.len();
        if n_p == 0 || self.shapes.iter().any(|s| s.points.len() != n_p) {
            return Err(Error::dims("every shape needs the same non-zero point count"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Temperature(self.tau));
        }
        Ok(())
    }

    pub fn num_shapes(&self) -> usize {
        self.shapes.len()
    }

    pub fn num_parts(&self) -> usize {
        self.poses.len()
    }

    pub fn points_per_shape(&self) -> usize {
        self.shapes[0].points.len()
    }

    /// Noise-free assignment readout used for assembly and reporting.
    pub fn freeze_assignment(&self) -> AssignmentMatrix {
        AssignmentMatrix::deterministic(&self.logits, self.tau)
            .expect("validated model has matching logits and positive temperature")
    }

    /// Shape index of every part under the frozen assignment.
    pub fn hot(&self) -> Vec<usize> {
        self.freeze_assignment().hot()
    }

    fn shape_stride(&self) -> usize {
        N_PARAMS + 3 * self.points_per_shape()
    }

    pub fn param_count(&self) -> usize {
        self.num_shapes() * self.shape_stride()
            + self.num_parts() * POSE_PARAMS
            + self.num_shapes() * self.num_parts()
    }

    /// Flat parameters: per shape `[primitive(7), points(3 N_p)]`, then per
    /// pose `[q(4), t(3)]`, then the logits row-major.
    pub fn to_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for shape in &self.shapes {
            out.extend_from_slice(&shape.primitive.params());
            for p in &shape.points {
                out.extend_from_slice(p.as_slice());
            }
        }
        for pose in &self.poses {
            out.extend_from_slice(&pose.q);
            out.extend_from_slice(pose.t.as_slice());
        }
        for i in 0..self.num_shapes() {
            for j in 0..self.num_parts() {
                out.push(self.logits.0[(i, j)]);
            }
        }
        out
    }

    /// Overwrites every parameter from a flat vector without projection.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dims(format!(
                "{} parameters for a model with {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut it = params.iter().copied();
        let mut next = || it.next().expect("length checked");
        for shape in &mut self.shapes {
            let mut p: SqParams = [0.0; N_PARAMS];
            p.iter_mut().for_each(|v| *v = next());
            shape.primitive = Superquadric::from_params(&p);
            for point in &mut shape.points {
                *point = Vec3::new(next(), next(), next());
            }
        }
        for pose in &mut self.poses {
            pose.q = [next(), next(), next(), next()];
            pose.t = Vec3::new(next(), next(), next());
        }
        let (m_s, m_t) = (self.num_shapes(), self.num_parts());
        for i in 0..m_s {
            for j in 0..m_t {
                self.logits.0[(i, j)] = next();
            }
        }
        Ok(())
    }

    /// Restores the admissible set: clamped primitives, unit quaternions.
    pub fn project(&mut self) {
        for shape in &mut self.shapes {
            shape.primitive.project();
        }
        for pose in &mut self.poses {
            if pose.normalize().is_err() {
                pose.q = [1.0, 0.0, 0.0, 0.0];
            }
        }
    }

    /// 0/1 mask over the flat parameters selecting the given groups.
    pub fn mask(&self, groups: &[ParamGroup]) -> Vec<bool> {
        let has = |g| groups.contains(&g);
        let mut out = Vec::with_capacity(self.param_count());
        for _ in 0..self.num_shapes() {
            out.extend(std::iter::repeat_n(has(ParamGroup::Primitives), N_PARAMS));
            out.extend(std::iter::repeat_n(has(ParamGroup::Points), 3 * self.points_per_shape()));
        }
        out.extend(std::iter::repeat_n(has(ParamGroup::Poses), POSE_PARAMS * self.num_parts()));
        out.extend(std::iter::repeat_n(
            has(ParamGroup::Logits),
            self.num_shapes() * self.num_parts(),
        ));
        out
    }
}

/// Gradient with the same structure as [`PartsModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrad {
    pub primitives: Vec<SqParams>,
    pub points: Vec<Vec<Vec3>>,
    pub quaternions: Vec<[f64; 4]>,
    pub translations: Vec<Vec3>,
    pub logits: DMatrix<f64>,
}

impl ModelGrad {
    pub fn zeros(model: &PartsModel) -> Self {
        ModelGrad {
            primitives: vec![[0.0; N_PARAMS]; model.num_shapes()],
            points: vec![vec![Vec3::zeros(); model.points_per_shape()]; model.num_shapes()],
            quaternions: vec![[0.0; 4]; model.num_parts()],
            translations: vec![Vec3::zeros(); model.num_parts()],
            logits: DMatrix::zeros(model.num_shapes(), model.num_parts()),
        }
    }

    /// Flattened in the layout of [`PartsModel::to_params`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (prim, points) in self.primitives.iter().zip(&self.points) {
            out.extend_from_slice(prim);
            for p in points {
                out.extend_from_slice(p.as_slice());
            }
        }
        for (q, t) in self.quaternions.iter().zip(&self.translations) {
            out.extend_from_slice(q);
            out.extend_from_slice(t.as_slice());
        }
        for i in 0..self.logits.nrows() {
            for j in 0..self.logits.ncols() {
                out.push(self.logits[(i, j)]);
            }
        }
        out
    }
}
