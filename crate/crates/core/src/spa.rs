//! Similar-parts assignment: Gumbel-perturbed shape selection with a
//! straight-through gradient.
//!
//! Each of the `M_T` parts picks one of `M_s` canonical shapes. Column `j` of
//! the hard matrix is `one_hot(argmax_i (λ_ij + g_ij))`; the backward pass
//! uses the Jacobian of the soft matrix `softmax((λ_j + g_j) / τ)` instead of
//! the (zero) Jacobian of the argmax.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

const U_CLAMP: f64 = 1e-12;

/// Free `M_s × M_T` assignment log-scores.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentLogits(pub DMatrix<f64>);

impl AssignmentLogits {
    pub fn zeros(shapes: usize, parts: usize) -> Self {
        AssignmentLogits(DMatrix::zeros(shapes, parts))
    }

    pub fn shapes(&self) -> usize {
        self.0.nrows()
    }

    pub fn parts(&self) -> usize {
        self.0.ncols()
    }
}

/// Standard Gumbel variate from a uniform draw, `-ln(-ln u)`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(U_CLAMP, 1.0 - U_CLAMP);
    -(-u.ln()).ln()
}

pub fn sample_gumbel<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| gumbel_from_uniform(rng.random::<f64>()))
}

/// Column-wise `softmax((λ + g) / τ)`.
pub fn soft_assignment(lambda: &AssignmentLogits, g: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Temperature(tau));
    }
    check_same_shape(&lambda.0, g)?;
    let mut out = (&lambda.0 + g) / tau;
    for mut col in out.column_iter_mut() {
        let max = col.max();
        col.apply(|v| *v = (*v - max).exp());
        let sum = col.sum();
        col /= sum;
    }
    Ok(out)
}

/// One-hot columns at `argmax_i (λ_ij + g_ij)`, lowest index on ties.
pub fn hard_assignment(lambda: &AssignmentLogits, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_same_shape(&lambda.0, g)?;
    let scores = &lambda.0 + g;
    let mut out = DMatrix::zeros(scores.nrows(), scores.ncols());
    for (j, col) in scores.column_iter().enumerate() {
        out[(argmax(col.iter().copied()), j)] = 1.0;
    }
    Ok(out)
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

fn check_same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dims(format!(
            "assignment matrices {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Hot row of every column of a one-hot matrix.
pub fn hot_indices(hard: &DMatrix<f64>) -> Vec<usize> {
    hard.column_iter().map(|c| argmax(c.iter().copied())).collect()
}

/// Hard assignment paired with the soft matrix drawn from the same noise.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix {
    pub hard: DMatrix<f64>,
    pub soft: DMatrix<f64>,
    pub tau: f64,
}

impl AssignmentMatrix {
    pub fn from_noise(lambda: &AssignmentLogits, g: &DMatrix<f64>, tau: f64) -> Result<Self> {
        Ok(AssignmentMatrix {
            hard: hard_assignment(lambda, g)?,
            soft: soft_assignment(lambda, g, tau)?,
            tau,
        })
    }

    pub fn sample<R: Rng + ?Sized>(lambda: &AssignmentLogits, tau: f64, rng: &mut R) -> Result<Self> {
        let g = sample_gumbel(lambda.shapes(), lambda.parts(), rng);
        Self::from_noise(lambda, &g, tau)
    }

    /// Noise-free readout (`g = 0`).
    pub fn deterministic(lambda: &AssignmentLogits, tau: f64) -> Result<Self> {
        let g = DMatrix::zeros(lambda.shapes(), lambda.parts());
        Self::from_noise(lambda, &g, tau)
    }

    pub fn shapes(&self) -> usize {
        self.hard.nrows()
    }

    pub fn parts(&self) -> usize {
        self.hard.ncols()
    }

    pub fn hot(&self) -> Vec<usize> {
        hot_indices(&self.hard)
    }

    /// Straight-through backward: maps `dL/dA` (evaluated at the hard
    /// matrix) to `dL/dλ` through the softmax Jacobian of each column.
    pub fn lambda_grad(&self, d_assign: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.shapes(), self.parts());
        for j in 0..self.parts() {
            let dot: f64 = (0..self.shapes())
                .map(|i| d_assign[(i, j)] * self.soft[(i, j)])
                .sum();
            for k in 0..self.shapes() {
                out[(k, j)] = self.soft[(k, j)] / self.tau * (d_assign[(k, j)] - dot);
            }
        }
        out
    }

    /// The matrix `hard + soft(λ') - soft(λ)` (same noise): equal to `hard`
    /// at `λ' = λ`, with the soft Jacobian as its derivative. Differentiating
    /// a loss along this path reproduces the straight-through gradient.
    pub fn relaxed(&self, lambda: &AssignmentLogits, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let soft = soft_assignment(lambda, g, self.tau)?;
        Ok(&self.hard + soft - &self.soft)
    }
}

/// Forward of the straight-through selection: part `j` receives
/// `Σ_i A_ij values[i]`, which is exactly `values[hot(j)]` for a one-hot
/// column. Zero weights are skipped so the hard selection is bitwise exact.
pub fn straight_through_select(values: &[Vec<f64>], assign: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
    if values.len() != assign.nrows() {
        return Err(Error::dims(format!(
            "{} shapes for an assignment with {} rows",
            values.len(),
            assign.nrows()
        )));
    }
    let width = values.first().map_or(0, Vec::len);
    if values.iter().any(|v| v.len() != width) {
        return Err(Error::dims("per-shape values differ in length"));
    }
    Ok(assign
        .column_iter()
        .map(|col| {
            let mut out = vec![0.0; width];
            for (i, &a) in col.iter().enumerate() {
                if a != 0.0 {
                    for (o, v) in out.iter_mut().zip(&values[i]) {
                        *o += a * v;
                    }
                }
            }
            out
        })
        .collect())
}

/// `dL/dA_ij = <dL/d(selected_j), values_i>` for the linear selection above.
pub fn selection_grad(values: &[Vec<f64>], upstream: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(values.len(), upstream.len(), |i, j| {
        values[i].iter().zip(&upstream[j]).map(|(a, b)| a * b).sum()
    })
}

/// 3-mode product `Ŷ = Ỹ ×₃ Aᵀ` over stacks of canonical point sets.
pub fn select_shapes(canonical: &[Vec<Vec3>], assign: &DMatrix<f64>) -> Result<Vec<Vec<Vec3>>> {
    if canonical.len() != assign.nrows() {
        return Err(Error::dims(format!(
            "{} canonical shapes for an assignment with {} rows",
            canonical.len(),
            assign.nrows()
        )));
    }
    let n = canonical.first().map_or(0, Vec::len);
    if canonical.iter().any(|c| c.len() != n) {
        return Err(Error::dims("canonical shapes differ in point count"));
    }
    Ok(assign
        .column_iter()
        .map(|col| {
            let mut out = vec![Vec3::zeros(); n];
            for (i, &a) in col.iter().enumerate() {
                if a != 0.0 {
                    for (o, p) in out.iter_mut().zip(&canonical[i]) {
                        *o += a * p;
                    }
                }
            }
            out
        })
        .collect())
}

/// Hinge penalty on shapes that no part uses:
/// `(1/M_s) Σ_i max(1 - Σ_j A_ij, 0)`.
pub fn assignment_loss(assign: &DMatrix<f64>) -> f64 {
    let m_s = assign.nrows() as f64;
    assign
        .row_iter()
        .map(|row| (1.0 - row.sum()).max(0.0))
        .sum::<f64>()
        / m_s
}

pub fn assignment_loss_grad(assign: &DMatrix<f64>) -> DMatrix<f64> {
    let m_s = assign.nrows() as f64;
    let mut out = DMatrix::zeros(assign.nrows(), assign.ncols());
    for (i, row) in assign.row_iter().enumerate() {
        if 1.0 - row.sum() > 0.0 {
            out.row_mut(i).fill(-1.0 / m_s);
        }
    }
    out
}
