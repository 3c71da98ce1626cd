//! Set-level evaluation metrics, self-similarity and part statistics.

mod emd;
mod jsd;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

pub use emd::{emd, hungarian, EMD_MAX_POINTS};
pub use jsd::{jsd, JsdReport, VoxelGrid, DEFAULT_GRID_RES};

use crate::error::{Error, Result};
use crate::fit::{assemble, PartsModel};
use crate::geometry::PointCloud;
use crate::losses::{chamfer, partition_by_primitive, posed_primitives};

/// Cloud-to-cloud distance used by the set metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distance {
    Chamfer,
    Emd,
}

impl Distance {
    pub fn eval(self, x: &PointCloud, y: &PointCloud) -> Result<f64> {
        match self {
            Distance::Chamfer => chamfer(x, y),
            Distance::Emd => emd(x, y),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Distance::Chamfer => "CD",
            Distance::Emd => "EMD",
        }
    }
}

/// `table[j][i] = d(reference_j, generated_i)`.
fn distance_table(reference: &[PointCloud], generated: &[PointCloud], d: Distance) -> Result<Vec<Vec<f64>>> {
    if reference.is_empty() || generated.is_empty() {
        return Err(Error::invalid("set metrics need non-empty sets"));
    }
    reference
        .par_iter()
        .map(|x| generated.iter().map(|y| d.eval(x, y)).collect())
        .collect()
}

/// Minimum matching distance: mean over reference clouds of the distance to
/// the closest generated cloud.
pub fn mmd(reference: &[PointCloud], generated: &[PointCloud], d: Distance) -> Result<f64> {
    let table = distance_table(reference, generated, d)?;
    let sum: f64 = table.iter().map(|row| row.iter().cloned().fold(f64::INFINITY, f64::min)).sum();
    Ok(sum / reference.len() as f64)
}

/// Coverage: fraction of reference clouds that are the nearest reference of
/// at least one generated cloud. Ties go to the lowest reference index.
pub fn cov(reference: &[PointCloud], generated: &[PointCloud], d: Distance) -> Result<f64> {
    let table = distance_table(reference, generated, d)?;
    let mut covered = vec![false; reference.len()];
    for i in 0..generated.len() {
        let mut best = 0;
        for j in 1..reference.len() {
            if table[j][i] < table[best][i] {
                best = j;
            }
        }
        covered[best] = true;
    }
    Ok(covered.iter().filter(|c| **c).count() as f64 / reference.len() as f64)
}

/// Mean and minimum Chamfer distance over all unordered pairs of parts,
/// compared in their canonical frames.
pub fn self_similarity(model: &PartsModel) -> Result<(f64, f64)> {
    let m_t = model.num_parts();
    if m_t < 2 {
        return Err(Error::invalid("self-similarity needs at least two parts"));
    }
    let hot = model.hot();
    let canon: Vec<PointCloud> = model
        .shapes
        .iter()
        .map(|s| PointCloud::new(s.points.clone()))
        .collect::<Result<_>>()?;
    let mut values = Vec::new();
    for j in 0..m_t {
        for k in j + 1..m_t {
            values.push(chamfer(&canon[hot[j]], &canon[hot[k]])?);
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((mean, min))
}

/// Population standard deviation.
pub fn population_sdev(counts: &[usize]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    (counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartStats {
    pub counts: Vec<usize>,
    pub sdev: f64,
}

/// Points of `x` per part under the model's nearest-primitive partition.
pub fn part_point_stats(x: &PointCloud, model: &PartsModel) -> Result<PartStats> {
    let part = partition_by_primitive(x, &posed_primitives(model, &model.hot()))?;
    let counts = part.counts();
    Ok(PartStats {
        sdev: population_sdev(&counts),
        counts,
    })
}

/// Downsamples every assembled part in proportion to `train_counts`, for a
/// total of `N_p · M_T` points before capping.
pub fn balanced_resample<R: Rng + ?Sized>(model: &PartsModel, train_counts: &[f64], rng: &mut R) -> Result<PointCloud> {
    let total = model.points_per_shape() * model.num_parts();
    balanced_resample_to(model, train_counts, total, rng)
}

/// As [`balanced_resample`] with an explicit target total `n`. Part `m`
/// keeps `round(n · c_m / Σ c)` points, at most `N_p`.
pub fn balanced_resample_to<R: Rng + ?Sized>(
    model: &PartsModel,
    train_counts: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<PointCloud> {
    let m_t = model.num_parts();
    if train_counts.len() != m_t {
        return Err(Error::dims(format!("{} counts for {m_t} parts", train_counts.len())));
    }
    let sum: f64 = train_counts.iter().sum();
    if train_counts.iter().any(|c| !c.is_finite() || *c < 0.0) || !(sum > 0.0) {
        return Err(Error::invalid("train counts must be non-negative with a positive sum"));
    }
    let n_p = model.points_per_shape();
    let assembly = assemble(model);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (m, c) in train_counts.iter().enumerate() {
        let keep = ((n as f64 * c / sum).round() as usize).min(n_p);
        let mut idx = sample(rng, n_p, keep).into_vec();
        idx.sort_unstable();
        let block = &assembly.cloud.points()[m * n_p..(m + 1) * n_p];
        points.extend(idx.iter().map(|&i| block[i]));
        labels.extend(std::iter::repeat_n(m, keep));
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    PointCloud::with_labels(points, labels)
}
