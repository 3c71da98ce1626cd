//! Part-level corruption of labelled clouds and the two completion
//! procedures: refit-and-reassemble, and copying points across parts that
//! share a canonical shape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{assemble, fit, FitConfig, PartsModel};
use crate::geometry::{PointCloud, Vec3};
use crate::losses::{partition_by_primitive, posed_primitives};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    Cut,
    Hole,
}

/// A reproducible corruption: which part loses how many points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corruption {
    pub kind: CorruptionKind,
    pub part: usize,
    pub k: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corrupted {
    /// Surviving points in their original order, labels kept.
    pub cloud: PointCloud,
    /// Indices into the input of the removed points, in removal order.
    pub removed: Vec<usize>,
}

impl Corruption {
    pub fn apply(&self, x: &PointCloud) -> Result<Corrupted> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(self.seed);
        match self.kind {
            CorruptionKind::Cut => corrupt_cut(x, self.part, self.k, &mut rng),
            CorruptionKind::Hole => corrupt_hole(x, self.part, self.k, &mut rng),
        }
    }
}

fn random_weights<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(rng.random(), rng.random(), rng.random())
}

/// Indices of the target part sorted by `w · x`, largest first; equal keys
/// keep input order.
fn sorted_part(x: &PointCloud, part: usize, w: &Vec3) -> Result<Vec<usize>> {
    if x.labels().is_none() {
        return Err(Error::invalid("corruption needs a labelled cloud"));
    }
    let mut idx = x.indices_with_label(part);
    let pts = x.points();
    idx.sort_by(|&a, &b| w.dot(&pts[b]).total_cmp(&w.dot(&pts[a])));
    Ok(idx)
}

fn finish(x: &PointCloud, removed: Vec<usize>) -> Result<Corrupted> {
    Ok(Corrupted {
        cloud: x.without(&removed)?,
        removed,
    })
}

/// Removes the `k` target-part points furthest along a random direction in
/// the positive octant.
pub fn corrupt_cut<R: Rng + ?Sized>(x: &PointCloud, part: usize, k: usize, rng: &mut R) -> Result<Corrupted> {
    cut_with_weights(x, part, k, &random_weights(rng))
}

pub fn cut_with_weights(x: &PointCloud, part: usize, k: usize, w: &Vec3) -> Result<Corrupted> {
    let order = sorted_part(x, part, w)?;
    if k == 0 || k >= order.len() {
        return Err(Error::invalid(format!(
            "cut of {k} points needs 1 ≤ K < part size {}",
            order.len()
        )));
    }
    finish(x, order[..k].to_vec())
}

/// Removes a ball of `k` target-part points around the point ranked `k`
/// along a random direction.
pub fn corrupt_hole<R: Rng + ?Sized>(x: &PointCloud, part: usize, k: usize, rng: &mut R) -> Result<Corrupted> {
    hole_with_weights(x, part, k, &random_weights(rng))
}

pub fn hole_with_weights(x: &PointCloud, part: usize, k: usize, w: &Vec3) -> Result<Corrupted> {
    let order = sorted_part(x, part, w)?;
    if k == 0 || order.len() <= 2 * k {
        return Err(Error::invalid(format!(
            "hole of {k} points needs a part of more than {} points, got {}",
            2 * k,
            order.len()
        )));
    }
    let pts = x.points();
    let centre = pts[order[k - 1]];
    // distance ties resolve by rank along the sort direction
    let mut by_distance: Vec<(usize, usize)> = order.iter().copied().enumerate().collect();
    by_distance.sort_by(|a, b| {
        (pts[a.1] - centre)
            .norm_squared()
            .total_cmp(&(pts[b.1] - centre).norm_squared())
            .then(a.0.cmp(&b.0))
    });
    finish(x, by_distance[..k].iter().map(|(_, i)| *i).collect())
}

/// Refits the incomplete cloud and returns the assembled reconstruction.
pub fn completion_r(x_inc: &PointCloud, m_s: usize, m_t: usize, config: &FitConfig) -> Result<PointCloud> {
    let (model, _) = fit(x_inc, m_s, m_t, config)?;
    Ok(assemble(&model).cloud)
}

/// One emitted copy: input point `source`, found in part `from`, mapped into
/// part `to`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CopyRecord {
    pub source: usize,
    pub from: usize,
    pub to: usize,
}

/// Completion by copying: every point of part `m` is carried through the
/// canonical frame into every other part that uses the same shape. The
/// output is the input followed by the copies.
pub fn completion_s(x_inc: &PointCloud, model: &PartsModel) -> Result<PointCloud> {
    Ok(completion_s_with_copies(x_inc, model)?.0)
}

pub fn completion_s_with_copies(x_inc: &PointCloud, model: &PartsModel) -> Result<(PointCloud, Vec<CopyRecord>)> {
    let hot = model.hot();
    let partition = partition_by_primitive(x_inc, &posed_primitives(model, &hot))?;
    let mut points = x_inc.points().to_vec();
    let mut copies = Vec::new();
    for (source, (x, &from)) in x_inc.points().iter().zip(partition.labels()).enumerate() {
        let canonical = model.poses[from].inverse_apply(x);
        for to in (0..hot.len()).filter(|&to| to != from && hot[to] == hot[from]) {
            points.push(model.poses[to].apply(&canonical));
            copies.push(CopyRecord { source, from, to });
        }
    }
    Ok((PointCloud::new(points)?, copies))
}
