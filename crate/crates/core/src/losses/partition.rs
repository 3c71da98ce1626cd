use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Pose, Superquadric, Vec3};

/// Assignment of every input point to exactly one part.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    sets: Vec<Vec<usize>>,
}

impl Partition {
    pub fn from_labels(labels: Vec<usize>, parts: usize) -> Result<Self> {
        let mut sets = vec![Vec::new(); parts];
        for (i, &l) in labels.iter().enumerate() {
            sets.get_mut(l)
                .ok_or_else(|| Error::invalid(format!("label {l} with only {parts} parts")))?
                .push(i);
        }
        Ok(Partition { labels, sets })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Indices of the points belonging to part `m`, in input order.
    pub fn members(&self, m: usize) -> &[usize] {
        &self.sets[m]
    }

    pub fn parts(&self) -> usize {
        self.sets.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }
}

pub(crate) fn nearest_part(x: &Vec3, primitives: &[(Superquadric, Pose)]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (m, (sq, pose)) in primitives.iter().enumerate() {
        let d = sq.radial_distance(&pose.inverse_apply(x));
        if d < best_d {
            best_d = d;
            best = m;
        }
    }
    best
}

pub(crate) fn partition_points(points: &[Vec3], primitives: &[(Superquadric, Pose)]) -> Partition {
    let labels = points.iter().map(|x| nearest_part(x, primitives)).collect();
    Partition::from_labels(labels, primitives.len()).expect("labels index the primitive list")
}

/// Splits `cloud` by nearest posed primitive (radial distance in the
/// primitive's canonical frame), ties going to the lowest part index.
pub fn partition_by_primitive(cloud: &PointCloud, primitives: &[(Superquadric, Pose)]) -> Result<Partition> {
    if primitives.is_empty() {
        return Err(Error::invalid("partitioning needs at least one primitive"));
    }
    Ok(partition_points(cloud.points(), primitives))
}
