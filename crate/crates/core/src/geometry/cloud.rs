use super::Vec3;
use crate::error::{Error, Result};

/// Ordered point set with optional per-point part labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    labels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        Ok(PointCloud { points, labels: None })
    }

    pub fn with_labels(points: Vec<Vec3>, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::dims(format!(
                "{} labels for {} points",
                labels.len(),
                points.len()
            )));
        }
        let mut cloud = Self::new(points)?;
        cloud.labels = Some(labels);
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub fn centroid(&self) -> Vec3 {
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }

    /// Indices of the points carrying `label`.
    pub fn indices_with_label(&self, label: usize) -> Vec<usize> {
        match &self.labels {
            Some(labels) => labels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == label)
                .map(|(i, _)| i)
                .collect(),
            None => Vec::new(),
        }
    }

    /// Copy of the cloud without the listed indices, preserving order.
    pub fn without(&self, removed: &[usize]) -> Result<Self> {
        let mut drop = vec![false; self.len()];
        for &i in removed {
            if i >= self.len() {
                return Err(Error::invalid(format!("index {i} out of range")));
            }
            drop[i] = true;
        }
        let keep = |i: &usize| !drop[*i];
        let points = (0..self.len()).filter(keep).map(|i| self.points[i]).collect();
        match &self.labels {
            Some(labels) => {
                Self::with_labels(points, (0..self.len()).filter(keep).map(|i| labels[i]).collect())
            }
            None => Self::new(points),
        }
    }
}
