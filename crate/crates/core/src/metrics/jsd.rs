use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

pub const DEFAULT_GRID_RES: usize = 28;

/// Axis-aligned voxel grid over a box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelGrid {
    pub res: usize,
    pub lo: Vec3,
    pub hi: Vec3,
}

impl Default for VoxelGrid {
    /// 28³ voxels over the unit cube centred at the origin.
    fn default() -> Self {
        VoxelGrid {
            res: DEFAULT_GRID_RES,
            lo: Vec3::repeat(-0.5),
            hi: Vec3::repeat(0.5),
        }
    }
}

impl VoxelGrid {
    pub fn with_res(res: usize) -> Self {
        VoxelGrid { res, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.res == 0 || (0..3).any(|k| !(self.hi[k] > self.lo[k])) {
            return Err(Error::invalid(format!("degenerate voxel grid {self:?}")));
        }
        Ok(())
    }

    /// Voxel of `p` (clamped into the grid) and whether `p` was outside.
    pub fn voxel(&self, p: &Vec3) -> (usize, bool) {
        let mut idx = 0;
        let mut outside = false;
        for k in 0..3 {
            let u = (p[k] - self.lo[k]) / (self.hi[k] - self.lo[k]);
            outside |= !(0.0..=1.0).contains(&u);
            let cell = (u * self.res as f64).floor().clamp(0.0, (self.res - 1) as f64) as usize;
            idx = idx * self.res + cell;
        }
        (idx, outside)
    }

    /// Normalised occupancy of all points of `set`, plus the out-of-bounds count.
    pub fn histogram(&self, set: &[PointCloud]) -> (Vec<f64>, usize) {
        let mut counts = vec![0.0; self.res.pow(3)];
        let mut clamped = 0;
        let mut total = 0usize;
        for cloud in set {
            for p in cloud.points() {
                let (i, out) = self.voxel(p);
                counts[i] += 1.0;
                clamped += out as usize;
                total += 1;
            }
        }
        counts.iter_mut().for_each(|c| *c /= total as f64);
        (counts, clamped)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JsdReport {
    /// Jensen-Shannon divergence in nats.
    pub value: f64,
    /// Points that fell outside the grid and were clamped to a boundary voxel.
    pub clamped: usize,
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, mi)| pi * (pi / mi).ln())
        .sum()
}

/// Jensen-Shannon divergence between the pooled voxel occupancies of two sets.
pub fn jsd(a: &[PointCloud], b: &[PointCloud], grid: &VoxelGrid) -> Result<JsdReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("JSD needs two non-empty sets"));
    }
    grid.validate()?;
    let (p, ca) = grid.histogram(a);
    let (q, cb) = grid.histogram(b);
    let m: Vec<f64> = p.iter().zip(&q).map(|(x, y)| 0.5 * (x + y)).collect();
    let value = (0.5 * kl_to_mixture(&p, &m) + 0.5 * kl_to_mixture(&q, &m)).clamp(0.0, std::f64::consts::LN_2);
    Ok(JsdReport {
        value,
        clamped: ca + cb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;
    use std::f64::consts::LN_2;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect()).unwrap()
    }

    #[test]
    fn examples() {
        let g = VoxelGrid::default();
        let a = vec![cloud(&[[0.1, 0.1, 0.1], [-0.3, 0.2, 0.0]])];
        assert_eq!(jsd(&a, &a, &g).unwrap().value, 0.0);
        let b = vec![cloud(&[[0.4, 0.4, 0.4]])];
        let c = vec![cloud(&[[-0.4, -0.4, -0.4]])];
        assert!((jsd(&b, &c, &g).unwrap().value - LN_2).abs() < 1e-12);
        assert!(jsd(&[], &c, &g).is_err());
    }

    #[test]
    fn out_of_bounds_points_are_clamped_and_counted() {
        let g = VoxelGrid::default();
        let a = vec![cloud(&[[0.49, 0.49, 0.49]])];
        let b = vec![cloud(&[[3.0, 0.9, 0.7], [0.5, 0.5, 0.5]])];
        let r = jsd(&a, &b, &g).unwrap();
        assert_eq!(r.clamped, 1);
        assert_eq!(r.value, 0.0);
    }

    /// Independent oracle: sparse histograms keyed by integer voxel triples.
    fn oracle(a: &[PointCloud], b: &[PointCloud], res: usize) -> f64 {
        let hist = |set: &[PointCloud]| {
            let mut h: HashMap<[i64; 3], f64> = HashMap::new();
            let n: usize = set.iter().map(|c| c.len()).sum();
            for p in set.iter().flat_map(|c| c.points()) {
                let key = [0, 1, 2].map(|k| (((p[k] + 0.5) * res as f64).floor() as i64).clamp(0, res as i64 - 1));
                *h.entry(key).or_default() += 1.0 / n as f64;
            }
            h
        };
        let (p, q) = (hist(a), hist(b));
        let mut keys: Vec<_> = p.keys().chain(q.keys()).copied().collect();
        keys.sort_unstable();
        keys.dedup();
        let mut out = 0.0;
        for k in keys {
            let (pi, qi) = (p.get(&k).copied().unwrap_or(0.0), q.get(&k).copied().unwrap_or(0.0));
            let mi = 0.5 * (pi + qi);
            if pi > 0.0 {
                out += 0.5 * pi * (pi / mi).ln();
            }
            if qi > 0.0 {
                out += 0.5 * qi * (qi / mi).ln();
            }
        }
        out
    }

    fn arb_set() -> impl Strategy<Value = Vec<PointCloud>> {
        prop::collection::vec(
            prop::collection::vec(prop::array::uniform3(-0.5f64..0.5), 1..20).prop_map(|p| cloud(&p)),
            1..4,
        )
    }

    proptest! {
        #[test]
        fn matches_direct_histograms(a in arb_set(), b in arb_set(), res in 1usize..8) {
            let g = VoxelGrid::with_res(res);
            let v = jsd(&a, &b, &g).unwrap().value;
            prop_assert!((v - oracle(&a, &b, res)).abs() < 1e-12);
            prop_assert!((v - jsd(&b, &a, &g).unwrap().value).abs() < 1e-12);
            prop_assert!((0.0..=LN_2).contains(&v));
        }
    }
}
