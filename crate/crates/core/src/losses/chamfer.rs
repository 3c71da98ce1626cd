use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

/// Record/replay store for nearest-neighbour index sets, so that a gradient
/// check can evaluate a loss with its matching frozen.
#[derive(Clone, Debug, Default)]
pub struct NnCache {
    mode: NnMode,
    slots: Vec<Vec<usize>>,
    cursor: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
enum NnMode {
    #[default]
    Live,
    Record,
    Replay,
}

impl NnCache {
    pub fn live() -> Self {
        Self::default()
    }

    pub fn recording() -> Self {
        NnCache {
            mode: NnMode::Record,
            ..Self::default()
        }
    }

    /// Switches to replaying the recorded queries from the beginning.
    pub fn replay(&mut self) {
        self.mode = NnMode::Replay;
        self.cursor = 0;
    }

    pub(crate) fn query(&mut self, compute: impl FnOnce() -> Vec<usize>) -> Vec<usize> {
        match self.mode {
            NnMode::Live => compute(),
            NnMode::Record => {
                let v = compute();
                self.slots.push(v.clone());
                v
            }
            NnMode::Replay => {
                let v = self
                    .slots
                    .get(self.cursor)
                    .cloned()
                    .expect("replayed more nearest-neighbour queries than were recorded");
                self.cursor += 1;
                v
            }
        }
    }
}

pub(crate) fn nearest(query: &Vec3, candidates: &[Vec3]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let d = (query - c).norm_squared();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Nearest index in `y` for every `x`, followed by nearest index in `x` for
/// every `y`, from one pass over the distance table.
pub(crate) fn chamfer_pairs(x: &[Vec3], y: &[Vec3]) -> Vec<usize> {
    let mut x_best = vec![(f64::INFINITY, 0usize); x.len()];
    let mut y_best = vec![(f64::INFINITY, 0usize); y.len()];
    for (i, a) in x.iter().enumerate() {
        for (j, b) in y.iter().enumerate() {
            let d = (a - b).norm_squared();
            if d < x_best[i].0 {
                x_best[i] = (d, j);
            }
            if d < y_best[j].0 {
                y_best[j] = (d, i);
            }
        }
    }
    x_best.into_iter().chain(y_best).map(|(_, k)| k).collect()
}

/// Chamfer distance with gradients with respect to both point sets.
pub(crate) fn chamfer_grad(x: &[Vec3], y: &[Vec3], nn: &mut NnCache) -> (f64, Vec<Vec3>, Vec<Vec3>) {
    let pairs = nn.query(|| chamfer_pairs(x, y));
    let (to_y, to_x) = pairs.split_at(x.len());
    let (wx, wy) = (1.0 / x.len() as f64, 1.0 / y.len() as f64);
    let mut gx = vec![Vec3::zeros(); x.len()];
    let mut gy = vec![Vec3::zeros(); y.len()];
    let mut value = 0.0;
    for (i, &j) in to_y.iter().enumerate() {
        let d = x[i] - y[j];
        value += wx * d.norm_squared();
        gx[i] += 2.0 * wx * d;
        gy[j] -= 2.0 * wx * d;
    }
    for (j, &i) in to_x.iter().enumerate() {
        let d = y[j] - x[i];
        value += wy * d.norm_squared();
        gy[j] += 2.0 * wy * d;
        gx[i] -= 2.0 * wy * d;
    }
    (value, gx, gy)
}

pub(crate) fn chamfer_points(x: &[Vec3], y: &[Vec3]) -> f64 {
    let pairs = chamfer_pairs(x, y);
    let (to_y, to_x) = pairs.split_at(x.len());
    let fwd: f64 = to_y.iter().enumerate().map(|(i, &j)| (x[i] - y[j]).norm_squared()).sum();
    let bwd: f64 = to_x.iter().enumerate().map(|(j, &i)| (y[j] - x[i]).norm_squared()).sum();
    fwd / x.len() as f64 + bwd / y.len() as f64
}

/// Symmetric Chamfer distance: mean squared nearest-neighbour distance from
/// `x` to `y` plus the same from `y` to `x`.
pub fn chamfer(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(chamfer_points(x.points(), y.points()))
}
