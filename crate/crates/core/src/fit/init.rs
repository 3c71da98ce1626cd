use nalgebra::{DMatrix, Matrix3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::model::{PartsModel, Shape};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Superquadric, Vec3, ALPHA_MIN};
use crate::spa::AssignmentLogits;

const KMEANS_TRIALS: usize = 4;
const LLOYD_ITERS: usize = 100;
const SPLIT_TRIALS: usize = 8;
const EM_ITERS: usize = 200;
/// Variance added to every mixture covariance, in squared length units.
const COV_FLOOR: f64 = 1e-4;
const LOGIT_STD: f64 = 0.01;

/// Result of a k-means split: centroids and the cluster of every point.
#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec3>,
    pub labels: Vec<usize>,
}

impl Clustering {
    fn sse(&self, x: &[Vec3]) -> f64 {
        x.iter()
            .zip(&self.labels)
            .map(|(p, &l)| (p - self.centroids[l]).norm_squared())
            .sum()
    }
}

fn nearest_centroid(p: &Vec3, centroids: &[Vec3]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centroids.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

fn seed_plus_plus<R: Rng + ?Sized>(x: &[Vec3], k: usize, rng: &mut R) -> Vec<Vec3> {
    let mut centroids = vec![x[rng.random_range(0..x.len())]];
    let mut d2: Vec<f64> = x.iter().map(|p| (p - centroids[0]).norm_squared()).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = x.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..x.len())
        };
        let c = x[next];
        for (d, p) in d2.iter_mut().zip(x) {
            *d = d.min((p - c).norm_squared());
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(x: &[Vec3], mut centroids: Vec<Vec3>) -> Clustering {
    let mut labels: Vec<usize> = x.iter().map(|p| nearest_centroid(p, &centroids)).collect();
    for _ in 0..LLOYD_ITERS {
        let mut sums = vec![Vec3::zeros(); centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &l) in x.iter().zip(&labels) {
            sums[l] += p;
            counts[l] += 1;
        }
        for k in 0..centroids.len() {
            // an emptied cluster keeps its old centre
            if counts[k] > 0 {
                centroids[k] = sums[k] / counts[k] as f64;
            }
        }
        let next: Vec<usize> = x.iter().map(|p| nearest_centroid(p, &centroids)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    Clustering { centroids, labels }
}

/// Seeded k-means: best of a few k-means++ initialisations by squared error.
pub fn kmeans<R: Rng + ?Sized>(x: &[Vec3], k: usize, rng: &mut R) -> Result<Clustering> {
    if x.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if k == 0 || k > x.len() {
        return Err(Error::invalid(format!("cannot split {} points into {k} clusters", x.len())));
    }
    let mut best: Option<(f64, Clustering)> = None;
    for _ in 0..KMEANS_TRIALS {
        let c = lloyd(x, seed_plus_plus(x, k, rng));
        let sse = c.sse(x);
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, c));
        }
    }
    Ok(best.expect("at least one trial").1)
}

fn log_densities(x: &[Vec3], means: &[Vec3], covs: &[Matrix3<f64>], weights: &[f64]) -> Vec<Vec<f64>> {
    let k = means.len();
    let mut consts = Vec::with_capacity(k);
    let mut inverses = Vec::with_capacity(k);
    for c in covs {
        let det = c.determinant().max(f64::MIN_POSITIVE);
        consts.push(-0.5 * det.ln() - 1.5 * (2.0 * std::f64::consts::PI).ln());
        inverses.push(c.try_inverse().unwrap_or_else(Matrix3::identity));
    }
    x.iter()
        .map(|p| {
            (0..k)
                .map(|j| {
                    let d = p - means[j];
                    weights[j].ln() + consts[j] - 0.5 * d.dot(&(inverses[j] * d))
                })
                .collect()
        })
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

/// Refines a hard split with a full-covariance Gaussian mixture. Returns the
/// most likely component of every point and the mixture log-likelihood.
fn mixture_refine(x: &[Vec3], start: &Clustering) -> (Vec<usize>, f64) {
    let k = start.centroids.len();
    let n = x.len() as f64;
    let mut resp: Vec<Vec<f64>> = start
        .labels
        .iter()
        .map(|&l| (0..k).map(|j| if j == l { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut loglik = f64::NEG_INFINITY;
    for _ in 0..EM_ITERS {
        let mut means = vec![Vec3::zeros(); k];
        let mut covs = vec![Matrix3::zeros(); k];
        let mut mass = vec![0.0; k];
        for (p, r) in x.iter().zip(&resp) {
            for j in 0..k {
                mass[j] += r[j];
                means[j] += r[j] * p;
            }
        }
        for j in 0..k {
            means[j] = if mass[j] > 0.0 { means[j] / mass[j] } else { start.centroids[j] };
        }
        for (p, r) in x.iter().zip(&resp) {
            for j in 0..k {
                let d = p - means[j];
                covs[j] += r[j] * d * d.transpose();
            }
        }
        let weights: Vec<f64> = mass.iter().map(|m| (m / n).max(1e-6)).collect();
        for j in 0..k {
            covs[j] = covs[j] / mass[j].max(1e-12) + Matrix3::identity() * COV_FLOOR;
        }
        let dens = log_densities(x, &means, &covs, &weights);
        let mut next = 0.0;
        for (r, d) in resp.iter_mut().zip(&dens) {
            let z = log_sum_exp(d);
            next += z;
            for j in 0..k {
                r[j] = (d[j] - z).exp();
            }
        }
        let done = (next - loglik).abs() < 1e-10 * n;
        loglik = next;
        if done {
            break;
        }
    }
    let labels = resp
        .iter()
        .map(|r| (0..k).fold(0, |b, j| if r[j] > r[b] { j } else { b }))
        .collect();
    (labels, loglik)
}

/// Split into `k` parts: k-means seeds refined by a Gaussian mixture, the
/// most likely of several seeds kept. Elongated and flat parts come out
/// whole, where plain k-means cuts them into compact pieces.
pub fn part_split<R: Rng + ?Sized>(x: &[Vec3], k: usize, rng: &mut R) -> Result<Clustering> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..SPLIT_TRIALS {
        let seed = kmeans(x, k, rng)?;
        let (labels, loglik) = mixture_refine(x, &seed);
        if best.as_ref().is_none_or(|(b, _)| loglik > *b) {
            best = Some((loglik, labels));
        }
    }
    let labels = best.expect("at least one trial").1;
    let mut sums = vec![Vec3::zeros(); k];
    let mut counts = vec![0usize; k];
    for (p, &l) in x.iter().zip(&labels) {
        sums[l] += p;
        counts[l] += 1;
    }
    // a component that lost all its points keeps a random data point
    let centroids = (0..k)
        .map(|j| {
            if counts[j] > 0 {
                sums[j] / counts[j] as f64
            } else {
                x[rng.random_range(0..x.len())]
            }
        })
        .collect();
    Ok(Clustering { centroids, labels })
}

fn half_extents(x: &[Vec3], labels: &[usize], k: usize) -> Vec<Vec3> {
    let mut lo = vec![Vec3::repeat(f64::INFINITY); k];
    let mut hi = vec![Vec3::repeat(f64::NEG_INFINITY); k];
    for (p, &l) in x.iter().zip(labels) {
        lo[l] = lo[l].inf(p);
        hi[l] = hi[l].sup(p);
    }
    lo.iter()
        .zip(&hi)
        .map(|(a, b)| {
            if a.x.is_finite() {
                ((b - a) * 0.5).map(|v| v.max(ALPHA_MIN))
            } else {
                Vec3::repeat(ALPHA_MIN)
            }
        })
        .collect()
}

/// Picks `m_s` clusters to seed the shapes: the bulkiest first, then
/// repeatedly the one whose extents differ most from those already taken.
fn pick_seed_clusters(extents: &[Vec3], m_s: usize) -> Vec<usize> {
    let volume = |a: &Vec3| a.x * a.y * a.z;
    let first = (0..extents.len())
        .fold(0, |b, k| if volume(&extents[k]) > volume(&extents[b]) { k } else { b });
    let mut chosen = vec![first];
    while chosen.len() < m_s {
        let score = |k: usize| {
            chosen
                .iter()
                .map(|&c| (extents[k] - extents[c]).norm_squared())
                .fold(f64::INFINITY, f64::min)
        };
        let next = (0..extents.len())
            .filter(|k| !chosen.contains(k))
            .fold(None, |b: Option<usize>, k| match b {
                Some(b) if score(b) >= score(k) => Some(b),
                _ => Some(k),
            })
            .expect("m_s ≤ m_t leaves a candidate");
        chosen.push(next);
    }
    chosen
}

/// Initial model: one pose per cluster of [`part_split`] at its centroid, shape
/// extents from cluster bounding boxes, spherical unit-exponent primitives,
/// canonical points uniform in each primitive's box and near-zero logits.
pub fn init_model<R: Rng + ?Sized>(
    x: &[Vec3],
    m_s: usize,
    m_t: usize,
    n_points: usize,
    rng: &mut R,
) -> Result<PartsModel> {
    if m_s == 0 || m_s > m_t {
        return Err(Error::invalid(format!("need 1 ≤ M_s ≤ M_T, got M_s = {m_s}, M_T = {m_t}")));
    }
    if n_points == 0 {
        return Err(Error::invalid("shapes need at least one canonical point"));
    }
    let clusters = part_split(x, m_t, rng)?;
    let extents = half_extents(x, &clusters.labels, m_t);
    let shapes = pick_seed_clusters(&extents, m_s)
        .into_iter()
        .map(|k| {
            let alpha = extents[k];
            let primitive = Superquadric::ellipsoid(alpha);
            let points = (0..n_points)
                .map(|_| alpha.map(|a| a * (2.0 * rng.random::<f64>() - 1.0)))
                .collect();
            Shape { primitive, points }
        })
        .collect();
    let poses = clusters.centroids.iter().map(|c| Pose::translation(*c)).collect();
    let normal = Normal::new(0.0, LOGIT_STD).expect("positive deviation");
    let logits = AssignmentLogits(DMatrix::from_fn(m_s, m_t, |_, _| normal.sample(rng)));
    PartsModel::new(shapes, poses, logits, 1.0)
}
