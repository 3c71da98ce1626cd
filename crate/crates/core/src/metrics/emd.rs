use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Largest cloud the exact matcher accepts.
pub const EMD_MAX_POINTS: usize = 512;

/// Minimum-cost perfect matching of a square cost matrix (row-major, `n × n`)
/// by the shortest augmenting path method with potentials. Returns the column
/// matched to every row.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be square");
    // 1-based arrays with a sentinel column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

/// Earth mover's distance between equal-size clouds: the optimal one-to-one
/// matching under Euclidean ground distance, averaged over points.
pub fn emd(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::dims(format!("EMD needs equal sizes, got {n} and {}", y.len())));
    }
    if n > EMD_MAX_POINTS {
        return Err(Error::invalid(format!("EMD is limited to {EMD_MAX_POINTS} points, got {n}")));
    }
    let (xs, ys) = (x.points(), y.points());
    let cost: Vec<f64> = xs.iter().flat_map(|a| ys.iter().map(move |b| (a - b).norm())).collect();
    let matching = hungarian(&cost, n);
    Ok(matching.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64)
}
