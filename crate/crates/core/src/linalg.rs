//! Small dense linear algebra: symmetric eigendecomposition and k-means.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::SeedRng;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix { n, data: vec![0.0; n * n] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("Jacobi eigensolver did not converge in {sweeps} sweeps")]
pub struct NoConvergence {
    pub sweeps: usize,
}

/// Eigenvalues ascending, with eigenvectors as columns of a row-major matrix
/// (`vectors.get(row, k)` is component `row` of eigenvector `k`).
#[derive(Debug, Clone, PartialEq)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: SquareMatrix,
}

/// Cyclic Jacobi rotations on a symmetric matrix.
pub fn symmetric_eigen(m: &SquareMatrix, max_sweeps: usize) -> Result<Eigen, NoConvergence> {
    let n = m.n;
    let mut a = m.clone();
    let mut v = SquareMatrix::zeros(n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let scale: f64 = a.data.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut converged = n < 2;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a.get(i, j) * a.get(i, j);
            }
        }
        if off <= 1e-30 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a.get(p, p), a.get(q, q));
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                let tau = s / (1.0 + c);
                a.set(p, p, app - t * apq);
                a.set(q, q, aqq + t * apq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    if k != p && k != q {
                        let (akp, akq) = (a.get(k, p), a.get(k, q));
                        let nkp = akp - s * (akq + tau * akp);
                        let nkq = akq + s * (akp - tau * akq);
                        a.set(k, p, nkp);
                        a.set(p, k, nkp);
                        a.set(k, q, nkq);
                        a.set(q, k, nkq);
                    }
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, vkp - s * (vkq + tau * vkp));
                    v.set(k, q, vkq + s * (vkp - tau * vkq));
                }
            }
        }
    }
    if !converged {
        return Err(NoConvergence { sweeps: max_sweeps });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).total_cmp(&a.get(j, j)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = SquareMatrix::zeros(n);
    for (k, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, k, v.get(r, src));
        }
    }
    Ok(Eigen { values, vectors })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn kmeans_once(points: &[Vec<f64>], k: usize, iterations: usize, rng: &mut SeedRng) -> KMeans {
    let n = points.len();
    let dim = points[0].len();
    // k-means++ seeding
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    let mut assignments = vec![0usize; n];
    for it in 0..iterations {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (0, f64::INFINITY);
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < best.1 {
                    best = (c, d);
                }
            }
            if assignments[i] != best.0 {
                assignments[i] = best.0;
                changed = true;
            }
        }
        if !changed && it > 0 {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            // empty clusters keep their center and stay empty
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = points.iter().zip(&assignments).map(|(p, &a)| sq_dist(p, &centers[a])).sum();
    KMeans { assignments, centers, inertia }
}

/// Lloyd's k-means with k-means++ seeding; the best of `restarts` runs by
/// inertia (earliest on ties) is returned.
pub fn kmeans(points: &[Vec<f64>], k: usize, iterations: usize, restarts: usize, rng: &mut SeedRng) -> KMeans {
    assert!(!points.is_empty() && k >= 1);
    let mut best = kmeans_once(points, k, iterations, rng);
    for _ in 1..restarts {
        let r = kmeans_once(points, k, iterations, rng);
        if r.inertia < best.inertia {
            best = r;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn eigen_of_known_matrix() {
        let m = SquareMatrix { n: 2, data: vec![2.0, 1.0, 1.0, 2.0] };
        let e = symmetric_eigen(&m, 50).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-12 && (e.values[1] - 3.0).abs() < 1e-12);
        let (a, b) = (e.vectors.get(0, 0), e.vectors.get(1, 0));
        assert!((a + b).abs() < 1e-12);
    }

    #[test]
    fn eigen_reconstructs_random_symmetric() {
        let mut rng = SeedRng::seed_from_u64(3);
        let n = 12;
        let mut m = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let x: f64 = rng.random_range(-1.0..1.0);
                m.set(i, j, x);
                m.set(j, i, x);
            }
        }
        let e = symmetric_eigen(&m, 100).unwrap();
        for i in 0..n {
            for j in 0..n {
                let r: f64 = (0..n).map(|k| e.vectors.get(i, k) * e.values[k] * e.vectors.get(j, k)).sum();
                assert!((r - m.get(i, j)).abs() < 1e-10);
            }
        }
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn kmeans_separates_blobs() {
        let mut rng = SeedRng::seed_from_u64(1);
        let mut pts = Vec::new();
        for c in 0..3 {
            for _ in 0..20 {
                pts.push(vec![c as f64 * 10.0 + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            }
        }
        let r = kmeans(&pts, 3, 100, 5, &mut rng);
        for c in 0..3 {
            let a = r.assignments[c * 20];
            assert!(r.assignments[c * 20..(c + 1) * 20].iter().all(|&x| x == a));
        }
    }

    #[test]
    fn identical_points_leave_a_cluster_empty() {
        let pts = vec![vec![1.0, 0.0]; 10];
        let r = kmeans(&pts, 2, 100, 5, &mut SeedRng::seed_from_u64(0));
        assert!(r.assignments.iter().all(|&a| a == 0));
        assert_eq!(r.inertia, 0.0);
    }
}
