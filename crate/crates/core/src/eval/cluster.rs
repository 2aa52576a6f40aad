use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centers: Matrix,
    /// Within-cluster sum of squares after each iteration.
    pub wcss: Vec<f64>,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding.
fn seed_centers(x: &Matrix, k: usize, r: &mut impl Rng) -> Matrix {
    let n = x.rows();
    let mut centers = Matrix::zeros(k, x.cols());
    let first = r.random_range(0..n);
    centers.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            r.random_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(pick)));
        }
    }
    centers
}

fn nearest(centers: &Matrix, p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.rows() {
        let d = sq_dist(p, centers.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Independent k-means++ starts; the run with the lowest final WCSS wins.
pub const KMEANS_RESTARTS: u64 = 10;

/// Lloyd's algorithm with k-means++ seeding, restarted
/// [`KMEANS_RESTARTS`] times. An emptied cluster is moved to the point
/// farthest from its current center.
pub fn kmeans(x: &Matrix, k: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::contract(format!("k = {k} must be in 1..={n}")));
    }
    let mut best: Option<KMeans> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut r = rng::stream(seed, rng::PURPOSE_EVAL, restart << 32);
        let run = lloyd(x, k, &mut r, max_iter);
        if best.as_ref().map_or(true, |b| run.wcss.last() < b.wcss.last()) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd(x: &Matrix, k: usize, r: &mut impl Rng, max_iter: usize) -> KMeans {
    let n = x.rows();
    let mut centers = seed_centers(x, k, r);
    let mut assignments: Vec<usize> = (0..n).map(|i| nearest(&centers, x.row(i)).0).collect();
    let mut wcss = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter.max(1) {
        let mut sums = Matrix::zeros(k, x.cols());
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums.row_mut(a).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[assignments[i]] > 1)
                    .map(|i| (i, sq_dist(x.row(i), centers.row(assignments[i]))))
                    .fold(None, |best: Option<(usize, f64)>, cur| match best {
                        Some(b) if b.1 >= cur.1 => Some(b),
                        _ => Some(cur),
                    });
                if let Some((i, _)) = far {
                    counts[assignments[i]] -= 1;
                    counts[c] = 1;
                    assignments[i] = c;
                    centers.row_mut(c).copy_from_slice(x.row(i));
                }
            }
        }
        let mut changed = false;
        let mut total = 0.0;
        for i in 0..n {
            let (c, d) = nearest(&centers, x.row(i));
            let cur = sq_dist(x.row(i), centers.row(assignments[i]));
            if c != assignments[i] && d < cur {
                assignments[i] = c;
                changed = true;
                total += d;
            } else {
                total += cur;
            }
        }
        wcss.push(total);
        if !changed {
            converged = true;
            break;
        }
    }
    KMeans { assignments, centers, wcss, converged }
}

fn dense_ids(v: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let ids = v
        .iter()
        .map(|x| {
            let next = map.len();
            *map.entry(*x).or_insert(next)
        })
        .collect();
    (ids, map.len())
}

fn contingency(a: &[usize], b: &[usize]) -> Result<(Vec<Vec<usize>>, usize, usize)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::contract(format!("label vectors of length {} and {}", a.len(), b.len())));
    }
    let (a, na) = dense_ids(a);
    let (b, nb) = dense_ids(b);
    let mut t = vec![vec![0usize; nb]; na];
    for (&i, &j) in a.iter().zip(&b) {
        t[i][j] += 1;
    }
    Ok((t, na, nb))
}

/// Fraction of points whose cluster's majority label matches their own.
pub fn purity(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    let (t, _, _) = contingency(assignments, labels)?;
    let hits: usize = t.iter().map(|row| row.iter().copied().max().unwrap_or(0)).sum();
    Ok(hits as f64 / assignments.len() as f64)
}

/// `I(A; L) / sqrt(H(A) H(L))` with natural logarithms; 0 when either side
/// has a single class.
pub fn nmi(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    let (t, na, nb) = contingency(assignments, labels)?;
    let n = assignments.len() as f64;
    let ra: Vec<f64> = t.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let rb: Vec<f64> = (0..nb).map(|j| t.iter().map(|r| r[j]).sum::<usize>() as f64).collect();
    let entropy = |m: &[f64]| -> f64 {
        m.iter().filter(|&&c| c > 0.0).map(|&c| -(c / n) * libm::log(c / n)).sum()
    };
    let (ha, hb) = (entropy(&ra), entropy(&rb));
    if na < 2 || nb < 2 || ha <= 0.0 || hb <= 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for i in 0..na {
        for j in 0..nb {
            let c = t[i][j] as f64;
            if c > 0.0 {
                mi += (c / n) * libm::log(c * n / (ra[i] * rb[j]));
            }
        }
    }
    Ok((mi / libm::sqrt(ha * hb)).clamp(0.0, 1.0))
}
