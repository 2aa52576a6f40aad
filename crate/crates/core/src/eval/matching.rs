use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::TopicSet;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Minimum-cost assignment of every row to a distinct column (rows ≤ cols).
/// Returns the column chosen for each row.
pub fn hungarian(cost: &Matrix) -> Result<Vec<usize>> {
    let (n, m) = cost.shape();
    if n > m {
        return Err(Error::contract(format!("{n} rows cannot be matched to {m} columns")));
    }
    if !cost.all_finite() {
        return Err(Error::contract("assignment costs must be finite"));
    }
    // potentials over 1-based rows/columns; column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if owner[j] > 0 {
            out[owner[j] - 1] = j - 1;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TopicMatch {
    /// Learned topic matched to each reference topic.
    pub assignment: Vec<usize>,
    /// Shared fraction of the top words for each matched pair.
    pub overlaps: Vec<f64>,
    pub mean: f64,
}

/// Matches reference topics one-to-one to learned topics maximizing the
/// total top-`n` word overlap.
pub fn topic_overlap(reference: &TopicSet, learned: &TopicSet, n: usize) -> Result<TopicMatch> {
    if reference.is_empty() || reference.len() > learned.len() || n == 0 {
        return Err(Error::contract(format!(
            "cannot match {} reference topics to {} learned topics",
            reference.len(),
            learned.len()
        )));
    }
    let top = |s: &TopicSet, i: usize| -> Result<BTreeSet<usize>> {
        let w = s.words(i);
        if w.len() < n {
            return Err(Error::contract(format!("topic {i} has {} words, need {n}", w.len())));
        }
        Ok(w[..n].iter().copied().collect())
    };
    let a: Vec<BTreeSet<usize>> = (0..reference.len()).map(|i| top(reference, i)).collect::<Result<_>>()?;
    let b: Vec<BTreeSet<usize>> = (0..learned.len()).map(|i| top(learned, i)).collect::<Result<_>>()?;
    let shared = Matrix::from_fn(a.len(), b.len(), |i, j| a[i].intersection(&b[j]).count() as f64 / n as f64);
    let assignment = hungarian(&shared.map(|x| -x))?;
    let overlaps: Vec<f64> = assignment.iter().enumerate().map(|(i, &j)| shared.get(i, j)).collect();
    let mean = overlaps.iter().sum::<f64>() / overlaps.len() as f64;
    Ok(TopicMatch { assignment, overlaps, mean })
}
