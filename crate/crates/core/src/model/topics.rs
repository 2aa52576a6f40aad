use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::Space;
use crate::grad::tape_softmax_cols;
use crate::matrix::Matrix;

/// Unconstrained tangent parameters of all embeddings: `words` is V×D and
/// `topics[l]` is K_{l+1}×D.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub words: Matrix,
    pub topics: Vec<Matrix>,
}

impl EmbeddingSet {
    /// Rows mapped onto the manifold through the exponential map at the
    /// origin.
    pub fn mapped(m: &Matrix, space: Space) -> Matrix {
        let amb = space.ambient_dim(m.cols());
        let mut out = Matrix::zeros(m.rows(), amb);
        for i in 0..m.rows() {
            space.expmap0_raw(m.row(i), out.row_mut(i));
        }
        out
    }

    /// Mapped points of layer `l` (0 = words).
    pub fn points(&self, l: usize, space: Space) -> Matrix {
        if l == 0 {
            Self::mapped(&self.words, space)
        } else {
            Self::mapped(&self.topics[l - 1], space)
        }
    }
}

/// Column-wise softmax of a score matrix.
pub fn phi_from_scores(scores: &Matrix) -> Matrix {
    tape_softmax_cols(scores)
}

/// Φ⁽ˡ⁾ (K_{l−1}×K_l, K₀ = V) with entries ∝ exp(S(lower_i, upper_j)),
/// normalized down each column.
pub fn compute_phi(level: usize, emb: &EmbeddingSet, space: Space) -> Result<Matrix> {
    if level == 0 || level > emb.topics.len() {
        return Err(Error::contract(format!(
            "layer {level} out of range 1..={}",
            emb.topics.len()
        )));
    }
    let lower = emb.points(level - 1, space);
    let upper = emb.points(level, space);
    let scores = Matrix::from_fn(lower.rows(), upper.rows(), |i, j| space.score_raw(lower.row(i), upper.row(j)));
    Ok(phi_from_scores(&scores))
}

/// `Φ⁽¹⁾Φ⁽²⁾…Φ⁽ˡ⁾`: column j is topic j of layer `level` as a distribution
/// over the vocabulary.
pub fn topic_word_matrix(phis: &[Matrix], level: usize) -> Result<Matrix> {
    if level == 0 || level > phis.len() {
        return Err(Error::contract(format!("layer {level} out of range 1..={}", phis.len())));
    }
    let mut acc = phis[0].clone();
    for phi in &phis[1..level] {
        if acc.cols() != phi.rows() {
            return Err(Error::contract("Φ shapes do not chain"));
        }
        acc = acc.matmul(phi);
    }
    Ok(acc)
}

pub fn topic_word_distribution(phis: &[Matrix], level: usize, topic: usize) -> Result<Vec<f64>> {
    let m = topic_word_matrix(phis, level)?;
    if topic >= m.cols() {
        return Err(Error::contract(format!(
            "topic {topic} out of range for layer {level} with {} topics",
            m.cols()
        )));
    }
    Ok(m.column(topic))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_softmax_example() {
        let s = Matrix::from_rows(&[&[0.0, libm::log(3.0)], &[0.0, 0.0]]).unwrap();
        let phi = phi_from_scores(&s);
        assert!((phi.get(0, 1) - 0.75).abs() < 1e-15);
        assert!((phi.get(1, 1) - 0.25).abs() < 1e-15);
        assert!((phi.get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn equal_scores_give_uniform_columns() {
        let emb = EmbeddingSet { words: Matrix::zeros(4, 3), topics: alloc::vec![Matrix::zeros(2, 3)] };
        let phi = compute_phi(1, &emb, Space::default()).unwrap();
        assert!(phi.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(compute_phi(2, &emb, Space::default()).is_err());
    }

    #[test]
    fn two_layer_product_by_hand() {
        let p1 = Matrix::from_rows(&[&[0.5, 0.1], &[0.5, 0.9]]).unwrap();
        let p2 = Matrix::from_rows(&[&[0.2], &[0.8]]).unwrap();
        let col = topic_word_distribution(&[p1.clone(), p2], 2, 0).unwrap();
        assert!((col[0] - (0.5 * 0.2 + 0.1 * 0.8)).abs() < 1e-15);
        assert!((col[1] - (0.5 * 0.2 + 0.9 * 0.8)).abs() < 1e-15);
        assert_eq!(topic_word_distribution(&[p1.clone()], 1, 1).unwrap(), p1.column(1));
        assert!(topic_word_distribution(&[p1], 1, 2).is_err());
    }
}
