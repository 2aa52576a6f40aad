//! Reverse-mode differentiation over a per-batch tape, named parameter
//! storage, Adam, and finite-difference checking.

mod adam;
mod check;
mod tape;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use adam::{Adam, AdamConfig};
pub use check::{compare_with_finite_differences, finite_diff_check, relative_error, FiniteDiffReport, ParamCheck};
pub use tape::{InfoNceTerm, Tape, Var};
pub(crate) use tape::softmax_cols_value as tape_softmax_cols;

/// Index of an entry in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    name: String,
    value: Matrix,
    trainable: bool,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    /// Buffers such as batch-norm running statistics are stored alongside
    /// parameters but never updated by the optimizer.
    pub fn trainable(&self) -> bool {
        self.trainable
    }
}

/// Named real arrays, kept in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Matrix, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::contract(format!("duplicate parameter name `{name}`")));
        }
        if !value.all_finite() {
            return Err(Error::contract(format!("parameter `{name}` has non-finite values")));
        }
        let id = self.entries.len();
        self.index.insert(name.into(), id);
        self.entries.push(Param { name: name.into(), value, trainable });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    /// Replaces a value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Matrix) -> Result<()> {
        let p = &mut self.entries[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::contract(format!(
                "shape mismatch for `{}`: {:?} vs {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        if !value.all_finite() {
            return Err(Error::contract(format!("parameter `{}` has non-finite values", p.name)));
        }
        p.value = value;
        Ok(())
    }

    pub(crate) fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn round_to_f32(&mut self) {
        for p in &mut self.entries {
            p.value.round_to_f32();
        }
    }
}

/// Gradients aligned one-to-one with the entries of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradMap {
    grads: Vec<Matrix>,
}

impl GradMap {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradMap {
            grads: store.entries.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }

    /// Adds `scale · other` into `self`.
    pub fn add_scaled(&mut self, other: &GradMap, scale: f64) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += scale * y;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        let s: f64 = self.grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum();
        libm::sqrt(s)
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.global_norm();
        if n > max_norm && n.is_finite() {
            let f = max_norm / n;
            for g in &mut self.grads {
                g.scale_assign(f);
            }
        }
        n
    }

    /// Fails with the name of the first parameter whose gradient is not
    /// finite.
    pub fn check_finite(&self, store: &ParamStore, step: u64) -> Result<()> {
        for (i, g) in self.grads.iter().enumerate() {
            if !g.all_finite() {
                return Err(Error::NonFinite { name: store.entries[i].name.clone(), step });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.insert("a", Matrix::zeros(2, 2), true).unwrap();
        assert!(s.insert("a", Matrix::zeros(1, 1), true).is_err());
        assert!(s.insert("b", Matrix::scalar(f64::NAN), true).is_err());
    }

    #[test]
    fn set_keeps_shape() {
        let mut s = ParamStore::new();
        let id = s.insert("a", Matrix::zeros(2, 2), true).unwrap();
        assert!(s.set(id, Matrix::zeros(2, 3)).is_err());
        s.set(id, Matrix::filled(2, 2, 1.0)).unwrap();
        assert_eq!(s.get(id).sum(), 4.0);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut s = ParamStore::new();
        let id = s.insert("a", Matrix::zeros(1, 2), true).unwrap();
        let mut g = GradMap::zeros_like(&s);
        g.get_mut(id).data_mut().copy_from_slice(&[30.0, 40.0]);
        assert_eq!(g.clip_global_norm(10.0), 50.0);
        assert!((g.global_norm() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = ParamStore::new();
        s.insert("a", Matrix::zeros(1, 1), true).unwrap();
        let id = s.insert("enc.w", Matrix::zeros(1, 1), true).unwrap();
        let mut g = GradMap::zeros_like(&s);
        g.get_mut(id).data_mut()[0] = f64::INFINITY;
        match g.check_finite(&s, 7) {
            Err(Error::NonFinite { name, step }) => {
                assert_eq!(name, "enc.w");
                assert_eq!(step, 7);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
