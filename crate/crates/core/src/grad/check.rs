use alloc::string::String;
use alloc::vec::Vec;

use super::{GradMap, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteDiffReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl FiniteDiffReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }
}

/// `|a − n| / max(1e−8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of `build` against central differences with
/// step `h`, perturbing every trainable scalar in turn. `build` must be
/// deterministic (fixed noise).
pub fn finite_diff_check(
    store: &ParamStore,
    build: impl Fn(&mut Tape, &ParamStore) -> Var,
    h: f64,
    tolerance: f64,
) -> FiniteDiffReport {
    let mut tape = Tape::new();
    let root = build(&mut tape, store);
    let analytic = tape.backward(root, store);
    compare_with_finite_differences(store, &analytic, build, h, tolerance)
}

/// As [`finite_diff_check`] but against a caller-supplied gradient.
pub fn compare_with_finite_differences(
    store: &ParamStore,
    analytic: &GradMap,
    build: impl Fn(&mut Tape, &ParamStore) -> Var,
    h: f64,
    tolerance: f64,
) -> FiniteDiffReport {
    let eval = |s: &ParamStore| {
        let mut tape = Tape::new();
        let root = build(&mut tape, s);
        tape.scalar(root)
    };
    let mut work = store.clone();
    let mut params = Vec::new();
    for id in store.ids() {
        if !store.param(id).trainable() {
            continue;
        }
        let mut worst = (0.0, 0);
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + h;
            let up = eval(&work);
            work.value_mut(id).data_mut()[i] = orig - h;
            let down = eval(&work);
            work.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic.get(id).data()[i], numeric);
            if !(err <= worst.0) {
                worst = (err, i);
            }
        }
        params.push(ParamCheck { name: store.name(id).into(), max_rel_err: worst.0, worst_index: worst.1 });
    }
    let passed = params.iter().all(|p| p.max_rel_err <= tolerance);
    FiniteDiffReport { params, tolerance, passed }
}
