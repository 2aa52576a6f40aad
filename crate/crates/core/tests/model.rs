//! Model-level checks: ELBO gradients, encoder closed forms and Monte Carlo
//! oracles for the ELBO estimators.

use hypertopic_core::geometry::{Curvature, Space};
use hypertopic_core::grad::{finite_diff_check, ParamStore, Tape};
use hypertopic_core::matrix::{Matrix, SparseRows};
use hypertopic_core::model::{Mode, Model, ModelConfig};
use hypertopic_core::rng;
use rand_distr::{Distribution, Normal, Weibull};
use statrs::function::gamma::ln_gamma;

fn toy_docs() -> SparseRows {
    let mut x = SparseRows::new(5);
    x.push_row([(0, 2.0), (3, 1.0)]);
    x.push_row([(1, 1.0), (2, 4.0), (4, 1.0)]);
    x.push_row([(0, 1.0), (4, 3.0)]);
    x
}

fn small_config(mode: Mode, topics: Vec<usize>, space: Space) -> ModelConfig {
    let mut c = ModelConfig::new(mode, topics);
    c.dim = 2;
    c.hidden = 3;
    c.space = space;
    c
}

/// Spreads the embeddings out so the softmax over distances is not flat.
fn spread_embeddings(model: &Model, store: &mut ParamStore, seed: u64) {
    let mut r = rng::stream(seed, 77, 0);
    let n = Normal::new(0.0, 0.6).unwrap();
    for id in std::iter::once(model.word_param()).chain(model.topic_params().iter().copied()) {
        let (rows, cols) = store.get(id).shape();
        store.set(id, Matrix::from_fn(rows, cols, |_, _| n.sample(&mut r))).unwrap();
    }
}

fn elbo_gradient_check(mode: Mode, topics: Vec<usize>, space: Space) {
    let config = small_config(mode, topics, space);
    let (model, mut store) = Model::new(config, 5, 3).unwrap();
    spread_embeddings(&model, &mut store, 4);
    // Zero biases behind an all-zero ReLU row sit exactly on the kink.
    let mut r = rng::stream(4, 78, 0);
    let n = Normal::new(0.0, 0.3).unwrap();
    for name in model.param_names().into_iter().filter(|n| n.ends_with(".b")) {
        let id = store.id(&name).unwrap();
        let (rows, cols) = store.get(id).shape();
        store.set(id, Matrix::from_fn(rows, cols, |_, _| n.sample(&mut r))).unwrap();
    }
    assert!(store.num_scalars() <= 200, "{} scalars", store.num_scalars());
    let x = toy_docs();
    let report = finite_diff_check(
        &store,
        |tape, s| {
            let mut r = rng::stream(11, 3, 0);
            model.forward(tape, s, &x, &mut r, true).neg_elbo
        },
        1e-5,
        1e-4,
    );
    assert!(report.passed, "{report:?}");
}

#[test]
fn hierarchical_elbo_gradients_match_finite_differences() {
    elbo_gradient_check(Mode::Hierarchical, vec![2], Space::Poincare(Curvature::UNIT));
    elbo_gradient_check(Mode::Hierarchical, vec![2, 2], Space::Poincare(Curvature::UNIT));
    elbo_gradient_check(Mode::Hierarchical, vec![2, 1], Space::Lorentz(Curvature::UNIT));
    elbo_gradient_check(Mode::Hierarchical, vec![2], Space::Euclidean);
}

#[test]
fn flat_elbo_gradients_match_finite_differences() {
    elbo_gradient_check(Mode::Flat, vec![2], Space::Poincare(Curvature::UNIT));
    elbo_gradient_check(Mode::Flat, vec![2], Space::Lorentz(Curvature::new(-0.5).unwrap()));
    elbo_gradient_check(Mode::Flat, vec![2], Space::Euclidean);
}

fn zero_encoder(model: &Model, store: &mut ParamStore) {
    let names: Vec<String> = model.param_names().into_iter().filter(|n| n.starts_with("enc.")).collect();
    for n in names {
        if n.ends_with(".bn.gamma") || n.ends_with(".bn.var") {
            continue;
        }
        let id = store.id(&n).unwrap();
        let (r, c) = store.get(id).shape();
        store.set(id, Matrix::zeros(r, c)).unwrap();
    }
}

#[test]
fn zero_encoder_gives_ln2_shapes_and_scales() {
    let config = small_config(Mode::Hierarchical, vec![3, 2], Space::Poincare(Curvature::UNIT));
    let (model, mut store) = Model::new(config, 5, 0).unwrap();
    zero_encoder(&model, &mut store);
    let state = model.encode(&store, &toy_docs(), None);
    for l in 0..2 {
        assert_eq!(state.k[l].shape(), (3, [3, 2][l]));
        for &v in state.k[l].data().iter().chain(state.t[l].data()) {
            assert!((v - std::f64::consts::LN_2).abs() < 1e-15, "{v}");
        }
    }
}

#[test]
fn encoder_outputs_are_positive_with_expected_shapes() {
    let config = small_config(Mode::Hierarchical, vec![4, 3, 2], Space::Lorentz(Curvature::UNIT));
    let (model, store) = Model::new(config, 5, 9).unwrap();
    let mut r = rng::stream(1, 3, 0);
    let state = model.encode(&store, &toy_docs(), Some(&mut r));
    for (l, &k) in [4, 3, 2].iter().enumerate() {
        assert_eq!(state.k[l].shape(), (3, k));
        assert_eq!(state.t[l].shape(), (3, k));
        assert_eq!(state.theta[l].shape(), (3, k));
        assert!(state.k[l].data().iter().all(|&v| v > 0.0 && v.is_finite()));
        assert!(state.t[l].data().iter().all(|&v| v > 0.0 && v.is_finite()));
        assert!(state.theta[l].data().iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn phi_columns_are_distributions() {
    let config = small_config(Mode::Hierarchical, vec![4, 3, 2], Space::Poincare(Curvature::UNIT));
    let (model, mut store) = Model::new(config, 5, 2).unwrap();
    spread_embeddings(&model, &mut store, 8);
    let phis = model.phis(&store);
    assert_eq!(phis[0].shape(), (5, 4));
    assert_eq!(phis[1].shape(), (4, 3));
    assert_eq!(phis[2].shape(), (3, 2));
    for phi in &phis {
        for j in 0..phi.cols() {
            assert!((phi.column(j).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

/// Single-layer hierarchical model: the posterior (k, t) is a
/// deterministic function of the document, so the ELBO can be estimated by
/// drawing θ directly from q.
#[test]
fn hierarchical_elbo_matches_monte_carlo_oracle() {
    let mut config = small_config(Mode::Hierarchical, vec![2], Space::Poincare(Curvature::UNIT));
    config.gamma = vec![1.5, 0.8];
    config.e = vec![2.0];
    let (model, mut store) = Model::new(config.clone(), 3, 5).unwrap();
    let mut r = rng::stream(5, 77, 1);
    let n = Normal::new(0.0, 0.7).unwrap();
    for id in std::iter::once(model.word_param()).chain(model.topic_params().iter().copied()) {
        let (rows, cols) = store.get(id).shape();
        store.set(id, Matrix::from_fn(rows, cols, |_, _| n.sample(&mut r))).unwrap();
    }
    let mut x = SparseRows::new(3);
    x.push_row([(0, 3.0), (2, 1.0)]);

    let state = model.encode(&store, &x, None);
    let phi = &model.phis(&store)[0];
    let (k, t) = (state.k[0].row(0).to_vec(), state.t[0].row(0).to_vec());
    let rate = 1.0 / config.e[0];
    let draws = 100_000;
    let mut oracle = Welford::default();
    let mut draw_rng = rng::stream(123, 9, 0);
    let dists: Vec<Weibull<f64>> = (0..2).map(|j| Weibull::new(t[j], k[j]).unwrap()).collect();
    for _ in 0..draws {
        let theta: Vec<f64> = dists.iter().map(|d| d.sample(&mut draw_rng)).collect();
        let mut v = 0.0;
        for (w, cnt) in [(0usize, 3.0), (1, 0.0), (2, 1.0)] {
            let rate_w = (phi.get(w, 0) * theta[0] + phi.get(w, 1) * theta[1]).max(1e-10);
            v += cnt * rate_w.ln() - rate_w - ln_gamma(cnt + 1.0);
        }
        for j in 0..2 {
            let a = config.gamma[j];
            let th = theta[j];
            let log_prior = a * rate.ln() - ln_gamma(a) + (a - 1.0) * th.ln() - rate * th;
            let z = th / t[j];
            let log_q = (k[j] / t[j]).ln() + (k[j] - 1.0) * z.ln() - z.powf(k[j]);
            v += log_prior - log_q;
        }
        oracle.push(v);
    }

    let mut estimate = Welford::default();
    let mut noise = rng::stream(77, 3, 0);
    for _ in 0..20_000 {
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &store, &x, &mut noise, false);
        estimate.push(-tape.scalar(f.neg_elbo));
    }
    let se = (oracle.var() / oracle.n + estimate.var() / estimate.n).sqrt();
    assert!(
        (oracle.mean - estimate.mean).abs() < 3.0 * se,
        "oracle {} ± {}, model {} ± {}",
        oracle.mean,
        (oracle.var() / oracle.n).sqrt(),
        estimate.mean,
        (estimate.var() / estimate.n).sqrt()
    );
}

#[test]
fn flat_elbo_matches_monte_carlo_oracle() {
    let config = small_config(Mode::Flat, vec![3], Space::Lorentz(Curvature::UNIT));
    let (model, mut store) = Model::new(config, 4, 6).unwrap();
    spread_embeddings(&model, &mut store, 12);
    let mut x = SparseRows::new(4);
    x.push_row([(1, 2.0), (3, 2.0)]);
    let state = model.encode(&store, &x, None);
    let mu = state.k[0].row(0).to_vec();
    let sd: Vec<f64> = state.t[0].row(0).iter().map(|lv| (0.5 * lv).exp()).collect();
    let beta = &model.phis(&store)[0];

    let mut oracle = Welford::default();
    let mut r = rng::stream(321, 9, 0);
    let std = Normal::new(0.0, 1.0).unwrap();
    for _ in 0..100_000 {
        let z: Vec<f64> = (0..3).map(|j| mu[j] + sd[j] * std.sample(&mut r)).collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let theta: Vec<f64> = e.iter().map(|v| v / s).collect();
        let mut v = ln_gamma(5.0) - 2.0 * ln_gamma(3.0);
        for w in [1usize, 3] {
            let p: f64 = (0..3).map(|j| beta.get(w, j) * theta[j]).sum();
            v += 2.0 * p.ln();
        }
        for j in 0..3 {
            let eps = (z[j] - mu[j]) / sd[j];
            let log_q = -0.5 * eps * eps - sd[j].ln();
            let log_p = -0.5 * z[j] * z[j];
            v += log_p - log_q;
        }
        oracle.push(v);
    }
    let mut estimate = Welford::default();
    let mut noise = rng::stream(78, 3, 0);
    for _ in 0..20_000 {
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &store, &x, &mut noise, false);
        estimate.push(-tape.scalar(f.neg_elbo));
    }
    let se = (oracle.var() / oracle.n + estimate.var() / estimate.n).sqrt();
    assert!((oracle.mean - estimate.mean).abs() < 3.0 * se, "{} vs {}", oracle.mean, estimate.mean);
}

#[test]
fn flat_elbo_without_kl_is_the_likelihood_alone() {
    let config = small_config(Mode::Flat, vec![2], Space::Poincare(Curvature::UNIT));
    let (model, mut store) = Model::new(config, 5, 1).unwrap();
    for head in ["enc.mu", "enc.logvar"] {
        for part in ["w", "b"] {
            let id = store.id(&format!("{head}.{part}")).unwrap();
            let (r, c) = store.get(id).shape();
            store.set(id, Matrix::zeros(r, c)).unwrap();
        }
    }
    let mut tape = Tape::new();
    let mut r = rng::stream(0, 3, 0);
    let f = model.forward(&mut tape, &store, &toy_docs(), &mut r, true);
    assert_eq!(f.kl, 0.0);
    assert_eq!(tape.scalar(f.neg_elbo), -f.log_lik);
}

#[test]
fn equal_scores_give_uniform_topics() {
    let config = small_config(Mode::Flat, vec![3], Space::Poincare(Curvature::UNIT));
    let (model, mut store) = Model::new(config, 5, 1).unwrap();
    for id in std::iter::once(model.word_param()).chain(model.topic_params().iter().copied()) {
        let (r, c) = store.get(id).shape();
        store.set(id, Matrix::zeros(r, c)).unwrap();
    }
    for &v in model.phis(&store)[0].data() {
        assert!((v - 0.2).abs() < 1e-15);
    }
}

#[test]
fn forward_is_deterministic() {
    let config = small_config(Mode::Hierarchical, vec![3, 2], Space::Lorentz(Curvature::UNIT));
    let (model, store) = Model::new(config, 5, 4).unwrap();
    let run = || {
        let mut tape = Tape::new();
        let mut r = rng::stream(8, 3, 2);
        let f = model.forward(&mut tape, &store, &toy_docs(), &mut r, true);
        let g = tape.backward(f.neg_elbo, &store);
        let mut bits = vec![tape.scalar(f.neg_elbo).to_bits()];
        for (_, m) in g.iter() {
            bits.extend(m.data().iter().map(|v| v.to_bits()));
        }
        bits
    };
    assert_eq!(run(), run());
}

#[test]
fn model_rejects_bad_configurations() {
    let mut c = small_config(Mode::Flat, vec![2, 2], Space::Euclidean);
    c.reset_priors();
    assert!(Model::new(c, 5, 0).is_err());
    let mut c = small_config(Mode::Hierarchical, vec![2], Space::Euclidean);
    c.tau = 0.0;
    assert!(Model::new(c, 5, 0).is_err());
    let c = small_config(Mode::Hierarchical, vec![2, 0], Space::Euclidean);
    assert!(Model::new(c, 5, 0).is_err());
}

#[test]
fn bind_round_trips_the_layout() {
    let config = small_config(Mode::Hierarchical, vec![3, 2], Space::Poincare(Curvature::UNIT));
    let (model, store) = Model::new(config.clone(), 5, 0).unwrap();
    let again = Model::bind(config.clone(), 5, &store).unwrap();
    assert_eq!(model.param_names(), again.param_names());
    assert!(Model::bind(config, 6, &store).is_err());
}

#[derive(Default)]
struct Welford {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn var(&self) -> f64 {
        self.m2 / (self.n - 1.0)
    }
}
