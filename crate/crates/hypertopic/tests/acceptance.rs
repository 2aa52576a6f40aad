//! Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Criterion 7 needs a 20 Newsgroups corpus directory at
//! `$HYPERTOPIC_DATA/20ng` and is skipped without one.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use hypertopic::io::{load_corpus, DATA_ENV};
use hypertopic::synthetic::{generate, PlantedConfig};
use hypertopic_core::corpus::BowCorpus;
use hypertopic_core::eval::*;
use hypertopic_core::geometry::*;
use hypertopic_core::grad::{finite_diff_check, InfoNceTerm, ParamStore, Tape, Var};
use hypertopic_core::knowledge::NodeTable;
use hypertopic_core::matrix::{Matrix, SparseRows};
use hypertopic_core::model::*;
use hypertopic_core::rng;
use hypertopic_core::taxonomy::ConceptTaxonomy;
use hypertopic_core::trainer::{TrainConfig, TrainRun};
use rand::Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn main() {
    let mut failed = 0;
    let mut baseline = Vec::new();
    for n in 1..=8 {
        let start = Instant::now();
        let (name, outcome) = match n {
            1 => ("geometry suite", geometry()),
            2 => ("gradient suite", gradients()),
            3 => ("distribution suite", distributions()),
            4 => {
                let runs = planted_runs(0.0);
                let out = recovery_verdict(&runs);
                baseline = runs;
                ("planted-hierarchy recovery", out)
            }
            5 => ("knowledge-injection effect", knowledge_effect(&baseline, &planted_runs(5.0))),
            6 => ("metric suite", metrics()),
            7 => ("desk-scale 20NG smoke run", newsgroups()),
            _ => ("reproducibility", reproducibility()),
        };
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {n} ({name}): {tag} [{secs:.1} s] {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- 1

fn lorentz_point(c: Curvature, spatial: &[f64]) -> HyperPoint {
    let mut v = vec![0.0];
    v.extend_from_slice(spatial);
    project_into_domain(&v, Space::Lorentz(c)).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn geometry() -> Outcome {
    let mut r = rng::stream(11, 500, 0);
    let (mut iso, mut round, mut log_norm, mut tri, mut selfd) = (0f64, 0f64, 0f64, f64::INFINITY, 0f64);
    let mut asym = 0usize;
    for i in 0..1000 {
        let c = Curvature::new(if i % 2 == 0 { -1.0 } else { -r.random_range(0.2..3.0) }).unwrap();
        let dim = r.random_range(2..=5);
        let mut pt = || lorentz_point(c, &(0..dim).map(|_| r.random_range(-1.5..1.5)).collect::<Vec<_>>());
        let (x, y, z) = (pt(), pt(), pt());
        let (px, py, pz) = (to_poincare(&x).unwrap(), to_poincare(&y).unwrap(), to_poincare(&z).unwrap());
        let dl = distance(&x, &y).unwrap();
        iso = iso.max((dl - distance(&px, &py).unwrap()).abs());
        for (a, b, e) in [(&x, &y, &z), (&px, &py, &pz)] {
            let v = log_map(a, b).unwrap();
            round = round.max(max_abs_diff(exp_map(a, &v).unwrap().coords(), b.coords()));
            log_norm = log_norm.max((v.riemannian_norm() - distance(a, b).unwrap()).abs());
            let d = distance(a, b).unwrap();
            if d != distance(b, a).unwrap() || d < 0.0 {
                asym += 1;
            }
            tri = tri.min(distance(a, e).unwrap() + distance(e, b).unwrap() - d);
            selfd = selfd.max(distance(a, a).unwrap());
        }
    }
    let space = Space::Poincare(Curvature::UNIT);
    let ln4 = distance(&HyperPoint::origin(space, 2), &HyperPoint::new(space, vec![0.6, 0.0]).unwrap()).unwrap();
    let ln4_err = (ln4 - 4f64.ln()).abs();
    let ok = iso < 1e-6 && round < 1e-6 && log_norm < 1e-6 && asym == 0 && tri > -1e-7 && selfd < 1e-9 && ln4_err < 1e-9;
    verdict(
        ok,
        format!(
            "isometry {iso:.1e}, exp∘log {round:.1e}, |log|−d {log_norm:.1e}, asymmetric {asym}, \
             triangle slack {tri:.1e}, d(x,x) {selfd:.1e}, |d(0,(0.6,0))−ln4| {ln4_err:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 2

fn random(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, 501, 0);
    Matrix::from_fn(rows, cols, |_, _| r.random_range(lo..hi))
}

fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> Var {
    let (r, c) = tape.value(v).shape();
    let w = tape.constant(random(r, c, -1.0, 1.0, seed));
    let p = tape.mul(v, w);
    tape.sum(p)
}

fn gradients() -> Outcome {
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, store: &ParamStore, build: &dyn Fn(&mut Tape, &ParamStore) -> Var| {
        assert!(store.num_scalars() <= 200);
        let rep = finite_diff_check(store, build, 1e-5, 1e-4);
        worst.push((name.to_owned(), rep.max_rel_err()));
    };

    let mut s = ParamStore::new();
    let th = s.insert("theta", random(3, 2, 0.2, 2.0, 1), true).unwrap();
    let ph = s.insert("phi", random(5, 2, 0.05, 0.5, 2), true).unwrap();
    let mut x = SparseRows::new(5);
    x.push_row([(0, 2.0), (3, 1.0)]);
    x.push_row([(1, 1.0), (2, 3.0), (4, 1.0)]);
    x.push_row([(0, 1.0)]);
    record("poisson", &s, &|t, s| {
        let (a, b) = (t.param(s, th), t.param(s, ph));
        let ll = t.count_log_lik(a, b, x.clone(), 1e-10, true);
        weighted_sum(t, ll, 3)
    });

    let mut s = ParamStore::new();
    let k = s.insert("k", random(2, 3, 0.5, 3.0, 4), true).unwrap();
    let sc = s.insert("t", random(2, 3, 0.3, 2.0, 5), true).unwrap();
    let al = s.insert("alpha", random(2, 3, 0.3, 2.0, 6), true).unwrap();
    for (i, rate) in [1.0 / std::f64::consts::E, 1.0, 2.5].into_iter().enumerate() {
        record(&format!("weibull-gamma kl (rate {rate:.2})"), &s, &|t, s| {
            let (a, b, c) = (t.param(s, k), t.param(s, sc), t.param(s, al));
            let kl = t.kl_weibull_gamma(a, b, c, rate);
            weighted_sum(t, kl, 7 + i as u64)
        });
    }
    let u = random(2, 3, 0.05, 0.95, 10);
    record("weibull reparameterization", &s, &|t, s| {
        let (a, b) = (t.param(s, k), t.param(s, sc));
        let z = t.weibull_sample(a, b, &u);
        weighted_sum(t, z, 11)
    });

    let mut s = ParamStore::new();
    let mu = s.insert("mu", random(3, 4, -1.0, 1.0, 12), true).unwrap();
    let lv = s.insert("logvar", random(3, 4, -1.0, 1.0, 13), true).unwrap();
    record("gaussian kl", &s, &|t, s| {
        let (a, b) = (t.param(s, mu), t.param(s, lv));
        let kl = t.gaussian_kl(a, b);
        weighted_sum(t, kl, 14)
    });

    let spaces = [
        Space::Poincare(Curvature::UNIT),
        Space::Lorentz(Curvature::UNIT),
        Space::Poincare(Curvature::new(-0.5).unwrap()),
        Space::Euclidean,
    ];
    for (i, space) in spaces.into_iter().enumerate() {
        let mut s = ParamStore::new();
        let e = s.insert("emb", random(5, 3, -0.7, 0.7, 20 + i as u64), true).unwrap();
        let terms = vec![
            InfoNceTerm { anchor: 0, positive: 1, negatives: vec![2, 3] },
            InfoNceTerm { anchor: 2, positive: 4, negatives: vec![0, 1, 3] },
        ];
        record(&format!("contrastive ({})", space_name(space)), &s, &|t, s| {
            let a = t.param(s, e);
            let p = t.expmap0(a, space);
            t.info_nce(p, terms.clone(), 0.7, space)
        });
        let mut s = ParamStore::new();
        let a = s.insert("a", random(1, 4, -1.0, 1.0, 30 + i as u64), true).unwrap();
        let b = s.insert("b", random(1, 4, -1.0, 1.0, 40 + i as u64), true).unwrap();
        record(&format!("distance through exp map ({})", space_name(space)), &s, &|t, s| {
            let (pa, pb) = (t.param(s, a), t.param(s, b));
            let (ma, mb) = (t.expmap0(pa, space), t.expmap0(pb, space));
            let sc = t.pairwise_scores(ma, mb, space);
            t.sum(sc)
        });
    }

    for (mode, topics) in [(Mode::Hierarchical, vec![2, 2]), (Mode::Flat, vec![2])] {
        let mut c = ModelConfig::new(mode, topics);
        c.dim = 2;
        c.hidden = 3;
        let (model, mut store) = Model::new(c, 5, 3).unwrap();
        // Spread embeddings so Φ is not flat, and move biases off the ReLU kink.
        let mut r = rng::stream(4, 502, 0);
        let emb: Vec<_> = std::iter::once(model.word_param()).chain(model.topic_params().iter().copied()).collect();
        for id in store.ids().collect::<Vec<_>>() {
            let spread = if emb.contains(&id) {
                0.6
            } else if store.name(id).ends_with(".b") {
                0.3
            } else {
                continue;
            };
            let (rows, cols) = store.get(id).shape();
            store.set(id, Matrix::from_fn(rows, cols, |_, _| spread * rng::standard_normal(&mut r))).unwrap();
        }
        record(&format!("{mode:?} -elbo"), &store, &|t, s| {
            let mut r = rng::stream(11, rng::PURPOSE_STEP, 0);
            model.forward(t, s, &x, &mut r, true).neg_elbo
        });
    }

    let failures: Vec<String> =
        worst.iter().filter(|(_, e)| !(*e <= 1e-4)).map(|(n, e)| format!("{n} {e:.1e}")).collect();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    if failures.is_empty() {
        Outcome::Pass(format!("{} checks, worst relative error {max:.1e}", worst.len()))
    } else {
        Outcome::Fail(format!("above 1e-4: {}", failures.join(", ")))
    }
}

fn space_name(s: Space) -> &'static str {
    match s {
        Space::Poincare(_) => "poincare",
        Space::Lorentz(_) => "lorentz",
        Space::Euclidean => "euclidean",
    }
}

// ---------------------------------------------------------------- 3

fn weibull_draws(k: f64, t: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, 503, 0);
    (0..n).map(|_| sample_weibull(k, t, rng::open_unit(&mut r))).collect()
}

fn distributions() -> Outcome {
    let mut ks_max = 0f64;
    for (i, &(k, t)) in [(1.0, 1.0), (0.5, 2.0), (3.0, 0.7)].iter().enumerate() {
        let mut xs = weibull_draws(k, t, 100_000, i as u64);
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        for (j, &x) in xs.iter().enumerate() {
            let f = weibull_cdf(k, t, x);
            ks_max = ks_max.max((f - j as f64 / n).abs()).max((f - (j + 1) as f64 / n).abs());
        }
    }
    let mut r = rng::stream(9, 504, 0);
    let mut outside = 0;
    let mut worst_z = 0f64;
    for case in 0..50 {
        let (k, t) = (r.random_range(0.5..3.0), r.random_range(0.3..2.0));
        let (alpha, rate) = (r.random_range(0.3..3.0), r.random_range(0.3..3.0));
        let n = 1_000_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for x in weibull_draws(k, t, n, 100 + case) {
            let v = weibull_log_pdf(k, t, x) - gamma_log_pdf(alpha, rate, x);
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        let z = (kl_weibull_gamma(k, t, alpha, rate) - mean).abs() / se;
        worst_z = worst_z.max(z);
        if z >= 3.0 {
            outside += 1;
        }
    }
    let zero = kl_weibull_gamma(1.0, 1.0, 1.0, 1.0);
    verdict(
        ks_max < 0.01 && outside == 0 && zero == 0.0,
        format!("KS {ks_max:.4}, KL vs MC worst {worst_z:.2} SE ({outside}/50 beyond 3 SE), KL(1,1,1,1) = {zero}"),
    )
}

// ---------------------------------------------------------------- 4, 5

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct PlantedRun {
    overlap: f64,
    separation: f64,
    max_col_err: f64,
}

fn planted_config(lambda: f64, seed: u64) -> TrainConfig {
    let mut m = ModelConfig::new(Mode::Hierarchical, vec![9, 3]);
    m.lambda = lambda;
    let mut c = TrainConfig::new(m);
    c.epochs = 100;
    c.seed = seed;
    c
}

fn train_planted(
    corpus: &BowCorpus,
    tax: &ConceptTaxonomy,
    reference: &TopicSet,
    lambda: f64,
    seed: u64,
) -> PlantedRun {
    let taxonomy = (lambda > 0.0).then_some(tax);
    let mut run = TrainRun::new(planted_config(lambda, seed), corpus.vocab().len(), taxonomy).unwrap();
    let mut max_col_err = 0f64;
    while !run.is_finished() {
        run.run_epoch(corpus, |_| {}).unwrap();
        for phi in run.model().phis(run.store()) {
            for j in 0..phi.cols() {
                max_col_err = max_col_err.max((phi.column(j).iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    let phis = run.model().phis(run.store());
    let learned = TopicSet::from_topic_word(&phis[0], 10);
    let overlap = topic_overlap(reference, &learned, 10).unwrap().mean;
    let space = run.config().model.space;
    let table = NodeTable::new(tax, &[9, 3]).unwrap();
    let separation = table.separation(&table.assemble_points(&run.model().embedding_set(run.store()), space), space);
    PlantedRun { overlap, separation, max_col_err }
}

/// One run per seed on the default planted corpus. Runs with λ = 0 train
/// without the taxonomy; it is still used to measure separation.
fn planted_runs(lambda: f64) -> Vec<PlantedRun> {
    let planted = generate(&PlantedConfig::default()).unwrap();
    let reference = planted.child_topics(10);
    SEEDS.iter().map(|&seed| train_planted(&planted.corpus, &planted.taxonomy, &reference, lambda, seed)).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn overlaps(runs: &[PlantedRun]) -> Vec<f64> {
    runs.iter().map(|r| r.overlap).collect()
}

fn separations(runs: &[PlantedRun]) -> Vec<f64> {
    runs.iter().map(|r| r.separation).collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
}

fn recovery_verdict(runs: &[PlantedRun]) -> Outcome {
    let o = overlaps(runs);
    let m = median(o.clone());
    let col = runs.iter().map(|r| r.max_col_err).fold(0.0, f64::max);
    verdict(
        m >= 0.7 && col < 1e-9,
        format!("λ=0 overlaps [{}], median {m:.3}; max |Φ column sum − 1| {col:.1e}", fmt_list(&o)),
    )
}

fn knowledge_effect(baseline: &[PlantedRun], runs: &[PlantedRun]) -> Outcome {
    let (sep, base_sep) = (separations(runs), separations(baseline));
    let (m0, m5) = (median(overlaps(baseline)), median(overlaps(runs)));
    let ok = baseline.len() == SEEDS.len() && sep.iter().all(|&s| s >= 0.95) && m5 >= m0;
    verdict(
        ok,
        format!(
            "λ=5 separation [{}] (λ=0: [{}]); λ=5 overlaps [{}], median {m5:.3} vs λ=0 median {m0:.3}",
            fmt_list(&sep),
            fmt_list(&base_sep),
            fmt_list(&overlaps(runs))
        ),
    )
}

// ---------------------------------------------------------------- 6

fn doc(words: &[usize]) -> hypertopic_core::corpus::BowDocument {
    hypertopic_core::corpus::BowDocument::from_counts(words.iter().map(|&w| (w, 1)), None)
}

fn topic_set(topics: &[Vec<usize>], v: usize) -> TopicSet {
    TopicSet::new(topics.iter().map(|t| t.iter().map(|&w| (w, 1.0)).collect()).collect(), v).unwrap()
}

fn exhaustive_wcss(x: &Matrix, k: usize) -> f64 {
    let n = x.rows();
    let mut best = f64::INFINITY;
    for code in 0..k.pow(n as u32) {
        let assign: Vec<usize> = (0..n).map(|i| code / k.pow(i as u32) % k).collect();
        if (0..k).all(|c| assign.contains(&c)) {
            best = best.min(wcss(x, &assign, k));
        }
    }
    best
}

fn wcss(x: &Matrix, assign: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let m: Vec<usize> = (0..x.rows()).filter(|&i| assign[i] == c).collect();
        for j in 0..x.cols() {
            let mean = m.iter().map(|&i| x.get(i, j)).sum::<f64>() / m.len().max(1) as f64;
            total += m.iter().map(|&i| (x.get(i, j) - mean).powi(2)).sum::<f64>();
        }
    }
    total
}

fn metrics() -> Outcome {
    let mut bad: Vec<String> = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            bad.push(name.to_owned());
        }
    };

    let idx = DocIndex::new(&[doc(&[0, 1]), doc(&[0, 1]), doc(&[0, 2])], 4);
    check("npmi {ab,ab,ac} = 0", idx.npmi_pair(0, 1) == 0.0);
    check("npmi disjoint = -1", idx.npmi_pair(1, 2) == -1.0);
    let idx = DocIndex::new(&[doc(&[0, 1]), doc(&[2]), doc(&[0, 1]), doc(&[3])], 4);
    check("npmi always together = 1", (idx.npmi_pair(0, 1) - 1.0).abs() < 1e-15);

    let a: Vec<usize> = (0..25).collect();
    let b: Vec<usize> = (25..50).collect();
    check("td disjoint", topic_diversity(&topic_set(&[a.clone(), b], 100), 25).unwrap() == 1.0);
    check("td identical", topic_diversity(&topic_set(&[a.clone(), a], 100), 25).unwrap() == 0.5);
    let shared: Vec<Vec<usize>> =
        (0..3).map(|t| std::iter::once(0).chain((0..24).map(|i| 1 + 24 * t + i)).collect()).collect();
    check("td one shared word", topic_diversity(&topic_set(&shared, 100), 25).unwrap() == 73.0 / 75.0);
    check("top half", select_top_half(&[0.1, 0.3, 0.2, 0.0]) == vec![1, 2]);
    check("top half ties", select_top_half(&[0.5; 4]) == vec![0, 1]);
    check("top half ceiling", select_top_half(&[0.0; 5]).len() == 3);

    check("purity identical", purity(&[0, 1, 1, 2], &[0, 1, 1, 2]).unwrap() == 1.0);
    check("nmi identical", (nmi(&[0, 1, 1, 2], &[0, 1, 1, 2]).unwrap() - 1.0).abs() < 1e-15);
    check("nmi one cluster", nmi(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap() == 0.0);
    check("purity 4/6", (purity(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 1, 0]).unwrap() - 4.0 / 6.0).abs() < 1e-15);

    let four = Matrix::from_rows(&[&[0.0, 0.0], &[0.0, 1.0], &[10.0, 0.0], &[10.0, 1.0]]).unwrap();
    let km = kmeans(&four, 2, 0, 300).unwrap();
    let a = &km.assignments;
    check("kmeans 4 points", a[0] == a[1] && a[2] == a[3] && a[0] != a[2]);
    check("kmeans centers", (0..2).all(|c| km.centers.get(c, 1) == 0.5));
    check("kmeans k = n", *kmeans(&four, 4, 0, 300).unwrap().wcss.last().unwrap() == 0.0);
    check("kmeans determinism", kmeans(&four, 2, 7, 300).unwrap() == kmeans(&four, 2, 7, 300).unwrap());

    let mut r = rng::stream(21, 505, 0);
    let mut oracle_misses = 0;
    for case in 0..30 {
        let k = r.random_range(2..=3usize);
        let n = r.random_range(k + 1..=8usize);
        let centers: Vec<(f64, f64)> = (0..k).map(|c| (12.0 * c as f64, r.random_range(-20.0..20.0))).collect();
        let mut data = Vec::new();
        for i in 0..n {
            let (cx, cy) = centers[if i < k { i } else { r.random_range(0..k) }];
            data.extend([cx + r.random_range(-2.0..2.0), cy + r.random_range(-2.0..2.0)]);
        }
        let x = Matrix::from_vec(n, 2, data).unwrap();
        let km = kmeans(&x, k, case, 300).unwrap();
        let best = exhaustive_wcss(&x, k);
        if (wcss(&x, &km.assignments, k) - best).abs() > 1e-9 * best.max(1.0) {
            oracle_misses += 1;
        }
        if !km.wcss.windows(2).all(|w| w[1] <= w[0] + 1e-12) {
            bad.push(format!("wcss increased in case {case}"));
        }
    }

    let n = 1000;
    let feats = |r: &mut rng::StreamRng| Matrix::from_fn(n, 10, |_, _| rng::standard_normal(r));
    let (train, test) = (feats(&mut r), feats(&mut r));
    let shuffled = |r: &mut rng::StreamRng| rng::permutation(n, r).into_iter().map(|p| p % 2).collect::<Vec<_>>();
    let (ytr, yte) = (shuffled(&mut r), shuffled(&mut r));
    let acc = classify_linear(&train, &ytr, &test, &yte, LinearConfig::default()).unwrap();

    let ok = bad.is_empty() && oracle_misses == 0 && (acc - 0.5).abs() <= 0.05;
    verdict(
        ok,
        format!(
            "hand examples {}; k-means oracle mismatches {oracle_misses}/30; shuffled-label accuracy {acc:.3}",
            if bad.is_empty() { "all exact".to_owned() } else { format!("failed: {}", bad.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- 7

fn newsgroups() -> Outcome {
    let Some(root) = std::env::var_os(DATA_ENV) else {
        return Outcome::Skip(format!("${DATA_ENV} is not set"));
    };
    let dir = Path::new(&root).join("20ng");
    let full = match load_corpus(&dir) {
        Ok(c) => c,
        Err(e) => return Outcome::Skip(format!("no usable corpus at {}: {e:#}", dir.display())),
    };
    let mut r = rng::stream(0, 506, 0);
    let mut pick = rng::permutation(full.len(), &mut r);
    pick.truncate(2000);
    pick.sort_unstable();
    let sub = full.subset(&pick).unwrap();
    let mut keep = sub.terms_by_frequency();
    keep.truncate(2000);
    keep.sort_unstable();
    let corpus = sub.restrict_vocab(&keep).unwrap();
    let all: Vec<usize> = (0..corpus.len()).collect();
    let labels = match corpus.labels(&all) {
        Ok(l) => l,
        Err(e) => return Outcome::Skip(format!("corpus has no labels: {e}")),
    };
    let k = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    let mut npmi_by_space = Vec::new();
    let mut nmi_gap = 0.0;
    for kind in [GeometryKind::Poincare, GeometryKind::Euclidean] {
        let mut m = ModelConfig::new(Mode::Hierarchical, vec![32, 8]);
        m.space = Space::new(kind, -1.0).unwrap();
        let mut c = TrainConfig::new(m);
        c.epochs = 50;
        let mut run = TrainRun::new(c, corpus.vocab().len(), None).unwrap();
        if let Err(e) = run.train(&corpus, |_| {}) {
            return Outcome::Fail(format!("{kind:?} training failed: {e}"));
        }
        let layers = layer_metrics(run.model(), run.store(), &corpus).unwrap();
        npmi_by_space.push(format!("{kind:?} NPMI [{}]", fmt_list(&layers.iter().map(|l| l.npmi).collect::<Vec<_>>())));
        if kind == GeometryKind::Poincare {
            let theta = run.model().infer_theta(run.store(), &corpus.batch(&all), 500);
            let km = kmeans(&theta, k, 0, KMEANS_MAX_ITER).unwrap();
            let got = nmi(&km.assignments, &labels).unwrap();
            let perm = rng::permutation(labels.len(), &mut r);
            let shuffled: Vec<usize> = perm.iter().map(|&p| labels[p]).collect();
            let base = nmi(&km.assignments, &shuffled).unwrap();
            nmi_gap = got - base;
        }
    }
    verdict(nmi_gap >= 0.1, format!("km-NMI minus shuffled baseline {nmi_gap:.3}; {}", npmi_by_space.join("; ")))
}

// ---------------------------------------------------------------- 8

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_hypertopic"))
        .args(args)
        .env_remove(DATA_ENV)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let corpus = tmp.path().join("corpus");
    let tax = tmp.path().join("tax.json");
    let mut ok = cli(&["synthesize", "--out", &s(&corpus), "--vocab", "90", "--docs", "300", "--seed", "4"]);
    ok &= cli(&[
        "build-taxonomy",
        "--paths",
        &s(&corpus.join("hypernyms.txt")),
        "--corpus",
        &s(&corpus),
        "--depth",
        "2",
        "--out",
        &s(&tax),
    ]);
    if !ok {
        return Outcome::Fail("could not prepare the corpus".into());
    }
    let train = |out: &Path, epochs: &str, resume: bool| {
        let mut args = vec!["train".to_owned(), "--corpus".into(), s(&corpus), "--out".into(), s(out)];
        if resume {
            args.extend(["--resume".into(), "--epochs".into(), epochs.into()]);
        } else {
            for a in [
                "--layers-from-taxonomy",
                &s(&tax),
                "--hidden",
                "32",
                "--dim",
                "8",
                "--neg-samples",
                "16",
                "--batch-size",
                "64",
                "--seed",
                "13",
                "--checkpoint-every",
                "1",
                "--epochs",
                epochs,
            ] {
                args.push(a.to_owned());
            }
        }
        cli(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    if !(train(&a, "4", false) && train(&b, "4", false) && train(&c, "2", false) && train(&c, "4", true)) {
        return Outcome::Fail("a train command failed".into());
    }
    let (ta, tb, tc) = (tree(&a.join("checkpoint")), tree(&b.join("checkpoint")), tree(&c.join("checkpoint")));
    let bytes: usize = ta.iter().map(|f| f.1.len()).sum();
    verdict(
        !ta.is_empty() && ta == tb && ta == tc,
        format!(
            "{} checkpoint files ({bytes} bytes): repeat run {}, resumed-at-epoch-2 run {}",
            ta.len(),
            if ta == tb { "identical" } else { "differs" },
            if ta == tc { "identical" } else { "differs" }
        ),
    )
}
