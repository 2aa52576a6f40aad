use alloc::vec;
use alloc::vec::Vec;

use super::{GradMap, ParamId, ParamStore};
use crate::geometry::Space;
use crate::matrix::{gemm_nn, gemm_nt, gemm_tn, Matrix, SparseRows};
use crate::model::kl_weibull_gamma;
use crate::special::{digamma, gamma, lgamma, sigmoid, softplus, EULER_GAMMA};

const BN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// One anchor of the contrastive objective, as rows of a node table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InfoNceTerm {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    SparseMatMul { x: SparseRows, w: Var },
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Log { a: Var, floor: f64 },
    Pow(Var, f64),
    Lgamma(Var),
    Clamp { a: Var, lo: f64, hi: f64 },
    SoftmaxCols(Var),
    SoftmaxRows(Var),
    BatchNorm { a: Var, gamma: Var, beta: Var, xhat: Matrix, inv_std: Vec<f64>, stats: (Vec<f64>, Vec<f64>) },
    BatchNormEval { a: Var, gamma: Var, beta: Var, mean: Vec<f64>, inv_std: Vec<f64> },
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    Sum(Var),
    Mean(Var),
    WeibullSample { k: Var, t: Var, w: Matrix },
    KlWeibullGamma { k: Var, t: Var, alpha: Var, rate: f64 },
    CountLogLik { theta: Var, phi: Var, x: SparseRows, floor: f64, poisson: bool },
    GaussianKl { mu: Var, logvar: Var },
    ExpMap0 { a: Var, space: Space },
    PairwiseScores { a: Var, b: Var, space: Space },
    InfoNce { nodes: Var, terms: Vec<InfoNceTerm>, tau: f64, space: Space },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// A record of primitive operations for one forward pass. Built fresh per
/// batch; [`Tape::backward`] replays it in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on a non-scalar node");
        m.data()[0]
    }

    /// Batch mean and biased variance recorded by a training-mode batch norm.
    pub fn batch_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        match &self.nodes[v.0].op {
            Op::BatchNorm { stats, .. } => Some((&stats.0, &stats.1)),
            _ => None,
        }
    }

    fn push(&mut self, value: Matrix, op: Op, parents: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Constant => false,
            Op::Param(_) => true,
            _ => parents.iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, &[])
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), &[])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul shape mismatch");
        let mut out = Matrix::zeros(ar, bc);
        gemm_nn(self.value(a), self.value(b), &mut out);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, bc, "matmul_nt shape mismatch");
        let mut out = Matrix::zeros(ar, br);
        gemm_nt(self.value(a), self.value(b), &mut out);
        self.push(out, Op::MatMulNT(a, b), &[a, b])
    }

    /// Sparse constant times a dense node.
    pub fn sparse_matmul(&mut self, x: SparseRows, w: Var) -> Var {
        let out = x.matmul(self.value(w));
        self.push(out, Op::SparseMatMul { x, w }, &[w])
    }

    /// Adds a `1×n` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(bias), (1, c), "bias shape mismatch");
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(a).clone();
        for i in 0..r {
            for (o, bv) in out.row_mut(i).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow(a, bias), &[a, bias])
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shape mismatch");
        let (r, c) = self.shape(a);
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Matrix::from_vec(r, c, data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(libm::exp);
        self.push(out, Op::Exp(a), &[a])
    }

    /// `ln(max(a, floor))`
    pub fn log(&mut self, a: Var, floor: f64) -> Var {
        let out = self.value(a).map(|x| libm::log(x.max(floor)));
        self.push(out, Op::Log { a, floor }, &[a])
    }

    pub fn pow(&mut self, a: Var, p: f64) -> Var {
        let out = self.value(a).map(|x| libm::pow(x, p));
        self.push(out, Op::Pow(a, p), &[a])
    }

    pub fn lgamma(&mut self, a: Var) -> Var {
        let out = self.value(a).map(lgamma);
        self.push(out, Op::Lgamma(a), &[a])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp { a, lo, hi }, &[a])
    }

    /// Softmax down each column.
    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let out = softmax_cols_value(self.value(a));
        self.push(out, Op::SoftmaxCols(a), &[a])
    }

    /// Softmax along each row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = m.clone();
        for i in 0..m.rows() {
            softmax_in_place(out.row_mut(i));
        }
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    /// Batch normalization with batch statistics.
    pub fn batch_norm(&mut self, a: Var, gamma: Var, beta: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(gamma), (1, c));
        assert_eq!(self.shape(beta), (1, c));
        let x = self.value(a);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let n = r as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for i in 0..r {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for i in 0..r {
            for j in 0..c {
                let d = x.get(i, j) - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS)).collect();
        let mut xhat = Matrix::zeros(r, c);
        let mut out = Matrix::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                let h = (x.get(i, j) - mean[j]) * inv_std[j];
                xhat.set(i, j, h);
                out.set(i, j, g[j] * h + b[j]);
            }
        }
        self.push(
            out,
            Op::BatchNorm { a, gamma, beta, xhat, inv_std, stats: (mean, var) },
            &[a, gamma, beta],
        )
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(&mut self, a: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64]) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(mean.len(), c);
        assert_eq!(var.len(), c);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS)).collect();
        let x = self.value(a);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let out = Matrix::from_fn(r, c, |i, j| g[j] * (x.get(i, j) - mean[j]) * inv_std[j] + b[j]);
        self.push(out, Op::BatchNormEval { a, gamma, beta, mean: mean.to_vec(), inv_std }, &[a, gamma, beta])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ar, br, "concat_cols row mismatch");
        let mut out = Matrix::zeros(ar, ac + bc);
        for i in 0..ar {
            let row = out.row_mut(i);
            row[..ac].copy_from_slice(self.nodes[a.0].value.row(i));
            row[ac..].copy_from_slice(self.nodes[b.0].value.row(i));
        }
        self.push(out, Op::ConcatCols(a, b), &[a, b])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let c = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            assert_eq!(self.shape(p).1, c, "concat_rows column mismatch");
            rows += self.shape(p).0;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Matrix::from_vec(rows, c, data).expect("shape preserved");
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let out = Matrix::scalar(m.sum() / m.len() as f64);
        self.push(out, Op::Mean(a), &[a])
    }

    /// Reparameterized Weibull draw `t · (−ln(1−u))^{1/k}` for uniform `u`
    /// (clamped to `[1e−7, 1 − 1e−7]`).
    pub fn weibull_sample(&mut self, k: Var, t: Var, u: &Matrix) -> Var {
        assert_eq!(self.shape(k), self.shape(t));
        assert_eq!(self.shape(k), u.shape());
        let w = u.map(|u| -libm::log1p(-u.clamp(1e-7, 1.0 - 1e-7)));
        let kv = self.value(k).data();
        let tv = self.value(t).data();
        let (r, c) = u.shape();
        let out = Matrix::from_fn(r, c, |i, j| {
            let n = i * c + j;
            tv[n] * libm::pow(w.data()[n], 1.0 / kv[n])
        });
        self.push(out, Op::WeibullSample { k, t, w }, &[k, t])
    }

    /// Elementwise `KL(Weibull(k, t) ‖ Gamma(alpha, rate))`.
    pub fn kl_weibull_gamma(&mut self, k: Var, t: Var, alpha: Var, rate: f64) -> Var {
        assert_eq!(self.shape(k), self.shape(t));
        assert_eq!(self.shape(k), self.shape(alpha));
        let (r, c) = self.shape(k);
        let kv = self.value(k).data();
        let tv = self.value(t).data();
        let av = self.value(alpha).data();
        let data = (0..r * c).map(|i| kl_weibull_gamma(kv[i], tv[i], av[i], rate)).collect();
        let out = Matrix::from_vec(r, c, data).expect("shape preserved");
        self.push(out, Op::KlWeibullGamma { k, t, alpha, rate }, &[k, t, alpha])
    }

    /// Per-document count log-likelihood under rates `r = θ Φᵀ` (`θ` is
    /// B×K, `Φ` is V×K). Poisson: `Σ x ln r − r − lnΓ(x+1)`. Multinomial
    /// (rows of `r` already normalized): `Σ x ln r + lnΓ(N+1) − Σ lnΓ(x+1)`.
    /// Rates are floored at `floor` before the logarithm. Returns B×1.
    pub fn count_log_lik(&mut self, theta: Var, phi: Var, x: SparseRows, floor: f64, poisson: bool) -> Var {
        let (b, k) = self.shape(theta);
        let (v, k2) = self.shape(phi);
        assert_eq!(k, k2, "theta/phi topic mismatch");
        assert_eq!(x.rows(), b);
        assert_eq!(x.cols, v);
        let th = self.value(theta);
        let ph = self.value(phi);
        let colsum = column_sums(ph);
        let mut out = Matrix::zeros(b, 1);
        for i in 0..b {
            let trow = th.row(i);
            let mut s = 0.0;
            let mut n = 0.0;
            for (w, cnt) in x.row(i) {
                let r = crate::matrix::dot(trow, ph.row(w)).max(floor);
                s += cnt * libm::log(r) - lgamma(cnt + 1.0);
                n += cnt;
            }
            if poisson {
                s -= crate::matrix::dot(trow, &colsum);
            } else {
                s += lgamma(n + 1.0);
            }
            out.set(i, 0, s);
        }
        self.push(out, Op::CountLogLik { theta, phi, x, floor, poisson }, &[theta, phi])
    }

    /// Per-row `KL(N(μ, e^{logvar}) ‖ N(0, 1))`, returned as B×1.
    pub fn gaussian_kl(&mut self, mu: Var, logvar: Var) -> Var {
        assert_eq!(self.shape(mu), self.shape(logvar));
        let (r, _) = self.shape(mu);
        let m = self.value(mu);
        let lv = self.value(logvar);
        let mut out = Matrix::zeros(r, 1);
        for i in 0..r {
            let s: f64 = m.row(i).iter().zip(lv.row(i)).map(|(&a, &l)| a * a + libm::exp(l) - 1.0 - l).sum();
            out.set(i, 0, 0.5 * s);
        }
        self.push(out, Op::GaussianKl { mu, logvar }, &[mu, logvar])
    }

    /// Row-wise exponential map at the origin of `space`.
    pub fn expmap0(&mut self, a: Var, space: Space) -> Var {
        let (r, c) = self.shape(a);
        let amb = space.ambient_dim(c);
        let mut out = Matrix::zeros(r, amb);
        for i in 0..r {
            space.expmap0_raw(self.nodes[a.0].value.row(i), out.row_mut(i));
        }
        self.push(out, Op::ExpMap0 { a, space }, &[a])
    }

    /// `out[i, j] = score(a_i, b_j)`.
    pub fn pairwise_scores(&mut self, a: Var, b: Var, space: Space) -> Var {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, bc, "pairwise_scores dimension mismatch");
        let av = self.value(a);
        let bv = self.value(b);
        let out = Matrix::from_fn(ar, br, |i, j| space.score_raw(av.row(i), bv.row(j)));
        self.push(out, Op::PairwiseScores { a, b, space }, &[a, b])
    }

    /// Mean over terms of `−ln softmax(z)_pos`, with logits `z = score/τ`
    /// over the positive followed by the negatives. Zero when `terms` is
    /// empty.
    pub fn info_nce(&mut self, nodes: Var, terms: Vec<InfoNceTerm>, tau: f64, space: Space) -> Var {
        let table = self.value(nodes);
        let mut total = 0.0;
        let mut z = Vec::new();
        for term in &terms {
            info_nce_logits(table, term, tau, space, &mut z);
            total += log_sum_exp(&z) - z[0];
        }
        let out = Matrix::scalar(if terms.is_empty() { 0.0 } else { total / terms.len() as f64 });
        self.push(out, Op::InfoNce { nodes, terms, tau, space }, &[nodes])
    }

    /// Gradients of a scalar node with respect to every parameter leaf.
    pub fn backward(&self, root: Var, store: &ParamStore) -> GradMap {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut out = GradMap::zeros_like(store);
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let mut acc = Acc { tape: self, grads: &mut grads };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.get_mut(*id).add_assign(&g),
                Op::MatMul(a, b) => {
                    if let Some(ga) = acc.slot(*a) {
                        gemm_nt(&g, self.value(*b), ga);
                    }
                    if let Some(gb) = acc.slot(*b) {
                        gemm_tn(self.value(*a), &g, gb);
                    }
                }
                Op::MatMulNT(a, b) => {
                    if let Some(ga) = acc.slot(*a) {
                        gemm_nn(&g, self.value(*b), ga);
                    }
                    if let Some(gb) = acc.slot(*b) {
                        gemm_tn(&g, self.value(*a), gb);
                    }
                }
                Op::SparseMatMul { x, w } => {
                    if let Some(gw) = acc.slot(*w) {
                        gw.add_assign(&x.matmul_tn(&g));
                    }
                }
                Op::AddRow(a, bias) => {
                    if let Some(ga) = acc.slot(*a) {
                        ga.add_assign(&g);
                    }
                    if let Some(gb) = acc.slot(*bias) {
                        let cs = column_sums(&g);
                        for (o, c) in gb.data_mut().iter_mut().zip(cs) {
                            *o += c;
                        }
                    }
                }
                Op::Add(a, b) => {
                    acc.add(*a, &g, 1.0);
                    acc.add(*b, &g, 1.0);
                }
                Op::Sub(a, b) => {
                    acc.add(*a, &g, 1.0);
                    acc.add(*b, &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    acc.each(*a, &g, |i, gi| gi * bv[i]);
                    acc.each(*b, &g, |i, gi| gi * av[i]);
                }
                Op::Scale(a, s) => acc.add(*a, &g, *s),
                Op::Relu(a) => {
                    let av = self.value(*a).data();
                    acc.each(*a, &g, |i, gi| if av[i] > 0.0 { gi } else { 0.0 });
                }
                Op::Softplus(a) => {
                    let av = self.value(*a).data();
                    acc.each(*a, &g, |i, gi| gi * sigmoid(av[i]));
                }
                Op::Exp(a) => {
                    let ov = node.value.data();
                    acc.each(*a, &g, |i, gi| gi * ov[i]);
                }
                Op::Log { a, floor } => {
                    let av = self.value(*a).data();
                    acc.each(*a, &g, |i, gi| if av[i] > *floor { gi / av[i] } else { 0.0 });
                }
                Op::Pow(a, p) => {
                    let av = self.value(*a).data();
                    acc.each(*a, &g, |i, gi| gi * p * libm::pow(av[i], p - 1.0));
                }
                Op::Lgamma(a) => {
                    let av = self.value(*a).data();
                    acc.each(*a, &g, |i, gi| gi * digamma(av[i]));
                }
                Op::Clamp { a, lo, hi } => {
                    let av = self.value(*a).data();
                    acc.each(*a, &g, |i, gi| if av[i] >= *lo && av[i] <= *hi { gi } else { 0.0 });
                }
                Op::SoftmaxCols(a) => {
                    if let Some(ga) = acc.slot(*a) {
                        let y = &node.value;
                        let (r, c) = y.shape();
                        let mut inner = vec![0.0; c];
                        for i in 0..r {
                            for j in 0..c {
                                inner[j] += g.get(i, j) * y.get(i, j);
                            }
                        }
                        for i in 0..r {
                            for j in 0..c {
                                let d = y.get(i, j) * (g.get(i, j) - inner[j]);
                                ga.set(i, j, ga.get(i, j) + d);
                            }
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    if let Some(ga) = acc.slot(*a) {
                        let y = &node.value;
                        for i in 0..y.rows() {
                            let yr = y.row(i);
                            let gr = g.row(i);
                            let inner = crate::matrix::dot(yr, gr);
                            for (j, o) in ga.row_mut(i).iter_mut().enumerate() {
                                *o += yr[j] * (gr[j] - inner);
                            }
                        }
                    }
                }
                Op::BatchNorm { a, gamma, beta, xhat, inv_std, .. } => {
                    let (r, c) = xhat.shape();
                    let n = r as f64;
                    let mut sum_g = vec![0.0; c];
                    let mut sum_gx = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            sum_g[j] += g.get(i, j);
                            sum_gx[j] += g.get(i, j) * xhat.get(i, j);
                        }
                    }
                    let gam = self.value(*gamma).data().to_vec();
                    if let Some(ga) = acc.slot(*a) {
                        for i in 0..r {
                            for j in 0..c {
                                let d = gam[j] * inv_std[j] / n
                                    * (n * g.get(i, j) - sum_g[j] - xhat.get(i, j) * sum_gx[j]);
                                ga.set(i, j, ga.get(i, j) + d);
                            }
                        }
                    }
                    if let Some(gg) = acc.slot(*gamma) {
                        for (o, s) in gg.data_mut().iter_mut().zip(&sum_gx) {
                            *o += s;
                        }
                    }
                    if let Some(gb) = acc.slot(*beta) {
                        for (o, s) in gb.data_mut().iter_mut().zip(&sum_g) {
                            *o += s;
                        }
                    }
                }
                Op::BatchNormEval { a, gamma, beta, mean, inv_std } => {
                    let x = self.value(*a);
                    let (r, c) = x.shape();
                    let gam = self.value(*gamma).data().to_vec();
                    if let Some(ga) = acc.slot(*a) {
                        for i in 0..r {
                            for j in 0..c {
                                ga.set(i, j, ga.get(i, j) + g.get(i, j) * gam[j] * inv_std[j]);
                            }
                        }
                    }
                    if let Some(gg) = acc.slot(*gamma) {
                        for i in 0..r {
                            for j in 0..c {
                                gg.data_mut()[j] += g.get(i, j) * (x.get(i, j) - mean[j]) * inv_std[j];
                            }
                        }
                    }
                    if let Some(gb) = acc.slot(*beta) {
                        for (o, s) in gb.data_mut().iter_mut().zip(column_sums(&g)) {
                            *o += s;
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ac = self.shape(*a).1;
                    if let Some(ga) = acc.slot(*a) {
                        for i in 0..g.rows() {
                            for (o, v) in ga.row_mut(i).iter_mut().zip(&g.row(i)[..ac]) {
                                *o += v;
                            }
                        }
                    }
                    if let Some(gb) = acc.slot(*b) {
                        for i in 0..g.rows() {
                            for (o, v) in gb.row_mut(i).iter_mut().zip(&g.row(i)[ac..]) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        if let Some(gp) = acc.slot(p) {
                            for (o, v) in gp.data_mut().iter_mut().zip(&g.data()[offset..offset + n]) {
                                *o += v;
                            }
                        }
                        offset += n;
                    }
                }
                Op::Sum(a) => acc.fill(*a, g.data()[0]),
                Op::Mean(a) => acc.fill(*a, g.data()[0] / self.value(*a).len() as f64),
                Op::WeibullSample { k, t, w } => {
                    let kv = self.value(*k).data();
                    let th = node.value.data();
                    let wv = w.data();
                    acc.each(*t, &g, |i, gi| gi * libm::pow(wv[i], 1.0 / kv[i]));
                    acc.each(*k, &g, |i, gi| gi * th[i] * libm::log(wv[i]) * (-1.0 / (kv[i] * kv[i])));
                }
                Op::KlWeibullGamma { k, t, alpha, rate } => {
                    let kv = self.value(*k).data();
                    let tv = self.value(*t).data();
                    let av = self.value(*alpha).data();
                    let beta = *rate;
                    acc.each(*k, &g, |i, gi| {
                        let (k, t, a) = (kv[i], tv[i], av[i]);
                        let ik = 1.0 / k;
                        gi * (-EULER_GAMMA * a * ik * ik + ik
                            - beta * t * gamma(1.0 + ik) * digamma(1.0 + ik) * ik * ik)
                    });
                    acc.each(*t, &g, |i, gi| {
                        gi * (-av[i] / tv[i] + beta * gamma(1.0 + 1.0 / kv[i]))
                    });
                    acc.each(*alpha, &g, |i, gi| {
                        gi * (EULER_GAMMA / kv[i] - libm::log(tv[i]) + digamma(av[i]) - libm::log(beta))
                    });
                }
                Op::CountLogLik { theta, phi, x, floor, poisson } => {
                    let th = self.value(*theta);
                    let ph = self.value(*phi);
                    let (b, k) = th.shape();
                    let mut gth = Matrix::zeros(b, k);
                    let mut gph = Matrix::zeros(ph.rows(), k);
                    let colsum = column_sums(ph);
                    let mut theta_mass = vec![0.0; k];
                    for i in 0..b {
                        let gi = g.get(i, 0);
                        if gi == 0.0 {
                            continue;
                        }
                        let trow = th.row(i);
                        for (w, cnt) in x.row(i) {
                            let prow = ph.row(w);
                            let r = crate::matrix::dot(trow, prow);
                            if r <= *floor {
                                continue;
                            }
                            let coef = gi * cnt / r;
                            for (o, p) in gth.row_mut(i).iter_mut().zip(prow) {
                                *o += coef * p;
                            }
                            for (o, t) in gph.row_mut(w).iter_mut().zip(trow) {
                                *o += coef * t;
                            }
                        }
                        if *poisson {
                            for (j, o) in gth.row_mut(i).iter_mut().enumerate() {
                                *o -= gi * colsum[j];
                            }
                            for (m, t) in theta_mass.iter_mut().zip(trow) {
                                *m += gi * t;
                            }
                        }
                    }
                    if *poisson {
                        for v in 0..gph.rows() {
                            for (o, m) in gph.row_mut(v).iter_mut().zip(&theta_mass) {
                                *o -= m;
                            }
                        }
                    }
                    acc.add(*theta, &gth, 1.0);
                    acc.add(*phi, &gph, 1.0);
                }
                Op::GaussianKl { mu, logvar } => {
                    let mv = self.value(*mu);
                    let lv = self.value(*logvar);
                    let c = mv.cols();
                    let gm = Matrix::from_fn(mv.rows(), c, |i, j| g.get(i, 0) * mv.get(i, j));
                    let gl = Matrix::from_fn(lv.rows(), c, |i, j| g.get(i, 0) * 0.5 * (libm::exp(lv.get(i, j)) - 1.0));
                    acc.add(*mu, &gm, 1.0);
                    acc.add(*logvar, &gl, 1.0);
                }
                Op::ExpMap0 { a, space } => {
                    if let Some(ga) = acc.slot(*a) {
                        let av = self.value(*a);
                        for i in 0..av.rows() {
                            space.expmap0_backward_raw(av.row(i), g.row(i), ga.row_mut(i));
                        }
                    }
                }
                Op::PairwiseScores { a, b, space } => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                    for i in 0..av.rows() {
                        for j in 0..bv.rows() {
                            let up = g.get(i, j);
                            if up == 0.0 {
                                continue;
                            }
                            space.score_grad_raw(av.row(i), bv.row(j), up, ga.row_mut(i), gb.row_mut(j));
                        }
                    }
                    acc.add(*a, &ga, 1.0);
                    acc.add(*b, &gb, 1.0);
                }
                Op::InfoNce { nodes, terms, tau, space } => {
                    if terms.is_empty() {
                        continue;
                    }
                    let table = self.value(*nodes);
                    let scale = g.data()[0] / terms.len() as f64;
                    let mut gt = Matrix::zeros(table.rows(), table.cols());
                    let mut z = Vec::new();
                    let dim = table.cols();
                    let mut ga = vec![0.0; dim];
                    let mut go = vec![0.0; dim];
                    for term in terms {
                        info_nce_logits(table, term, *tau, *space, &mut z);
                        let lse = log_sum_exp(&z);
                        let others = core::iter::once(term.positive).chain(term.negatives.iter().copied());
                        ga.iter_mut().for_each(|v| *v = 0.0);
                        for (j, other) in others.enumerate() {
                            let q = libm::exp(z[j] - lse);
                            let dz = if j == 0 { q - 1.0 } else { q };
                            let up = scale * dz / tau;
                            go.iter_mut().for_each(|v| *v = 0.0);
                            space.score_grad_raw(table.row(term.anchor), table.row(other), up, &mut ga, &mut go);
                            for (o, v) in gt.row_mut(other).iter_mut().zip(&go) {
                                *o += v;
                            }
                        }
                        for (o, v) in gt.row_mut(term.anchor).iter_mut().zip(&ga) {
                            *o += v;
                        }
                    }
                    acc.add(*nodes, &gt, 1.0);
                }
            }
        }
        out
    }
}

/// Gradient accumulator over tape nodes.
struct Acc<'a> {
    tape: &'a Tape,
    grads: &'a mut Vec<Option<Matrix>>,
}

impl Acc<'_> {
    fn slot(&mut self, v: Var) -> Option<&mut Matrix> {
        let node = &self.tape.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        let (r, c) = node.value.shape();
        Some(self.grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c)))
    }

    fn add(&mut self, v: Var, g: &Matrix, s: f64) {
        if let Some(slot) = self.slot(v) {
            for (o, x) in slot.data_mut().iter_mut().zip(g.data()) {
                *o += s * x;
            }
        }
    }

    fn fill(&mut self, v: Var, s: f64) {
        if let Some(slot) = self.slot(v) {
            slot.data_mut().iter_mut().for_each(|o| *o += s);
        }
    }

    fn each(&mut self, v: Var, g: &Matrix, f: impl Fn(usize, f64) -> f64) {
        if let Some(slot) = self.slot(v) {
            for (i, (o, x)) in slot.data_mut().iter_mut().zip(g.data()).enumerate() {
                *o += f(i, *x);
            }
        }
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut s = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (o, v) in s.iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    s
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = libm::exp(*x - max);
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

pub(crate) fn softmax_cols_value(m: &Matrix) -> Matrix {
    let mut t = m.transpose();
    for i in 0..t.rows() {
        softmax_in_place(t.row_mut(i));
    }
    t.transpose()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(z.iter().map(|v| libm::exp(v - max)).sum::<f64>())
}

fn info_nce_logits(table: &Matrix, term: &InfoNceTerm, tau: f64, space: Space, z: &mut Vec<f64>) {
    z.clear();
    let a = table.row(term.anchor);
    z.push(space.score_raw(a, table.row(term.positive)) / tau);
    for &n in &term.negatives {
        z.push(space.score_raw(a, table.row(n)) / tau);
    }
}
