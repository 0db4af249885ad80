//! Finite-width MLP under the NTK parametrization.
//!
//! Parameters are stored standardized (`ω, β ~ N(0, 1)`); the physical
//! weights are `σ_W ω` and biases `σ_b β`. Layout for hidden width `k`:
//!
//! ```text
//! a0 = φ(σ_W V x) / √k               V: k × k0, frozen
//! zl = σ_W Ωl a(l-1) + σ_b βl        l = 1..=L
//! al = φ(zl) / √k
//! f  = σ_W ωᵀ aL + σ_b β_out
//! ```
//!
//! with `φ(z) = √2 max(z, 0)`. The frozen embedding carries no bias, which
//! makes the output covariance and tangent kernel converge to the analytic
//! kernels in [`crate::kernel`] (exactly so for `σ_W = 1`). Gradients and
//! training act on the `L + 1` trainable layers, in standardized coordinates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernel::MlpArchitecture;
use crate::rng::SeedTree;

/// Inputs with one label per point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledSet {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl LabeledSet {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: inputs.len(),
                got: labels.len(),
            });
        }
        if labels.iter().any(|y| !y.is_finite()) || inputs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in labelled set".into()));
        }
        Ok(LabeledSet { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledSet {
        LabeledSet {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: MlpArchitecture,
    pub seed: u64,
    embed: DMatrix<f64>,
    hidden: Vec<DMatrix<f64>>,
    hidden_bias: Vec<DVector<f64>>,
    head: DVector<f64>,
    head_bias: f64,
}

fn normal_matrix<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn normal_vector<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Draws a network deterministically from `(arch, seed)`.
pub fn init_network(arch: &MlpArchitecture, seed: u64) -> Result<NetworkParams> {
    arch.validate()?;
    let k = arch.hidden_width;
    let tree = SeedTree::root(seed);
    let mut rng = tree.child("embed").rng();
    let embed = normal_matrix(&mut rng, k, arch.input_dim);
    let mut hidden = Vec::with_capacity(arch.depth);
    let mut hidden_bias = Vec::with_capacity(arch.depth);
    for l in 0..arch.depth {
        let mut rng = tree.child("hidden").index(l as u64).rng();
        hidden.push(normal_matrix(&mut rng, k, k));
        hidden_bias.push(normal_vector(&mut rng, k));
    }
    let mut rng = tree.child("head").rng();
    let head = normal_vector(&mut rng, k);
    let head_bias = rng.sample(StandardNormal);
    Ok(NetworkParams {
        arch: arch.clone(),
        seed,
        embed,
        hidden,
        hidden_bias,
        head,
        head_bias,
    })
}

/// `wᵀ b` as `(bᵀ w)ᵀ`, so that only the thin factor is transposed and the
/// product runs through the blocked kernel (`tr_mul` runs column dot products).
fn t_mul(w: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    (b.transpose() * w).transpose()
}

struct Tape {
    /// `a_0 ..= a_L`, each `k × n`.
    a: Vec<DMatrix<f64>>,
    /// `z_1 ..= z_L`.
    z: Vec<DMatrix<f64>>,
    out: DVector<f64>,
}

impl NetworkParams {
    /// Number of trainable parameters.
    pub fn num_params(&self) -> usize {
        let k = self.arch.hidden_width;
        self.arch.depth * (k * k + k) + k + 1
    }

    /// Physical weights of hidden layer `l` (1-based), `σ_W Ω_l`.
    pub fn weight(&self, l: usize) -> DMatrix<f64> {
        &self.hidden[l - 1] * self.arch.sigma_w
    }

    /// Physical biases of hidden layer `l` (1-based), `σ_b β_l`.
    pub fn bias(&self, l: usize) -> DVector<f64> {
        &self.hidden_bias[l - 1] * self.arch.sigma_b
    }

    pub fn head_weight(&self) -> DVector<f64> {
        &self.head * self.arch.sigma_w
    }

    pub fn head_bias(&self) -> f64 {
        self.head_bias * self.arch.sigma_b
    }

    /// Frozen input embedding (physical scale).
    pub fn embedding(&self) -> DMatrix<f64> {
        &self.embed * self.arch.sigma_w
    }

    /// Trainable parameters in standardized coordinates, flattened.
    ///
    /// Order: for each hidden layer its weights (column-major) then biases,
    /// then the head weights and the head bias.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for (w, b) in self.hidden.iter().zip(&self.hidden_bias) {
            v.extend_from_slice(w.as_slice());
            v.extend_from_slice(b.as_slice());
        }
        v.extend_from_slice(self.head.as_slice());
        v.push(self.head_bias);
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                expected: self.num_params(),
                got: v.len(),
            });
        }
        let mut o = 0;
        for (w, b) in self.hidden.iter_mut().zip(self.hidden_bias.iter_mut()) {
            let n = w.len();
            w.as_mut_slice().copy_from_slice(&v[o..o + n]);
            o += n;
            let n = b.len();
            b.as_mut_slice().copy_from_slice(&v[o..o + n]);
            o += n;
        }
        let n = self.head.len();
        self.head.as_mut_slice().copy_from_slice(&v[o..o + n]);
        self.head_bias = v[o + n];
        Ok(())
    }

    /// Sets every parameter, frozen embedding included, to zero.
    pub fn zero(&mut self) {
        self.embed.fill(0.0);
        for w in &mut self.hidden {
            w.fill(0.0);
        }
        for b in &mut self.hidden_bias {
            b.fill(0.0);
        }
        self.head.fill(0.0);
        self.head_bias = 0.0;
    }

    fn sq_norm(&self) -> f64 {
        self.hidden.iter().map(|w| w.norm_squared()).sum::<f64>()
            + self.hidden_bias.iter().map(|b| b.norm_squared()).sum::<f64>()
            + self.head.norm_squared()
            + self.head_bias * self.head_bias
    }

    fn input_matrix(&self, xs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let d = self.arch.input_dim;
        if let Some(x) = xs.iter().find(|x| x.len() != d) {
            return Err(Error::ShapeMismatch {
                expected: d,
                got: x.len(),
            });
        }
        Ok(DMatrix::from_fn(d, xs.len(), |i, j| xs[j][i]))
    }

    fn scale(&self) -> f64 {
        (2.0 / self.arch.hidden_width as f64).sqrt()
    }

    fn run(&self, x: &DMatrix<f64>) -> Tape {
        let sw = self.arch.sigma_w;
        let sb = self.arch.sigma_b;
        let c = self.scale();
        let mut a = Vec::with_capacity(self.arch.depth + 1);
        let mut z = Vec::with_capacity(self.arch.depth);
        a.push((&self.embed * x).map(|v| c * (sw * v).max(0.0)));
        for (w, b) in self.hidden.iter().zip(&self.hidden_bias) {
            let mut zl = w * a.last().unwrap();
            for mut col in zl.column_iter_mut() {
                for (v, bi) in col.iter_mut().zip(b.iter()) {
                    *v = sw * *v + sb * bi;
                }
            }
            a.push(zl.map(|v| c * v.max(0.0)));
            z.push(zl);
        }
        let out = a.last().unwrap().tr_mul(&self.head) * sw;
        let out = out.map(|v| v + sb * self.head_bias);
        Tape { a, z, out }
    }

    /// Network outputs at each point.
    pub fn forward_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let x = self.input_matrix(xs)?;
        Ok(self.run(&x).out.iter().copied().collect())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward_batch(&[x.to_vec()])?[0])
    }

    /// Gradient of `sum_i g_i f(x_i)` in the flat layout of [`Self::flat`].
    fn backward(&self, tape: &Tape, g: &DVector<f64>) -> Vec<f64> {
        let sw = self.arch.sigma_w;
        let sb = self.arch.sigma_b;
        let c = self.scale();
        let depth = self.arch.depth;
        let mut grads_w: Vec<DMatrix<f64>> = Vec::with_capacity(depth);
        let mut grads_b: Vec<DVector<f64>> = Vec::with_capacity(depth);
        let grad_head = (&tape.a[depth] * g) * sw;
        let grad_head_bias = sb * g.sum();
        let mut da = (&self.head * g.transpose()) * sw;
        for l in (1..=depth).rev() {
            let zl = &tape.z[l - 1];
            let dz = da.zip_map(zl, |d, z| if z > 0.0 { c * d } else { 0.0 });
            grads_w.push((&dz * tape.a[l - 1].transpose()) * sw);
            grads_b.push(DVector::from_iterator(
                dz.nrows(),
                dz.row_iter().map(|r| sb * r.sum()),
            ));
            if l > 1 {
                da = t_mul(&self.hidden[l - 1], &dz) * sw;
            }
        }
        grads_w.reverse();
        grads_b.reverse();
        let mut v = Vec::with_capacity(self.num_params());
        for (w, b) in grads_w.iter().zip(&grads_b) {
            v.extend_from_slice(w.as_slice());
            v.extend_from_slice(b.as_slice());
        }
        v.extend_from_slice(grad_head.as_slice());
        v.push(grad_head_bias);
        v
    }

    /// One gradient step `θ ← (1 − lr·λ)θ − lr·∇`, applied layer by layer in place.
    ///
    /// `g` is `∂J/∂f` at the points of `tape`. Same arithmetic as subtracting
    /// the flat gradient of [`Self::backward`], without materializing it.
    fn descend(&mut self, tape: &Tape, g: &DVector<f64>, lr: f64, lam: f64) {
        let sw = self.arch.sigma_w;
        let sb = self.arch.sigma_b;
        let c = self.scale();
        let depth = self.arch.depth;
        let keep = 1.0 - lr * lam;
        let mut da = (&self.head * g.transpose()) * sw;
        let grad_head = (&tape.a[depth] * g) * sw;
        self.head.axpy(-lr, &grad_head, keep);
        self.head_bias = keep * self.head_bias - lr * sb * g.sum();
        for l in (1..=depth).rev() {
            let dz = da.zip_map(&tape.z[l - 1], |d, z| if z > 0.0 { c * d } else { 0.0 });
            if l > 1 {
                da = t_mul(&self.hidden[l - 1], &dz) * sw;
            }
            let a_t = tape.a[l - 1].transpose();
            self.hidden[l - 1].gemm(-lr * sw, &dz, &a_t, keep);
            for (b, row) in self.hidden_bias[l - 1].iter_mut().zip(dz.row_iter()) {
                *b = keep * *b - lr * sb * row.sum();
            }
        }
    }

    /// `∇_θ f(x)` in the flat layout of [`Self::flat`].
    pub fn param_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xm = self.input_matrix(&[x.to_vec()])?;
        let tape = self.run(&xm);
        Ok(self.backward(&tape, &DVector::from_element(1, 1.0)))
    }

    /// Per-sample `∂f/∂z_l` for `l = 1..=L`, each `k × n`.
    fn deltas(&self, tape: &Tape) -> Vec<DMatrix<f64>> {
        let sw = self.arch.sigma_w;
        let c = self.scale();
        let depth = self.arch.depth;
        let n = tape.out.len();
        let mut out = vec![DMatrix::zeros(0, 0); depth];
        let zl = &tape.z[depth - 1];
        let mut d = DMatrix::from_fn(zl.nrows(), n, |i, j| {
            if zl[(i, j)] > 0.0 {
                c * sw * self.head[i]
            } else {
                0.0
            }
        });
        for l in (1..=depth).rev() {
            if l < depth {
                let up = t_mul(&self.hidden[l], &out[l]) * sw;
                let zl = &tape.z[l - 1];
                d = up.zip_map(zl, |u, z| if z > 0.0 { c * u } else { 0.0 });
            }
            out[l - 1] = d.clone();
        }
        out
    }

    /// Empirical tangent kernel `∇f(X) ∇f(X')ᵀ`, assembled layer by layer.
    pub fn empirical_ntk(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let sw2 = self.arch.sigma_w * self.arch.sigma_w;
        let sb2 = self.arch.sigma_b * self.arch.sigma_b;
        let tx = self.run(&self.input_matrix(xs)?);
        let ty = self.run(&self.input_matrix(ys)?);
        let dx = self.deltas(&tx);
        let dy = self.deltas(&ty);
        let depth = self.arch.depth;
        let mut theta = (tx.a[depth].tr_mul(&ty.a[depth]) * sw2).add_scalar(sb2);
        for l in 1..=depth {
            let aa = (tx.a[l - 1].tr_mul(&ty.a[l - 1]) * sw2).add_scalar(sb2);
            let dd = dx[l - 1].tr_mul(&dy[l - 1]);
            theta += aa.component_mul(&dd);
        }
        Ok(theta)
    }

    /// Symmetric empirical tangent kernel on one point set.
    pub fn empirical_ntk_gram(&self, xs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let t = self.empirical_ntk(xs, xs)?;
        Ok((&t + t.transpose()) * 0.5)
    }
}

/// Gradient-descent settings for [`train`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Coefficient `λ` of the `λ/2 ‖θ‖²` penalty.
    pub weight_decay: f64,
    /// Early stop once the objective changes by less than this.
    pub tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            epochs: 5000,
            weight_decay: 0.0,
            tol: 1e-9,
        }
    }
}

/// Training ends in error once the objective exceeds this multiple of its start.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    /// Objective before each update; the last entry is the final objective.
    pub losses: Vec<f64>,
    pub epochs_run: usize,
}

/// Full-batch gradient descent on `(1/n) Σ ½ (f(x_i) − y_i)² + λ/2 ‖θ‖²`.
pub fn train(params: &NetworkParams, data: &LabeledSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if !(cfg.lr > 0.0) {
        return Err(Error::pre("learning rate must be positive"));
    }
    if data.is_empty() {
        return Err(Error::pre("training set is empty"));
    }
    let mut p = params.clone();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            params: p,
            losses: Vec::new(),
            epochs_run: 0,
        });
    }
    let x = p.input_matrix(&data.inputs)?;
    let y = DVector::from_column_slice(&data.labels);
    let n = data.len() as f64;
    let lam = cfg.weight_decay;
    let mut losses = Vec::new();
    let mut epochs_run = 0;
    let objective = |p: &NetworkParams, tape: &Tape| -> (f64, DVector<f64>) {
        let r = &tape.out - &y;
        let mse = 0.5 * r.norm_squared() / n;
        let reg = if lam != 0.0 { 0.5 * lam * p.sq_norm() } else { 0.0 };
        (mse + reg, r)
    };
    let mut tape = p.run(&x);
    let (mut j, mut r) = objective(&p, &tape);
    let initial = j;
    losses.push(j);
    for epoch in 0..cfg.epochs {
        p.descend(&tape, &(r / n), cfg.lr, lam);
        epochs_run = epoch + 1;
        tape = p.run(&x);
        let (jn, rn) = objective(&p, &tape);
        if !jn.is_finite() || (initial > 0.0 && jn > DIVERGENCE_FACTOR * initial) {
            return Err(Error::Divergence {
                epoch: epochs_run,
                loss: jn,
                initial,
            });
        }
        losses.push(jn);
        let done = (j - jn).abs() < cfg.tol;
        j = jn;
        r = rn;
        if done {
            break;
        }
    }
    Ok(TrainOutcome {
        params: p,
        losses,
        epochs_run,
    })
}

/// Seed-indexed Monte-Carlo estimate of `E[f(x) f(x')]` at initialization.
#[derive(Debug, Clone)]
pub struct MonteCarloKernel {
    pub mean: DMatrix<f64>,
    /// Standard error of each entry.
    pub stderr: DMatrix<f64>,
    pub seeds: Vec<u64>,
}

pub fn monte_carlo_nngp(
    arch: &MlpArchitecture,
    xs: &[Vec<f64>],
    n_seeds: usize,
    seeds: &SeedTree,
) -> Result<MonteCarloKernel> {
    if n_seeds < 2 {
        return Err(Error::pre("Monte-Carlo estimate needs at least 2 seeds"));
    }
    let n = xs.len();
    let mut s1 = DMatrix::zeros(n, n);
    let mut s2 = DMatrix::zeros(n, n);
    let mut used = Vec::with_capacity(n_seeds);
    for s in 0..n_seeds {
        let seed = seeds.index(s as u64).seed();
        used.push(seed);
        let f = DVector::from_vec(init_network(arch, seed)?.forward_batch(xs)?);
        let prod = &f * f.transpose();
        s2 += prod.component_mul(&prod);
        s1 += prod;
    }
    let m = n_seeds as f64;
    let mean = &s1 / m;
    let stderr = DMatrix::from_fn(n, n, |i, j| {
        let var = ((s2[(i, j)] - m * mean[(i, j)] * mean[(i, j)]) / (m - 1.0)).max(0.0);
        (var / m).sqrt()
    });
    Ok(MonteCarloKernel {
        mean,
        stderr,
        seeds: used,
    })
}

/// Outputs of an ensemble of independently initialized and trained networks.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub mean: Vec<f64>,
    /// Unbiased sample variance over members, per test point.
    pub variance: Vec<f64>,
    pub seeds: Vec<u64>,
    /// `predictions[m][t]` is member `m`'s output at test point `t`.
    pub predictions: Vec<Vec<f64>>,
}

impl EnsembleStats {
    /// Mean squared error of each member against `labels`, averaged over members.
    pub fn member_mse(&self, labels: &[f64]) -> f64 {
        let per: Vec<f64> = self
            .predictions
            .iter()
            .map(|p| p.iter().zip(labels).map(|(f, y)| (f - y) * (f - y)).sum::<f64>() / labels.len() as f64)
            .collect();
        crate::stats::mean(&per)
    }
}

/// Trains `n_seeds` networks on `data` and evaluates them on `test`.
///
/// Member `i` is initialized from `seeds/member/i`. With an empty training
/// set the members are evaluated at initialization.
pub fn ensemble_statistics(
    arch: &MlpArchitecture,
    data: &LabeledSet,
    test: &[Vec<f64>],
    n_seeds: usize,
    cfg: &TrainConfig,
    seeds: &SeedTree,
) -> Result<EnsembleStats> {
    if n_seeds < 2 {
        return Err(Error::pre("ensemble needs at least 2 members"));
    }
    let members = seeds.child("member");
    let mut predictions = Vec::with_capacity(n_seeds);
    let mut used = Vec::with_capacity(n_seeds);
    for i in 0..n_seeds {
        let seed = members.index(i as u64).seed();
        used.push(seed);
        let p = init_network(arch, seed)?;
        let p = if data.is_empty() { p } else { train(&p, data, cfg)?.params };
        predictions.push(p.forward_batch(test)?);
    }
    let t = test.len();
    let mut mean = vec![0.0; t];
    let mut variance = vec![0.0; t];
    for j in 0..t {
        let col: Vec<f64> = predictions.iter().map(|p| p[j]).collect();
        mean[j] = crate::stats::mean(&col);
        variance[j] = crate::stats::sample_variance(&col);
    }
    Ok(EnsembleStats {
        mean,
        variance,
        seeds: used,
        predictions,
    })
}
