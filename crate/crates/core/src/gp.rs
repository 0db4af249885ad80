//! Exact NTKGP posterior with incremental conditioning.
//!
//! A [`PosteriorState`] lives on a fixed universe of points (typically pool
//! and test set together) whose tangent-kernel Gram matrix is shared. It keeps
//! the Cholesky factor `L` of `Θ_X + jitter·I` for the selected set `X`, and for
//! every universe point `u` the projection `L⁻¹ Θ_{X,u}`, so that
//! `σ²(u|X) = Θ_uu − ‖L⁻¹ Θ_{X,u}‖²`. Appending a point adds one row to `L`
//! and one entry to every projection, which costs `O(N·n)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_ladder, submatrix, JITTER_LADDER};

/// Relative pivot size below which an append counts as singular.
pub const PIVOT_TOL: f64 = 1e-12;

/// Default diagonal jitter for selection runs.
pub const DEFAULT_JITTER: f64 = 1e-10;

/// A pivot below this many jitters triggers escalation.
pub const NEAR_SINGULAR: f64 = 4.0;

/// A variance provider that can be conditioned one point at a time.
///
/// All indices refer to a universe fixed at construction.
pub trait VarianceModel {
    fn universe_size(&self) -> usize;
    fn selected(&self) -> &[usize];
    /// Variance with no conditioning data.
    fn prior_variance(&self, u: usize) -> f64;
    fn variance(&self, u: usize) -> f64;
    fn covariance(&self, u: usize, v: usize) -> f64;
    /// Effect of conditioning on `c` without committing it.
    ///
    /// Returns `(g, pivot)` with `g[i]` paired with `targets[i]`; after
    /// conditioning, `Cov(t, t')` drops by `g_t g_t' / pivot`.
    fn update_direction(&self, c: usize, targets: &[usize]) -> (Vec<f64>, f64);
    fn condition(&mut self, c: usize) -> Result<()>;
    /// True if conditioning ever needed more jitter than configured.
    fn jitter_escalated(&self) -> bool {
        false
    }
}

/// Variance reduction at each target from conditioning on `c`.
pub fn variance_reductions(model: &dyn VarianceModel, c: usize, targets: &[usize]) -> Vec<f64> {
    let (g, pivot) = model.update_direction(c, targets);
    let floor = PIVOT_TOL * model.prior_variance(c).max(1.0);
    if !(pivot > floor) {
        return vec![0.0; targets.len()];
    }
    g.iter().map(|x| x * x / pivot).collect()
}

#[derive(Debug, Clone)]
pub struct PosteriorState {
    gram: Arc<DMatrix<f64>>,
    selected: Vec<usize>,
    is_selected: Vec<bool>,
    /// Row `i` of the lower-triangular factor holds `i + 1` entries.
    factor: Vec<Vec<f64>>,
    /// `proj[u] = L⁻¹ Θ_{X,u}`.
    proj: Vec<Vec<f64>>,
    base_jitter: f64,
    jitter: f64,
    escalated: bool,
    noise: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl PosteriorState {
    pub fn new(gram: Arc<DMatrix<f64>>, jitter: f64) -> Result<Self> {
        if !gram.is_square() {
            return Err(Error::pre("Gram matrix must be square"));
        }
        if !(jitter >= 0.0) {
            return Err(Error::pre("jitter must be nonnegative"));
        }
        let n = gram.nrows();
        Ok(PosteriorState {
            gram,
            selected: Vec::new(),
            is_selected: vec![false; n],
            factor: Vec::new(),
            proj: vec![Vec::new(); n],
            base_jitter: jitter,
            jitter,
            escalated: false,
            noise: 0.0,
        })
    }

    /// Builds the state for `selected` from scratch.
    pub fn rebuild(gram: Arc<DMatrix<f64>>, selected: &[usize], jitter: f64) -> Result<Self> {
        let mut s = PosteriorState::new(gram, jitter)?;
        for &i in selected {
            s.append(i)?;
        }
        Ok(s)
    }

    /// Adds observation-noise variance to the conditioning diagonal.
    pub fn with_noise(mut self, noise_variance: f64) -> Result<Self> {
        if !self.selected.is_empty() {
            return Err(Error::pre("noise must be set before conditioning"));
        }
        if !(noise_variance >= 0.0) {
            return Err(Error::pre("noise variance must be nonnegative"));
        }
        self.noise = noise_variance;
        Ok(self)
    }

    pub fn gram(&self) -> &Arc<DMatrix<f64>> {
        &self.gram
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn escalated(&self) -> bool {
        self.escalated
    }

    pub fn is_selected(&self, u: usize) -> bool {
        self.is_selected[u]
    }

    /// The lower-triangular factor as a dense matrix.
    pub fn factor_matrix(&self) -> DMatrix<f64> {
        let n = self.selected.len();
        DMatrix::from_fn(n, n, |i, j| if j <= i { self.factor[i][j] } else { 0.0 })
    }

    fn diag_shift(&self) -> f64 {
        self.jitter + self.noise
    }

    /// Tries one append at the current jitter; `Ok(false)` if the pivot is too small.
    ///
    /// Below the top of the ladder a pivot within a few jitters of zero also
    /// counts as too small: the jitter alone is holding the factor together.
    fn try_append(&mut self, s: usize) -> Result<bool> {
        let g = &*self.gram;
        let l = self.proj[s].clone();
        let tss = g[(s, s)];
        let d2 = tss + self.diag_shift() - dot(&l, &l);
        let mut floor = PIVOT_TOL * tss.max(1.0);
        if self.jitter < JITTER_LADDER[JITTER_LADDER.len() - 1] {
            floor += NEAR_SINGULAR * self.jitter;
        }
        if !(d2 > floor) {
            return Ok(false);
        }
        let d = d2.sqrt();
        for u in 0..g.nrows() {
            let e = (g[(s, u)] - dot(&l, &self.proj[u])) / d;
            self.proj[u].push(e);
        }
        let mut row = l;
        row.push(d);
        self.factor.push(row);
        self.selected.push(s);
        self.is_selected[s] = true;
        Ok(true)
    }

    fn reset_to(&mut self, jitter: f64) {
        let n = self.gram.nrows();
        self.selected.clear();
        self.is_selected = vec![false; n];
        self.factor.clear();
        self.proj = vec![Vec::new(); n];
        self.jitter = jitter;
    }

    /// Conditions on universe point `s`, escalating jitter if the factor would break.
    pub fn append(&mut self, s: usize) -> Result<()> {
        if s >= self.gram.nrows() {
            return Err(Error::pre(format!("index {s} outside universe")));
        }
        if self.is_selected[s] {
            return Err(Error::DuplicateIndex(s));
        }
        if self.try_append(s)? {
            return Ok(());
        }
        let backup = self.clone();
        let mut order = self.selected.clone();
        order.push(s);
        let current = self.jitter;
        for &j in JITTER_LADDER.iter().filter(|&&j| j > current) {
            self.reset_to(j);
            self.escalated = true;
            let mut ok = true;
            for &i in &order {
                if !self.try_append(i)? {
                    ok = false;
                    break;
                }
            }
            if ok {
                return Ok(());
            }
        }
        *self = backup;
        Err(Error::Singular(format!(
            "conditioning on index {s} fails at jitter {:e}",
            JITTER_LADDER[JITTER_LADDER.len() - 1]
        )))
    }

    /// Copy of the state with `s` appended.
    pub fn appended(&self, s: usize) -> Result<Self> {
        let mut c = self.clone();
        c.append(s)?;
        Ok(c)
    }

    /// Restarts from the configured jitter with a new Gram matrix, keeping the selection.
    pub fn refresh(&mut self, gram: Arc<DMatrix<f64>>) -> Result<()> {
        let order = self.selected.clone();
        let mut s = PosteriorState::new(gram, self.base_jitter)?;
        s.noise = self.noise;
        for i in order {
            s.append(i)?;
        }
        *self = s;
        Ok(())
    }

    /// Solves `L w = y` for the current factor.
    fn forward_solve(&self, y: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; y.len()];
        for i in 0..y.len() {
            let row = &self.factor[i];
            w[i] = (y[i] - dot(&row[..i], &w[..i])) / row[i];
        }
        w
    }

    /// Posterior weights for labels `y`: `L⁻¹ y`.
    pub fn label_weights(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.selected.len() {
            return Err(Error::ShapeMismatch {
                expected: self.selected.len(),
                got: y.len(),
            });
        }
        Ok(self.forward_solve(y))
    }

    /// Posterior mean `Θ_{uX} (Θ_X + jitter I)⁻¹ y`; zero with nothing selected.
    pub fn mean(&self, y: &[f64], u: usize) -> Result<f64> {
        let w = self.label_weights(y)?;
        Ok(dot(&self.proj[u], &w))
    }

    pub fn mean_with_weights(&self, w: &[f64], u: usize) -> f64 {
        dot(&self.proj[u], w)
    }
}

impl VarianceModel for PosteriorState {
    fn universe_size(&self) -> usize {
        self.gram.nrows()
    }

    fn selected(&self) -> &[usize] {
        &self.selected
    }

    fn prior_variance(&self, u: usize) -> f64 {
        self.gram[(u, u)]
    }

    fn variance(&self, u: usize) -> f64 {
        (self.gram[(u, u)] - dot(&self.proj[u], &self.proj[u])).max(0.0)
    }

    fn covariance(&self, u: usize, v: usize) -> f64 {
        if u == v {
            return self.variance(u);
        }
        self.gram[(u, v)] - dot(&self.proj[u], &self.proj[v])
    }

    fn update_direction(&self, c: usize, targets: &[usize]) -> (Vec<f64>, f64) {
        let pc = &self.proj[c];
        let g: Vec<f64> = targets
            .iter()
            .map(|&t| self.gram[(t, c)] - dot(&self.proj[t], pc))
            .collect();
        let pivot = self.gram[(c, c)] - dot(pc, pc) + self.diag_shift();
        (g, pivot)
    }

    fn condition(&mut self, c: usize) -> Result<()> {
        self.append(c)
    }

    fn jitter_escalated(&self) -> bool {
        self.escalated
    }
}

/// Posterior mean and both variances at one test point, from dense solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnMoments {
    pub mean: f64,
    /// Converged-network output variance.
    pub var_nn: f64,
    pub var_ntkgp: f64,
}

/// Mean, network variance and NTKGP variance at each column of `tests`.
///
/// `theta` and `nngp` cover a universe containing both `selected` and `tests`.
/// With nothing selected the prior is returned: mean 0, variances `K_x` and `Θ_x`.
pub fn nn_moments(
    theta: &DMatrix<f64>,
    nngp: &DMatrix<f64>,
    selected: &[usize],
    labels: Option<&[f64]>,
    tests: &[usize],
    jitter: f64,
) -> Result<Vec<NnMoments>> {
    if let Some(y) = labels {
        if y.len() != selected.len() {
            return Err(Error::ShapeMismatch {
                expected: selected.len(),
                got: y.len(),
            });
        }
    }
    if selected.is_empty() {
        return Ok(tests
            .iter()
            .map(|&t| NnMoments {
                mean: 0.0,
                var_nn: nngp[(t, t)],
                var_ntkgp: theta[(t, t)],
            })
            .collect());
    }
    let f = cholesky_ladder(&submatrix(theta, selected, selected), jitter)?;
    let kx = submatrix(nngp, selected, selected);
    let cross = submatrix(theta, selected, tests);
    let kcross = submatrix(nngp, selected, tests);
    // v = Θ_X⁻¹ Θ_{X,t}, one column per test point.
    let v = f.chol.solve(&cross);
    let alpha = labels.map(|y| f.chol.solve(&DVector::from_column_slice(y)));
    let kv = &kx * &v;
    Ok(tests
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let vj = v.column(j);
            let quad_k = vj.dot(&kv.column(j));
            let cross_k = vj.dot(&kcross.column(j));
            let quad_t = vj.dot(&cross.column(j));
            NnMoments {
                mean: alpha.as_ref().map_or(0.0, |a| cross.column(j).dot(a)),
                var_nn: nngp[(t, t)] + quad_k - 2.0 * cross_k,
                var_ntkgp: theta[(t, t)] - quad_t,
            }
        })
        .collect())
}

/// Converged-network output variance at universe point `x` given `selected`.
pub fn variance_nn(theta: &DMatrix<f64>, nngp: &DMatrix<f64>, selected: &[usize], x: usize, jitter: f64) -> Result<f64> {
    Ok(nn_moments(theta, nngp, selected, None, &[x], jitter)?[0].var_nn)
}

/// Parameters of the high-probability generalization bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundParams {
    /// RKHS-norm bound on the target function.
    pub b: f64,
    /// Sub-Gaussian noise scale.
    pub r: f64,
    pub lambda: f64,
    pub delta: f64,
}

/// `[B + (R/λ + 1) √(2 ln(1/δ))] σ`.
pub fn error_bound(p: &ErrorBoundParams, sigma_ntkgp: f64) -> Result<f64> {
    if !(p.b >= 0.0 && p.r >= 0.0 && p.lambda > 0.0 && p.delta > 0.0 && p.delta < 0.5) {
        return Err(Error::pre(format!("invalid error-bound parameters {p:?}")));
    }
    if !(sigma_ntkgp >= 0.0) {
        return Err(Error::pre("sigma must be nonnegative"));
    }
    Ok((p.b + (p.r / p.lambda + 1.0) * (2.0 * (1.0 / p.delta).ln()).sqrt()) * sigma_ntkgp)
}
