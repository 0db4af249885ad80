//! FIC sparse approximation of the NTKGP posterior.
//!
//! With inducing set `U`, `k_u = Θ_{U,u}`, `Q_u = k_uᵀ Θ_U⁻¹ k_u` and
//! `Γ_x = Θ_x − Q_x + floor`, conditioning on data `X` gives
//!
//! ```text
//! A   = Θ_U + Σ_x k_x k_xᵀ / Γ_x
//! Σ_U = Θ_U A⁻¹ Θ_U,   μ_U = Θ_U A⁻¹ Σ_x k_x y_x / Γ_x
//! σ²(u) = Θ_u − Q_u + k_uᵀ A⁻¹ k_u
//! ```
//!
//! Each new data point is a rank-one change to `A`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gp::{VarianceModel, DEFAULT_JITTER};
use crate::linalg::{cholesky_ladder, submatrix};
use crate::rng::SeedTree;
use crate::seeding::kmeanspp;
use crate::stats::median;

/// Relative size of the default noise floor against the median prior variance.
pub const NOISE_FLOOR_SCALE: f64 = 1e-6;

/// Picks `m` inducing points from `points` by k-means++ seeding, in selection order.
pub fn select_inducing(points: &[Vec<f64>], m: usize, seeds: &SeedTree) -> Result<Vec<usize>> {
    kmeanspp(points, m, seeds)
}

/// Default noise floor for a universe Gram matrix.
pub fn default_noise_floor(gram: &DMatrix<f64>) -> f64 {
    let d: Vec<f64> = (0..gram.nrows()).map(|i| gram[(i, i)]).collect();
    NOISE_FLOOR_SCALE * median(&d)
}

#[derive(Debug, Clone)]
pub struct InducingState {
    gram: Arc<DMatrix<f64>>,
    inducing: Vec<usize>,
    theta_u: DMatrix<f64>,
    jitter: f64,
    noise_floor: f64,
    /// `L_U⁻¹ Θ_{U,·}` for every universe point.
    w_prior: DMatrix<f64>,
    data: Vec<usize>,
    gamma: Vec<f64>,
    a: DMatrix<f64>,
    a_chol: Cholesky<f64, Dyn>,
    /// `L_A⁻¹ Θ_{U,·}` for every universe point.
    w_post: DMatrix<f64>,
    b: DVector<f64>,
    has_labels: bool,
    escalated: bool,
}

impl InducingState {
    /// Prior state: no data, `Σ_U = Θ_U`, `μ_U = 0`.
    pub fn new(gram: Arc<DMatrix<f64>>, inducing: Vec<usize>, noise_floor: f64) -> Result<Self> {
        InducingState::with_jitter(gram, inducing, noise_floor, DEFAULT_JITTER)
    }

    pub fn with_jitter(gram: Arc<DMatrix<f64>>, inducing: Vec<usize>, noise_floor: f64, jitter: f64) -> Result<Self> {
        if inducing.is_empty() {
            return Err(Error::pre("inducing set is empty"));
        }
        if inducing.iter().any(|&u| u >= gram.nrows()) {
            return Err(Error::pre("inducing index outside universe"));
        }
        if !(noise_floor >= 0.0) {
            return Err(Error::pre("noise floor must be nonnegative"));
        }
        let mut sorted = inducing.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != inducing.len() {
            return Err(Error::pre("inducing indices must be distinct"));
        }
        let raw = submatrix(&gram, &inducing, &inducing);
        let f = cholesky_ladder(&raw, jitter)?;
        let mut theta_u = raw;
        for i in 0..theta_u.nrows() {
            theta_u[(i, i)] += f.jitter;
        }
        let all: Vec<usize> = (0..gram.nrows()).collect();
        let k_all = submatrix(&gram, &inducing, &all);
        let w_prior = f
            .chol
            .l_dirty()
            .solve_lower_triangular(&k_all)
            .ok_or_else(|| Error::Singular("inducing factor".into()))?;
        let m = inducing.len();
        Ok(InducingState {
            w_post: w_prior.clone(),
            a: theta_u.clone(),
            a_chol: f.chol,
            gram,
            inducing,
            theta_u,
            jitter: f.jitter,
            noise_floor,
            w_prior,
            data: Vec::new(),
            gamma: Vec::new(),
            b: DVector::zeros(m),
            has_labels: true,
            escalated: f.escalated,
        })
    }

    pub fn inducing(&self) -> &[usize] {
        &self.inducing
    }

    pub fn noise_floor(&self) -> f64 {
        self.noise_floor
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn k(&self, u: usize) -> DVector<f64> {
        DVector::from_fn(self.inducing.len(), |i, _| self.gram[(self.inducing[i], u)])
    }

    fn q(&self, u: usize) -> f64 {
        self.w_prior.column(u).norm_squared()
    }

    fn gamma_of(&self, x: usize) -> Result<f64> {
        let g = self.gram[(x, x)] - self.q(x) + self.noise_floor;
        // Q_x carries an error of order the jitter, so smaller residuals are noise.
        if !(g > 1e-9 * self.gram[(x, x)].abs() + 10.0 * self.jitter) {
            return Err(Error::Singular(format!(
                "FIC residual variance at index {x} is {g:e}; data point coincides with an inducing point"
            )));
        }
        Ok(g)
    }

    fn refactor(&mut self) -> Result<()> {
        let f = cholesky_ladder(&self.a, 0.0)?;
        self.escalated |= f.escalated;
        let all: Vec<usize> = (0..self.gram.nrows()).collect();
        let k_all = submatrix(&self.gram, &self.inducing, &all);
        self.w_post = f
            .chol
            .l_dirty()
            .solve_lower_triangular(&k_all)
            .ok_or_else(|| Error::Singular("FIC system factor".into()))?;
        self.a_chol = f.chol;
        Ok(())
    }

    fn absorb(&mut self, x: usize, y: Option<f64>) -> Result<()> {
        if self.data.contains(&x) {
            return Err(Error::DuplicateIndex(x));
        }
        let g = self.gamma_of(x)?;
        let k = self.k(x);
        self.a += &k * k.transpose() / g;
        match y {
            Some(y) => self.b += &k * (y / g),
            None => self.has_labels = false,
        }
        self.data.push(x);
        self.gamma.push(g);
        Ok(())
    }

    /// Conditions on `data`, optionally with labels for the mean.
    pub fn fit(&self, data: &[usize], labels: Option<&[f64]>) -> Result<InducingState> {
        if let Some(y) = labels {
            if y.len() != data.len() {
                return Err(Error::ShapeMismatch {
                    expected: data.len(),
                    got: y.len(),
                });
            }
        }
        let mut s = self.clone();
        for (i, &x) in data.iter().enumerate() {
            s.absorb(x, labels.map(|y| y[i]))?;
        }
        if !data.is_empty() {
            s.refactor()?;
        }
        Ok(s)
    }

    /// `Θ_u − Q_u + k_uᵀ A⁻¹ k_u`.
    pub fn sparse_variance(&self, u: usize) -> f64 {
        let correction = self.q(u) - self.w_post.column(u).norm_squared();
        (self.gram[(u, u)] - correction).max(0.0)
    }

    /// `k_uᵀ Θ_U⁻¹ μ_U`; `None` if some data point was absorbed without a label.
    pub fn sparse_mean(&self, u: usize) -> Option<f64> {
        if !self.has_labels {
            return None;
        }
        let alpha = self.a_chol.solve(&self.b);
        Some(self.k(u).dot(&alpha))
    }

    /// Posterior covariance of the inducing outputs.
    pub fn sigma_u(&self) -> DMatrix<f64> {
        let s = &self.theta_u * self.a_chol.solve(&self.theta_u);
        (&s + s.transpose()) * 0.5
    }

    /// Posterior mean of the inducing outputs; zero for unlabelled fits.
    pub fn mu_u(&self) -> DVector<f64> {
        if !self.has_labels {
            return DVector::zeros(self.inducing.len());
        }
        &self.theta_u * self.a_chol.solve(&self.b)
    }

    /// Residual variances `Γ_x` of the absorbed data, in absorption order.
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }
}

impl VarianceModel for InducingState {
    fn universe_size(&self) -> usize {
        self.gram.nrows()
    }

    fn selected(&self) -> &[usize] {
        &self.data
    }

    fn prior_variance(&self, u: usize) -> f64 {
        self.gram[(u, u)]
    }

    fn variance(&self, u: usize) -> f64 {
        self.sparse_variance(u)
    }

    fn covariance(&self, u: usize, v: usize) -> f64 {
        if u == v {
            return self.sparse_variance(u);
        }
        let q = self.w_prior.column(u).dot(&self.w_prior.column(v));
        self.gram[(u, v)] - q + self.w_post.column(u).dot(&self.w_post.column(v))
    }

    fn update_direction(&self, c: usize, targets: &[usize]) -> (Vec<f64>, f64) {
        let wc = self.w_post.column(c);
        let g = targets.iter().map(|&t| self.w_post.column(t).dot(&wc)).collect();
        let gamma = self.gram[(c, c)] - self.q(c) + self.noise_floor;
        (g, gamma + wc.norm_squared())
    }

    fn condition(&mut self, c: usize) -> Result<()> {
        self.absorb(c, None)?;
        self.refactor()
    }

    fn jitter_escalated(&self) -> bool {
        self.escalated
    }
}
