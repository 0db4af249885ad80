//! Analytic infinite-width kernels for scaled-ReLU MLPs.
//!
//! Both kernels come out of one layer recursion on the cosine
//! `r = K(x,x') / sqrt(K(x,x) K(x',x'))`:
//!
//! ```text
//! K0(x,x') = x.x'
//! Kl       = sqrt(u) * rho(r) + sb^2,   Kdot_l = rho'(r)
//! Theta_l  = Theta_{l-1} * Kdot_l + Kl,  Theta_0 = 0
//! ```
//!
//! with `u = K_{l-1}(x,x) K_{l-1}(x',x')`, run for `l = 1..=L+1`. On the
//! diagonal `Kl(x,x) = |x|^2 + l sb^2` in closed form.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Slack allowed on a cosine before it counts as out of domain.
pub const COS_TOL: f64 = 1e-9;

/// A fully connected ReLU network shape and its initialization scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    /// Number of hidden layers `L`.
    pub depth: usize,
    pub input_dim: usize,
    /// Width of every hidden layer. Only the finite-width network reads it.
    pub hidden_width: usize,
    pub sigma_w: f64,
    pub sigma_b: f64,
}

impl MlpArchitecture {
    pub fn new(depth: usize, input_dim: usize, hidden_width: usize, sigma_w: f64, sigma_b: f64) -> Self {
        MlpArchitecture {
            depth,
            input_dim,
            hidden_width,
            sigma_w,
            sigma_b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::pre("depth must be at least 1"));
        }
        if self.input_dim < 1 {
            return Err(Error::pre("input dimension must be at least 1"));
        }
        if self.hidden_width < 1 {
            return Err(Error::pre("hidden width must be at least 1"));
        }
        if !(self.sigma_w > 0.0 && self.sigma_w.is_finite()) {
            return Err(Error::pre("sigma_w must be positive"));
        }
        if !(self.sigma_b >= 0.0 && self.sigma_b.is_finite()) {
            return Err(Error::pre("sigma_b must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Analytic,
    Empirical,
    MonteCarlo,
}

/// Θ and K evaluated on a pair of index sets.
#[derive(Debug, Clone)]
pub struct KernelPair {
    pub theta: DMatrix<f64>,
    pub nngp: DMatrix<f64>,
    /// Dataset index of each row.
    pub row_index: Vec<usize>,
    /// Dataset index of each column.
    pub col_index: Vec<usize>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasRegime {
    WithBias,
    ZeroBias,
}

/// Bounds `a_minus <= K/Θ <= a_plus` on the kernel ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioBounds {
    pub a_minus: f64,
    pub a_plus: f64,
    pub regime: BiasRegime,
}

impl RatioBounds {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a_minus + self.a_plus)
    }
}

fn clamp_cos(r: f64) -> Result<f64> {
    if !r.is_finite() || r > 1.0 + COS_TOL || r < -1.0 - COS_TOL {
        return Err(Error::Domain(r));
    }
    Ok(r.clamp(-1.0, 1.0))
}

/// Scaled-ReLU dual activation on the cosine.
pub fn rho(r: f64) -> Result<f64> {
    let r = clamp_cos(r)?;
    Ok(rho_unchecked(r))
}

/// Derivative of [`rho`].
pub fn rho_prime(r: f64) -> Result<f64> {
    let r = clamp_cos(r)?;
    Ok(rho_prime_unchecked(r))
}

#[inline]
fn rho_unchecked(r: f64) -> f64 {
    ((1.0 - r * r).max(0.0).sqrt() + (PI - r.acos()) * r) / PI
}

#[inline]
fn rho_prime_unchecked(r: f64) -> f64 {
    (PI - r.acos()) / PI
}

/// Runs the joint recursion from squared norms and the inner product.
/// Returns `(K, Θ)` at layer `L + 1`.
fn recursion(depth: usize, sb2: f64, nx: f64, ny: f64, dot: f64) -> Result<(f64, f64)> {
    let mut k = dot;
    let mut theta = 0.0;
    for l in 1..=depth + 1 {
        let prev = (l - 1) as f64 * sb2;
        let u = (nx + prev) * (ny + prev);
        let (kn, kdot) = if u > 0.0 {
            let su = u.sqrt();
            let r = clamp_cos(k / su)?;
            (su * rho_unchecked(r) + sb2, rho_prime_unchecked(r))
        } else {
            // Only reachable at l = 1 with a zero-norm input and sb > 0; Θ_0 = 0
            // makes the derivative irrelevant.
            (sb2, 0.0)
        };
        k = kn;
        theta = theta * kdot + k;
    }
    Ok((k, theta))
}

fn check_point(arch: &MlpArchitecture, x: &[f64], index: usize) -> Result<f64> {
    if x.len() != arch.input_dim {
        return Err(Error::ShapeMismatch {
            expected: arch.input_dim,
            got: x.len(),
        });
    }
    let n2: f64 = x.iter().map(|v| v * v).sum();
    if n2 == 0.0 && arch.sigma_b == 0.0 {
        return Err(Error::DegenerateInput { index });
    }
    Ok(n2)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Both analytic kernels for one pair, `(K, Θ)`.
pub fn kernel_pair(arch: &MlpArchitecture, x: &[f64], xp: &[f64]) -> Result<(f64, f64)> {
    let nx = check_point(arch, x, 0)?;
    let ny = check_point(arch, xp, 1)?;
    recursion(arch.depth, arch.sigma_b * arch.sigma_b, nx, ny, dot(x, xp))
}

/// NNGP kernel `K(x, x')`.
pub fn nngp_pair(arch: &MlpArchitecture, x: &[f64], xp: &[f64]) -> Result<f64> {
    kernel_pair(arch, x, xp).map(|p| p.0)
}

/// Neural tangent kernel `Θ(x, x')`.
pub fn ntk_pair(arch: &MlpArchitecture, x: &[f64], xp: &[f64]) -> Result<f64> {
    kernel_pair(arch, x, xp).map(|p| p.1)
}

/// All pairwise kernel values between `xs` (rows) and `ys` (columns).
///
/// Degenerate points are reported with their position in `xs`, or with
/// `xs.len() + j` for position `j` in `ys`.
pub fn kernel_matrices(arch: &MlpArchitecture, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<KernelPair> {
    let nx: Vec<f64> = xs
        .iter()
        .enumerate()
        .map(|(i, x)| check_point(arch, x, i))
        .collect::<Result<_>>()?;
    let ny: Vec<f64> = ys
        .iter()
        .enumerate()
        .map(|(j, y)| check_point(arch, y, xs.len() + j))
        .collect::<Result<_>>()?;
    let sb2 = arch.sigma_b * arch.sigma_b;
    let mut theta = DMatrix::zeros(xs.len(), ys.len());
    let mut nngp = DMatrix::zeros(xs.len(), ys.len());
    for i in 0..xs.len() {
        for j in 0..ys.len() {
            let (k, t) = recursion(arch.depth, sb2, nx[i], ny[j], dot(&xs[i], &ys[j]))?;
            nngp[(i, j)] = k;
            theta[(i, j)] = t;
        }
    }
    Ok(KernelPair {
        theta,
        nngp,
        row_index: (0..xs.len()).collect(),
        col_index: (0..ys.len()).collect(),
        provenance: Provenance::Analytic,
    })
}

/// Symmetric kernel matrices on one point set; only the upper triangle is computed.
pub fn gram(arch: &MlpArchitecture, xs: &[Vec<f64>]) -> Result<KernelPair> {
    let norms: Vec<f64> = xs
        .iter()
        .enumerate()
        .map(|(i, x)| check_point(arch, x, i))
        .collect::<Result<_>>()?;
    let sb2 = arch.sigma_b * arch.sigma_b;
    let n = xs.len();
    let mut theta = DMatrix::zeros(n, n);
    let mut nngp = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let (k, t) = recursion(arch.depth, sb2, norms[i], norms[j], dot(&xs[i], &xs[j]))?;
            nngp[(i, j)] = k;
            nngp[(j, i)] = k;
            theta[(i, j)] = t;
            theta[(j, i)] = t;
        }
    }
    Ok(KernelPair {
        theta,
        nngp,
        row_index: (0..n).collect(),
        col_index: (0..n).collect(),
        provenance: Provenance::Analytic,
    })
}

fn rho_iter(r: f64, times: usize) -> f64 {
    (0..times).fold(r, |acc, _| rho_unchecked(acc))
}

/// Bounds on `K/Θ` over all input pairs, for `L >= 2`.
pub fn ratio_bounds(arch: &MlpArchitecture) -> Result<RatioBounds> {
    let depth = arch.depth;
    if depth < 2 {
        return Err(Error::pre(format!("ratio bounds need depth >= 2, got {depth}")));
    }
    let (lower, upper, regime) = if arch.sigma_b == 0.0 {
        // Θ/K >= sum_l rho^l(-1) / rho^{L+1}(1) * prod_{l'>l} rho'(rho^{l'}(-1))
        let top = rho_iter(1.0, depth + 1);
        let mut lower = 0.0;
        for l in 1..=depth + 1 {
            let mut term = rho_iter(-1.0, l) / top;
            for lp in l + 1..=depth + 1 {
                term *= rho_prime_unchecked(rho_iter(-1.0, lp));
            }
            lower += term;
        }
        let upper = (depth + 1) as f64 / rho_iter(-1.0, depth + 1);
        (lower, upper, BiasRegime::ZeroBias)
    } else {
        // r_hat[1] = -1, r_hat[l] = rho(r_hat[l-1]) (l-2)/(l-1)
        let mut r_hat = vec![0.0; depth + 2];
        r_hat[1] = -1.0;
        for l in 2..=depth + 1 {
            r_hat[l] = rho_unchecked(r_hat[l - 1]) * (l - 2) as f64 / (l - 1) as f64;
        }
        let mut lower = 1.0;
        for l in 1..=depth {
            let mut term = rho_unchecked(r_hat[l]) * (l - 1) as f64 / (depth + 1) as f64;
            for lp in l + 1..=depth + 1 {
                term *= rho_prime_unchecked(r_hat[lp]);
            }
            lower += term;
        }
        let upper = 1.0 + depth as f64 / rho_unchecked(r_hat[depth + 1]);
        (lower, upper, BiasRegime::WithBias)
    };
    let b = RatioBounds {
        a_minus: 1.0 / upper,
        a_plus: 1.0 / lower,
        regime,
    };
    if !(b.a_minus > 0.0 && b.a_minus <= b.a_plus && b.a_plus.is_finite()) {
        return Err(Error::Singular(format!("ratio bounds degenerate: {b:?}")));
    }
    Ok(b)
}

/// Sup bound on `|σ²_NN − α σ²_NTKGP|`.
pub fn beta_bound(n: usize, b: f64, lambda_min: f64, alpha: f64, bounds: &RatioBounds) -> Result<f64> {
    if n < 1 || !(b > 0.0) || !(lambda_min > 0.0) {
        return Err(Error::pre("beta bound needs n >= 1, B > 0, lambda_min > 0"));
    }
    if alpha < bounds.a_minus || alpha > bounds.a_plus {
        return Err(Error::pre(format!(
            "alpha {alpha} outside [{}, {}]",
            bounds.a_minus, bounds.a_plus
        )));
    }
    let gamma = b * (alpha - bounds.a_minus).max(bounds.a_plus - alpha);
    let n = n as f64;
    Ok(gamma + n * gamma * b * b / (lambda_min * lambda_min) + 2.0 * n * gamma * b / lambda_min)
}

/// Range of the ratio between the network and NTKGP expected-variance criteria.
pub fn ev_ratio_bounds(lambda_min: f64, b: f64, bounds: &RatioBounds) -> Result<(f64, f64)> {
    if !(b > 0.0) || !(lambda_min > 0.0) {
        return Err(Error::pre("EV ratio bounds need B > 0 and lambda_min > 0"));
    }
    let lo = 2.0 * bounds.a_minus * lambda_min / b - bounds.a_plus * b / lambda_min;
    let hi = 2.0 * bounds.a_plus * b / lambda_min;
    Ok((lo, hi))
}
