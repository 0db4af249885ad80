#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ntk_active::rng::SeedTree;
use ntk_active::MlpArchitecture;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn arch(depth: usize, dim: usize, sigma_b: f64) -> MlpArchitecture {
    MlpArchitecture::new(depth, dim, 64, 1.0, sigma_b)
}

pub fn gaussian_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeedTree::root(seed).child("points").rng();
    (0..n)
        .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

pub fn unit_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    gaussian_points(n, dim, seed)
        .into_iter()
        .map(|v| {
            let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

pub fn sub(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// `Θ_x − Θ_xX Θ_X⁻¹ Θ_Xx` through an explicit dense inverse.
pub fn dense_variance(theta: &DMatrix<f64>, sel: &[usize], x: usize) -> f64 {
    if sel.is_empty() {
        return theta[(x, x)];
    }
    let inv = sub(theta, sel, sel).try_inverse().expect("invertible");
    let k = DVector::from_fn(sel.len(), |i, _| theta[(sel[i], x)]);
    theta[(x, x)] - (k.transpose() * inv * &k)[(0, 0)]
}

/// Posterior variance at every point from a fresh Cholesky factor of `Θ_X + jitter·I`.
pub fn cholesky_variances(theta: &DMatrix<f64>, sel: &[usize], jitter: f64) -> Vec<f64> {
    let n = theta.nrows();
    if sel.is_empty() {
        return (0..n).map(|u| theta[(u, u)]).collect();
    }
    let kxx = sub(theta, sel, sel) + DMatrix::identity(sel.len(), sel.len()) * jitter;
    let l = kxx.cholesky().expect("positive definite").unpack();
    let all: Vec<usize> = (0..n).collect();
    let w = l.solve_lower_triangular(&sub(theta, sel, &all)).expect("nonsingular");
    (0..n).map(|u| theta[(u, u)] - w.column(u).norm_squared()).collect()
}

/// `Θ_xX Θ_X⁻¹ y` through an explicit dense inverse.
pub fn dense_mean(theta: &DMatrix<f64>, sel: &[usize], y: &[f64], x: usize) -> f64 {
    if sel.is_empty() {
        return 0.0;
    }
    let inv = sub(theta, sel, sel).try_inverse().expect("invertible");
    let k = DVector::from_fn(sel.len(), |i, _| theta[(sel[i], x)]);
    (k.transpose() * inv * DVector::from_column_slice(y))[(0, 0)]
}

/// Converged-network variance through an explicit dense inverse.
pub fn dense_variance_nn(theta: &DMatrix<f64>, nngp: &DMatrix<f64>, sel: &[usize], x: usize) -> f64 {
    if sel.is_empty() {
        return nngp[(x, x)];
    }
    let inv = sub(theta, sel, sel).try_inverse().expect("invertible");
    let t = DVector::from_fn(sel.len(), |i, _| theta[(sel[i], x)]);
    let k = DVector::from_fn(sel.len(), |i, _| nngp[(sel[i], x)]);
    let a = &inv * &t;
    nngp[(x, x)] + (a.transpose() * sub(nngp, sel, sel) * &a)[(0, 0)] - 2.0 * a.dot(&k)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
