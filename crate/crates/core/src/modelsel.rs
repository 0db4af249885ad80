//! Bootstrap model selection over candidate architectures.
//!
//! For a holdout `D_T` and the remaining data `X`, the expected holdout loss
//! of the converged network is `½ Σ_{D_T} [(y − μ(x|X))² + σ²_NN(x|X)]`; the
//! score of a candidate is minus its mean over random holdouts.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::nn_moments;
use crate::kernel::{gram, MlpArchitecture};
use crate::nn::LabeledSet;
use crate::rng::SeedTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub candidates: Vec<MlpArchitecture>,
}

impl CandidatePool {
    /// ReLU MLPs of depths `depths` sharing the remaining settings of `base`.
    pub fn relu_depths(base: &MlpArchitecture, depths: &[usize]) -> Self {
        CandidatePool {
            candidates: depths
                .iter()
                .map(|&d| MlpArchitecture { depth: d, ..base.clone() })
                .collect(),
        }
    }

    fn validate(&self, input_dim: usize) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::pre("candidate pool is empty"));
        }
        for c in &self.candidates {
            c.validate()?;
            if c.input_dim != input_dim {
                return Err(Error::ShapeMismatch {
                    expected: input_dim,
                    got: c.input_dim,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Holdout size; `None` means `ceil(0.3 |D|)`.
    pub kappa: Option<usize>,
    pub resamples: usize,
    #[serde(with = "crate::rng::seed_serde")]
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            kappa: None,
            resamples: 100,
            seed: 0,
        }
    }
}

pub fn resolve_kappa(n: usize, kappa: Option<usize>) -> usize {
    kappa.unwrap_or_else(|| (0.3 * n as f64).ceil() as usize)
}

/// `resamples` holdouts of size `kappa`, each drawn without replacement.
pub fn holdout_splits(n: usize, kappa: usize, resamples: usize, seeds: &SeedTree) -> Result<Vec<Vec<usize>>> {
    if kappa < 1 || kappa >= n {
        return Err(Error::pre(format!("holdout size {kappa} must lie in 1..{n}")));
    }
    if resamples < 1 {
        return Err(Error::pre("need at least one resample"));
    }
    Ok((0..resamples)
        .map(|s| {
            let mut rng = seeds.index(s as u64).rng();
            let mut v = sample(&mut rng, n, kappa).into_vec();
            v.sort_unstable();
            v
        })
        .collect())
}

fn complement(n: usize, holdout: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in holdout {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

fn alpha_hat_on(
    theta: &nalgebra::DMatrix<f64>,
    nngp: &nalgebra::DMatrix<f64>,
    labels: &[f64],
    train: &[usize],
    test: &[usize],
) -> Result<f64> {
    let y: Vec<f64> = train.iter().map(|&i| labels[i]).collect();
    let m = nn_moments(theta, nngp, train, Some(&y), test, 0.0)?;
    Ok(0.5
        * test
            .iter()
            .zip(&m)
            .map(|(&t, mo)| (labels[t] - mo.mean).powi(2) + mo.var_nn)
            .sum::<f64>())
}

/// Expected squared holdout error of the converged network trained on `train`.
pub fn alpha_hat_m(arch: &MlpArchitecture, train: &LabeledSet, test: &LabeledSet) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::pre("holdout set is empty"));
    }
    let mut pts = train.inputs.clone();
    pts.extend(test.inputs.iter().cloned());
    let mut labels = train.labels.clone();
    labels.extend_from_slice(&test.labels);
    let kp = gram(arch, &pts)?;
    let tr: Vec<usize> = (0..train.len()).collect();
    let te: Vec<usize> = (train.len()..pts.len()).collect();
    alpha_hat_on(&kp.theta, &kp.nngp, &labels, &tr, &te)
}

/// Per-split `α̂` values for one candidate on precomputed holdouts.
pub fn alpha_hat_splits(arch: &MlpArchitecture, data: &LabeledSet, splits: &[Vec<usize>]) -> Result<Vec<f64>> {
    let kp = gram(arch, &data.inputs)?;
    splits
        .iter()
        .map(|h| alpha_hat_on(&kp.theta, &kp.nngp, &data.labels, &complement(data.len(), h), h))
        .collect()
}

/// Bootstrap score: minus the mean holdout loss.
pub fn alpha_m(arch: &MlpArchitecture, data: &LabeledSet, config: &BootstrapConfig) -> Result<f64> {
    let kappa = resolve_kappa(data.len(), config.kappa);
    let splits = holdout_splits(data.len(), kappa, config.resamples, &SeedTree::root(config.seed))?;
    let v = alpha_hat_splits(arch, data, &splits)?;
    Ok(-crate::stats::mean(&v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelChoice {
    pub index: usize,
    pub arch: MlpArchitecture,
    /// `α_M` per candidate, in pool order.
    pub scores: Vec<f64>,
}

/// Argmax of `α_M` over the pool; every candidate sees the same holdouts.
pub fn select_model(pool: &CandidatePool, data: &LabeledSet, config: &BootstrapConfig) -> Result<ModelChoice> {
    let dim = data.inputs.first().map_or(0, |x| x.len());
    pool.validate(dim)?;
    let kappa = resolve_kappa(data.len(), config.kappa);
    let splits = holdout_splits(data.len(), kappa, config.resamples, &SeedTree::root(config.seed))?;
    let mut scores = Vec::with_capacity(pool.candidates.len());
    for c in &pool.candidates {
        scores.push(-crate::stats::mean(&alpha_hat_splits(c, data, &splits)?));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(ModelChoice {
        index: best,
        arch: pool.candidates[best].clone(),
        scores,
    })
}
