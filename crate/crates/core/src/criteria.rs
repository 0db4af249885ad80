//! Label-free selection criteria over a [`VarianceModel`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gp::{variance_reductions, VarianceModel};
use crate::linalg::{cholesky_ladder, logdet};
use crate::rng::SeedTree;
use crate::seeding::kmeanspp;
use crate::stats::percentile_nearest_rank;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum CriterionKind {
    Ev,
    Mi,
    /// Negative `r`-th percentile of the posterior variance.
    Rv(f64),
}

impl CriterionKind {
    pub fn is_submodular(&self) -> bool {
        matches!(self, CriterionKind::Ev)
    }
}

impl fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CriterionKind::Ev => write!(f, "ev"),
            CriterionKind::Mi => write!(f, "mi"),
            CriterionKind::Rv(r) => write!(f, "rv:{r}"),
        }
    }
}

impl FromStr for CriterionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ev" => Ok(CriterionKind::Ev),
            "mi" => Ok(CriterionKind::Mi),
            _ => {
                let r = s
                    .strip_prefix("rv:")
                    .ok_or_else(|| Error::Config(format!("unknown criterion {s:?}; expected ev, mi or rv:<r>")))?;
                let r: f64 = r
                    .parse()
                    .map_err(|_| Error::Config(format!("bad percentile in {s:?}")))?;
                if !(r > 0.0 && r <= 100.0) {
                    return Err(Error::Config(format!("percentile {r} outside (0, 100]")));
                }
                Ok(CriterionKind::Rv(r))
            }
        }
    }
}

impl From<CriterionKind> for String {
    fn from(v: CriterionKind) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for CriterionKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderId {
    Exact,
    Sparse,
    EmpiricalNtk,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriterionValue {
    pub value: f64,
    pub criterion: CriterionKind,
    pub provider: ProviderId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum RefMethod {
    All,
    Kmeanspp(usize),
}

impl fmt::Display for RefMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RefMethod::All => write!(f, "all"),
            RefMethod::Kmeanspp(m) => write!(f, "kmeanspp:{m}"),
        }
    }
}

impl FromStr for RefMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(RefMethod::All);
        }
        let m = s
            .strip_prefix("kmeanspp:")
            .ok_or_else(|| Error::Config(format!("unknown test reference {s:?}; expected all or kmeanspp:<m>")))?;
        let m: usize = m
            .parse()
            .map_err(|_| Error::Config(format!("bad reference size in {s:?}")))?;
        if m == 0 {
            return Err(Error::Config("reference size must be at least 1".into()));
        }
        Ok(RefMethod::Kmeanspp(m))
    }
}

impl From<RefMethod> for String {
    fn from(v: RefMethod) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for RefMethod {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// The test points a criterion averages over.
#[derive(Debug, Clone, PartialEq)]
pub struct TestReference {
    /// Universe indices.
    pub indices: Vec<usize>,
    pub method: RefMethod,
    pub seed: u64,
}

/// Builds a reference from the test set `test_indices` with coordinates `points`.
pub fn build_test_reference(
    test_indices: &[usize],
    points: &[Vec<f64>],
    method: RefMethod,
    seeds: &SeedTree,
) -> Result<TestReference> {
    if test_indices.len() != points.len() {
        return Err(Error::ShapeMismatch {
            expected: test_indices.len(),
            got: points.len(),
        });
    }
    let indices = match method {
        RefMethod::All => test_indices.to_vec(),
        RefMethod::Kmeanspp(m) => {
            if m == 0 || m > test_indices.len() {
                return Err(Error::pre(format!(
                    "reference size {m} must lie in 1..={}",
                    test_indices.len()
                )));
            }
            kmeanspp(points, m, seeds)?.into_iter().map(|i| test_indices[i]).collect()
        }
    };
    Ok(TestReference {
        indices,
        method,
        seed: seeds.seed(),
    })
}

/// Criterion options beyond the kind itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriterionOptions {
    /// Drop already-selected points from the EV average.
    pub exclude_selected: bool,
    /// MI observation noise standard deviation; `None` picks the default.
    pub mi_noise: Option<f64>,
}

impl Default for CriterionOptions {
    fn default() -> Self {
        CriterionOptions {
            exclude_selected: false,
            mi_noise: None,
        }
    }
}

/// Default MI noise standard deviation: `1e-3` times the mean prior variance over the reference.
pub fn default_mi_noise(model: &dyn VarianceModel, r: &TestReference) -> f64 {
    let m: f64 = r.indices.iter().map(|&i| model.prior_variance(i)).sum::<f64>() / r.indices.len().max(1) as f64;
    1e-3 * m
}

fn check_ref(r: &TestReference) -> Result<()> {
    if r.indices.is_empty() {
        return Err(Error::pre("test reference is empty"));
    }
    Ok(())
}

fn selected_mask(model: &dyn VarianceModel) -> Vec<bool> {
    let mut m = vec![false; model.universe_size()];
    for &s in model.selected() {
        m[s] = true;
    }
    m
}

/// Average drop in variance over the reference relative to the prior.
pub fn alpha_ev(model: &dyn VarianceModel, r: &TestReference, exclude_selected: bool) -> Result<f64> {
    check_ref(r)?;
    let mask = selected_mask(model);
    let mut sum = 0.0;
    let mut count = 0usize;
    for &t in &r.indices {
        if exclude_selected && mask[t] {
            continue;
        }
        sum += model.prior_variance(t) - model.variance(t);
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Average of `−σ²(x|X)` over the reference.
pub fn reported_ev(model: &dyn VarianceModel, r: &TestReference) -> Result<f64> {
    check_ref(r)?;
    Ok(-r.indices.iter().map(|&t| model.variance(t)).sum::<f64>() / r.indices.len() as f64)
}

/// `α_EV(X ∪ {c}) − α_EV(X)` without conditioning.
pub fn marginal_gain_ev(model: &dyn VarianceModel, c: usize, r: &TestReference, exclude_selected: bool) -> Result<f64> {
    check_ref(r)?;
    if model.selected().contains(&c) {
        return Err(Error::DuplicateIndex(c));
    }
    let red = variance_reductions(model, c, &r.indices);
    if !exclude_selected {
        return Ok(red.iter().sum::<f64>() / r.indices.len() as f64);
    }
    let mut mask = selected_mask(model);
    let before = alpha_ev(model, r, true)?;
    mask[c] = true;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &t) in r.indices.iter().enumerate() {
        if mask[t] {
            continue;
        }
        sum += model.prior_variance(t) - model.variance(t) + red[i];
        count += 1;
    }
    let after = if count == 0 { 0.0 } else { sum / count as f64 };
    Ok(after - before)
}

fn logdet_jittered(m: &DMatrix<f64>) -> Result<f64> {
    Ok(logdet(&cholesky_ladder(m, 0.0)?))
}

fn mi_from_covariances(prior: &DMatrix<f64>, post: &DMatrix<f64>, noise_var: f64) -> Result<f64> {
    let mut a = prior.clone();
    let mut b = post.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += noise_var;
        b[(i, i)] += noise_var;
    }
    Ok(0.5 * logdet_jittered(&a)? - 0.5 * logdet_jittered(&b)?)
}

/// Reference points not yet selected.
fn unselected_ref(model: &dyn VarianceModel, r: &TestReference, extra: Option<usize>) -> Vec<usize> {
    let mask = selected_mask(model);
    r.indices
        .iter()
        .copied()
        .filter(|&t| !mask[t] && Some(t) != extra)
        .collect()
}

fn prior_cov(rest: &[usize], empty: &dyn VarianceModel) -> DMatrix<f64> {
    DMatrix::from_fn(rest.len(), rest.len(), |i, j| empty.covariance(rest[i], rest[j]))
}

/// Mutual information between the selected outputs and the rest of the reference.
///
/// `prior` must be the same provider with nothing selected.
pub fn alpha_mi(model: &dyn VarianceModel, prior: &dyn VarianceModel, r: &TestReference, sigma_n: f64) -> Result<f64> {
    check_ref(r)?;
    if !(sigma_n > 0.0) {
        return Err(Error::pre("MI noise must be positive"));
    }
    if model.selected().is_empty() {
        return Ok(0.0);
    }
    let rest = unselected_ref(model, r, None);
    if rest.is_empty() {
        return Err(Error::pre("every reference point is selected"));
    }
    let p = prior_cov(&rest, prior);
    let q = DMatrix::from_fn(rest.len(), rest.len(), |i, j| model.covariance(rest[i], rest[j]));
    mi_from_covariances(&p, &q, sigma_n * sigma_n)
}

/// MI after hypothetically conditioning on `c`.
pub fn alpha_mi_with(
    model: &dyn VarianceModel,
    prior: &dyn VarianceModel,
    c: usize,
    r: &TestReference,
    sigma_n: f64,
) -> Result<f64> {
    check_ref(r)?;
    let rest = unselected_ref(model, r, Some(c));
    if rest.is_empty() {
        return Err(Error::pre("every reference point is selected"));
    }
    let (g, pivot) = model.update_direction(c, &rest);
    let floor = crate::gp::PIVOT_TOL * model.prior_variance(c).max(1.0);
    let inv = if pivot > floor { 1.0 / pivot } else { 0.0 };
    let p = prior_cov(&rest, prior);
    let q = DMatrix::from_fn(rest.len(), rest.len(), |i, j| {
        model.covariance(rest[i], rest[j]) - g[i] * g[j] * inv
    });
    mi_from_covariances(&p, &q, sigma_n * sigma_n)
}

/// `−percentile_r {σ²(x|X) : x in reference}`.
pub fn alpha_rv(model: &dyn VarianceModel, r: &TestReference, pct: f64) -> Result<f64> {
    check_ref(r)?;
    let v: Vec<f64> = r.indices.iter().map(|&t| model.variance(t)).collect();
    percentile_nearest_rank(&v, pct)
        .map(|p| -p)
        .ok_or_else(|| Error::pre(format!("percentile {pct} outside (0, 100]")))
}

/// `α_rV` after hypothetically conditioning on `c`.
pub fn alpha_rv_with(model: &dyn VarianceModel, c: usize, r: &TestReference, pct: f64) -> Result<f64> {
    check_ref(r)?;
    let red = variance_reductions(model, c, &r.indices);
    let v: Vec<f64> = r
        .indices
        .iter()
        .zip(&red)
        .map(|(&t, d)| (model.variance(t) - d).max(0.0))
        .collect();
    percentile_nearest_rank(&v, pct)
        .map(|p| -p)
        .ok_or_else(|| Error::pre(format!("percentile {pct} outside (0, 100]")))
}

/// Evaluates a criterion kind on a model, with everything it needs.
pub struct Criterion<'a> {
    pub kind: CriterionKind,
    pub reference: &'a TestReference,
    pub options: CriterionOptions,
    /// Prior provider, required by MI.
    pub prior: Option<&'a dyn VarianceModel>,
}

impl<'a> Criterion<'a> {
    pub fn new(kind: CriterionKind, reference: &'a TestReference) -> Self {
        Criterion {
            kind,
            reference,
            options: CriterionOptions::default(),
            prior: None,
        }
    }

    fn mi_parts(&self, model: &dyn VarianceModel) -> Result<(&'a dyn VarianceModel, f64)> {
        let prior = self
            .prior
            .ok_or_else(|| Error::pre("MI criterion needs the prior provider"))?;
        let s = self
            .options
            .mi_noise
            .unwrap_or_else(|| default_mi_noise(model, self.reference));
        Ok((prior, s))
    }

    pub fn value(&self, model: &dyn VarianceModel) -> Result<f64> {
        match self.kind {
            CriterionKind::Ev => alpha_ev(model, self.reference, self.options.exclude_selected),
            CriterionKind::Mi => {
                let (prior, s) = self.mi_parts(model)?;
                alpha_mi(model, prior, self.reference, s)
            }
            CriterionKind::Rv(p) => alpha_rv(model, self.reference, p),
        }
    }

    /// Value after adding `c`, minus the current value.
    pub fn gain(&self, model: &dyn VarianceModel, c: usize, current: f64) -> Result<f64> {
        match self.kind {
            CriterionKind::Ev => marginal_gain_ev(model, c, self.reference, self.options.exclude_selected),
            CriterionKind::Mi => {
                let (prior, s) = self.mi_parts(model)?;
                Ok(alpha_mi_with(model, prior, c, self.reference, s)? - current)
            }
            CriterionKind::Rv(p) => Ok(alpha_rv_with(model, c, self.reference, p)? - current),
        }
    }
}
