//! Tabular data loading, synthetic generators, normalization and splitting.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernel::MlpArchitecture;
use crate::nn::init_network;
use crate::rng::SeedTree;
use crate::stats::{mean, population_std};

/// Per-feature affine transform applied by [`normalize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features with zero spread; these map to 0.
    pub constant: Vec<bool>,
    pub label_mean: f64,
    pub label_std: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Option<Vec<f64>>,
    pub feature_names: Vec<String>,
    pub label_name: Option<String>,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(self.feature_names.len(), |x| x.len())
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: self.labels.as_ref().map(|y| idx.iter().map(|&i| y[i]).collect()),
            feature_names: self.feature_names.clone(),
            label_name: self.label_name.clone(),
            normalization: self.normalization.clone(),
        }
    }
}

/// Reads a headed CSV file; see [`parse_csv`].
pub fn load_csv(path: &Path, label_column: Option<&str>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    parse_csv(&text, label_column)
}

/// Parses CSV text with a header row.
///
/// The label is the last column unless `label_column` names another one.
/// Every cell must parse as a finite number.
pub fn parse_csv(text: &str, label_column: Option<&str>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Data("missing header row".into()));
    }
    let label_pos = match label_column {
        Some(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("label column {name:?} not in header")))?,
        None => header.len() - 1,
    };
    if header.len() < 2 {
        return Err(Error::Data("need at least one feature column and a label column".into()));
    }
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Data(format!("line {line}: {e}"))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(Error::Data(format!(
                "line {line}: expected {} fields, found {}",
                header.len(),
                rec.len()
            )));
        }
        let mut row = Vec::with_capacity(header.len() - 1);
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::MalformedCell {
                line,
                column: j + 1,
                value: cell.to_string(),
            })?;
            if j == label_pos {
                labels.push(v);
            } else {
                row.push(v);
            }
        }
        inputs.push(row);
    }
    let feature_names = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label_pos)
        .map(|(_, h)| h.clone())
        .collect();
    Ok(Dataset {
        inputs,
        labels: Some(labels),
        feature_names,
        label_name: Some(header[label_pos].clone()),
        normalization: None,
    })
}

fn standardize(v: &[f64]) -> (f64, f64, bool) {
    let m = mean(v);
    let s = population_std(v);
    let constant = !(s > 1e-12 * m.abs().max(1.0));
    (m, s, constant)
}

/// Zero-mean, unit-variance features and labels; constant features become 0.
///
/// The transform is recorded. Applying it to already normalized data is a
/// no-op up to rounding. Statistics use the population standard deviation.
pub fn normalize(ds: &Dataset) -> Dataset {
    let d = ds.dim();
    let mut means = vec![0.0; d];
    let mut stds = vec![1.0; d];
    let mut constant = vec![false; d];
    let mut out = ds.inputs.clone();
    for j in 0..d {
        let col: Vec<f64> = ds.inputs.iter().map(|x| x[j]).collect();
        let (m, s, c) = standardize(&col);
        means[j] = m;
        stds[j] = s;
        constant[j] = c;
        for row in out.iter_mut() {
            row[j] = if c { 0.0 } else { (row[j] - m) / s };
        }
    }
    let (label_mean, label_std, labels) = match &ds.labels {
        Some(y) => {
            let (m, s, c) = standardize(y);
            let s = if c { 1.0 } else { s };
            (m, s, Some(y.iter().map(|v| (v - m) / s).collect()))
        }
        None => (0.0, 1.0, None),
    };
    Dataset {
        inputs: out,
        labels,
        feature_names: ds.feature_names.clone(),
        label_name: ds.label_name.clone(),
        normalization: Some(Normalization {
            mean: means,
            std: stds,
            constant,
            label_mean,
            label_std,
        }),
    }
}

/// Applies a transform fitted on another dataset, e.g. a pool's stats to its test file.
pub fn apply_normalization(ds: &Dataset, norm: &Normalization) -> Result<Dataset> {
    if ds.dim() != norm.mean.len() {
        return Err(Error::ShapeMismatch {
            expected: norm.mean.len(),
            got: ds.dim(),
        });
    }
    let inputs = ds
        .inputs
        .iter()
        .map(|x| {
            x.iter()
                .enumerate()
                .map(|(j, v)| if norm.constant[j] { 0.0 } else { (v - norm.mean[j]) / norm.std[j] })
                .collect()
        })
        .collect();
    let labels = ds
        .labels
        .as_ref()
        .map(|y| y.iter().map(|v| (v - norm.label_mean) / norm.label_std).collect());
    Ok(Dataset {
        inputs,
        labels,
        feature_names: ds.feature_names.clone(),
        label_name: ds.label_name.clone(),
        normalization: Some(norm.clone()),
    })
}

/// `n` points uniform in the unit ball of dimension `dim`.
pub fn sample_ball(n: usize, dim: usize, seeds: &SeedTree) -> Vec<Vec<f64>> {
    let mut rng = seeds.rng();
    (0..n)
        .map(|_| {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let radius = rng.random::<f64>().powf(1.0 / dim as f64);
            let s = if norm > 0.0 { radius / norm } else { 0.0 };
            v.iter_mut().for_each(|x| *x *= s);
            v
        })
        .collect()
}

fn names(dim: usize) -> Vec<String> {
    (0..dim).map(|j| format!("x{j}")).collect()
}

/// Ball inputs labelled by a randomly initialized network.
///
/// Inputs come from `seeds/inputs`; the network is `init_network(arch, seeds/model)`.
pub fn generate_random_model(n: usize, dim: usize, arch: &MlpArchitecture, seeds: &SeedTree) -> Result<Dataset> {
    if n < 1 || dim < 1 {
        return Err(Error::pre("random-model data needs n >= 1 and dim >= 1"));
    }
    let arch = MlpArchitecture { input_dim: dim, ..arch.clone() };
    let inputs = sample_ball(n, dim, &seeds.child("inputs"));
    let net = init_network(&arch, random_model_seed(seeds))?;
    let labels = net.forward_batch(&inputs)?;
    Ok(Dataset {
        inputs,
        labels: Some(labels),
        feature_names: names(dim),
        label_name: Some("y".into()),
        normalization: None,
    })
}

/// Network seed used by [`generate_random_model`].
pub fn random_model_seed(seeds: &SeedTree) -> u64 {
    seeds.child("model").seed()
}

/// Parameters of a sinusoidal target `sin(ωᵀx + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub omega: Vec<f64>,
    pub bias: f64,
}

impl Sinusoid {
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.omega.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias).sin()
    }
}

/// Ball inputs with labels `sin(ωᵀx + b)`, `ω ~ N(0, I)`, `b ~ U(0, 2π)`.
pub fn generate_sinusoidal(n: usize, dim: usize, seeds: &SeedTree) -> Result<(Dataset, Sinusoid)> {
    if n < 1 || dim < 1 {
        return Err(Error::pre("sinusoidal data needs n >= 1 and dim >= 1"));
    }
    let inputs = sample_ball(n, dim, &seeds.child("inputs"));
    let mut rng = seeds.child("target").rng();
    let sin = Sinusoid {
        omega: (0..dim).map(|_| rng.sample(StandardNormal)).collect(),
        bias: rng.random::<f64>() * std::f64::consts::TAU,
    };
    let labels = inputs.iter().map(|x| sin.eval(x)).collect();
    Ok((
        Dataset {
            inputs,
            labels: Some(labels),
            feature_names: names(dim),
            label_name: Some("y".into()),
            normalization: None,
        },
        sin,
    ))
}

/// Random halves of `0..n`: the pool gets `ceil(n/2)`.
pub fn split_indices(n: usize, seeds: &SeedTree) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::pre("splitting needs at least 2 rows"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeds.rng());
    let test = idx.split_off(n.div_ceil(2));
    Ok((idx, test))
}

pub fn split_pool_test(ds: &Dataset, seeds: &SeedTree) -> Result<(Dataset, Dataset)> {
    let (p, t) = split_indices(ds.len(), seeds)?;
    Ok((ds.subset(&p), ds.subset(&t)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_basic_and_label_flag() {
        let ds = parse_csv("a,b,y\n1,2,3\n4,5,6\n7,8,9\n", None).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.inputs[1], vec![4.0, 5.0]);
        assert_eq!(ds.labels.as_ref().unwrap(), &vec![3.0, 6.0, 9.0]);
        let ds = parse_csv("a,b,y\n1,2,3\n", Some("a")).unwrap();
        assert_eq!(ds.inputs[0], vec![2.0, 3.0]);
        assert_eq!(ds.labels.unwrap(), vec![1.0]);
        assert_eq!(ds.feature_names, vec!["b", "y"]);
        assert!(matches!(parse_csv("a,b\n1,2\n", Some("z")), Err(Error::Data(_))));
    }

    #[test]
    fn csv_bad_cell_names_line() {
        let text = "a,y\n1,1\n2,2\n3,3\n4,4\n5,5\n6,oops\n";
        match parse_csv(text, None) {
            Err(Error::MalformedCell { line, column, .. }) => {
                assert_eq!(line, 7);
                assert_eq!(column, 2);
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_csv("a,y\n1,2,3\n", None).is_err());
        assert!(parse_csv("", None).is_err());
        assert!(parse_csv("a,y\nnan,1\n", None).is_err());
    }

    #[test]
    fn normalization_moments() {
        let ds = Dataset {
            inputs: vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![4.0, 5.0]],
            labels: Some(vec![1.0, 2.0, 6.0]),
            ..Default::default()
        };
        let n = normalize(&ds);
        let col: Vec<f64> = n.inputs.iter().map(|x| x[0]).collect();
        assert!(mean(&col).abs() < 1e-12);
        assert!((population_std(&col) - 1.0).abs() < 1e-12);
        assert!(n.inputs.iter().all(|x| x[1] == 0.0));
        let nm = n.normalization.as_ref().unwrap();
        assert_eq!(nm.constant, vec![false, true]);
        assert!((nm.label_mean - 3.0).abs() < 1e-15);
    }

    #[test]
    fn ball_and_generators() {
        let pts = sample_ball(500, 3, &SeedTree::root(1));
        assert!(pts.iter().all(|x| x.iter().map(|v| v * v).sum::<f64>() <= 1.0));
        let (ds, sin) = generate_sinusoidal(50, 2, &SeedTree::root(2)).unwrap();
        let y = ds.labels.as_ref().unwrap();
        assert!(y.iter().all(|v| v.abs() <= 1.0));
        for (x, v) in ds.inputs.iter().zip(y) {
            assert_eq!(sin.eval(x), *v);
        }
        let zero = Sinusoid {
            omega: vec![0.0, 0.0],
            bias: 0.0,
        };
        assert!(ds.inputs.iter().all(|x| zero.eval(x) == 0.0));
    }

    #[test]
    fn split_sizes() {
        let (p, t) = split_indices(10, &SeedTree::root(0)).unwrap();
        assert_eq!((p.len(), t.len()), (5, 5));
        let (p, t) = split_indices(11, &SeedTree::root(0)).unwrap();
        assert_eq!((p.len(), t.len()), (6, 5));
        let mut all: Vec<usize> = p.into_iter().chain(t).collect();
        all.sort();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert!(split_indices(1, &SeedTree::root(0)).is_err());
    }
}
