//! End-to-end experiment: data, active learning, ensemble evaluation.
//!
//! Randomness comes from one root seed. Data generation uses `root/data`,
//! the pool/test split `root/split`, the selection loop its own subtree under
//! the same root (`root/reference`, `root/select`, ...), and the trained
//! ensemble `root/ensemble`.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::criteria::{CriterionKind, RefMethod};
use crate::data::{
    apply_normalization, generate_random_model, generate_sinusoidal, load_csv, normalize, split_indices, Dataset, Normalization, Sinusoid,
};
use crate::error::{Error, Result};
use crate::gp::DEFAULT_JITTER;
use crate::kernel::MlpArchitecture;
use crate::modelsel::{BootstrapConfig, CandidatePool};
use crate::nn::{ensemble_statistics, LabeledSet, TrainConfig};
use crate::rng::{SeedRecord, SeedTree};
use crate::select::{run_active_learning, ModelSelection, OptimizerKind, Problem, ProviderSpec, RunReport, SelectionConfig};
use crate::stats::percentile_nearest_rank;

pub const RANDOM_MODEL: &str = "synthetic:random-model";
pub const SINUSOIDAL: &str = "synthetic:sinusoidal";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub depth: usize,
    pub width: usize,
    pub sigma_w: f64,
    pub sigma_b: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            depth: 2,
            width: 512,
            sigma_w: 1.0,
            sigma_b: 0.1,
        }
    }
}

impl ArchConfig {
    pub fn with_input_dim(&self, input_dim: usize) -> MlpArchitecture {
        MlpArchitecture::new(self.depth, input_dim, self.width, self.sigma_w, self.sigma_b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSettings {
    pub budget: usize,
    pub batch_size: usize,
    pub criterion: CriterionKind,
    pub optimizer: OptimizerKind,
    pub provider: ProviderSpec,
    pub test_ref: RefMethod,
    pub exclude_selected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mi_noise: Option<f64>,
    pub jitter: f64,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        SelectionSettings {
            budget: 20,
            batch_size: 5,
            criterion: CriterionKind::Ev,
            optimizer: OptimizerKind::Plain,
            provider: ProviderSpec::Analytic,
            test_ref: RefMethod::All,
            exclude_selected: false,
            mi_noise: None,
            jitter: DEFAULT_JITTER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelectSettings {
    pub enabled: bool,
    pub depths: Vec<usize>,
    pub resamples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<usize>,
}

impl Default for ModelSelectSettings {
    fn default() -> Self {
        ModelSelectSettings {
            enabled: false,
            depths: vec![1, 2, 3, 4],
            resamples: 100,
            kappa: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSettings {
    /// Number of trained members; 0 skips the ensemble metrics.
    pub seeds: usize,
    pub lr: f64,
    pub epochs: usize,
    pub weight_decay: f64,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        EnsembleSettings {
            seeds: 0,
            lr: t.lr,
            epochs: t.epochs,
            weight_decay: t.weight_decay,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    #[serde(with = "crate::rng::seed_serde")]
    pub seed: u64,
    /// CSV path, `synthetic:random-model` or `synthetic:sinusoidal`.
    pub dataset: String,
    /// Row count and input dimension of synthetic data.
    pub synthetic_n: usize,
    pub synthetic_dim: usize,
    /// Separate test CSV; without it the test set is the pool.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<String>,
    /// Split the dataset into halves instead of reusing the pool as test set.
    pub split: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    pub architecture: ArchConfig,
    pub selection: SelectionSettings,
    pub model_select: ModelSelectSettings,
    pub ensemble: EnsembleSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            dataset: RANDOM_MODEL.into(),
            synthetic_n: 200,
            synthetic_dim: 8,
            test: None,
            split: false,
            label_column: None,
            out: None,
            architecture: ArchConfig::default(),
            selection: SelectionSettings::default(),
            model_select: ModelSelectSettings::default(),
            ensemble: EnsembleSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        if self.dataset.starts_with("synthetic:") && self.dataset != RANDOM_MODEL && self.dataset != SINUSOIDAL {
            return Err(Error::Config(format!(
                "unknown synthetic dataset {:?}; expected {RANDOM_MODEL} or {SINUSOIDAL}",
                self.dataset
            )));
        }
        if self.ensemble.seeds == 1 {
            return Err(Error::Config("an ensemble needs at least 2 seeds".into()));
        }
        if self.model_select.enabled && self.model_select.depths.is_empty() {
            return Err(Error::Config("model selection needs at least one candidate depth".into()));
        }
        if self.test.is_some() && self.split {
            return Err(Error::Config("a test file and a split are mutually exclusive".into()));
        }
        self.architecture.with_input_dim(1).validate().map_err(as_config)?;
        self.selection_config().validate()
    }

    pub fn selection_config(&self) -> SelectionConfig {
        let s = &self.selection;
        SelectionConfig {
            budget: s.budget,
            batch_size: s.batch_size,
            optimizer: s.optimizer,
            criterion: s.criterion,
            provider: s.provider,
            seed: self.seed,
            reference: s.test_ref,
            exclude_selected: s.exclude_selected,
            mi_noise: s.mi_noise,
            jitter: s.jitter,
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.ensemble.lr,
            epochs: self.ensemble.epochs,
            weight_decay: self.ensemble.weight_decay,
            ..TrainConfig::default()
        }
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Precondition(m) => Error::Config(m),
        e => e,
    }
}

/// Where the pool and test points came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub dim: usize,
    pub pool_size: usize,
    pub test_size: usize,
    /// Dataset rows forming the pool, in pool order.
    pub pool_rows: Vec<usize>,
    /// Rows of the test source (the dataset or the test file), in test order.
    pub test_rows: Vec<usize>,
    pub test_is_pool: bool,
    pub normalization: Normalization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sinusoid: Option<Sinusoid>,
}

/// Trained-ensemble metrics on the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetrics {
    pub members: usize,
    /// Nearest-rank 90th percentile of per-point ensemble variance.
    pub p90_variance: f64,
    pub mean_variance: f64,
    /// Mean member MSE in normalized label units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_mse: Option<f64>,
    /// The same in the original label units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_mse_original: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub data: DataSummary,
    pub run: RunReport,
    /// Dataset rows of `run.selected`.
    pub selected_rows: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleMetrics>,
    pub rng: Vec<SeedRecord>,
}

struct Prepared {
    pool: Dataset,
    test: Dataset,
    summary: DataSummary,
}

fn load(source: &str, cfg: &ExperimentConfig, seeds: &SeedTree, rng: &mut Vec<SeedRecord>) -> Result<(Dataset, Option<Sinusoid>)> {
    let node = seeds.child("data");
    match source {
        RANDOM_MODEL => {
            rng.push(node.record());
            rng.push(node.child("model").record());
            let arch = cfg.architecture.with_input_dim(cfg.synthetic_dim);
            let ds = generate_random_model(cfg.synthetic_n, cfg.synthetic_dim, &arch, &node).map_err(as_config)?;
            Ok((ds, None))
        }
        SINUSOIDAL => {
            rng.push(node.record());
            let (ds, s) = generate_sinusoidal(cfg.synthetic_n, cfg.synthetic_dim, &node).map_err(as_config)?;
            Ok((ds, Some(s)))
        }
        path => Ok((load_csv(Path::new(path), cfg.label_column.as_deref())?, None)),
    }
}

fn prepare(cfg: &ExperimentConfig, seeds: &SeedTree, rng: &mut Vec<SeedRecord>) -> Result<Prepared> {
    let (ds, sinusoid) = load(&cfg.dataset, cfg, seeds, rng)?;
    if ds.is_empty() {
        return Err(Error::Data("dataset has no rows".into()));
    }
    if ds.labels.is_none() {
        return Err(Error::Data("dataset has no labels".into()));
    }
    let (pool_rows, test_rows, raw_test) = if let Some(t) = &cfg.test {
        let test = load_csv(Path::new(t), cfg.label_column.as_deref())?;
        if test.dim() != ds.dim() {
            return Err(Error::Data(format!(
                "test file has {} features, dataset has {}",
                test.dim(),
                ds.dim()
            )));
        }
        if test.is_empty() {
            return Err(Error::Data("test file has no rows".into()));
        }
        ((0..ds.len()).collect(), (0..test.len()).collect(), Some(test))
    } else if cfg.split {
        let node = seeds.child("split");
        rng.push(node.record());
        let (p, t) = split_indices(ds.len(), &node).map_err(|e| Error::Data(e.to_string()))?;
        (p, t, None)
    } else {
        let all: Vec<usize> = (0..ds.len()).collect();
        (all.clone(), all, None)
    };
    let pool = normalize(&ds.subset(&pool_rows));
    let norm = pool.normalization.clone().expect("normalize records its transform");
    let test_is_pool = cfg.test.is_none() && !cfg.split;
    let test = match raw_test {
        Some(t) => apply_normalization(&t, &norm)?,
        None if test_is_pool => pool.clone(),
        None => apply_normalization(&ds.subset(&test_rows), &norm)?,
    };
    let summary = DataSummary {
        dim: ds.dim(),
        pool_size: pool.len(),
        test_size: test.len(),
        pool_rows,
        test_rows,
        test_is_pool,
        normalization: norm,
        sinusoid,
    };
    Ok(Prepared { pool, test, summary })
}

/// Runs one experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let seeds = SeedTree::root(cfg.seed);
    let mut rng = vec![seeds.record()];
    let prep = prepare(cfg, &seeds, &mut rng)?;
    let arch = cfg.architecture.with_input_dim(prep.summary.dim);
    let labels = prep.pool.labels.clone().expect("checked in prepare");
    let mut oracle = |i: usize| {
        labels.get(i).copied().ok_or_else(|| Error::Oracle {
            index: i,
            reason: "no such pool row".into(),
        })
    };
    let ms = cfg.model_select.enabled.then(|| ModelSelection {
        pool: CandidatePool::relu_depths(&arch, &cfg.model_select.depths),
        bootstrap: BootstrapConfig {
            kappa: cfg.model_select.kappa,
            resamples: cfg.model_select.resamples,
            seed: 0,
        },
    });
    let problem = Problem {
        pool: &prep.pool.inputs,
        test: &prep.test.inputs,
        initial: Vec::new(),
    };
    let run = run_active_learning(&problem, &arch, &cfg.selection_config(), &mut oracle, ms.as_ref()).map_err(as_config)?;
    let selected_rows = run.selected.iter().map(|&i| prep.summary.pool_rows[i]).collect();
    let ensemble = if cfg.ensemble.seeds > 0 && run.abort_reason.is_none() {
        let node = seeds.child("ensemble");
        rng.push(node.record());
        let final_arch = MlpArchitecture {
            depth: run.final_depth,
            ..arch.clone()
        };
        let train = LabeledSet::new(
            run.selected.iter().map(|&i| prep.pool.inputs[i].clone()).collect(),
            run.labels.clone(),
        )?;
        let stats = ensemble_statistics(
            &final_arch,
            &train,
            &prep.test.inputs,
            cfg.ensemble.seeds,
            &cfg.train_config(),
            &node,
        )?;
        let test_mse = prep.test.labels.as_ref().map(|y| stats.member_mse(y));
        let scale = prep.summary.normalization.label_std.powi(2);
        Some(EnsembleMetrics {
            members: cfg.ensemble.seeds,
            p90_variance: percentile_nearest_rank(&stats.variance, 90.0).expect("test set is nonempty"),
            mean_variance: crate::stats::mean(&stats.variance),
            test_mse,
            test_mse_original: test_mse.map(|m| m * scale),
        })
    } else {
        None
    };
    rng.extend(run.rng.iter().skip(1).cloned());
    Ok(ExperimentReport {
        config: cfg.clone(),
        data: prep.summary,
        run,
        selected_rows,
        ensemble,
        rng,
    })
}
