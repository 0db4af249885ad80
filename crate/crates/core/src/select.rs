//! Greedy batch selection, baselines, and the select / label / re-fit loop.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use crate::criteria::{build_test_reference, reported_ev, Criterion, CriterionKind, CriterionOptions, RefMethod};
use crate::error::{Error, Result};
use crate::gp::{PosteriorState, VarianceModel, DEFAULT_JITTER};
use crate::kernel::{gram, MlpArchitecture};
use crate::modelsel::{resolve_kappa, select_model, BootstrapConfig, CandidatePool};
use crate::nn::{init_network, LabeledSet};
use crate::rng::{SeedRecord, SeedTree};
use crate::seeding::kmeanspp;
use crate::sparse::{default_noise_floor, select_inducing, InducingState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum OptimizerKind {
    Plain,
    Lazy,
    /// Evaluate `k′` random unselected candidates per step.
    Stochastic(usize),
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::Plain => write!(f, "plain"),
            OptimizerKind::Lazy => write!(f, "lazy"),
            OptimizerKind::Stochastic(k) => write!(f, "stochastic:{k}"),
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(OptimizerKind::Plain),
            "lazy" => Ok(OptimizerKind::Lazy),
            _ => {
                let k = s
                    .strip_prefix("stochastic:")
                    .ok_or_else(|| Error::Config(format!("unknown optimizer {s:?}; expected plain, lazy or stochastic:<k>")))?;
                let k: usize = k
                    .parse()
                    .map_err(|_| Error::Config(format!("bad candidate count in {s:?}")))?;
                if k == 0 {
                    return Err(Error::Config("stochastic candidate count must be at least 1".into()));
                }
                Ok(OptimizerKind::Stochastic(k))
            }
        }
    }
}

impl From<OptimizerKind> for String {
    fn from(v: OptimizerKind) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for OptimizerKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Which variance provider backs the criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ProviderSpec {
    /// Exact posterior on the analytic tangent kernel.
    Analytic,
    /// Exact posterior on a freshly initialized network's tangent kernel, per batch.
    Empirical,
    /// FIC approximation with `m` inducing points.
    Sparse(usize),
}

impl fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderSpec::Analytic => write!(f, "analytic"),
            ProviderSpec::Empirical => write!(f, "empirical"),
            ProviderSpec::Sparse(m) => write!(f, "sparse:{m}"),
        }
    }
}

impl FromStr for ProviderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(ProviderSpec::Analytic),
            "empirical" => Ok(ProviderSpec::Empirical),
            _ => {
                let m = s
                    .strip_prefix("sparse:")
                    .ok_or_else(|| Error::Config(format!("unknown provider {s:?}; expected analytic, empirical or sparse:<m>")))?;
                let m: usize = m
                    .parse()
                    .map_err(|_| Error::Config(format!("bad inducing count in {s:?}")))?;
                if m == 0 {
                    return Err(Error::Config("inducing count must be at least 1".into()));
                }
                Ok(ProviderSpec::Sparse(m))
            }
        }
    }
}

impl From<ProviderSpec> for String {
    fn from(v: ProviderSpec) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for ProviderSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Selected points and criterion values of one optimizer call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepTrace {
    pub selected: Vec<usize>,
    /// Criterion value after each selection.
    pub values: Vec<f64>,
    /// Marginal-gain evaluations spent.
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Bound {
    gain: f64,
    round: usize,
}

/// Stateful optimizer; keeps lazy bounds and the global step counter across batches.
pub struct Selector {
    kind: OptimizerKind,
    seeds: SeedTree,
    step: usize,
    bounds: Vec<Option<Bound>>,
    bound_scale: f64,
}

/// Relative slack added to stale lazy bounds so rounding cannot make them too tight.
const STALE_SLACK: f64 = 1e-12;

impl Selector {
    pub fn new(kind: OptimizerKind, seeds: SeedTree) -> Self {
        Selector {
            kind,
            seeds,
            step: 0,
            bounds: Vec::new(),
            bound_scale: 0.0,
        }
    }

    /// Forgets cached lazy bounds; needed whenever the provider changes.
    pub fn reset_bounds(&mut self) {
        self.bounds.clear();
        self.bound_scale = 0.0;
    }

    /// Global step counter (number of points chosen so far).
    pub fn steps(&self) -> usize {
        self.step
    }

    /// Chooses `b` points from `candidates`, conditioning `model` on each.
    pub fn select(
        &mut self,
        candidates: &[usize],
        b: usize,
        crit: &Criterion,
        model: &mut dyn VarianceModel,
    ) -> Result<StepTrace> {
        if self.kind == OptimizerKind::Lazy && (!crit.kind.is_submodular() || crit.options.exclude_selected) {
            return Err(Error::NotSubmodular(crit.kind.to_string()));
        }
        let n = model.universe_size();
        if candidates.iter().any(|&c| c >= n) {
            return Err(Error::pre("candidate index outside universe"));
        }
        let mut remaining: Vec<usize> = {
            let mut mask = vec![false; n];
            for &s in model.selected() {
                mask[s] = true;
            }
            let mut v: Vec<usize> = candidates.iter().copied().filter(|&c| !mask[c]).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let mut trace = StepTrace::default();
        if self.bounds.len() != n {
            self.bounds = vec![None; n];
        }
        for _ in 0..b {
            if remaining.is_empty() {
                return Err(Error::PoolExhausted(model.selected().len()));
            }
            let current = crit.value(model)?;
            let pick = match self.kind {
                OptimizerKind::Plain => self.plain(&remaining, crit, model, current, &mut trace)?,
                OptimizerKind::Lazy => self.lazy(&remaining, crit, model, current, &mut trace)?,
                OptimizerKind::Stochastic(k) => {
                    let mut rng = self.seeds.child("stochastic").index(self.step as u64).rng();
                    let cands: Vec<usize> = if k >= remaining.len() {
                        remaining.clone()
                    } else {
                        let mut pos = sample(&mut rng, remaining.len(), k).into_vec();
                        pos.sort_unstable();
                        pos.into_iter().map(|p| remaining[p]).collect()
                    };
                    self.plain(&cands, crit, model, current, &mut trace)?
                }
            };
            model.condition(pick)?;
            remaining.retain(|&c| c != pick);
            trace.selected.push(pick);
            trace.values.push(crit.value(model)?);
            self.step += 1;
        }
        Ok(trace)
    }

    fn plain(
        &mut self,
        cands: &[usize],
        crit: &Criterion,
        model: &dyn VarianceModel,
        current: f64,
        trace: &mut StepTrace,
    ) -> Result<usize> {
        let mut best = cands[0];
        let mut best_gain = f64::NEG_INFINITY;
        for &c in cands {
            let g = crit.gain(model, c, current)?;
            trace.evaluations += 1;
            if g > best_gain {
                best_gain = g;
                best = c;
            }
        }
        Ok(best)
    }

    fn stale_key(&self, g: f64) -> f64 {
        g + STALE_SLACK * (g.abs() + self.bound_scale)
    }

    fn lazy(
        &mut self,
        cands: &[usize],
        crit: &Criterion,
        model: &dyn VarianceModel,
        current: f64,
        trace: &mut StepTrace,
    ) -> Result<usize> {
        let round = self.step;
        for &c in cands {
            if self.bounds[c].is_none() {
                let g = crit.gain(model, c, current)?;
                trace.evaluations += 1;
                self.bound_scale = self.bound_scale.max(g.abs());
                self.bounds[c] = Some(Bound { gain: g, round });
            }
        }
        loop {
            let mut best: Option<(usize, f64, bool)> = None;
            for &c in cands {
                let b = self.bounds[c].expect("bound initialized above");
                let fresh = b.round == round;
                let key = if fresh { b.gain } else { self.stale_key(b.gain) };
                if best.is_none_or(|(_, k, _)| key > k) {
                    best = Some((c, key, fresh));
                }
            }
            let (c, _, fresh) = best.expect("nonempty candidates");
            if fresh {
                return Ok(c);
            }
            let g = crit.gain(model, c, current)?;
            trace.evaluations += 1;
            self.bounds[c] = Some(Bound { gain: g, round });
        }
    }
}

pub fn greedy_select(candidates: &[usize], k: usize, crit: &Criterion, model: &mut dyn VarianceModel) -> Result<StepTrace> {
    Selector::new(OptimizerKind::Plain, SeedTree::root(0)).select(candidates, k, crit, model)
}

pub fn lazy_greedy_select(candidates: &[usize], k: usize, crit: &Criterion, model: &mut dyn VarianceModel) -> Result<StepTrace> {
    Selector::new(OptimizerKind::Lazy, SeedTree::root(0)).select(candidates, k, crit, model)
}

pub fn stochastic_greedy_select(
    candidates: &[usize],
    k: usize,
    k_prime: usize,
    crit: &Criterion,
    model: &mut dyn VarianceModel,
    seeds: &SeedTree,
) -> Result<StepTrace> {
    if k_prime == 0 {
        return Err(Error::pre("stochastic greedy needs k' >= 1"));
    }
    Selector::new(OptimizerKind::Stochastic(k_prime), seeds.clone()).select(candidates, k, crit, model)
}

/// `k` distinct positions in `0..n`, uniformly at random, in draw order.
pub fn random_baseline(n: usize, k: usize, seeds: &SeedTree) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::pre(format!("cannot draw {k} of {n} points")));
    }
    Ok(sample(&mut seeds.rng(), n, k).into_vec())
}

/// k-means++ draw of `k` positions; selection order is kept.
pub fn kmeanspp_baseline(points: &[Vec<f64>], k: usize, seeds: &SeedTree) -> Result<Vec<usize>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    kmeanspp(points, k, seeds)
}

/// Settings of one active-learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub budget: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub criterion: CriterionKind,
    pub provider: ProviderSpec,
    #[serde(with = "crate::rng::seed_serde")]
    pub seed: u64,
    pub reference: RefMethod,
    pub exclude_selected: bool,
    pub mi_noise: Option<f64>,
    pub jitter: f64,
}

impl SelectionConfig {
    pub fn new(budget: usize, batch_size: usize) -> Self {
        SelectionConfig {
            budget,
            batch_size,
            optimizer: OptimizerKind::Plain,
            criterion: CriterionKind::Ev,
            provider: ProviderSpec::Analytic,
            seed: 0,
            reference: RefMethod::All,
            exclude_selected: false,
            mi_noise: None,
            jitter: DEFAULT_JITTER,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget > 0 && self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.batch_size > self.budget && self.budget > 0 {
            return Err(Error::Config(format!(
                "batch size {} exceeds budget {}",
                self.batch_size, self.budget
            )));
        }
        if self.optimizer == OptimizerKind::Lazy && !self.criterion.is_submodular() {
            return Err(Error::NotSubmodular(self.criterion.to_string()));
        }
        Ok(())
    }
}

/// Model-selection phase settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSelection {
    pub pool: CandidatePool,
    pub bootstrap: BootstrapConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch: usize,
    pub selected: Vec<usize>,
    #[serde(default)]
    pub wall_time_s: f64,
    /// Depth chosen by the model-selection phase, if it ran.
    pub chosen_depth: Option<usize>,
    pub model_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: SelectionConfig,
    /// Pool positions of the initial labelled set.
    pub initial_labelled: Vec<usize>,
    /// Pool positions of the selected points, in selection order.
    pub selected: Vec<usize>,
    /// Labels received for `selected`, in the same order.
    pub labels: Vec<f64>,
    /// Criterion value after each selection.
    pub criterion_values: Vec<f64>,
    /// Mean of `−σ²` over the reference after each batch.
    pub mean_neg_variance: Vec<f64>,
    pub batches: Vec<BatchRecord>,
    pub evaluations: usize,
    pub jitter_escalated: bool,
    pub final_depth: usize,
    pub abort_reason: Option<String>,
    pub rng: Vec<SeedRecord>,
}

/// Inputs to [`run_active_learning`].
pub struct Problem<'a> {
    pub pool: &'a [Vec<f64>],
    pub test: &'a [Vec<f64>],
    /// Already-labelled pool positions and their labels.
    pub initial: Vec<(usize, f64)>,
}

struct Providers {
    model: Box<dyn VarianceModel>,
    prior: Box<dyn VarianceModel>,
}

fn build_providers(
    spec: ProviderSpec,
    arch: &MlpArchitecture,
    universe: &[Vec<f64>],
    pool_len: usize,
    selected: &[usize],
    jitter: f64,
    seeds: &SeedTree,
    batch: usize,
    rng_log: &mut Vec<SeedRecord>,
) -> Result<Providers> {
    match spec {
        ProviderSpec::Analytic | ProviderSpec::Empirical => {
            let g = if spec == ProviderSpec::Analytic {
                gram(arch, universe)?.theta
            } else {
                let node = seeds.child("empirical").index(batch as u64);
                rng_log.push(node.record());
                init_network(arch, node.seed())?.empirical_ntk_gram(universe)?
            };
            let g = Arc::new(g);
            let prior = PosteriorState::new(g.clone(), jitter)?;
            let model = PosteriorState::rebuild(g, selected, jitter)?;
            Ok(Providers {
                model: Box::new(model),
                prior: Box::new(prior),
            })
        }
        ProviderSpec::Sparse(m) => {
            let node = seeds.child("inducing");
            if batch == 0 {
                rng_log.push(node.record());
            }
            let m = m.min(pool_len);
            let inducing = select_inducing(&universe[..pool_len], m, &node)?;
            let g = Arc::new(gram(arch, universe)?.theta);
            let floor = default_noise_floor(&g);
            let prior = InducingState::with_jitter(g, inducing, floor, jitter)?;
            let model = prior.fit(selected, None)?;
            Ok(Providers {
                model: Box::new(model),
                prior: Box::new(prior),
            })
        }
    }
}

/// Alternates batch selection, label queries and optional model re-selection.
///
/// The universe is `pool ++ test`; candidates are pool positions and the
/// criterion reference is drawn from the test part. `oracle` receives pool
/// positions. If it fails, the run stops and the partial report records why.
pub fn run_active_learning(
    problem: &Problem,
    arch: &MlpArchitecture,
    config: &SelectionConfig,
    oracle: &mut dyn FnMut(usize) -> Result<f64>,
    model_selection: Option<&ModelSelection>,
) -> Result<RunReport> {
    config.validate()?;
    arch.validate()?;
    let pool_len = problem.pool.len();
    if problem.test.is_empty() {
        return Err(Error::pre("test set is empty"));
    }
    let initial: Vec<usize> = problem.initial.iter().map(|p| p.0).collect();
    if initial.iter().any(|&i| i >= pool_len) {
        return Err(Error::pre("initial labelled index outside pool"));
    }
    if config.budget + initial.len() > pool_len {
        return Err(Error::pre(format!(
            "budget {} exceeds the {} unlabelled pool points",
            config.budget,
            pool_len - initial.len()
        )));
    }
    let seeds = SeedTree::root(config.seed);
    let mut rng_log = vec![seeds.record()];
    let mut universe: Vec<Vec<f64>> = problem.pool.to_vec();
    universe.extend(problem.test.iter().cloned());
    let test_idx: Vec<usize> = (pool_len..universe.len()).collect();
    let ref_node = seeds.child("reference");
    let reference = build_test_reference(&test_idx, problem.test, config.reference, &ref_node)?;
    if config.reference != RefMethod::All {
        rng_log.push(ref_node.record());
    }
    let sel_node = seeds.child("select");
    if matches!(config.optimizer, OptimizerKind::Stochastic(_)) {
        rng_log.push(sel_node.child("stochastic").record());
    }
    let mut selector = Selector::new(config.optimizer, sel_node);
    let mut arch = arch.clone();
    let mut report = RunReport {
        config: config.clone(),
        initial_labelled: initial.clone(),
        selected: Vec::new(),
        labels: Vec::new(),
        criterion_values: Vec::new(),
        mean_neg_variance: Vec::new(),
        batches: Vec::new(),
        evaluations: 0,
        jitter_escalated: false,
        final_depth: arch.depth,
        abort_reason: None,
        rng: Vec::new(),
    };
    let mut labelled = LabeledSet::new(
        initial.iter().map(|&i| problem.pool[i].clone()).collect(),
        problem.initial.iter().map(|p| p.1).collect(),
    )?;
    let mut conditioned = initial.clone();
    let candidates: Vec<usize> = (0..pool_len).collect();
    let rounds = if config.budget == 0 {
        0
    } else {
        config.budget.div_ceil(config.batch_size)
    };
    let mut providers: Option<Providers> = None;
    for batch in 0..rounds {
        let start = Instant::now();
        let refresh = providers.is_none() || config.provider == ProviderSpec::Empirical;
        if refresh {
            providers = Some(build_providers(
                config.provider,
                &arch,
                &universe,
                pool_len,
                &conditioned,
                config.jitter,
                &seeds,
                batch,
                &mut rng_log,
            )?);
            selector.reset_bounds();
        }
        let p = providers.as_mut().expect("built above");
        let b = config.batch_size.min(config.budget - report.selected.len());
        let crit = Criterion {
            kind: config.criterion,
            reference: &reference,
            options: CriterionOptions {
                exclude_selected: config.exclude_selected,
                mi_noise: config.mi_noise,
            },
            prior: Some(p.prior.as_ref()),
        };
        let trace = selector.select(&candidates, b, &crit, p.model.as_mut())?;
        report.evaluations += trace.evaluations;
        report.jitter_escalated |= p.model.jitter_escalated();
        for &s in &trace.selected {
            report.selected.push(s);
            conditioned.push(s);
        }
        report.criterion_values.extend_from_slice(&trace.values);
        report.mean_neg_variance.push(reported_ev(p.model.as_ref(), &reference)?);
        let mut record = BatchRecord {
            batch,
            selected: trace.selected.clone(),
            wall_time_s: 0.0,
            chosen_depth: None,
            model_scores: Vec::new(),
        };
        for &s in &trace.selected {
            match oracle(s) {
                Ok(y) => {
                    report.labels.push(y);
                    labelled.inputs.push(problem.pool[s].clone());
                    labelled.labels.push(y);
                }
                Err(e) => {
                    report.abort_reason = Some(e.to_string());
                    record.wall_time_s = start.elapsed().as_secs_f64();
                    report.batches.push(record);
                    report.final_depth = arch.depth;
                    report.rng = rng_log;
                    return Ok(report);
                }
            }
        }
        if let Some(ms) = model_selection {
            let kappa = resolve_kappa(labelled.len(), ms.bootstrap.kappa);
            if labelled.len() >= 2 && kappa < labelled.len() {
                let node = seeds.child("modelsel").index(batch as u64);
                rng_log.push(node.record());
                let bs = BootstrapConfig {
                    seed: node.seed(),
                    ..ms.bootstrap
                };
                let choice = select_model(&ms.pool, &labelled, &bs)?;
                record.chosen_depth = Some(choice.arch.depth);
                record.model_scores = choice.scores.clone();
                if choice.arch != arch {
                    arch = choice.arch;
                    providers = None;
                }
            }
        }
        record.wall_time_s = start.elapsed().as_secs_f64();
        report.batches.push(record);
    }
    report.final_depth = arch.depth;
    report.rng = rng_log;
    Ok(report)
}
