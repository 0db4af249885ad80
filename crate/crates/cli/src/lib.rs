//! Argument handling for the `ntk-active` binary.
//!
//! Settings start from `--config` (a bare config or an earlier report) or the
//! defaults, and any flag given on the command line overrides them.

use clap::Parser;
use std::io::Write;
use std::path::PathBuf;

use ntk_active::experiment::{run_experiment, ExperimentConfig};
use ntk_active::report::{parse_config, to_text, to_text_with_timing};
use ntk_active::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ntk-active", version, about = "Training-free active learning with NTKGP variance criteria")]
struct Args {
    /// CSV path, synthetic:random-model or synthetic:sinusoidal.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    synthetic_n: Option<usize>,
    #[arg(long)]
    synthetic_dim: Option<usize>,
    /// Separate test CSV; otherwise the pool doubles as test set.
    #[arg(long)]
    test: Option<String>,
    /// Split the dataset into pool and test halves.
    #[arg(long)]
    split: bool,
    #[arg(long)]
    label_column: Option<String>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// ev, mi or rv:<r>.
    #[arg(long)]
    criterion: Option<String>,
    /// plain, lazy or stochastic:<k>.
    #[arg(long)]
    optimizer: Option<String>,
    /// analytic, empirical or sparse:<m>.
    #[arg(long)]
    provider: Option<String>,
    /// all or kmeanspp:<m>.
    #[arg(long)]
    test_ref: Option<String>,
    #[arg(long)]
    exclude_selected: bool,
    #[arg(long)]
    mi_noise: Option<f64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    sigma_w: Option<f64>,
    #[arg(long)]
    sigma_b: Option<f64>,
    /// Re-select the architecture by bootstrap after every batch.
    #[arg(long)]
    model_select: bool,
    /// Comma-separated candidate depths for --model-select.
    #[arg(long, value_delimiter = ',')]
    candidate_depths: Option<Vec<usize>>,
    #[arg(long)]
    resamples: Option<usize>,
    #[arg(long)]
    ensemble_seeds: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; standard output when absent.
    #[arg(long)]
    out: Option<String>,
    /// Config file or earlier report to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Include per-batch wall times in the report.
    #[arg(long)]
    timing: bool,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Precondition(_)
        | Error::NotSubmodular(_)
        | Error::PoolExhausted(_)
        | Error::DuplicateIndex(_) => EXIT_CONFIG,
        Error::Data(_)
        | Error::MalformedCell { .. }
        | Error::Oracle { .. }
        | Error::DegenerateInput { .. }
        | Error::ShapeMismatch { .. } => EXIT_DATA,
        Error::Singular(_) | Error::Divergence { .. } | Error::Domain(_) => EXIT_NUMERICAL,
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn build_config(a: Args) -> Result<(ExperimentConfig, bool), Error> {
    let mut c = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            parse_config(&text)?
        }
        None => ExperimentConfig::default(),
    };
    set(&mut c.dataset, a.dataset);
    set(&mut c.synthetic_n, a.synthetic_n);
    set(&mut c.synthetic_dim, a.synthetic_dim);
    if a.test.is_some() {
        c.test = a.test;
    }
    c.split |= a.split;
    if a.label_column.is_some() {
        c.label_column = a.label_column;
    }
    if a.out.is_some() {
        c.out = a.out;
    }
    let s = &mut c.selection;
    set(&mut s.budget, a.budget);
    set(&mut s.batch_size, a.batch_size);
    set(&mut s.criterion, a.criterion.map(|v| v.parse()).transpose()?);
    set(&mut s.optimizer, a.optimizer.map(|v| v.parse()).transpose()?);
    set(&mut s.provider, a.provider.map(|v| v.parse()).transpose()?);
    set(&mut s.test_ref, a.test_ref.map(|v| v.parse()).transpose()?);
    s.exclude_selected |= a.exclude_selected;
    if a.mi_noise.is_some() {
        s.mi_noise = a.mi_noise;
    }
    let arch = &mut c.architecture;
    set(&mut arch.depth, a.depth);
    set(&mut arch.width, a.width);
    set(&mut arch.sigma_w, a.sigma_w);
    set(&mut arch.sigma_b, a.sigma_b);
    c.model_select.enabled |= a.model_select;
    set(&mut c.model_select.depths, a.candidate_depths);
    set(&mut c.model_select.resamples, a.resamples);
    set(&mut c.ensemble.seeds, a.ensemble_seeds);
    set(&mut c.ensemble.lr, a.lr);
    set(&mut c.ensemble.epochs, a.epochs);
    set(&mut c.ensemble.weight_decay, a.weight_decay);
    set(&mut c.seed, a.seed);
    Ok((c, a.timing))
}

fn execute(a: Args) -> Result<(), Error> {
    let (cfg, timing) = build_config(a)?;
    let report = run_experiment(&cfg)?;
    let text = if timing {
        to_text_with_timing(&report)?
    } else {
        to_text(&report)?
    };
    match &cfg.out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Config(format!("cannot write {p}: {e}")))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .map_err(|e| Error::Config(format!("cannot write report: {e}")))?;
        }
    }
    if let Some(reason) = &report.run.abort_reason {
        return Err(Error::Oracle {
            index: report.run.selected.last().copied().unwrap_or(0),
            reason: reason.clone(),
        });
    }
    Ok(())
}

/// Parses `argv` (program name first), runs, and returns the exit code.
pub fn run_cli<I: IntoIterator<Item = String>>(argv: I) -> i32 {
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ntk-active: {e}");
            exit_code(&e)
        }
    }
}
