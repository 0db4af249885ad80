//! Text form of experiment reports and configs.
//!
//! Reports are TOML documents with keys sorted within each table.
//! Batch wall times are dropped unless asked for, so that identical runs
//! produce identical bytes.

use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, ExperimentReport};

fn strip_timing(doc: &mut toml::Table) {
    let batches = doc
        .get_mut("run")
        .and_then(|r| r.as_table_mut())
        .and_then(|r| r.get_mut("batches"))
        .and_then(|b| b.as_array_mut());
    if let Some(batches) = batches {
        for b in batches.iter_mut().filter_map(|b| b.as_table_mut()) {
            b.remove("wall_time_s");
        }
    }
}

fn render(report: &ExperimentReport, timing: bool) -> Result<String> {
    let mut doc = toml::Table::try_from(report).map_err(|e| Error::Config(format!("cannot encode report: {e}")))?;
    if !timing {
        strip_timing(&mut doc);
    }
    toml::to_string(&doc).map_err(|e| Error::Config(format!("cannot encode report: {e}")))
}

/// Deterministic report text; wall times are omitted.
pub fn to_text(report: &ExperimentReport) -> Result<String> {
    render(report, false)
}

/// Report text including per-batch wall times.
pub fn to_text_with_timing(report: &ExperimentReport) -> Result<String> {
    render(report, true)
}

pub fn parse_report(text: &str) -> Result<ExperimentReport> {
    toml::from_str(text).map_err(|e| Error::Config(format!("cannot parse report: {e}")))
}

pub fn config_to_text(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(format!("cannot encode config: {e}")))
}

/// Reads a config, either bare or as the `config` table of a report.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("cannot parse config: {e}")))?;
    let body = match doc.get("config") {
        Some(toml::Value::Table(t)) => t.clone(),
        Some(_) => return Err(Error::Config("`config` must be a table".into())),
        None => doc,
    };
    body.try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("invalid config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::run_experiment;

    #[test]
    fn config_round_trip() {
        let mut c = ExperimentConfig::default();
        c.seed = u64::MAX;
        c.selection.criterion = "rv:90".parse().unwrap();
        c.selection.provider = "sparse:7".parse().unwrap();
        c.selection.mi_noise = Some(0.25);
        let text = config_to_text(&c).unwrap();
        assert_eq!(parse_config(&text).unwrap(), c);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let c = parse_config("seed = 3\n[selection]\nbudget = 4\nbatch_size = 2\ncriterion = \"mi\"\noptimizer = \"plain\"\nprovider = \"analytic\"\ntest_ref = \"all\"\nexclude_selected = false\njitter = 1e-10\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.selection.budget, 4);
        assert_eq!(c.architecture, ExperimentConfig::default().architecture);
        assert!(parse_config("selection = 3").is_err());
        assert!(parse_config("[config]\nseed = -1").is_err());
    }

    #[test]
    fn report_round_trip() {
        let mut c = ExperimentConfig::default();
        c.synthetic_n = 12;
        c.synthetic_dim = 2;
        c.architecture.width = 8;
        c.selection.budget = 4;
        c.selection.batch_size = 2;
        let r = run_experiment(&c).unwrap();
        let text = to_text(&r).unwrap();
        assert!(!text.contains("wall_time_s"));
        let back = parse_report(&text).unwrap();
        assert_eq!(back.run.selected, r.run.selected);
        assert_eq!(back.config, c);
        assert_eq!(to_text(&back).unwrap(), text);
        assert_eq!(parse_config(&text).unwrap(), c);
        assert!(to_text_with_timing(&r).unwrap().contains("wall_time_s"));
    }
}
