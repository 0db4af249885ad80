use ntk_active::report::{parse_config, parse_report};
use ntk_active_cli::{run_cli, EXIT_CONFIG, EXIT_DATA};
use std::fs;
use std::path::Path;

fn argv(extra: &[&str]) -> Vec<String> {
    let mut v = vec!["ntk-active".to_string()];
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn small(out: &Path, extra: &[&str]) -> Vec<String> {
    let mut a = vec![
        "--synthetic-n",
        "24",
        "--synthetic-dim",
        "3",
        "--width",
        "16",
        "--seed",
        "11",
        "--out",
        out.to_str().unwrap(),
    ];
    a.extend_from_slice(extra);
    argv(&a)
}

#[test]
fn budget_zero_gives_empty_selection() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.toml");
    assert_eq!(run_cli(small(&out, &["--budget", "0"])), 0);
    let r = parse_report(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(r.run.selected.is_empty());
    assert!(r.run.criterion_values.is_empty());
}

#[test]
fn unknown_flag_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.toml");
    assert_eq!(run_cli(small(&out, &["--criterion", "bogus"])), EXIT_CONFIG);
    assert_eq!(run_cli(small(&out, &["--optimizer", "stochastic:0"])), EXIT_CONFIG);
    assert_eq!(run_cli(small(&out, &["--provider", "dense"])), EXIT_CONFIG);
    assert_eq!(run_cli(small(&out, &["--optimizer", "lazy", "--criterion", "mi"])), EXIT_CONFIG);
    assert_eq!(run_cli(small(&out, &["--budget", "500"])), EXIT_CONFIG);
    assert_eq!(run_cli(argv(&["--no-such-flag"])), EXIT_CONFIG);
    assert!(!out.exists());
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    fs::write(&csv, "a,b,y\n1,2,3\n4,5,6\n7,x,9\n").unwrap();
    let out = dir.path().join("r.toml");
    let a = argv(&["--dataset", csv.to_str().unwrap(), "--budget", "1", "--batch-size", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(run_cli(a), EXIT_DATA);
    let missing = dir.path().join("missing.csv");
    assert_eq!(run_cli(argv(&["--dataset", missing.to_str().unwrap()])), EXIT_DATA);
}

#[test]
fn csv_run_with_label_column() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    let mut text = String::from("y,a,b\n");
    for i in 0..12 {
        let x = i as f64 / 11.0;
        text.push_str(&format!("{},{},{}\n", (3.0 * x).sin(), x, 1.0 - x * x));
    }
    fs::write(&csv, text).unwrap();
    let out = dir.path().join("r.toml");
    let a = argv(&[
        "--dataset",
        csv.to_str().unwrap(),
        "--label-column",
        "y",
        "--split",
        "--budget",
        "3",
        "--batch-size",
        "1",
        "--width",
        "8",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(run_cli(a), 0);
    let r = parse_report(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!((r.data.pool_size, r.data.test_size), (6, 6));
    assert_eq!(r.run.selected.len(), 3);
}

#[test]
fn identical_invocations_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.toml");
    let b = dir.path().join("b.toml");
    let extra = ["--budget", "6", "--batch-size", "2", "--optimizer", "stochastic:5", "--ensemble-seeds", "2", "--epochs", "5"];
    assert_eq!(run_cli(small(&a, &extra)), 0);
    assert_eq!(run_cli(small(&b, &extra)), 0);
    let ta = fs::read_to_string(&a).unwrap();
    let tb = fs::read_to_string(&b).unwrap().replace("b.toml", "a.toml");
    assert_eq!(ta, tb);
}

#[test]
fn config_echo_reruns_to_identical_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.toml");
    assert_eq!(
        run_cli(small(&out, &["--budget", "4", "--batch-size", "2", "--criterion", "rv:90", "--model-select", "--resamples", "3"])),
        0
    );
    let first = fs::read_to_string(&out).unwrap();
    let cfg = parse_config(&first).unwrap();
    assert!(cfg.model_select.enabled);
    assert_eq!(run_cli(argv(&["--config", out.to_str().unwrap()])), 0);
    assert_eq!(fs::read_to_string(&out).unwrap(), first);
}
