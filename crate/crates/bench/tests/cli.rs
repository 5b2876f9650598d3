use std::path::Path;
use std::process::Command;

use gopo_bench::config::ExperimentConfig;
use gopo_bench::experiment::{cmd_gen, cmd_run, read_results, results_csv, RESULTS_FILE};
use gopo_bench::BenchError;

const SMALL: &str = r#"
name = "small"
k_grid = [8, 16]
seeds = [0, 1]

[mdp]
generator = "random"
states = 3
actions = 2
horizon = 2
b = 1.0
seed = 3

[class]
kind = "closed"
distractors = 2
scales = [0.2]
seed = 1

[behavior]
kind = "fixed"
policy = { kind = "uniform" }

[[algorithms]]
critic = "vsc"

[[algorithms]]
critic = "roc"
iterations = 10

[[algorithms]]
critic = "psc"
iterations = 10
"#;

fn config() -> ExperimentConfig {
    ExperimentConfig::from_toml(SMALL).unwrap()
}

fn bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_writes_one_dataset_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    cmd_gen(&config(), dir.path()).unwrap();
    assert_eq!(std::fs::read_dir(dir.path().join("data")).unwrap().count(), 4);
}

#[test]
fn regeneration_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_gen(&config(), a.path()).unwrap();
    cmd_gen(&config(), b.path()).unwrap();
    assert_eq!(bytes(a.path()), bytes(b.path()));
}

#[test]
fn config_errors_name_the_field() {
    let err = ExperimentConfig::from_toml(&SMALL.replace("k_grid = [8, 16]", "k_grid = [16, 8]")).unwrap_err();
    assert!(err.to_string().contains("k_grid"), "{err}");
    assert_eq!(err.exit_code(), 2);
    let err = ExperimentConfig::from_toml(&SMALL.replace("seeds = [0, 1]", "seeds = []")).unwrap_err();
    assert!(err.to_string().contains("seeds"), "{err}");
    let err = ExperimentConfig::from_toml(&SMALL.replace("distractors = 2", "distractors = \"two\"")).unwrap_err();
    // tagged tables report the enclosing table and the expected type
    assert!(err.to_string().contains("[class]") && err.to_string().contains("expected usize"), "{err}");
    let err = ExperimentConfig::from_toml(&format!("{SMALL}\nbogus = 1\n")).unwrap_err();
    assert!(err.to_string().contains("bogus"), "{err}");
}

#[test]
fn run_fills_every_cell_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    cmd_gen(&cfg, dir.path()).unwrap();
    let rows = cmd_run(&cfg, dir.path()).unwrap();
    assert_eq!(rows.len(), 3 * 2 * 2);
    for row in &rows {
        assert!(row.failures.is_empty(), "{}", row.failures);
        let sub = row.suboptimality_value().unwrap();
        assert!(sub.abs() <= 2.0, "{sub}");
        assert!(row.wall_ms.is_none());
    }
    let first = std::fs::read(dir.path().join(RESULTS_FILE)).unwrap();
    cmd_run(&cfg, dir.path()).unwrap();
    assert_eq!(first, std::fs::read(dir.path().join(RESULTS_FILE)).unwrap());
    assert_eq!(read_results(&dir.path().join(RESULTS_FILE)).unwrap(), rows);
}

#[test]
fn run_without_gen_matches_run_after_gen() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let fresh = cmd_run(&cfg, dir.path()).unwrap();
    let other = tempfile::tempdir().unwrap();
    cmd_gen(&cfg, other.path()).unwrap();
    assert_eq!(results_csv(&fresh).unwrap(), results_csv(&cmd_run(&cfg, other.path()).unwrap()).unwrap());
}

#[test]
fn cell_failures_do_not_stop_the_sweep() {
    let text = SMALL.replace(
        "[[algorithms]]\ncritic = \"vsc\"",
        "[comparator]\nkind = \"diversity-cap\"\ncap = -1.0\nmenu = [{ kind = \"uniform\" }]\n\n[[algorithms]]\ncritic = \"vsc\"",
    );
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rows = cmd_run(&cfg, dir.path()).unwrap();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.failures.contains("no menu policy")));
}

#[test]
fn plot_rejects_unknown_schema_versions() {
    let dir = tempfile::tempdir().unwrap();
    let rows = cmd_run(&config(), dir.path()).unwrap();
    let text = results_csv(&rows).unwrap();
    let path = dir.path().join("future.csv");
    std::fs::write(&path, text.replace("\n1,", "\n99,")).unwrap();
    assert!(matches!(read_results(&path), Err(BenchError::Config(m)) if m.contains("schema version")));
}

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gopo-bench"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("out");
    let status = bench().arg("gen").arg(&cfg).env("GOPO_OUT", &out).status().unwrap();
    assert!(status.success());
    assert!(out.join("small").join("mdp.json").exists());
    let status = bench().arg("run").arg(&cfg).env("GOPO_OUT", &out).status().unwrap();
    assert!(status.success());
    let output = bench().arg("plot").arg(out.join("small").join(RESULTS_FILE)).output().unwrap();
    assert!(output.status.success());
    // two K values: the slope is omitted, not invented
    assert!(String::from_utf8_lossy(&output.stdout).contains("slope omitted"));
    assert!(out.join("small").join("slopes.csv").exists());

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, SMALL.replace("seeds = [0, 1]", "seeds = []")).unwrap();
    assert_eq!(bench().arg("run").arg(&bad).status().unwrap().code(), Some(2));
    assert_eq!(bench().arg("run").arg(dir.path().join("missing.toml")).status().unwrap().code(), Some(2));
}

#[test]
fn verify_flags_an_injected_fault() {
    let ok = bench().args(["verify", "--level", "quick"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = bench().args(["verify", "--inject-fault", "sign-flip"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
            n += 1;
        }
    }
    assert!(n >= 3);
}
