//! `gen`, `run` and `diversity`: instance files, the K × seed × algorithm
//! sweep and per-dataset coverage tables.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use gopo::critics::{CriticKind, TheoremDefaults};
use gopo::data::{collect, BehaviorSchedule, OfflineDataset};
use gopo::diversity::{data_diversity, diversity_report, fmt_real, DiversityReport};
use gopo::error::Error as CoreError;
use gopo::function_spaces::{default_eta, estimate_misspecification, FunctionClass};
use gopo::gopo::{evaluate_mixture, run, GopoConfig};
use gopo::mdp::{evaluate_policy, EpisodicMdp, Policy};
use gopo::numeric::derive_seed;

use crate::config::{resolve_policy, AlgorithmSpec, BehaviorSpec, ComparatorSpec, CriticName, ExperimentConfig, ParamSpec};
use crate::{BenchError, SCHEMA_VERSION};

/// Everything shared by the cells of one experiment.
pub struct Instance {
    pub mdp: EpisodicMdp,
    pub class: FunctionClass,
    pub schedule: BehaviorSchedule,
    /// Largest probed misspecification, fed to the theorem-default `β`.
    pub xi: f64,
}

impl Instance {
    pub fn build(config: &ExperimentConfig) -> Result<Self, BenchError> {
        let (mdp, features) = config.build_mdp()?;
        let class = config.build_class(&mdp, features.as_ref())?;
        Self::assemble(config, mdp, class)
    }

    fn assemble(config: &ExperimentConfig, mdp: EpisodicMdp, class: FunctionClass) -> Result<Self, BenchError> {
        let schedule = match &config.behavior {
            BehaviorSpec::Fixed { policy } => BehaviorSchedule::Fixed { policy: resolve_policy(policy, &mdp)? },
            BehaviorSpec::RoundRobin { policies } => BehaviorSchedule::RoundRobin {
                policies: policies.iter().map(|p| resolve_policy(p, &mdp)).collect::<Result<_, _>>()?,
            },
            BehaviorSpec::GreedySoFar { epsilon } => BehaviorSchedule::GreedySoFar { epsilon: *epsilon },
        };
        schedule.validate(mdp.horizon(), mdp.num_states(), mdp.num_actions())?;
        let xi = match config.xi {
            Some(xi) => xi,
            None => {
                let probe_t = config.k_grid.last().copied().unwrap_or(1);
                let report = estimate_misspecification(&class, &mdp, config.misspec_probes.max(1), probe_t, 0, None)?;
                report.xi.iter().fold(0.0, |m: f64, &x| m.max(x))
            }
        };
        Ok(Instance { mdp, class, schedule, xi })
    }

    /// Reads the files written by [`cmd_gen`].
    pub fn load(config: &ExperimentConfig, dir: &Path) -> Result<Self, BenchError> {
        let mdp = EpisodicMdp::load(&dir.join(MDP_FILE))?;
        let class = FunctionClass::load(&dir.join(CLASS_FILE))?;
        Self::assemble(config, mdp, class)
    }

    pub fn dataset(&self, k: usize, seed: u64) -> Result<OfflineDataset, BenchError> {
        Ok(collect(&self.mdp, &self.schedule, k, seed)?)
    }
}

pub const MDP_FILE: &str = "mdp.json";
pub const CLASS_FILE: &str = "class.json";
pub const RESULTS_FILE: &str = "results.csv";
pub const DIVERSITY_FILE: &str = "diversity.csv";

pub fn dataset_path(dir: &Path, k: usize, seed: u64) -> PathBuf {
    dir.join("data").join(format!("k{k}_seed{seed}.txt"))
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), BenchError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| CoreError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))?;
    Ok(())
}

/// Writes the MDP, the class and one dataset per `(K, seed)` under `dir`.
pub fn cmd_gen(config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    let inst = Instance::build(config)?;
    let mut written = vec![dir.join(MDP_FILE), dir.join(CLASS_FILE)];
    write_atomic(&written[0], inst.mdp.to_json().as_bytes())?;
    write_atomic(&written[1], inst.class.to_json().as_bytes())?;
    write_atomic(&dir.join("config.toml"), config.to_toml().as_bytes())?;
    for &k in &config.k_grid {
        for &seed in &config.seeds {
            let path = dataset_path(dir, k, seed);
            write_atomic(&path, inst.dataset(k, seed)?.to_text().as_bytes())?;
            written.push(path);
        }
    }
    Ok(written)
}

/// One line of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub algorithm: String,
    pub k: usize,
    pub seed: u64,
    pub iterations: Option<usize>,
    pub eta: Option<String>,
    pub beta: Option<String>,
    pub lambda: Option<String>,
    pub gamma: Option<String>,
    pub comparator: String,
    pub comparator_value: Option<String>,
    pub suboptimality: Option<String>,
    /// `C(comparator; 1/√K)` against the realized behavior.
    pub diversity: Option<String>,
    pub wall_ms: Option<String>,
    pub failures: String,
}

impl ResultRow {
    pub fn suboptimality_value(&self) -> Option<f64> {
        self.suboptimality.as_deref().and_then(|s| s.parse().ok())
    }
}

fn real(x: f64) -> Option<String> {
    Some(fmt_real(Some(x)))
}

struct Resolved {
    critic: CriticKind,
    iterations: usize,
    eta: f64,
}

fn resolve(alg: &AlgorithmSpec, inst: &Instance, k: usize, multiplier: f64) -> Result<Resolved, BenchError> {
    let (beta_scale, diversity) = match alg.params {
        ParamSpec::TheoremDefault { beta_scale, diversity } => (beta_scale, diversity),
        _ => (1.0, 1.0),
    };
    let d = TheoremDefaults::new(&inst.class, k, inst.xi, diversity, beta_scale)?;
    let iterations = alg.iterations.unwrap_or(d.iterations);
    let eta = alg.eta.unwrap_or_else(|| {
        if iterations == d.iterations {
            d.eta
        } else {
            default_eta(inst.class.bound(), iterations, inst.class.num_actions())
        }
    });
    let critic = match (&alg.params, alg.critic) {
        (ParamSpec::Explicit { beta, lambda, gamma }, c) => match c {
            CriticName::Vsc => CriticKind::Vsc { beta: beta.unwrap_or_default() },
            CriticName::Roc => CriticKind::Roc { lambda: lambda.unwrap_or_default() },
            CriticName::Psc => CriticKind::Psc { lambda: lambda.unwrap_or_default(), gamma: gamma.unwrap_or_default() },
        },
        (_, CriticName::Vsc) => CriticKind::Vsc { beta: multiplier * d.beta },
        (_, CriticName::Roc) => CriticKind::Roc { lambda: multiplier * d.roc_lambda },
        (_, CriticName::Psc) => CriticKind::Psc { lambda: multiplier * d.psc_lambda, gamma: d.psc_gamma },
    };
    Ok(Resolved { critic, iterations, eta })
}

fn comparator_for(
    spec: &ComparatorSpec,
    inst: &Instance,
    data: &OfflineDataset,
    k: usize,
) -> Result<(String, Policy), BenchError> {
    match spec {
        ComparatorSpec::Optimal => Ok(("optimal".into(), gopo::mdp::optimal_policy(&inst.mdp))),
        ComparatorSpec::Policy { policy } => Ok((format!("{policy:?}").to_lowercase(), resolve_policy(policy, &inst.mdp)?)),
        ComparatorSpec::DiversityCap { cap, menu, epsilon } => {
            let eps = epsilon.unwrap_or(1.0 / (k as f64).sqrt());
            let d_mu = data.behavior_occupancy(&inst.mdp)?;
            let mut best: Option<(usize, f64, Policy)> = None;
            for (n, spec) in menu.iter().enumerate() {
                let pi = resolve_policy(spec, &inst.mdp)?;
                let eval = evaluate_policy(&inst.mdp, &pi)?;
                if data_diversity(&inst.class, &eval.occupancy, &d_mu, eps)?.value > *cap {
                    continue;
                }
                let v = eval.initial_value(inst.mdp.initial_state());
                if best.as_ref().is_none_or(|b| v > b.1) {
                    best = Some((n, v, pi));
                }
            }
            let (n, _, pi) = best.ok_or_else(|| {
                BenchError::Config(format!("comparator: no menu policy has diversity within {cap} at K = {k}"))
            })?;
            Ok((format!("menu[{n}]"), pi))
        }
    }
}

fn mixture_suboptimality(inst: &Instance, data: &OfflineDataset, r: &Resolved, seed: u64, comparator: &Policy) -> Result<f64, BenchError> {
    let mut config = GopoConfig::new(r.critic, r.iterations, seed);
    config.eta = Some(r.eta);
    let (mixture, _) = run(data, &inst.class, &config, None)?;
    Ok(evaluate_mixture(&mixture, &inst.mdp, comparator)?)
}

/// Multiplier from the tuning grid with the best sub-optimality on a
/// dataset whose seed is disjoint from the experiment seeds.
fn tune(alg: &AlgorithmSpec, inst: &Instance, k: usize, comparator: &ComparatorSpec) -> Result<f64, BenchError> {
    let ParamSpec::Tuned { grid } = &alg.params else { return Ok(1.0) };
    let held_out = derive_seed(0x686f_6c64, &[k as u64]);
    let data = inst.dataset(k, held_out)?;
    let (_, pi) = comparator_for(comparator, inst, &data, k)?;
    let mut best = (f64::INFINITY, 1.0);
    for &m in grid {
        let r = resolve(alg, inst, k, m)?;
        let sub = mixture_suboptimality(inst, &data, &r, held_out, &pi)?;
        if sub < best.0 {
            best = (sub, m);
        }
    }
    Ok(best.1)
}

fn run_cell(
    inst: &Instance,
    config: &ExperimentConfig,
    alg: &AlgorithmSpec,
    multiplier: f64,
    k: usize,
    seed: u64,
    dataset: impl FnOnce() -> Result<OfflineDataset, BenchError>,
) -> ResultRow {
    let mut row = ResultRow {
        schema_version: SCHEMA_VERSION,
        algorithm: alg.label(),
        k,
        seed,
        iterations: None,
        eta: None,
        beta: None,
        lambda: None,
        gamma: None,
        comparator: String::new(),
        comparator_value: None,
        suboptimality: None,
        diversity: None,
        wall_ms: None,
        failures: String::new(),
    };
    let clock = Instant::now();
    let outcome = (|| -> Result<(), BenchError> {
        let data = dataset()?;
        let r = resolve(alg, inst, k, multiplier)?;
        row.iterations = Some(r.iterations);
        row.eta = real(r.eta);
        match r.critic {
            CriticKind::Vsc { beta } => row.beta = real(beta),
            CriticKind::Roc { lambda } => row.lambda = real(lambda),
            CriticKind::Psc { lambda, gamma } => {
                row.lambda = real(lambda);
                row.gamma = real(gamma);
            }
        }
        let (label, pi) = comparator_for(&config.comparator, inst, &data, k)?;
        row.comparator = label;
        let eval = evaluate_policy(&inst.mdp, &pi)?;
        row.comparator_value = real(eval.initial_value(inst.mdp.initial_state()));
        let d_mu = data.behavior_occupancy(&inst.mdp)?;
        row.diversity = real(data_diversity(&inst.class, &eval.occupancy, &d_mu, 1.0 / (k as f64).sqrt())?.value);
        row.suboptimality = real(mixture_suboptimality(inst, &data, &r, seed, &pi)?);
        Ok(())
    })();
    if let Err(e) = outcome {
        row.failures = e.to_string();
    }
    if config.timing {
        row.wall_ms = real(clock.elapsed().as_secs_f64() * 1e3);
    }
    row
}

/// Every `(algorithm, K, seed)` cell, in config order. Datasets come from
/// `dir` when present and are regenerated in memory otherwise. Cell
/// failures are recorded in the row and do not stop the sweep.
pub fn run_experiment(config: &ExperimentConfig, inst: &Instance, dir: Option<&Path>) -> Result<Vec<ResultRow>, BenchError> {
    let mut multipliers = Vec::new();
    for alg in &config.algorithms {
        let per_k = config.k_grid.iter().map(|&k| tune(alg, inst, k, &config.comparator)).collect::<Result<Vec<_>, _>>()?;
        multipliers.push(per_k);
    }
    let cells: Vec<(usize, usize, u64)> = (0..config.algorithms.len())
        .flat_map(|a| config.k_grid.iter().enumerate().flat_map(move |(ki, _)| config.seeds.iter().map(move |&s| (a, ki, s))))
        .collect();
    Ok(cells
        .par_iter()
        .map(|&(a, ki, seed)| {
            let k = config.k_grid[ki];
            let load = || match dir.map(|d| dataset_path(d, k, seed)).filter(|p| p.exists()) {
                Some(path) => {
                    let data = OfflineDataset::load(&path)?;
                    data.check_fingerprint(&inst.mdp);
                    Ok(data)
                }
                None => inst.dataset(k, seed),
            };
            run_cell(inst, config, &config.algorithms[a], multipliers[a][ki], k, seed, load)
        })
        .collect())
}

pub fn results_csv(rows: &[ResultRow]) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, BenchError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("schema_version") {
        return Err(BenchError::Config(format!("{}: not a results table", path.display())));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.get(0) != Some(&SCHEMA_VERSION.to_string()) {
            return Err(BenchError::Config(format!(
                "{}: unsupported schema version {:?}",
                path.display(),
                record.get(0).unwrap_or("")
            )));
        }
        rows.push(record.deserialize(Some(&headers))?);
    }
    Ok(rows)
}

/// Runs the sweep and writes `results.csv` under `dir`.
pub fn cmd_run(config: &ExperimentConfig, dir: &Path) -> Result<Vec<ResultRow>, BenchError> {
    let inst = if dir.join(MDP_FILE).exists() { Instance::load(config, dir)? } else { Instance::build(config)? };
    let rows = run_experiment(config, &inst, Some(dir))?;
    write_atomic(&dir.join(RESULTS_FILE), results_csv(&rows)?.as_bytes())?;
    Ok(rows)
}

/// Coverage of the comparator for every `(K, seed)` dataset at
/// `ε ∈ {0, 1/√K}`, written to `diversity.csv`.
pub fn cmd_diversity(config: &ExperimentConfig, dir: &Path) -> Result<String, BenchError> {
    let inst = if dir.join(MDP_FILE).exists() { Instance::load(config, dir)? } else { Instance::build(config)? };
    let mut out = format!("schema_version,k,seed,comparator,{}\n", DiversityReport::CSV_HEADER);
    for &k in &config.k_grid {
        for &seed in &config.seeds {
            let path = dataset_path(dir, k, seed);
            let data = if path.exists() { OfflineDataset::load(&path)? } else { inst.dataset(k, seed)? };
            let (label, pi) = comparator_for(&config.comparator, &inst, &data, k)?;
            let report = diversity_report(&inst.class, &inst.mdp, &pi, &data, &[0.0, 1.0 / (k as f64).sqrt()], 1.0)?;
            for line in report.csv_rows() {
                out.push_str(&format!("{SCHEMA_VERSION},{k},{seed},{label},{line}\n"));
            }
        }
    }
    write_atomic(&dir.join(DIVERSITY_FILE), out.as_bytes())?;
    Ok(out)
}
