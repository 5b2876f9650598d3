//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gopo::error::Error as CoreError;
use gopo::function_spaces::{ClosedClassSpec, FunctionClass};
use gopo::generators::{
    chain_mdp, corridor_behavior, corridor_mdp, first_decision_mdp, linear_mdp, random_mdp, random_policy,
};
use gopo::mdp::{optimal_policy, EpisodicMdp, Policy};

use crate::BenchError;

/// Environment variable that overrides the output root.
pub const OUTPUT_ENV: &str = "GOPO_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub mdp: MdpSpec,
    pub class: ClassSpec,
    pub behavior: BehaviorSpec,
    pub k_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default)]
    pub comparator: ComparatorSpec,
    /// Output directory; `$GOPO_OUT/<name>` wins when the variable is set.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Probe policies used to estimate the misspecification `ξ` that enters
    /// the theorem-default `β`.
    #[serde(default = "default_probes")]
    pub misspec_probes: usize,
    /// Known misspecification; skips the probe estimate when set.
    #[serde(default)]
    pub xi: Option<f64>,
    /// Record per-cell wall time. Off keeps results byte-reproducible.
    #[serde(default)]
    pub timing: bool,
}

fn default_probes() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MdpSpec {
    Random { states: usize, actions: usize, horizon: usize, b: f64, #[serde(default)] noise_fraction: f64, seed: u64 },
    FirstDecision { states: usize, actions: usize, horizon: usize, b: f64, #[serde(default)] noise_fraction: f64, seed: u64 },
    Chain { states: usize, horizon: usize, b: f64 },
    Corridor { horizon: usize, b: f64, slip: f64 },
    Linear { states: usize, actions: usize, horizon: usize, dim: usize, b: f64, seed: u64 },
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ClassSpec {
    /// Bellman images under `policy` plus seeded distractors.
    Closed {
        distractors: usize,
        scales: Vec<f64>,
        #[serde(default)]
        state_only_after_first: bool,
        seed: u64,
        #[serde(default)]
        policy: PolicySpec,
    },
    Grid { levels: Vec<f64> },
    /// Needs the `linear` generator.
    LinearNet { resolution: f64 },
    File { path: PathBuf },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySpec {
    #[default]
    Uniform,
    Optimal,
    Random { seed: u64 },
    /// Corridor MDP only.
    Corridor { coverage: f64 },
    /// JSON policy document.
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BehaviorSpec {
    Fixed { policy: PolicySpec },
    RoundRobin { policies: Vec<PolicySpec> },
    GreedySoFar { #[serde(default = "default_greedy_eps")] epsilon: f64 },
}

fn default_greedy_eps() -> f64 {
    0.3
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticName {
    Vsc,
    Roc,
    Psc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ParamSpec {
    /// Parameters from the guarantees with unit constants.
    TheoremDefault {
        #[serde(default = "one")]
        beta_scale: f64,
        /// Stand-in for the comparator's unknown diversity.
        #[serde(default = "one")]
        diversity: f64,
    },
    Explicit {
        #[serde(default)]
        beta: Option<f64>,
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default)]
        gamma: Option<f64>,
    },
    /// Theorem defaults times the multiplier from `grid` that does best on a
    /// held-out seed. Not part of the guarantees.
    Tuned {
        #[serde(default = "default_tuning_grid")]
        grid: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

fn default_tuning_grid() -> Vec<f64> {
    vec![0.01, 0.1, 1.0, 10.0]
}

impl Default for ParamSpec {
    fn default() -> Self {
        ParamSpec::TheoremDefault { beta_scale: 1.0, diversity: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub critic: CriticName,
    #[serde(default)]
    pub params: ParamSpec,
    /// Overrides `T = ⌈K ln|A|⌉`.
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub eta: Option<f64>,
}

impl AlgorithmSpec {
    /// Label used in result rows.
    pub fn label(&self) -> String {
        let critic = match self.critic {
            CriticName::Vsc => "vsc",
            CriticName::Roc => "roc",
            CriticName::Psc => "psc",
        };
        match self.params {
            ParamSpec::Tuned { .. } => format!("{critic}-tuned"),
            _ => critic.to_string(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ComparatorSpec {
    #[default]
    Optimal,
    Policy { policy: PolicySpec },
    /// Best value among `menu` whose `C(π; ε)` stays within `cap`; `ε`
    /// defaults to `1/√K`. A menu-restricted maximizer.
    DiversityCap {
        cap: f64,
        menu: Vec<PolicySpec>,
        #[serde(default)]
        epsilon: Option<f64>,
    },
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Core(CoreError::io(path, e)))?;
        let mut config = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            config.rebase(dir);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Resolves relative file references against `dir`.
    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let MdpSpec::File { path } = &mut self.mdp {
            fix(path);
        }
        if let ClassSpec::File { path } = &mut self.class {
            fix(path);
        }
        let mut policies: Vec<&mut PolicySpec> = Vec::new();
        if let ClassSpec::Closed { policy, .. } = &mut self.class {
            policies.push(policy);
        }
        match &mut self.behavior {
            BehaviorSpec::Fixed { policy } => policies.push(policy),
            BehaviorSpec::RoundRobin { policies: list } => policies.extend(list.iter_mut()),
            BehaviorSpec::GreedySoFar { .. } => {}
        }
        match &mut self.comparator {
            ComparatorSpec::Policy { policy } => policies.push(policy),
            ComparatorSpec::DiversityCap { menu, .. } => policies.extend(menu.iter_mut()),
            ComparatorSpec::Optimal => {}
        }
        for p in policies {
            if let PolicySpec::File { path } = p {
                fix(path);
            }
        }
        if let Some(out) = &mut self.output {
            fix(out);
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |field: &str, why: &str| Err(BenchError::Config(format!("{field}: {why}")));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name", "must be a nonempty file-name-safe string");
        }
        if self.k_grid.is_empty() || self.k_grid.windows(2).any(|w| w[0] >= w[1]) || self.k_grid[0] == 0 {
            return bad("k_grid", "must be nonempty, positive and strictly increasing");
        }
        if self.seeds.is_empty() {
            return bad("seeds", "must be nonempty");
        }
        if self.xi.is_some_and(|x| !(x >= 0.0 && x.is_finite())) {
            return bad("xi", "must be finite and nonnegative");
        }
        if self.algorithms.is_empty() {
            return bad("algorithms", "must be nonempty");
        }
        for (n, alg) in self.algorithms.iter().enumerate() {
            if alg.iterations == Some(0) {
                return bad(&format!("algorithms[{n}].iterations"), "must be at least 1");
            }
            if alg.eta.is_some_and(|e| !(e >= 0.0 && e.is_finite())) {
                return bad(&format!("algorithms[{n}].eta"), "must be finite and nonnegative");
            }
            match &alg.params {
                ParamSpec::Explicit { beta, lambda, gamma } => {
                    let missing = match alg.critic {
                        CriticName::Vsc => beta.is_none(),
                        CriticName::Roc => lambda.is_none(),
                        CriticName::Psc => lambda.is_none() || gamma.is_none(),
                    };
                    if missing {
                        return bad(&format!("algorithms[{n}].params"), "explicit mode needs the critic's parameters");
                    }
                }
                ParamSpec::Tuned { grid } if grid.is_empty() => {
                    return bad(&format!("algorithms[{n}].params.grid"), "must be nonempty");
                }
                _ => {}
            }
        }
        if matches!(self.class, ClassSpec::LinearNet { .. }) && !matches!(self.mdp, MdpSpec::Linear { .. }) {
            return bad("class", "linear-net classes need the linear generator");
        }
        Ok(())
    }

    /// `$GOPO_OUT/<name>`, else `output`, else `out/<name>`.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root).join(&self.name),
            _ => self.output.clone().unwrap_or_else(|| PathBuf::from("out").join(&self.name)),
        }
    }

    /// The MDP and, for the linear generator, its features.
    pub fn build_mdp(&self) -> Result<(EpisodicMdp, Option<Vec<Vec<Vec<f64>>>>), BenchError> {
        let mdp = match self.mdp {
            MdpSpec::Random { states, actions, horizon, b, noise_fraction, seed } => {
                random_mdp(states, actions, horizon, b, noise_fraction, seed)?
            }
            MdpSpec::FirstDecision { states, actions, horizon, b, noise_fraction, seed } => {
                first_decision_mdp(states, actions, horizon, b, noise_fraction, seed)?
            }
            MdpSpec::Chain { states, horizon, b } => chain_mdp(states, horizon, b)?,
            MdpSpec::Corridor { horizon, b, slip } => corridor_mdp(horizon, b, slip)?,
            MdpSpec::Linear { states, actions, horizon, dim, b, seed } => {
                let lin = linear_mdp(states, actions, horizon, dim, b, seed)?;
                return Ok((lin.mdp, Some(lin.features)));
            }
            MdpSpec::File { ref path } => EpisodicMdp::load(path)?,
        };
        Ok((mdp, None))
    }

    pub fn build_class(&self, mdp: &EpisodicMdp, features: Option<&Vec<Vec<Vec<f64>>>>) -> Result<FunctionClass, BenchError> {
        Ok(match &self.class {
            ClassSpec::Closed { distractors, scales, state_only_after_first, seed, policy } => {
                let spec = ClosedClassSpec {
                    distractors: *distractors,
                    scales: scales.clone(),
                    state_only_after_first: *state_only_after_first,
                    seed: *seed,
                };
                FunctionClass::closed_under(mdp, &resolve_policy(policy, mdp)?, &spec)?
            }
            ClassSpec::Grid { levels } => {
                FunctionClass::grid(mdp.horizon(), mdp.num_states(), mdp.num_actions(), levels, mdp.bound())?
            }
            ClassSpec::LinearNet { resolution } => {
                let features = features.ok_or_else(|| BenchError::Config("class: linear-net needs features".into()))?;
                FunctionClass::linear_net(features.clone(), mdp.num_actions(), mdp.bound(), *resolution)?
            }
            ClassSpec::File { path } => FunctionClass::load(path)?,
        })
    }
}

pub fn resolve_policy(spec: &PolicySpec, mdp: &EpisodicMdp) -> Result<Policy, BenchError> {
    let (h, s, a) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let pi = match spec {
        PolicySpec::Uniform => Policy::uniform(h, s, a),
        PolicySpec::Optimal => optimal_policy(mdp),
        PolicySpec::Random { seed } => random_policy(h, s, a, *seed),
        PolicySpec::Corridor { coverage } => corridor_behavior(h, *coverage)?,
        PolicySpec::File { path } => {
            let text = std::fs::read_to_string(path).map_err(|e| BenchError::Core(CoreError::io(path, e)))?;
            let pi: Policy = serde_json::from_str(&text).map_err(CoreError::from)?;
            pi.validate()?;
            pi
        }
    };
    if !mdp.policy_shape_matches(&pi) {
        return Err(BenchError::Config(format!("policy {spec:?} does not fit the MDP")));
    }
    Ok(pi)
}
