//! The actor loop: a pessimistic critic against the current policy, then a
//! multiplicative-weights step on its output, returning the uniform mixture
//! of all iterates.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::critics::{ChainPotential, CriticKind, CriticOutput};
use crate::data::{OfflineDataset, TdStatistics};
use crate::diversity::fmt_real;
use crate::error::{ensure, Error, Result};
use crate::function_spaces::{default_eta, FunctionClass, SoftPolicyState};
use crate::mdp::{evaluate_policy, induced_mdp, EpisodicMdp, InitialValue, MixturePolicy, Policy, StageFn};
use crate::numeric::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GopoConfig {
    pub critic: CriticKind,
    /// `T ≥ 1`
    pub iterations: usize,
    /// `None` resolves to `sqrt(ln|A| / (4 (e-2) b² T))`.
    pub eta: Option<f64>,
    pub seed: u64,
    /// Keep every policy iterate and critic table, as needed by the regret
    /// audit.
    pub record_trace: bool,
    /// Measure wall time per iteration. Off by default so traces are
    /// reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
    /// Per-stage log prior of the posterior critic; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_prior: Option<Vec<Vec<f64>>>,
}

impl GopoConfig {
    pub fn new(critic: CriticKind, iterations: usize, seed: u64) -> Self {
        GopoConfig { critic, iterations, eta: None, seed, record_trace: false, timing: false, log_prior: None }
    }

    pub fn resolved_eta(&self, class: &FunctionClass) -> f64 {
        self.eta.unwrap_or_else(|| default_eta(class.bound(), self.iterations, class.num_actions()))
    }

    fn validate(&self) -> Result<()> {
        ensure(self.iterations >= 1, || "at least one iteration is required".into())?;
        ensure(self.eta.is_none_or(|e| e >= 0.0 && e.is_finite()), || "eta must be finite and nonnegative".into())
    }
}

/// One iteration of the loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// 1-based iteration index.
    pub t: usize,
    pub critic: CriticOutput,
    /// `Q̲_1^t(s1, π^t)`
    pub q1_pessimistic: f64,
    /// Exact `V_1^{π^t}(s1)` when an evaluation MDP was supplied.
    pub v1_actor: Option<f64>,
    /// SHA-256 prefix of the policy probabilities.
    pub policy_hash: String,
    pub wall_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GopoTrace {
    pub eta: f64,
    pub bound: f64,
    pub rows: Vec<TraceRow>,
    /// `π^t`, recorded only with `record_trace`.
    pub policies: Vec<Policy>,
    /// `Q̲^t`, recorded only with `record_trace`.
    pub critic_tables: Vec<Vec<StageFn>>,
}

impl GopoTrace {
    pub const CSV_HEADER: &'static str = "t,critic_objective,q1_pessimistic,v1_actor,wall_ms";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.t,
                fmt_real(Some(row.critic.objective)),
                fmt_real(Some(row.q1_pessimistic)),
                fmt_real(row.v1_actor),
                fmt_real(row.wall_ms)
            ));
        }
        out
    }
}

pub fn policy_hash(pi: &Policy) -> String {
    let mut hasher = Sha256::new();
    for p in pi.as_flat() {
        hasher.update(p.to_le_bytes());
    }
    hex::encode(&hasher.finalize()[..8])
}

/// Runs `T` critic/actor rounds from the uniform policy. Critic errors abort
/// the run and carry the 1-based iteration index.
pub fn run(
    dataset: &OfflineDataset,
    class: &FunctionClass,
    config: &GopoConfig,
    eval_mdp: Option<&EpisodicMdp>,
) -> Result<(MixturePolicy, GopoTrace)> {
    config.validate()?;
    ensure(class.horizon() == dataset.horizon, || "class and dataset horizons differ".into())?;
    if let Some(mdp) = eval_mdp {
        dataset.check_shape(mdp)?;
    }
    let s1 = eval_mdp.map_or(0, |m| m.initial_state());
    let eta = config.resolved_eta(class);
    let stats = TdStatistics::new(dataset);
    let mut actor = SoftPolicyState::new(class.horizon(), class.num_states(), class.num_actions(), eta);
    let mut members = Vec::with_capacity(config.iterations);
    let mut trace = GopoTrace { eta, bound: class.bound(), rows: Vec::new(), policies: Vec::new(), critic_tables: Vec::new() };
    for t in 1..=config.iterations {
        let clock = config.timing.then(Instant::now);
        let pi = actor.render();
        let wrap = |e: Error| Error::Critic { iteration: t, source: Box::new(e) };
        let potential = ChainPotential::from_stats(&stats, class, &pi, s1, config.log_prior.clone()).map_err(wrap)?;
        let output = config.critic.compute(&potential, derive_seed(config.seed, &[t as u64])).map_err(wrap)?;
        let tables = output.render(class);
        actor.absorb(&tables)?;
        let v1_actor = eval_mdp.map(|m| pi.initial_value(m)).transpose()?;
        trace.rows.push(TraceRow {
            t,
            q1_pessimistic: output.initial_value,
            critic: output,
            v1_actor,
            policy_hash: policy_hash(&pi),
            wall_ms: clock.map(|c| c.elapsed().as_secs_f64() * 1e3),
        });
        if config.record_trace {
            trace.policies.push(pi.clone());
            trace.critic_tables.push(tables);
        }
        members.push(pi);
    }
    Ok((MixturePolicy { members }, trace))
}

/// Online regret of the actor on the induced MDPs and its bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretAudit {
    /// `Σ_t V^{comparator}_{1,M_t}(s1) - V^{π^t}_{1,M_t}(s1)`
    pub regret: f64,
    /// `4 H b sqrt(T ln|A|)`
    pub bound: f64,
    pub per_iteration: Vec<f64>,
}

/// Builds `M_t = M(Q̲^t, π^t)` for each recorded iteration and sums the
/// comparator's advantage there.
pub fn actor_regret_audit(trace: &GopoTrace, eval_mdp: &EpisodicMdp, comparator: &Policy) -> Result<RegretAudit> {
    ensure(!trace.rows.is_empty(), || "empty trace".into())?;
    ensure(trace.policies.len() == trace.rows.len() && trace.critic_tables.len() == trace.rows.len(), || {
        "the audit needs a trace recorded with record_trace".into()
    })?;
    let s1 = eval_mdp.initial_state();
    let mut per_iteration = Vec::with_capacity(trace.rows.len());
    for (pi, q) in trace.policies.iter().zip(&trace.critic_tables) {
        let m_t = induced_mdp(eval_mdp, q, pi)?;
        let gap = evaluate_policy(&m_t, comparator)?.initial_value(s1) - evaluate_policy(&m_t, pi)?.initial_value(s1);
        per_iteration.push(gap);
    }
    let t = trace.rows.len() as f64;
    let ln_a = (eval_mdp.num_actions() as f64).ln();
    Ok(RegretAudit {
        regret: per_iteration.iter().sum(),
        bound: 4.0 * eval_mdp.horizon() as f64 * trace.bound * (t * ln_a).sqrt(),
        per_iteration,
    })
}

/// `V_1^{comparator}(s1) - (1/T) Σ_t V_1^{π^t}(s1)`
pub fn evaluate_mixture(mixture: &MixturePolicy, eval_mdp: &EpisodicMdp, comparator: &Policy) -> Result<f64> {
    Ok(comparator.initial_value(eval_mdp)? - mixture.initial_value(eval_mdp)?)
}
