//! Finite episodic time-inhomogeneous MDPs and their exact evaluation.
//!
//! Stages are indexed `0..horizon` in code. The value of stage `horizon`
//! (one past the last) is the all-zero table under every policy.

mod eval;
mod io;

pub use eval::{
    advantage_sum, bellman_apply, bellman_error, check_error_decomposition, error_decomposition,
    evaluate_policy, induced_mdp, optimal_policy, suboptimality, ErrorDecomposition,
    PolicyEvaluation,
};
pub use io::MdpDocument;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

const SIMPLEX_TOL: f64 = 1e-12;

/// A table `f(s, a)` for one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFn {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl StageFn {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self::constant(num_states, num_actions, 0.0)
    }

    pub fn constant(num_states: usize, num_actions: usize, c: f64) -> Self {
        StageFn {
            num_states,
            num_actions,
            values: vec![c; num_states * num_actions],
        }
    }

    /// Builds a table from row-major `values[s * num_actions + a]`.
    pub fn from_values(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        ensure(values.len() == num_states * num_actions, || {
            format!(
                "stage table has {} entries, expected {}x{}",
                values.len(),
                num_states,
                num_actions
            )
        })?;
        Ok(StageFn {
            num_states,
            num_actions,
            values,
        })
    }

    pub fn from_fn(num_states: usize, num_actions: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(num_states * num_actions);
        for s in 0..num_states {
            for a in 0..num_actions {
                values.push(f(s, a));
            }
        }
        StageFn {
            num_states,
            num_actions,
            values,
        }
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.num_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `Σ_a dist[a] f(s, a)`.
    pub fn expect_action(&self, s: usize, dist: &[f64]) -> f64 {
        self.row(s).iter().zip(dist).map(|(f, p)| f * p).sum()
    }

    pub fn same_shape(&self, other: &StageFn) -> bool {
        self.num_states == other.num_states && self.num_actions == other.num_actions
    }

    pub fn zip_map(&self, other: &StageFn, op: impl Fn(f64, f64) -> f64) -> StageFn {
        debug_assert!(self.same_shape(other));
        StageFn {
            num_states: self.num_states,
            num_actions: self.num_actions,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&x, &y)| op(x, y))
                .collect(),
        }
    }
}

/// Additive reward noise on top of the mean reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RewardNoise {
    None,
    /// Uniform on `[-half_width, half_width]`.
    Uniform {
        half_width: f64,
    },
}

impl RewardNoise {
    pub fn half_width(&self) -> f64 {
        match *self {
            RewardNoise::None => 0.0,
            RewardNoise::Uniform { half_width } => half_width,
        }
    }

    pub fn variance(&self) -> f64 {
        let w = self.half_width();
        w * w / 3.0
    }
}

/// A time-inhomogeneous stochastic policy, one action simplex per `(h, s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn uniform(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Policy {
            horizon,
            num_states,
            num_actions,
            probs: vec![p; horizon * num_states * num_actions],
        }
    }

    /// A deterministic policy from `actions[h][s]`.
    pub fn deterministic(num_actions: usize, actions: &[Vec<usize>]) -> Result<Self> {
        let horizon = actions.len();
        let num_states = actions.first().map_or(0, Vec::len);
        let mut probs = vec![0.0; horizon * num_states * num_actions];
        for (h, row) in actions.iter().enumerate() {
            ensure(row.len() == num_states, || "ragged action table".into())?;
            for (s, &a) in row.iter().enumerate() {
                ensure(a < num_actions, || {
                    format!("action {a} out of range at ({h}, {s})")
                })?;
                probs[(h * num_states + s) * num_actions + a] = 1.0;
            }
        }
        Ok(Policy {
            horizon,
            num_states,
            num_actions,
            probs,
        })
    }

    /// Validating constructor from `table[h][s][a]`.
    pub fn from_table(table: &[Vec<Vec<f64>>]) -> Result<Self> {
        let horizon = table.len();
        let num_states = table.first().map_or(0, Vec::len);
        let num_actions = table.first().and_then(|t| t.first()).map_or(0, Vec::len);
        let mut probs = Vec::with_capacity(horizon * num_states * num_actions);
        for stage in table {
            ensure(stage.len() == num_states, || "ragged policy table".into())?;
            for dist in stage {
                ensure(dist.len() == num_actions, || "ragged policy table".into())?;
                probs.extend_from_slice(dist);
            }
        }
        let policy = Policy {
            horizon,
            num_states,
            num_actions,
            probs,
        };
        policy.validate()?;
        Ok(policy)
    }

    /// Flat constructor, `probs[(h * S + s) * A + a]`.
    pub fn from_flat(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        probs: Vec<f64>,
    ) -> Result<Self> {
        ensure(probs.len() == horizon * num_states * num_actions, || {
            "policy length mismatch".into()
        })?;
        let policy = Policy {
            horizon,
            num_states,
            num_actions,
            probs,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        for h in 0..self.horizon {
            for s in 0..self.num_states {
                let d = self.dist(h, s);
                let sum: f64 = d.iter().sum();
                if d.iter().any(|&p| p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > SIMPLEX_TOL {
                    return Err(Error::Invalid {
                        what: "policy",
                        reason: format!("pi[{h}][{s}] is not a simplex (sum {sum})"),
                    });
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn dist(&self, h: usize, s: usize) -> &[f64] {
        let start = (h * self.num_states + s) * self.num_actions;
        &self.probs[start..start + self.num_actions]
    }

    #[inline]
    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        self.dist(h, s)[a]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.probs
    }

    pub fn to_table(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.horizon)
            .map(|h| {
                (0..self.num_states)
                    .map(|s| self.dist(h, s).to_vec())
                    .collect()
            })
            .collect()
    }
}

/// A uniform mixture over member policies, evaluated as the average of
/// member values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixturePolicy {
    pub members: Vec<Policy>,
}

/// Anything whose initial-state value can be computed exactly.
pub trait InitialValue {
    fn initial_value(&self, mdp: &EpisodicMdp) -> Result<f64>;
}

impl InitialValue for Policy {
    fn initial_value(&self, mdp: &EpisodicMdp) -> Result<f64> {
        Ok(evaluate_policy(mdp, self)?.initial_value(mdp.initial_state()))
    }
}

impl InitialValue for MixturePolicy {
    fn initial_value(&self, mdp: &EpisodicMdp) -> Result<f64> {
        ensure(!self.members.is_empty(), || "empty mixture".into())?;
        let mut total = 0.0;
        for member in &self.members {
            total += member.initial_value(mdp)?;
        }
        Ok(total / self.members.len() as f64)
    }
}

/// Finite tabular episodic MDP with a deterministic initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodicMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    /// `[h][s][a][s']`
    transitions: Vec<f64>,
    /// `[h][s][a]`
    rewards: Vec<f64>,
    noise: RewardNoise,
    initial_state: usize,
    bound: f64,
}

impl EpisodicMdp {
    /// Validating constructor. `transitions[h][s][a]` is a distribution over
    /// next states, `rewards[h][s][a]` the mean reward.
    pub fn new(
        transitions: Vec<Vec<Vec<Vec<f64>>>>,
        rewards: Vec<Vec<Vec<f64>>>,
        noise: RewardNoise,
        initial_state: usize,
        bound: f64,
    ) -> Result<Self> {
        let horizon = transitions.len();
        let num_states = transitions.first().map_or(0, Vec::len);
        let num_actions = transitions
            .first()
            .and_then(|t| t.first())
            .map_or(0, Vec::len);
        let invalid = |reason: String| Error::Invalid {
            what: "mdp",
            reason,
        };
        if horizon == 0 || num_states == 0 || num_actions == 0 {
            return Err(invalid(
                "horizon, states and actions must be positive".into(),
            ));
        }
        if rewards.len() != horizon {
            return Err(invalid("reward table horizon mismatch".into()));
        }
        let mut flat_p = Vec::with_capacity(horizon * num_states * num_actions * num_states);
        let mut flat_r = Vec::with_capacity(horizon * num_states * num_actions);
        for (p_h, r_h) in transitions.iter().zip(&rewards) {
            if p_h.len() != num_states || r_h.len() != num_states {
                return Err(invalid("ragged state dimension".into()));
            }
            for (p_hs, r_hs) in p_h.iter().zip(r_h) {
                if p_hs.len() != num_actions || r_hs.len() != num_actions {
                    return Err(invalid("ragged action dimension".into()));
                }
                for p in p_hs {
                    if p.len() != num_states {
                        return Err(invalid("next-state vector length mismatch".into()));
                    }
                    flat_p.extend_from_slice(p);
                }
                flat_r.extend_from_slice(r_hs);
            }
        }
        let mdp = EpisodicMdp {
            num_states,
            num_actions,
            horizon,
            transitions: flat_p,
            rewards: flat_r,
            noise,
            initial_state,
            bound,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Checks every structural and boundedness invariant.
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::Invalid {
            what: "mdp",
            reason,
        };
        if !(self.bound >= 1.0) {
            return Err(invalid(format!(
                "bound b = {} must be at least 1",
                self.bound
            )));
        }
        if self.initial_state >= self.num_states {
            return Err(invalid(format!(
                "initial state {} out of range",
                self.initial_state
            )));
        }
        let w = self.noise.half_width();
        if !(w >= 0.0) || !w.is_finite() {
            return Err(invalid(format!(
                "noise half-width {w} must be finite and nonnegative"
            )));
        }
        for h in 0..self.horizon {
            for s in 0..self.num_states {
                for a in 0..self.num_actions {
                    let p = self.next_dist(h, s, a);
                    let sum: f64 = p.iter().sum();
                    if p.iter().any(|&x| x < 0.0 || !x.is_finite())
                        || (sum - 1.0).abs() > SIMPLEX_TOL
                    {
                        return Err(invalid(format!("P[{h}][{s}][{a}] is not a distribution")));
                    }
                    let r = self.reward(h, s, a);
                    if !r.is_finite() || r.abs() > self.bound {
                        return Err(invalid(format!(
                            "|r[{h}][{s}][{a}]| = {} exceeds b",
                            r.abs()
                        )));
                    }
                }
            }
        }
        let (lo, hi) = self.cumulative_reward_range();
        let slack = 1e-12 * self.bound;
        if hi > self.bound + slack || lo < -self.bound - slack {
            return Err(invalid(format!(
                "cumulative reward range [{lo}, {hi}] is not within [-b, b] with b = {}",
                self.bound
            )));
        }
        Ok(())
    }

    /// Min and max of `Σ_h (r_h + noise)` over all trajectories with
    /// positive probability from the initial state, noise at its extremes.
    pub fn cumulative_reward_range(&self) -> (f64, f64) {
        let w = self.noise.half_width();
        let mut hi_next = vec![0.0; self.num_states];
        let mut lo_next = vec![0.0; self.num_states];
        for h in (0..self.horizon).rev() {
            let mut hi = vec![f64::NEG_INFINITY; self.num_states];
            let mut lo = vec![f64::INFINITY; self.num_states];
            for s in 0..self.num_states {
                for a in 0..self.num_actions {
                    let p = self.next_dist(h, s, a);
                    let (mut best, mut worst) = (0.0f64, 0.0f64);
                    if h + 1 < self.horizon {
                        best = f64::NEG_INFINITY;
                        worst = f64::INFINITY;
                        for (sn, &q) in p.iter().enumerate() {
                            if q > 0.0 {
                                best = best.max(hi_next[sn]);
                                worst = worst.min(lo_next[sn]);
                            }
                        }
                    }
                    let r = self.reward(h, s, a);
                    hi[s] = hi[s].max(r + w + best);
                    lo[s] = lo[s].min(r - w + worst);
                }
            }
            hi_next = hi;
            lo_next = lo;
        }
        (lo_next[self.initial_state], hi_next[self.initial_state])
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn noise(&self) -> RewardNoise {
        self.noise
    }

    #[inline]
    pub fn next_dist(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let n = self.num_states;
        let start = ((h * n + s) * self.num_actions + a) * n;
        &self.transitions[start..start + n]
    }

    #[inline]
    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[(h * self.num_states + s) * self.num_actions + a]
    }

    /// Mean rewards of stage `h` as a table.
    pub fn reward_table(&self, h: usize) -> StageFn {
        let start = h * self.num_states * self.num_actions;
        StageFn {
            num_states: self.num_states,
            num_actions: self.num_actions,
            values: self.rewards[start..start + self.num_states * self.num_actions].to_vec(),
        }
    }

    /// Same MDP with stage reward tables replaced. No boundedness check;
    /// used for induced MDPs whose rewards may exceed `b`.
    pub fn with_rewards(&self, rewards: &[StageFn]) -> EpisodicMdp {
        let mut flat = Vec::with_capacity(self.rewards.len());
        for table in rewards {
            flat.extend_from_slice(table.values());
        }
        EpisodicMdp {
            rewards: flat,
            ..self.clone()
        }
    }

    pub fn policy_shape_matches(&self, pi: &Policy) -> bool {
        pi.horizon == self.horizon
            && pi.num_states == self.num_states
            && pi.num_actions == self.num_actions
    }

    pub(crate) fn check_policy(&self, pi: &Policy) -> Result<()> {
        ensure(self.policy_shape_matches(pi), || {
            format!(
                "policy shape ({}, {}, {}) does not match mdp ({}, {}, {})",
                pi.horizon,
                pi.num_states,
                pi.num_actions,
                self.horizon,
                self.num_states,
                self.num_actions
            )
        })
    }

    pub(crate) fn check_table(&self, f: &StageFn) -> Result<()> {
        ensure(
            f.num_states == self.num_states && f.num_actions == self.num_actions,
            || {
                format!(
                    "stage table shape ({}, {}) does not match mdp ({}, {})",
                    f.num_states, f.num_actions, self.num_states, self.num_actions
                )
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> (Vec<Vec<Vec<Vec<f64>>>>, Vec<Vec<Vec<f64>>>) {
        let p = vec![vec![vec![vec![0.5, 0.5]; 2]; 2]; 2];
        let r = vec![vec![vec![0.25, 0.5]; 2]; 2];
        (p, r)
    }

    #[test]
    fn rejects_non_simplex_transitions() {
        let (mut p, r) = two_state();
        p[1][0][1] = vec![0.7, 0.7];
        let err = EpisodicMdp::new(p, r, RewardNoise::None, 0, 1.0).unwrap_err();
        assert!(err.to_string().contains("P[1][0][1]"));
    }

    #[test]
    fn rejects_unbounded_cumulative_reward() {
        let (p, mut r) = two_state();
        r[0][0][1] = 0.8;
        r[1][1][1] = 0.8;
        assert!(EpisodicMdp::new(p.clone(), r.clone(), RewardNoise::None, 0, 1.0).is_err());
        // Raising b to cover the worst path makes it valid.
        assert!(EpisodicMdp::new(p, r, RewardNoise::None, 0, 1.6).is_ok());
    }

    #[test]
    fn noise_widens_the_cumulative_range() {
        let (p, r) = two_state();
        let ok = EpisodicMdp::new(
            p.clone(),
            r.clone(),
            RewardNoise::Uniform { half_width: 0.0 },
            0,
            1.0,
        );
        assert!(ok.is_ok());
        let mdp = ok.unwrap();
        assert_eq!(mdp.cumulative_reward_range(), (0.5, 1.0));
        let err = EpisodicMdp::new(p, r, RewardNoise::Uniform { half_width: 0.1 }, 0, 1.0);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_small_bound_and_bad_initial_state() {
        let (p, r) = two_state();
        assert!(EpisodicMdp::new(p.clone(), r.clone(), RewardNoise::None, 0, 0.5).is_err());
        assert!(EpisodicMdp::new(p, r, RewardNoise::None, 2, 1.0).is_err());
    }

    #[test]
    fn policy_validation() {
        assert!(Policy::from_table(&[vec![vec![0.5, 0.5]]]).is_ok());
        assert!(Policy::from_table(&[vec![vec![0.6, 0.5]]]).is_err());
        assert!(Policy::from_table(&[vec![vec![1.5, -0.5]]]).is_err());
        let det = Policy::deterministic(3, &[vec![2, 0]]).unwrap();
        assert_eq!(det.dist(0, 0), &[0.0, 0.0, 1.0]);
        assert!(Policy::deterministic(2, &[vec![2]]).is_err());
    }
}
