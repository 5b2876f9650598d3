//! Offline datasets collected by fixed or adaptive behavior schedules, and
//! the squared TD losses that every critic consumes.

mod io;
mod td;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::mdp::{evaluate_policy, EpisodicMdp, Policy, RewardNoise, StageFn};
use crate::numeric::{keyed_rng, sample_probs};

pub use td::{build_td_matrix, td_loss, TdLossMatrix, TdStatistics};

/// One step of an episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

/// How the behavior policy of episode `k` is chosen. Every variant is a
/// deterministic function of the episodes collected before `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BehaviorSchedule {
    Fixed {
        policy: Policy,
    },
    /// Episode `k` uses `policies[k % len]`.
    RoundRobin {
        policies: Vec<Policy>,
    },
    /// Epsilon-greedy with respect to a tabular model-based `Q` fitted on
    /// the episodes so far. Unvisited `(h, s, a)` get value 0.
    GreedySoFar {
        epsilon: f64,
    },
}

impl BehaviorSchedule {
    pub fn greedy_so_far() -> Self {
        BehaviorSchedule::GreedySoFar { epsilon: 0.3 }
    }

    pub fn validate(&self, horizon: usize, num_states: usize, num_actions: usize) -> Result<()> {
        let check = |pi: &Policy| -> Result<()> {
            pi.validate()?;
            ensure(
                pi.horizon() == horizon
                    && pi.num_states() == num_states
                    && pi.num_actions() == num_actions,
                || "behavior policy shape differs from the mdp".into(),
            )
        };
        match self {
            BehaviorSchedule::Fixed { policy } => check(policy),
            BehaviorSchedule::RoundRobin { policies } => {
                ensure(!policies.is_empty(), || {
                    "round-robin schedule needs at least one policy".into()
                })?;
                policies.iter().try_for_each(check)
            }
            BehaviorSchedule::GreedySoFar { epsilon } => {
                ensure((0.0..=1.0).contains(epsilon), || {
                    format!("epsilon {epsilon} is not a probability")
                })
            }
        }
    }

    /// The behavior policy of episode `prefix.len()`, computed from the
    /// earlier episodes only.
    pub fn policy_for(
        &self,
        prefix: &[Vec<Transition>],
        horizon: usize,
        num_states: usize,
        num_actions: usize,
    ) -> Policy {
        match self {
            BehaviorSchedule::Fixed { policy } => policy.clone(),
            BehaviorSchedule::RoundRobin { policies } => {
                policies[prefix.len() % policies.len()].clone()
            }
            BehaviorSchedule::GreedySoFar { epsilon } => {
                greedy_policy(prefix, horizon, num_states, num_actions, *epsilon)
            }
        }
    }
}

fn greedy_policy(
    prefix: &[Vec<Transition>],
    n_h: usize,
    n_s: usize,
    n_a: usize,
    epsilon: f64,
) -> Policy {
    let cell = |h: usize, s: usize, a: usize| (h * n_s + s) * n_a + a;
    let mut count = vec![0.0; n_h * n_s * n_a];
    let mut reward_sum = vec![0.0; n_h * n_s * n_a];
    let mut next_count = vec![0.0; n_h * n_s * n_a * n_s];
    for episode in prefix {
        for (h, z) in episode.iter().enumerate() {
            let c = cell(h, z.s, z.a);
            count[c] += 1.0;
            reward_sum[c] += z.r;
            next_count[c * n_s + z.s_next] += 1.0;
        }
    }
    let mut actions = vec![vec![0usize; n_s]; n_h];
    let mut v_next = vec![0.0; n_s];
    for h in (0..n_h).rev() {
        let mut v = vec![0.0; n_s];
        for s in 0..n_s {
            let mut best = f64::NEG_INFINITY;
            for a in 0..n_a {
                let c = cell(h, s, a);
                let q = if count[c] == 0.0 {
                    0.0
                } else {
                    let future: f64 = if h + 1 < n_h {
                        (0..n_s)
                            .map(|sn| next_count[c * n_s + sn] * v_next[sn])
                            .sum::<f64>()
                            / count[c]
                    } else {
                        0.0
                    };
                    reward_sum[c] / count[c] + future
                };
                if q > best {
                    best = q;
                    actions[h][s] = a;
                }
            }
            v[s] = best;
        }
        v_next = v;
    }
    let explore = epsilon / n_a as f64;
    let mut probs = Vec::with_capacity(n_h * n_s * n_a);
    for row in &actions {
        for &greedy in row {
            probs.extend((0..n_a).map(|a| {
                if a == greedy {
                    1.0 - epsilon + explore
                } else {
                    explore
                }
            }));
        }
    }
    Policy::from_flat(n_h, n_s, n_a, probs).expect("epsilon-greedy rows are simplices")
}

/// `K` episodes of `H` transitions with the schedule that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineDataset {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub episodes: Vec<Vec<Transition>>,
    pub schedule: BehaviorSchedule,
    pub seed: u64,
    /// Fingerprint of the generating mdp document.
    pub mdp_fingerprint: String,
}

/// Simulates `k` episodes. The randomness of step `h` of episode `k` comes
/// from a stream keyed by `(seed, k, h)`, so datasets replay exactly.
pub fn collect(
    mdp: &EpisodicMdp,
    schedule: &BehaviorSchedule,
    k: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    let (n_s, n_a, n_h) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    schedule.validate(n_h, n_s, n_a)?;
    let w = mdp.noise().half_width();
    let mut episodes: Vec<Vec<Transition>> = Vec::with_capacity(k);
    for ep in 0..k {
        let mu = schedule.policy_for(&episodes, n_h, n_s, n_a);
        let mut s = mdp.initial_state();
        let mut episode = Vec::with_capacity(n_h);
        for h in 0..n_h {
            let mut rng = keyed_rng(seed, &[ep as u64, h as u64]);
            let a = sample_probs(mu.dist(h, s), rng.gen());
            let noise = match mdp.noise() {
                RewardNoise::None => 0.0,
                RewardNoise::Uniform { .. } => w * (2.0 * rng.gen::<f64>() - 1.0),
            };
            let r = mdp.reward(h, s, a) + noise;
            let s_next = sample_probs(mdp.next_dist(h, s, a), rng.gen());
            episode.push(Transition { s, a, r, s_next });
            s = s_next;
        }
        episodes.push(episode);
    }
    Ok(OfflineDataset {
        horizon: n_h,
        num_states: n_s,
        num_actions: n_a,
        episodes,
        schedule: schedule.clone(),
        seed,
        mdp_fingerprint: mdp.fingerprint(),
    })
}

impl OfflineDataset {
    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.episodes.iter().map(Vec::len).sum()
    }

    /// Transitions observed at stage `h`, in episode order.
    pub fn stage(&self, h: usize) -> impl Iterator<Item = &Transition> + '_ {
        self.episodes.iter().map(move |e| &e[h])
    }

    /// The realized behavior policies `μ^1, …, μ^K`, replayed from the
    /// schedule and the data prefix.
    pub fn behavior_policies(&self) -> Vec<Policy> {
        (0..self.episodes.len())
            .map(|k| {
                self.schedule.policy_for(
                    &self.episodes[..k],
                    self.horizon,
                    self.num_states,
                    self.num_actions,
                )
            })
            .collect()
    }

    /// Exact mixture occupancy `d^μ = (1/K) Σ_k d^{μ^k}` of the realized
    /// schedule. For adaptive schedules the members depend on the data.
    pub fn behavior_occupancy(&self, mdp: &EpisodicMdp) -> Result<Vec<StageFn>> {
        ensure(self.num_episodes() > 0, || {
            "behavior occupancy of an empty dataset".into()
        })?;
        self.check_shape(mdp)?;
        let mut total = vec![StageFn::zeros(self.num_states, self.num_actions); self.horizon];
        let mut cache: Vec<(Policy, Vec<StageFn>)> = Vec::new();
        for mu in self.behavior_policies() {
            let occ = match cache.iter().find(|(p, _)| *p == mu) {
                Some((_, occ)) => occ.clone(),
                None => {
                    let occ = evaluate_policy(mdp, &mu)?.occupancy;
                    cache.push((mu, occ.clone()));
                    occ
                }
            };
            for (t, d) in total.iter_mut().zip(&occ) {
                *t = t.zip_map(d, |x, y| x + y);
            }
        }
        let k = self.num_episodes() as f64;
        Ok(total
            .into_iter()
            .map(|t| t.zip_map(&t, |x, _| x / k))
            .collect())
    }

    /// Visit frequencies of `(s, a)` at each stage.
    pub fn empirical_occupancy(&self) -> Vec<StageFn> {
        let mut occ = vec![StageFn::zeros(self.num_states, self.num_actions); self.horizon];
        let k = self.num_episodes().max(1) as f64;
        for episode in &self.episodes {
            for (h, z) in episode.iter().enumerate() {
                let prev = occ[h].get(z.s, z.a);
                occ[h].set(z.s, z.a, prev + 1.0 / k);
            }
        }
        occ
    }

    /// Compares the stored fingerprint with `mdp`, logging a warning on a
    /// mismatch.
    pub fn check_fingerprint(&self, mdp: &EpisodicMdp) -> bool {
        let ok = self.mdp_fingerprint == mdp.fingerprint();
        if !ok {
            log::warn!(
                "dataset was generated from a different mdp (fingerprint {})",
                self.mdp_fingerprint
            );
        }
        ok
    }

    pub(crate) fn check_shape(&self, mdp: &EpisodicMdp) -> Result<()> {
        ensure(
            self.horizon == mdp.horizon()
                && self.num_states == mdp.num_states()
                && self.num_actions == mdp.num_actions(),
            || "dataset shape differs from the mdp".into(),
        )
    }

    /// Structural checks: episode lengths, continuity, shared start state and
    /// index ranges.
    pub fn validate(&self) -> Result<()> {
        let start = self.episodes.first().map(|e| e.first().map(|z| z.s));
        for (k, episode) in self.episodes.iter().enumerate() {
            ensure(episode.len() == self.horizon, || {
                format!("episode {k} has {} transitions", episode.len())
            })?;
            ensure(episode.first().map(|z| z.s) == start.flatten(), || {
                format!("episode {k} starts elsewhere")
            })?;
            for (h, z) in episode.iter().enumerate() {
                ensure(
                    z.s < self.num_states && z.s_next < self.num_states && z.a < self.num_actions,
                    || format!("episode {k} step {h} has an index out of range"),
                )?;
                ensure(z.r.is_finite(), || {
                    format!("episode {k} step {h} has a non-finite reward")
                })?;
                if h + 1 < episode.len() {
                    ensure(episode[h + 1].s == z.s_next, || {
                        format!("episode {k} breaks at step {h}")
                    })?;
                }
            }
        }
        Ok(())
    }
}
