use serde::{Deserialize, Serialize};

use super::{EpisodicMdp, InitialValue, Policy, StageFn};
use crate::error::{ensure, Result};

/// Exact values and occupancies of a policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    /// `Q[h](s, a)`
    pub q: Vec<StageFn>,
    /// `V[h][s] = Σ_a π(a|s) Q[h](s, a)`
    pub v: Vec<Vec<f64>>,
    /// Joint state-action visitation `d[h](s, a)`.
    pub occupancy: Vec<StageFn>,
}

impl PolicyEvaluation {
    pub fn initial_value(&self, s1: usize) -> f64 {
        self.v[0][s1]
    }

    /// `Σ_{s,a} d[h](s,a) g(s,a)`.
    pub fn expect(&self, h: usize, g: &StageFn) -> f64 {
        self.occupancy[h]
            .values()
            .iter()
            .zip(g.values())
            .map(|(d, x)| d * x)
            .sum()
    }
}

/// Backward induction for `Q`/`V` and forward propagation for the
/// occupancy measure.
pub fn evaluate_policy(mdp: &EpisodicMdp, pi: &Policy) -> Result<PolicyEvaluation> {
    mdp.check_policy(pi)?;
    let (n_s, n_a, n_h) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());

    let mut q = vec![StageFn::zeros(n_s, n_a); n_h];
    let mut v = vec![vec![0.0; n_s]; n_h];
    for h in (0..n_h).rev() {
        for s in 0..n_s {
            for a in 0..n_a {
                let mut val = mdp.reward(h, s, a);
                if h + 1 < n_h {
                    val += mdp
                        .next_dist(h, s, a)
                        .iter()
                        .zip(&v[h + 1])
                        .map(|(p, x)| p * x)
                        .sum::<f64>();
                }
                q[h].set(s, a, val);
            }
            v[h][s] = q[h].expect_action(s, pi.dist(h, s));
        }
    }

    let mut occupancy = vec![StageFn::zeros(n_s, n_a); n_h];
    let s1 = mdp.initial_state();
    for a in 0..n_a {
        occupancy[0].set(s1, a, pi.prob(0, s1, a));
    }
    for h in 0..n_h.saturating_sub(1) {
        let mut state_mass = vec![0.0; n_s];
        for s in 0..n_s {
            for a in 0..n_a {
                let d = occupancy[h].get(s, a);
                if d == 0.0 {
                    continue;
                }
                for (sn, p) in mdp.next_dist(h, s, a).iter().enumerate() {
                    state_mass[sn] += d * p;
                }
            }
        }
        for (sn, &mass) in state_mass.iter().enumerate() {
            for a in 0..n_a {
                occupancy[h + 1].set(sn, a, mass * pi.prob(h + 1, sn, a));
            }
        }
    }

    Ok(PolicyEvaluation { q, v, occupancy })
}

/// `(T_h^π f_next)(s, a) = r_h(s, a) + Σ_{s'} P_h(s'|s,a) Σ_{a'} π_{h+1}(a'|s') f_next(s', a')`.
///
/// At the last stage the next-stage function is the zero table by
/// convention and the result is `r_h`.
pub fn bellman_apply(
    mdp: &EpisodicMdp,
    pi: &Policy,
    f_next: &StageFn,
    h: usize,
) -> Result<StageFn> {
    mdp.check_policy(pi)?;
    mdp.check_table(f_next)?;
    ensure(h < mdp.horizon(), || format!("stage {h} out of range"))?;
    let mut out = mdp.reward_table(h);
    if h + 1 == mdp.horizon() {
        return Ok(out);
    }
    let n_s = mdp.num_states();
    let next_values: Vec<f64> = (0..n_s)
        .map(|sn| f_next.expect_action(sn, pi.dist(h + 1, sn)))
        .collect();
    for s in 0..n_s {
        for a in 0..mdp.num_actions() {
            let e: f64 = mdp
                .next_dist(h, s, a)
                .iter()
                .zip(&next_values)
                .map(|(p, x)| p * x)
                .sum();
            out.set(s, a, out.get(s, a) + e);
        }
    }
    Ok(out)
}

/// `T_h^π f_next - f_h`.
pub fn bellman_error(
    mdp: &EpisodicMdp,
    pi: &Policy,
    f_h: &StageFn,
    f_next: &StageFn,
    h: usize,
) -> Result<StageFn> {
    mdp.check_table(f_h)?;
    let image = bellman_apply(mdp, pi, f_next, h)?;
    Ok(image.zip_map(f_h, |t, f| t - f))
}

fn next_or_zero(q: &[StageFn], h: usize, n_s: usize, n_a: usize) -> StageFn {
    q.get(h + 1)
        .cloned()
        .unwrap_or_else(|| StageFn::zeros(n_s, n_a))
}

/// The MDP whose rewards are shifted by the Bellman error of `q` under `pi`;
/// `q` is exactly the action-value function of `pi` there.
pub fn induced_mdp(mdp: &EpisodicMdp, q: &[StageFn], pi: &Policy) -> Result<EpisodicMdp> {
    ensure(q.len() == mdp.horizon(), || {
        format!("expected {} stages, got {}", mdp.horizon(), q.len())
    })?;
    let (n_s, n_a) = (mdp.num_states(), mdp.num_actions());
    let mut rewards = Vec::with_capacity(q.len());
    for h in 0..q.len() {
        let err = bellman_error(mdp, pi, &q[h], &next_or_zero(q, h, n_s, n_a), h)?;
        rewards.push(mdp.reward_table(h).zip_map(&err, |r, e| r - e));
    }
    Ok(mdp.with_rewards(&rewards))
}

/// `V_1^{comparator}(s1) - V_1^{learned}(s1)`.
pub fn suboptimality(
    mdp: &EpisodicMdp,
    comparator: &Policy,
    learned: &impl InitialValue,
) -> Result<f64> {
    Ok(comparator.initial_value(mdp)? - learned.initial_value(mdp)?)
}

/// The four terms of the sub-optimality decomposition for a value sequence
/// `q`, a comparator and an actor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorDecomposition {
    /// `SubOpt^M_comparator(actor)`
    pub suboptimality: f64,
    /// `Σ_h E_comparator[T_h^actor q_{h+1} - q_h]`
    pub bellman_term: f64,
    /// `q_1(s1, actor) - V_1^actor(s1)`
    pub initial_gap: f64,
    /// Sub-optimality of the actor in the induced MDP `M(q, actor)`.
    pub induced_suboptimality: f64,
}

impl ErrorDecomposition {
    pub fn residual(&self) -> f64 {
        (self.suboptimality - (self.bellman_term + self.initial_gap + self.induced_suboptimality))
            .abs()
    }
}

pub fn error_decomposition(
    mdp: &EpisodicMdp,
    q: &[StageFn],
    comparator: &Policy,
    actor: &Policy,
) -> Result<ErrorDecomposition> {
    ensure(q.len() == mdp.horizon(), || {
        format!("expected {} stages, got {}", mdp.horizon(), q.len())
    })?;
    let (n_s, n_a) = (mdp.num_states(), mdp.num_actions());
    let s1 = mdp.initial_state();
    let comp_eval = evaluate_policy(mdp, comparator)?;
    let actor_eval = evaluate_policy(mdp, actor)?;

    let mut bellman_term = 0.0;
    for h in 0..mdp.horizon() {
        let err = bellman_error(mdp, actor, &q[h], &next_or_zero(q, h, n_s, n_a), h)?;
        bellman_term += comp_eval.expect(h, &err);
    }
    let initial_gap = q[0].expect_action(s1, actor.dist(0, s1)) - actor_eval.initial_value(s1);

    let induced = induced_mdp(mdp, q, actor)?;
    let induced_suboptimality = evaluate_policy(&induced, comparator)?.initial_value(s1)
        - evaluate_policy(&induced, actor)?.initial_value(s1);

    Ok(ErrorDecomposition {
        suboptimality: comp_eval.initial_value(s1) - actor_eval.initial_value(s1),
        bellman_term,
        initial_gap,
        induced_suboptimality,
    })
}

/// Residual of the sub-optimality error decomposition; zero up to rounding.
pub fn check_error_decomposition(
    mdp: &EpisodicMdp,
    q: &[StageFn],
    comparator: &Policy,
    actor: &Policy,
) -> Result<f64> {
    Ok(error_decomposition(mdp, q, comparator, actor)?.residual())
}

/// `Σ_h E_pi[Q^{pi_ref}_h(s,a) - V^{pi_ref}_h(s)]`, which equals
/// `V_1^{pi}(s1) - V_1^{pi_ref}(s1)`.
pub fn advantage_sum(mdp: &EpisodicMdp, pi: &Policy, pi_ref: &Policy) -> Result<f64> {
    let eval = evaluate_policy(mdp, pi)?;
    let reference = evaluate_policy(mdp, pi_ref)?;
    let mut total = 0.0;
    for h in 0..mdp.horizon() {
        let adv = StageFn::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| {
            reference.q[h].get(s, a) - reference.v[h][s]
        });
        total += eval.expect(h, &adv);
    }
    Ok(total)
}

/// Deterministic greedy policy from backward induction; ties go to the
/// lowest action index.
pub fn optimal_policy(mdp: &EpisodicMdp) -> Policy {
    let (n_s, n_a, n_h) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut actions = vec![vec![0usize; n_s]; n_h];
    let mut v_next = vec![0.0; n_s];
    for h in (0..n_h).rev() {
        let mut v = vec![0.0; n_s];
        for s in 0..n_s {
            let mut best = f64::NEG_INFINITY;
            for a in 0..n_a {
                let mut q = mdp.reward(h, s, a);
                if h + 1 < n_h {
                    q += mdp
                        .next_dist(h, s, a)
                        .iter()
                        .zip(&v_next)
                        .map(|(p, x)| p * x)
                        .sum::<f64>();
                }
                if q > best {
                    best = q;
                    actions[h][s] = a;
                }
            }
            v[s] = best;
        }
        v_next = v;
    }
    Policy::deterministic(n_a, &actions).expect("greedy actions are in range")
}
