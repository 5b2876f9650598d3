use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::mdp::{Policy, StageFn};
use crate::numeric::log_sum_exp;

/// Actor state for the multiplicative-weights update. The policy is
/// `π_h(a|s) ∝ exp(η · g_sum[h](s, a))` where `g_sum` is the sum of the `t`
/// critic outputs seen so far, so membership in the softmax class of the
/// function class holds by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftPolicyState {
    pub g_sum: Vec<StageFn>,
    pub eta: f64,
    pub t: usize,
}

impl SoftPolicyState {
    /// The uniform starting point (`t = 0`, zero logits).
    pub fn new(horizon: usize, num_states: usize, num_actions: usize, eta: f64) -> Self {
        SoftPolicyState {
            g_sum: vec![StageFn::zeros(num_states, num_actions); horizon],
            eta,
            t: 0,
        }
    }

    /// Adds one critic output to the accumulated logits.
    pub fn softmax_update(mut self, critic_q: &[StageFn]) -> Result<Self> {
        self.absorb(critic_q)?;
        Ok(self)
    }

    /// In-place form of [`SoftPolicyState::softmax_update`].
    pub fn absorb(&mut self, critic_q: &[StageFn]) -> Result<()> {
        ensure(critic_q.len() == self.g_sum.len(), || {
            format!(
                "critic has {} stages, actor has {}",
                critic_q.len(),
                self.g_sum.len()
            )
        })?;
        for (g, q) in self.g_sum.iter_mut().zip(critic_q) {
            ensure(g.same_shape(q), || "critic table shape mismatch".into())?;
            *g = g.zip_map(q, |x, y| x + y);
        }
        self.t += 1;
        Ok(())
    }

    /// The current policy, normalized in log space.
    pub fn render(&self) -> Policy {
        let horizon = self.g_sum.len();
        let (n_s, n_a) = self
            .g_sum
            .first()
            .map_or((0, 0), |g| (g.num_states(), g.num_actions()));
        let mut probs = Vec::with_capacity(horizon * n_s * n_a);
        let mut logits = vec![0.0; n_a];
        for g in &self.g_sum {
            for s in 0..n_s {
                for (l, &x) in logits.iter_mut().zip(g.row(s)) {
                    *l = self.eta * x;
                }
                let lse = log_sum_exp(&logits);
                let start = probs.len();
                probs.extend(logits.iter().map(|&l| (l - lse).exp()));
                let total: f64 = probs[start..].iter().sum();
                probs[start..].iter_mut().for_each(|p| *p /= total);
            }
        }
        Policy::from_flat(horizon, n_s, n_a, probs).expect("softmax rows are simplices")
    }
}

/// Smallest iteration count for which the default learning rate stays below
/// `1/(2b)`: `ln|A| / (e - 2)`.
pub fn eta_requirement(num_actions: usize) -> f64 {
    (num_actions as f64).ln() / (std::f64::consts::E - 2.0)
}

/// `η = sqrt(ln|A| / (4 (e-2) b² T))`. Logs a warning when `T` is below
/// [`eta_requirement`]; the value is returned regardless.
pub fn default_eta(b: f64, iterations: usize, num_actions: usize) -> f64 {
    if (iterations as f64) < eta_requirement(num_actions) {
        log::warn!(
            "T = {iterations} is below ln|A|/(e-2) = {:.4}; the actor regret bound does not apply",
            eta_requirement(num_actions)
        );
    }
    let ln_a = (num_actions as f64).ln();
    (ln_a / (4.0 * (std::f64::consts::E - 2.0) * b * b * iterations as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_action_logits(diff: f64, eta: f64) -> Policy {
        let state = SoftPolicyState::new(1, 1, 2, eta);
        let q = StageFn::from_values(1, 2, vec![0.0, diff]).unwrap();
        state.softmax_update(&[q]).unwrap().render()
    }

    #[test]
    fn zero_eta_is_uniform() {
        let p = two_action_logits(5.0, 0.0);
        assert_eq!(p.dist(0, 0), &[0.5, 0.5]);
    }

    #[test]
    fn unit_gap_gives_logistic_probabilities() {
        let p = two_action_logits(1.0, 1.0);
        let sigma = |x: f64| 1.0 / (1.0 + (-x).exp());
        assert!((p.prob(0, 0, 0) - sigma(-1.0)).abs() < 1e-15);
        assert!((p.prob(0, 0, 1) - sigma(1.0)).abs() < 1e-15);
        assert!((p.prob(0, 0, 0) - 0.268_941_421_369_995).abs() < 1e-12);
    }

    #[test]
    fn single_action_stays_deterministic() {
        let state = SoftPolicyState::new(2, 3, 1, 0.7);
        let q = vec![StageFn::constant(3, 1, 0.4); 2];
        let p = state.softmax_update(&q).unwrap().render();
        assert!(p.as_flat().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn default_eta_values() {
        assert_eq!(default_eta(1.0, 10, 1), 0.0);
        let eta = default_eta(1.0, 100, 2);
        let expected = (2f64.ln() / (4.0 * (std::f64::consts::E - 2.0) * 100.0)).sqrt();
        assert!((eta - expected).abs() < 1e-15);
        assert!((eta - 0.049_12).abs() < 5e-6);
        let ratio = default_eta(2.0, 50, 3) / default_eta(2.0, 100, 3);
        assert!((ratio - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn logits_are_eta_times_sum_of_inputs() {
        let mut state = SoftPolicyState::new(1, 2, 2, 0.3);
        let a = StageFn::from_values(2, 2, vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        let b = StageFn::from_values(2, 2, vec![0.5, -0.5, 0.0, 1.0]).unwrap();
        state.absorb(&[a.clone()]).unwrap();
        state.absorb(&[b.clone()]).unwrap();
        assert_eq!(state.t, 2);
        assert_eq!(state.g_sum[0], a.zip_map(&b, |x, y| x + y));
    }

    proptest! {
        #[test]
        fn render_is_a_simplex_for_huge_logits(x in -1e6f64..1e6, y in -1e6f64..1e6, z in -1e6f64..1e6, eta in 0.0f64..1.0) {
            let state = SoftPolicyState::new(1, 1, 3, eta);
            let q = StageFn::from_values(1, 3, vec![x, y, z]).unwrap();
            let p = state.softmax_update(&[q]).unwrap().render();
            let d = p.dist(0, 0);
            prop_assert!(d.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
