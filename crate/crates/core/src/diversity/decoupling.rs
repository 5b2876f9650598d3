use serde::{Deserialize, Serialize};

use super::data_diversity;
use crate::error::{ensure, Result};
use crate::function_spaces::FunctionClass;
use crate::mdp::{bellman_error, evaluate_policy, EpisodicMdp, Policy, StageFn};

/// Behavior side of the decoupling inequality.
#[derive(Clone, Copy, Debug)]
pub struct DecouplingInput<'a> {
    /// Mixture occupancy `d^μ = (1/K) Σ_k d^{μ^k}`.
    pub d_mu: &'a [StageFn],
    /// Number of episodes `K`.
    pub episodes: usize,
    /// Per-stage misspecification bounds `ν_h`.
    pub nu: &'a [f64],
}

/// Both sides of the decoupling inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecouplingCheck {
    /// `Σ_h E_π[(T^π̃ f_{h+1} - f_h)]`
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`
    pub margin: f64,
    /// `C(π; ε)` used on the right.
    pub diversity: f64,
    /// The right side with the additive `Hε` replaced by `H√ε`, the form
    /// that follows from `(E_π g)² ≤ C E_μ g² + ε` alone.
    pub rhs_sqrt_eps: f64,
}

/// Evaluates
/// `(1/2λ) Σ_h (K E_μ[E_h²] + Kν_h² + 4bKν_h) + λH C(π;ε)/(2K) + Hε + Σ_h ν_h`
/// against `Σ_h E_π[E_h]` with every expectation exact.
#[allow(clippy::too_many_arguments)]
pub fn check_decoupling(
    class: &FunctionClass,
    mdp: &EpisodicMdp,
    pi: &Policy,
    pi_tilde: &Policy,
    f: &[usize],
    lambda: f64,
    epsilon: f64,
    behavior: DecouplingInput<'_>,
) -> Result<DecouplingCheck> {
    let n_h = mdp.horizon();
    ensure(f.len() == n_h && class.horizon() == n_h, || {
        "candidate sequence length differs from the horizon".into()
    })?;
    ensure(behavior.nu.len() == n_h, || {
        "one misspecification bound per stage is required".into()
    })?;
    ensure(behavior.episodes > 0, || {
        "decoupling needs at least one episode".into()
    })?;
    ensure(lambda > 0.0, || {
        format!("lambda must be positive, got {lambda}")
    })?;
    ensure(behavior.nu.iter().all(|&v| v >= 0.0), || {
        "misspecification bounds must be nonnegative".into()
    })?;
    let d_pi = evaluate_policy(mdp, pi)?.occupancy;
    let diversity = data_diversity(class, &d_pi, behavior.d_mu, epsilon)?.value;
    let k = behavior.episodes as f64;
    let b = class.bound();
    let zero = StageFn::zeros(mdp.num_states(), mdp.num_actions());
    let (mut lhs, mut quad, mut nu_sum) = (0.0, 0.0, 0.0);
    for h in 0..n_h {
        let f_next = if h + 1 < n_h {
            class.candidate(h + 1, f[h + 1])
        } else {
            &zero
        };
        let err = bellman_error(mdp, pi_tilde, class.candidate(h, f[h]), f_next, h)?;
        lhs += dot(d_pi[h].values(), err.values());
        let sq: f64 = behavior.d_mu[h]
            .values()
            .iter()
            .zip(err.values())
            .map(|(w, e)| w * e * e)
            .sum();
        let nu = behavior.nu[h];
        quad += k * sq + k * nu * nu + 4.0 * b * k * nu;
        nu_sum += nu;
    }
    let hf = n_h as f64;
    let spread = if diversity == 0.0 {
        0.0
    } else {
        lambda * hf * diversity / (2.0 * k)
    };
    let core = quad / (2.0 * lambda) + spread + nu_sum;
    let rhs = core + hf * epsilon;
    Ok(DecouplingCheck {
        lhs,
        rhs,
        margin: rhs - lhs,
        diversity,
        rhs_sqrt_eps: core + hf * epsilon.sqrt(),
    })
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}
