//! Seeded instance generators: random dense MDPs, a deterministic chain, a
//! low-coverage corridor, linear MDPs with their feature maps, and the
//! first-stage decision MDP used by the scaling experiment.
//!
//! Every generator keeps per-step rewards (noise included) inside
//! `[0, b/H]`, which makes the cumulative bound hold by construction.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::mdp::{EpisodicMdp, Policy, RewardNoise};
use crate::numeric::keyed_rng;

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = draws.iter().sum();
    draws.iter().map(|x| x / total).collect()
}

fn noise_for(b: f64, horizon: usize, noise_fraction: f64) -> Result<(f64, RewardNoise)> {
    ensure((0.0..0.5).contains(&noise_fraction), || {
        "noise fraction must lie in [0, 0.5)".into()
    })?;
    let step = b / horizon as f64;
    let w = noise_fraction * step;
    let noise = if w > 0.0 {
        RewardNoise::Uniform { half_width: w }
    } else {
        RewardNoise::None
    };
    Ok((w, noise))
}

/// Dense random MDP. Mean rewards are uniform on `[w, b/H - w]` where
/// `w = noise_fraction * b/H` is the uniform noise half-width.
pub fn random_mdp(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    b: f64,
    noise_fraction: f64,
    seed: u64,
) -> Result<EpisodicMdp> {
    let (w, noise) = noise_for(b, horizon, noise_fraction)?;
    let step = b / horizon as f64;
    let mut rng = keyed_rng(seed, &[0x6d64_70]);
    let mut p = Vec::with_capacity(horizon);
    let mut r = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let mut p_h = Vec::with_capacity(num_states);
        let mut r_h = Vec::with_capacity(num_states);
        for _ in 0..num_states {
            p_h.push(
                (0..num_actions)
                    .map(|_| random_simplex(&mut rng, num_states))
                    .collect::<Vec<_>>(),
            );
            r_h.push(
                (0..num_actions)
                    .map(|_| w + rng.gen::<f64>() * (step - 2.0 * w))
                    .collect::<Vec<_>>(),
            );
        }
        p.push(p_h);
        r.push(r_h);
    }
    EpisodicMdp::new(p, r, noise, 0, b)
}

/// Deterministic chain: action 1 moves one state right, action 0 stays.
/// Reaching the last state pays `b/H` per step there; every other step pays
/// a small `0.1 * b/H` for staying.
pub fn chain_mdp(num_states: usize, horizon: usize, b: f64) -> Result<EpisodicMdp> {
    ensure(num_states >= 2, || "chain needs at least two states".into())?;
    let step = b / horizon as f64;
    let mut p = Vec::with_capacity(horizon);
    let mut r = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let mut p_h = Vec::with_capacity(num_states);
        let mut r_h = Vec::with_capacity(num_states);
        for s in 0..num_states {
            let mut stay = vec![0.0; num_states];
            stay[s] = 1.0;
            let mut advance = vec![0.0; num_states];
            advance[(s + 1).min(num_states - 1)] = 1.0;
            p_h.push(vec![stay, advance]);
            let goal = s + 1 == num_states;
            r_h.push(if goal {
                vec![step, step]
            } else {
                vec![0.1 * step, 0.0]
            });
        }
        p.push(p_h);
        r.push(r_h);
    }
    EpisodicMdp::new(p, r, RewardNoise::None, 0, b)
}

/// Two-arm corridor. From the start state, action 0 enters a safe lane
/// paying `b/(4H)` per step; action 1 enters a risky lane that pays
/// `b/(2H)` per step with probability `1 - slip`. Later actions do not
/// matter. Values stay within `b/2`, which leaves room for distractors.
/// Pair it with [`corridor_behavior`] to get data that under-covers the
/// better arm.
pub fn corridor_mdp(horizon: usize, b: f64, slip: f64) -> Result<EpisodicMdp> {
    ensure(horizon >= 2, || "corridor needs horizon >= 2".into())?;
    ensure((0.0..=1.0).contains(&slip), || {
        "slip must be a probability".into()
    })?;
    let step = b / (2.0 * horizon as f64);
    // states: 0 start, 1 safe lane, 2 rewarding lane, 3 dead lane
    let n = 4;
    let mut p = Vec::with_capacity(horizon);
    let mut r = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let mut p_h = Vec::with_capacity(n);
        let mut r_h = Vec::with_capacity(n);
        for s in 0..n {
            let stay = |s: usize| {
                let mut v = vec![0.0; n];
                v[s] = 1.0;
                v
            };
            if s == 0 && h == 0 {
                let mut risky = vec![0.0; n];
                risky[2] = 1.0 - slip;
                risky[3] = slip;
                p_h.push(vec![stay(1), risky]);
                r_h.push(vec![0.0, 0.0]);
            } else {
                p_h.push(vec![stay(s), stay(s)]);
                let pay = match s {
                    1 => 0.5 * step,
                    2 => step,
                    _ => 0.0,
                };
                r_h.push(vec![pay, pay]);
            }
        }
        p.push(p_h);
        r.push(r_h);
    }
    EpisodicMdp::new(p, r, RewardNoise::None, 0, b)
}

/// Behavior for the corridor: picks the risky arm with probability
/// `coverage` at the start state, uniform elsewhere.
pub fn corridor_behavior(horizon: usize, coverage: f64) -> Result<Policy> {
    let mut table = vec![vec![vec![0.5, 0.5]; 4]; horizon];
    table[0][0] = vec![1.0 - coverage, coverage];
    Policy::from_table(&table)
}

/// A linear MDP together with its feature map.
#[derive(Clone, Debug)]
pub struct LinearMdp {
    pub mdp: EpisodicMdp,
    /// `features[h][s * A + a]` is a `dim`-vector on the probability simplex.
    pub features: Vec<Vec<Vec<f64>>>,
    pub dim: usize,
}

/// Linear MDP: `P_h(s'|s,a) = Σ_i φ_h(s,a)_i ψ_{h,i}(s')` and
/// `r_h(s,a) = ⟨φ_h(s,a), θ_h⟩`, with features on the simplex so that
/// `‖φ‖₂ ≤ 1`.
pub fn linear_mdp(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    dim: usize,
    b: f64,
    seed: u64,
) -> Result<LinearMdp> {
    ensure(dim >= 1, || "feature dimension must be positive".into())?;
    let step = b / horizon as f64;
    let mut rng = keyed_rng(seed, &[0x6c_696e]);
    let mut features = Vec::with_capacity(horizon);
    let mut p = Vec::with_capacity(horizon);
    let mut r = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let psi: Vec<Vec<f64>> = (0..dim)
            .map(|_| random_simplex(&mut rng, num_states))
            .collect();
        let theta: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * step).collect();
        let mut phi_h = Vec::with_capacity(num_states * num_actions);
        let mut p_h = Vec::with_capacity(num_states);
        let mut r_h = Vec::with_capacity(num_states);
        for _ in 0..num_states {
            let mut p_hs = Vec::with_capacity(num_actions);
            let mut r_hs = Vec::with_capacity(num_actions);
            for _ in 0..num_actions {
                let phi = random_simplex(&mut rng, dim);
                let mut next = vec![0.0; num_states];
                for (i, &weight) in phi.iter().enumerate() {
                    for (sn, q) in psi[i].iter().enumerate() {
                        next[sn] += weight * q;
                    }
                }
                let total: f64 = next.iter().sum();
                next.iter_mut().for_each(|x| *x /= total);
                r_hs.push(phi.iter().zip(&theta).map(|(x, t)| x * t).sum());
                p_hs.push(next);
                phi_h.push(phi);
            }
            p_h.push(p_hs);
            r_h.push(r_hs);
        }
        features.push(phi_h);
        p.push(p_h);
        r.push(r_h);
    }
    let mdp = EpisodicMdp::new(p, r, RewardNoise::None, 0, b)?;
    Ok(LinearMdp { mdp, features, dim })
}

/// One-hot features over `(s, a)` for every stage.
pub fn one_hot_features(
    horizon: usize,
    num_states: usize,
    num_actions: usize,
) -> Vec<Vec<Vec<f64>>> {
    let d = num_states * num_actions;
    let stage: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let mut v = vec![0.0; d];
            v[i] = 1.0;
            v
        })
        .collect();
    vec![stage; horizon]
}

/// MDP where only the first decision matters: at the start state each action
/// leads to its own next-state distribution and reward; from stage 1 on,
/// rewards and transitions ignore the action. Function classes whose
/// candidates beyond stage 0 are action-independent are then Bellman-closed
/// under every policy.
pub fn first_decision_mdp(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    b: f64,
    noise_fraction: f64,
    seed: u64,
) -> Result<EpisodicMdp> {
    ensure(horizon >= 2, || {
        "first-decision MDP needs horizon >= 2".into()
    })?;
    let (w, noise) = noise_for(b, horizon, noise_fraction)?;
    let step = b / horizon as f64;
    let mut rng = keyed_rng(seed, &[0x6669_7273]);
    let mut p = Vec::with_capacity(horizon);
    let mut r = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let mut p_h = Vec::with_capacity(num_states);
        let mut r_h = Vec::with_capacity(num_states);
        for _ in 0..num_states {
            if h == 0 {
                p_h.push(
                    (0..num_actions)
                        .map(|_| random_simplex(&mut rng, num_states))
                        .collect::<Vec<_>>(),
                );
                r_h.push(
                    (0..num_actions)
                        .map(|_| w + rng.gen::<f64>() * (step - 2.0 * w))
                        .collect::<Vec<_>>(),
                );
            } else {
                let next = random_simplex(&mut rng, num_states);
                let reward = w + rng.gen::<f64>() * (step - 2.0 * w);
                p_h.push(vec![next; num_actions]);
                r_h.push(vec![reward; num_actions]);
            }
        }
        p.push(p_h);
        r.push(r_h);
    }
    EpisodicMdp::new(p, r, noise, 0, b)
}

/// A random stochastic policy with full support.
pub fn random_policy(horizon: usize, num_states: usize, num_actions: usize, seed: u64) -> Policy {
    let mut rng = keyed_rng(seed, &[0x706f_6c]);
    let mut probs = Vec::with_capacity(horizon * num_states * num_actions);
    for _ in 0..horizon * num_states {
        let mut d = random_simplex(&mut rng, num_actions);
        // exact renormalization keeps the simplex check tight
        let total: f64 = d.iter().sum();
        d.iter_mut().for_each(|x| *x /= total);
        probs.extend(d);
    }
    Policy::from_flat(horizon, num_states, num_actions, probs).expect("random simplex rows")
}
