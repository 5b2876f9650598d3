use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FunctionClass, SoftPolicyState};
use crate::error::{ensure, Result};
use crate::mdp::{bellman_apply, evaluate_policy, EpisodicMdp, Policy, StageFn};
use crate::numeric::keyed_rng;

/// Per-stage list of `(s, a)` cells.
pub type Support = Vec<Vec<(usize, usize)>>;

/// Cells with positive occupancy at each stage.
pub fn support_of(occupancy: &[StageFn]) -> Support {
    occupancy
        .iter()
        .map(|d| {
            let mut cells = Vec::new();
            for s in 0..d.num_states() {
                for a in 0..d.num_actions() {
                    if d.get(s, a) > 0.0 {
                        cells.push((s, a));
                    }
                }
            }
            cells
        })
        .collect()
}

pub fn full_support(horizon: usize, num_states: usize, num_actions: usize) -> Support {
    let cells: Vec<_> = (0..num_states)
        .flat_map(|s| (0..num_actions).map(move |a| (s, a)))
        .collect();
    vec![cells; horizon]
}

/// Result of projecting a function sequence onto a class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub indices: Vec<usize>,
    /// Achieved sup error on the support, per stage.
    pub errors: Vec<f64>,
}

fn argmin_sup(stage: &[StageFn], target: &StageFn, cells: &[(usize, usize)]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, f) in stage.iter().enumerate() {
        let err = cells.iter().fold(0.0f64, |m, &(s, a)| {
            m.max((f.get(s, a) - target.get(s, a)).abs())
        });
        if err < best.1 {
            best = (i, err);
        }
    }
    best
}

/// Per stage, the candidate minimizing the sup distance to `target` over the
/// support cells; ties go to the lowest index.
pub fn project_value(
    class: &FunctionClass,
    target: &[StageFn],
    support: &Support,
) -> Result<Projection> {
    ensure(
        target.len() == class.horizon() && support.len() == class.horizon(),
        || "target, support and class horizons differ".into(),
    )?;
    let mut indices = Vec::with_capacity(target.len());
    let mut errors = Vec::with_capacity(target.len());
    for (h, (t, cells)) in target.iter().zip(support).enumerate() {
        ensure(!cells.is_empty(), || format!("empty support at stage {h}"))?;
        ensure(
            t.num_states() == class.num_states() && t.num_actions() == class.num_actions(),
            || "target shape mismatch".into(),
        )?;
        let (i, e) = argmin_sup(class.stage(h), t, cells);
        indices.push(i);
        errors.push(e);
    }
    Ok(Projection { indices, errors })
}

/// The stage-`h` candidate closest in sup norm (over all cells) to
/// `T_h^pi f_next`, where `f_next` is candidate `next` of stage `h+1`.
/// At the last stage `next` is ignored and the target is `r_H`.
pub fn project_bellman(
    class: &FunctionClass,
    mdp: &EpisodicMdp,
    pi: &Policy,
    next: Option<usize>,
    h: usize,
) -> Result<(usize, f64)> {
    ensure(h < class.horizon(), || format!("stage {h} out of range"))?;
    let f_next = if h + 1 == class.horizon() {
        StageFn::zeros(class.num_states(), class.num_actions())
    } else {
        let j = next
            .ok_or_else(|| crate::error::contract(format!("stage {h} needs a next-stage index")))?;
        ensure(j < class.stage_size(h + 1), || {
            format!("index {j} out of range at stage {}", h + 1)
        })?;
        class.candidate(h + 1, j).clone()
    };
    let target = bellman_apply(mdp, pi, &f_next, h)?;
    let cells = full_support(1, class.num_states(), class.num_actions()).remove(0);
    Ok(argmin_sup(class.stage(h), &target, &cells))
}

/// Sampled misspecification estimates. Both vectors are lower bounds on the
/// true suprema since only `num_probe_policies` policies are examined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisspecReport {
    /// Realizability error per stage.
    pub xi: Vec<f64>,
    /// Bellman-closedness error per stage.
    pub nu: Vec<f64>,
    pub num_probe_policies: usize,
}

/// Draws a random member of the softmax class: `t ≤ max_t` random candidate
/// sums with a random temperature in `[0, 1]`.
pub(crate) fn random_soft_policy(
    class: &FunctionClass,
    max_t: usize,
    seed: u64,
    probe: u64,
) -> Policy {
    let mut rng = keyed_rng(seed, &[0x7072_6f62, probe]);
    let t = rng.gen_range(1..=max_t.max(1));
    let eta = rng.gen::<f64>();
    let mut state = SoftPolicyState::new(
        class.horizon(),
        class.num_states(),
        class.num_actions(),
        eta,
    );
    for _ in 0..t {
        let pick: Vec<StageFn> = (0..class.horizon())
            .map(|h| {
                class
                    .candidate(h, rng.gen_range(0..class.stage_size(h)))
                    .clone()
            })
            .collect();
        state.absorb(&pick).expect("class stages share a shape");
    }
    state.render()
}

/// Probes `probe_count` random softmax-class policies. `support` restricts
/// the realizability check (typically the behavior occupancy support);
/// `None` means every cell.
pub fn estimate_misspecification(
    class: &FunctionClass,
    mdp: &EpisodicMdp,
    probe_count: usize,
    t_probe: usize,
    seed: u64,
    support: Option<&Support>,
) -> Result<MisspecReport> {
    ensure(probe_count >= 1, || "probe_count must be at least 1".into())?;
    ensure(class.horizon() == mdp.horizon(), || {
        "class and mdp horizons differ".into()
    })?;
    let n_h = class.horizon();
    let full = full_support(n_h, class.num_states(), class.num_actions());
    let support = support.unwrap_or(&full);
    let mut xi = vec![0.0f64; n_h];
    let mut nu = vec![0.0f64; n_h];
    for probe in 0..probe_count {
        let pi = random_soft_policy(class, t_probe, seed, probe as u64);
        let q = evaluate_policy(mdp, &pi)?.q;
        let proj = project_value(class, &q, support)?;
        for h in 0..n_h {
            xi[h] = xi[h].max(proj.errors[h]);
            if h + 1 == n_h {
                nu[h] = nu[h].max(project_bellman(class, mdp, &pi, None, h)?.1);
            } else {
                for j in 0..class.stage_size(h + 1) {
                    nu[h] = nu[h].max(project_bellman(class, mdp, &pi, Some(j), h)?.1);
                }
            }
        }
    }
    Ok(MisspecReport {
        xi,
        nu,
        num_probe_policies: probe_count,
    })
}
