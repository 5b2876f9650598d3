use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::mdp::{bellman_apply, EpisodicMdp, Policy, StageFn};
use crate::numeric::keyed_rng;

const REPRO_TOL: f64 = 1e-12;

/// How a class was built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    NativeFinite,
    LinearNet(LinearNet),
}

/// Discretization of `{(s,a) ↦ ⟨φ_h(s,a), w⟩ : ‖w‖₂ ≤ radius}` on a weight
/// grid of step `resolution`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearNet {
    pub dim: usize,
    pub radius: f64,
    pub resolution: f64,
    /// `features[h][s * A + a]`
    pub features: Vec<Vec<Vec<f64>>>,
    /// `weights[h][i]` generates candidate `i` of stage `h`.
    pub weights: Vec<Vec<Vec<f64>>>,
}

impl LinearNet {
    pub fn feature(&self, h: usize, s: usize, a: usize, num_actions: usize) -> &[f64] {
        &self.features[h][s * num_actions + a]
    }
}

/// A Cartesian product class `F_1 × … × F_H` of finite candidate menus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionClass {
    bound: f64,
    num_states: usize,
    num_actions: usize,
    candidates: Vec<Vec<StageFn>>,
    provenance: Provenance,
}

impl FunctionClass {
    /// A natively finite class from explicit candidate tables.
    pub fn native(bound: f64, candidates: Vec<Vec<StageFn>>) -> Result<Self> {
        let (num_states, num_actions) = candidates
            .first()
            .and_then(|c| c.first())
            .map(|f| (f.num_states(), f.num_actions()))
            .ok_or_else(|| invalid("class needs at least one stage with one candidate".into()))?;
        let class = FunctionClass {
            bound,
            num_states,
            num_actions,
            candidates,
            provenance: Provenance::NativeFinite,
        };
        class.validate()?;
        Ok(class)
    }

    /// Discretizes a linear class. Weights run over the grid
    /// `{-R, -R+δ, …}^d ∩ {‖w‖₂ ≤ R}`; candidates whose sup norm exceeds the
    /// class bound are dropped so every stored function stays in `[-b, b]`.
    pub fn linear_net(
        features: Vec<Vec<Vec<f64>>>,
        num_actions: usize,
        bound: f64,
        resolution: f64,
    ) -> Result<Self> {
        ensure(resolution > 0.0, || {
            "net resolution must be positive".into()
        })?;
        let dim = features.first().and_then(|f| f.first()).map_or(0, Vec::len);
        ensure(dim > 0, || "features must be nonempty".into())?;
        ensure(
            features.iter().flatten().all(|phi| phi.len() == dim),
            || "ragged feature map".into(),
        )?;
        let cells = features[0].len();
        ensure(cells % num_actions == 0, || {
            "feature table is not S x A".into()
        })?;
        let num_states = cells / num_actions;
        let radius = bound;

        let steps = (radius / resolution).floor() as i64;
        let axis: Vec<f64> = (-steps..=steps).map(|i| i as f64 * resolution).collect();
        let mut grid: Vec<Vec<f64>> = vec![vec![]];
        for _ in 0..dim {
            grid = grid
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&x| {
                        let mut w = prefix.clone();
                        w.push(x);
                        w
                    })
                })
                .collect();
        }
        grid.retain(|w| w.iter().map(|x| x * x).sum::<f64>() <= radius * radius * (1.0 + 1e-12));

        let mut candidates = Vec::with_capacity(features.len());
        let mut weights = Vec::with_capacity(features.len());
        for phi_h in &features {
            let mut stage = Vec::new();
            let mut stage_w = Vec::new();
            for w in &grid {
                let values: Vec<f64> = phi_h.iter().map(|phi| dot(phi, w)).collect();
                if values.iter().all(|v| v.abs() <= bound) {
                    stage.push(StageFn::from_values(num_states, num_actions, values)?);
                    stage_w.push(w.clone());
                }
            }
            candidates.push(stage);
            weights.push(stage_w);
        }
        let class = FunctionClass {
            bound,
            num_states,
            num_actions,
            candidates,
            provenance: Provenance::LinearNet(LinearNet {
                dim,
                radius,
                resolution,
                features,
                weights,
            }),
        };
        class.validate()?;
        Ok(class)
    }

    /// Every function with values in `levels` on each `(s, a)`, at every stage.
    /// Refuses classes with more than `10^5` candidates per stage.
    pub fn grid(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        levels: &[f64],
        bound: f64,
    ) -> Result<Self> {
        let cells = num_states * num_actions;
        let size = (levels.len() as f64).powi(cells as i32);
        ensure(size <= 1e5, || {
            format!("grid class would have {size} candidates per stage")
        })?;
        let mut stage = Vec::with_capacity(size as usize);
        let mut digits = vec![0usize; cells];
        loop {
            let values = digits.iter().map(|&d| levels[d]).collect();
            stage.push(StageFn::from_values(num_states, num_actions, values)?);
            let mut pos = 0;
            loop {
                if pos == cells {
                    return FunctionClass::native(bound, vec![stage; horizon]);
                }
                digits[pos] += 1;
                if digits[pos] < levels.len() {
                    break;
                }
                digits[pos] = 0;
                pos += 1;
            }
        }
    }

    /// Builds a class that is exactly closed under `T^pi`: stage `h` holds
    /// the Bellman images of every stage-`h+1` candidate plus seeded
    /// distractors. The images of the chain starting from `r_H` reproduce
    /// `Q^pi`, so the class is realizable for `pi`.
    pub fn closed_under(mdp: &EpisodicMdp, pi: &Policy, spec: &ClosedClassSpec) -> Result<Self> {
        let (n_s, n_a, n_h) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
        let b = mdp.bound();
        let mut rng = keyed_rng(spec.seed, &[0x636c_6f73]);
        let mut candidates: Vec<Vec<StageFn>> = vec![Vec::new(); n_h];
        let zero = StageFn::zeros(n_s, n_a);
        let mut truth = zero.clone();
        for h in (0..n_h).rev() {
            let mut stage = Vec::new();
            if h + 1 == n_h {
                truth = bellman_apply(mdp, pi, &zero, h)?;
                stage.push(truth.clone());
            } else {
                let next_truth = truth.clone();
                truth = bellman_apply(mdp, pi, &next_truth, h)?;
                for f in &candidates[h + 1] {
                    let image = bellman_apply(mdp, pi, f, h)?;
                    if !stage.contains(&image) {
                        stage.push(image);
                    }
                }
            }
            let state_only = spec.state_only_after_first && h > 0;
            for k in 0..spec.distractors {
                let scale = spec
                    .scales
                    .get(k % spec.scales.len().max(1))
                    .copied()
                    .unwrap_or(0.5);
                let mut f = truth.clone();
                for s in 0..n_s {
                    let shared = if rng.gen::<bool>() { scale } else { -scale };
                    for a in 0..n_a {
                        let delta = if state_only {
                            shared
                        } else if rng.gen::<bool>() {
                            scale
                        } else {
                            -scale
                        };
                        f.set(s, a, (truth.get(s, a) + delta).clamp(-b, b));
                    }
                }
                if !stage.contains(&f) {
                    stage.push(f);
                }
            }
            ensure(!stage.iter().any(|f| f.sup_norm() > b), || {
                format!("Bellman image at stage {h} leaves [-b, b]; scale the rewards down")
            })?;
            candidates[h] = stage;
        }
        FunctionClass::native(b, candidates)
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(invalid("class has no stages".into()));
        }
        for (h, stage) in self.candidates.iter().enumerate() {
            if stage.is_empty() {
                return Err(invalid(format!("stage {h} has no candidates")));
            }
            for (i, f) in stage.iter().enumerate() {
                if f.num_states() != self.num_states || f.num_actions() != self.num_actions {
                    return Err(invalid(format!(
                        "candidate {i} at stage {h} has the wrong shape"
                    )));
                }
                if !(f.sup_norm() <= self.bound) {
                    return Err(invalid(format!(
                        "candidate {i} at stage {h} exceeds the bound {}",
                        self.bound
                    )));
                }
            }
        }
        if let Provenance::LinearNet(net) = &self.provenance {
            for (h, stage) in self.candidates.iter().enumerate() {
                if net.weights[h].len() != stage.len() {
                    return Err(invalid(format!(
                        "stage {h} weight count differs from candidate count"
                    )));
                }
                for (i, (f, w)) in stage.iter().zip(&net.weights[h]).enumerate() {
                    if norm(w) > net.radius * (1.0 + 1e-12) {
                        return Err(invalid(format!(
                            "weight {i} at stage {h} lies outside the ball"
                        )));
                    }
                    for s in 0..self.num_states {
                        for a in 0..self.num_actions {
                            let expect = dot(net.feature(h, s, a, self.num_actions), w);
                            if (f.get(s, a) - expect).abs() > REPRO_TOL {
                                return Err(invalid(format!(
                                    "candidate {i} at stage {h} is not ⟨φ, w⟩"
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.candidates.len()
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn stage(&self, h: usize) -> &[StageFn] {
        &self.candidates[h]
    }

    pub fn candidate(&self, h: usize, i: usize) -> &StageFn {
        &self.candidates[h][i]
    }

    pub fn stage_size(&self, h: usize) -> usize {
        self.candidates[h].len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.candidates.iter().map(Vec::len).collect()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn net(&self) -> Option<&LinearNet> {
        match &self.provenance {
            Provenance::LinearNet(net) => Some(net),
            Provenance::NativeFinite => None,
        }
    }

    /// Renders an index chain as a stage-function sequence.
    pub fn render(&self, indices: &[usize]) -> Vec<StageFn> {
        indices
            .iter()
            .enumerate()
            .map(|(h, &i)| self.candidates[h][i].clone())
            .collect()
    }

    /// Candidate-count product, saturating.
    pub fn chain_count(&self) -> u128 {
        self.candidates
            .iter()
            .fold(1u128, |acc, s| acc.saturating_mul(s.len() as u128))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("class serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let class: FunctionClass = serde_json::from_str(text)?;
        class.validate()?;
        Ok(class)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Parameters for [`FunctionClass::closed_under`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedClassSpec {
    /// Distractors added per stage on top of the Bellman images.
    pub distractors: usize,
    /// Perturbation magnitudes, cycled over distractors.
    pub scales: Vec<f64>,
    /// Make distractors at stages `h > 0` action-independent, which keeps the
    /// class closed under every policy on MDPs whose later stages ignore the
    /// action.
    pub state_only_after_first: bool,
    pub seed: u64,
}

fn invalid(reason: String) -> Error {
    Error::Invalid {
        what: "function class",
        reason,
    }
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}
