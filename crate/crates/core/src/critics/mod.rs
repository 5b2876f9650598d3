//! The three pessimistic critics, each solved exactly on the chain of
//! pairwise TD-loss matrices, plus an enumeration oracle and the
//! theorem-level parameter formulas.
//!
//! Every critic objective couples only `(f_h, f_{h+1})`, so a class of
//! `N` candidates per stage is handled in `O(H N²)` by dynamic programming
//! or message passing instead of `O(N^H)` enumeration.

mod brute;
mod params;
mod psc;
mod roc;
mod vsc;

use serde::{Deserialize, Serialize};

use crate::data::{OfflineDataset, TdLossMatrix, TdStatistics};
use crate::error::{ensure, Error, Result};
use crate::function_spaces::FunctionClass;
use crate::mdp::{Policy, StageFn};
use crate::numeric::log_sum_exp;

pub use brute::{brute_force, BruteForce, BruteMode, PosteriorTable, ENUMERATION_LIMIT};
pub use params::{psc_gamma_limit, theorem_beta, TheoremDefaults};
pub use psc::{psc, psc_marginals};
pub use roc::roc;
pub use vsc::vsc;

/// Loss matrices, their column minima, initial values and prior of one
/// critic call.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainPotential {
    loss: TdLossMatrix,
    col_min: Vec<Vec<f64>>,
    v1: Vec<f64>,
    log_prior: Vec<Vec<f64>>,
}

impl ChainPotential {
    /// `v1[i] = f_i(s1, π_1)` for the stage-0 candidates. `log_prior`
    /// defaults to uniform; each row must normalize.
    pub fn new(loss: TdLossMatrix, v1: Vec<f64>, log_prior: Option<Vec<Vec<f64>>>) -> Result<Self> {
        let n_h = loss.horizon();
        ensure(n_h > 0, || "empty loss chain".into())?;
        ensure(v1.len() == loss.rows(0), || {
            "v1 length differs from the stage-0 size".into()
        })?;
        ensure(v1.iter().all(|x| x.is_finite()), || {
            "v1 must be finite".into()
        })?;
        let log_prior = match log_prior {
            Some(p) => {
                ensure(p.len() == n_h, || {
                    "prior has the wrong number of stages".into()
                })?;
                for (h, row) in p.iter().enumerate() {
                    ensure(row.len() == loss.rows(h), || {
                        format!("prior row {h} has the wrong length")
                    })?;
                    ensure((log_sum_exp(row)).abs() <= 1e-10, || {
                        format!("prior row {h} does not normalize")
                    })?;
                }
                p
            }
            None => (0..n_h)
                .map(|h| vec![-(loss.rows(h) as f64).ln(); loss.rows(h)])
                .collect(),
        };
        let col_min = (0..n_h)
            .map(|h| {
                (0..loss.cols(h))
                    .map(|j| loss.column(h, j).fold(f64::INFINITY, f64::min))
                    .collect()
            })
            .collect();
        Ok(ChainPotential {
            loss,
            col_min,
            v1,
            log_prior,
        })
    }

    /// Builds the TD matrices of `dataset` against `pi` and evaluates the
    /// stage-0 candidates at `s1`.
    pub fn from_data(
        dataset: &OfflineDataset,
        class: &FunctionClass,
        pi: &Policy,
        s1: usize,
        log_prior: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        Self::from_stats(&TdStatistics::new(dataset), class, pi, s1, log_prior)
    }

    /// As [`ChainPotential::from_data`] with precomputed statistics.
    pub fn from_stats(
        stats: &TdStatistics,
        class: &FunctionClass,
        pi: &Policy,
        s1: usize,
        log_prior: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        ensure(s1 < class.num_states(), || format!("initial state {s1} out of range"))?;
        let loss = stats.build(class, pi)?;
        let v1 = class.stage(0).iter().map(|f| f.expect_action(s1, pi.dist(0, s1))).collect();
        ChainPotential::new(loss, v1, log_prior)
    }

    pub fn horizon(&self) -> usize {
        self.loss.horizon()
    }

    /// Candidates at stage `h`.
    pub fn size(&self, h: usize) -> usize {
        self.loss.rows(h)
    }

    /// Columns at stage `h`: `N_{h+1}`, or 1 at the last stage.
    pub fn cols(&self, h: usize) -> usize {
        self.loss.cols(h)
    }

    pub fn loss(&self, h: usize, i: usize, j: usize) -> f64 {
        self.loss.get(h, i, j)
    }

    pub fn col_min(&self, h: usize, j: usize) -> f64 {
        self.col_min[h][j]
    }

    /// `L[h][i][j] - m[h][j] ≥ 0`.
    pub fn gap(&self, h: usize, i: usize, j: usize) -> f64 {
        self.loss.get(h, i, j) - self.col_min[h][j]
    }

    pub fn v1(&self) -> &[f64] {
        &self.v1
    }

    pub fn log_prior(&self, h: usize) -> &[f64] {
        &self.log_prior[h]
    }

    pub fn chain_count(&self) -> u128 {
        (0..self.horizon()).fold(1u128, |acc, h| acc.saturating_mul(self.size(h) as u128))
    }

    /// Largest gap over all cells; a version-space radius at least this big
    /// admits the whole class.
    pub fn max_gap(&self) -> f64 {
        let mut max = 0.0f64;
        for h in 0..self.horizon() {
            for i in 0..self.size(h) {
                for j in 0..self.cols(h) {
                    max = max.max(self.gap(h, i, j));
                }
            }
        }
        max
    }

    /// Column index following stage `h` in a chain: `next` or 0 at the end.
    pub(crate) fn col_of(&self, h: usize, indices: &[usize]) -> usize {
        if h + 1 == self.horizon() {
            0
        } else {
            indices[h + 1]
        }
    }

    /// `Σ_h gap(h, i_h, i_{h+1})`, accumulated from the last stage backward.
    pub fn chain_gap(&self, indices: &[usize]) -> f64 {
        let mut acc = 0.0;
        for h in (0..self.horizon()).rev() {
            acc = self.gap(h, indices[h], self.col_of(h, indices)) + acc;
        }
        acc
    }
}

/// Critic selection with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CriticKind {
    Vsc { beta: f64 },
    Roc { lambda: f64 },
    Psc { lambda: f64, gamma: f64 },
}

impl CriticKind {
    pub fn name(&self) -> &'static str {
        match self {
            CriticKind::Vsc { .. } => "vsc",
            CriticKind::Roc { .. } => "roc",
            CriticKind::Psc { .. } => "psc",
        }
    }

    /// Runs the critic. `seed` only matters for the posterior sampler.
    pub fn compute(&self, potential: &ChainPotential, seed: u64) -> Result<CriticOutput> {
        match *self {
            CriticKind::Vsc { beta } => vsc(potential, beta),
            CriticKind::Roc { lambda } => roc(potential, lambda),
            CriticKind::Psc { lambda, gamma } => psc(potential, lambda, gamma, seed),
        }
    }
}

/// Extra per-critic information.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Candidates per stage that lie on some feasible chain.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub version_space_sizes: Option<Vec<usize>>,
    /// `ln Z` of the chain posterior.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub log_partition: Option<f64>,
    /// Whether `γ ≤ 1/(144 (e-2) b²)` held for the supplied bound.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gamma_in_theorem_range: Option<bool>,
}

/// The chosen candidate chain.
///
/// `objective` is `v1[i_1]` for the version-space critic,
/// `λ v1[i_1] + Σ_h gap` for the regularized critic, and the negative log
/// posterior probability of the drawn chain for the posterior sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticOutput {
    pub indices: Vec<usize>,
    pub objective: f64,
    /// `f_{i_1}(s1, π)`, the pessimistic initial value.
    pub initial_value: f64,
    pub params: CriticKind,
    pub diagnostics: Diagnostics,
}

impl CriticOutput {
    /// The chosen functions `Q̲_1, …, Q̲_H`.
    pub fn render(&self, class: &FunctionClass) -> Vec<StageFn> {
        class.render(&self.indices)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("critic output serializes")
    }
}

pub(crate) fn check_param(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "{name} must be a finite nonnegative number, got {x}"
        )))
    }
}

/// Random chain potentials for property checks.
pub mod testing {
    use super::*;
    use crate::numeric::keyed_rng;
    use rand::Rng;

    /// Random potential with sizes `sizes` and losses in `[0, scale)`.
    pub fn random_potential(sizes: &[usize], scale: f64, seed: u64) -> ChainPotential {
        let mut rng = keyed_rng(seed, &[0x706f74]);
        let blocks = (0..sizes.len())
            .map(|h| {
                let cols = sizes.get(h + 1).copied().unwrap_or(1);
                (0..sizes[h])
                    .map(|_| (0..cols).map(|_| rng.gen::<f64>() * scale).collect())
                    .collect()
            })
            .collect();
        let v1 = (0..sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ChainPotential::new(TdLossMatrix::from_blocks(blocks).unwrap(), v1, None).unwrap()
    }

    /// Losses drawn from a small integer grid, so ties are common.
    pub fn tied_potential(sizes: &[usize], seed: u64) -> ChainPotential {
        let mut rng = keyed_rng(seed, &[0x746965]);
        let blocks = (0..sizes.len())
            .map(|h| {
                let cols = sizes.get(h + 1).copied().unwrap_or(1);
                (0..sizes[h])
                    .map(|_| (0..cols).map(|_| rng.gen_range(0..3) as f64).collect())
                    .collect()
            })
            .collect();
        let v1 = (0..sizes[0])
            .map(|_| rng.gen_range(0..3) as f64 * 0.25)
            .collect();
        ChainPotential::new(TdLossMatrix::from_blocks(blocks).unwrap(), v1, None).unwrap()
    }
}
