use serde::{Deserialize, Serialize};

use super::{check_param, ChainPotential, CriticKind, CriticOutput, Diagnostics};
use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;

/// Largest number of chains [`brute_force`] will enumerate.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BruteMode {
    Vsc { beta: f64 },
    Roc { lambda: f64 },
    PscExact { lambda: f64, gamma: f64 },
}

/// Every chain with its posterior probability, in lexicographic order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTable {
    pub chains: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
}

impl PosteriorTable {
    /// Per-stage marginals summed from the table.
    pub fn marginals(&self, sizes: &[usize]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
        for (chain, &p) in self.chains.iter().zip(&self.probs) {
            for (h, &i) in chain.iter().enumerate() {
                out[h][i] += p;
            }
        }
        out
    }

    pub fn prob_of(&self, chain: &[usize]) -> Option<f64> {
        self.chains
            .iter()
            .position(|c| c == chain)
            .map(|k| self.probs[k])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BruteForce {
    Choice(CriticOutput),
    Table(PosteriorTable),
}

fn all_chains(p: &ChainPotential) -> Vec<Vec<usize>> {
    let mut chains = vec![vec![]];
    for h in 0..p.horizon() {
        chains = chains
            .into_iter()
            .flat_map(|prefix| {
                (0..p.size(h)).map(move |i| {
                    let mut c = prefix.clone();
                    c.push(i);
                    c
                })
            })
            .collect();
    }
    chains
}

/// Reference solutions by enumerating all `Π_h N_h` chains. For the
/// optimizing critics the lexicographically first optimal chain is
/// returned; for the sampler the full normalized table.
pub fn brute_force(p: &ChainPotential, mode: BruteMode) -> Result<BruteForce> {
    let count = p.chain_count();
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationGuard {
            chains: count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let chains = all_chains(p);
    // column minima recomputed here rather than taken from the potential
    let m: Vec<Vec<f64>> = (0..p.horizon())
        .map(|h| {
            (0..p.cols(h))
                .map(|j| {
                    (0..p.size(h))
                        .map(|i| p.loss(h, i, j))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect()
        })
        .collect();
    let gap = |h: usize, chain: &[usize]| {
        let j = p.col_of(h, chain);
        p.loss(h, chain[h], j) - m[h][j]
    };
    match mode {
        BruteMode::Vsc { beta } => {
            check_param("beta", beta)?;
            let mut best: Option<&Vec<usize>> = None;
            let mut members: Vec<Vec<bool>> =
                (0..p.horizon()).map(|h| vec![false; p.size(h)]).collect();
            for chain in &chains {
                let ok = (0..p.horizon()).all(|h| {
                    let j = p.col_of(h, chain);
                    p.loss(h, chain[h], j) <= m[h][j] + beta
                });
                if !ok {
                    continue;
                }
                for (h, &i) in chain.iter().enumerate() {
                    members[h][i] = true;
                }
                if best.map_or(true, |b| p.v1()[chain[0]] < p.v1()[b[0]]) {
                    best = Some(chain);
                }
            }
            let chain = best.ok_or(Error::EmptyVersionSpace { stage: 0 })?.clone();
            let value = p.v1()[chain[0]];
            let sizes = members
                .iter()
                .map(|m| m.iter().filter(|&&x| x).count())
                .collect();
            Ok(BruteForce::Choice(CriticOutput {
                indices: chain,
                objective: value,
                initial_value: value,
                params: CriticKind::Vsc { beta },
                diagnostics: Diagnostics {
                    version_space_sizes: Some(sizes),
                    ..Default::default()
                },
            }))
        }
        BruteMode::Roc { lambda } => {
            check_param("lambda", lambda)?;
            let mut best: Option<(&Vec<usize>, f64)> = None;
            for chain in &chains {
                let total = lambda * p.v1()[chain[0]]
                    + (0..p.horizon())
                        .rev()
                        .fold(0.0, |acc, h| gap(h, chain) + acc);
                if best.map_or(true, |(_, b)| total < b) {
                    best = Some((chain, total));
                }
            }
            let (chain, total) = best.expect("at least one chain");
            Ok(BruteForce::Choice(CriticOutput {
                indices: chain.clone(),
                objective: total,
                initial_value: p.v1()[chain[0]],
                params: CriticKind::Roc { lambda },
                diagnostics: Diagnostics::default(),
            }))
        }
        BruteMode::PscExact { lambda, gamma } => {
            check_param("lambda", lambda)?;
            check_param("gamma", gamma)?;
            // per-stage normalizers straight from the definition
            let norms: Vec<Vec<f64>> = (0..p.horizon())
                .map(|h| {
                    (0..p.cols(h))
                        .map(|j| {
                            let terms: Vec<f64> = (0..p.size(h))
                                .map(|i| p.log_prior(h)[i] - gamma * p.loss(h, i, j))
                                .collect();
                            log_sum_exp(&terms)
                        })
                        .collect()
                })
                .collect();
            let log_w: Vec<f64> = chains
                .iter()
                .map(|chain| {
                    let mut w = -lambda * p.v1()[chain[0]];
                    for h in 0..p.horizon() {
                        let j = p.col_of(h, chain);
                        w +=
                            p.log_prior(h)[chain[h]] - gamma * p.loss(h, chain[h], j) - norms[h][j];
                    }
                    w
                })
                .collect();
            let log_z = log_sum_exp(&log_w);
            let probs = log_w.iter().map(|w| (w - log_z).exp()).collect();
            Ok(BruteForce::Table(PosteriorTable { chains, probs }))
        }
    }
}
