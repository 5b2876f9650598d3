use rand::Rng;

use super::{check_param, ChainPotential, CriticKind, CriticOutput, Diagnostics};
use crate::error::Result;
use crate::numeric::{keyed_rng, log_sum_exp, sample_log_weights};

/// Pairwise log-potentials `ψ[h][i][j] = ln p0[h][i] - γ L[h][i][j] - n[h][j]`
/// with `n[h][j] = ln Σ_i p0[h][i] exp(-γ L[h][i][j])`. Row-major per stage.
fn log_potentials(p: &ChainPotential, gamma: f64) -> Vec<Vec<f64>> {
    (0..p.horizon())
        .map(|h| {
            let (rows, cols) = (p.size(h), p.cols(h));
            let prior = p.log_prior(h);
            let mut psi = vec![0.0; rows * cols];
            let mut column = vec![0.0; rows];
            for j in 0..cols {
                for i in 0..rows {
                    column[i] = prior[i] - gamma * p.loss(h, i, j);
                }
                let norm = log_sum_exp(&column);
                for i in 0..rows {
                    psi[i * cols + j] = column[i] - norm;
                }
            }
            psi
        })
        .collect()
}

/// Backward messages `β[h][i] = ln Σ_{suffix} exp(Σ_{h' ≥ h} ψ)`.
fn backward_messages(p: &ChainPotential, psi: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n_h = p.horizon();
    let mut beta: Vec<Vec<f64>> = vec![Vec::new(); n_h];
    for h in (0..n_h).rev() {
        let cols = p.cols(h);
        beta[h] = (0..p.size(h))
            .map(|i| {
                if h + 1 == n_h {
                    psi[h][i * cols]
                } else {
                    let terms: Vec<f64> = (0..cols)
                        .map(|j| psi[h][i * cols + j] + beta[h + 1][j])
                        .collect();
                    log_sum_exp(&terms)
                }
            })
            .collect();
    }
    beta
}

struct Messages {
    psi: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    /// Stage-0 log weights `-λ v1[i] + β[0][i]`.
    root: Vec<f64>,
    log_z: f64,
}

fn messages(p: &ChainPotential, lambda: f64, gamma: f64) -> Messages {
    let psi = log_potentials(p, gamma);
    let beta = backward_messages(p, &psi);
    let root: Vec<f64> = p
        .v1()
        .iter()
        .zip(&beta[0])
        .map(|(v, b)| -lambda * v + b)
        .collect();
    let log_z = log_sum_exp(&root);
    Messages {
        psi,
        beta,
        root,
        log_z,
    }
}

/// Draws one chain exactly from
/// `exp(-λ f_1(s1, π)) p0(f) Π_h exp(-γ L_h) / E_{p0} exp(-γ L_h)`
/// by backward message passing and forward ancestral sampling.
pub fn psc(p: &ChainPotential, lambda: f64, gamma: f64, seed: u64) -> Result<CriticOutput> {
    check_param("lambda", lambda)?;
    check_param("gamma", gamma)?;
    let m = messages(p, lambda, gamma);
    let mut rng = keyed_rng(seed, &[0x707363]);
    let first = sample_log_weights(&m.root, rng.gen());
    let mut indices = vec![first];
    let mut log_prob = m.root[first] - m.log_z;
    for h in 0..p.horizon() - 1 {
        let cols = p.cols(h);
        let i = indices[h];
        let weights: Vec<f64> = (0..cols)
            .map(|j| m.psi[h][i * cols + j] + m.beta[h + 1][j])
            .collect();
        let j = sample_log_weights(&weights, rng.gen());
        log_prob += weights[j] - m.beta[h][i];
        indices.push(j);
    }
    Ok(CriticOutput {
        objective: -log_prob,
        initial_value: p.v1()[first],
        indices,
        params: CriticKind::Psc { lambda, gamma },
        diagnostics: Diagnostics {
            log_partition: Some(m.log_z),
            ..Default::default()
        },
    })
}

/// Exact per-stage marginals of the chain posterior from forward and
/// backward messages.
pub fn psc_marginals(p: &ChainPotential, lambda: f64, gamma: f64) -> Result<Vec<Vec<f64>>> {
    check_param("lambda", lambda)?;
    check_param("gamma", gamma)?;
    let m = messages(p, lambda, gamma);
    let n_h = p.horizon();
    // alpha[h][i]: log mass of prefixes ending at i, stage-0 tilt included
    let mut alpha: Vec<f64> = p.v1().iter().map(|v| -lambda * v).collect();
    let mut out = Vec::with_capacity(n_h);
    for h in 0..n_h {
        out.push(
            (0..p.size(h))
                .map(|i| (alpha[i] + m.beta[h][i] - m.log_z).exp())
                .collect(),
        );
        if h + 1 < n_h {
            let cols = p.cols(h);
            alpha = (0..cols)
                .map(|j| {
                    let terms: Vec<f64> = (0..p.size(h))
                        .map(|i| alpha[i] + m.psi[h][i * cols + j])
                        .collect();
                    log_sum_exp(&terms)
                })
                .collect();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critics::testing::random_potential;

    #[test]
    fn marginals_are_distributions() {
        for seed in 0..10 {
            let p = random_potential(&[4, 3, 5], 3.0, seed);
            for stage in psc_marginals(&p, 2.0, 0.7).unwrap() {
                assert!((stage.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flat_posterior_is_the_prior() {
        let p = random_potential(&[4, 3], 5.0, 2);
        for stage in psc_marginals(&p, 0.0, 0.0).unwrap() {
            let n = stage.len() as f64;
            assert!(stage.iter().all(|&x| (x - 1.0 / n).abs() < 1e-14));
        }
    }

    #[test]
    fn large_lambda_concentrates_on_the_smallest_initial_value() {
        let p = random_potential(&[5, 4], 1.0, 9);
        let v1 = p.v1();
        let mut sorted = v1.to_vec();
        sorted.sort_by(f64::total_cmp);
        let lambda = 100.0 / (sorted[1] - sorted[0]);
        let best = v1.iter().position(|&v| v == sorted[0]).unwrap();
        let marg = psc_marginals(&p, lambda, 0.5).unwrap();
        assert!(marg[0][best] > 0.999);
        let draws = (0..200)
            .filter(|&s| psc(&p, lambda, 0.5, s).unwrap().indices[0] == best)
            .count();
        assert!(draws >= 199);
    }

    #[test]
    fn extreme_parameters_stay_finite() {
        let p = random_potential(&[3, 3, 3], 1e4, 4);
        let out = psc(&p, 1e6, 1e3, 1).unwrap();
        assert!(out.objective.is_finite());
        for stage in psc_marginals(&p, 1e6, 1e3).unwrap() {
            assert!(stage.iter().all(|x| x.is_finite()));
            assert!((stage.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_draw() {
        let p = random_potential(&[4, 4, 4], 2.0, 6);
        assert_eq!(
            psc(&p, 1.0, 0.3, 42).unwrap(),
            psc(&p, 1.0, 0.3, 42).unwrap()
        );
    }
}
