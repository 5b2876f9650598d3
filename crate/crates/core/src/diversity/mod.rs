//! Data diversity `C(π; ε)` and the coverage measures it is compared with:
//! single-policy concentrability, relative condition numbers and the linear
//! covariance-based coefficients. Also the numeric check of the decoupling
//! inequality.

mod decoupling;
mod linear;
mod report;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::function_spaces::FunctionClass;
use crate::mdp::StageFn;

pub use decoupling::{check_decoupling, DecouplingCheck, DecouplingInput};
pub use linear::{
    ball_diversity, linear_coverage_report, relative_condition_number, LinearCoverage,
    GRAM_RANK_CUTOFF,
};
pub use report::{diversity_report, fmt_real, DiversityReport};

/// A value of `χ` together with the witness attaining it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chi {
    /// May be `+inf`.
    pub value: f64,
    pub witness: Option<usize>,
}

/// `max_g ((E_q g)² - ε)₊ / E_p[g²]` over a finite witness list. This is the
/// infimum in the definition of `χ` for a finite class. Witnesses with
/// `(E_q g)² ≤ ε` contribute 0; a witness with `E_p[g²] = 0` and
/// `(E_q g)² > ε` makes the value `+inf`.
pub fn chi_discrepancy(g_class: &[Vec<f64>], q: &[f64], p: &[f64], epsilon: f64) -> Result<Chi> {
    ensure(q.len() == p.len(), || {
        "q and p live on different domains".into()
    })?;
    ensure(epsilon >= 0.0, || {
        format!("epsilon must be nonnegative, got {epsilon}")
    })?;
    ensure(g_class.iter().all(|g| g.len() == q.len()), || {
        "witness length differs from the domain".into()
    })?;
    let mut best = Chi {
        value: 0.0,
        witness: None,
    };
    for (k, g) in g_class.iter().enumerate() {
        let ratio = chi_term(g.iter().copied(), q, p, epsilon);
        if ratio > best.value {
            best = Chi {
                value: ratio,
                witness: Some(k),
            };
        }
    }
    Ok(best)
}

fn chi_term(g: impl Iterator<Item = f64> + Clone, q: &[f64], p: &[f64], epsilon: f64) -> f64 {
    let mean_q: f64 = g.clone().zip(q).map(|(x, w)| x * w).sum();
    let excess = mean_q * mean_q - epsilon;
    if excess <= 0.0 {
        return 0.0;
    }
    let energy: f64 = g.zip(p).map(|(x, w)| x * x * w).sum();
    if energy == 0.0 {
        f64::INFINITY
    } else {
        excess / energy
    }
}

/// Per-stage values of `χ` over `F_h - F_h`, their witnesses `(i, j)` and
/// the maximum over stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataDiversity {
    pub per_stage: Vec<f64>,
    pub witnesses: Vec<Option<(usize, usize)>>,
    pub value: f64,
}

impl DataDiversity {
    /// Stage and pair attaining the maximum.
    pub fn witness(&self) -> Option<(usize, usize, usize)> {
        let h = (0..self.per_stage.len()).find(|&h| self.per_stage[h] == self.value)?;
        self.witnesses[h].map(|(i, j)| (h, i, j))
    }
}

/// `C(π; ε) = max_h χ_{F_h - F_h}(ε; d^π_h, d^μ_h)` with the difference
/// class enumerated over ordered pairs.
pub fn data_diversity(
    class: &FunctionClass,
    d_pi: &[StageFn],
    d_mu: &[StageFn],
    epsilon: f64,
) -> Result<DataDiversity> {
    ensure(
        d_pi.len() == class.horizon() && d_mu.len() == class.horizon(),
        || "occupancy horizon mismatch".into(),
    )?;
    ensure(epsilon >= 0.0, || {
        format!("epsilon must be nonnegative, got {epsilon}")
    })?;
    let mut per_stage = Vec::with_capacity(class.horizon());
    let mut witnesses = Vec::with_capacity(class.horizon());
    for h in 0..class.horizon() {
        let (q, p) = (d_pi[h].values(), d_mu[h].values());
        let stage = class.stage(h);
        let mut best = (0.0, None);
        for (i, fi) in stage.iter().enumerate() {
            for (j, fj) in stage.iter().enumerate() {
                if i == j {
                    continue;
                }
                let diff = fi.values().iter().zip(fj.values()).map(|(a, b)| a - b);
                let ratio = chi_term(diff, q, p, epsilon);
                if ratio > best.0 {
                    best = (ratio, Some((i, j)));
                }
            }
        }
        per_stage.push(best.0);
        witnesses.push(best.1);
    }
    let value = per_stage.iter().copied().fold(0.0, f64::max);
    Ok(DataDiversity {
        per_stage,
        witnesses,
        value,
    })
}

/// `max_{h,s,a} d^π_h(s,a) / d^μ_h(s,a)`, with `x/0 = +inf` for `x > 0`
/// and `0/0 = 0`.
pub fn concentrability(d_pi: &[StageFn], d_mu: &[StageFn]) -> Result<f64> {
    ensure(d_pi.len() == d_mu.len(), || {
        "occupancy horizon mismatch".into()
    })?;
    let mut max = 0.0f64;
    for (a, b) in d_pi.iter().zip(d_mu) {
        ensure(a.same_shape(b), || "occupancy shape mismatch".into())?;
        for (&x, &y) in a.values().iter().zip(b.values()) {
            let ratio = if x == 0.0 {
                0.0
            } else if y == 0.0 {
                f64::INFINITY
            } else {
                x / y
            };
            max = max.max(ratio);
        }
    }
    Ok(max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{random_mdp, random_policy};
    use crate::mdp::evaluate_policy;

    fn scan(class: &FunctionClass, d_pi: &[StageFn], d_mu: &[StageFn], eps: f64) -> f64 {
        // every ordered pair, ratio written out directly
        let mut best = 0.0f64;
        for h in 0..class.horizon() {
            let n = class.stage_size(h);
            for i in 0..n {
                for j in 0..n {
                    let g: Vec<f64> = class
                        .candidate(h, i)
                        .values()
                        .iter()
                        .zip(class.candidate(h, j).values())
                        .map(|(a, b)| a - b)
                        .collect();
                    let eq: f64 = g.iter().zip(d_pi[h].values()).map(|(x, w)| x * w).sum();
                    let ep: f64 = g.iter().zip(d_mu[h].values()).map(|(x, w)| x * x * w).sum();
                    if eq * eq > eps {
                        best = best.max(if ep == 0.0 {
                            f64::INFINITY
                        } else {
                            (eq * eq - eps) / ep
                        });
                    }
                }
            }
        }
        best
    }

    #[test]
    fn chi_hand_values() {
        let g = vec![vec![1.0, 0.0]];
        let chi = chi_discrepancy(&g, &[0.5, 0.5], &[0.1, 0.9], 0.0).unwrap();
        assert!((chi.value - 2.5).abs() < 1e-15);
        assert_eq!(chi.witness, Some(0));
        assert_eq!(
            chi_discrepancy(&g, &[0.5, 0.5], &[0.1, 0.9], 0.25)
                .unwrap()
                .value,
            0.0
        );
        let hidden = chi_discrepancy(&g, &[0.5, 0.5], &[0.0, 1.0], 0.0).unwrap();
        assert_eq!(hidden.value, f64::INFINITY);
        // the additive slack removes the infinite ratio
        assert_eq!(
            chi_discrepancy(&g, &[0.5, 0.5], &[0.0, 1.0], 0.3)
                .unwrap()
                .value,
            0.0
        );
        assert!(chi_discrepancy(&g, &[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn same_distribution_is_at_most_one() {
        let mdp = random_mdp(3, 2, 3, 1.0, 0.0, 2).unwrap();
        let class = FunctionClass::grid(3, 3, 2, &[0.0, 0.5, 1.0], 1.0).unwrap();
        let d = evaluate_policy(&mdp, &random_policy(3, 3, 2, 1))
            .unwrap()
            .occupancy;
        let c = data_diversity(&class, &d, &d, 0.0).unwrap();
        assert!(c.value <= 1.0 + 1e-12);
        assert_eq!(concentrability(&d, &d).unwrap(), 1.0);
    }

    #[test]
    fn identical_candidates_give_zero() {
        let f = StageFn::constant(2, 2, 0.3);
        let class = FunctionClass::native(1.0, vec![vec![f.clone(), f]]).unwrap();
        let d_pi = vec![StageFn::from_values(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap()];
        let d_mu = vec![StageFn::from_values(2, 2, vec![0.0, 0.0, 0.0, 1.0]).unwrap()];
        for eps in [0.0, 0.1] {
            assert_eq!(
                data_diversity(&class, &d_pi, &d_mu, eps).unwrap().value,
                0.0
            );
        }
    }

    #[test]
    fn bandit_matches_pair_scan() {
        let class = FunctionClass::grid(1, 1, 2, &[-1.0, -0.25, 0.5, 1.0], 1.0).unwrap();
        let d_pi = vec![StageFn::from_values(1, 2, vec![0.9, 0.1]).unwrap()];
        let d_mu = vec![StageFn::from_values(1, 2, vec![0.2, 0.8]).unwrap()];
        for eps in [0.0, 0.01, 0.3, 1.0] {
            let c = data_diversity(&class, &d_pi, &d_mu, eps).unwrap();
            assert_eq!(c.value, scan(&class, &d_pi, &d_mu, eps));
        }
    }

    #[test]
    fn random_instances_match_scan_and_are_monotone() {
        for seed in 0..10 {
            let mdp = random_mdp(2, 2, 2, 1.0, 0.0, seed).unwrap();
            let class = FunctionClass::grid(2, 2, 2, &[0.0, 0.4, 1.0], 1.0).unwrap();
            let d_pi = evaluate_policy(&mdp, &random_policy(2, 2, 2, seed))
                .unwrap()
                .occupancy;
            let d_mu = evaluate_policy(&mdp, &random_policy(2, 2, 2, seed + 100))
                .unwrap()
                .occupancy;
            let mut prev = f64::INFINITY;
            for eps in [0.0, 0.001, 0.01, 0.1, 1.0] {
                let c = data_diversity(&class, &d_pi, &d_mu, eps).unwrap();
                assert_eq!(c.value, scan(&class, &d_pi, &d_mu, eps));
                assert!(c.value <= prev);
                prev = c.value;
            }
            let c0 = data_diversity(&class, &d_pi, &d_mu, 0.0).unwrap().value;
            assert!(c0 <= concentrability(&d_pi, &d_mu).unwrap() + 1e-9);
        }
    }

    #[test]
    fn concentrability_cases() {
        let a = vec![StageFn::from_values(1, 2, vec![0.8, 0.2]).unwrap()];
        let b = vec![StageFn::from_values(1, 2, vec![0.5, 0.5]).unwrap()];
        assert!((concentrability(&a, &b).unwrap() - 1.6).abs() < 1e-15);
        let c = vec![StageFn::from_values(1, 2, vec![1.0, 0.0]).unwrap()];
        let d = vec![StageFn::from_values(1, 2, vec![0.0, 1.0]).unwrap()];
        assert_eq!(concentrability(&c, &d).unwrap(), f64::INFINITY);
        assert_eq!(concentrability(&d, &d).unwrap(), 1.0);
    }
}
