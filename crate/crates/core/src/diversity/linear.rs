use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::OfflineDataset;
use crate::error::{contract, ensure, Result};
use crate::mdp::{EpisodicMdp, PolicyEvaluation, StageFn};

/// Eigenvalues of the μ-matrix below this fraction of the largest one are
/// treated as zero.
pub const GRAM_RANK_CUTOFF: f64 = 1e-10;

const VARIANCE_FLOOR: f64 = 1e-12;

type Features = [Vec<Vec<f64>>];

fn check_features(phi: &Features, occ: &[StageFn]) -> Result<usize> {
    ensure(phi.len() == occ.len(), || {
        format!(
            "features cover {} stages, occupancy {}",
            phi.len(),
            occ.len()
        )
    })?;
    let dim = phi.first().and_then(|s| s.first()).map_or(0, Vec::len);
    ensure(dim > 0, || "empty feature map".into())?;
    for (h, (stage, d)) in phi.iter().zip(occ).enumerate() {
        ensure(stage.len() == d.values().len(), || {
            format!(
                "stage {h}: {} feature rows for {} cells",
                stage.len(),
                d.values().len()
            )
        })?;
        ensure(stage.iter().all(|f| f.len() == dim), || {
            format!("stage {h}: ragged feature rows")
        })?;
    }
    Ok(dim)
}

/// `Σ_x d(x) φ(x) φ(x)ᵀ`
fn second_moment(phi: &[Vec<f64>], d: &StageFn, dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    for (f, &w) in phi.iter().zip(d.values()) {
        if w != 0.0 {
            let v = DVector::from_column_slice(f);
            m += w * &v * v.transpose();
        }
    }
    m
}

fn mean(phi: &[Vec<f64>], d: &StageFn, dim: usize) -> DVector<f64> {
    let mut m = DVector::zeros(dim);
    for (f, &w) in phi.iter().zip(d.values()) {
        m += w * DVector::from_column_slice(f);
    }
    m
}

struct RangeSplit {
    range: DMatrix<f64>,
    inv_sqrt: DVector<f64>,
    null: DMatrix<f64>,
}

fn split_range(b: &DMatrix<f64>) -> RangeSplit {
    let eig = SymmetricEigen::new(b.clone());
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| top > 0.0 && eig.eigenvalues[i] > GRAM_RANK_CUTOFF * top)
        .collect();
    let drop: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|i| !keep.contains(i))
        .collect();
    RangeSplit {
        range: eig.eigenvectors.select_columns(&keep),
        inv_sqrt: DVector::from_iterator(
            keep.len(),
            keep.iter().map(|&i| eig.eigenvalues[i].powf(-0.5)),
        ),
        null: eig.eigenvectors.select_columns(&drop),
    }
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Per stage, `sup_x xᵀ E_π[φφᵀ] x / xᵀ E_μ[φφᵀ] x`. The μ-matrix is
/// whitened on its numerical range; π-energy in the complement gives `+inf`
/// and `0/0` is read as 0.
pub fn relative_condition_number(
    phi: &Features,
    d_pi: &[StageFn],
    d_mu: &[StageFn],
) -> Result<Vec<f64>> {
    let dim = check_features(phi, d_pi)?;
    check_features(phi, d_mu)?;
    let mut out = Vec::with_capacity(phi.len());
    for h in 0..phi.len() {
        let a = second_moment(&phi[h], &d_pi[h], dim);
        let b = second_moment(&phi[h], &d_mu[h], dim);
        let a_top = lambda_max(&a).max(0.0);
        if a_top == 0.0 {
            out.push(0.0);
            continue;
        }
        let split = split_range(&b);
        let leak = lambda_max(&(split.null.transpose() * &a * &split.null));
        if leak > GRAM_RANK_CUTOFF * a_top {
            out.push(f64::INFINITY);
            continue;
        }
        let w = DMatrix::from_diagonal(&split.inv_sqrt);
        let whitened = &w * split.range.transpose() * &a * &split.range * &w;
        out.push(lambda_max(&whitened).max(0.0));
    }
    Ok(out)
}

/// `C(π; ε)` per stage for the difference class of the continuous linear
/// class `{⟨φ, w⟩ : ‖w‖₂ ≤ radius}`, i.e. the ball of radius `2·radius`.
///
/// With `a = E_π φ` and `B = E_μ φφᵀ` this is the smallest `C` with
/// `4 radius² λ_max(aaᵀ - C B)₊ ≤ ε`: `aᵀB⁺a` for `ε = 0` and a bisection on
/// `C` otherwise.
pub fn ball_diversity(
    phi: &Features,
    radius: f64,
    d_pi: &[StageFn],
    d_mu: &[StageFn],
    epsilon: f64,
) -> Result<Vec<f64>> {
    let dim = check_features(phi, d_pi)?;
    check_features(phi, d_mu)?;
    ensure(radius > 0.0, || {
        format!("radius must be positive, got {radius}")
    })?;
    ensure(epsilon >= 0.0, || {
        format!("epsilon must be nonnegative, got {epsilon}")
    })?;
    let scale = 4.0 * radius * radius;
    let mut out = Vec::with_capacity(phi.len());
    for h in 0..phi.len() {
        let a = mean(&phi[h], &d_pi[h], dim);
        let b = second_moment(&phi[h], &d_mu[h], dim);
        let aa = &a * a.transpose();
        let excess = |c: f64| scale * lambda_max(&(&aa - c * &b)).max(0.0);
        if excess(0.0) <= epsilon {
            out.push(0.0);
            continue;
        }
        let split = split_range(&b);
        let outside = (split.null.transpose() * &a).norm_squared();
        let a_norm = a.norm_squared();
        let exact = if outside > GRAM_RANK_CUTOFF * a_norm {
            f64::INFINITY
        } else {
            let r = split.range.transpose() * &a;
            r.component_mul(&split.inv_sqrt).norm_squared()
        };
        if epsilon == 0.0 {
            out.push(exact);
            continue;
        }
        // as C grows only the null-space component of a survives, and the
        // limit itself is never attained
        if outside > 0.0 && scale * outside >= epsilon {
            out.push(f64::INFINITY);
            continue;
        }
        let mut hi = if exact.is_finite() {
            exact.max(f64::MIN_POSITIVE)
        } else {
            1.0
        };
        while excess(hi) > epsilon {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(contract(format!("stage {h}: no finite diversity bracket")));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if excess(mid) <= epsilon {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        out.push(hi);
    }
    Ok(out)
}

/// Covariance-based coverage coefficients of a linear feature map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearCoverage {
    pub lambda_reg: f64,
    /// `max_h (E_π ‖φ‖_{Σ_h⁻¹})²`
    pub c_pevi: f64,
    /// `max_h ‖E_π φ‖²_{Σ_h⁻¹}`
    pub c_pacle: f64,
    /// `max_h (E_π ‖φ‖_{Σ̄_h})²` with `Σ̄_h = E_μ φφᵀ`.
    pub c_bcp: f64,
    /// As `c_pevi` with the variance-weighted `Λ_h`.
    pub c_pevi_adv: f64,
    /// Number of variance weights raised to the floor.
    pub clamped_weights: usize,
}

fn inverse_norm(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, v: &DVector<f64>) -> f64 {
    v.dot(&chol.solve(v)).max(0.0).sqrt()
}

/// Builds `Σ_h = λI + Σ_k φφᵀ`, `Λ_h = λI + Σ_k φφᵀ / [V_h V^π_{h+1}]` from
/// the dataset and the remaining quantities exactly from occupancies. The
/// conditional variance of `r_h + V^π_{h+1}(s')` includes the reward noise.
pub fn linear_coverage_report(
    dataset: &OfflineDataset,
    phi: &Features,
    pi_eval: &PolicyEvaluation,
    mdp: &EpisodicMdp,
    lambda_reg: f64,
) -> Result<LinearCoverage> {
    ensure(lambda_reg > 0.0, || {
        format!("lambda_reg must be positive, got {lambda_reg}")
    })?;
    dataset.check_shape(mdp)?;
    let dim = check_features(phi, &pi_eval.occupancy)?;
    let d_mu = dataset.behavior_occupancy(mdp)?;
    let n_a = mdp.num_actions();
    let mut report = LinearCoverage {
        lambda_reg,
        c_pevi: 0.0,
        c_pacle: 0.0,
        c_bcp: 0.0,
        c_pevi_adv: 0.0,
        clamped_weights: 0,
    };
    for h in 0..phi.len() {
        let weights: Vec<f64> = (0..mdp.num_states() * n_a)
            .map(|x| conditional_variance(mdp, pi_eval, h, x / n_a, x % n_a))
            .collect();
        let mut sigma = DMatrix::identity(dim, dim) * lambda_reg;
        let mut lambda = sigma.clone();
        for z in dataset.stage(h) {
            let x = z.s * n_a + z.a;
            let v = DVector::from_column_slice(&phi[h][x]);
            let outer = &v * v.transpose();
            let var = if weights[x] < VARIANCE_FLOOR {
                report.clamped_weights += 1;
                VARIANCE_FLOOR
            } else {
                weights[x]
            };
            lambda += &outer / var;
            sigma += outer;
        }
        let sigma = sigma.cholesky().ok_or_else(|| {
            contract(format!(
                "stage {h}: regularized covariance not positive definite"
            ))
        })?;
        let lambda = lambda.cholesky().ok_or_else(|| {
            contract(format!(
                "stage {h}: weighted covariance not positive definite"
            ))
        })?;
        let sigma_bar = second_moment(&phi[h], &d_mu[h], dim);
        let d = pi_eval.occupancy[h].values();
        let (mut pevi, mut adv, mut bcp) = (0.0, 0.0, 0.0);
        for (f, &w) in phi[h].iter().zip(d) {
            if w == 0.0 {
                continue;
            }
            let v = DVector::from_column_slice(f);
            pevi += w * inverse_norm(&sigma, &v);
            adv += w * inverse_norm(&lambda, &v);
            bcp += w * v.dot(&(&sigma_bar * &v)).max(0.0).sqrt();
        }
        let bar = mean(&phi[h], &pi_eval.occupancy[h], dim);
        let pacle = bar.dot(&sigma.solve(&bar));
        report.c_pevi = report.c_pevi.max(pevi * pevi);
        report.c_pevi_adv = report.c_pevi_adv.max(adv * adv);
        report.c_bcp = report.c_bcp.max(bcp * bcp);
        report.c_pacle = report.c_pacle.max(pacle);
    }
    Ok(report)
}

fn conditional_variance(
    mdp: &EpisodicMdp,
    pi_eval: &PolicyEvaluation,
    h: usize,
    s: usize,
    a: usize,
) -> f64 {
    let noise = mdp.noise().variance();
    if h + 1 == mdp.horizon() {
        return noise;
    }
    let v = &pi_eval.v[h + 1];
    let p = mdp.next_dist(h, s, a);
    let m: f64 = p.iter().zip(v).map(|(q, x)| q * x).sum();
    let var: f64 = p.iter().zip(v).map(|(q, x)| q * (x - m) * (x - m)).sum();
    noise + var.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{collect, BehaviorSchedule};
    use crate::diversity::{concentrability, data_diversity};
    use crate::function_spaces::FunctionClass;
    use crate::generators::{linear_mdp, one_hot_features, random_mdp, random_policy};
    use crate::mdp::{evaluate_policy, Policy};

    /// Largest eigenvalue of `B⁻¹A` by power iteration through an LU solve;
    /// needs `B` nonsingular.
    fn power_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let lu = b.clone().lu();
        let mut x = DVector::from_element(a.nrows(), 1.0);
        let mut rho = 0.0;
        for _ in 0..20_000 {
            let y = lu.solve(&(a * &x)).unwrap();
            let next = y.norm();
            x = y / next;
            if (next - rho).abs() < 1e-15 * next {
                return next;
            }
            rho = next;
        }
        rho
    }

    #[test]
    fn identical_occupancies_give_one() {
        let lin = linear_mdp(4, 2, 3, 3, 1.0, 5).unwrap();
        let d = evaluate_policy(&lin.mdp, &random_policy(3, 4, 2, 1))
            .unwrap()
            .occupancy;
        for r in relative_condition_number(&lin.features, &d, &d).unwrap() {
            assert!((r - 1.0).abs() < 1e-9, "{r}");
        }
    }

    #[test]
    fn one_hot_matches_concentrability() {
        let mdp = random_mdp(3, 2, 2, 1.0, 0.0, 4).unwrap();
        let phi = one_hot_features(2, 3, 2);
        let d_pi = evaluate_policy(&mdp, &random_policy(2, 3, 2, 7))
            .unwrap()
            .occupancy;
        let d_mu = evaluate_policy(&mdp, &Policy::uniform(2, 3, 2))
            .unwrap()
            .occupancy;
        let rcn = relative_condition_number(&phi, &d_pi, &d_mu).unwrap();
        for h in 0..2 {
            let conc = concentrability(&d_pi[h..h + 1], &d_mu[h..h + 1]).unwrap();
            assert!(
                (rcn[h] - conc).abs() < 1e-9 * conc.max(1.0),
                "{} vs {conc}",
                rcn[h]
            );
        }
    }

    #[test]
    fn random_features_match_power_oracle() {
        for seed in 0..10 {
            let lin = linear_mdp(5, 3, 2, 3, 1.0, seed).unwrap();
            let d_pi = evaluate_policy(&lin.mdp, &random_policy(2, 5, 3, seed))
                .unwrap()
                .occupancy;
            let d_mu = evaluate_policy(&lin.mdp, &Policy::uniform(2, 5, 3))
                .unwrap()
                .occupancy;
            let rcn = relative_condition_number(&lin.features, &d_pi, &d_mu).unwrap();
            for h in 0..2 {
                let a = second_moment(&lin.features[h], &d_pi[h], 3);
                let b = second_moment(&lin.features[h], &d_mu[h], 3);
                let oracle = power_oracle(&a, &b);
                assert!(
                    (rcn[h] - oracle).abs() < 1e-8 * oracle.max(1.0),
                    "{} vs {oracle}",
                    rcn[h]
                );
            }
        }
    }

    #[test]
    fn energy_outside_support_is_infinite() {
        let phi = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]];
        let d_pi = vec![StageFn::from_values(1, 2, vec![0.5, 0.5]).unwrap()];
        let d_mu = vec![StageFn::from_values(1, 2, vec![1.0, 0.0]).unwrap()];
        assert_eq!(
            relative_condition_number(&phi, &d_pi, &d_mu).unwrap()[0],
            f64::INFINITY
        );
        let zero = vec![StageFn::zeros(1, 2)];
        assert_eq!(
            relative_condition_number(&phi, &zero, &zero).unwrap()[0],
            0.0
        );
    }

    #[test]
    fn ball_diversity_closed_forms() {
        // a = (0.5, 0.5), B = diag(0.1, 0.9): aᵀB⁻¹a = 2.5 + 0.2777...
        let phi = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]];
        let d_pi = vec![StageFn::from_values(1, 2, vec![0.5, 0.5]).unwrap()];
        let d_mu = vec![StageFn::from_values(1, 2, vec![0.1, 0.9]).unwrap()];
        let c0 = ball_diversity(&phi, 1.0, &d_pi, &d_mu, 0.0).unwrap()[0];
        assert!((c0 - (2.5 + 0.25 / 0.9)).abs() < 1e-12);
        // ε at least the largest squared mean over the radius-2 ball: 4·‖a‖² = 2
        assert_eq!(
            ball_diversity(&phi, 1.0, &d_pi, &d_mu, 2.0).unwrap()[0],
            0.0
        );
        let mut prev = c0;
        for eps in [0.01, 0.1, 0.5, 1.0] {
            let c = ball_diversity(&phi, 1.0, &d_pi, &d_mu, eps).unwrap()[0];
            assert!(c <= prev + 1e-9);
            // at the returned C the quadratic form sits on the ε level
            let lhs = 4.0
                * lambda_max(
                    &(DMatrix::from_row_slice(2, 2, &[0.25, 0.25, 0.25, 0.25])
                        - c * DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 0.9]))),
                )
                .max(0.0);
            assert!((lhs - eps).abs() < 1e-8, "{lhs} vs {eps}");
            prev = c;
        }
        let hidden = vec![StageFn::from_values(1, 2, vec![1.0, 0.0]).unwrap()];
        assert_eq!(
            ball_diversity(&phi, 1.0, &d_pi, &hidden, 0.5).unwrap()[0],
            f64::INFINITY
        );
        assert_eq!(
            ball_diversity(&phi, 1.0, &d_pi, &hidden, 1.0).unwrap()[0],
            f64::INFINITY
        );
        assert!(ball_diversity(&phi, 1.0, &d_pi, &hidden, 1.01).unwrap()[0].is_finite());
    }

    #[test]
    fn finite_net_diversity_below_relative_condition() {
        for seed in 0..5 {
            let lin = linear_mdp(3, 2, 2, 2, 1.0, seed).unwrap();
            let class = FunctionClass::linear_net(lin.features.clone(), 2, 1.0, 0.5).unwrap();
            let d_pi = evaluate_policy(&lin.mdp, &random_policy(2, 3, 2, seed))
                .unwrap()
                .occupancy;
            let d_mu = evaluate_policy(&lin.mdp, &Policy::uniform(2, 3, 2))
                .unwrap()
                .occupancy;
            let c = data_diversity(&class, &d_pi, &d_mu, 0.0).unwrap().value;
            let ball = ball_diversity(&lin.features, 1.0, &d_pi, &d_mu, 0.0).unwrap();
            let rcn = relative_condition_number(&lin.features, &d_pi, &d_mu).unwrap();
            let ball_max = ball.iter().copied().fold(0.0, f64::max);
            let rcn_max = rcn.iter().copied().fold(0.0, f64::max);
            assert!(
                c <= ball_max + 1e-9 && ball_max <= rcn_max + 1e-9,
                "{c} {ball_max} {rcn_max}"
            );
        }
    }

    #[test]
    fn one_hot_single_episode_closed_form() {
        let mdp = random_mdp(2, 2, 1, 1.0, 0.0, 3).unwrap();
        let phi = one_hot_features(1, 2, 2);
        let det = Policy::deterministic(2, &[vec![1, 1]]).unwrap();
        let data = collect(
            &mdp,
            &BehaviorSchedule::Fixed {
                policy: det.clone(),
            },
            1,
            0,
        )
        .unwrap();
        let eval = evaluate_policy(&mdp, &det).unwrap();
        let rep = linear_coverage_report(&data, &phi, &eval, &mdp, 1.0).unwrap();
        // initial state 0, action 1: Σ = diag(1, 2, 1, 1), d^π puts all mass on that cell
        assert!((rep.c_pevi - 0.5).abs() < 1e-12);
        assert!((rep.c_pacle - 0.5).abs() < 1e-12);
        assert!((rep.c_bcp - 1.0).abs() < 1e-12);
        // deterministic last-stage reward: weight floored, Λ = diag(1, 1 + 1e12, 1, 1)
        assert_eq!(rep.clamped_weights, 1);
        assert!((rep.c_pevi_adv - 1.0 / (1.0 + 1e12)).abs() < 1e-20);
    }

    #[test]
    fn pacle_below_pevi() {
        for seed in 0..20 {
            let lin = linear_mdp(4, 2, 3, 3, 1.0, seed).unwrap();
            let behavior = random_policy(3, 4, 2, seed + 50);
            let data = collect(
                &lin.mdp,
                &BehaviorSchedule::Fixed { policy: behavior },
                30,
                seed,
            )
            .unwrap();
            let eval = evaluate_policy(&lin.mdp, &random_policy(3, 4, 2, seed)).unwrap();
            let rep = linear_coverage_report(&data, &lin.features, &eval, &lin.mdp, 1.0).unwrap();
            assert!(rep.c_pacle <= rep.c_pevi + 1e-9);
            assert!(rep.c_pevi <= 1.0 / 1.0 + 1e-12);
        }
    }
}
