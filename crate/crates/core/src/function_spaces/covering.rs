use serde::{Deserialize, Serialize};

use super::{FunctionClass, Provenance};
use crate::error::{ensure, Result};

/// Log-covering numbers of a class and its softmax policy class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringReport {
    pub d_f: f64,
    pub d_pi: f64,
    /// `Σ_h ln|F_h|`, the uniform-prior concentration bound. For a linear net
    /// this is the log-size of the discretized class.
    pub d0_bound: f64,
    pub epsilon: f64,
    pub t: usize,
}

/// `ln(C(n + t, t) - 1)`: the number of nonempty multisets of at most `t`
/// elements from `n` items, which counts the distinct logit sums
/// `Σ_{i ≤ t'} g_i` with `t' ≤ t` for one fixed temperature.
pub(crate) fn ln_soft_class_size(n: usize, t: usize) -> f64 {
    let ln_binom: f64 = (1..=n).map(|i| ((t + i) as f64 / i as f64).ln()).sum();
    ln_binom + (-(-ln_binom).exp()).ln_1p()
}

/// Finite classes use the cardinalities directly; linear nets use the ball
/// covering formulas `d ln(1 + 2/ε)` and `d ln(1 + 16 b T / ε)`.
pub fn covering_dims(class: &FunctionClass, epsilon: f64, t: usize) -> Result<CoveringReport> {
    ensure(epsilon > 0.0, || {
        format!("epsilon must be positive, got {epsilon}")
    })?;
    let ln_sizes: Vec<f64> = class.sizes().iter().map(|&n| (n as f64).ln()).collect();
    let d0_bound = ln_sizes.iter().sum();
    let (d_f, d_pi) = match class.provenance() {
        Provenance::NativeFinite => {
            let d_f = ln_sizes.iter().copied().fold(0.0, f64::max);
            let d_pi = class
                .sizes()
                .iter()
                .map(|&n| ln_soft_class_size(n, t))
                .fold(0.0, f64::max);
            (d_f, d_pi)
        }
        Provenance::LinearNet(net) => {
            let d = net.dim as f64;
            (
                d * (2.0 / epsilon).ln_1p(),
                d * (16.0 * class.bound() * t as f64 / epsilon).ln_1p(),
            )
        }
    };
    Ok(CoveringReport {
        d_f,
        d_pi,
        d0_bound,
        epsilon,
        t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::one_hot_features;
    use crate::mdp::StageFn;

    fn count_multisets(n: usize, t: usize) -> u64 {
        // dp[k][m]: multisets of size m over the first k items
        let mut dp = vec![0u64; t + 1];
        dp[0] = 1;
        for _ in 0..n {
            for m in 1..=t {
                dp[m] += dp[m - 1];
            }
        }
        dp[1..].iter().sum()
    }

    #[test]
    fn singleton_class_has_zero_dimension() {
        let class = FunctionClass::native(1.0, vec![vec![StageFn::zeros(2, 2)]; 3]).unwrap();
        let r = covering_dims(&class, 0.1, 10).unwrap();
        assert_eq!(r.d_f, 0.0);
        assert_eq!(r.d0_bound, 0.0);
        // one function gives T distinct logit sums
        assert!((r.d_pi - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn soft_class_size_matches_multiset_count() {
        for (n, t) in [(1, 1), (2, 3), (4, 5), (7, 9), (16, 20)] {
            let expect = (count_multisets(n, t) as f64).ln();
            assert!(
                (ln_soft_class_size(n, t) - expect).abs() < 1e-10,
                "n={n} t={t}"
            );
        }
    }

    #[test]
    fn finite_class_dims() {
        let class = FunctionClass::grid(2, 1, 2, &[0.0, 0.5, 1.0], 1.0).unwrap();
        let r = covering_dims(&class, 0.5, 4).unwrap();
        assert!((r.d_f - 9f64.ln()).abs() < 1e-15);
        assert!((r.d0_bound - 2.0 * 9f64.ln()).abs() < 1e-14);
        assert!(r.d_pi > 0.0);
    }

    #[test]
    fn linear_dims_follow_the_ball_formulas() {
        let class = FunctionClass::linear_net(one_hot_features(1, 1, 2), 2, 1.0, 0.5).unwrap();
        let r = covering_dims(&class, 1.0, 3).unwrap();
        assert!((r.d_f - 2.0 * 3f64.ln()).abs() < 1e-12);
        assert!((r.d_f - 2.1972).abs() < 1e-4);
        assert!((r.d_pi - 2.0 * 49f64.ln()).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for eps in [0.01, 0.1, 0.5, 1.0, 2.0, 10.0] {
            let d = covering_dims(&class, eps, 3).unwrap().d_f;
            assert!(d <= prev && d >= 0.0);
            prev = d;
        }
    }

    #[test]
    fn nonpositive_epsilon_is_rejected() {
        let class = FunctionClass::native(1.0, vec![vec![StageFn::zeros(1, 1)]]).unwrap();
        assert!(covering_dims(&class, 0.0, 1).is_err());
        assert!(covering_dims(&class, -1.0, 1).is_err());
    }
}
