use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::function_spaces::{covering_dims, default_eta, FunctionClass};

/// `b² K ε + b K ξ + H b² max(d̃, ln(H/δ))` with unit constant.
pub fn theorem_beta(
    b: f64,
    k: usize,
    epsilon: f64,
    xi_max: f64,
    horizon: usize,
    d_tilde: f64,
    delta: f64,
) -> f64 {
    let k = k as f64;
    let h = horizon as f64;
    b * b * k * epsilon + b * k * xi_max + h * b * b * d_tilde.max((h / delta).ln())
}

/// Largest posterior temperature the sampler's guarantee allows:
/// `1 / (144 (e-2) b²)`.
pub fn psc_gamma_limit(b: f64) -> f64 {
    1.0 / (144.0 * (std::f64::consts::E - 2.0) * b * b)
}

/// Every tuning parameter derived from the guarantees with `ε = δ = 1/K`,
/// `T = ⌈K ln|A|⌉` and unit hidden constants. `diversity` stands in for the
/// unknown `C(π; 1/√K)` of the comparator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremDefaults {
    pub epsilon: f64,
    pub delta: f64,
    pub iterations: usize,
    pub eta: f64,
    /// `max(d_F, d_Π)`
    pub d_opt: f64,
    /// `max(d_F, d_Π, d_0 / (γ H b²))`
    pub d_ps: f64,
    pub beta: f64,
    pub roc_lambda: f64,
    pub psc_gamma: f64,
    pub psc_lambda: f64,
}

impl TheoremDefaults {
    pub fn new(
        class: &FunctionClass,
        k: usize,
        xi_max: f64,
        diversity: f64,
        beta_scale: f64,
    ) -> Result<Self> {
        ensure(k >= 1, || "theorem defaults need K >= 1".into())?;
        ensure(diversity > 0.0, || {
            "diversity stand-in must be positive".into()
        })?;
        let kf = k as f64;
        let b = class.bound();
        let h = class.horizon() as f64;
        let epsilon = 1.0 / kf;
        let delta = 1.0 / kf;
        let ln_a = (class.num_actions() as f64).ln();
        let iterations = ((kf * ln_a).ceil() as usize).max(1);
        let eta = default_eta(b, iterations, class.num_actions());
        let cover = covering_dims(class, epsilon, iterations)?;
        let d_opt = cover.d_f.max(cover.d_pi);
        let beta = beta_scale * theorem_beta(b, k, epsilon, xi_max, class.horizon(), d_opt, delta);
        let roc_lambda =
            (2.0 * kf * h * b * b * d_opt.max((h / delta).ln()) / (h * diversity)).sqrt();
        let psc_gamma = psc_gamma_limit(b);
        let d_ps = d_opt.max(cover.d0_bound / (psc_gamma * h * b * b));
        let inner = kf * (kf * b * b).ln();
        let log_term = if inner > 0.0 {
            inner.ln()
        } else {
            f64::NEG_INFINITY
        };
        let psc_lambda = psc_gamma * (kf * h * b * b * d_ps.max(log_term) / (h * diversity)).sqrt();
        Ok(TheoremDefaults {
            epsilon,
            delta,
            iterations,
            eta,
            d_opt,
            d_ps,
            beta,
            roc_lambda,
            psc_gamma,
            psc_lambda,
        })
    }
}
