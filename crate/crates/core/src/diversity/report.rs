use serde::{Deserialize, Serialize};

use super::linear::{
    ball_diversity, linear_coverage_report, relative_condition_number, LinearCoverage,
};
use super::{concentrability, data_diversity};
use crate::data::OfflineDataset;
use crate::error::{ensure, Result};
use crate::function_spaces::{FunctionClass, Provenance};
use crate::mdp::{evaluate_policy, EpisodicMdp, Policy};

/// Every coverage measure of one `(π, μ)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub epsilons: Vec<f64>,
    /// `C(π; ε)` for each entry of `epsilons`.
    pub data_diversity: Vec<f64>,
    /// `(stage, i, j)` of the difference `f_i - f_j` attaining each value.
    pub witnesses: Vec<Option<(usize, usize, usize)>>,
    pub concentrability: f64,
    /// Linear classes only: `max_h` of the relative condition number.
    pub relative_condition: Option<f64>,
    /// Linear classes only: `C(π; ε)` over the continuous weight ball.
    pub ball_diversity: Option<Vec<f64>>,
    pub linear: Option<LinearCoverage>,
}

/// Shortest round-trip decimal, `inf` for `+∞` and an empty field for a
/// missing value.
pub fn fmt_real(x: Option<f64>) -> String {
    match x {
        None => String::new(),
        Some(v) if v == f64::INFINITY => "inf".into(),
        Some(v) if v == f64::NEG_INFINITY => "-inf".into(),
        Some(v) => format!("{v}"),
    }
}

impl DiversityReport {
    pub const CSV_HEADER: &'static str =
        "epsilon,data_diversity,witness_stage,witness_i,witness_j,concentrability,\
relative_condition,ball_diversity,c_pevi,c_pacle,c_bcp,c_pevi_adv,lambda_reg,clamped_weights";

    /// One row per `ε`, without a header.
    pub fn csv_rows(&self) -> Vec<String> {
        let lin = self.linear.as_ref();
        self.epsilons
            .iter()
            .enumerate()
            .map(|(n, &eps)| {
                let w = self.witnesses[n];
                let field = |x: Option<usize>| x.map(|v| v.to_string()).unwrap_or_default();
                [
                    fmt_real(Some(eps)),
                    fmt_real(Some(self.data_diversity[n])),
                    field(w.map(|t| t.0)),
                    field(w.map(|t| t.1)),
                    field(w.map(|t| t.2)),
                    fmt_real(Some(self.concentrability)),
                    fmt_real(self.relative_condition),
                    fmt_real(self.ball_diversity.as_ref().map(|v| v[n])),
                    fmt_real(lin.map(|l| l.c_pevi)),
                    fmt_real(lin.map(|l| l.c_pacle)),
                    fmt_real(lin.map(|l| l.c_bcp)),
                    fmt_real(lin.map(|l| l.c_pevi_adv)),
                    fmt_real(lin.map(|l| l.lambda_reg)),
                    field(lin.map(|l| l.clamped_weights)),
                ]
                .join(",")
            })
            .collect()
    }
}

/// Coverage of `pi` by the realized behavior of `dataset`. The linear
/// measures are filled in when the class carries a feature map.
pub fn diversity_report(
    class: &FunctionClass,
    mdp: &EpisodicMdp,
    pi: &Policy,
    dataset: &OfflineDataset,
    epsilons: &[f64],
    lambda_reg: f64,
) -> Result<DiversityReport> {
    ensure(!epsilons.is_empty(), || "empty epsilon grid".into())?;
    let eval = evaluate_policy(mdp, pi)?;
    let d_mu = dataset.behavior_occupancy(mdp)?;
    let mut values = Vec::with_capacity(epsilons.len());
    let mut witnesses = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let c = data_diversity(class, &eval.occupancy, &d_mu, eps)?;
        values.push(c.value);
        witnesses.push(c.witness());
    }
    let (relative_condition, ball, linear) = match class.provenance() {
        Provenance::LinearNet(net) => {
            let rcn = relative_condition_number(&net.features, &eval.occupancy, &d_mu)?;
            let ball = epsilons
                .iter()
                .map(|&eps| {
                    ball_diversity(&net.features, net.radius, &eval.occupancy, &d_mu, eps)
                        .map(|v| v.into_iter().fold(0.0, f64::max))
                })
                .collect::<Result<Vec<_>>>()?;
            let lin = linear_coverage_report(dataset, &net.features, &eval, mdp, lambda_reg)?;
            (
                Some(rcn.into_iter().fold(0.0, f64::max)),
                Some(ball),
                Some(lin),
            )
        }
        Provenance::NativeFinite => (None, None, None),
    };
    Ok(DiversityReport {
        epsilons: epsilons.to_vec(),
        data_diversity: values,
        witnesses,
        concentrability: concentrability(&eval.occupancy, &d_mu)?,
        relative_condition,
        ball_diversity: ball,
        linear,
    })
}
