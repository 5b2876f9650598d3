use super::{check_param, ChainPotential, CriticKind, CriticOutput, Diagnostics};
use crate::error::Result;

/// Cost-to-go `J[h][i] = min_j (gap(h, i, j) + J[h+1][j])` with the argmin
/// per cell, lowest index on ties.
pub(crate) fn cost_to_go(p: &ChainPotential) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let n_h = p.horizon();
    let mut cost: Vec<Vec<f64>> = vec![Vec::new(); n_h];
    let mut choice: Vec<Vec<usize>> = vec![Vec::new(); n_h];
    for h in (0..n_h).rev() {
        let mut c = Vec::with_capacity(p.size(h));
        let mut arg = Vec::with_capacity(p.size(h));
        for i in 0..p.size(h) {
            if h + 1 == n_h {
                c.push(p.gap(h, i, 0));
                arg.push(0);
                continue;
            }
            let mut best = (0, f64::INFINITY);
            for j in 0..p.cols(h) {
                let total = p.gap(h, i, j) + cost[h + 1][j];
                if total < best.1 {
                    best = (j, total);
                }
            }
            c.push(best.1);
            arg.push(best.0);
        }
        cost[h] = c;
        choice[h] = arg;
    }
    (cost, choice)
}

/// Regularized critic: minimizes `λ v1[i_1] + Σ_h (L[h][i_h][i_{h+1}] - m[h][i_{h+1}])`
/// over all chains by backward dynamic programming.
pub fn roc(p: &ChainPotential, lambda: f64) -> Result<CriticOutput> {
    check_param("lambda", lambda)?;
    let (cost, choice) = cost_to_go(p);
    let v1 = p.v1();
    let mut first = (0, f64::INFINITY);
    for i in 0..p.size(0) {
        let total = lambda * v1[i] + cost[0][i];
        if total < first.1 {
            first = (i, total);
        }
    }
    let mut indices = vec![first.0];
    for h in 0..p.horizon() - 1 {
        indices.push(choice[h][indices[h]]);
    }
    Ok(CriticOutput {
        objective: first.1,
        initial_value: v1[first.0],
        indices,
        params: CriticKind::Roc { lambda },
        diagnostics: Diagnostics::default(),
    })
}
