use super::{check_param, ChainPotential, CriticKind, CriticOutput, Diagnostics};
use crate::error::{Error, Result};

/// Feasible pairs `L[h][i][j] ≤ m[h][j] + β`.
pub(crate) fn feasible(p: &ChainPotential, beta: f64, h: usize, i: usize, j: usize) -> bool {
    p.loss(h, i, j) <= p.col_min(h, j) + beta
}

/// `ok[h][i]`: candidate `i` at stage `h` has a feasible suffix.
fn backward_reach(p: &ChainPotential, beta: f64) -> Vec<Vec<bool>> {
    let n_h = p.horizon();
    let mut ok: Vec<Vec<bool>> = vec![Vec::new(); n_h];
    for h in (0..n_h).rev() {
        ok[h] = (0..p.size(h))
            .map(|i| {
                if h + 1 == n_h {
                    feasible(p, beta, h, i, 0)
                } else {
                    (0..p.cols(h)).any(|j| ok[h + 1][j] && feasible(p, beta, h, i, j))
                }
            })
            .collect();
    }
    ok
}

/// Version-space critic: among chains whose every consecutive pair is
/// feasible, the one minimizing `v1[i_1]`; ties go to the lexicographically
/// smallest chain.
pub fn vsc(p: &ChainPotential, beta: f64) -> Result<CriticOutput> {
    check_param("beta", beta)?;
    let n_h = p.horizon();
    let ok = backward_reach(p, beta);
    if let Some(stage) = (0..n_h).rev().find(|&h| !ok[h].iter().any(|&x| x)) {
        return Err(Error::EmptyVersionSpace { stage });
    }

    let v1 = p.v1();
    let mut first = None;
    for i in (0..p.size(0)).filter(|&i| ok[0][i]) {
        if first.map_or(true, |b: usize| v1[i] < v1[b]) {
            first = Some(i);
        }
    }
    let mut indices = vec![first.expect("stage 0 has a feasible candidate")];
    for h in 0..n_h - 1 {
        let i = indices[h];
        let j = (0..p.cols(h))
            .find(|&j| ok[h + 1][j] && feasible(p, beta, h, i, j))
            .expect("reachable suffix");
        indices.push(j);
    }

    // forward pass restricted to full chains gives the version-space sizes
    let mut on_chain = ok[0].clone();
    let mut sizes = vec![on_chain.iter().filter(|&&x| x).count()];
    for h in 0..n_h - 1 {
        let next: Vec<bool> = (0..p.size(h + 1))
            .map(|j| {
                ok[h + 1][j] && (0..p.size(h)).any(|i| on_chain[i] && feasible(p, beta, h, i, j))
            })
            .collect();
        sizes.push(next.iter().filter(|&&x| x).count());
        on_chain = next;
    }

    let value = v1[indices[0]];
    Ok(CriticOutput {
        indices,
        objective: value,
        initial_value: value,
        params: CriticKind::Vsc { beta },
        diagnostics: Diagnostics {
            version_space_sizes: Some(sizes),
            ..Default::default()
        },
    })
}
