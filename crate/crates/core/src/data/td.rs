use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{OfflineDataset, Transition};
use crate::error::{ensure, Result};
use crate::function_spaces::FunctionClass;
use crate::mdp::{Policy, StageFn};

/// `(f_h(s,a) - r - f_next(s', π_{h+1}))²`. Pass `None` for `f_next` at the
/// last stage, where the next-stage term is zero.
pub fn td_loss(
    f_h: &StageFn,
    f_next: Option<&StageFn>,
    pi: &Policy,
    h: usize,
    z: &Transition,
) -> f64 {
    let next = f_next.map_or(0.0, |g| g.expect_action(z.s_next, pi.dist(h + 1, z.s_next)));
    let resid = f_h.get(z.s, z.a) - z.r - next;
    resid * resid
}

/// Summed empirical TD losses `L[h][i][j]` between candidate `i` at stage
/// `h` and candidate `j` at stage `h+1`. The last stage has one column, the
/// zero function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdLossMatrix {
    shapes: Vec<(usize, usize)>,
    /// Row-major `N_h × N_{h+1}` blocks.
    data: Vec<Vec<f64>>,
}

impl TdLossMatrix {
    pub fn from_blocks(blocks: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let mut shapes = Vec::with_capacity(blocks.len());
        let mut data = Vec::with_capacity(blocks.len());
        for (h, block) in blocks.iter().enumerate() {
            let rows = block.len();
            let cols = block.first().map_or(0, Vec::len);
            ensure(rows > 0 && cols > 0, || format!("stage {h} block is empty"))?;
            ensure(block.iter().all(|r| r.len() == cols), || {
                format!("stage {h} block is ragged")
            })?;
            if let Some(&(_, prev_cols)) = shapes.last() {
                ensure(prev_cols == rows, || {
                    format!("stage {h} rows do not match the previous columns")
                })?;
            }
            shapes.push((rows, cols));
            data.push(block.concat());
        }
        ensure(shapes.last().map_or(false, |s| s.1 == 1), || {
            "last stage must have one column".into()
        })?;
        Ok(TdLossMatrix { shapes, data })
    }

    pub fn horizon(&self) -> usize {
        self.shapes.len()
    }

    pub fn rows(&self, h: usize) -> usize {
        self.shapes[h].0
    }

    pub fn cols(&self, h: usize) -> usize {
        self.shapes[h].1
    }

    pub fn get(&self, h: usize, i: usize, j: usize) -> f64 {
        self.data[h][i * self.shapes[h].1 + j]
    }

    /// Column `j` of stage `h`.
    pub fn column(&self, h: usize, j: usize) -> impl Iterator<Item = f64> + '_ {
        let cols = self.shapes[h].1;
        self.data[h].iter().skip(j).step_by(cols).copied()
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().flatten().copied().fold(0.0, f64::max)
    }
}

/// Per-`(s, a, s')` count, mean reward and centered sum of squares.
struct Group {
    n: f64,
    mean: f64,
    m2: f64,
}

fn stage_groups(
    transitions: impl Iterator<Item = Transition>,
) -> Vec<((usize, usize, usize), Group)> {
    let mut rewards: BTreeMap<(usize, usize, usize), Vec<f64>> = BTreeMap::new();
    for z in transitions {
        rewards.entry((z.s, z.a, z.s_next)).or_default().push(z.r);
    }
    rewards
        .into_iter()
        .map(|(key, mut rs)| {
            // sorting makes the sums independent of episode order
            rs.sort_by(f64::total_cmp);
            let n = rs.len() as f64;
            let mean = rs.iter().sum::<f64>() / n;
            let m2 = rs.iter().map(|r| (r - mean) * (r - mean)).sum();
            (key, Group { n, mean, m2 })
        })
        .collect()
}

/// Grouped sufficient statistics of a dataset, independent of the class
/// and the policy, so repeated loss builds skip the pass over episodes.
pub struct TdStatistics {
    num_states: usize,
    num_actions: usize,
    stages: Vec<Vec<((usize, usize, usize), Group)>>,
}

impl TdStatistics {
    pub fn new(dataset: &OfflineDataset) -> Self {
        TdStatistics {
            num_states: dataset.num_states,
            num_actions: dataset.num_actions,
            stages: (0..dataset.horizon).map(|h| stage_groups(dataset.stage(h).copied())).collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    /// Builds all loss matrices from the grouped statistics:
    /// `Σ_k (x - r_k)² = n (x - r̄)² + Σ_k (r_k - r̄)²` within each
    /// `(s, a, s')` group.
    pub fn build(&self, class: &FunctionClass, pi: &Policy) -> Result<TdLossMatrix> {
        let n_h = self.horizon();
        let n_s = self.num_states;
        ensure(class.horizon() == n_h, || "class and dataset horizons differ".into())?;
        ensure(class.num_states() == n_s && class.num_actions() == self.num_actions, || {
            "class and dataset shapes differ".into()
        })?;
        ensure(
            pi.horizon() == n_h && pi.num_states() == n_s && pi.num_actions() == self.num_actions,
            || "policy shape differs from the dataset".into(),
        )?;
        let mut blocks = Vec::with_capacity(n_h);
        for (h, groups) in self.stages.iter().enumerate() {
            let rows = class.stage_size(h);
            let last = h + 1 == n_h;
            let cols = if last { 1 } else { class.stage_size(h + 1) };
            // next_values[j][s'] = f_j(s', π_{h+1})
            let next_values: Vec<Vec<f64>> = (0..cols)
                .map(|j| {
                    (0..n_s)
                        .map(|sn| if last { 0.0 } else { class.candidate(h + 1, j).expect_action(sn, pi.dist(h + 1, sn)) })
                        .collect()
                })
                .collect();
            let noise: f64 = groups.iter().map(|(_, g)| g.m2).sum();
            let mut block = vec![vec![0.0; cols]; rows];
            for (i, row) in block.iter_mut().enumerate() {
                let f = class.candidate(h, i);
                for (j, cell) in row.iter_mut().enumerate() {
                    let mut total = noise;
                    for &((s, a, sn), ref g) in groups {
                        let resid = f.get(s, a) - g.mean - next_values[j][sn];
                        total += g.n * resid * resid;
                    }
                    *cell = total;
                }
            }
            blocks.push(block);
        }
        TdLossMatrix::from_blocks(blocks)
    }
}

/// One-shot form of [`TdStatistics::build`].
pub fn build_td_matrix(dataset: &OfflineDataset, class: &FunctionClass, pi: &Policy) -> Result<TdLossMatrix> {
    TdStatistics::new(dataset).build(class, pi)
}
