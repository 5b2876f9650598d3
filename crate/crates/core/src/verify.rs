//! Self-check suite: exact identities, critic/enumeration agreement,
//! witness scans, decoupling margins and actor-regret audits on seeded
//! random instances.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::critics::testing::{random_potential, tied_potential};
use crate::critics::{brute_force, psc_marginals, roc, vsc, BruteForce, BruteMode};
use crate::data::{collect, BehaviorSchedule};
use crate::diversity::{check_decoupling, data_diversity, DecouplingInput};
use crate::error::Result;
use crate::function_spaces::{ClosedClassSpec, FunctionClass};
use crate::generators::{random_mdp, random_policy};
use crate::gopo::{actor_regret_audit, run, GopoConfig};
use crate::mdp::{
    advantage_sum, error_decomposition, evaluate_policy, induced_mdp, optimal_policy, EpisodicMdp, Policy, StageFn,
};
use crate::numeric::keyed_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Quick,
    Full,
}

impl Level {
    pub fn seeds(self) -> u64 {
        match self {
            Level::Quick => 10,
            Level::Full => 50,
        }
    }
}

/// Deliberate bugs used to confirm that the suite can fail.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Negates the Bellman term of the error decomposition.
    FlipDecompositionSign,
}

/// Outcome of one named check. `worst` is the smallest margin seen, where a
/// margin is `tolerance - deviation` for identities and the slack of the
/// inequality otherwise; a check passes when no margin is negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    pub worst: f64,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        CheckResult { name: name.into(), cases: 0, failures: 0, worst: f64::INFINITY }
    }

    fn record(&mut self, margin: f64) {
        self.cases += 1;
        if margin.is_nan() || margin < 0.0 {
            self.failures += 1;
        }
        self.worst = self.worst.min(if margin.is_nan() { f64::NEG_INFINITY } else { margin });
    }

    fn exact(&mut self, ok: bool) {
        self.record(if ok { 0.0 } else { -1.0 });
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<4} {:<28} cases={:<5} failures={:<4} worst_margin={:.3e}",
                if c.passed() { "ok" } else { "FAIL" },
                c.name,
                c.cases,
                c.failures,
                c.worst
            )?;
        }
        Ok(())
    }
}

fn random_q(rng: &mut impl Rng, mdp: &EpisodicMdp) -> Vec<StageFn> {
    let b = mdp.bound();
    (0..mdp.horizon())
        .map(|_| {
            let values = (0..mdp.num_states() * mdp.num_actions()).map(|_| rng.gen_range(-b..=b)).collect();
            StageFn::from_values(mdp.num_states(), mdp.num_actions(), values).expect("sized to the MDP")
        })
        .collect()
}

fn random_instance(seed: u64) -> (EpisodicMdp, Vec<StageFn>, Policy, Policy) {
    let mut rng = keyed_rng(seed, &[0x7665_7269]);
    let (n_s, n_a, n_h) = (rng.gen_range(1..=5), rng.gen_range(1..=3), rng.gen_range(1..=5));
    let mdp = random_mdp(n_s, n_a, n_h, 1.0, rng.gen_range(0.0..0.4), seed).expect("valid generator sizes");
    let q = random_q(&mut rng, &mdp);
    (mdp, q, random_policy(n_h, n_s, n_a, seed + 1), random_policy(n_h, n_s, n_a, seed + 2))
}

fn identities(level: Level, fault: Fault, out: &mut Vec<CheckResult>) -> Result<()> {
    let mut decomposition = CheckResult::new("error_decomposition");
    let mut fixed_point = CheckResult::new("induced_mdp_fixed_point");
    let mut perf_diff = CheckResult::new("performance_difference");
    for seed in 0..level.seeds() {
        let (mdp, q, pi, pi_tilde) = random_instance(seed);
        let mut dec = error_decomposition(&mdp, &q, &pi, &pi_tilde)?;
        if fault == Fault::FlipDecompositionSign {
            dec.bellman_term = -dec.bellman_term;
        }
        decomposition.record(1e-9 - dec.residual());
        let induced = induced_mdp(&mdp, &q, &pi_tilde)?;
        let eval = evaluate_policy(&induced, &pi_tilde)?;
        let dev = eval.q.iter().zip(&q).flat_map(|(a, b)| a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs())).fold(0.0, f64::max);
        fixed_point.record(1e-12 - dev);
        let direct = evaluate_policy(&mdp, &pi)?.initial_value(mdp.initial_state()) - evaluate_policy(&mdp, &pi_tilde)?.initial_value(mdp.initial_state());
        perf_diff.record(1e-9 - (advantage_sum(&mdp, &pi, &pi_tilde)? - direct).abs());
    }
    out.extend([decomposition, fixed_point, perf_diff]);
    Ok(())
}

fn chain_oracles(level: Level, out: &mut Vec<CheckResult>) -> Result<()> {
    let mut vs = CheckResult::new("vsc_vs_enumeration");
    let mut ro = CheckResult::new("roc_vs_enumeration");
    let mut ps = CheckResult::new("psc_marginals_vs_enumeration");
    for seed in 0..level.seeds() * 2 {
        let mut rng = keyed_rng(seed, &[0x6368_6169]);
        let sizes: Vec<usize> = (0..rng.gen_range(2..=3)).map(|_| rng.gen_range(3..=5)).collect();
        let p = if seed % 2 == 0 { random_potential(&sizes, 5.0, seed) } else { tied_potential(&sizes, seed) };
        let beta = rng.gen_range(0.0..3.0);
        let lambda = rng.gen_range(0.0..3.0);
        match (vsc(&p, beta), brute_force(&p, BruteMode::Vsc { beta })) {
            (Ok(a), Ok(BruteForce::Choice(b))) => vs.exact(a.indices == b.indices && a.objective == b.objective),
            (Err(_), Err(_)) => vs.exact(true),
            _ => vs.exact(false),
        }
        if let BruteForce::Choice(b) = brute_force(&p, BruteMode::Roc { lambda })? {
            let a = roc(&p, lambda)?;
            ro.exact(a.indices == b.indices && a.objective == b.objective);
        }
        let gamma = rng.gen_range(0.0..1.0);
        if let BruteForce::Table(table) = brute_force(&p, BruteMode::PscExact { lambda, gamma })? {
            let exact = table.marginals(&sizes);
            let dp = psc_marginals(&p, lambda, gamma)?;
            let dev = exact.iter().flatten().zip(dp.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            ps.record(1e-10 - dev);
        }
    }
    out.extend([vs, ro, ps]);
    Ok(())
}

fn chi_scan(level: Level, out: &mut Vec<CheckResult>) -> Result<()> {
    let mut check = CheckResult::new("chi_vs_pair_scan");
    for seed in 0..level.seeds() {
        let mdp = random_mdp(2, 2, 2, 1.0, 0.0, seed)?;
        let class = FunctionClass::grid(2, 2, 2, &[0.0, 0.3, 0.7], 1.0)?;
        let d_pi = evaluate_policy(&mdp, &random_policy(2, 2, 2, seed))?.occupancy;
        let d_mu = evaluate_policy(&mdp, &random_policy(2, 2, 2, seed + 7))?.occupancy;
        for eps in [0.0, 0.05] {
            let mut scan = 0.0f64;
            for h in 0..2 {
                for f in class.stage(h) {
                    for g in class.stage(h) {
                        let diff = f.zip_map(g, |x, y| x - y);
                        let mean: f64 = diff.values().iter().zip(d_pi[h].values()).map(|(x, w)| x * w).sum();
                        let energy: f64 = diff.values().iter().zip(d_mu[h].values()).map(|(x, w)| x * x * w).sum();
                        if mean * mean > eps {
                            scan = scan.max(if energy > 0.0 { (mean * mean - eps) / energy } else { f64::INFINITY });
                        }
                    }
                }
            }
            check.exact(data_diversity(&class, &d_pi, &d_mu, eps)?.value == scan);
        }
    }
    out.push(check);
    Ok(())
}

fn decoupling(level: Level, out: &mut Vec<CheckResult>) -> Result<()> {
    let mut check = CheckResult::new("decoupling_margin");
    for seed in 0..level.seeds() {
        let mut rng = keyed_rng(seed, &[0x6465_636f]);
        let (n_s, n_a, n_h) = (rng.gen_range(2..=3), rng.gen_range(2..=3), rng.gen_range(1..=3));
        let base = random_mdp(n_s, n_a, n_h, 1.0, 0.0, seed)?;
        let halved: Vec<StageFn> = (0..n_h).map(|h| base.reward_table(h).zip_map(&base.reward_table(h), |r, _| 0.5 * r)).collect();
        let mdp = base.with_rewards(&halved);
        let pi_tilde = random_policy(n_h, n_s, n_a, seed + 1);
        let spec = ClosedClassSpec { distractors: 2, scales: vec![0.1, 0.3], state_only_after_first: false, seed };
        let class = FunctionClass::closed_under(&mdp, &pi_tilde, &spec)?;
        let pi = random_policy(n_h, n_s, n_a, seed + 2);
        let d_mu = evaluate_policy(&mdp, &random_policy(n_h, n_s, n_a, seed + 3))?.occupancy;
        let f: Vec<usize> = (0..n_h).map(|h| rng.gen_range(0..class.stage_size(h))).collect();
        let nu = vec![0.0; n_h];
        let input = DecouplingInput { d_mu: &d_mu, episodes: rng.gen_range(1..200), nu: &nu };
        for lambda in [0.1, 1.0, 10.0] {
            for eps in [0.0, 0.01] {
                let c = check_decoupling(&class, &mdp, &pi, &pi_tilde, &f, lambda, eps, input)?;
                check.record(c.rhs_sqrt_eps - c.lhs + 1e-9);
            }
        }
    }
    out.push(check);
    Ok(())
}

fn regret(level: Level, out: &mut Vec<CheckResult>) -> Result<()> {
    let mut check = CheckResult::new("actor_regret_bound");
    let runs = if level == Level::Quick { 4 } else { 20 };
    for seed in 0..runs {
        let mdp = random_mdp(3, 3, 2, 1.0, 0.0, seed)?;
        let spec = ClosedClassSpec { distractors: 3, scales: vec![0.2], state_only_after_first: false, seed };
        let class = FunctionClass::closed_under(&mdp, &random_policy(2, 3, 3, seed), &spec)?;
        let data = collect(&mdp, &BehaviorSchedule::Fixed { policy: Policy::uniform(2, 3, 3) }, 50, seed)?;
        let critic = crate::critics::CriticKind::Roc { lambda: 1.0 };
        let mut config = GopoConfig::new(critic, 200, seed);
        config.record_trace = true;
        let (_, trace) = run(&data, &class, &config, Some(&mdp))?;
        let audit = actor_regret_audit(&trace, &mdp, &optimal_policy(&mdp))?;
        check.record(audit.bound - audit.regret);
    }
    out.push(check);
    Ok(())
}

/// Runs every check at `level`; `fault` injects a known bug.
pub fn run_suite(level: Level, fault: Fault) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    identities(level, fault, &mut checks)?;
    chain_oracles(level, &mut checks)?;
    chi_scan(level, &mut checks)?;
    decoupling(level, &mut checks)?;
    regret(level, &mut checks)?;
    Ok(VerifyReport { checks })
}
