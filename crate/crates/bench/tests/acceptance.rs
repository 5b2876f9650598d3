//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero when any criterion fails.

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use gopo::critics::testing::{random_potential, tied_potential};
use gopo::critics::{brute_force, psc, psc_marginals, roc, vsc, BruteForce, BruteMode, ChainPotential, CriticKind};
use gopo::data::{collect, BehaviorSchedule};
use gopo::diversity::{check_decoupling, concentrability, data_diversity, linear_coverage_report, relative_condition_number, DecouplingInput};
use gopo::function_spaces::{ClosedClassSpec, FunctionClass};
use gopo::generators::{linear_mdp, random_mdp, random_policy};
use gopo::gopo::{actor_regret_audit, run, GopoConfig};
use gopo::mdp::{error_decomposition, evaluate_policy, induced_mdp, optimal_policy, EpisodicMdp, Policy, StageFn};
use gopo::numeric::{derive_seed, keyed_rng};
use gopo_bench::config::ExperimentConfig;
use gopo_bench::experiment::{results_csv, run_experiment, Instance};
use gopo_bench::plot::{fit_slopes, medians_nonincreasing, summarize};

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(start: Instant, limit: Duration) -> (bool, String) {
    let spent = start.elapsed();
    (spent <= limit, format!("{:.1}s of {}s", spent.as_secs_f64(), limit.as_secs()))
}

/// Forward state-distribution pass: `Σ_h E[r_h]` under `pi`. Independent of
/// the backward evaluator in the library.
fn forward_value(mdp: &EpisodicMdp, pi: &Policy) -> f64 {
    let (n_s, n_a) = (mdp.num_states(), mdp.num_actions());
    let mut dist = vec![0.0; n_s];
    dist[mdp.initial_state()] = 1.0;
    let mut total = 0.0;
    for h in 0..mdp.horizon() {
        let mut next = vec![0.0; n_s];
        for s in 0..n_s {
            for a in 0..n_a {
                let w = dist[s] * pi.prob(h, s, a);
                total += w * mdp.reward(h, s, a);
                if h + 1 < mdp.horizon() {
                    for (sn, p) in mdp.next_dist(h, s, a).iter().enumerate() {
                        next[sn] += w * p;
                    }
                }
            }
        }
        dist = next;
    }
    total
}

fn random_q(rng: &mut impl Rng, n_s: usize, n_a: usize, n_h: usize, b: f64) -> Vec<StageFn> {
    (0..n_h)
        .map(|_| {
            let values = (0..n_s * n_a).map(|_| rng.gen_range(-b..=b)).collect();
            StageFn::from_values(n_s, n_a, values).expect("sized table")
        })
        .collect()
}

fn identities() -> Outcome {
    let start = Instant::now();
    let (mut worst_res, mut worst_fix, mut worst_sub) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..50u64 {
        let mut rng = keyed_rng(seed, &[1]);
        let (n_s, n_a, n_h) = (rng.gen_range(1..=5), rng.gen_range(1..=3), rng.gen_range(1..=5));
        let mdp = random_mdp(n_s, n_a, n_h, 1.0, rng.gen_range(0.0..0.4), seed).map_err(|e| e.to_string())?;
        let q = random_q(&mut rng, n_s, n_a, n_h, 1.0);
        let pi = random_policy(n_h, n_s, n_a, 1000 + seed);
        let pi_tilde = random_policy(n_h, n_s, n_a, 2000 + seed);
        let dec = error_decomposition(&mdp, &q, &pi, &pi_tilde).map_err(|e| e.to_string())?;
        worst_res = worst_res.max(dec.residual());
        worst_sub = worst_sub.max((dec.suboptimality - (forward_value(&mdp, &pi) - forward_value(&mdp, &pi_tilde))).abs());
        let induced = induced_mdp(&mdp, &q, &pi_tilde).map_err(|e| e.to_string())?;
        let eval = evaluate_policy(&induced, &pi_tilde).map_err(|e| e.to_string())?;
        for (a, b) in eval.q.iter().zip(&q) {
            for (x, y) in a.values().iter().zip(b.values()) {
                worst_fix = worst_fix.max((x - y).abs());
            }
        }
    }
    let (fast, time) = within(start, Duration::from_secs(10));
    verdict(
        worst_res < 1e-9 && worst_fix < 1e-12 && worst_sub < 1e-9 && fast,
        format!("50 instances, residual {worst_res:.1e}, fixed point {worst_fix:.1e}, subopt vs forward pass {worst_sub:.1e}, {time}"),
    )
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let draws = 100_000u64;
    let (mut mismatches, mut worst_marg, mut worst_tv) = (0usize, 0.0f64, 0.0f64);
    for seed in 0..100u64 {
        let mut rng = keyed_rng(seed, &[2]);
        let sizes: Vec<usize> = (0..rng.gen_range(2..=3)).map(|_| rng.gen_range(3..=5)).collect();
        let p = if seed % 2 == 0 { random_potential(&sizes, 4.0, seed) } else { tied_potential(&sizes, seed) };
        let beta = rng.gen_range(0.0..2.0);
        let lambda = rng.gen_range(0.0..3.0);
        let gamma = rng.gen_range(0.0..2.0);
        let err = |e: gopo::error::Error| e.to_string();
        match (vsc(&p, beta), brute_force(&p, BruteMode::Vsc { beta })) {
            (Ok(a), Ok(BruteForce::Choice(b))) => mismatches += usize::from(a.indices != b.indices || a.objective != b.objective),
            (Err(_), Err(_)) => {}
            _ => mismatches += 1,
        }
        if let BruteForce::Choice(b) = brute_force(&p, BruteMode::Roc { lambda }).map_err(err)? {
            let a = roc(&p, lambda).map_err(err)?;
            mismatches += usize::from(a.indices != b.indices || a.objective != b.objective);
        }
        let BruteForce::Table(table) = brute_force(&p, BruteMode::PscExact { lambda, gamma }).map_err(err)? else {
            return Err("enumeration returned no table".into());
        };
        let exact = table.marginals(&sizes);
        let dp = psc_marginals(&p, lambda, gamma).map_err(err)?;
        for (x, y) in exact.iter().flatten().zip(dp.iter().flatten()) {
            worst_marg = worst_marg.max((x - y).abs());
        }
        let mut counts: HashMap<Vec<usize>, u64> = HashMap::new();
        for n in 0..draws {
            let out = psc(&p, lambda, gamma, derive_seed(seed, &[n])).map_err(err)?;
            *counts.entry(out.indices).or_default() += 1;
        }
        let tv = 0.5
            * table
                .chains
                .iter()
                .zip(&table.probs)
                .map(|(c, &pr)| (counts.get(c).copied().unwrap_or(0) as f64 / draws as f64 - pr).abs())
                .sum::<f64>();
        worst_tv = worst_tv.max(tv);
    }
    let (fast, time) = within(start, Duration::from_secs(120));
    verdict(
        mismatches == 0 && worst_marg <= 1e-10 && worst_tv <= 0.02 && fast,
        format!("100 instances, {mismatches} VSC/ROC mismatches, marginal dev {worst_marg:.1e}, worst TV {worst_tv:.4} over {draws} draws, {time}"),
    )
}

fn actor_regret() -> Outcome {
    let mut violations = 0;
    let mut worst_ratio = 0.0f64;
    let mut worst_oracle_gap = 0.0f64;
    for seed in 0..20u64 {
        let mdp = random_mdp(3, 3, 3, 1.0, 0.0, 300 + seed).map_err(|e| e.to_string())?;
        let spec = ClosedClassSpec { distractors: 3, scales: vec![0.2, 0.1], state_only_after_first: false, seed };
        let class = FunctionClass::closed_under(&mdp, &random_policy(3, 3, 3, seed), &spec).map_err(|e| e.to_string())?;
        let data = collect(&mdp, &BehaviorSchedule::Fixed { policy: Policy::uniform(3, 3, 3) }, 40, seed).map_err(|e| e.to_string())?;
        let critic = match seed % 3 {
            0 => CriticKind::Vsc { beta: 0.5 },
            1 => CriticKind::Roc { lambda: 2.0 },
            _ => CriticKind::Psc { lambda: 2.0, gamma: 0.5 },
        };
        let mut config = GopoConfig::new(critic, 200, seed);
        config.record_trace = true;
        let (_, trace) = run(&data, &class, &config, None).map_err(|e| e.to_string())?;
        let comparator = optimal_policy(&mdp);
        let audit = actor_regret_audit(&trace, &mdp, &comparator).map_err(|e| e.to_string())?;
        // performance difference in M_t: the comparator's occupancy times
        // Q^t(s, comparator) - Q^t(s, π^t), which skips building M_t
        let d = evaluate_policy(&mdp, &comparator).map_err(|e| e.to_string())?.occupancy;
        let mut oracle = 0.0;
        for (pi_t, q_t) in trace.policies.iter().zip(&trace.critic_tables) {
            for h in 0..mdp.horizon() {
                for s in 0..mdp.num_states() {
                    let mass: f64 = (0..mdp.num_actions()).map(|a| d[h].get(s, a)).sum();
                    oracle += mass * (q_t[h].expect_action(s, comparator.dist(h, s)) - q_t[h].expect_action(s, pi_t.dist(h, s)));
                }
            }
        }
        worst_oracle_gap = worst_oracle_gap.max((oracle - audit.regret).abs());
        if audit.regret > audit.bound {
            violations += 1;
        }
        worst_ratio = worst_ratio.max(audit.regret / audit.bound);
    }
    verdict(
        violations == 0 && worst_oracle_gap < 1e-8,
        format!("20 runs, T = 200, |A| = 3, {violations} violations, max regret/bound {worst_ratio:.3}, audit vs oracle {worst_oracle_gap:.1e}"),
    )
}

fn decoupling_margin() -> Outcome {
    let (mut cases, mut violations) = (0, 0);
    let mut worst = f64::INFINITY;
    let mut worst_sqrt = f64::INFINITY;
    let mut by_eps = [0usize; 2];
    for seed in 0..50u64 {
        let mut rng = keyed_rng(seed, &[4]);
        let (n_s, n_a, n_h) = (rng.gen_range(2..=4), rng.gen_range(2..=3), rng.gen_range(1..=3));
        let base = random_mdp(n_s, n_a, n_h, 1.0, 0.0, 400 + seed).map_err(|e| e.to_string())?;
        // halved rewards leave room for distractor images inside [-b, b]
        let halved: Vec<StageFn> = (0..n_h).map(|h| StageFn::from_fn(n_s, n_a, |s, a| 0.5 * base.reward(h, s, a))).collect();
        let mdp = base.with_rewards(&halved);
        let pi_tilde = random_policy(n_h, n_s, n_a, 500 + seed);
        let spec = ClosedClassSpec { distractors: 2, scales: vec![0.1, 0.3], state_only_after_first: false, seed };
        let class = FunctionClass::closed_under(&mdp, &pi_tilde, &spec).map_err(|e| e.to_string())?;
        let pi = random_policy(n_h, n_s, n_a, 600 + seed);
        let d_mu = evaluate_policy(&mdp, &random_policy(n_h, n_s, n_a, 700 + seed)).map_err(|e| e.to_string())?.occupancy;
        let f: Vec<usize> = (0..n_h).map(|h| rng.gen_range(0..class.stage_size(h))).collect();
        let nu = vec![0.0; n_h];
        let input = DecouplingInput { d_mu: &d_mu, episodes: rng.gen_range(1..200), nu: &nu };
        for lambda in [0.1, 1.0, 10.0] {
            for (e, eps) in [0.0, 0.01].into_iter().enumerate() {
                let c = check_decoupling(&class, &mdp, &pi, &pi_tilde, &f, lambda, eps, input).map_err(|e| e.to_string())?;
                cases += 1;
                worst = worst.min(c.margin);
                worst_sqrt = worst_sqrt.min(c.rhs_sqrt_eps - c.lhs);
                if c.margin < -1e-9 {
                    violations += 1;
                    by_eps[e] += 1;
                }
            }
        }
    }
    verdict(
        violations == 0,
        format!(
            "{cases} cases, {violations} below -1e-9 (eps=0: {}, eps=0.01: {}), worst margin {worst:.3e}; with H*sqrt(eps) the worst margin is {worst_sqrt:.3e}",
            by_eps[0], by_eps[1]
        ),
    )
}

fn coverage_containments() -> Outcome {
    let slack = 1e-9;
    let (mut tabular_bad, mut linear_bad, mut rcn_bad, mut skipped) = (0, 0, 0, 0);
    let mut pacle_bad = 0;
    let k = 100usize;
    let eps = 1.0 / (k as f64).sqrt();
    for seed in 0..50u64 {
        let mut rng = keyed_rng(seed, &[5]);
        let (n_s, n_a, n_h) = (rng.gen_range(2..=4), rng.gen_range(2..=3), rng.gen_range(1..=3));
        let lin = linear_mdp(n_s, n_a, n_h, 3, 1.0, 800 + seed).map_err(|e| e.to_string())?;
        let class = FunctionClass::linear_net(lin.features.clone(), n_a, 1.0, 0.5).map_err(|e| e.to_string())?;
        let pi = random_policy(n_h, n_s, n_a, 900 + seed);
        let mu = random_policy(n_h, n_s, n_a, 950 + seed);
        let pi_eval = evaluate_policy(&lin.mdp, &pi).map_err(|e| e.to_string())?;
        let d_pi = &pi_eval.occupancy;
        let d_mu = evaluate_policy(&lin.mdp, &mu).map_err(|e| e.to_string())?.occupancy;
        let c_eps = data_diversity(&class, d_pi, &d_mu, eps).map_err(|e| e.to_string())?.value;
        let c_zero = data_diversity(&class, d_pi, &d_mu, 0.0).map_err(|e| e.to_string())?.value;
        let conc = concentrability(d_pi, &d_mu).map_err(|e| e.to_string())?;
        let rcn = relative_condition_number(&lin.features, d_pi, &d_mu).map_err(|e| e.to_string())?.into_iter().fold(0.0, f64::max);
        if !(conc.is_finite() && rcn.is_finite()) {
            skipped += 1;
            continue;
        }
        if !(c_eps <= c_zero + slack && c_zero <= conc + slack) {
            linear_bad += 1;
        }
        if c_zero > rcn * (1.0 + slack) + slack {
            rcn_bad += 1;
        }
        // the same chain on a tabular class
        let base = random_mdp(n_s, n_a, n_h, 1.0, 0.0, 850 + seed).map_err(|e| e.to_string())?;
        let halved: Vec<StageFn> = (0..n_h).map(|h| StageFn::from_fn(n_s, n_a, |s, a| 0.5 * base.reward(h, s, a))).collect();
        let mdp = base.with_rewards(&halved);
        let spec = ClosedClassSpec { distractors: 4, scales: vec![0.3, 0.1], state_only_after_first: false, seed };
        let tab_class = FunctionClass::closed_under(&mdp, &pi, &spec).map_err(|e| e.to_string())?;
        let t_pi = evaluate_policy(&mdp, &pi).map_err(|e| e.to_string())?.occupancy;
        let t_mu = evaluate_policy(&mdp, &mu).map_err(|e| e.to_string())?.occupancy;
        let t_eps = data_diversity(&tab_class, &t_pi, &t_mu, eps).map_err(|e| e.to_string())?.value;
        let t_zero = data_diversity(&tab_class, &t_pi, &t_mu, 0.0).map_err(|e| e.to_string())?.value;
        let t_conc = concentrability(&t_pi, &t_mu).map_err(|e| e.to_string())?;
        if !(t_eps <= t_zero + slack && t_zero <= t_conc + slack) {
            tabular_bad += 1;
        }
        // elliptical coverage from a dataset of the same behavior
        let data = collect(&lin.mdp, &BehaviorSchedule::Fixed { policy: mu }, k, seed).map_err(|e| e.to_string())?;
        let cov = linear_coverage_report(&data, &lin.features, &pi_eval, &lin.mdp, 1.0).map_err(|e| e.to_string())?;
        if cov.c_pacle > cov.c_pevi + slack {
            pacle_bad += 1;
        }
    }
    let bad = tabular_bad + linear_bad + rcn_bad + pacle_bad;
    verdict(
        bad == 0 && skipped < 50,
        format!(
            "50 linear + 50 tabular instances ({skipped} skipped as infinite), chain violations linear {linear_bad} tabular {tabular_bad}, rcn {rcn_bad}, pacle > pevi {pacle_bad}"
        ),
    )
}

fn scaling() -> Outcome {
    let start = Instant::now();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/scaling.toml");
    let config = ExperimentConfig::load(&path).map_err(|e| e.to_string())?;
    let inst = Instance::build(&config).map_err(|e| e.to_string())?;
    let sizes = inst.class.sizes();
    let rows = run_experiment(&config, &inst, None).map_err(|e| e.to_string())?;
    let failed = rows.iter().filter(|r| !r.failures.is_empty()).count();
    let points = summarize(&rows);
    let fits = fit_slopes(&points);
    let mut ok = failed == 0 && sizes.iter().all(|&n| n <= 16) && fits.len() == 3;
    let mut parts = Vec::new();
    for fit in &fits {
        let monotone = medians_nonincreasing(&points, &fit.algorithm);
        let slope = fit.slope.unwrap_or(f64::NAN);
        ok &= monotone && (-0.75..=-0.30).contains(&slope);
        parts.push(format!(
            "{} slope {slope:.3} ± {:.3}{}",
            fit.algorithm,
            fit.stderr.unwrap_or(f64::NAN),
            if monotone { "" } else { " (medians increase)" }
        ));
    }
    let (fast, time) = within(start, Duration::from_secs(30 * 60));
    verdict(ok && fast, format!("sizes {sizes:?}, {} cells, {failed} failed; {}; {time}", rows.len(), parts.join(", ")))
}

fn posterior_sanity() -> Outcome {
    let draws = 100_000u64;
    let mdp = random_mdp(3, 2, 3, 1.0, 0.1, 77).map_err(|e| e.to_string())?;
    let spec = ClosedClassSpec { distractors: 3, scales: vec![0.2, 0.1], state_only_after_first: false, seed: 7 };
    let pi = Policy::uniform(3, 3, 2);
    let class = FunctionClass::closed_under(&mdp, &pi, &spec).map_err(|e| e.to_string())?;
    let data = collect(&mdp, &BehaviorSchedule::Fixed { policy: pi.clone() }, 50, 7).map_err(|e| e.to_string())?;
    // a skewed prior, so the check is not only about uniformity
    let prior: Vec<Vec<f64>> = class
        .sizes()
        .iter()
        .map(|&n| {
            let w: Vec<f64> = (1..=n).map(|i| i as f64).collect();
            let total: f64 = w.iter().sum();
            w.iter().map(|x| (x / total).ln()).collect()
        })
        .collect();
    let p = ChainPotential::from_data(&data, &class, &pi, mdp.initial_state(), Some(prior.clone())).map_err(|e| e.to_string())?;
    let mut counts: HashMap<Vec<usize>, u64> = HashMap::new();
    for n in 0..draws {
        let out = psc(&p, 0.0, 0.0, derive_seed(99, &[n])).map_err(|e| e.to_string())?;
        *counts.entry(out.indices).or_default() += 1;
    }
    let mut chains: Vec<Vec<usize>> = vec![vec![]];
    for h in 0..class.horizon() {
        chains = chains.into_iter().flat_map(|c| (0..class.stage_size(h)).map(move |i| [c.clone(), vec![i]].concat())).collect();
    }
    let mut stat = 0.0;
    let mut min_expected = f64::INFINITY;
    for c in &chains {
        let prob: f64 = c.iter().enumerate().map(|(h, &i)| prior[h][i].exp()).product();
        let expected = prob * draws as f64;
        min_expected = min_expected.min(expected);
        let observed = counts.get(c).copied().unwrap_or(0) as f64;
        stat += (observed - expected).powi(2) / expected;
    }
    let df = (chains.len() - 1) as f64;
    let p_value = 1.0 - ChiSquared::new(df).map_err(|e| e.to_string())?.cdf(stat);
    verdict(
        p_value >= 1e-3 && min_expected >= 5.0,
        format!("{} chains, chi2 = {stat:.1} on {df} df, p = {p_value:.3}, min expected count {min_expected:.0}", chains.len()),
    )
}

fn determinism() -> Outcome {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut checked = 0;
    for name in ["smoke.toml", "corridor.toml", "scaling.toml"] {
        let mut config = ExperimentConfig::load(&root.join(name)).map_err(|e| e.to_string())?;
        if name == "scaling.toml" {
            config.k_grid.truncate(2);
            config.seeds.truncate(3);
        }
        let first = Instance::build(&config).and_then(|i| run_experiment(&config, &i, None)).and_then(|r| results_csv(&r));
        let second = Instance::build(&config).and_then(|i| run_experiment(&config, &i, None)).and_then(|r| results_csv(&r));
        let (first, second) = (first.map_err(|e| e.to_string())?, second.map_err(|e| e.to_string())?);
        if first != second {
            return Err(format!("{name}: rows differ between runs"));
        }
        checked += first.lines().count() - 1;
    }
    verdict(true, format!("{checked} rows from 3 configs reproduced byte for byte"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("identity suite", identities),
        ("oracle equivalence", oracle_equivalence),
        ("actor regret bound", actor_regret),
        ("decoupling margin", decoupling_margin),
        ("coverage containments", coverage_containments),
        ("scaling experiment", scaling),
        ("posterior sanity", posterior_sanity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {} {name}: {detail}", n + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
