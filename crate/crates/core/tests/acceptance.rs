//! Acceptance gate for the crate: numbered end-to-end criteria, each
//! printing one PASS/FAIL line (run with `--nocapture` to see the lines
//! for passing tests). Criteria 1-10 are hard gates; criterion 11 is an
//! informational trend check on the continuous domains and never fails.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use diverse_exploration::env::gridworld::{self, GridWorld, ACTION_DIAG, N_ACTIONS, N_STATES};
use diverse_exploration::env::Domain;
use diverse_exploration::exec;
use diverse_exploration::harness::metrics::{iterations_to_optimal, unsafe_confirmations};
use diverse_exploration::harness::verify::{
    coverage_check, fdr_check, theorem2_max_delta, unbiasedness_check, COVERAGE_LIMIT, FDR_LIMIT,
    UNBIASEDNESS_Z_LIMIT,
};
use diverse_exploration::improve::{run_algo, Algo, ExperimentConfig, ExperimentRun};
use diverse_exploration::learn::{
    gen_candidate_policies, CandidateLearner, EsConfig, EsLearner, IterationGroup, LearnContext,
};
use diverse_exploration::mdp::{
    generate_trajectory, PolicyId, PolicyRef, State, TabularSoftmaxPolicy, Trajectory,
};
use diverse_exploration::ope::{bh_select, iw_returns, safety_test, t_p_value};
use diverse_exploration::theory::{verify_lemma1, verify_theorem1};

#[test]
fn criterion_01_census_finds_exactly_64_optimal_policies() {
    let census = gridworld::enumerate_family();
    let total: u64 = census.quality_counts.iter().map(|&(_, c)| c).sum::<u64>()
        + census.unreachable_count;
    let ok = census.optimal_count() == 64 && total == gridworld::FAMILY_SIZE;
    println!(
        "criterion 1: {} — census of {} deterministic interior policies found {} optimal (expected 64)",
        verdict(ok),
        total,
        census.optimal_count()
    );
    assert!(ok, "optimal = {}, total = {total}", census.optimal_count());
}

#[test]
fn criterion_02_allocation_distance_bound_is_exact() {
    let report = verify_lemma1(12, 4);
    let ok = report.mismatches == 0 && report.instances > 0;
    println!(
        "criterion 2: {} — brute-force max L1 distance matched the closed form on {} allocations",
        verdict(ok),
        report.instances
    );
    assert!(ok, "{} mismatches", report.mismatches);
}

#[test]
fn criterion_03_equal_allocation_beats_the_average_corner() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let reports = [
        verify_theorem1(6, 2, 3, 1000, &mut rng),
        verify_theorem1(6, 3, 3, 1000, &mut rng),
    ];
    let ok = reports.iter().all(|r| r.passed());
    println!(
        "criterion 3: {} — equal split within the average corner distance on {} random profiles \
         ({} violations, {} expectation mismatches)",
        verdict(ok),
        reports.iter().map(|r| r.trials).sum::<u32>(),
        reports.iter().map(|r| r.violations).sum::<u32>(),
        reports.iter().map(|r| r.expectation_mismatches).sum::<u32>(),
    );
    assert!(ok);
}

#[test]
fn criterion_04_mixture_variance_averages_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let max_delta = theorem2_max_delta(6, 2, 3, 500, &mut rng)
        .max(theorem2_max_delta(6, 3, 3, 500, &mut rng));
    let ok = max_delta <= 1e-12;
    println!(
        "criterion 4: {} — equal-split and averaged-corner variances agree to {max_delta:.1e} \
         over 1000 random profiles (limit 1e-12)",
        verdict(ok)
    );
    assert!(ok, "max delta = {max_delta:e}");
}

#[test]
fn criterion_05_importance_sampling_is_unbiased() {
    let report = unbiasedness_check(50_000, 0);
    let ok = report.passed();
    println!(
        "criterion 5: {} — importance-sampling mean {:.5} vs exact value {:.5} over {} draws \
         (z = {:.2}, limit {})",
        verdict(ok),
        report.is_mean,
        report.true_value,
        report.samples,
        report.z,
        UNBIASEDNESS_Z_LIMIT
    );
    assert!(ok, "z = {}", report.z);
}

#[test]
fn criterion_06_lower_bound_coverage_holds() {
    let report = coverage_check(10_000, 32, 0.05, 1);
    let ok = report.passed();
    println!(
        "criterion 6: {} — lower-bound violation rate {:.4} over {} trials (limit {})",
        verdict(ok),
        report.rate,
        report.trials,
        COVERAGE_LIMIT
    );
    assert!(ok, "rate = {}", report.rate);
}

#[test]
fn criterion_07_false_discovery_rate_is_controlled() {
    let report = fdr_check(10_000, 0.05, 2);
    let ok = report.passed();
    println!(
        "criterion 7: {} — mean false discovery proportion {:.4} over {} trials (limit {:.2})",
        verdict(ok),
        report.mean_fdp,
        report.trials,
        FDR_LIMIT
    );
    assert!(ok, "mean fdp = {}", report.mean_fdp);
}

#[test]
fn criterion_08_diverse_deployment_beats_the_single_candidate_baseline() {
    let runs = paired_grid_runs();
    let mut wins = 0;
    let (mut de_agg, mut spi_agg, mut de_ent, mut spi_ent) = (0.0f64, 0.0, 0.0, 0.0);
    let mut optimal_pairs: Vec<(u32, u32)> = Vec::new();
    for (de, spi) in runs {
        let d: f64 = de.records.iter().map(|r| r.mean_return).sum();
        let s: f64 = spi.records.iter().map(|r| r.mean_return).sum();
        if d > s {
            wins += 1;
        }
        de_agg += d;
        spi_agg += s;
        de_ent += de.records.last().unwrap().joint_entropy;
        spi_ent += spi.records.last().unwrap().joint_entropy;
        if let (Some(a), Some(b)) = (iterations_to_optimal(de), iterations_to_optimal(spi)) {
            optimal_pairs.push((a, b));
        }
    }
    let n = runs.len() as f64;
    let (de_agg, spi_agg, de_ent, spi_ent) =
        (de_agg / n, spi_agg / n, de_ent / n, spi_ent / n);

    let a_ok = de_agg >= spi_agg && wins >= 7;
    let b_ok = de_ent > spi_ent;
    let c_summary;
    let c_ok = if optimal_pairs.is_empty() {
        c_summary = "no run pair where both confirmed an optimal policy".to_string();
        true
    } else {
        let de_mean: f64 = optimal_pairs.iter().map(|p| f64::from(p.0)).sum::<f64>()
            / optimal_pairs.len() as f64;
        let spi_mean: f64 = optimal_pairs.iter().map(|p| f64::from(p.1)).sum::<f64>()
            / optimal_pairs.len() as f64;
        c_summary = format!(
            "iterations to an optimal policy {de_mean:.1} vs {spi_mean:.1} over {} pairs",
            optimal_pairs.len()
        );
        de_mean <= spi_mean
    };
    let ok = a_ok && b_ok && c_ok;
    println!(
        "criterion 8: {} — (a) mean aggregate return {de_agg:.3} vs {spi_agg:.3} with {wins}/10 \
         paired wins; (b) final joint entropy {de_ent:.3} vs {spi_ent:.3}; (c) {c_summary}",
        verdict(ok)
    );
    assert!(
        a_ok,
        "aggregate return: {de_agg:.3} vs {spi_agg:.3}, {wins}/10 wins"
    );
    assert!(b_ok, "final joint entropy: {de_ent:.3} vs {spi_ent:.3}");
    assert!(c_ok, "{c_summary}");
}

#[test]
fn criterion_09_certified_baselines_rarely_lie() {
    let runs = paired_grid_runs();
    let spec = GridWorld::mdp_spec();
    let value_of = |p: &PolicyRef| gridworld::exact_policy_value(p.as_ref(), &spec);
    let mut total = 0usize;
    let mut bad = 0u32;
    for (de, spi) in runs {
        for run in [de, spi] {
            total += run.confirmations.len();
            bad += unsafe_confirmations(run, &value_of);
        }
    }
    // One-sided binomial slack (normal approximation, 95%) on top of the
    // nominal rate for the observed number of certificates.
    let slack = 1.645 * (0.05f64 * 0.95 / total as f64).sqrt();
    let rate = if total == 0 {
        0.0
    } else {
        f64::from(bad) / total as f64
    };
    let ok = total > 0 && rate <= 0.05 + slack;
    println!(
        "criterion 9: {} — {bad} of {total} certified confirmations fell below their baseline \
         (rate {rate:.4}, limit {:.4})",
        verdict(ok),
        0.05 + slack
    );
    assert!(ok, "rate = {rate:.4} over {total} confirmations");
}

#[test]
fn criterion_10_single_candidate_mode_reduces_structurally() {
    let env = GridWorld::new();
    let spec = GridWorld::mdp_spec();
    let uniform: PolicyRef = Arc::new(TabularSoftmaxPolicy::uniform(
        PolicyId(0),
        N_STATES,
        N_ACTIONS,
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let trajs: Vec<Trajectory> = (0..12)
        .map(|_| generate_trajectory(&env, uniform.as_ref(), &mut rng, &spec))
        .collect();
    let data = vec![IterationGroup {
        iter: 1,
        trajs: trajs.clone(),
    }];
    let behaviors: HashMap<PolicyId, PolicyRef> =
        HashMap::from([(PolicyId(0), uniform.clone())]);
    let ctx = LearnContext {
        spec: &spec,
        behaviors: &behaviors,
        reference: &uniform,
    };
    let learner = EsLearner {
        config: EsConfig {
            n_states: N_STATES,
            n_actions: N_ACTIONS,
            population: 6,
            generations: 4,
            step_size: 0.5,
            temperature: 1.0,
        },
    };

    // With one candidate requested, exactly one policy comes back, trained
    // on the full batch with the seed drawn from the generation stream.
    let mut gen_rng = ChaCha8Rng::seed_from_u64(29);
    let mut replica_rng = gen_rng.clone();
    let mut next_id = 10;
    let candidates =
        gen_candidate_policies(&data, 1, &learner, &ctx, 0.3, &mut gen_rng, &mut next_id)
            .unwrap();
    let single = candidates.len() == 1;
    let _bootstrap_seed: u64 = replica_rng.random();
    let train_seed: u64 = replica_rng.random();
    let direct = learner
        .learn(&data, &ctx, train_seed, PolicyId(10))
        .unwrap();
    let full_batch = single && candidates[0].table == direct;

    // The deployed policy is the learned table anchored to the reference:
    // 0.7 * learned + 0.3 * uniform at every state.
    let learned = candidates[0].table.to_policy();
    let mut mixture = true;
    for s in 0..N_STATES as u32 {
        let state = State::Discrete(s);
        let got = candidates[0].policy.action_probabilities(&state);
        let raw = learned.action_probabilities(&state);
        for (g, r) in got.iter().zip(&raw) {
            let want = 0.7 * r + 0.3 / N_ACTIONS as f64;
            if (g - want).abs() > 1e-12 {
                mixture = false;
            }
        }
    }
    let lineage = candidates[0].mix_alpha == 0.3
        && candidates[0].base_id == Some(PolicyId(0))
        && next_id == 12;

    // A single-candidate safety test is one level-delta t-test: the
    // verdict flips exactly where the one-sided p-value crosses delta.
    let mut diag_prefs = vec![0.0; N_STATES * N_ACTIONS];
    for s in 0..N_STATES {
        diag_prefs[s * N_ACTIONS + ACTION_DIAG] = 1.0;
    }
    let target: PolicyRef = Arc::new(TabularSoftmaxPolicy::new(
        PolicyId(7),
        N_STATES,
        N_ACTIONS,
        diag_prefs,
        1.0,
    ));
    let mut t_test_equivalent = true;
    let mut verdict_split = (0u32, 0u32);
    for (i, rho) in [0.1, 0.3, 0.45, 0.6, 0.8, 0.95].into_iter().enumerate() {
        let delta = if i % 2 == 0 { 0.05 } else { 0.2 };
        let report =
            safety_test(std::slice::from_ref(&target), &trajs, &behaviors, &spec, delta, rho).unwrap();
        let values: Vec<f64> = iw_returns(&trajs, target.as_ref(), &behaviors, &spec)
            .unwrap()
            .iter()
            .map(|r| r.value)
            .collect();
        let expect = t_p_value(&values, rho).unwrap() <= delta;
        if report.verdicts.len() != 1 || report.verdicts[0].confirmed != expect {
            t_test_equivalent = false;
        }
        if expect {
            verdict_split.0 += 1;
        } else {
            verdict_split.1 += 1;
        }
        let alone = bh_select(&[report.verdicts[0].p_value], delta).unwrap();
        if alone.is_empty() == expect {
            t_test_equivalent = false;
        }
    }
    // The sweep genuinely exercises both outcomes.
    let both_sides = verdict_split.0 > 0 && verdict_split.1 > 0;

    let ok = single && full_batch && mixture && lineage && t_test_equivalent && both_sides;
    println!(
        "criterion 10: {} — one candidate from the full batch, anchored as a 0.7/0.3 mixture, \
         and the batch safety test degenerates to a single t-test ({} confirmations, {} \
         rejections in the sweep)",
        verdict(ok),
        verdict_split.0,
        verdict_split.1
    );
    assert!(single, "expected exactly one candidate");
    assert!(full_batch, "single candidate must be trained on the full batch");
    assert!(mixture, "deployed policy is not the documented mixture");
    assert!(lineage, "candidate lineage fields are wrong");
    assert!(t_test_equivalent, "single-candidate test differs from a t-test");
    assert!(both_sides, "sweep never flipped the verdict");
}

#[test]
fn criterion_11_continuous_domains_trend_upward() {
    let mut lines = Vec::new();
    for (domain, d, n, r) in [
        (Domain::MountainCar, 8u32, 40usize, 3usize),
        (Domain::Acrobot, 5, 24, 2),
    ] {
        let mut cfg = ExperimentConfig::defaults(domain);
        cfg.d = d;
        cfg.n = n;
        cfg.r = r;
        cfg.seed = 0;
        let run = run_algo(&cfg, Algo::De).unwrap();
        let means: Vec<f64> = run.records.iter().map(|rec| rec.mean_return).collect();
        let smoothed: Vec<f64> = means
            .windows(3)
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect();
        let trend_ok = smoothed.windows(2).all(|w| w[1] >= w[0] - 0.02);
        lines.push(format!(
            "{}: smoothed returns [{}] {}",
            match domain {
                Domain::MountainCar => "mountain car",
                Domain::Acrobot => "acrobot",
                Domain::GridWorld => unreachable!(),
            },
            smoothed
                .iter()
                .map(|v| format!("{v:.3}"))
                .collect::<Vec<_>>()
                .join(", "),
            if trend_ok {
                "hold a non-decreasing trend"
            } else {
                "dip along the way"
            }
        ));
    }
    // Informational only: fitted-Q runs at desk scale are noisy, so the
    // trend is reported but never gates the suite.
    println!("criterion 11: INFO — {}", lines.join("; "));
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Ten paired seeded grid-domain runs at the default experiment scale,
/// shared between the comparison and safety criteria.
fn paired_grid_runs() -> &'static [(ExperimentRun, ExperimentRun)] {
    static RUNS: OnceLock<Vec<(ExperimentRun, ExperimentRun)>> = OnceLock::new();
    RUNS.get_or_init(|| {
        exec::map_collect_indexed(10, |seed| {
            let mut cfg = ExperimentConfig::defaults(Domain::GridWorld);
            cfg.seed = seed as u64;
            (
                run_algo(&cfg, Algo::De).unwrap(),
                run_algo(&cfg, Algo::Spi).unwrap(),
            )
        })
    })
}
