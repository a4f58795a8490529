use bandit_trials::arm::ArmState;
use bandit_trials::gittins::{compute_index_table, DpConfig, GittinsTable};
use bandit_trials::inference::{calibrate_critical_value, CriticalValue};
use bandit_trials::policy::{
    klu_score, policy_scores, tp_probabilities, ts_probabilities, ucb_score, Allocation, DecisionContext,
};
use bandit_trials::{
    aggregate, bias_trajectories, run_replicates, run_replicates_sequential, run_replicates_with, run_trial,
    PolicyKind, PolicySpec, RecordOptions, ReplicateSeed, TrialScenario,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

const T: usize = 60;

fn table() -> &'static GittinsTable {
    static TABLE: OnceLock<GittinsTable> = OnceLock::new();
    TABLE.get_or_init(|| compute_index_table(0.9, T, &DpConfig::default()).unwrap())
}

fn spec(kind: PolicyKind) -> PolicySpec {
    PolicySpec::new(kind).with_discount(0.9).with_ts_draws(200).with_batch(5)
}

fn scenario(kind: PolicyKind, means: &[f64]) -> TrialScenario {
    TrialScenario::new(means.to_vec(), 1.0, T, "prop", spec(kind))
}

fn table_for(kind: PolicyKind) -> Option<&'static GittinsTable> {
    kind.needs_table().then(table)
}

fn shifted(arms: &[ArmState], c: f64) -> Vec<ArmState> {
    arms.iter().map(|a| ArmState { sum: a.sum + c * a.n as f64, n: a.n }).collect()
}

const INDEX_RULES: [PolicyKind; 6] =
    [PolicyKind::Gi, PolicyKind::Ucb, PolicyKind::Klu, PolicyKind::Cb, PolicyKind::Rgi, PolicyKind::Rbi];

#[test]
fn index_scores_shift_by_the_added_constant() {
    let arms = [ArmState::with_mean(0.1, 5), ArmState::with_mean(-0.4, 3), ArmState::with_mean(0.7, 9)];
    let c = 1.25;
    let moved = shifted(&arms, c);
    for kind in INDEX_RULES {
        let ctx = |a| DecisionContext { arms: a, sigma: 1.0, patient: 18, trial_size: T, table: Some(table()) };
        let s0 = policy_scores(&spec(kind), &ctx(&arms), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let s1 = policy_scores(&spec(kind), &ctx(&moved), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let (Allocation::Scores(s0), Allocation::Scores(s1)) = (s0, s1) else { panic!("{kind} is not an index rule") };
        for (x, y) in s0.iter().zip(&s1) {
            assert!((y - x - c).abs() < 1e-12, "{kind}: {x} -> {y}");
        }
    }
}

#[test]
fn index_selections_are_shift_invariant() {
    let base = [0.0, 0.3, 0.5];
    let moved: Vec<f64> = base.iter().map(|m| m + 0.75).collect();
    for kind in INDEX_RULES {
        for r in 0..20 {
            let seed = ReplicateSeed::new(11, r);
            let a = run_trial(&scenario(kind, &base), table_for(kind), seed).unwrap();
            let b = run_trial(&scenario(kind, &moved), table_for(kind), seed).unwrap();
            assert_eq!(a.allocations, b.allocations, "{kind} replicate {r}");
        }
    }
}

#[test]
fn myopic_gittins_matches_current_belief() {
    let zero = compute_index_table(0.0, T, &DpConfig::default()).unwrap();
    let means = [0.0, 0.2, 0.4];
    for r in 0..20 {
        let seed = ReplicateSeed::new(3, r);
        let gi = TrialScenario::new(means.to_vec(), 1.0, T, "d0", PolicySpec::new(PolicyKind::Gi).with_discount(0.0));
        let cb = TrialScenario::new(means.to_vec(), 1.0, T, "d0", PolicySpec::new(PolicyKind::Cb));
        let a = run_trial(&gi, Some(&zero), seed).unwrap();
        let b = run_trial(&cb, None, seed).unwrap();
        assert_eq!(a.allocations, b.allocations, "replicate {r}");
    }
}

#[test]
fn ts_probabilities_ignore_a_common_shift() {
    let arms = [ArmState::with_mean(0.0, 6), ArmState::with_mean(0.3, 8), ArmState::with_mean(0.5, 4)];
    let draws = 4000;
    let p0 = ts_probabilities(&arms, 1.0, 30, T, draws, &mut ChaCha8Rng::seed_from_u64(9));
    let p1 = ts_probabilities(&shifted(&arms, -2.0), 1.0, 30, T, draws, &mut ChaCha8Rng::seed_from_u64(9));
    for (a, b) in p0.iter().zip(&p1) {
        let se = (a * (1.0 - a) / draws as f64).sqrt();
        assert!((a - b).abs() <= 3.0 * se + 1e-12, "{p0:?} vs {p1:?}");
    }
}

#[test]
fn unit_batches_reproduce_unbatched_rules() {
    let means = [0.0, 0.2, 0.5];
    for (batched, plain) in [(PolicyKind::Tsb, PolicyKind::Ts), (PolicyKind::Tpb, PolicyKind::Tp)] {
        for r in 0..10 {
            let seed = ReplicateSeed::new(21, r);
            let a = run_trial(&TrialScenario::new(means.to_vec(), 1.0, T, "b", spec(batched).with_batch(1)), None, seed)
                .unwrap();
            let b = run_trial(&TrialScenario::new(means.to_vec(), 1.0, T, "b", spec(plain)), None, seed).unwrap();
            assert_eq!(a.allocations, b.allocations, "{batched} replicate {r}");
        }
    }
}

#[test]
fn whole_trial_batch_allocates_like_fixed_randomization() {
    // With b = T no refresh happens, so a large effect must not tilt allocation.
    let means = [0.0, 3.0];
    let s = TrialScenario::new(means.to_vec(), 1.0, T, "bT", spec(PolicyKind::Tsb).with_batch(T));
    let recs = run_replicates(&s, None, 4, 400).unwrap();
    let share: f64 = recs.iter().map(|r| r.arm_final[1].n as f64 / T as f64).sum::<f64>() / recs.len() as f64;
    let se = (0.25 / (T as f64 * recs.len() as f64)).sqrt();
    assert!((share - 0.5).abs() < 4.0 * se, "share {share}");
}

#[test]
fn every_rule_conserves_patients_and_tracks_means() {
    let means = [0.0, 0.178, 0.178, 0.545];
    for kind in PolicyKind::ALL {
        let s = scenario(kind, &means);
        let recs = run_replicates_with(&s, table_for(kind), 8, 5, RecordOptions { keep_trajectory: true }).unwrap();
        for rec in &recs {
            assert_eq!(rec.arm_final.iter().map(|a| a.n).sum::<usize>(), T, "{kind}");
            assert!(rec.arm_final.iter().all(|a| a.n >= 1), "{kind}");
            for (k, arm) in rec.arm_final.iter().enumerate() {
                let ys: Vec<f64> =
                    rec.allocations.iter().zip(&rec.outcomes).filter(|(a, _)| **a == k).map(|(_, y)| *y).collect();
                let direct = ys.iter().sum::<f64>() / ys.len() as f64;
                let tracked = arm.mean().unwrap();
                assert!((direct - tracked).abs() <= 1e-12 * direct.abs().max(1.0), "{kind} arm {k}");
                let last = rec.mean_trajectory.as_ref().unwrap()[k][T - 1];
                assert!((last - tracked).abs() <= 1e-12 * tracked.abs().max(1.0));
            }
        }
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let means = [0.0, 0.2, 0.4];
    for kind in [PolicyKind::Ts, PolicyKind::Rgi, PolicyKind::Cg, PolicyKind::Tpb] {
        let s = scenario(kind, &means);
        let run_on = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_replicates(&s, table_for(kind), 99, 24).unwrap())
        };
        let one = run_on(1);
        assert_eq!(one, run_on(4), "{kind}");
        assert_eq!(one, run_replicates_sequential(&s, table_for(kind), 99, 24).unwrap(), "{kind}");
    }
}

#[test]
fn single_replicate_matches_direct_trial() {
    let s = scenario(PolicyKind::Klu, &[0.0, 0.3]);
    let recs = run_replicates(&s, None, 123, 1).unwrap();
    assert_eq!(recs[0], run_trial(&s, None, ReplicateSeed::new(123, 0)).unwrap());
}

#[test]
fn fixed_randomization_under_null_is_unbiased_and_balanced() {
    let s = TrialScenario::new(vec![0.0; 3], 1.0, 90, "H0", PolicySpec::new(PolicyKind::Fr));
    let m = 2000;
    let recs = run_replicates_with(&s, None, 17, m, RecordOptions { keep_trajectory: true }).unwrap();
    for k in 0..3 {
        let mean_xbar: f64 = recs.iter().map(|r| r.arm_final[k].mean().unwrap()).sum::<f64>() / m as f64;
        let mean_n: f64 = recs.iter().map(|r| r.arm_final[k].n as f64).sum::<f64>() / m as f64;
        assert!(mean_xbar.abs() < 3.0 / (mean_n * m as f64).sqrt(), "arm {k}: {mean_xbar}");
    }
    let oc = aggregate(&recs, &s, &CriticalValue::fixed(2.0, 0.05)).unwrap();
    assert!((oc.e_pstar - 1.0 / 3.0).abs() < 3.0 * oc.sd_pstar / (m as f64).sqrt());
    for tr in bias_trajectories(&recs, &s).unwrap() {
        for (b, se) in tr.mean_bias.iter().zip(&tr.std_error) {
            assert!(b.abs() < 4.0 * se, "arm {} bias {b} se {se}", tr.arm);
        }
    }
}

#[test]
fn outcome_lies_between_worst_and_best_arm() {
    let means = [0.0, 0.178, 0.545];
    for kind in [PolicyKind::Fr, PolicyKind::Gi, PolicyKind::Ucb, PolicyKind::Tp] {
        let s = scenario(kind, &means);
        let recs = run_replicates(&s, table_for(kind), 5, 200).unwrap();
        let oc = aggregate(&recs, &s, &CriticalValue::fixed(2.0, 0.05)).unwrap();
        let se = oc.sd_outcome / (oc.replicates as f64).sqrt();
        assert!(oc.e_outcome <= oc.upper_bound_outcome + 3.0 * se, "{kind}");
        assert!(oc.e_outcome >= 0.0 - 3.0 * se, "{kind}");
        for rate in [oc.rejection_rate, oc.global_rejection_rate, oc.e_pstar] {
            assert!((0.0..=1.0).contains(&rate));
        }
    }
}

#[test]
fn aggregate_ignores_record_order() {
    let s = scenario(PolicyKind::Ts, &[0.0, 0.5]);
    let recs = run_replicates(&s, None, 77, 50).unwrap();
    let c = CriticalValue::fixed(1.7, 0.05);
    let fwd = aggregate(&recs, &s, &c).unwrap();
    let mut rev = recs.clone();
    rev.reverse();
    rev.swap(3, 17);
    let back = aggregate(&rev, &s, &c).unwrap();
    assert_eq!(fwd.rejection_rate, back.rejection_rate);
    for (a, b) in [(fwd.e_pstar, back.e_pstar), (fwd.sd_pstar, back.sd_pstar), (fwd.e_outcome, back.e_outcome), (fwd.sd_outcome, back.sd_outcome)] {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn calibrated_design_holds_its_level_on_fresh_seeds() {
    let s = TrialScenario::new(vec![0.0; 2], 1.0, 40, "H0", PolicySpec::new(PolicyKind::Cb));
    let alpha = 0.05;
    let cal = calibrate_critical_value(&s, None, 1, 4000, alpha).unwrap();
    let m = 4000;
    let fresh = run_replicates(&s, None, 2, m).unwrap();
    let oc = aggregate(&fresh, &s, &cal.critical).unwrap();
    let bound = alpha + 3.0 * (alpha * (1.0 - alpha) / m as f64).sqrt();
    assert!(oc.global_rejection_rate <= bound, "{} > {bound}", oc.global_rejection_rate);
}

#[test]
fn gittins_table_is_positive_and_decreasing() {
    let v = table().values();
    assert!(v.iter().all(|&x| x > 0.0));
    assert!(v.windows(2).all(|w| w[1] < w[0]));
}

proptest! {
    #[test]
    fn optimism_bonus_shrinks_with_more_data(mean in -3.0f64..3.0, n in 1usize..500, t in 3usize..1000, sigma in 0.1f64..5.0) {
        let a = ArmState::with_mean(mean, n);
        let b = ArmState::with_mean(mean, n + 1);
        prop_assert!(ucb_score(&b, sigma, t) < ucb_score(&a, sigma, t));
        if t >= 16 {
            prop_assert!(klu_score(&b, sigma, t) < klu_score(&a, sigma, t));
        }
    }

    #[test]
    fn randomized_rules_return_distributions(
        means in proptest::collection::vec(-2.0f64..2.0, 3..6),
        ns in proptest::collection::vec(1usize..40, 6),
        allocated in 0usize..T,
        seed in any::<u64>(),
    ) {
        let arms: Vec<ArmState> = means.iter().zip(&ns).map(|(&m, &n)| ArmState::with_mean(m, n)).collect();
        let ts = ts_probabilities(&arms, 1.0, allocated, T, 100, &mut ChaCha8Rng::seed_from_u64(seed));
        let tp = tp_probabilities(&arms, 1.0, allocated, T).unwrap();
        for p in [ts, tp] {
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
