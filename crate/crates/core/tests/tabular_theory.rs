use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srm_core::env::fixtures;
use srm_core::tabular::{
    self, bilevel_train, exact_return_distribution, h_for_law, npg_inner_loop, oracle,
    perf_diff_check, quantile_condition_violations, BilevelConfig, ExtendedMdp, SoftmaxPolicy,
    StepSchedule,
};
use srm_core::RiskSpectrum;

const SPECTRA: [&str; 6] = ["neutral", "cvar:0.2", "cvar:0.5", "mc:0.3,0.5", "exp:3", "wang:0.75"];

fn extended() -> Vec<(&'static str, ExtendedMdp)> {
    fixtures::all()
        .into_iter()
        .map(|(name, mdp)| (name, ExtendedMdp::new(mdp).unwrap()))
        .collect()
}

fn random_policy(ext: &ExtendedMdp, rng: &mut ChaCha8Rng) -> SoftmaxPolicy {
    SoftmaxPolicy {
        logits: (0..ext.num_nodes())
            .map(|_| (0..ext.num_actions()).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect(),
    }
}

#[test]
fn bilevel_objective_is_monotone() {
    for (name, ext) in extended() {
        for spec in SPECTRA {
            let spectrum: RiskSpectrum = spec.parse().unwrap();
            let res = bilevel_train(&ext, &spectrum, &BilevelConfig::default()).unwrap();
            assert_eq!(res.objective_history.len(), 21);
            for w in res.objective_history.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "{name} {spec}: {:?}", res.objective_history);
            }
        }
    }
}

#[test]
fn npg_reaches_deterministic_optimum() {
    for (name, ext) in extended() {
        let uniform = SoftmaxPolicy::uniform(&ext);
        let law = exact_return_distribution(&ext, &uniform).unwrap();
        for spec in SPECTRA {
            let h = h_for_law(&spec.parse().unwrap(), &law.initial, 50).unwrap();
            let (best, _) = oracle::best_deterministic(&ext, &h).unwrap();
            let (_, hist) =
                npg_inner_loop(&ext, &uniform, &h, StepSchedule::RobbinsMonro(0.5), 2000).unwrap();
            let last = *hist.last().unwrap();
            assert!(best - last < 1e-3, "{name} {spec}: {last} vs {best}");
            assert!(last <= best + 1e-12);
        }
    }
}

#[test]
fn neutral_npg_matches_value_iteration() {
    for (name, mdp) in fixtures::all() {
        let optimum = oracle::value_iteration(&mdp);
        let ext = ExtendedMdp::new(mdp).unwrap();
        let res = bilevel_train(&ext, &RiskSpectrum::neutral(), &BilevelConfig::default()).unwrap();
        let mean = tabular::law_mean(&res.final_law.initial);
        assert!((mean - optimum).abs() < 1e-3, "{name}: {mean} vs {optimum}");
    }
}

#[test]
fn performance_difference_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (name, ext) in extended() {
        for pair in 0..20 {
            let pi = random_policy(&ext, &mut rng);
            let pi_new = random_policy(&ext, &mut rng);
            let spectrum: RiskSpectrum = SPECTRA[pair % SPECTRA.len()].parse().unwrap();
            let law = exact_return_distribution(&ext, &random_policy(&ext, &mut rng)).unwrap();
            let h = h_for_law(&spectrum, &law.initial, 50).unwrap();
            let (lhs, rhs) = perf_diff_check(&ext, &pi, &pi_new, &h).unwrap();
            assert!((lhs - rhs).abs() <= 1e-8, "{name} pair {pair}: {lhs} vs {rhs}");
        }
    }
}

#[test]
fn converged_h_breakpoints_are_quantiles() {
    for (name, ext) in extended() {
        for spec in SPECTRA {
            let spectrum: RiskSpectrum = spec.parse().unwrap();
            let res = bilevel_train(&ext, &spectrum, &BilevelConfig::default()).unwrap();
            let bad = quantile_condition_violations(&res.last_h, &res.final_law.initial, 1e-9);
            assert!(bad.is_empty(), "{name} {spec}: {bad:?}");
        }
    }
}

#[test]
fn bandit_arm_choice_by_risk() {
    let ext = ExtendedMdp::new(fixtures::bandit()).unwrap();
    let cvar = bilevel_train(&ext, &RiskSpectrum::cvar(0.5).unwrap(), &BilevelConfig::default()).unwrap();
    assert!(tabular::initial_action_prob(&ext, &cvar.policy, 1) >= 0.99);
    let neutral = bilevel_train(&ext, &RiskSpectrum::neutral(), &BilevelConfig::default()).unwrap();
    assert!(tabular::initial_action_prob(&ext, &neutral.policy, 0) >= 0.99);
}
