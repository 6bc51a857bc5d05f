//! Cross-module properties of the estimators and detectors.

use proptest::prelude::*;
use rand::Rng;
use rdcusum::evaluation::{
    estimate_far, estimate_pdc_direct, estimate_pdc_renewal, estimate_wadd, run_trials,
    ChangePoint, ExperimentConfig,
};
use rdcusum::rng::stream_rng;
use rdcusum::{
    mu_asymptotic, run_detector, threshold_for_far, wadd_lower_bound, Family64, Law64, Params32,
    Params64,
};

fn gauss(m: f64) -> Law64 {
    Law64::gaussian(m).unwrap()
}

fn config(params: Params64, g: Law64, change: ChangePoint, trials: usize, steps: u64, seed: u64) -> ExperimentConfig {
    ExperimentConfig::new(
        gauss(0.0),
        Family64::GaussianMeanAtLeast(0.5),
        g,
        params,
        change,
        trials,
        steps,
        seed,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stop_times_nondecreasing_in_threshold(seed in any::<u64>(), a in 0.0f64..4.0, da in 0.0f64..3.0, kind in 0usize..3) {
        let params = match kind {
            0 => Params64::robust_cusum(a).unwrap(),
            1 => Params64::rde_cusum(a, 0.125, 10.0).unwrap(),
            _ => Params64::fractional_sampling(a, 0.5).unwrap(),
        };
        let lo = config(params, gauss(1.0), ChangePoint::Never, 40, 1_000_000, seed);
        let hi = lo.with_threshold(a + da).unwrap();
        let (t_lo, t_hi) = (run_trials(&lo, &[]).unwrap(), run_trials(&hi, &[]).unwrap());
        for (x, y) in t_lo.iter().zip(&t_hi) {
            prop_assert!(x.stop_time.unwrap() <= y.stop_time.unwrap());
        }
    }

    #[test]
    fn trial_records_are_consistent(seed in any::<u64>(), nu in 1u64..200) {
        let params = Params64::rde_cusum(5.0, 0.125, 10.0).unwrap();
        let cfg = config(params, gauss(1.0), ChangePoint::At(nu), 30, 100_000, seed);
        for t in run_trials(&cfg, &[]).unwrap() {
            let stop = t.stop_time.unwrap();
            prop_assert!(t.samples_used_total <= stop);
            prop_assert!(t.samples_used_prechange <= t.samples_used_total);
            prop_assert!(t.samples_used_prechange < nu);
            if let Some(u) = t.undershoot_at_first_negative {
                prop_assert!(u > 0.0 && u <= 10.0);
            }
        }
    }

    #[test]
    fn f32_and_f64_detectors_agree_on_coarse_llrs(steps in prop::collection::vec(-8i32..8, 1..200)) {
        // Multiples of 1/8 are exact in both precisions.
        let z64: Vec<f64> = steps.iter().map(|&k| k as f64 / 8.0).collect();
        let t64 = run_detector(Params64::rde_cusum(3.0, 0.25, 2.0).unwrap(), z64.iter().map(|&z| (0.0, z)), u64::MAX).unwrap();
        let t32 = run_detector(Params32::rde_cusum(3.0, 0.25, 2.0).unwrap(), z64.iter().map(|&z| (0.0f32, z as f32)), u64::MAX).unwrap();
        prop_assert_eq!(t64.stop_time, t32.stop_time);
        prop_assert_eq!(t64.samples_used, t32.samples_used);
        for (a, b) in t64.outcomes.iter().zip(&t32.outcomes) {
            prop_assert_eq!(a.sampled, b.sampled);
            prop_assert_eq!(a.statistic_after, b.statistic_after as f64);
        }
    }
}

#[test]
fn pdc_direct_bounds_per_kind() {
    let mu = mu_asymptotic(0.5, &gauss(0.0), &gauss(0.5)).unwrap();
    let robust = config(Params64::robust_cusum(12.0).unwrap(), gauss(1.0), ChangePoint::Never, 150, 5000, 3);
    assert_eq!(estimate_pdc_direct(&robust).unwrap().estimate.value, 1.0);
    let rde = config(Params64::rde_cusum(8.0, mu, 10.0).unwrap(), gauss(1.0), ChangePoint::Never, 200, 5000, 3);
    let est = estimate_pdc_direct(&rde).unwrap();
    assert!(est.estimate.value > 0.0 && est.estimate.value <= 1.0);
    // Asymptotic duty cycle at beta = 0.5 is 1/2.
    assert!(est.estimate.value <= 0.5 + 0.05, "{}", est.estimate.value);
}

#[test]
fn skipping_never_raises_the_far() {
    let a = threshold_for_far(0.01).unwrap();
    let robust = config(Params64::robust_cusum(a).unwrap(), gauss(1.0), ChangePoint::Never, 2000, 10_000_000, 11);
    let rde = robust.with_params(Params64::rde_cusum(a, 0.125, 10.0).unwrap());
    let (r, d) = (estimate_far(&robust).unwrap(), estimate_far(&rde).unwrap());
    assert!(d.far.value <= r.far.value + r.far.ci_halfwidth + d.far.ci_halfwidth);
    // Both respect the FAR budget that fixed A.
    assert!(r.far.value <= 0.01 + r.far.ci_halfwidth);
}

#[test]
fn delay_at_the_lfl_respects_the_lower_bound() {
    // Checked for RDE-CUSUM only: at this threshold the plain robust CUSUM
    // detects faster than |ln α̂|/KL, the bound being first order only.
    let gbar = gauss(0.5);
    for (params, seed) in [
        (Params64::rde_cusum(4.0, 0.125, 10.0).unwrap(), 6u64),
        (Params64::rde_cusum(6.0, 0.125, 10.0).unwrap(), 7),
    ] {
        let far_cfg = config(params, gbar, ChangePoint::Never, 1000, 10_000_000, seed);
        let far = estimate_far(&far_cfg).unwrap();
        let delay = estimate_wadd(&far_cfg.with_change_point(ChangePoint::At(1)).with_trials(1000, 100_000)).unwrap();
        let bound = wadd_lower_bound(far.far.value, &gbar, &gauss(0.0)).unwrap();
        assert!(delay.worst_case.value >= 0.75 * bound, "{} vs {bound}", delay.worst_case.value);
    }
}

#[test]
fn estimates_are_bit_for_bit_deterministic() {
    let params = Params64::rde_cusum(4.0, 0.125, 10.0).unwrap();
    let cfg = config(params, gauss(1.0), ChangePoint::Never, 300, 1_000_000, 99);
    assert_eq!(estimate_far(&cfg).unwrap(), estimate_far(&cfg).unwrap());
    let d = cfg.with_change_point(ChangePoint::At(1)).with_trials(300, 100_000);
    assert_eq!(estimate_wadd(&d).unwrap(), estimate_wadd(&d).unwrap());
    let r1 = estimate_pdc_renewal(&gauss(0.0), &gauss(0.5), &params, 5000, 4).unwrap();
    let r2 = estimate_pdc_renewal(&gauss(0.0), &gauss(0.5), &params, 5000, 4).unwrap();
    assert_eq!(r1, r2);
}

#[test]
fn streams_differ_across_indices_and_purposes() {
    let draws = |p: u64, i: u64| -> Vec<u64> {
        let mut r = stream_rng(1, p, i);
        (0..4).map(|_| r.random()).collect()
    };
    assert_ne!(draws(1, 0), draws(1, 1));
    assert_ne!(draws(1, 0), draws(2, 0));
    assert_eq!(draws(3, 7), draws(3, 7));
}
