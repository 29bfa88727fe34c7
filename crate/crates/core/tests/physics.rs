use proptest::prelude::*;
use qwalk::analysis::{estimate_slope, fit_moment_forms, fit_power_law, locate_peaks, sweep_row};
use qwalk::oracle::{enumerate_sequences, exact_ensemble, oracle_config};
use qwalk::walk::evolve;
use qwalk::{run_ensemble, CoinOperator, InitialSpinor, Quantity, RunConfig, StepSchedule};

#[test]
fn hadamard_peaks_without_central_bump() {
    let t = 1024;
    let cfg = RunConfig::new(StepSchedule::constant(1).unwrap(), t)
        .with_realizations(1)
        .with_snapshots(vec![t]);
    let r = run_ensemble(&cfg).unwrap();
    let p = locate_peaks(&r.densities[0], 1.0).unwrap();
    let edge = t as f64 / 2f64.sqrt();
    assert!((p.right_peak_x as f64 / edge - 1.0).abs() < 0.05, "{p:?}");
    assert!((p.left_peak_x as f64 / -edge - 1.0).abs() < 0.05, "{p:?}");
    assert!(p.central_peak_height < p.plateau_height, "{p:?}");
}

#[test]
fn random_walk_grows_a_central_peak() {
    let t = 512;
    let cfg = RunConfig::new(StepSchedule::random(0.5, 1).unwrap(), t)
        .with_realizations(100)
        .with_snapshots(vec![t]);
    let p = locate_peaks(&run_ensemble(&cfg).unwrap().densities[0], 0.5).unwrap();
    assert!(p.central_peak_height > 1.2 * p.plateau_height, "{p:?}");
}

#[test]
fn symmetric_spinor_gives_mirror_peaks() {
    let t = 512;
    let cfg = RunConfig::new(StepSchedule::random(0.5, 1).unwrap(), t)
        .with_realizations(60)
        .with_spinor(InitialSpinor::symmetric())
        .with_snapshots(vec![t]);
    let d = &run_ensemble(&cfg).unwrap().densities[0];
    for x in 0..=(2 * t as i64) {
        assert!((d.at(x) - d.at(-x)).abs() < 1e-12);
    }
    let p = locate_peaks(d, 0.5).unwrap();
    assert_eq!(p.left_peak_x, -p.right_peak_x);
}

#[test]
fn pure_walk_has_vanishing_decoherence_parameters() {
    let cfg = RunConfig::new(StepSchedule::random(1.0, 1).unwrap(), 2048)
        .with_realizations(1)
        .with_snapshots(vec![2048]);
    let r = run_ensemble(&cfg).unwrap();
    let f = fit_moment_forms(&r.moments, (64, 2048)).unwrap();
    assert!(f.b2.abs() < 0.01 * f.b1.abs(), "{f:?}");
    assert!(f.b4.abs() < 0.01 * f.b3.abs(), "{f:?}");
}

#[test]
fn near_pure_walk_still_bends_below_ballistic() {
    let cfg = RunConfig::new(StepSchedule::random(0.995, 1).unwrap(), 4096)
        .with_realizations(200)
        .with_snapshots(vec![4096]);
    let m = run_ensemble(&cfg).unwrap().moments;
    let early = estimate_slope(&m, Quantity::SecondMoment, (256, 512)).unwrap();
    let late = estimate_slope(&m, Quantity::SecondMoment, (2048, 4096)).unwrap();
    assert!(late < early && late < 1.75, "early {early}, late {late}");
}

/// Decoherence exponents near alpha = 1 and alpha = 0 agree.
#[test]
fn decoherence_exponent_is_symmetric_in_alpha() {
    let gaps = [0.1, 0.05, 0.02, 0.01, 0.005];
    let mut exps = Vec::new();
    for near_one in [true, false] {
        let mut b2 = Vec::new();
        let mut b4 = Vec::new();
        for &g in &gaps {
            let alpha = if near_one { 1.0 - g } else { g };
            let cfg = RunConfig::new(StepSchedule::random(alpha, 1).unwrap(), 2048)
                .with_realizations(200)
                .with_snapshots(vec![2048]);
            let row = sweep_row(alpha, &run_ensemble(&cfg).unwrap().moments).unwrap();
            b2.push((g, row.b2));
            b4.push((g, row.b4));
        }
        exps.push((fit_power_law(&b2).unwrap().exponent, fit_power_law(&b4).unwrap().exponent));
    }
    let (hi, lo) = (exps[0], exps[1]);
    assert!((hi.0 - lo.0).abs() < 0.15, "b2 exponents {hi:?} vs {lo:?}");
    assert!((hi.1 - lo.1).abs() < 0.15, "b4 exponents {hi:?} vs {lo:?}");
}

#[test]
fn constant_steps_rescale_exactly() {
    let spinor = InitialSpinor::asymmetric();
    let coin = CoinOperator::hadamard();
    for ell in [2usize, 4, 8] {
        let one = evolve(spinor, &coin, &[1; 64]).unwrap().occupation_window(64);
        let long = evolve(spinor, &coin, &vec![ell; 64]).unwrap().occupation_window(64 * ell);
        for x in -64i64..=64 {
            assert!((long.at(ell as i64 * x) - one.at(x)).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_ensemble_is_normalized(alpha in 0.0f64..=1.0, n in 1u32..=3, t in 1usize..=10) {
        let cfg = oracle_config(StepSchedule::random(alpha, n).unwrap(), t);
        let d = exact_ensemble(&cfg).unwrap();
        prop_assert!((d.total() - 1.0).abs() < 1e-10);
        let w: f64 = enumerate_sequences(alpha, n, t).unwrap().iter().map(|s| s.1).sum();
        prop_assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ensemble_norm_is_conserved(alpha in 0.0f64..=1.0, n in 1u32..=3, seed in any::<u64>()) {
        let cfg = RunConfig::new(StepSchedule::random(alpha, n).unwrap(), 64)
            .with_realizations(4)
            .with_seed(seed);
        let r = run_ensemble(&cfg).unwrap();
        prop_assert!(r.max_norm_drift < 1e-10);
        for d in &r.densities {
            prop_assert!((d.total() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn periodic_walks_stay_ballistic(a in 1usize..=4, b in 1usize..=8) {
        let cfg = RunConfig::new(StepSchedule::periodic(vec![a, b]).unwrap(), 512)
            .with_realizations(1)
            .with_snapshots(vec![512]);
        let m = run_ensemble(&cfg).unwrap().moments;
        let s = estimate_slope(&m, Quantity::SecondMoment, (64, 512)).unwrap();
        prop_assert!((s - 2.0).abs() < 0.1, "slope {}", s);
    }
}
