//! Monte Carlo oracles: each estimator against a closed form or an
//! independent estimator, at a 3 or 4 standard-error band.

use levy_bismut::convergence::{contraction_curve, predicted_rate, tv_decay_experiment, tv_lower_bound};
use levy_bismut::girsanov::{reweight_check, z_moment_sweep, GirsanovScenario};
use levy_bismut::malliavin::{
    bismut_gradient, gradient_estimates, ibp_check, martingale_weight, p1_semigroup, PerturbationField,
};
use levy_bismut::{DriftField, HVector, JumpDensity, McRunner, SpectralModel, System, TestFunction};

fn model4() -> SpectralModel {
    SpectralModel::fractional(vec![1.0, 2.0, 3.0, 4.0], 0.25).unwrap()
}

fn e1(d: usize) -> HVector {
    let mut v = HVector::zeros(d);
    v[0] = 1.0;
    v
}

fn tilted(d: usize) -> JumpDensity {
    JumpDensity::tilted_sine(2.0, 0.5, e1(d)).unwrap()
}

fn constant() -> JumpDensity {
    JumpDensity::constant(2.0).unwrap()
}

fn tanh(d: usize) -> DriftField {
    DriftField::random_tanh(d, 0.3, 7).unwrap()
}

fn runner() -> McRunner {
    McRunner::new(42, 1).unwrap()
}

fn v4() -> HVector {
    HVector::from_vec(vec![0.6, -0.3, 0.5, 0.2])
}

#[test]
fn martingale_weight_has_mean_zero() {
    let r = runner();
    for density in [constant(), tilted(4)] {
        let sys = System::new(model4(), density, DriftField::Zero).unwrap();
        let v = PerturbationField::ConstantDir(v4());
        let est = r
            .estimate("martingale-mean", 100_000, 1, |_, rng, out| {
                let path = sys.sample_path(1.0, rng)?;
                out[0] = martingale_weight(&sys, &path, None, &v, 1.0)?;
                Ok(())
            })
            .unwrap()[0];
        assert!(est.consistent_with(0.0, 3.0), "{est:?}");
    }
}

#[test]
fn ibp_constant_function_gives_zero_on_both_sides() {
    let sys = System::new(model4(), tilted(4), DriftField::Zero).unwrap();
    let (lhs, rhs) = ibp_check(
        &sys,
        &runner(),
        "ibp-constant",
        &TestFunction::ConstantF(1.0),
        &v4(),
        1.0,
        200_000,
    )
    .unwrap();
    assert_eq!(lhs.mean, 0.0);
    assert_eq!(lhs.stderr, 0.0);
    assert!(rhs.consistent_with(0.0, 3.0), "{rhs:?}");
}

#[test]
fn ibp_linear_function_matches_closed_form() {
    let sys = System::new(model4(), constant(), DriftField::Zero).unwrap();
    let a = HVector::from_vec(vec![1.0, 0.5, -0.5, 0.25]);
    let v = v4();
    let exact = 2.0 * a.dot(&v);
    let (lhs, rhs) = ibp_check(
        &sys,
        &runner(),
        "ibp-linear",
        &TestFunction::LinearF(a),
        &v,
        1.0,
        200_000,
    )
    .unwrap();
    assert!(lhs.consistent_with(exact, 3.0), "{lhs:?} vs {exact}");
    assert!(rhs.consistent_with(exact, 3.0), "{rhs:?} vs {exact}");
}

#[test]
fn ibp_cosine_tilted_density() {
    let sys = System::new(model4(), tilted(4), DriftField::Zero).unwrap();
    let f = TestFunction::cosine(HVector::from_vec(vec![0.7, -0.4, 0.2, 0.1]), 0.4);
    let (lhs, rhs) = ibp_check(&sys, &runner(), "ibp-cosine", &f, &v4(), 1.0, 200_000).unwrap();
    assert!(lhs.agrees_with(&rhs, 3.0, 0.0), "{lhs:?} vs {rhs:?}");
    assert!(
        lhs.mean.abs() > 5.0 * lhs.stderr,
        "the scenario should not be trivially zero: {lhs:?}"
    );
}

#[test]
fn killed_semigroup_of_constant_is_survival_probability() {
    let sys = System::new(model4(), tilted(4), tanh(4)).unwrap();
    let x = HVector::zeros(4);
    let one = TestFunction::ConstantF(1.0);
    let p = p1_semigroup(&sys, &runner(), "p1", &one, &x, 1.0, 20_000).unwrap();
    let exact = 1.0 - (-2.0f64).exp();
    assert!((exact - 0.86466).abs() < 1e-5);
    assert!(p.consistent_with(exact, 3.0), "{p:?}");
    let tiny = p1_semigroup(&sys, &runner(), "p1-tiny", &one, &x, 1e-9, 20_000).unwrap();
    assert!(tiny.mean < 1e-3, "{tiny:?}");
}

#[test]
fn bismut_of_constant_function_is_zero() {
    let sys = System::new(model4(), tilted(4), DriftField::Zero).unwrap();
    let b = bismut_gradient(
        &sys,
        &runner(),
        "bismut-constant",
        &TestFunction::ConstantF(2.0),
        &e1(4),
        &v4(),
        1.0,
        100_000,
    )
    .unwrap();
    assert!(b.consistent_with(0.0, 3.0), "{b:?}");
    let rows = gradient_estimates(
        &sys,
        &runner(),
        "fd-constant",
        &TestFunction::ConstantF(2.0),
        &e1(4),
        &v4(),
        &[1.0],
        1000,
        1e-2,
    )
    .unwrap();
    assert_eq!(rows[0].fd.mean, 0.0);
    assert_eq!(rows[0].fd.stderr, 0.0);
}

#[test]
fn bismut_matches_pathwise_oracle_for_linear_dynamics() {
    let m = SpectralModel::fractional(vec![1.0], 0.25).unwrap();
    let sys = System::new(m, tilted(1), DriftField::Zero).unwrap();
    let f = TestFunction::cosine(HVector::from_vec(vec![0.8]), 0.3);
    let x = HVector::from_vec(vec![0.5]);
    let xi = HVector::from_vec(vec![1.0]);
    let row = gradient_estimates(&sys, &runner(), "bismut-d1", &f, &x, &xi, &[1.0], 200_000, 1e-2).unwrap()[0];
    assert!(
        row.bismut.agrees_with(&row.pathwise, 3.0, 0.0),
        "{:?} vs {:?}",
        row.bismut,
        row.pathwise
    );
}

#[test]
fn bismut_matches_central_difference_with_tanh_drift() {
    let m = SpectralModel::fractional(vec![1.0, 2.0], 0.25).unwrap();
    let sys = System::new(m, tilted(2), tanh(2)).unwrap();
    let f = TestFunction::cosine(HVector::from_vec(vec![0.8, -0.5]), 0.3);
    let x = HVector::from_vec(vec![0.5, -0.2]);
    let xi = HVector::from_vec(vec![0.6, 0.8]);
    let row = gradient_estimates(&sys, &runner(), "bismut-tanh", &f, &x, &xi, &[1.0], 50_000, 1e-2).unwrap()[0];
    assert!(
        row.bismut.agrees_with(&row.fd, 3.0, 1e-4),
        "{:?} vs {:?}",
        row.bismut,
        row.fd
    );
}

#[test]
fn central_difference_bias_is_second_order() {
    // Common paths make fd - pathwise a deterministic function of the path.
    let m = SpectralModel::fractional(vec![1.0], 0.25).unwrap();
    let sys = System::new(m, constant(), DriftField::Zero).unwrap();
    let f = TestFunction::cosine(HVector::from_vec(vec![1.5]), 0.3);
    let x = HVector::from_vec(vec![0.2]);
    let xi = HVector::from_vec(vec![1.0]);
    let bias = |eps: f64| {
        let row = gradient_estimates(&sys, &runner(), "fd-bias", &f, &x, &xi, &[1.0], 20_000, eps).unwrap()[0];
        row.fd.mean - row.pathwise.mean
    };
    let ratio = bias(0.1) / bias(0.05);
    assert!((ratio - 4.0).abs() < 0.1, "bias ratio {ratio}");
}

#[test]
fn girsanov_weight_has_mean_one_and_reweights() {
    let r = runner();
    for density in [constant(), tilted(4)] {
        let sys = System::new(model4(), density, DriftField::Zero).unwrap();
        let sc = GirsanovScenario::new(0.5, e1(4) * 0.5, 1.0).unwrap();
        let g = TestFunction::cosine(HVector::from_vec(vec![0.7, -0.4, 0.2, 0.1]), 0.4);
        let rw = reweight_check(&sys, &r, "girsanov", &sc, &g, 1.0, 200_000).unwrap();
        assert!(rw.z_mean.consistent_with(1.0, 3.0), "{:?}", rw.z_mean);
        assert!(
            rw.weighted.agrees_with(&rw.reference, 3.0, 0.0),
            "{:?} vs {:?}",
            rw.weighted,
            rw.reference
        );

        let one = reweight_check(&sys, &r, "girsanov", &sc, &TestFunction::ConstantF(1.0), 1.0, 200_000).unwrap();
        assert_eq!(one.weighted.mean, rw.z_mean.mean);

        let zero = sc.with_epsilon(0.0).unwrap();
        let same = reweight_check(&sys, &r, "girsanov-zero", &zero, &g, 1.0, 10_000).unwrap();
        assert_eq!(same.weighted, same.reference);
    }
}

#[test]
fn difference_quotient_moment_approaches_martingale_moment() {
    let sys = System::new(model4(), constant(), DriftField::Zero).unwrap();
    let eps = [1e-3, 1e-2, 1e-1, 1.0];
    let sweep = z_moment_sweep(&sys, &runner(), "sweep", &(e1(4) * 0.5), 1.0, 100_000, &eps).unwrap();
    assert!(sweep.rows.iter().all(|r| r.1.mean.is_finite()));
    assert!(sweep.bounded(), "{}", sweep.max_over_median());
    let small = sweep.rows[0].1;
    let m2 = sweep.martingale_square;
    let allowance = 50.0 * eps[0] * m2.mean;
    assert!(small.agrees_with(&m2, 3.0, allowance), "{small:?} vs {m2:?}");
}

#[test]
fn coupled_quantities_vanish_for_equal_starts() {
    let sys = System::new(model4(), tilted(4), tanh(4)).unwrap();
    let x = HVector::from_vec(vec![0.3, 0.1, -0.2, 0.0]);
    let curve = contraction_curve(&sys, &runner(), "same-start", &x, &x, &[0.5, 1.0], 2_000).unwrap();
    assert!(curve.values.iter().all(|v| *v == 0.0));
    let tv = tv_lower_bound(&sys, &runner(), "same-start", &x, &x, 1.0, 5_000).unwrap();
    assert!(tv.value <= tv.stderr, "{tv:?}");
    assert_eq!(tv.value, 0.0);
}

#[test]
fn tv_verdict_is_insensitive_to_separation_scale() {
    let m = SpectralModel::fractional(vec![1.0, 2.0], 0.25).unwrap();
    let sys = System::new(m, tilted(2), tanh(2)).unwrap().with_dt(2e-3).unwrap();
    let cps = [1.0, 2.0, 4.0, 6.0, 8.0];
    let x = HVector::from_vec(vec![0.1, 0.0]);
    let y = HVector::from_vec(vec![-0.1, 0.0]);
    let near = tv_decay_experiment(&sys, &runner(), "tv-scale", &x, &y, &cps, 10_000).unwrap();
    let far = tv_decay_experiment(&sys, &runner(), "tv-scale", &(&x * 10.0), &(&y * 10.0), &cps, 10_000).unwrap();
    assert!(far.c != near.c);
    assert_eq!(near.passed(), far.passed(), "near {near:?}\nfar {far:?}");
    assert_eq!(near.r_star, predicted_rate(2.0, 1.0, 0.3).unwrap());
}

#[test]
fn tv_estimate_tracks_a_decaying_envelope() {
    // Far out the estimate is small and keeps shrinking; the exact "below two
    // standard errors" form does not hold for coupled samples.
    let m = SpectralModel::fractional(vec![1.0, 2.0], 0.25).unwrap();
    let sys = System::new(m, tilted(2), tanh(2)).unwrap().with_dt(2e-3).unwrap();
    let x = HVector::from_vec(vec![1.0, 0.0]);
    let y = HVector::from_vec(vec![-1.0, 0.0]);
    let r_star = predicted_rate(2.0, 1.0, 0.3).unwrap();
    let t_far = 8.0 / r_star;
    let cps = [2.0, t_far / 2.0, t_far];
    let tv = tv_decay_experiment(&sys, &runner(), "tv-far", &x, &y, &cps, 20_000).unwrap();
    let v = &tv.curve.values;
    assert!(v[2] < v[1] && v[1] < v[0], "{v:?}");
    assert!(v[2] < 0.01, "{v:?}");
    assert!(tv.below_envelope.iter().skip(1).all(|b| *b), "{tv:?}");
}
