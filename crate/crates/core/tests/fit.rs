use irtlong::estimate::{fit, marginal_loglik, parameter_index, wald_test, FitOptions};
use irtlong::family::RatioFamily;
use irtlong::link::CdfKind;
use irtlong::model::{
    CovStructure, Covariance, FixedEffect, ItemParams, ItemSpec, ModelSpec, RandomEffects,
};
use irtlong::quadrature::QuadratureRule;
use irtlong::simulate::{simulate_from, Generator};

fn generator(family: RatioFamily, cdf: CdfKind, slope: bool) -> Generator {
    let items = vec![
        ItemSpec::new("i1", 4),
        ItemSpec::new("i2", 4),
        ItemSpec::new("i3", 3),
    ];
    let mut spec = ModelSpec::new(family, cdf, items)
        .with_fixed_effects(vec![FixedEffect::covariate("group"), FixedEffect::time()]);
    let covariance = if slope {
        spec = spec.with_random_effects(RandomEffects::InterceptAndSlope, CovStructure::Diagonal);
        Covariance::diagonal(1.0, 0.04)
    } else {
        Covariance::intercept(1.0)
    };
    Generator {
        spec,
        items: ItemParams::per_item(vec![
            vec![-1.5, 0.0, 1.5],
            vec![-1.0, 0.5, 2.0],
            vec![-0.5, 1.0],
        ]),
        beta: vec![0.5, -0.25],
        covariance,
        n_subjects: 400,
        times: vec![0.0, 1.0, 2.0, 4.0],
    }
}

/// Every fixed effect within four standard errors of its true value.
fn check_recovery(family: RatioFamily, cdf: CdfKind, slope: bool, seed: u64) {
    let gen = generator(family, cdf, slope);
    let data = simulate_from(&gen, seed, 0).unwrap();
    let f = fit(&gen.spec, &data, None, &FitOptions::default()).unwrap();
    assert!(f.convergence.converged);
    for (name, truth) in ["group", "time"].iter().zip(&gen.beta) {
        let e = f.estimate(name).unwrap();
        assert!(e.se > 0.0 && e.se < 0.5, "{name} se {}", e.se);
        assert!(
            (e.estimate - truth).abs() < 4.0 * e.se,
            "{name}: {} vs {truth} (se {})",
            e.estimate,
            e.se
        );
    }
    let var0 = f.estimate("var0").unwrap();
    assert!(
        (var0.estimate - 1.0).abs() < 4.0 * var0.se.max(0.05),
        "var0 {}",
        var0.estimate
    );
    let truth = marginal_loglik(
        &gen.spec,
        &data,
        &gen.true_parameters().unwrap(),
        &QuadratureRule::default(),
    )
    .unwrap();
    assert!(
        f.loglik >= truth - 1e-6,
        "maximum {} below truth {truth}",
        f.loglik
    );
}

#[test]
fn cumulative_logistic_recovers_parameters() {
    check_recovery(RatioFamily::Cumulative, CdfKind::Logistic, false, 1);
}

#[test]
fn adjacent_gaussian_recovers_parameters() {
    check_recovery(RatioFamily::Adjacent, CdfKind::Gaussian, false, 2);
}

#[test]
fn sequential_gumbel_recovers_parameters() {
    check_recovery(RatioFamily::Sequential, CdfKind::GumbelMin, false, 3);
}

#[test]
fn random_slope_model_recovers_parameters() {
    check_recovery(RatioFamily::Cumulative, CdfKind::Logistic, true, 4);
}

#[test]
fn wald_and_parameter_lookup() {
    let gen = generator(RatioFamily::Cumulative, CdfKind::Logistic, false);
    let data = simulate_from(&gen, 9, 0).unwrap();
    let f = fit(&gen.spec, &data, None, &FitOptions::default()).unwrap();
    let (z, p) = wald_test(&f, "group").unwrap();
    assert!(z.is_finite() && (0.0..=1.0).contains(&p));
    assert!(wald_test(&f, "nope").is_err());
    assert_eq!(parameter_index(&gen.spec, "group"), Some(0));
    assert!(parameter_index(&gen.spec, "i1.delta1").is_some());
    assert!(f.n_params == f.params.len());
    assert!(
        (f.bic - (-2.0 * f.loglik + f.n_params as f64 * (data.n_subjects() as f64).ln())).abs()
            < 1e-9
    );
}

#[test]
fn discrimination_other_than_one_is_rejected_by_the_estimator() {
    let mut gen = generator(RatioFamily::Cumulative, CdfKind::Logistic, false);
    gen.n_subjects = 20;
    let data = simulate_from(&gen, 1, 0).unwrap();
    let mut spec = gen.spec.clone();
    spec.items[0].discrimination = 2.0;
    assert!(fit(&spec, &data, None, &FitOptions::default()).is_err());
}

#[test]
fn fixed_parameters_stay_put() {
    let gen = generator(RatioFamily::Adjacent, CdfKind::Logistic, false);
    let data = simulate_from(&gen, 5, 0).unwrap();
    let init = gen.true_parameters().unwrap();
    let k = parameter_index(&gen.spec, "group").unwrap();
    let opts = FitOptions {
        fixed: vec![k],
        ..FitOptions::default()
    };
    let f = fit(&gen.spec, &data, Some(&init), &opts).unwrap();
    assert_eq!(f.beta[0], gen.beta[0]);
}
