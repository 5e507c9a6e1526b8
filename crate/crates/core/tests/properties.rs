use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use irtlong::data::{ingest_csv, write_csv};
use irtlong::estimate::marginal_loglik;
use irtlong::family::{category_probs, merge_categories, reverse_categories, RatioFamily};
use irtlong::link::CdfKind;
use irtlong::lmm::{fit_lmm, LmmModel};
use irtlong::model::{Covariance, FixedEffect, ItemParams, ItemSpec, ModelSpec};
use irtlong::quadrature::QuadratureRule;
use irtlong::score::{eortc_score, ScorePoint, ScoreSeries};
use irtlong::simulate::{simulate_from, Generator};

fn symmetric_kind() -> impl Strategy<Value = CdfKind> {
    prop_oneof![Just(CdfKind::Logistic), Just(CdfKind::Gaussian)]
}

fn any_kind() -> impl Strategy<Value = CdfKind> {
    prop_oneof![
        Just(CdfKind::Logistic),
        Just(CdfKind::Gaussian),
        Just(CdfKind::GumbelMax),
        Just(CdfKind::GumbelMin)
    ]
}

/// Decreasing predictors, valid for every family.
fn decreasing_eta() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-6.0f64..6.0, 1..=6).prop_map(|mut v| {
        v.sort_by(|a, b| b.total_cmp(a));
        for k in 1..v.len() {
            if v[k] >= v[k - 1] - 1e-3 {
                v[k] = v[k - 1] - 1e-3;
            }
        }
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn reversal_reverses_probabilities(
        kind in symmetric_kind(),
        family in prop_oneof![Just(RatioFamily::Adjacent), Just(RatioFamily::Cumulative)],
        eta in decreasing_eta(),
    ) {
        let p = category_probs(family, kind, &eta).unwrap();
        let q = category_probs(family, kind, &reverse_categories(family, kind, &eta).unwrap()).unwrap();
        for (a, b) in q.probs().iter().zip(p.reversed().probs()) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn merging_pools_adjacent_categories(kind in any_kind(), eta in decreasing_eta(), pick in 0usize..6) {
        let m = 1 + pick % eta.len();
        let p = category_probs(RatioFamily::Cumulative, kind, &eta).unwrap();
        let merged = merge_categories(RatioFamily::Cumulative, &eta, m).unwrap();
        let q = category_probs(RatioFamily::Cumulative, kind, &merged).unwrap();
        let want = p.merged(m).unwrap();
        for (a, b) in q.probs().iter().zip(want.probs()) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn complete_score_is_rescaled_mean(responses in prop::collection::vec(0u8..=3, 1..=8)) {
        let r: Vec<Option<u8>> = responses.iter().copied().map(Some).collect();
        let mean = responses.iter().map(|&y| y as f64).sum::<f64>() / responses.len() as f64;
        prop_assert_eq!(eortc_score(&r, 3).unwrap(), Some(mean * (100.0 / 3.0)));
    }

    #[test]
    fn half_rule_decides_missing_scores(responses in prop::collection::vec(prop::option::of(0u8..=3), 1..=8)) {
        let present = responses.iter().flatten().count();
        let s = eortc_score(&responses, 3).unwrap();
        prop_assert_eq!(s.is_some(), present > 0 && 2 * present >= responses.len());
    }
}

fn score_series(seed: u64, n: usize, slope_sd: f64) -> ScoreSeries {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let times = [0.0, 1.0, 2.0, 4.0, 6.0];
    let mut points = Vec::new();
    for i in 0..n {
        let b0: f64 = 50.0 + 10.0 * rng.sample::<f64, _>(StandardNormal);
        let b1: f64 = -1.0 + slope_sd * rng.sample::<f64, _>(StandardNormal);
        for (v, &t) in times.iter().enumerate() {
            if rng.random::<f64>() < 0.1 {
                continue;
            }
            points.push(ScorePoint {
                subject: format!("s{i:03}"),
                visit: v as u32,
                time: t,
                score: b0 + b1 * t + 5.0 * rng.sample::<f64, _>(StandardNormal),
            });
        }
    }
    ScoreSeries { points }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn lmm_score_shift_moves_only_the_intercept(seed in any::<u64>(), c in -40.0f64..40.0, m2 in any::<bool>()) {
        let model = if m2 { LmmModel::M2 } else { LmmModel::M1 };
        let s = score_series(seed, 40, 1.0);
        let mut shifted = s.clone();
        for p in &mut shifted.points {
            p.score += c;
        }
        let a = fit_lmm(model, &s, 0.0).unwrap();
        let b = fit_lmm(model, &shifted, 0.0).unwrap();
        prop_assert!((b.beta[0] - a.beta[0] - c).abs() <= 1e-8, "{} {}", a.beta[0], b.beta[0]);
        prop_assert!((b.beta[1] - a.beta[1]).abs() <= 1e-8);
        for (x, y) in [(a.sigma0_sq, b.sigma0_sq), (a.sigma1_sq, b.sigma1_sq), (a.sigma_eps_sq, b.sigma_eps_sq)] {
            prop_assert!((x - y).abs() <= 1e-8 * x.max(1.0), "{x} vs {y}");
        }
        prop_assert!((a.loglik - b.loglik).abs() <= 1e-8 * a.loglik.abs().max(1.0));
    }

    #[test]
    fn lmm_slope_model_never_fits_worse(seed in any::<u64>(), slope_sd in 0.0f64..1.5) {
        let s = score_series(seed, 30, slope_sd);
        let m1 = fit_lmm(LmmModel::M1, &s, 0.0).unwrap();
        let m2 = fit_lmm(LmmModel::M2, &s, 0.0).unwrap();
        prop_assert!(m2.loglik >= m1.loglik - 1e-6, "{} < {}", m2.loglik, m1.loglik);
    }
}

fn relabel_generator() -> Generator {
    let spec = ModelSpec::new(
        RatioFamily::Adjacent,
        CdfKind::Logistic,
        vec![ItemSpec::new("i1", 4), ItemSpec::new("i2", 3)],
    )
    .with_fixed_effects(vec![FixedEffect::covariate("group"), FixedEffect::time()]);
    Generator {
        spec,
        items: ItemParams::per_item(vec![vec![-1.0, 0.2, 1.5], vec![-0.5, 0.8]]),
        beta: vec![0.4, -0.2],
        covariance: Covariance::intercept(1.2),
        n_subjects: 25,
        times: vec![0.0, 1.0, 3.0],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// The likelihood does not depend on subject labels or on row order.
    #[test]
    fn likelihood_ignores_labels_and_row_order(seed in any::<u64>()) {
        let gen = relabel_generator();
        let data = simulate_from(&gen, seed, 0).unwrap();
        let mut buf = Vec::new();
        write_csv(&data, &gen.spec, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let header = lines.remove(0);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        lines.shuffle(&mut rng);
        // Relabel with a bijection that also changes the sort order.
        let relabelled: Vec<String> = lines
            .iter()
            .map(|l| {
                let (id, rest) = l.split_once(',').unwrap();
                let k: u32 = id[1..].parse().unwrap();
                format!("p{:04},{rest}", 9999 - k)
            })
            .collect();
        let shuffled = format!("{header}\n{}\n", relabelled.join("\n"));
        let (other, _) = ingest_csv(shuffled.as_bytes(), &gen.spec).unwrap();
        let params = gen.true_parameters().unwrap();
        let quad = QuadratureRule::default();
        let a = marginal_loglik(&gen.spec, &data, &params, &quad).unwrap();
        let b = marginal_loglik(&gen.spec, &other, &params, &quad).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs(), "{a} vs {b}");
    }
}
