mod common;

use common::{matched_congruences, rng};
use debtmine::numeric::{pearson, sym_eigen_desc};
use debtmine::psychometrics::{
    alpha_of, correlation, cronbach_alpha, extract_factors, factor_scores, kaiser_normalize,
    parallel_analysis, scales_from_model, scree, varimax, varimax_criterion, varimax_traced,
    CorrelationMatrix, FactorModel, FactorScorer, ReliabilityBand, RetentionRule, Rotation,
};
use debtmine::survey::{encode, generate_synthetic_survey, EncodedMatrix, Encoding, GeneratorConfig, VariableGroup};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn names(p: usize) -> Vec<String> {
    (0..p).map(|i| format!("x{i}")).collect()
}

fn implied(lambda: &DMatrix<f64>) -> CorrelationMatrix {
    let mut r = lambda * lambda.transpose();
    for i in 0..r.nrows() {
        r[(i, i)] = 1.0;
    }
    CorrelationMatrix { names: names(r.nrows()), r }
}

fn model_with(loadings: DMatrix<f64>) -> FactorModel {
    let p = loadings.nrows();
    let m = loadings.ncols();
    let communalities: Vec<f64> = loadings.row_iter().map(|r| r.norm_squared()).collect();
    FactorModel {
        item_names: names(p),
        factors: m,
        variance_explained: communalities.iter().sum::<f64>() / p as f64,
        communalities,
        loadings,
        eigenvalues: vec![],
        rotation: Rotation::None,
        rotation_matrix: DMatrix::identity(m, m),
        correlation: DMatrix::identity(p, p),
        converged: true,
        iterations: 0,
        warnings: vec![],
    }
}

fn rotation(theta: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
}

fn random_orthogonal(g: &mut impl Rng, m: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(m, m, |_, _| StandardNormal.sample(g));
    a.qr().q()
}

fn likert_items(cfg: &GeneratorConfig, seed: u64) -> (EncodedMatrix, debtmine::survey::GroundTruth) {
    let (data, truth) = generate_synthetic_survey(cfg, seed).unwrap();
    let vars = data.schema().group_members(VariableGroup::Psychological);
    (encode(&data, &vars, Encoding::LikertNumeric).unwrap(), truth)
}

fn noise_items(seed: u64, n: usize, p: usize) -> EncodedMatrix {
    let mut g = rng(seed);
    EncodedMatrix::numeric(names(p), DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut g)))
}

#[test]
fn construct_then_recover_two_factor_loadings() {
    let lambda = DMatrix::from_row_slice(6, 2, &[
        0.8, 0.0, 0.7, 0.1, 0.6, 0.0, //
        0.1, 0.7, 0.0, 0.6, 0.0, 0.5,
    ]);
    let fit = extract_factors(&implied(&lambda), 2, 10_000, 1e-12).unwrap();
    assert!(fit.converged);
    let rot = varimax(&fit, 1e-14);
    for c in matched_congruences(&lambda, &rot.loadings) {
        assert!(c >= 0.999, "congruence {c}");
    }
    for (h, l) in rot.communalities.iter().zip(lambda.row_iter()) {
        assert!((h - l.norm_squared()).abs() < 1e-6);
    }
}

#[test]
fn varimax_matches_grid_search_for_two_factors() {
    let mut g = rng(3);
    for _ in 0..5 {
        let l = DMatrix::from_fn(8, 2, |_, _| g.random_range(-0.9..0.9));
        let model = model_with(l.clone());
        let rot = varimax(&model, 1e-14);
        let (norm, _) = kaiser_normalize(&l);
        let mut best = f64::NEG_INFINITY;
        let steps = (std::f64::consts::FRAC_PI_2 / 1e-4).ceil() as usize;
        for s in 0..=steps {
            let v = varimax_criterion(&(&norm * rotation(s as f64 * 1e-4)));
            best = best.max(v);
        }
        let (got, _) = kaiser_normalize(&rot.loadings);
        let got = varimax_criterion(&got);
        assert!((got - best).abs() < 1e-6, "varimax {got} grid {best}");
        assert!(got >= best - 1e-12);
    }
}

#[test]
fn varimax_leaves_simple_structure_alone() {
    let l = DMatrix::from_row_slice(6, 3, &[
        0.8, 0.0, 0.0, 0.6, 0.0, 0.0, 0.0, 0.7, 0.0, //
        0.0, 0.5, 0.0, 0.0, 0.0, 0.9, 0.0, 0.0, 0.4,
    ]);
    let rot = varimax(&model_with(l.clone()), 1e-14);
    for i in 0..6 {
        for f in 0..3 {
            assert!((rot.loadings[(i, f)].abs() - l[(i, f)].abs()).abs() < 1e-10);
        }
    }
}

#[test]
fn varimax_undoes_random_scrambling() {
    let mut g = rng(8);
    let m = 4;
    let mut l = DMatrix::zeros(16, m);
    for i in 0..16 {
        l[(i, i % m)] = g.random_range(0.4..0.9) * if i % 5 == 0 { -1.0 } else { 1.0 };
    }
    for trial in 0..5 {
        let t = random_orthogonal(&mut g, m);
        let scrambled = &l * &t;
        let (rot, trace) = varimax_traced(&model_with(scrambled.clone()), 1e-14, 1000);
        for c in matched_congruences(&l, &rot.loadings) {
            assert!(c >= 0.999, "trial {trial}: congruence {c}");
        }
        for w in trace.criterion.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        let tt = rot.rotation_matrix.transpose() * &rot.rotation_matrix;
        assert!((tt - DMatrix::<f64>::identity(m, m)).amax() < 1e-10);
        assert!((&scrambled * &rot.rotation_matrix - &rot.loadings).amax() < 1e-10);
    }
}

#[test]
fn alpha_for_three_items_with_half_correlation() {
    let target = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.5, 0.5, 1.0, 0.5, 0.5, 0.5, 1.0]);
    let mut g = rng(4);
    let raw = DMatrix::from_fn(200, 3, |_, _| StandardNormal.sample(&mut g));
    let mut centered = raw.clone();
    for mut c in centered.column_iter_mut() {
        let mu: f64 = c.mean();
        c.add_scalar_mut(-mu);
    }
    // whiten then colour so the sample covariance is exactly `target`
    let s = centered.transpose() * &centered / 199.0;
    let w = s.cholesky().unwrap().l().try_inverse().unwrap().transpose();
    let x = centered * w * target.clone().cholesky().unwrap().l().transpose();
    let alpha = alpha_of(&x).unwrap();
    let rbar = 0.5;
    assert!((alpha - 3.0 * rbar / (1.0 + 2.0 * rbar)).abs() < 1e-10);
    assert!((alpha - 0.75).abs() < 1e-10);
}

#[test]
fn reported_alpha_values_fall_in_their_bands() {
    assert_eq!(ReliabilityBand::of(0.86), ReliabilityBand::Good);
    assert_eq!(ReliabilityBand::of(0.64), ReliabilityBand::Acceptable);
    assert_eq!(ReliabilityBand::of(0.61), ReliabilityBand::Acceptable);
    assert_eq!(ReliabilityBand::of(0.57), ReliabilityBand::Poor);
}

#[test]
fn scores_equal_projection_when_r_is_identity() {
    let mut g = rng(1);
    let x = DMatrix::from_fn(50, 3, |_, _| StandardNormal.sample(&mut g));
    let lambda = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
    let model = model_with(lambda.clone());
    let scorer = FactorScorer::new(&model, &x).unwrap();
    let f = scorer.apply(&x);
    let col: Vec<f64> = x.column(0).iter().copied().collect();
    let mu = col.iter().sum::<f64>() / 50.0;
    let sd = debtmine::numeric::sample_sd(&col);
    for r in 0..50 {
        assert!((f[(r, 0)] - (x[(r, 0)] - mu) / sd).abs() < 1e-12);
    }
}

fn check_correlation_shape(r: &CorrelationMatrix) {
    let p = r.dim();
    assert!((&r.r - r.r.transpose()).amax() < 1e-12);
    assert!((0..p).all(|i| r.r[(i, i)] == 1.0));
    let ev = scree(r);
    assert!(ev.iter().all(|&v| v >= -1e-8));
    assert!((ev.iter().sum::<f64>() - p as f64).abs() < 1e-8);
}

#[test]
fn empirical_correlation_tracks_implied_structure() {
    let cfg = GeneratorConfig {
        n_items: 12,
        n_factors: 2,
        ..GeneratorConfig::default()
    };
    let lambda = cfg.planted_loadings();
    let n = 5000;
    let mut g = rng(2);
    let f: DMatrix<f64> = DMatrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut g));
    let e = DMatrix::from_fn(n, 12, |_, _| { let z: f64 = StandardNormal.sample(&mut g); 0.8 * z });
    let x = &f * lambda.transpose() + e;
    let r = correlation(&EncodedMatrix::numeric(names(12), x)).unwrap();
    let dev = (&r.r - &implied(&lambda).r).amax();
    assert!(dev < 0.05, "max deviation {dev}");
    check_correlation_shape(&r);
}

#[test]
fn likert_coding_attenuates_correlations_by_the_coding_factor() {
    // Correlation between a standard normal and its 5-point equiprobable code
    // is sum(phi(t_k)) / sd(code); item pairs shrink by its square.
    let t = [-0.841_621_233_572_914_3f64, -0.253_347_103_135_799_7];
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let c = 2.0 * t.iter().map(|&x| phi(x)).sum::<f64>() / 2f64.sqrt();
    let cfg = GeneratorConfig {
        n: 5000,
        n_items: 12,
        n_factors: 2,
        factor_effects: vec![1.0, 0.5],
        ..GeneratorConfig::default()
    };
    let (items, truth) = likert_items(&cfg, 2);
    let r = correlation(&items).unwrap();
    let mut target = implied(&truth.loadings).r * (c * c);
    for i in 0..12 {
        target[(i, i)] = 1.0;
    }
    let dev = (&r.r - &target).amax();
    assert!(dev < 0.05, "max deviation {dev}");
    check_correlation_shape(&r);
}

#[test]
fn planted_battery_has_five_eigenvalues_above_one() {
    let (items, _) = likert_items(&GeneratorConfig { n: 1253, ..GeneratorConfig::default() }, 21);
    let ev = scree(&correlation(&items).unwrap());
    assert_eq!(ev.iter().filter(|&&v| v > 1.0).count(), 5, "{ev:?}");
    assert!(ev[4] > 1.0 && ev[5] < 1.0);
}

#[test]
fn parallel_analysis_recovers_planted_factor_count() {
    let cfg = GeneratorConfig { n: 1253, ..GeneratorConfig::default() };
    for seed in 0..3 {
        let (items, _) = likert_items(&cfg, 100 + seed);
        let pa = parallel_analysis(&items, 50, seed, RetentionRule::Mean).unwrap();
        assert_eq!(pa.retained, 5, "seed {seed}: {:?}", &pa.observed[..7]);
        let pa = parallel_analysis(&items, 50, seed, RetentionRule::Percentile(95.0)).unwrap();
        assert_eq!(pa.retained, 5);
    }
}

#[test]
fn parallel_analysis_replicates_are_seeded() {
    let items = noise_items(9, 200, 10);
    let a = parallel_analysis(&items, 20, 5, RetentionRule::Mean).unwrap();
    let b = parallel_analysis(&items, 20, 5, RetentionRule::Mean).unwrap();
    assert_eq!(a, b);
    assert!(parallel_analysis(&items, 19, 5, RetentionRule::Mean).is_err());
}

#[test]
fn factor_scores_track_latent_factors() {
    let cfg = GeneratorConfig { n: 2000, ..GeneratorConfig::default() };
    let (items, truth) = likert_items(&cfg, 31);
    let r = correlation(&items).unwrap();
    let model = varimax(&extract_factors(&r, 5, 1000, 1e-8).unwrap(), 1e-10);
    let scores = factor_scores(&model, &items).unwrap();
    for f in 0..5 {
        let s: Vec<f64> = scores.column(f).iter().copied().collect();
        assert!(s.iter().sum::<f64>().abs() / 2000.0 < 1e-10);
        let best = (0..5)
            .map(|t| {
                let lt: Vec<f64> = truth.latent_factors.column(t).iter().copied().collect();
                pearson(&s, &lt).abs()
            })
            .fold(0.0, f64::max);
        assert!(best >= 0.8, "factor {f}: best |r| {best}");
    }
}

#[test]
fn reliability_of_planted_scales_is_good() {
    let (items, _) = likert_items(&GeneratorConfig { n: 1253, ..GeneratorConfig::default() }, 5);
    let r = correlation(&items).unwrap();
    let model = varimax(&extract_factors(&r, 5, 1000, 1e-8).unwrap(), 1e-10);
    let scales = scales_from_model(&model, &[]);
    let report = cronbach_alpha(&items, &scales).unwrap();
    assert_eq!(report.scales.len(), 5);
    // every 4th item is reverse keyed, so each scale must reverse something
    assert!(report.scales.iter().any(|s| !s.reversed.is_empty()));
    for s in &report.scales {
        assert!(s.alpha > 0.6, "{}: {}", s.name, s.alpha);
    }
    let total: usize = report.scales.iter().map(|s| s.items.len()).sum();
    assert_eq!(total, 28);
}

fn symmetric(p: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, p * p).prop_map(move |v| {
        let a = DMatrix::from_vec(p, p, v);
        (&a + a.transpose()) * 0.5
    })
}

fn loadings(p: usize, m: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-0.7f64..0.7, p * m).prop_map(move |v| DMatrix::from_vec(p, m, v) / (m as f64).sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn eigen_solver_is_accurate(a in (2usize..9).prop_flat_map(symmetric)) {
        let (vals, vecs) = sym_eigen_desc(&a);
        let d = DMatrix::from_diagonal(&vals);
        prop_assert!((&a * &vecs - &vecs * d).amax() < 1e-8);
        let p = a.nrows();
        prop_assert!((vecs.transpose() * &vecs - DMatrix::<f64>::identity(p, p)).amax() < 1e-10);
        prop_assert!((vals.sum() - a.trace()).abs() < 1e-8);
        for w in vals.as_slice().windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn varimax_preserves_communalities(l in (2usize..5).prop_flat_map(|m| loadings(3 * m, m))) {
        let model = model_with(l);
        let (rot, trace) = varimax_traced(&model, 1e-12, 500);
        for (a, b) in rot.communalities.iter().zip(&model.communalities) {
            prop_assert!((a - b).abs() < 1e-8);
        }
        for w in trace.criterion.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12);
        }
        let m = model.factors;
        let tt = rot.rotation_matrix.transpose() * &rot.rotation_matrix;
        prop_assert!((tt - DMatrix::<f64>::identity(m, m)).amax() < 1e-10);
    }

    #[test]
    fn extracted_communalities_are_bounded(l in loadings(8, 2)) {
        let fit = extract_factors(&implied(&l), 2, 500, 1e-9).unwrap();
        for h in &fit.communalities {
            prop_assert!(*h >= 0.0 && *h <= 1.0 + 1e-6);
        }
        let ve = fit.communalities.iter().sum::<f64>() / 8.0;
        prop_assert!((ve - fit.variance_explained).abs() < 1e-12);
    }
}
