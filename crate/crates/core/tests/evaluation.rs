use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rtinfer::eval::Marginal;
use rtinfer::prelude::*;

// If the truth is drawn from the reported posterior itself, every level is
// hit at its nominal rate.
#[test]
fn self_consistent_posteriors_are_calibrated() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (instances, days) = (400, 25);
    let mut posteriors = Vec::new();
    let mut truths = Vec::new();
    for _ in 0..instances {
        let mut marginals = Vec::new();
        let mut truth = Vec::new();
        for _ in 0..days {
            let mean = rng.random_range(0.5..2.0);
            let sd = rng.random_range(0.05..0.5);
            let z: f64 = rng.sample(StandardNormal);
            marginals.push(Some(Marginal::Normal { mean, sd }));
            truth.push(mean + sd * z);
        }
        posteriors.push(MethodPosterior { days: marginals });
        truths.push(truth);
    }
    let levels = [0.1, 0.5, 0.8, 0.95];
    let coverage = calibration_curve(&posteriors, &truths, &levels).unwrap();
    let n = (instances * days) as f64;
    for (level, c) in levels.iter().zip(&coverage) {
        let se = (level * (1.0 - level) / n).sqrt();
        assert!((c - level).abs() < 4.0 * se, "level {level}: {c}");
    }
}

#[test]
fn overconfident_posteriors_undercover() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut posteriors = Vec::new();
    let mut truths = Vec::new();
    for _ in 0..200 {
        let z: f64 = rng.sample(StandardNormal);
        posteriors.push(MethodPosterior { days: vec![Some(Marginal::Normal { mean: 1.0, sd: 0.1 })] });
        truths.push(vec![1.0 + 0.3 * z]);
    }
    let coverage = calibration_curve(&posteriors, &truths, &[0.9]).unwrap();
    assert!(coverage[0] < 0.6, "{coverage:?}");
}

// With infections observed directly and no delay, the sliding window recovers
// a constant reproduction number.
#[test]
fn cori_recovers_constant_r() {
    let horizon = 60;
    let mut disease = DiseaseConfig::new(100_000_000, horizon);
    disease.initial_infected = 5_000;
    disease.profile = rtinfer::disease::InfectiousnessProfile::discretized_gamma(4.0, 2.0, 12);
    let n = simulate_seeded(&RtTrajectory::constant(1.3, horizon, 0.0), &disease, 8).unwrap();
    let x = ObservationSeries::new(n.counts.clone());
    let days = cori_posterior(&x, &disease.profile, &CoriConfig::default()).unwrap();
    for post in days[40..].iter() {
        let post = post.expect("estimate once the window is full");
        assert!((post.mean() - 1.3).abs() < 0.05, "{}", post.mean());
        assert!(post.quantile(0.025) < 1.3 && 1.3 < post.quantile(0.975));
    }
}

#[test]
fn outbreak_changepoints_are_uniform() {
    let horizon = 100;
    let draws = 2_000;
    let mut fractions: Vec<f64> = (0..draws)
        .map(|seed| {
            let s = generate_scenario(&ScenarioConfig::new(ScenarioKind::Outbreak, horizon, seed)).unwrap();
            s.changepoint.unwrap() / horizon as f64
        })
        .collect();
    fractions.sort_by(f64::total_cmp);
    // Kolmogorov-Smirnov against U(0.3, 0.7)
    let ks = fractions
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let cdf = ((f - 0.3) / 0.4).clamp(0.0, 1.0);
            let lo = i as f64 / draws as f64;
            let hi = (i + 1) as f64 / draws as f64;
            (cdf - lo).abs().max((hi - cdf).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 1.63 / (draws as f64).sqrt(), "KS {ks}");
}

#[test]
fn benchmark_is_deterministic() {
    let config = BenchmarkConfig {
        scenario: ScenarioConfig::new(ScenarioKind::RandomTrend, 30, 0),
        disease: DiseaseConfig::new(3_000, 30),
        prior: None,
        svi: SviConfig { iterations: 20, ..SviConfig::default() },
        cori: CoriConfig::default(),
        cori_auto_shift: true,
        grid: vec![rtinfer::eval::CellSpec {
            test: TestKind::Pcr,
            scheme: rtinfer::eval::SchemeSpec::CrossSectional { fraction: 0.02 },
        }],
        methods: vec![Method::Gprt, Method::Cori],
        instances: 2,
        rng_seed: 9,
    };
    let a = run_benchmark(&config).unwrap();
    let b = run_benchmark(&config).unwrap();
    assert_eq!(a.cells[0].instances, b.cells[0].instances);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outbreak_rises_through_one(seed in any::<u64>(), horizon in 10usize..120) {
        let s = generate_scenario(&ScenarioConfig::new(ScenarioKind::Outbreak, horizon, seed)).unwrap();
        let r = &s.trajectory.r;
        prop_assert!(r[0] < 1.0);
        prop_assert!(r.iter().cloned().fold(f64::MIN, f64::max) > 1.0);
        prop_assert!(r.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn trend_stays_in_its_clamp(seed in any::<u64>(), horizon in 10usize..120) {
        let config = ScenarioConfig::new(ScenarioKind::RandomTrend, horizon, seed);
        let (lo, hi) = config.trend.clamp;
        let s = generate_scenario(&config).unwrap();
        prop_assert!(s.trajectory.r.iter().all(|&r| lo <= r && r <= hi));
    }

    #[test]
    fn coverage_is_monotone_in_level(
        means in prop::collection::vec(0.5f64..2.0, 30),
        truths in prop::collection::vec(0.5f64..2.0, 30),
    ) {
        let posteriors: Vec<MethodPosterior> = means
            .iter()
            .map(|&m| MethodPosterior { days: vec![Some(Marginal::Gamma { shape: 20.0, scale: m / 20.0 })] })
            .collect();
        let truths: Vec<Vec<f64>> = truths.iter().map(|&t| vec![t]).collect();
        let c = calibration_curve(&posteriors, &truths, &[0.1, 0.3, 0.5, 0.7, 0.9, 0.99]).unwrap();
        prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
    }
}
