use rtinfer::prelude::*;
use rtinfer::svi::resume;

struct Problem {
    disease: DiseaseConfig,
    prior: GpPrior,
    observation: ObservationModel,
    x: ObservationSeries,
}

fn problem() -> Problem {
    let horizon = 12;
    let disease = DiseaseConfig::new(3_000, horizon);
    let prior = GpPrior::new(&PriorConfig::new(0.5), horizon).unwrap();
    let scheme = ObservationScheme::cross_sectional_fraction(0.02, 3_000, horizon);
    let observation = ObservationModel::new(scheme, TestProfile::pcr(), 3_000).unwrap();
    let x = ObservationSeries::new(vec![0, 0, 1, 0, 1, 2, 1, 2, 3, 2, 4, 5]);
    Problem { disease, prior, observation, x }
}

#[test]
fn resumed_fit_equals_uninterrupted_fit() {
    let p = problem();
    let bound = p.observation.bind(&p.x);
    let model = Model { disease: &p.disease, prior: &p.prior, likelihood: &bound };
    let full = SviConfig { iterations: 40, rng_seed: 3, ..SviConfig::default() };
    let half = SviConfig { iterations: 20, ..full.clone() };
    let straight = fit(&model, &full).unwrap();
    let first = fit(&model, &half).unwrap();
    let resumed = resume(&model, &full, first.checkpoint).unwrap();
    assert_eq!(straight.checkpoint, resumed.checkpoint);
    assert_eq!(straight.summary, resumed.summary);
}

#[test]
fn result_does_not_depend_on_worker_count() {
    let p = problem();
    let bound = p.observation.bind(&p.x);
    let model = Model { disease: &p.disease, prior: &p.prior, likelihood: &bound };
    let config = SviConfig { iterations: 15, rng_seed: 5, ..SviConfig::default() };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fit(&model, &config).unwrap())
    };
    let one = run(1);
    let three = run(3);
    assert_eq!(one.checkpoint, three.checkpoint);
}

// The leave-one-out baseline must not change the expected gradient; compare
// batch means with and without it.
#[test]
fn baseline_leaves_the_mean_gradient_alone() {
    let p = problem();
    let bound = p.observation.bind(&p.x);
    let model = Model { disease: &p.disease, prior: &p.prior, likelihood: &bound };
    let state = p.prior.initial_state();
    let reps = 3_000;
    let collect = |cv| -> Vec<Vec<f64>> {
        (0..reps)
            .map(|it| estimate_gradient(&state, &model, 8, cv, 17, it).likelihood.mean)
            .collect()
    };
    let with = collect(ControlVariate::LeaveOneOut);
    let without = collect(ControlVariate::None);
    for k in 0..state.mean.len() {
        let diff: Vec<f64> = with.iter().zip(&without).map(|(a, b)| a[k] - b[k]).collect();
        let n = diff.len() as f64;
        let mean = diff.iter().sum::<f64>() / n;
        let sd = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 4.5 * sd / n.sqrt() + 1e-12, "coordinate {k}: {mean} (sd {sd})");
    }
}
