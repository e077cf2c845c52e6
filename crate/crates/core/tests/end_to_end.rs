use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpski::gp::{self, ApproxSettings, FitOptions};
use warpski::optimize::LbfgsOptions;
use warpski::{phase_from_events, ComponentSpec, GpModel, GridSpec, Interval, Points, StationaryKernel, Warp};

fn events(start: f64, period: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| start + period * k as f64).collect()
}

fn mixture(slow: f64, fast: f64, noise: f64) -> GpModel {
    let comp = |ev: Vec<f64>, amp: f64| {
        ComponentSpec::new(
            StationaryKernel::quasi_periodic(amp, 16.0 * PI, 0.7, 2.0 * PI).unwrap(),
            phase_from_events(&ev, true).unwrap(),
            GridSpec::PointsPerLengthscale { points: 5.0 },
        )
    };
    GpModel::new(vec![comp(events(-1.0, 0.8, 14), slow), comp(events(-0.4, 0.29, 36), fast)], noise)
        .unwrap()
        .with_fixed(&[
            "0.lengthscale",
            "0.periodic_lengthscale",
            "0.period",
            "1.lengthscale",
            "1.periodic_lengthscale",
            "1.period",
        ])
        .unwrap()
}

#[test]
fn sample_fit_and_separate_a_two_source_mixture() {
    let x = Points::from_1d((0..1200).map(|i| i as f64 / 150.0).collect());
    let truth = mixture(1.0, 0.4, 0.1);
    let sample = gp::sample_prior(&truth, &x, 3).unwrap();

    let start = mixture(0.5, 0.5, 0.5);
    let options = FitOptions {
        lbfgs: LbfgsOptions {
            max_steps: 30,
            ..Default::default()
        },
        approx: ApproxSettings {
            cg_tol: 1e-5,
            ..Default::default()
        },
        ..Default::default()
    };
    let fitted = gp::fit(&start, &x, &sample.targets, &options).unwrap();
    assert!(fitted.report.trace.last().unwrap() < &fitted.report.trace[0]);
    // Only the two amplitudes and the noise move.
    for (name, (a, b)) in start
        .param_names()
        .iter()
        .zip(start.log_params().iter().zip(fitted.model.log_params()))
    {
        let free = name.ends_with("amplitude") || name == "noise_std";
        assert_eq!(free, *a != b, "{name}");
    }

    let sep = gp::separate(&fitted.model, &x, &sample.targets, 1e-6).unwrap();
    for (mean, truth) in sep.means.iter().zip(&sample.components) {
        let err: f64 = mean.iter().zip(truth).map(|(m, t)| (m - t).powi(2)).sum::<f64>();
        let raw: f64 = sample.targets.iter().zip(truth).map(|(y, t)| (y - t).powi(2)).sum::<f64>();
        assert!(10.0 * (raw / err).log10() > 10.0);
    }
}

#[test]
fn stochastic_and_exact_likelihoods_agree_on_a_small_problem() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let warp = Warp::polynomial(vec![2.0, 0.0, 1.0], Interval::new(-1.5, 1.5).unwrap()).unwrap();
    let x = Points::from_1d((0..400).map(|_| rng.random_range(-1.2..0.75)).collect());
    let model = GpModel::new(
        vec![ComponentSpec::new(
            StationaryKernel::squared_exponential(1.5, 0.4).unwrap(),
            warp,
            GridSpec::Counts { counts: vec![300] },
        )],
        0.5,
    )
    .unwrap();
    let y = gp::sample_prior(&model, &x, 1).unwrap().targets;
    let exact = gp::exact_nlml(&model, &x, &y).unwrap();
    let approx = gp::approx_nlml(&model, &x, &y, &ApproxSettings::default()).unwrap();
    assert!((approx.value - exact.value).abs() < 0.01 * exact.value.abs());
    let dot: f64 = approx.gradient.iter().zip(&exact.gradient).map(|(a, b)| a * b).sum();
    let na: f64 = approx.gradient.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb: f64 = exact.gradient.iter().map(|b| b * b).sum::<f64>().sqrt();
    assert!(dot / (na * nb) > 0.95);
}

#[test]
fn models_survive_a_toml_round_trip() {
    let model = mixture(1.0, 0.3, 0.2);
    let text = toml::to_string(&model).unwrap();
    let back: GpModel = toml::from_str(&text).unwrap();
    assert_eq!(back, model);
    let x = Points::from_1d((0..300).map(|i| i as f64 / 100.0).collect());
    let v: Vec<f64> = (0..300).map(|i| (i as f64 * 0.1).sin()).collect();
    let a = model.operator(&x).unwrap().matvec(&v).unwrap();
    let b = back.operator(&x).unwrap().matvec(&v).unwrap();
    assert_eq!(a, b);
}

#[test]
fn predictions_extend_beyond_training_inputs() {
    let x = Points::from_1d((0..500).map(|i| i as f64 / 100.0).collect());
    let model = mixture(1.0, 0.4, 0.1);
    let y = gp::sample_prior(&model, &x, 9).unwrap().targets;
    let op = model.operator(&x).unwrap();
    let sep = gp::separate_operator(&op, &y, 1e-9, 5000).unwrap();
    let xs = Points::from_1d(vec![0.505, 1.234, 3.333]);
    let fast = gp::predict_mean(&op, &xs, &sep.alpha).unwrap();
    let dense = gp::exact_predict_mean(&model, &x, &y, &xs).unwrap();
    for (f, d) in fast.iter().zip(&dense) {
        assert!((f - d).abs() < 2e-2 * d.abs().max(0.1), "{f} vs {d}");
    }
}
