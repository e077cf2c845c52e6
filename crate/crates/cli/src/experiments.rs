//! Experiment runners: data generation, fitting, inference, metrics and
//! the artifacts each run leaves behind.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use warpski::gp::{self, ApproxSettings, ComponentSpec, FitOptions, FitReport, GpModel};
use warpski::optimize::LbfgsOptions;
use warpski::{phase_from_events, GridSpec, Interval, LinearOperator, Points, StationaryKernel, Warp};

use crate::config::{ExperimentConfig, ExperimentKind, Numeric2dConfig, SeparationConfig};
use crate::error::CliError;
use crate::io::{self, Table};
use crate::metrics;
use crate::synth;

/// Names of the two separation sources, slow first.
pub const SOURCE_NAMES: [&str; 2] = ["slow", "fast"];

/// Metrics and timings of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub kind: String,
    pub n: usize,
    /// Total lattice size over all components.
    pub inducing_points: usize,
    pub inference_seconds: f64,
    pub nlml_eval_seconds: Option<f64>,
    pub learning_seconds: Option<f64>,
    pub inference_cg_iterations: usize,
    pub rmse: Option<f64>,
    pub nrmse: Option<f64>,
    /// SNR improvement per named source, in dB.
    pub snr_improvement_db: Vec<(String, f64)>,
    /// Relative L2 gap between SKI and dense-oracle source means.
    pub oracle_relative_l2: Vec<(String, f64)>,
    pub learned: Vec<(String, f64)>,
    pub fit_steps: Option<usize>,
    pub fit_evaluations: Option<usize>,
    pub final_objective: Option<f64>,
    /// Anything kind-specific.
    pub extra: Vec<(String, f64)>,
}

impl RunReport {
    /// The report as `metric,value` rows.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("kind".to_string(), self.kind.clone()),
            ("n".to_string(), self.n.to_string()),
            ("inducing_points".to_string(), self.inducing_points.to_string()),
            ("inference_seconds".to_string(), self.inference_seconds.to_string()),
            ("inference_cg_iterations".to_string(), self.inference_cg_iterations.to_string()),
        ];
        let mut opt = |name: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((name.to_string(), v));
            }
        };
        opt("nlml_eval_seconds", self.nlml_eval_seconds.map(|v| v.to_string()));
        opt("learning_seconds", self.learning_seconds.map(|v| v.to_string()));
        opt("rmse", self.rmse.map(|v| v.to_string()));
        opt("nrmse", self.nrmse.map(|v| v.to_string()));
        opt("fit_steps", self.fit_steps.map(|v| v.to_string()));
        opt("fit_evaluations", self.fit_evaluations.map(|v| v.to_string()));
        opt("final_objective", self.final_objective.map(|v| v.to_string()));
        for (name, v) in &self.snr_improvement_db {
            out.push((format!("snr_improvement_db.{name}"), v.to_string()));
        }
        if !self.snr_improvement_db.is_empty() {
            out.push((
                "snr_improvement_formula".to_string(),
                "10*log10(|raw-truth|^2/|cleaned-truth|^2), raw = observed mixture".to_string(),
            ));
        }
        for (name, v) in &self.oracle_relative_l2 {
            out.push((format!("oracle_relative_l2.{name}"), v.to_string()));
        }
        for (name, v) in &self.learned {
            out.push((format!("learned.{name}"), v.to_string()));
        }
        for (name, v) in &self.extra {
            out.push((name.clone(), v.to_string()));
        }
        out
    }

    /// A copy with every wall-clock measurement zeroed, for comparing runs.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.inference_seconds = 0.0;
        r.nlml_eval_seconds = r.nlml_eval_seconds.map(|_| 0.0);
        r.learning_seconds = r.learning_seconds.map(|_| 0.0);
        for (name, v) in &mut r.extra {
            if name.contains("seconds") || name.contains("ratio") {
                *v = 0.0;
            }
        }
        r
    }
}

/// A report plus the tables written under `curves/` and `separated/`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: RunReport,
    pub curves: Vec<(String, Table)>,
    pub separated: Vec<(String, Table)>,
}

/// Write the config echo, the report and every table under `dir`.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, output: &RunOutput) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let echo = dir.join("config_echo.toml");
    std::fs::write(&echo, config.to_toml()).map_err(|e| CliError::io(&echo, e))?;
    io::save_report_csv(&dir.join("report.csv"), &output.report.entries())?;
    for (name, table) in &output.curves {
        io::save_table_csv(&dir.join("curves").join(format!("{name}.csv")), table)?;
    }
    for (name, table) in &output.separated {
        io::save_table_csv(&dir.join("separated").join(format!("{name}.csv")), table)?;
    }
    Ok(())
}

/// Shortest wall time one timing sample may cover. Faster calls are repeated
/// inside the sample and the per-call average is recorded, so millisecond
/// operations are not swamped by timer and scheduler jitter.
const MIN_SAMPLE_SECONDS: f64 = 0.2;

/// Run `f` once as a warm-up, then take `repeats` timing samples; returns the
/// last value and the median per-call wall time in seconds.
pub fn median_time<T>(repeats: usize, mut f: impl FnMut() -> Result<T, CliError>) -> Result<(T, f64), CliError> {
    f()?;
    let mut times = Vec::with_capacity(repeats.max(1));
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let mut calls = 0u32;
        let elapsed = loop {
            last = Some(f()?);
            calls += 1;
            let e = t.elapsed().as_secs_f64();
            if e >= MIN_SAMPLE_SECONDS {
                break e;
            }
        };
        times.push(elapsed / f64::from(calls));
    }
    times.sort_by(f64::total_cmp);
    Ok((last.expect("at least one repeat"), times[times.len() / 2]))
}

/// Fit settings derived from a config.
pub fn fit_options(cfg: &ExperimentConfig) -> FitOptions {
    FitOptions {
        approx: approx_settings(cfg),
        lbfgs: LbfgsOptions {
            max_steps: cfg.max_steps,
            ..LbfgsOptions::default()
        },
        resample_probes: cfg.resample_probes,
    }
}

pub fn approx_settings(cfg: &ExperimentConfig) -> ApproxSettings {
    ApproxSettings {
        probes: cfg.probes,
        seed: cfg.seed,
        cg_tol: cfg.cg_tol_learning,
        lanczos_steps: cfg.lanczos_steps,
        max_cg_iter: None,
    }
}

fn fit_summary(report: &mut RunReport, fit: &FitReport, model: &GpModel) {
    report.learning_seconds = Some(fit.seconds);
    report.fit_steps = Some(fit.steps);
    report.fit_evaluations = Some(fit.evaluations);
    report.final_objective = fit.trace.last().copied();
    report.learned = model.named_params();
}

fn trace_table(fit: &FitReport) -> Result<Table, CliError> {
    let steps: Vec<f64> = (0..fit.trace.len()).map(|s| s as f64).collect();
    Table::from_columns(&[("step", &steps), ("objective", &fit.trace)])
}

fn sum_columns(parts: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for p in parts {
        out.iter_mut().zip(p).for_each(|(o, v)| *o += v);
    }
    out
}

fn std_dev(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

// ---------------------------------------------------------------------------
// Warped 2-D benchmark

/// Inputs, noise-free latent draw and noisy targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Numeric2dData {
    pub x: Points,
    pub latent: Vec<f64>,
    pub y: Vec<f64>,
}

/// Polynomial warp on the first input, identity on the second.
pub fn numeric2d_warp(c: &Numeric2dConfig) -> Result<Warp, CliError> {
    let first = Warp::polynomial(c.warp_coeffs.clone(), Interval::new(c.x_range[0], c.x_range[1])?)?;
    let second = Warp::identity_on(vec![Interval::new(c.y_range[0], c.y_range[1])?]);
    Ok(Warp::elementwise(vec![first, second])?)
}

/// Single warped SE component on a fixed lattice.
pub fn numeric2d_model(
    c: &Numeric2dConfig,
    amplitude: f64,
    lengthscale: f64,
    noise_std: f64,
    grid: [usize; 2],
) -> Result<GpModel, CliError> {
    let kernel = StationaryKernel::squared_exponential_nd(amplitude, lengthscale, 2)?;
    Ok(GpModel::new(
        vec![ComponentSpec::new(
            kernel,
            numeric2d_warp(c)?,
            GridSpec::Counts { counts: grid.to_vec() },
        )],
        noise_std,
    )?)
}

/// Uniform inputs in the configured box and a draw from the true model on
/// the dense sampling lattice.
pub fn numeric2d_data(c: &Numeric2dConfig, n: usize, seed: u64) -> Result<Numeric2dData, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        data.push(rng.random_range(c.x_range[0]..c.x_range[1]));
        data.push(rng.random_range(c.y_range[0]..c.y_range[1]));
    }
    let x = Points::new(2, data)?;
    let truth = numeric2d_model(c, c.true_amplitude, c.true_lengthscale, c.true_noise, c.sample_grid_counts)?;
    let sample = gp::sample_prior(&truth, &x, rng.random())?;
    Ok(Numeric2dData {
        x,
        latent: sample.latent,
        y: sample.targets,
    })
}

/// Draw, fit, infer and score the 2-D benchmark.
pub fn run_numeric2d(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let c = &cfg.numeric2d;
    let data = numeric2d_data(c, cfg.n, cfg.seed)?;
    let mut report = RunReport {
        kind: "numeric2d".into(),
        n: cfg.n,
        inducing_points: c.grid_counts.iter().product(),
        ..Default::default()
    };
    let mut curves = Vec::new();
    let model = if c.fit {
        let start = numeric2d_model(c, c.initial_amplitude, c.initial_lengthscale, c.initial_noise, c.grid_counts)?;
        let fitted = gp::fit(&start, &data.x, &data.y, &fit_options(cfg))?;
        fit_summary(&mut report, &fitted.report, &fitted.model);
        curves.push(("fit_trace".to_string(), trace_table(&fitted.report)?));
        fitted.model
    } else {
        let m = numeric2d_model(c, c.true_amplitude, c.true_lengthscale, c.true_noise, c.grid_counts)?;
        report.learned = m.named_params();
        m
    };

    let settings = approx_settings(cfg);
    let (_, nlml_seconds) = median_time(cfg.timing_repeats, || Ok(gp::approx_nlml(&model, &data.x, &data.y, &settings)?))?;
    report.nlml_eval_seconds = Some(nlml_seconds);

    let (sep, inference_seconds) = median_time(cfg.timing_repeats, || {
        let op = model.operator(&data.x)?;
        Ok(gp::separate_operator(&op, &data.y, cfg.cg_tol_inference, cfg.n)?)
    })?;
    report.inference_seconds = inference_seconds;
    report.inference_cg_iterations = sep.cg_iterations;
    let mean = sum_columns(&sep.means, cfg.n);
    report.rmse = Some(metrics::rmse(&mean, &data.latent)?);
    report.nrmse = Some(metrics::nrmse(&mean, &data.latent)?);

    let x0 = data.x.column(0);
    let x1 = data.x.column(1);
    curves.push((
        "posterior".to_string(),
        Table::from_columns(&[
            ("x0", &x0),
            ("x1", &x1),
            ("target", &data.y),
            ("latent", &data.latent),
            ("mean", &mean),
        ])?,
    ));
    Ok(RunOutput {
        report,
        curves,
        separated: vec![],
    })
}

// ---------------------------------------------------------------------------
// Two-source separation

/// Observations, their phase warps and (for synthetic data) ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationData {
    pub time: Vec<f64>,
    pub y: Vec<f64>,
    pub warps: [Warp; 2],
    /// Ground-truth sources, slow first.
    pub sources: Option<[Vec<f64>; 2]>,
    pub noise_std: Option<f64>,
}

impl SeparationData {
    pub fn points(&self) -> Points {
        Points::from_1d(self.time.clone())
    }
}

/// Names of the parameters held fixed during separation fits.
pub fn separation_fixed_params() -> Vec<String> {
    (0..2)
        .flat_map(|j| {
            ["lengthscale", "periodic_lengthscale", "period"]
                .into_iter()
                .map(move |p| format!("{j}.{p}"))
        })
        .collect()
}

/// Two quasi-periodic components with period `2π` in phase, on the given
/// warps. Only amplitudes and noise are free.
pub fn separation_model(
    s: &SeparationConfig,
    warps: &[Warp; 2],
    amplitudes: [f64; 2],
    noise_std: f64,
) -> Result<GpModel, CliError> {
    let components = warps
        .iter()
        .zip(amplitudes)
        .map(|(w, a)| {
            let k = StationaryKernel::quasi_periodic(a, s.envelope_events * 2.0 * PI, s.periodic_lengthscale, 2.0 * PI)?;
            Ok(ComponentSpec::new(
                k,
                w.clone(),
                GridSpec::PointsPerLengthscale {
                    points: s.points_per_lengthscale,
                },
            ))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(GpModel::new(components, noise_std)?.with_fixed(&separation_fixed_params())?)
}

/// Noise standard deviation giving the configured fast-source SNR. With no
/// fast source the slow amplitude is the reference.
pub fn separation_noise_std(s: &SeparationConfig) -> f64 {
    let reference = if s.fast_amplitude > 0.0 { s.fast_amplitude } else { s.slow_amplitude };
    reference * 10f64.powf(-s.fast_snr_db / 20.0)
}

/// Synthetic mixture: jittered event streams, exact quasi-periodic draws on
/// their phases and white noise.
pub fn synth_separation(s: &SeparationConfig, n: usize, seed: u64) -> Result<SeparationData, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let time: Vec<f64> = (0..n).map(|i| i as f64 / s.sample_rate).collect();
    let end = time.last().copied().unwrap_or(0.0);
    let slow_events = synth::jittered_events(0.0, end, s.slow_period, s.period_jitter, &mut rng);
    let fast_events = synth::jittered_events(0.0, end, s.slow_period / s.period_ratio, s.period_jitter, &mut rng);
    let warps = [phase_from_events(&slow_events, true)?, phase_from_events(&fast_events, true)?];
    let x = Points::from_1d(time.clone());
    let envelope = s.envelope_events * 2.0 * PI;
    let mut sources = Vec::with_capacity(2);
    for (w, amp) in warps.iter().zip([s.slow_amplitude, s.fast_amplitude]) {
        let phases = w.forward_points(&x)?.as_slice().to_vec();
        sources.push(synth::quasi_periodic_draw(&phases, amp, envelope, s.periodic_lengthscale, &mut rng)?);
    }
    let noise_std = separation_noise_std(s);
    let y = (0..n)
        .map(|i| {
            let e: f64 = StandardNormal.sample(&mut rng);
            sources[0][i] + sources[1][i] + noise_std * e
        })
        .collect();
    let fast = sources.pop().expect("two sources");
    let slow = sources.pop().expect("two sources");
    Ok(SeparationData {
        time,
        y,
        warps,
        sources: Some([slow, fast]),
        noise_std: Some(noise_std),
    })
}

fn load_separation(cfg: &ExperimentConfig) -> Result<SeparationData, CliError> {
    match &cfg.separation.data {
        None => synth_separation(&cfg.separation, cfg.n, cfg.seed),
        Some(rec) => {
            let series = io::load_series_csv(&rec.series)?;
            let slow = io::load_events_csv(&rec.slow_events)?;
            let fast = io::load_events_csv(&rec.fast_events)?;
            Ok(SeparationData {
                time: series.time,
                y: series.value,
                warps: [phase_from_events(&slow, true)?, phase_from_events(&fast, true)?],
                sources: None,
                noise_std: None,
            })
        }
    }
}

/// Generate (or load) a two-source mixture, fit amplitudes and noise,
/// separate and score.
pub fn run_separation1d(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let s = &cfg.separation;
    let data = load_separation(cfg)?;
    let n = data.y.len();
    let x = data.points();
    let mut report = RunReport {
        kind: "separation1d".into(),
        n,
        ..Default::default()
    };
    let mut curves = Vec::new();
    let model = match (s.fit, &data.sources) {
        (false, Some(_)) => separation_model(
            s,
            &data.warps,
            [s.slow_amplitude.max(f64::MIN_POSITIVE), s.fast_amplitude.max(f64::MIN_POSITIVE)],
            data.noise_std.unwrap_or(1.0),
        )?,
        _ => {
            let init = s.initial_fraction * std_dev(&data.y);
            let start = separation_model(s, &data.warps, [init, init], init)?;
            if s.fit {
                let fitted = gp::fit(&start, &x, &data.y, &fit_options(cfg))?;
                fit_summary(&mut report, &fitted.report, &fitted.model);
                curves.push(("fit_trace".to_string(), trace_table(&fitted.report)?));
                fitted.model
            } else {
                start
            }
        }
    };
    if report.learned.is_empty() {
        report.learned = model.named_params();
    }

    let (sep, seconds) = median_time(cfg.timing_repeats, || {
        let op = model.operator(&x)?;
        Ok(gp::separate_operator(&op, &data.y, cfg.cg_tol_separation, n)?)
    })?;
    report.inference_seconds = seconds;
    report.inference_cg_iterations = sep.cg_iterations;
    report.inducing_points = model.operator(&x)?.components().iter().map(|c| c.kuu().size()).sum();

    let mut columns: Vec<(String, Vec<f64>)> = vec![("time".into(), data.time.clone()), ("observed".into(), data.y.clone())];
    for (name, mean) in SOURCE_NAMES.iter().zip(&sep.means) {
        columns.push((format!("{name}_mean"), mean.clone()));
    }
    if let Some(truth) = &data.sources {
        for ((name, mean), t) in SOURCE_NAMES.iter().zip(&sep.means).zip(truth) {
            report
                .snr_improvement_db
                .push((name.to_string(), metrics::snr_improvement(&data.y, mean, t)?));
            columns.push((format!("{name}_truth"), t.clone()));
        }
    }
    if n <= s.oracle_max_n {
        let oracle = gp::exact_separation(&model, &x, &data.y)?;
        for ((name, mean), o) in SOURCE_NAMES.iter().zip(&sep.means).zip(&oracle) {
            report
                .oracle_relative_l2
                .push((name.to_string(), metrics::relative_l2(mean, o)?));
            columns.push((format!("{name}_oracle"), o.clone()));
        }
    }
    let refs: Vec<(&str, &[f64])> = columns.iter().map(|(k, v)| (k.as_str(), v.as_slice())).collect();
    Ok(RunOutput {
        report,
        curves,
        separated: vec![("sources".to_string(), Table::from_columns(&refs)?)],
    })
}

/// A user-supplied model on a recorded `time,value` series.
pub fn run_custom(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let custom = cfg
        .custom
        .as_ref()
        .ok_or_else(|| CliError::config("custom", "required when kind = \"custom\""))?;
    let series = io::load_series_csv(&custom.series)?;
    let n = series.value.len();
    let x = Points::from_1d(series.time.clone());
    let mut report = RunReport {
        kind: "custom".into(),
        n,
        ..Default::default()
    };
    let mut curves = Vec::new();
    let model = if custom.fit {
        let fitted = gp::fit(&custom.model, &x, &series.value, &fit_options(cfg))?;
        fit_summary(&mut report, &fitted.report, &fitted.model);
        curves.push(("fit_trace".to_string(), trace_table(&fitted.report)?));
        fitted.model
    } else {
        report.learned = custom.model.named_params();
        custom.model.clone()
    };
    let (sep, seconds) = median_time(cfg.timing_repeats, || {
        let op = model.operator(&x)?;
        Ok(gp::separate_operator(&op, &series.value, cfg.cg_tol_separation, n)?)
    })?;
    report.inference_seconds = seconds;
    report.inference_cg_iterations = sep.cg_iterations;
    report.inducing_points = model.operator(&x)?.components().iter().map(|c| c.kuu().size()).sum();
    let mut columns: Vec<(String, Vec<f64>)> = vec![("time".into(), series.time.clone()), ("observed".into(), series.value.clone())];
    for (j, mean) in sep.means.iter().enumerate() {
        columns.push((format!("component_{j}"), mean.clone()));
    }
    let refs: Vec<(&str, &[f64])> = columns.iter().map(|(k, v)| (k.as_str(), v.as_slice())).collect();
    Ok(RunOutput {
        report,
        curves,
        separated: vec![("components".to_string(), Table::from_columns(&refs)?)],
    })
}

/// Dispatch on the configured kind.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    match cfg.kind {
        ExperimentKind::Numeric2d => run_numeric2d(cfg),
        ExperimentKind::Separation1d => run_separation1d(cfg),
        ExperimentKind::Custom => run_custom(cfg),
    }
}

// ---------------------------------------------------------------------------
// Scaling sweep

/// One timed point of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub m: usize,
    pub mvm_seconds: f64,
    pub inference_seconds: f64,
    pub cg_iterations: usize,
    pub rmse: f64,
}

fn sweep_point(cfg: &ExperimentConfig, n: usize, grid: [usize; 2]) -> Result<SweepRow, CliError> {
    let c = &cfg.numeric2d;
    let data = numeric2d_data(c, n, cfg.seed)?;
    let model = numeric2d_model(c, c.true_amplitude, c.true_lengthscale, c.true_noise, grid)?;
    let op = model.operator(&data.x)?;
    let (_, mvm_seconds) = median_time(cfg.timing_repeats, || Ok(op.apply(&data.y)))?;
    let (sep, inference_seconds) = median_time(cfg.timing_repeats, || {
        let op = model.operator(&data.x)?;
        Ok(gp::separate_operator(&op, &data.y, cfg.cg_tol_inference, n)?)
    })?;
    let mean = sum_columns(&sep.means, n);
    Ok(SweepRow {
        n,
        m: grid.iter().product(),
        mvm_seconds,
        inference_seconds,
        cg_iterations: sep.cg_iterations,
        rmse: metrics::rmse(&mean, &data.latent)?,
    })
}

/// Largest growth factor of `time` per doubling of `size` between
/// consecutive rows, `(t₂/t₁)^(1/log₂(s₂/s₁))`.
pub fn max_ratio_per_doubling(size: &[f64], time: &[f64]) -> f64 {
    size.windows(2)
        .zip(time.windows(2))
        .map(|(s, t)| (t[1] / t[0]).powf(1.0 / (s[1] / s[0]).log2()))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn sweep_table(rows: &[SweepRow]) -> Result<Table, CliError> {
    let col = |f: &dyn Fn(&SweepRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    Table::from_columns(&[
        ("n", &col(&|r| r.n as f64)),
        ("m", &col(&|r| r.m as f64)),
        ("mvm_seconds", &col(&|r| r.mvm_seconds)),
        ("inference_seconds", &col(&|r| r.inference_seconds)),
        ("cg_iterations", &col(&|r| r.cg_iterations as f64)),
        ("rmse", &col(&|r| r.rmse)),
    ])
}

/// Time MVMs and inference while doubling n at a fixed lattice, then while
/// growing the lattice at fixed n.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let w = &cfg.sweep;
    let by_n = w
        .n_values
        .iter()
        .map(|&n| sweep_point(cfg, n, w.fixed_grid))
        .collect::<Result<Vec<_>, _>>()?;
    let by_m = w
        .grids
        .iter()
        .map(|&g| sweep_point(cfg, w.fixed_n, g))
        .collect::<Result<Vec<_>, _>>()?;
    let mut extra = Vec::new();
    for (label, rows, size) in [
        ("n", &by_n, by_n.iter().map(|r| r.n as f64).collect::<Vec<_>>()),
        ("m", &by_m, by_m.iter().map(|r| r.m as f64).collect::<Vec<_>>()),
    ] {
        if rows.len() >= 2 {
            let mvm: Vec<f64> = rows.iter().map(|r| r.mvm_seconds).collect();
            let inf: Vec<f64> = rows.iter().map(|r| r.inference_seconds).collect();
            extra.push((format!("scaling_{label}.mvm_max_ratio_per_doubling"), max_ratio_per_doubling(&size, &mvm)));
            extra.push((format!("scaling_{label}.inference_max_ratio_per_doubling"), max_ratio_per_doubling(&size, &inf)));
        }
    }
    let report = RunReport {
        kind: "sweep".into(),
        n: w.fixed_n,
        inducing_points: w.fixed_grid.iter().product(),
        extra,
        ..Default::default()
    };
    Ok(RunOutput {
        report,
        curves: vec![("scaling_n".into(), sweep_table(&by_n)?), ("scaling_m".into(), sweep_table(&by_m)?)],
        separated: vec![],
    })
}

// ---------------------------------------------------------------------------
// Likelihood curve

/// Exact and stochastic NLML along a sweep of one amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodCurve {
    pub parameter: String,
    pub values: Vec<f64>,
    pub exact: Vec<f64>,
    pub approx: Vec<f64>,
}

impl LikelihoodCurve {
    fn argmin(v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i)
    }

    pub fn exact_argmin(&self) -> usize {
        Self::argmin(&self.exact)
    }

    pub fn approx_argmin(&self) -> usize {
        Self::argmin(&self.approx)
    }

    /// Mean of `approx − exact`, the additive offset between the curves.
    pub fn offset(&self) -> f64 {
        self.approx.iter().zip(&self.exact).map(|(a, e)| a - e).sum::<f64>() / self.exact.len() as f64
    }

    /// Largest pointwise gap after removing the offset, relative to the
    /// exact curve's range.
    pub fn relative_gap(&self) -> f64 {
        let off = self.offset();
        let gap = self
            .approx
            .iter()
            .zip(&self.exact)
            .map(|(a, e)| (a - off - e).abs())
            .fold(0.0, f64::max);
        let (lo, hi) = self
            .exact
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        gap / (hi - lo)
    }

    pub fn table(&self) -> Result<Table, CliError> {
        Table::from_columns(&[(self.parameter.as_str(), &self.values), ("exact", &self.exact), ("approx", &self.approx)])
    }
}

/// Sweep the fast-source amplitude geometrically over `[truth/4, 4·truth]`
/// on a synthetic mixture of size `n`, evaluating the dense exact NLML and
/// the stochastic NLML with one frozen probe set.
pub fn likelihood_curve(cfg: &ExperimentConfig, n: usize, points: usize) -> Result<LikelihoodCurve, CliError> {
    let s = &cfg.separation;
    let data = synth_separation(s, n, cfg.seed)?;
    let x = data.points();
    let truth = s.fast_amplitude;
    if !(truth > 0.0) {
        return Err(CliError::config("separation.fast_amplitude", "must be positive for a likelihood sweep"));
    }
    let values: Vec<f64> = (0..points)
        .map(|i| truth * 4f64.powf(2.0 * i as f64 / (points.max(2) - 1) as f64 - 1.0))
        .collect();
    let noise = data.noise_std.unwrap_or(1.0);
    let settings = approx_settings(cfg);
    let probes = warpski::ProbeSet::new(n, settings.probes, settings.seed)?;
    let base = separation_model(s, &data.warps, [s.slow_amplitude, truth], noise)?;
    let base_op = base.operator(&x)?;
    let names = base.param_names();
    let which = names
        .iter()
        .position(|p| p == "1.amplitude")
        .expect("two quasi-periodic components");
    let mut exact = Vec::with_capacity(points);
    let mut approx = Vec::with_capacity(points);
    for &v in &values {
        let mut theta = base.log_params();
        theta[which] = v.ln();
        let model = base.with_log_params(&theta)?;
        exact.push(gp::exact_nlml_value(&model, &x, &data.y)?);
        let op = base_op.with_log_params(&theta)?;
        approx.push(gp::approx_nlml_operator(&op, &data.y, &probes, &settings, Some(&vec![false; theta.len()]))?.value);
    }
    Ok(LikelihoodCurve {
        parameter: "fast_amplitude".into(),
        values,
        exact,
        approx,
    })
}
