//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and a
//! summary. Criteria run one after another so timings are not disturbed.
//!
//! A failing criterion is reported but does not fail the process unless
//! `WARPSKI_ACCEPTANCE_STRICT=1` is set; a crash always does.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpski::gp::{self, ApproxSettings};
use warpski::operators::{kernel_matrix, warped_kernel_matrix};
use warpski::{
    slq_logdet, GpModel, GridSpec, InducingGrid, Interval, Points, ProbeSet,
    SkiComponent, StationaryKernel, Warp,
};
use warpski_cli::config::ExperimentConfig;
use warpski_cli::experiments::{self, SOURCE_NAMES};
use warpski_cli::validate;

type Outcome = Result<String, String>;

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn cubic() -> Warp {
    Warp::polynomial(vec![2.0, 0.0, 1.0], Interval::new(-1.5, 1.5).unwrap()).unwrap()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn frob_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    num / b.iter().map(|q| q * q).sum::<f64>().sqrt()
}

fn inf_rel(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    num / b.iter().map(|q| q.abs()).fold(0.0, f64::max)
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ski_fidelity() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Points::from_1d(uniform(&mut rng, 500, -2.5, 2.5));
    let k = StationaryKernel::squared_exponential(1.5, 0.4).map_err(s)?;
    let c = SkiComponent::build_with_spec(k.clone(), Warp::identity(1), &GridSpec::Counts { counts: vec![512] }, &x)
        .map_err(s)?;
    let err = frob_rel(&c.to_dense(), &kernel_matrix(&k, &x).map_err(s)?);
    let secs = t.elapsed().as_secs_f64();
    verdict(
        err <= 1e-3 && secs < 5.0,
        format!("relative Frobenius error {err:.2e} (≤ 1e-3), {secs:.2}s (< 5s)"),
    )
}

fn warped_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Points::from_1d(uniform(&mut rng, 500, -1.2, 0.75));
    let k = StationaryKernel::squared_exponential(1.5, 0.4).map_err(s)?;
    let z = cubic().forward_points(&x).map_err(s)?;
    let grid = InducingGrid::covering(&z.bounding_box(), &[1024], 2).map_err(s)?;
    let a = SkiComponent::build(k.clone(), cubic(), grid.clone(), &x).map_err(s)?;
    let b = SkiComponent::build_via_warped_grid(k.clone(), cubic(), grid, &x).map_err(s)?;
    let err = frob_rel(&a.to_dense(), &warped_kernel_matrix(&k, &cubic(), &x).map_err(s)?);
    let v = uniform(&mut rng, 500, -1.0, 1.0);
    let gap = a
        .matvec(&v)
        .map_err(s)?
        .iter()
        .zip(&b.matvec(&v).map_err(s)?)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    verdict(
        err <= 1e-3 && gap <= 1e-12,
        format!("relative Frobenius error {err:.2e} (≤ 1e-3); construction paths differ by {gap:.2e} (≤ 1e-12)"),
    )
}

fn inference_oracle() -> Outcome {
    let cfg = ExperimentConfig::default();
    let data = experiments::synth_separation(&cfg.separation, 1500, 11).map_err(s)?;
    let x = data.points();
    let sp = &cfg.separation;
    let model = experiments::separation_model(
        sp,
        &data.warps,
        [sp.slow_amplitude, sp.fast_amplitude],
        data.noise_std.unwrap(),
    )
    .map_err(s)?;
    let op = model.operator(&x).map_err(s)?;
    let sep = gp::separate_operator(&op, &data.y, 1e-8, 10 * data.y.len()).map_err(s)?;
    let dense = op.to_dense().cholesky().ok_or("assembled kernel not positive definite")?;
    let alpha = dense.solve(&DVector::from_column_slice(&data.y));
    let solve_gap = rel_l2(&sep.alpha, alpha.as_slice());
    let oracle = gp::exact_separation(&model, &x, &data.y).map_err(s)?;
    let mean_gaps: Vec<f64> = sep.means.iter().zip(&oracle).map(|(m, o)| rel_l2(m, o)).collect();
    let worst = mean_gaps.iter().copied().fold(0.0, f64::max);
    verdict(
        solve_gap <= 1e-6 && worst <= 5e-2,
        format!(
            "CG vs dense solve {solve_gap:.2e} (≤ 1e-6); source means vs exact GP: {} {:.2e}, {} {:.2e} (≤ 5e-2)",
            SOURCE_NAMES[0], mean_gaps[0], SOURCE_NAMES[1], mean_gaps[1]
        ),
    )
}

fn slq_accuracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Points::from_1d(uniform(&mut rng, 500, -1.2, 0.75));
    let k = StationaryKernel::squared_exponential(1.5, 0.4).map_err(s)?;
    let a = warped_kernel_matrix(&k, &cubic(), &x).map_err(s)? + DMatrix::identity(500, 500) * 0.25;
    let chol = a.clone().cholesky().ok_or("not positive definite")?;
    let exact = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let errs = (0..10u64)
        .map(|seed| {
            let est = slq_logdet(&a, &ProbeSet::new(500, 20, seed).map_err(s)?, 30).map_err(s)?;
            Ok((est - exact).abs() / exact.abs())
        })
        .collect::<Result<Vec<f64>, String>>()?;
    let mean = errs.iter().sum::<f64>() / 10.0;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    verdict(
        mean <= 0.01 && worst <= 0.03,
        format!("mean relative error {:.3}% (≤ 1%), worst seed {:.3}% (≤ 3%)", 100.0 * mean, 100.0 * worst),
    )
}

/// Two-source mixture and 2-D warped instances at their starting points.
fn gradient_instances(n: usize) -> Result<Vec<(&'static str, GpModel, Points, Vec<f64>)>, String> {
    let cfg = ExperimentConfig::default();
    let sp = &cfg.separation;
    let data = experiments::synth_separation(sp, n, 21).map_err(s)?;
    let init = 0.5 * std_dev(&data.y);
    let sep = experiments::separation_model(sp, &data.warps, [init, init], init).map_err(s)?;
    let c = &cfg.numeric2d;
    let num = experiments::numeric2d_data(c, n, 22).map_err(s)?;
    let start = experiments::numeric2d_model(c, c.initial_amplitude, c.initial_lengthscale, c.initial_noise, [60, 60])
        .map_err(s)?;
    Ok(vec![
        ("two-source", sep, data.points(), data.y),
        ("warped 2-D", start, num.x, num.y),
    ])
}

fn std_dev(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn free_indices(model: &GpModel) -> Vec<usize> {
    let mask = model.fixed_mask().unwrap();
    (0..mask.len()).filter(|&j| !mask[j]).collect()
}

fn gradient_checks() -> Outcome {
    let h = 1e-5;
    let mut lines = Vec::new();
    let mut ok = true;

    // Exact dense gradient against central differences.
    for (name, model, x, y) in gradient_instances(300)? {
        let theta = model.log_params();
        let g = gp::exact_nlml(&model, &x, &y).map_err(s)?.gradient;
        let mut fd = Vec::new();
        for p in 0..theta.len() {
            let at = |d: f64| {
                let mut t = theta.clone();
                t[p] += d;
                gp::exact_nlml_value(&model.with_log_params(&t).map_err(s)?, &x, &y).map_err(s)
            };
            fd.push((at(h)? - at(-h)?) / (2.0 * h));
        }
        let e = inf_rel(&g, &fd);
        ok &= e <= 1e-6;
        lines.push(format!("exact/{name} {e:.1e}"));
    }

    // Stochastic gradient against differences of the same seeded objective.
    let tight = ApproxSettings {
        cg_tol: 1e-10,
        ..Default::default()
    };
    for (name, model, x, y) in gradient_instances(1000)? {
        let theta = model.log_params();
        let op = model.operator(&x).map_err(s)?;
        let probes = ProbeSet::new(x.len(), tight.probes, tight.seed).map_err(s)?;
        let free = free_indices(&model);
        let g = gp::approx_nlml_operator(&op, &y, &probes, &tight, None).map_err(s)?.gradient;
        let mut fd = Vec::new();
        let mut gf = Vec::new();
        for &p in &free {
            let at = |d: f64| {
                let mut t = theta.clone();
                t[p] += d;
                let o = op.with_log_params(&t).map_err(s)?;
                Ok::<f64, String>(
                    gp::approx_nlml_operator(&o, &y, &probes, &tight, Some(&vec![false; t.len()]))
                        .map_err(s)?
                        .value,
                )
            };
            fd.push((at(h)? - at(-h)?) / (2.0 * h));
            gf.push(g[p]);
        }
        let e = inf_rel(&gf, &fd);
        ok &= e <= 1e-4;
        lines.push(format!("approx/{name} {e:.1e}"));
    }

    // Direction of the learning-setting gradient against the exact one.
    let settings = ApproxSettings {
        cg_tol: ExperimentConfig::default().cg_tol_learning,
        ..Default::default()
    };
    for (name, model, x, y) in gradient_instances(1000)? {
        let free = free_indices(&model);
        let exact = gp::exact_nlml(&model, &x, &y).map_err(s)?.gradient;
        let approx = gp::approx_nlml(&model, &x, &y, &settings).map_err(s)?.gradient;
        let (a, e): (Vec<f64>, Vec<f64>) = free.iter().map(|&p| (approx[p], exact[p])).unzip();
        let dot: f64 = a.iter().zip(&e).map(|(p, q)| p * q).sum();
        let cos = dot / (a.iter().map(|v| v * v).sum::<f64>().sqrt() * e.iter().map(|v| v * v).sum::<f64>().sqrt());
        ok &= cos >= 0.99;
        lines.push(format!("cosine/{name} {cos:.4}"));
    }
    verdict(
        ok,
        format!("{} (bounds 1e-6, 1e-4, cosine ≥ 0.99)", lines.join(", ")),
    )
}

fn likelihood_curve() -> Outcome {
    let cfg = ExperimentConfig::default();
    let curve = experiments::likelihood_curve(&cfg, 2000, 15).map_err(s)?;
    let (a, e) = (curve.approx_argmin(), curve.exact_argmin());
    let gap = curve.relative_gap();
    verdict(
        a.abs_diff(e) <= 1 && gap <= 0.02,
        format!(
            "argmin {a} vs {e} (within one step); max gap {:.2}% of range after removing offset {:.3} (≤ 2%)",
            100.0 * gap,
            curve.offset()
        ),
    )
}

fn desk_replica() -> Outcome {
    let cfg = ExperimentConfig {
        timing_repeats: 1,
        ..Default::default()
    };
    let out = experiments::run_numeric2d(&cfg).map_err(s)?;
    let r = &out.report;
    let c = &cfg.numeric2d;
    let get = |n: &str| r.learned.iter().find(|(k, _)| k == n).map(|p| p.1).unwrap_or(f64::NAN);
    let rel = |v: f64, t: f64| (v - t).abs() / t;
    let (noise, amp, ls) = (get("noise_std"), get("0.amplitude"), get("0.lengthscale"));
    let worst = rel(noise, c.true_noise)
        .max(rel(amp, c.true_amplitude))
        .max(rel(ls, c.true_lengthscale));
    let rmse = r.rmse.unwrap_or(f64::NAN);
    let learn = r.learning_seconds.unwrap_or(f64::NAN);
    verdict(
        worst <= 0.2 && rmse <= 0.5 && learn <= 600.0,
        format!(
            "σ = {noise:.3}, σ_SE = {amp:.3}, ℓ_SE = {ls:.3} (worst deviation {:.1}%, ≤ 20%); RMSE {rmse:.3} (≤ 0.5); \
             learning {learn:.0}s (≤ 600s) in {} steps; inference {:.2}s, NLML eval {:.2}s",
            100.0 * worst,
            r.fit_steps.unwrap_or(0),
            r.inference_seconds,
            r.nlml_eval_seconds.unwrap_or(f64::NAN)
        ),
    )
}

fn scaling() -> Outcome {
    let cfg = ExperimentConfig::default();
    let out = experiments::run_sweep(&cfg).map_err(s)?;
    let ratios = &out.report.extra;
    let worst = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    let text: Vec<String> = ratios.iter().map(|(k, v)| format!("{k} {v:.2}")).collect();
    verdict(ratios.len() == 4 && worst <= 2.6, format!("{} (≤ 2.6 per doubling)", text.join(", ")))
}

fn separation_quality() -> Outcome {
    let mut cfg = ExperimentConfig {
        n: 20_000,
        timing_repeats: 1,
        ..Default::default()
    };
    cfg.kind = warpski_cli::config::ExperimentKind::Separation1d;
    let out = experiments::run_separation1d(&cfg).map_err(s)?;
    let r = &out.report;
    let snr = |n: &str| r.snr_improvement_db.iter().find(|(k, _)| k == n).map(|p| p.1).unwrap_or(f64::NAN);
    let fast = snr("fast");
    verdict(
        fast > 10.0,
        format!(
            "weaker source {fast:.1} dB (> 10 dB), stronger source {:.1} dB; learning {:.0}s, separation {:.2}s ({} CG iterations), m = {}",
            snr("slow"),
            r.learning_seconds.unwrap_or(f64::NAN),
            r.inference_seconds,
            r.inference_cg_iterations,
            r.inducing_points
        ),
    )
}

fn property_suites() -> Outcome {
    let t = Instant::now();
    let checks = validate::run_checks(None, |c| println!("    {c}"));
    let secs = t.elapsed().as_secs_f64();
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}::{}", c.module, c.name))
        .collect();
    verdict(
        failed.is_empty() && secs <= 900.0,
        format!(
            "{} checks, {} failed{} in {secs:.0}s (≤ 900s)",
            checks.len(),
            failed.len(),
            if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("SKI fidelity", ski_fidelity),
        ("warped SKI fidelity", warped_fidelity),
        ("inference oracle", inference_oracle),
        ("SLQ accuracy", slq_accuracy),
        ("gradient checks", gradient_checks),
        ("likelihood curve", likelihood_curve),
        ("2-D benchmark at n = 10^4", desk_replica),
        ("scaling", scaling),
        ("separation quality", separation_quality),
        ("property suites", property_suites),
    ];
    let only: Option<Vec<usize>> = std::env::var("WARPSKI_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let strict = std::env::var("WARPSKI_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut passed = 0;
    let mut run = 0;
    let mut crashed = false;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        run += 1;
        let t = Instant::now();
        let outcome = match std::panic::catch_unwind(f) {
            Ok(o) => o,
            Err(_) => {
                crashed = true;
                Err("panicked".into())
            }
        };
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => {
                passed += 1;
                println!("PASS [{id}] {name} ({secs:.1}s): {d}");
            }
            Err(d) => println!("FAIL [{id}] {name} ({secs:.1}s): {d}"),
        }
    }
    println!("acceptance: {passed}/{run} criteria passed");
    if crashed || (strict && passed < run) {
        std::process::exit(1);
    }
}
