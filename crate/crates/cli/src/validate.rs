//! Invariant and dense-oracle checks for every module, run by the
//! `validate` subcommand.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpski::grid::{interpolation_weights, AxisSpec, InducingGrid};
use warpski::operators::{is_toeplitz, kernel_matrix, warped_kernel_matrix};
use warpski::{
    cg_solve, gp, lanczos, phase_from_events, slq_logdet, ComponentSpec, GpModel, GridSpec, Interval,
    KronFactor, KronOperator, LinearOperator, Points, ProbeSet, SkiComponent, StationaryKernel, SymToeplitz, Warp,
};

use crate::config::ExperimentConfig;
use crate::experiments;
use crate::io;
use crate::metrics;

/// Outcome of one check: a summary on success, the violation on failure.
pub type Outcome = Result<String, String>;

/// Result of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub module: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}::{} ({:.2}s) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.module,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

type CheckFn = fn() -> Outcome;

/// Every check as `(module, name, function)`.
pub fn all_checks() -> Vec<(&'static str, &'static str, CheckFn)> {
    vec![
        ("kernels", "symmetry", kernels_symmetry),
        ("kernels", "gradient_vs_finite_differences", kernels_gradient),
        ("kernels", "product_is_kronecker", kernels_separability),
        ("kernels", "quasi_periodic_is_product", kernels_quasi_periodic),
        ("warping", "round_trip", warping_round_trip),
        ("warping", "monotone", warping_monotone),
        ("warping", "lattice_maps_to_lattice", warping_lattice),
        ("grid", "rows_sum_to_one", grid_rows),
        ("grid", "ski_accuracy", grid_accuracy),
        ("grid", "warped_grid_accuracy", grid_warped_accuracy),
        ("linalg", "toeplitz_matches_dense", linalg_toeplitz),
        ("linalg", "kronecker_matches_dense", linalg_kronecker),
        ("linalg", "composite_symmetry", linalg_symmetry),
        ("linalg", "toeplitz_scaling", linalg_scaling),
        ("operators", "construction_paths_agree", operators_paths),
        ("operators", "symmetry", operators_symmetry),
        ("operators", "positive_definite_with_noise", operators_pd),
        ("operators", "toeplitz_structure", operators_structure),
        ("krylov", "cg_energy_error_decreases", krylov_energy),
        ("krylov", "slq_mean_over_seeds", krylov_slq_mean),
        ("krylov", "probe_reproducibility", krylov_probes),
        ("krylov", "quadrature_exactness", krylov_exactness),
        ("gp", "oracle_agreement_with_density", gp_oracle),
        ("gp", "separation_identity", gp_separation_identity),
        ("gp", "gradient_consistency", gp_gradient),
        ("gp", "likelihood_argmin_stability", gp_argmin),
        ("cli", "metrics_examples", cli_metrics),
        ("cli", "determinism", cli_determinism),
        ("cli", "outputs_regenerable", cli_regenerable),
    ]
}

/// Run the checks whose `module::name` contains `filter` (all when `None`),
/// reporting each through `on_result` as it finishes.
pub fn run_checks(filter: Option<&str>, mut on_result: impl FnMut(&Check)) -> Vec<Check> {
    let mut out = Vec::new();
    for (module, name, f) in all_checks() {
        if let Some(pat) = filter {
            if !format!("{module}::{name}").contains(pat) {
                continue;
            }
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        let check = Check {
            module,
            name,
            passed,
            detail,
            seconds: t.elapsed().as_secs_f64(),
        };
        on_result(&check);
        out.push(check);
    }
    out
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn cubic() -> Warp {
    Warp::polynomial(vec![2.0, 0.0, 1.0], Interval::new(-1.5, 1.5).expect("valid")).expect("monotone")
}

fn uniform(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
    norm(&d) / norm(b).max(f64::MIN_POSITIVE)
}

fn frob_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn test_kernels() -> Vec<StationaryKernel> {
    vec![
        StationaryKernel::squared_exponential(1.3, 0.7).expect("valid"),
        StationaryKernel::squared_exponential_nd(0.8, 1.1, 2).expect("valid"),
        StationaryKernel::periodic(1.1, 0.9, 2.3).expect("valid"),
        StationaryKernel::quasi_periodic(0.9, 3.0, 0.6, 2.0 * PI).expect("valid"),
        StationaryKernel::product(vec![
            StationaryKernel::squared_exponential(1.2, 0.5).expect("valid"),
            StationaryKernel::periodic(0.7, 1.0, 1.5).expect("valid"),
        ])
        .expect("valid"),
    ]
}

// kernels ------------------------------------------------------------------

fn kernels_symmetry() -> Outcome {
    let mut r = rng(1);
    let mut count = 0;
    for k in test_kernels() {
        for _ in 0..1000 {
            let tau = uniform(&mut r, k.arity(), -5.0, 5.0);
            let neg: Vec<f64> = tau.iter().map(|t| -t).collect();
            let (a, b) = (k.eval(&tau).map_err(s)?, k.eval(&neg).map_err(s)?);
            ensure(a == b, || format!("{:?}: k({tau:?}) = {a} but k(-τ) = {b}", k.kind()))?;
            count += 1;
        }
    }
    Ok(format!("{count} lags exact"))
}

fn kernels_gradient() -> Outcome {
    let mut r = rng(2);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in test_kernels() {
        for _ in 0..100 {
            let theta: Vec<f64> = k.log_params().iter().map(|t| t + r.random_range(-0.5..0.5)).collect();
            let kk = k.with_log_params(&theta).map_err(s)?;
            let tau = uniform(&mut r, k.arity(), -2.0, 2.0);
            let g = kk.grad(&tau).map_err(s)?;
            let scale = kk.variance();
            for (p, gp) in g.iter().enumerate() {
                let mut tp = theta.clone();
                tp[p] += h;
                let mut tm = theta.clone();
                tm[p] -= h;
                let fd = (k.with_log_params(&tp).map_err(s)?.eval(&tau).map_err(s)?
                    - k.with_log_params(&tm).map_err(s)?.eval(&tau).map_err(s)?)
                    / (2.0 * h);
                let err = (gp - fd).abs() / fd.abs().max(1e-6 * scale);
                worst = worst.max(err);
                ensure(err <= 1e-5, || format!("{:?} param {p}: grad {gp} vs fd {fd}", k.kind()))?;
            }
        }
    }
    Ok(format!("worst relative error {worst:.2e}"))
}

fn kernels_separability() -> Outcome {
    let a = StationaryKernel::squared_exponential(1.2, 0.5).map_err(s)?;
    let b = StationaryKernel::periodic(0.7, 1.0, 1.5).map_err(s)?;
    let prod = StationaryKernel::product(vec![a.clone(), b.clone()]).map_err(s)?;
    let grid = InducingGrid::from_axes(vec![
        (0..9).map(|i| 0.3 * i as f64).collect(),
        (0..11).map(|i| -1.0 + 0.25 * i as f64).collect(),
    ])
    .map_err(s)?;
    let dense = kernel_matrix(&prod, &grid.nodes()).map_err(s)?;
    let ka = kernel_matrix(&a, &Points::from_1d(grid.axis(0).to_vec())).map_err(s)?;
    let kb = kernel_matrix(&b, &Points::from_1d(grid.axis(1).to_vec())).map_err(s)?;
    let err = (dense - ka.kronecker(&kb)).amax();
    ensure(err <= 1e-12, || format!("max entry gap {err:.2e}"))?;
    Ok(format!("max entry gap {err:.2e}"))
}

fn kernels_quasi_periodic() -> Outcome {
    let qp = StationaryKernel::quasi_periodic(1.3, 2.0, 0.6, 1.7).map_err(s)?;
    let (se, per) = qp.quasi_periodic_factors().ok_or("no factors")?;
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let t = [-6.0 + 0.06 * i as f64];
        let gap = (qp.eval(&t).map_err(s)? - se.eval(&t).map_err(s)? * per.eval(&t).map_err(s)?).abs();
        worst = worst.max(gap);
    }
    ensure(worst <= 1e-14, || format!("gap {worst:.2e}"))?;
    Ok(format!("max gap {worst:.2e}"))
}

// warping ------------------------------------------------------------------

fn test_warps() -> Result<Vec<(&'static str, Warp)>, String> {
    let mut r = rng(3);
    let mut t = -0.3;
    let mut events = Vec::new();
    for _ in 0..30 {
        events.push(t);
        t += r.random_range(0.6..1.0);
    }
    let unit = Interval::new(-1.0, 1.0).map_err(s)?;
    Ok(vec![
        ("identity", Warp::identity_on(vec![unit])),
        ("polynomial", cubic()),
        ("events", phase_from_events(&events, true).map_err(s)?),
        ("elementwise", Warp::elementwise(vec![cubic(), Warp::identity_on(vec![unit])]).map_err(s)?),
        ("affine", Warp::affine(vec![1.0, 0.4, -0.3, 0.9], vec![0.5, -0.2], vec![unit, unit]).map_err(s)?),
    ])
}

fn sample_in_domain(r: &mut ChaCha8Rng, w: &Warp) -> Vec<f64> {
    w.domain()
        .iter()
        .map(|d| {
            let (lo, hi) = if d.lo.is_finite() { (d.lo, d.hi) } else { (-2.0, 25.0) };
            r.random_range(lo..hi)
        })
        .collect()
}

fn warping_round_trip() -> Outcome {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for (name, w) in test_warps()? {
        for _ in 0..10_000 {
            let x = sample_in_domain(&mut r, &w);
            let back = w.inverse(&w.forward(&x).map_err(s)?).map_err(s)?;
            for (a, b) in x.iter().zip(&back) {
                let e = (a - b).abs() / a.abs().max(1.0);
                worst = worst.max(e);
                ensure(e <= 1e-10, || format!("{name}: {x:?} -> {back:?}"))?;
            }
        }
    }
    Ok(format!("worst error {worst:.2e} over 5 × 10⁴ points"))
}

fn warping_monotone() -> Outcome {
    let mut r = rng(5);
    for (name, w) in test_warps()? {
        if w.dims() != 1 {
            continue;
        }
        let mut xs: Vec<f64> = (0..2000).map(|_| sample_in_domain(&mut r, &w)[0]).collect();
        xs.sort_by(f64::total_cmp);
        let zs = w.forward_points(&Points::from_1d(xs)).map_err(s)?;
        let zs = zs.as_slice();
        ensure(zs.windows(2).all(|p| p[1] >= p[0]), || format!("{name} reorders a sorted sample"))?;
    }
    Ok("order preserved for all 1-D warps".into())
}

fn warping_lattice() -> Outcome {
    let (_, w) = test_warps()?.into_iter().find(|(n, _)| *n == "elementwise").ok_or("missing warp")?;
    let grid = InducingGrid::from_axes(vec![
        (0..13).map(|i| -1.2 + 0.15 * i as f64).collect(),
        (0..9).map(|i| -0.9 + 0.2 * i as f64).collect(),
    ])
    .map_err(s)?;
    let mapped = w.forward_points(&grid.nodes()).map_err(s)?;
    let axes: Vec<Vec<f64>> = (0..2)
        .map(|d| {
            let a = w.axis(d).ok_or("not elementwise")?;
            grid.axis(d)
                .iter()
                .map(|&x| a.forward(&[x]).map(|z| z[0]).map_err(s))
                .collect::<Result<Vec<f64>, String>>()
        })
        .collect::<Result<_, _>>()?;
    let expected = InducingGrid::from_axes(axes).map_err(s)?.nodes();
    let gap = rel_diff(mapped.as_slice(), expected.as_slice());
    ensure(gap <= 1e-15, || format!("lattice mismatch {gap:.2e}"))?;
    Ok("warped lattice is the product of warped axes".into())
}

// grid ---------------------------------------------------------------------

fn grid_rows() -> Outcome {
    let mut r = rng(6);
    for d in 1..=3usize {
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|_| {
                let mut a = uniform(&mut r, 12, 0.0, 10.0);
                a.sort_by(f64::total_cmp);
                a.dedup();
                a
            })
            .collect();
        let grid = InducingGrid::from_axes(axes).map_err(s)?;
        let pts: Vec<f64> = (0..300)
            .flat_map(|_| {
                (0..d)
                    .map(|k| {
                        let (lo, hi) = grid.safe_region(k);
                        r.random_range(lo..hi)
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let w = interpolation_weights(&grid, &Points::new(d, pts).map_err(s)?).map_err(s)?;
        ensure(w.nnz_per_row() == 4usize.pow(d as u32), || format!("D={d}: {} nonzeros", w.nnz_per_row()))?;
        for i in 0..w.rows() {
            let sum: f64 = w.row(i).1.iter().sum();
            ensure((sum - 1.0).abs() <= 1e-12, || format!("D={d} row {i} sums to {sum}"))?;
        }
    }
    Ok("rows sum to 1 with 4^D entries for D = 1, 2, 3".into())
}

fn grid_accuracy() -> Outcome {
    let mut r = rng(7);
    let x = Points::from_1d(uniform(&mut r, 500, 0.0, 10.0));
    let grid = InducingGrid::covering(&x.bounding_box(), &[400], 2).map_err(s)?;
    let error_at = |spacings: f64| -> Result<f64, String> {
        let k = StationaryKernel::squared_exponential(1.0, spacings * grid.spacing(0)).map_err(s)?;
        let c = SkiComponent::build(k.clone(), Warp::identity(1), grid.clone(), &x).map_err(s)?;
        Ok(frob_rel(&c.to_dense(), &kernel_matrix(&k, &x).map_err(s)?))
    };
    let (at3, at35) = (error_at(3.0)?, error_at(3.5)?);
    let detail = format!("relative Frobenius error {at3:.2e} at ℓ = 3h, {at35:.2e} at ℓ = 3.5h");
    ensure(at3 <= 1e-3 && at35 <= 1e-3, || detail.clone())?;
    Ok(detail)
}

fn grid_warped_accuracy() -> Outcome {
    let mut r = rng(8);
    let x = Points::from_1d(uniform(&mut r, 500, -1.2, 0.75));
    let k = StationaryKernel::squared_exponential(1.5, 0.4).map_err(s)?;
    let z = cubic().forward_points(&x).map_err(s)?;
    let grid = InducingGrid::covering(&z.bounding_box(), &[400], 2).map_err(s)?;
    let c = SkiComponent::build_via_warped_grid(k.clone(), cubic(), grid, &x).map_err(s)?;
    let err = frob_rel(&c.to_dense(), &warped_kernel_matrix(&k, &cubic(), &x).map_err(s)?);
    ensure(err <= 1e-3, || format!("relative Frobenius error {err:.2e}"))?;
    Ok(format!("relative Frobenius error {err:.2e}"))
}

// linalg -------------------------------------------------------------------

fn random_toeplitz(r: &mut ChaCha8Rng, m: usize) -> Result<SymToeplitz, String> {
    let l = r.random_range(0.5..(m as f64 / 4.0).max(1.0));
    let nugget = r.random_range(1e-3..1.0);
    let col = (0..m)
        .map(|k| (-0.5 * (k as f64 / l).powi(2)).exp() + if k == 0 { nugget } else { 0.0 })
        .collect();
    SymToeplitz::new(col).map_err(s)
}

fn linalg_toeplitz() -> Outcome {
    let mut r = rng(9);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let m = r.random_range(2..=512);
        let t = random_toeplitz(&mut r, m)?;
        let v = uniform(&mut r, m, -1.0, 1.0);
        let fast = t.matvec(&v).map_err(s)?;
        let dense = t.to_dense().apply(&v);
        let e = rel_diff(&fast, &dense);
        worst = worst.max(e);
        ensure(e <= 1e-10, || format!("m={m}: relative error {e:.2e}"))?;
    }
    Ok(format!("200 instances, worst {worst:.2e}"))
}

fn linalg_kronecker() -> Outcome {
    let mut r = rng(10);
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    for d in 1..=3usize {
        for kinds in 0..(1usize << d) {
            for sizes in [[2usize, 3, 4], [5, 1, 3], [7, 6, 2]] {
                let factors = (0..d)
                    .map(|k| {
                        let m = sizes[k];
                        if kinds >> k & 1 == 1 {
                            Ok(KronFactor::Toeplitz(random_toeplitz(&mut r, m)?))
                        } else {
                            let a = DMatrix::from_fn(m, m, |_, _| r.random_range(-1.0..1.0));
                            Ok(KronFactor::Dense(&a * a.transpose()))
                        }
                    })
                    .collect::<Result<Vec<_>, String>>()?;
                let op = KronOperator::new(factors).map_err(s)?;
                let v = uniform(&mut r, op.size(), -1.0, 1.0);
                let e = rel_diff(&op.matvec(&v).map_err(s)?, &op.to_dense().apply(&v));
                worst = worst.max(e);
                ensure(e <= 1e-12, || format!("D={d} kinds={kinds:b} sizes={sizes:?}: {e:.2e}"))?;
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} shape combinations, worst {worst:.2e}"))
}

fn two_source_model(x: &Points) -> Result<GpModel, String> {
    let xs = x.as_slice();
    let end = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let events_a: Vec<f64> = (0..).map(|k| -1.0 + 0.8 * k as f64).take_while(|t| *t < end + 1.0).collect();
    let events_b: Vec<f64> = (0..).map(|k| -0.5 + 0.29 * k as f64).take_while(|t| *t < end + 1.0).collect();
    let comp = |events: &[f64], amp: f64| -> Result<ComponentSpec, String> {
        Ok(ComponentSpec::new(
            StationaryKernel::quasi_periodic(amp, 6.0 * PI, 0.7, 2.0 * PI).map_err(s)?,
            phase_from_events(events, true).map_err(s)?,
            GridSpec::PointsPerLengthscale { points: 6.0 },
        ))
    };
    GpModel::new(vec![comp(&events_a, 1.0)?, comp(&events_b, 0.4)?], 0.2).map_err(s)
}

fn linalg_symmetry() -> Outcome {
    let mut r = rng(11);
    let x = Points::from_1d(uniform(&mut r, 800, 0.0, 6.0));
    let op = two_source_model(&x)?.operator(&x).map_err(s)?;
    let (u, v) = (uniform(&mut r, 800, -1.0, 1.0), uniform(&mut r, 800, -1.0, 1.0));
    let (a, b) = (dot(&op.apply(&u), &v), dot(&u, &op.apply(&v)));
    let e = (a - b).abs() / a.abs().max(b.abs());
    ensure(e <= 1e-10, || format!("⟨Ku,v⟩ = {a}, ⟨u,Kv⟩ = {b}"))?;
    Ok(format!("relative asymmetry {e:.2e}"))
}

fn linalg_scaling() -> Outcome {
    let mut r = rng(12);
    let mut times = Vec::new();
    let sizes: Vec<usize> = (14..=19).map(|p| 1usize << p).collect();
    for &m in &sizes {
        let col: Vec<f64> = (0..m).map(|k| (-0.5 * (k as f64 / 50.0).powi(2)).exp()).collect();
        let t = SymToeplitz::new(col).map_err(s)?;
        let v = uniform(&mut r, m, -1.0, 1.0);
        let (_, secs) = experiments::median_time(5, || Ok(t.matvec(&v))).map_err(s)?;
        times.push(secs);
    }
    let sz: Vec<f64> = sizes.iter().map(|&m| m as f64).collect();
    let ratio = experiments::max_ratio_per_doubling(&sz, &times);
    ensure(ratio <= 2.6, || format!("time grows {ratio:.2}× per doubling: {times:?}"))?;
    Ok(format!("max growth {ratio:.2}× per doubling over m = 2^14 … 2^19"))
}

// operators ----------------------------------------------------------------

fn operators_paths() -> Outcome {
    let mut r = rng(13);
    let x1 = Points::from_1d(uniform(&mut r, 400, -1.2, 0.75));
    let k1 = StationaryKernel::squared_exponential(1.5, 0.4).map_err(s)?;
    let z1 = cubic().forward_points(&x1).map_err(s)?;
    let g1 = InducingGrid::covering(&z1.bounding_box(), &[300], 2).map_err(s)?;
    let warp2 = Warp::elementwise(vec![cubic(), Warp::identity(1)]).map_err(s)?;
    let raw: Vec<f64> = (0..400).flat_map(|_| [r.random_range(-1.2..0.75), r.random_range(-2.5..2.5)]).collect();
    let x2 = Points::new(2, raw).map_err(s)?;
    let k2 = StationaryKernel::squared_exponential_nd(1.5, 0.4, 2).map_err(s)?;
    let z2 = warp2.forward_points(&x2).map_err(s)?;
    let g2 = InducingGrid::covering(&z2.bounding_box(), &[60, 40], 2).map_err(s)?;
    let mut worst: f64 = 0.0;
    for (k, w, g, x) in [(k1, cubic(), g1, &x1), (k2, warp2, g2, &x2)] {
        let a = SkiComponent::build(k.clone(), w.clone(), g.clone(), x).map_err(s)?;
        let b = SkiComponent::build_via_warped_grid(k, w, g, x).map_err(s)?;
        let v = uniform(&mut r, x.len(), -1.0, 1.0);
        let (ka, kb) = (a.matvec(&v).map_err(s)?, b.matvec(&v).map_err(s)?);
        let gap = ka.iter().zip(&kb).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        worst = worst.max(gap);
        ensure(gap <= 1e-12, || format!("MVM gap {gap:.2e}"))?;
    }
    Ok(format!("max MVM gap {worst:.2e} in 1-D and 2-D"))
}

fn operators_symmetry() -> Outcome {
    let mut r = rng(14);
    let raw: Vec<f64> = (0..600).flat_map(|_| [r.random_range(-1.2..0.75), r.random_range(-2.5..2.5)]).collect();
    let x = Points::new(2, raw).map_err(s)?;
    let model = GpModel::new(
        vec![ComponentSpec::new(
            StationaryKernel::squared_exponential_nd(1.5, 0.4, 2).map_err(s)?,
            Warp::elementwise(vec![cubic(), Warp::identity(1)]).map_err(s)?,
            GridSpec::Counts { counts: vec![50, 50] },
        )],
        0.5,
    )
    .map_err(s)?;
    let op = model.operator(&x).map_err(s)?;
    let (u, v) = (uniform(&mut r, 600, -1.0, 1.0), uniform(&mut r, 600, -1.0, 1.0));
    let (a, b) = (dot(&op.apply(&u), &v), dot(&u, &op.apply(&v)));
    let e = (a - b).abs() / a.abs().max(b.abs());
    ensure(e <= 1e-10, || format!("relative asymmetry {e:.2e}"))?;
    Ok(format!("relative asymmetry {e:.2e}"))
}

fn operators_pd() -> Outcome {
    let mut r = rng(15);
    let x = Points::from_1d(uniform(&mut r, 600, 0.0, 6.0));
    let model = two_source_model(&x)?;
    let op = model.operator(&x).map_err(s)?;
    let start = uniform(&mut r, 600, -1.0, 1.0);
    let f = lanczos(&op, &start, 60).map_err(s)?;
    let min = f.ritz_values().into_iter().fold(f64::INFINITY, f64::min);
    let s2 = model.noise_variance();
    ensure(min >= s2 * (1.0 - 1e-6), || format!("smallest Ritz value {min} < σ² = {s2}"))?;
    Ok(format!("smallest Ritz value {min:.6} ≥ σ² = {s2}"))
}

fn operators_structure() -> Outcome {
    let mut r = rng(16);
    let raw: Vec<f64> = (0..300).flat_map(|_| [r.random_range(-1.2..0.75), r.random_range(-2.5..2.5)]).collect();
    let x = Points::new(2, raw).map_err(s)?;
    let k = StationaryKernel::squared_exponential_nd(1.5, 0.4, 2).map_err(s)?;
    let warp = Warp::elementwise(vec![cubic(), Warp::identity(1)]).map_err(s)?;
    let c = SkiComponent::build_with_spec(k.clone(), warp, &GridSpec::Counts { counts: vec![40, 30] }, &x).map_err(s)?;
    ensure(c.kuu().factors().iter().all(KronFactor::is_toeplitz), || "warped lattice kernel lost Toeplitz factors".into())?;
    let k1 = StationaryKernel::squared_exponential(1.5, 0.4).map_err(s)?;
    let plain = InducingGrid::equispaced(&[AxisSpec { min: -1.2, max: 0.75, count: 40 }]).map_err(s)?;
    let k_plain = warped_kernel_matrix(&k1, &cubic(), &plain.nodes()).map_err(s)?;
    ensure(!is_toeplitz(&k_plain, 1e-6), || "input-space lattice unexpectedly Toeplitz".into())?;
    Ok("Kronecker-of-Toeplitz under warping; plain input-space lattice is not Toeplitz".into())
}

// krylov -------------------------------------------------------------------

fn spd_instance(r: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let x: Vec<f64> = uniform(r, n, 0.0, 10.0);
    let k = StationaryKernel::squared_exponential(1.0, 0.7).expect("valid");
    kernel_matrix(&k, &Points::from_1d(x)).expect("1-D") + DMatrix::identity(n, n) * 0.05
}

fn dense_logdet(a: &DMatrix<f64>) -> Result<f64, String> {
    let c = a.clone().cholesky().ok_or("not positive definite")?;
    Ok(2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

fn krylov_energy() -> Outcome {
    let mut r = rng(17);
    let a = spd_instance(&mut r, 200);
    let b = uniform(&mut r, 200, -1.0, 1.0);
    let exact = a.clone().cholesky().ok_or("not SPD")?.solve(&DVector::from_column_slice(&b));
    let mut prev = f64::INFINITY;
    for it in 1..=40 {
        let x = cg_solve(&a, &b, 1e-14, it).map_err(s)?.solution;
        let e = DVector::from_column_slice(&x) - &exact;
        let energy = e.dot(&(&a * &e));
        ensure(energy <= prev * (1.0 + 1e-12), || format!("energy error rose at iteration {it}: {prev} -> {energy}"))?;
        prev = energy;
    }
    Ok(format!("energy error non-increasing over 40 iterations, final {prev:.2e}"))
}

fn krylov_slq_mean() -> Outcome {
    let mut r = rng(18);
    let a = spd_instance(&mut r, 500);
    let exact = dense_logdet(&a)?;
    let mut sum = 0.0;
    for seed in 0..50 {
        sum += slq_logdet(&a, &ProbeSet::new(500, 20, seed).map_err(s)?, 30).map_err(s)?;
    }
    let mean = sum / 50.0;
    let rel = (mean - exact).abs() / exact.abs();
    ensure(rel <= 5e-3, || format!("mean {mean} vs exact {exact} ({rel:.2e})"))?;
    Ok(format!("mean over 50 seeds within {:.3}%", 100.0 * rel))
}

fn krylov_probes() -> Outcome {
    let a = ProbeSet::new(1000, 20, 42).map_err(s)?;
    let b = ProbeSet::new(1000, 20, 42).map_err(s)?;
    let same = a
        .vectors()
        .iter()
        .zip(b.vectors())
        .all(|(p, q)| p.iter().zip(q).all(|(x, y)| x.to_bits() == y.to_bits()));
    ensure(same, || "probe sets differ".into())?;
    ensure(a != ProbeSet::new(1000, 20, 43).map_err(s)?, || "different seeds gave identical probes".into())?;
    Ok("bitwise identical for equal seeds".into())
}

fn krylov_exactness() -> Outcome {
    let levels = [0.3, 1.0, 2.5, 7.0, 11.0];
    let n = 200;
    let diag: Vec<f64> = (0..n).map(|i| levels[i % levels.len()]).collect();
    let a = DMatrix::from_diagonal(&DVector::from_vec(diag.clone()));
    let exact: f64 = diag.iter().map(|d| d.ln()).sum();
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let est = slq_logdet(&a, &ProbeSet::new(n, 1, seed).map_err(s)?, 10).map_err(s)?;
        let e = (est - exact).abs() / exact.abs();
        worst = worst.max(e);
        ensure(e <= 1e-8, || format!("seed {seed}: {est} vs {exact}"))?;
    }
    Ok(format!("five eigenvalue levels, worst per-probe error {worst:.2e}"))
}

// gp -----------------------------------------------------------------------

fn dense_nlml(k: &DMatrix<f64>, y: &[f64]) -> Result<f64, String> {
    let c = k.clone().cholesky().ok_or("not positive definite")?;
    let yv = DVector::from_column_slice(y);
    let alpha = c.solve(&yv);
    Ok(0.5 * (yv.dot(&alpha) + dense_logdet(k)? + y.len() as f64 * (2.0 * PI).ln()))
}

fn gp_oracle() -> Outcome {
    let mut r = rng(19);
    let x1 = Points::from_1d(uniform(&mut r, 300, -1.2, 0.75));
    let x_qp = Points::from_1d(uniform(&mut r, 300, 0.0, 5.0));
    let raw: Vec<f64> = (0..300).flat_map(|_| [r.random_range(-1.2..0.75), r.random_range(-2.5..2.5)]).collect();
    let x2 = Points::new(2, raw).map_err(s)?;
    let events: Vec<f64> = (0..10).map(|k| -0.6 + 0.7 * k as f64).collect();
    let matrix: Vec<(&str, StationaryKernel, Warp, &Points, Vec<Vec<usize>>)> = vec![
        (
            "SE/polynomial",
            StationaryKernel::squared_exponential(1.5, 0.4).map_err(s)?,
            cubic(),
            &x1,
            vec![vec![60], vec![120], vec![240]],
        ),
        (
            "QP/events",
            StationaryKernel::quasi_periodic(1.0, 12.0, 0.8, 2.0 * PI).map_err(s)?,
            phase_from_events(&events, true).map_err(s)?,
            &x_qp,
            vec![vec![120], vec![240], vec![480]],
        ),
        (
            "SE/elementwise",
            StationaryKernel::squared_exponential_nd(1.5, 0.4, 2).map_err(s)?,
            Warp::elementwise(vec![cubic(), Warp::identity(1)]).map_err(s)?,
            &x2,
            vec![vec![40, 32], vec![80, 64], vec![160, 128]],
        ),
    ];
    let mut summary = Vec::new();
    for (name, k, w, x, densities) in matrix {
        let truth = GpModel::new(
            vec![ComponentSpec::new(k.clone(), w.clone(), GridSpec::Counts { counts: densities[2].clone() })],
            0.3,
        )
        .map_err(s)?;
        let y = gp::sample_prior(&truth, x, 7).map_err(s)?.targets;
        let exact = gp::exact_nlml_value(&truth, x, &y).map_err(s)?;
        let mut errs = Vec::new();
        for counts in densities {
            let m = GpModel::new(vec![ComponentSpec::new(k.clone(), w.clone(), GridSpec::Counts { counts })], 0.3)
                .map_err(s)?;
            errs.push((dense_nlml(&m.operator(x).map_err(s)?.to_dense(), &y)? - exact).abs());
        }
        ensure(errs.windows(2).all(|e| e[1] < e[0]), || format!("{name}: errors {errs:?} not decreasing"))?;
        summary.push(format!("{name} {:.1e} → {:.1e} → {:.1e}", errs[0], errs[1], errs[2]));
    }
    Ok(summary.join(", "))
}

fn gp_separation_identity() -> Outcome {
    let mut r = rng(20);
    let x = Points::from_1d(uniform(&mut r, 600, 0.0, 6.0));
    let truth = two_source_model(&x)?;
    let y = gp::sample_prior(&truth, &x, 3).map_err(s)?.targets;
    let start = truth.with_log_params(&truth.log_params().iter().map(|t| t - 0.3).collect::<Vec<_>>()).map_err(s)?;
    let start = start
        .with_fixed(&experiments::separation_fixed_params())
        .map_err(s)?;
    let options = gp::FitOptions {
        lbfgs: warpski::optimize::LbfgsOptions {
            max_steps: 10,
            ..Default::default()
        },
        ..Default::default()
    };
    let fitted = gp::fit(&start, &x, &y, &options).map_err(s)?.model;
    let op = fitted.operator(&x).map_err(s)?;
    let sep = gp::separate_operator(&op, &y, 1e-6, 600).map_err(s)?;
    let s2 = fitted.noise_variance();
    let recon: Vec<f64> = (0..600)
        .map(|i| sep.means.iter().map(|m| m[i]).sum::<f64>() + s2 * sep.alpha[i])
        .collect();
    let gap = rel_diff(&recon, &y);
    ensure(gap <= 1.01 * sep.cg_relative_residual + 1e-12, || {
        format!("identity gap {gap:.2e} vs CG residual {:.2e}", sep.cg_relative_residual)
    })?;
    Ok(format!("identity gap {gap:.2e} (CG residual {:.2e})", sep.cg_relative_residual))
}

fn gp_gradient() -> Outcome {
    let mut r = rng(21);
    let x = Points::from_1d(uniform(&mut r, 500, 0.0, 6.0));
    let model = two_source_model(&x)?;
    let y = gp::sample_prior(&model, &x, 5).map_err(s)?.targets;
    let settings = gp::ApproxSettings {
        cg_tol: 1e-11,
        ..Default::default()
    };
    let op = model.operator(&x).map_err(s)?;
    let probes = ProbeSet::new(500, settings.probes, settings.seed).map_err(s)?;
    let theta = model.log_params();
    let base = gp::approx_nlml_operator(&op, &y, &probes, &settings, None).map_err(s)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for p in 0..theta.len() {
        let eval = |delta: f64| -> Result<f64, String> {
            let mut t = theta.clone();
            t[p] += delta;
            let o = op.with_log_params(&t).map_err(s)?;
            Ok(gp::approx_nlml_operator(&o, &y, &probes, &settings, Some(&vec![false; t.len()])).map_err(s)?.value)
        };
        let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
        let g = base.gradient[p];
        let e = (g - fd).abs() / fd.abs().max(1e-3);
        worst = worst.max(e);
        ensure(e <= 1e-4, || format!("param {p}: gradient {g} vs finite difference {fd}"))?;
    }
    Ok(format!("{} parameters, worst relative error {worst:.2e}", theta.len()))
}

fn gp_argmin() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 4;
    let curve = experiments::likelihood_curve(&cfg, 800, 15).map_err(s)?;
    let (a, e) = (curve.approx_argmin(), curve.exact_argmin());
    ensure(a.abs_diff(e) <= 1, || format!("argmins {a} (approx) vs {e} (exact)"))?;
    Ok(format!("argmins {a} vs {e} on a 15-point sweep"))
}

// cli ----------------------------------------------------------------------

fn cli_metrics() -> Outcome {
    let r = metrics::rmse(&[0.0, 2.0], &[0.0, 0.0]).map_err(s)?;
    ensure((r - 2f64.sqrt()).abs() <= 1e-15, || format!("rmse {r}"))?;
    let db = metrics::snr_improvement(&[10.0; 3], &[1.0; 3], &[0.0; 3]).map_err(s)?;
    ensure((db - 20.0).abs() <= 1e-12, || format!("snr {db}"))?;
    ensure(metrics::rmse(&[1.0], &[]).is_err(), || "length mismatch accepted".into())?;
    Ok("worked examples hold".into())
}

fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        n: 300,
        timing_repeats: 1,
        max_steps: 4,
        ..Default::default()
    };
    cfg.numeric2d.grid_counts = [24, 24];
    cfg.numeric2d.sample_grid_counts = [48, 48];
    cfg
}

fn cli_determinism() -> Outcome {
    let cfg = tiny_config();
    let a = experiments::run_numeric2d(&cfg).map_err(s)?;
    let b = experiments::run_numeric2d(&cfg).map_err(s)?;
    ensure(a.report.without_timings() == b.report.without_timings() && a.curves == b.curves, || {
        "two runs of one config differ".into()
    })?;
    Ok("identical reports and curves".into())
}

fn cli_regenerable() -> Outcome {
    let cfg = tiny_config();
    let out = experiments::run_numeric2d(&cfg).map_err(s)?;
    let dir = std::env::temp_dir().join(format!("warpski-validate-{}", std::process::id()));
    experiments::write_outputs(&dir, &cfg, &out).map_err(s)?;
    let post = io::load_table_csv(&dir.join("curves").join("posterior.csv"), &[]).map_err(s)?;
    let rmse = metrics::rmse(
        &post.column("mean").ok_or("no mean column")?,
        &post.column("latent").ok_or("no latent column")?,
    )
    .map_err(s)?;
    let _ = std::fs::remove_dir_all(&dir);
    ensure(Some(rmse) == out.report.rmse, || format!("recomputed rmse {rmse} vs {:?}", out.report.rmse))?;
    Ok("rmse recomputed bit for bit from curves/posterior.csv".into())
}
