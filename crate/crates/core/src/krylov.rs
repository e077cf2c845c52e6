//! Krylov solvers and stochastic trace estimation.
//!
//! Everything here touches the operator only through products. The
//! log-determinant estimator runs Lanczos on Rademacher probes and applies
//! Gauss quadrature to each tridiagonal; [`slq_logdet_with_gradient`] also
//! propagates tangents through the Lanczos recurrence so that the gradient it
//! returns is the exact derivative of the seeded estimate.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::LinearOperator;
use crate::operators::DifferentiableOperator;

/// Default number of Lanczos steps per probe.
pub const DEFAULT_LANCZOS_STEPS: usize = 30;
/// Default number of Rademacher probes.
pub const DEFAULT_PROBES: usize = 20;

const BREAKDOWN_RTOL: f64 = 1e-10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `‖y − K x‖ / ‖y‖` from the recursively updated residual.
    pub relative_residual: f64,
    pub converged: bool,
}

/// Solve `K x = y` for symmetric positive definite `K`, starting from zero.
///
/// Stops when the relative residual drops to `tol` or after `max_iter`
/// iterations; the latter is reported through `converged`, not as an error.
pub fn cg_solve<A: LinearOperator + ?Sized>(
    op: &A,
    y: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgReport> {
    let n = op.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            what: "cg right-hand side",
            expected: n,
            found: y.len(),
        });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("cg tolerance must be positive, got {tol}")));
    }
    let mut x = vec![0.0; n];
    let y_norm = norm(y);
    if y_norm == 0.0 {
        return Ok(CgReport {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }
    let mut r = y.to_vec();
    let mut p = r.clone();
    let mut kp = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    let mut rel = 1.0;
    while iterations < max_iter {
        op.apply_into(&p, &mut kp);
        let pkp = dot(&p, &kp);
        if !(pkp > 0.0) {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: pkp / dot(&p, &p),
                max_eigenvalue: f64::NAN,
            });
        }
        let step = rr / pkp;
        axpy(step, &p, &mut x);
        axpy(-step, &kp, &mut r);
        iterations += 1;
        let rr_new = dot(&r, &r);
        rel = rr_new.sqrt() / y_norm;
        if rel <= tol {
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
    }
    Ok(CgReport {
        solution: x,
        iterations,
        relative_residual: rel,
        converged: rel <= tol,
    })
}

/// Symmetric tridiagonal `T = Qᵀ K Q` from `steps` Lanczos iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct LanczosFactor {
    /// Diagonal of `T`.
    pub alpha: Vec<f64>,
    /// Off-diagonal of `T`, length `steps − 1`.
    pub beta: Vec<f64>,
    /// Orthonormal Lanczos vectors `q_1 … q_steps`.
    pub basis: Vec<Vec<f64>>,
    pub steps: usize,
    /// True when the recurrence stopped early on an invariant subspace.
    pub breakdown: bool,
}

impl LanczosFactor {
    pub fn tridiagonal(&self) -> DMatrix<f64> {
        tridiagonal(&self.alpha, &self.beta)
    }

    /// Ritz values, ascending.
    pub fn ritz_values(&self) -> Vec<f64> {
        let mut v = SymmetricEigen::new(self.tridiagonal()).eigenvalues.as_slice().to_vec();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Gauss quadrature `e₁ᵀ f(T) e₁ = Σ_i w_i f(θ_i)`.
    pub fn quadrature(&self, f: impl Fn(f64) -> f64) -> f64 {
        let eig = SymmetricEigen::new(self.tridiagonal());
        (0..self.steps)
            .map(|i| eig.eigenvectors[(0, i)].powi(2) * f(eig.eigenvalues[i]))
            .sum()
    }
}

fn tridiagonal(alpha: &[f64], beta: &[f64]) -> DMatrix<f64> {
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    t
}

/// Lanczos with full reorthogonalization, started from `start / ‖start‖`.
///
/// Runs `min(k, n)` steps unless the Krylov space becomes invariant first,
/// in which case the factor is truncated and `breakdown` is set.
pub fn lanczos<A: LinearOperator + ?Sized>(op: &A, start: &[f64], k: usize) -> Result<LanczosFactor> {
    let n = op.dim();
    if start.len() != n {
        return Err(Error::DimensionMismatch {
            what: "lanczos start vector",
            expected: n,
            found: start.len(),
        });
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "lanczos steps must be in 1..={n}, got {k}"
        )));
    }
    let s = norm(start);
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InvalidArgument("lanczos start vector must be nonzero".into()));
    }
    let mut basis: Vec<Vec<f64>> = vec![start.iter().map(|x| x / s).collect()];
    let mut alpha = Vec::with_capacity(k);
    let mut beta = Vec::with_capacity(k);
    let mut w = vec![0.0; n];
    let mut scale = 0.0_f64;
    let mut breakdown = false;
    loop {
        let j = basis.len() - 1;
        op.apply_into(&basis[j], &mut w);
        let a = dot(&basis[j], &w);
        alpha.push(a);
        scale = scale.max(a.abs());
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                axpy(-c, q, &mut w);
            }
        }
        if alpha.len() == k {
            break;
        }
        let b = norm(&w);
        if b <= BREAKDOWN_RTOL * scale.max(f64::MIN_POSITIVE) {
            breakdown = true;
            break;
        }
        scale = scale.max(b);
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
    Ok(LanczosFactor {
        steps: alpha.len(),
        alpha,
        beta,
        basis,
        breakdown,
    })
}

/// Rademacher probe vectors, reproducible from a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub seed: u64,
    vectors: Vec<Vec<f64>>,
}

impl ProbeSet {
    pub fn new(n: usize, count: usize, seed: u64) -> Result<Self> {
        if n == 0 || count == 0 {
            return Err(Error::InvalidArgument(format!(
                "probe set needs n > 0 and count > 0, got n={n}, count={count}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = (0..count)
            .map(|_| {
                (0..n)
                    .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect();
        Ok(Self { seed, vectors })
    }

    pub fn count(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.dim() != n {
            return Err(Error::DimensionMismatch {
                what: "probe length",
                expected: n,
                found: self.dim(),
            });
        }
        Ok(())
    }
}

fn check_ritz(ritz: &[f64]) -> Result<()> {
    match ritz.iter().copied().find(|&v| !(v > 0.0)) {
        Some(value) => Err(Error::NonPositiveRitz { value }),
        None => Ok(()),
    }
}

/// Stochastic Lanczos quadrature estimate of `log |K|`:
/// `(1/count) Σ_z ‖z‖² e₁ᵀ log(T_z) e₁`.
pub fn slq_logdet<A: LinearOperator + ?Sized>(op: &A, probes: &ProbeSet, k: usize) -> Result<f64> {
    probes.check(op.dim())?;
    let k = k.min(op.dim());
    let per_probe = probes
        .vectors
        .par_iter()
        .map(|z| {
            let f = lanczos(op, z, k)?;
            let eig = SymmetricEigen::new(f.tridiagonal());
            check_ritz(eig.eigenvalues.as_slice())?;
            let quad: f64 = (0..f.steps)
                .map(|i| eig.eigenvectors[(0, i)].powi(2) * eig.eigenvalues[i].ln())
                .sum();
            Ok(dot(z, z) * quad)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_probe.iter().sum::<f64>() / probes.count() as f64)
}

/// Log-determinant estimate together with its exact parameter gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlqEstimate {
    pub logdet: f64,
    /// `∂ logdet / ∂ log θ_j` of the estimate itself.
    pub gradient: Vec<f64>,
    /// Smallest Ritz value seen over all probes.
    pub min_ritz: f64,
    pub max_ritz: f64,
}

/// Divided difference of `ln` at `(a, b)`, equal to `1/a` on the diagonal.
fn log_divided_difference(a: f64, b: f64) -> f64 {
    let d = a - b;
    if d.abs() <= 1e-12 * a.abs().max(b.abs()) {
        2.0 / (a + b)
    } else {
        (d / b).ln_1p() / d
    }
}

/// SLQ log-determinant and its derivative with respect to every operator
/// parameter.
///
/// Each probe's Lanczos recurrence is differentiated in forward mode
/// (including the reorthogonalization passes), and the derivative of
/// `e₁ᵀ log(T) e₁` follows from the divided-difference formula on the
/// eigendecomposition of `T`. With a fixed probe set the result is therefore
/// a smooth deterministic function whose gradient is returned exactly.
pub fn slq_logdet_with_gradient<A: DifferentiableOperator + ?Sized>(
    op: &A,
    probes: &ProbeSet,
    k: usize,
) -> Result<SlqEstimate> {
    let n = op.dim();
    probes.check(n)?;
    let k = k.min(n);
    let per_probe = probes
        .vectors
        .par_iter()
        .map(|z| tangent_probe(op, z, k))
        .collect::<Result<Vec<_>>>()?;
    let count = probes.count() as f64;
    let np = op.num_params();
    let mut est = SlqEstimate {
        logdet: 0.0,
        gradient: vec![0.0; np],
        min_ritz: f64::INFINITY,
        max_ritz: f64::NEG_INFINITY,
    };
    for p in per_probe {
        est.logdet += p.value / count;
        axpy(1.0 / count, &p.gradient, &mut est.gradient);
        est.min_ritz = est.min_ritz.min(p.min_ritz);
        est.max_ritz = est.max_ritz.max(p.max_ritz);
    }
    Ok(est)
}

struct ProbeResult {
    value: f64,
    gradient: Vec<f64>,
    min_ritz: f64,
    max_ritz: f64,
}

fn tangent_probe<A: DifferentiableOperator + ?Sized>(op: &A, z: &[f64], k: usize) -> Result<ProbeResult> {
    let n = op.dim();
    let np = op.num_params();
    let zz = dot(z, z);
    let s = zz.sqrt();
    let mut q: Vec<Vec<f64>> = vec![z.iter().map(|x| x / s).collect()];
    // dq[p][j] is the tangent of q_j along parameter p.
    let mut dq: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.0; n]]; np];
    let mut alpha = Vec::with_capacity(k);
    let mut beta = Vec::with_capacity(k);
    let mut dalpha: Vec<Vec<f64>> = vec![Vec::with_capacity(k); np];
    let mut dbeta: Vec<Vec<f64>> = vec![Vec::with_capacity(k); np];
    let mut v = vec![0.0; n];
    let mut kdq = vec![0.0; n];
    let mut scale = 0.0_f64;
    loop {
        let j = q.len() - 1;
        op.apply_into(&q[j], &mut v);
        let dk_q = op.derivative_apply_all(&q[j]);
        // dv = dK q_j + K dq_j
        let mut dv: Vec<Vec<f64>> = dk_q;
        for p in 0..np {
            // A parameter whose derivative is a multiple of I leaves the
            // Krylov basis unchanged, so its tangent stays exactly zero.
            if dq[p][j].iter().any(|&t| t != 0.0) {
                op.apply_into(&dq[p][j], &mut kdq);
                axpy(1.0, &kdq, &mut dv[p]);
            }
        }
        let a = dot(&q[j], &v);
        alpha.push(a);
        for p in 0..np {
            dalpha[p].push(dot(&dq[p][j], &v) + dot(&q[j], &dv[p]));
        }
        scale = scale.max(a.abs());
        for _ in 0..2 {
            for i in 0..=j {
                let c = dot(&q[i], &v);
                for p in 0..np {
                    let dc = dot(&dq[p][i], &v) + dot(&q[i], &dv[p]);
                    axpy(-c, &dq[p][i], &mut dv[p]);
                    axpy(-dc, &q[i], &mut dv[p]);
                }
                axpy(-c, &q[i], &mut v);
            }
        }
        if alpha.len() == k {
            break;
        }
        let b = norm(&v);
        if b <= BREAKDOWN_RTOL * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        scale = scale.max(b);
        beta.push(b);
        let qn: Vec<f64> = v.iter().map(|x| x / b).collect();
        for p in 0..np {
            let db = dot(&v, &dv[p]) / b;
            dbeta[p].push(db);
            let dqn: Vec<f64> = dv[p].iter().zip(&qn).map(|(d, qi)| (d - db * qi) / b).collect();
            dq[p].push(dqn);
        }
        q.push(qn);
    }

    let steps = alpha.len();
    let eig = SymmetricEigen::new(tridiagonal(&alpha, &beta));
    let lam = eig.eigenvalues.as_slice();
    check_ritz(lam)?;
    let vecs = &eig.eigenvectors;
    let u: Vec<f64> = (0..steps).map(|i| vecs[(0, i)]).collect();
    let value = zz * (0..steps).map(|i| u[i] * u[i] * lam[i].ln()).sum::<f64>();
    // G_il = u_i u_l L[λ_i, λ_l]; derivative is Σ_il G_il (Vᵀ dT V)_il.
    let mut g = DMatrix::zeros(steps, steps);
    for i in 0..steps {
        for l in 0..steps {
            g[(i, l)] = u[i] * u[l] * log_divided_difference(lam[i], lam[l]);
        }
    }
    // Back to the tridiagonal basis: H = V G Vᵀ, so the derivative is Σ H ∘ dT.
    let h = vecs * g * vecs.transpose();
    let gradient = (0..np)
        .map(|p| {
            let mut acc = 0.0;
            for i in 0..steps {
                acc += h[(i, i)] * dalpha[p][i];
                if i + 1 < steps {
                    acc += 2.0 * h[(i, i + 1)] * dbeta[p][i];
                }
            }
            zz * acc
        })
        .collect();
    let (min_ritz, max_ritz) = lam
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &l| (lo.min(l), hi.max(l)));
    Ok(ProbeResult {
        value,
        gradient,
        min_ritz,
        max_ritz,
    })
}

/// Two halves of the NLML gradient estimate, in the `2·NLML` scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientTerms {
    /// `−α̃ᵀ (∂K/∂log θ_j) α̃`.
    pub data_term: Vec<f64>,
    /// `mean_z zᵀ K⁻¹ (∂K/∂log θ_j) z`.
    pub trace_term: Vec<f64>,
    /// Probe solves that stopped before reaching the tolerance.
    pub unconverged_solves: usize,
}

impl GradientTerms {
    /// `∂ NLML / ∂ log θ = ½ (data + trace)`.
    pub fn gradient(&self) -> Vec<f64> {
        self.data_term
            .iter()
            .zip(&self.trace_term)
            .map(|(d, t)| 0.5 * (d + t))
            .collect()
    }
}

/// Hutchinson estimate of the NLML gradient with probe solves by CG.
///
/// This is an unbiased estimator of the true gradient but not the derivative
/// of [`slq_logdet`]'s estimate; use [`slq_logdet_with_gradient`] when the
/// optimizer needs consistent values and gradients.
pub fn slq_nlml_gradient<A: DifferentiableOperator + ?Sized>(
    op: &A,
    alpha: &[f64],
    probes: &ProbeSet,
    cg_tol: f64,
    max_iter: usize,
) -> Result<GradientTerms> {
    let n = op.dim();
    probes.check(n)?;
    if alpha.len() != n {
        return Err(Error::DimensionMismatch {
            what: "alpha length",
            expected: n,
            found: alpha.len(),
        });
    }
    let data_term = op
        .derivative_apply_all(alpha)
        .iter()
        .map(|d| -dot(alpha, d))
        .collect();
    let per_probe = probes
        .vectors
        .par_iter()
        .map(|z| {
            let report = cg_solve(op, z, cg_tol, max_iter)?;
            let dz = op.derivative_apply_all(z);
            let terms: Vec<f64> = dz.iter().map(|d| dot(&report.solution, d)).collect();
            Ok((terms, report.converged))
        })
        .collect::<Result<Vec<_>>>()?;
    let np = op.num_params();
    let mut trace_term = vec![0.0; np];
    let mut unconverged_solves = 0;
    for (terms, ok) in &per_probe {
        axpy(1.0 / probes.count() as f64, terms, &mut trace_term);
        unconverged_solves += usize::from(!ok);
    }
    Ok(GradientTerms {
        data_term,
        trace_term,
        unconverged_solves,
    })
}
