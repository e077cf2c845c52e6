//! Structured matrix primitives: symmetric Toeplitz products through circulant
//! embedding, Kronecker products through mode-wise contractions, and
//! Kronecker eigendecompositions for grid-complete solves and determinants.

use std::cell::RefCell;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};

/// Flat ordering of multi-indices over a tensor-product grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexOrder {
    /// Lexicographic, the last listed dimension varies fastest (row-major).
    LastFastest,
}

/// The one ordering shared by grids, interpolation columns and Kronecker operators.
pub const INDEX_ORDER: IndexOrder = IndexOrder::LastFastest;

/// Relative eigenvalue floor below which a factor counts as indefinite.
pub const PSD_RTOL: f64 = 1e-8;

/// Square operator accessed only through products.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// `out = A x`; both slices have length [`dim`](Self::dim).
    fn apply_into(&self, x: &[f64], out: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(x, &mut out);
        out
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.nrows();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            let col = &self.as_slice()[j * n..(j + 1) * n];
            for (o, &a) in out.iter_mut().zip(col) {
                *o += a * xj;
            }
        }
    }
}

/// Operator given by a closure.
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

thread_local! {
    static PLANNER: RefCell<RealFftPlanner<f64>> = RefCell::new(RealFftPlanner::new());
}

/// Smallest 5-smooth integer `≥ n`.
pub fn next_fast_len(n: usize) -> usize {
    let mut best = usize::MAX;
    let mut p5 = 1usize;
    while p5 < 2 * n.max(1) {
        let mut p35 = p5;
        while p35 < 2 * n.max(1) {
            let mut v = p35;
            while v < n {
                v *= 2;
            }
            best = best.min(v);
            p35 *= 3;
        }
        p5 *= 5;
    }
    best
}

const DENSE_TOEPLITZ_MAX: usize = 32;

/// Symmetric Toeplitz matrix given by its first column.
#[derive(Clone)]
pub struct SymToeplitz {
    column: Vec<f64>,
    fft_len: usize,
    spectrum: Vec<f64>,
    forward: Option<Arc<dyn RealToComplex<f64>>>,
    backward: Option<Arc<dyn ComplexToReal<f64>>>,
}

impl std::fmt::Debug for SymToeplitz {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymToeplitz")
            .field("size", &self.column.len())
            .field("fft_len", &self.fft_len)
            .finish()
    }
}

impl SymToeplitz {
    pub fn new(first_column: Vec<f64>) -> Result<Self> {
        let m = first_column.len();
        if m == 0 {
            return Err(Error::InvalidArgument("Toeplitz matrix needs a nonempty column".into()));
        }
        if m <= DENSE_TOEPLITZ_MAX {
            return Ok(Self {
                column: first_column,
                fft_len: 0,
                spectrum: vec![],
                forward: None,
                backward: None,
            });
        }
        // Even length keeps the half-spectrum layout of the real transforms simple.
        let len = 2 * next_fast_len(m);
        let (forward, backward) = PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            (p.plan_fft_forward(len), p.plan_fft_inverse(len))
        });
        let mut embed = vec![0.0; len];
        for (j, &c) in first_column.iter().enumerate() {
            embed[j] = c;
            if j > 0 {
                embed[len - j] = c;
            }
        }
        let mut half = forward.make_output_vec();
        forward
            .process(&mut embed, &mut half)
            .map_err(|e| Error::InvalidArgument(format!("circulant embedding transform failed: {e}")))?;
        // The embedding is real and symmetric, so its spectrum is real; the
        // 1/len normalisation of the inverse transform is folded in here.
        let scale = 1.0 / len as f64;
        let spectrum = half.iter().map(|z| z.re * scale).collect();
        Ok(Self {
            column: first_column,
            fft_len: len,
            spectrum,
            forward: Some(forward),
            backward: Some(backward),
        })
    }

    pub fn size(&self) -> usize {
        self.column.len()
    }

    pub fn first_column(&self) -> &[f64] {
        &self.column
    }

    /// Circulant embedding length (0 when applied densely).
    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.size();
        DMatrix::from_fn(m, m, |i, j| self.column[i.abs_diff(j)])
    }

    /// `T v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.size() {
            return Err(Error::DimensionMismatch {
                what: "Toeplitz matvec",
                expected: self.size(),
                found: v.len(),
            });
        }
        let mut out = v.to_vec();
        self.apply_fibers(&mut out);
        Ok(out)
    }

    /// In-place product on consecutive fibers of length `size()`.
    fn apply_fibers(&self, data: &mut [f64]) {
        let m = self.size();
        let (Some(fwd), Some(bwd)) = (&self.forward, &self.backward) else {
            let mut tmp = vec![0.0; m];
            for fiber in data.chunks_exact_mut(m) {
                for (i, t) in tmp.iter_mut().enumerate() {
                    *t = fiber
                        .iter()
                        .enumerate()
                        .map(|(j, &x)| self.column[i.abs_diff(j)] * x)
                        .sum();
                }
                fiber.copy_from_slice(&tmp);
            }
            return;
        };
        let len = self.fft_len;
        let fibers = data.len() / m;
        let per_chunk = (fibers / rayon::current_num_threads().max(1)).clamp(1, 64);
        // Buffers and scratch are allocated once per chunk and reused across its fibers.
        let work = |chunk: &mut [f64]| {
            let mut real = fwd.make_input_vec();
            let mut half = fwd.make_output_vec();
            let mut fwd_scratch = fwd.make_scratch_vec();
            let mut bwd_scratch = bwd.make_scratch_vec();
            let last = half.len() - 1;
            for fiber in chunk.chunks_exact_mut(m) {
                real[..m].copy_from_slice(fiber);
                real[m..].iter_mut().for_each(|x| *x = 0.0);
                fwd.process_with_scratch(&mut real, &mut half, &mut fwd_scratch)
                    .expect("buffer lengths come from the plan");
                for (b, &s) in half.iter_mut().zip(&self.spectrum) {
                    *b *= s;
                }
                // Exact zeros where the inverse requires a real value.
                half[0].im = 0.0;
                half[last].im = 0.0;
                bwd.process_with_scratch(&mut half, &mut real, &mut bwd_scratch)
                    .expect("buffer lengths come from the plan");
                fiber.copy_from_slice(&real[..m]);
            }
        };
        if fibers > 1 && fibers * len >= 1 << 14 {
            data.par_chunks_mut(m * per_chunk).for_each(work);
        } else {
            data.chunks_mut(m * per_chunk).for_each(work);
        }
    }
}

impl LinearOperator for SymToeplitz {
    fn dim(&self) -> usize {
        self.size()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        self.apply_fibers(out);
    }
}

/// One per-dimension factor of a Kronecker operator.
#[derive(Debug, Clone)]
pub enum KronFactor {
    Dense(DMatrix<f64>),
    Toeplitz(SymToeplitz),
}

impl KronFactor {
    pub fn size(&self) -> usize {
        match self {
            KronFactor::Dense(m) => m.nrows(),
            KronFactor::Toeplitz(t) => t.size(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            KronFactor::Dense(m) => m.clone(),
            KronFactor::Toeplitz(t) => t.to_dense(),
        }
    }

    pub fn is_toeplitz(&self) -> bool {
        matches!(self, KronFactor::Toeplitz(_))
    }

    /// In-place product on consecutive fibers of length `size()`.
    fn apply_fibers(&self, data: &mut [f64]) {
        match self {
            KronFactor::Toeplitz(t) => t.apply_fibers(data),
            KronFactor::Dense(k) => {
                let m = k.nrows();
                let cols = data.len() / m;
                let block = nalgebra::DMatrixView::from_slice(data, m, cols);
                let prod = k * block;
                data.copy_from_slice(prod.as_slice());
            }
        }
    }
}

/// `K_1 ⊗ K_2 ⊗ … ⊗ K_D` in [`INDEX_ORDER`].
#[derive(Debug, Clone)]
pub struct KronOperator {
    factors: Vec<KronFactor>,
}

impl KronOperator {
    pub fn new(factors: Vec<KronFactor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidArgument("Kronecker operator needs a factor".into()));
        }
        for f in &factors {
            if let KronFactor::Dense(m) = f {
                if m.nrows() != m.ncols() {
                    return Err(Error::DimensionMismatch {
                        what: "square Kronecker factor",
                        expected: m.nrows(),
                        found: m.ncols(),
                    });
                }
            }
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[KronFactor] {
        &self.factors
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.factors.iter().map(KronFactor::size).collect()
    }

    pub fn size(&self) -> usize {
        self.factors.iter().map(KronFactor::size).product()
    }

    /// The same operator with factor `d` replaced.
    pub fn with_factor(&self, d: usize, factor: KronFactor) -> Self {
        let mut factors = self.factors.clone();
        factors[d] = factor;
        Self { factors }
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.size() {
            return Err(Error::DimensionMismatch {
                what: "Kronecker matvec",
                expected: self.size(),
                found: v.len(),
            });
        }
        let mut x = v.to_vec();
        self.apply_in_place(&mut x);
        Ok(x)
    }

    fn apply_in_place(&self, x: &mut [f64]) {
        let sizes = self.sizes();
        let total = x.len();
        let mut scratch = Vec::new();
        for (d, factor) in self.factors.iter().enumerate() {
            let m = sizes[d];
            let right: usize = sizes[d + 1..].iter().product();
            if right == 1 {
                factor.apply_fibers(x);
                continue;
            }
            let left = total / (m * right);
            // Gather mode-d fibers contiguously, apply, scatter back.
            scratch.resize(total, 0.0);
            for l in 0..left {
                let base = l * m * right;
                for r in 0..right {
                    let dst = (l * right + r) * m;
                    for k in 0..m {
                        scratch[dst + k] = x[base + k * right + r];
                    }
                }
            }
            factor.apply_fibers(&mut scratch);
            for l in 0..left {
                let base = l * m * right;
                for r in 0..right {
                    let src = (l * right + r) * m;
                    for k in 0..m {
                        x[base + k * right + r] = scratch[src + k];
                    }
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.factors
            .iter()
            .skip(1)
            .fold(self.factors[0].to_dense(), |acc, f| acc.kronecker(&f.to_dense()))
    }
}

impl LinearOperator for KronOperator {
    fn dim(&self) -> usize {
        self.size()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        self.apply_in_place(out);
    }
}

/// Per-factor eigendecompositions `K_d = Q_d V_d Q_dᵀ`.
#[derive(Debug, Clone)]
pub struct KronEigen {
    eigenvalues: Vec<Vec<f64>>,
    eigenvectors: Vec<DMatrix<f64>>,
}

impl KronEigen {
    /// Decompose each factor densely; fails if a factor is indefinite.
    pub fn new(kron: &KronOperator) -> Result<Self> {
        let mut eigenvalues = Vec::new();
        let mut eigenvectors = Vec::new();
        for f in kron.factors() {
            let eig = SymmetricEigen::new(f.to_dense());
            let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            let min = eig.eigenvalues.min();
            if min < -PSD_RTOL * max {
                return Err(Error::NotPositiveSemidefinite {
                    min_eigenvalue: min,
                    max_eigenvalue: max,
                });
            }
            eigenvalues.push(eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect());
            eigenvectors.push(eig.eigenvectors);
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn factor_eigenvalues(&self) -> &[Vec<f64>] {
        &self.eigenvalues
    }

    pub fn factor_eigenvectors(&self) -> &[DMatrix<f64>] {
        &self.eigenvectors
    }

    /// Eigenvalues of the full operator, in [`INDEX_ORDER`].
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues.iter().fold(vec![1.0], |acc, ev| {
            acc.iter()
                .flat_map(|a| ev.iter().map(move |l| a * l))
                .collect()
        })
    }

    fn q(&self, transpose: bool) -> KronOperator {
        KronOperator {
            factors: self
                .eigenvectors
                .iter()
                .map(|q| KronFactor::Dense(if transpose { q.transpose() } else { q.clone() }))
                .collect(),
        }
    }

    /// `(K + σ²I)⁻¹ y = Q (V + σ²I)⁻¹ Qᵀ y`.
    pub fn solve(&self, noise_variance: f64, y: &[f64]) -> Result<Vec<f64>> {
        let qt = self.q(true);
        let mut t = qt.matvec(y)?;
        for (ti, l) in t.iter_mut().zip(self.eigenvalues()) {
            *ti /= l + noise_variance;
        }
        self.q(false).matvec(&t)
    }

    /// `log|K + σ²I| = Σ_i log(V_ii + σ²)`.
    pub fn logdet(&self, noise_variance: f64) -> f64 {
        self.eigenvalues()
            .iter()
            .map(|l| (l + noise_variance).ln())
            .sum()
    }

    /// Symmetric square root `⊗_d Q_d V_d^{1/2} Q_dᵀ`.
    pub fn sqrt_operator(&self) -> KronOperator {
        KronOperator {
            factors: self
                .eigenvectors
                .iter()
                .zip(&self.eigenvalues)
                .map(|(q, ev)| {
                    let mut scaled = q.clone();
                    for (j, l) in ev.iter().enumerate() {
                        scaled.column_mut(j).scale_mut(l.sqrt());
                    }
                    KronFactor::Dense(scaled * q.transpose())
                })
                .collect(),
        }
    }
}
