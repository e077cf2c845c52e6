//! Matrix-free warped-SKI operators.
//!
//! A component approximates the warped kernel matrix `K_warp,XX` by
//! `W K_UU Wᵀ`, with `W` interpolating from an equispaced lattice `U` in warped
//! space to the warped inputs `Φ(X)`. A mixture adds components and white
//! noise: `Σ_i W_i K_{U_i U_i} W_iᵀ + σ² I`.
//!
//! Mixture hyperparameters are flattened as every component's kernel
//! parameters in order, followed by the log noise standard deviation.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    interpolation_weights, interpolation_weights_warped_grid, InducingGrid, InterpWeights,
    DEFAULT_MARGIN_CELLS,
};
use crate::kernels::StationaryKernel;
use crate::linalg::{KronFactor, KronOperator, LinearOperator, SymToeplitz};
use crate::points::Points;
use crate::warping::Warp;

/// Default inducing density when none is configured.
pub const DEFAULT_POINTS_PER_LENGTHSCALE: f64 = 4.0;

/// How a component's warped-space lattice is sized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum GridSpec {
    /// Fixed node count per axis.
    Counts { counts: Vec<usize> },
    /// Fixed node spacing per axis (warped units).
    Spacing { spacing: Vec<f64> },
    /// Spacing of `smallest lengthscale / points`.
    PointsPerLengthscale { points: f64 },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::PointsPerLengthscale {
            points: DEFAULT_POINTS_PER_LENGTHSCALE,
        }
    }
}

impl GridSpec {
    /// Equispaced lattice covering `warped_box` with the default margin.
    pub fn build(&self, kernel: &StationaryKernel, warped_box: &[(f64, f64)]) -> Result<InducingGrid> {
        match self {
            GridSpec::Counts { counts } => {
                InducingGrid::covering(warped_box, counts, DEFAULT_MARGIN_CELLS)
            }
            GridSpec::Spacing { spacing } => {
                InducingGrid::covering_with_spacing(warped_box, spacing, DEFAULT_MARGIN_CELLS)
            }
            GridSpec::PointsPerLengthscale { points } => {
                if !(*points > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "points per lengthscale must be positive, got {points}"
                    )));
                }
                let h = kernel.smallest_lengthscale() / points;
                InducingGrid::covering_with_spacing(
                    warped_box,
                    &vec![h; warped_box.len()],
                    DEFAULT_MARGIN_CELLS,
                )
            }
        }
    }
}

/// Kernel matrix `K_UU` over a lattice as a Kronecker product of per-axis
/// factors: Toeplitz on equispaced axes, dense otherwise.
pub fn lattice_kernel(kernel: &StationaryKernel, grid: &InducingGrid) -> Result<KronOperator> {
    check_arity(kernel, grid.dims())?;
    let factors = (0..grid.dims())
        .map(|d| axis_factor(grid, d, |lags| kernel.axis_column(d, lags)))
        .collect::<Result<Vec<_>>>()?;
    KronOperator::new(factors)
}

fn axis_factor<F>(grid: &InducingGrid, d: usize, column: F) -> Result<KronFactor>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let axis = grid.axis(d);
    if grid.is_equispaced(d) {
        let lags: Vec<f64> = axis.iter().map(|a| a - axis[0]).collect();
        Ok(KronFactor::Toeplitz(SymToeplitz::new(column(&lags)?)?))
    } else {
        let m = axis.len();
        let lags: Vec<f64> = (0..m * m).map(|k| axis[k % m] - axis[k / m]).collect();
        Ok(KronFactor::Dense(DMatrix::from_vec(m, m, column(&lags)?)))
    }
}

fn check_arity(kernel: &StationaryKernel, dims: usize) -> Result<()> {
    if kernel.arity() != dims {
        return Err(Error::DimensionMismatch {
            what: "kernel arity",
            expected: dims,
            found: kernel.arity(),
        });
    }
    if !kernel.is_separable() {
        return Err(Error::NotSeparable);
    }
    Ok(())
}

/// Derivative of `K_UU` for one hyperparameter: a sum of Kronecker terms, one
/// per axis whose factor depends on the parameter.
#[derive(Debug, Clone)]
struct DerivativeTerms(Vec<KronOperator>);

impl DerivativeTerms {
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        let mut tmp = vec![0.0; v.len()];
        for term in &self.0 {
            term.apply_into(v, &mut tmp);
            out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
        }
        out
    }
}

fn lattice_kernel_derivatives(
    kernel: &StationaryKernel,
    grid: &InducingGrid,
    kuu: &KronOperator,
) -> Result<Vec<DerivativeTerms>> {
    let np = kernel.num_params();
    let mut terms: Vec<Vec<KronOperator>> = vec![vec![]; np];
    for d in 0..grid.dims() {
        let axis = grid.axis(d);
        let m = axis.len();
        let lags: Vec<f64> = if grid.is_equispaced(d) {
            axis.iter().map(|a| a - axis[0]).collect()
        } else {
            (0..m * m).map(|k| axis[k % m] - axis[k / m]).collect()
        };
        let grads = kernel.axis_column_grads(d, &lags)?;
        for (j, g) in grads.into_iter().enumerate() {
            let Some(col) = g else { continue };
            let factor = if grid.is_equispaced(d) {
                KronFactor::Toeplitz(SymToeplitz::new(col)?)
            } else {
                KronFactor::Dense(DMatrix::from_vec(m, m, col))
            };
            terms[j].push(kuu.with_factor(d, factor));
        }
    }
    Ok(terms.into_iter().map(DerivativeTerms).collect())
}

/// One warped-SKI summand `W K_UU Wᵀ`.
#[derive(Debug, Clone)]
pub struct SkiComponent {
    kernel: StationaryKernel,
    warp: Warp,
    grid: InducingGrid,
    weights: Arc<InterpWeights>,
    kuu: KronOperator,
    dkuu: Vec<DerivativeTerms>,
}

impl SkiComponent {
    /// Build on warped points `Φ(X)` against the equispaced lattice `grid`.
    pub fn build(
        kernel: StationaryKernel,
        warp: Warp,
        grid: InducingGrid,
        x: &Points,
    ) -> Result<Self> {
        Self::check_inputs(&kernel, &warp, &grid, x)?;
        let z = warp.forward_points(x)?;
        let weights = Arc::new(interpolation_weights(&grid, &z)?);
        Self::assemble(kernel, warp, grid, weights)
    }

    /// Build by interpolating raw inputs `X` against `Û = Φ⁻¹(U)`.
    ///
    /// Produces the same operator as [`build`](Self::build); requires an
    /// elementwise warp.
    pub fn build_via_warped_grid(
        kernel: StationaryKernel,
        warp: Warp,
        grid: InducingGrid,
        x: &Points,
    ) -> Result<Self> {
        Self::check_inputs(&kernel, &warp, &grid, x)?;
        let hat = grid.warped(&warp)?;
        let weights = Arc::new(interpolation_weights_warped_grid(&hat, &warp, x)?);
        Self::assemble(kernel, warp, grid, weights)
    }

    /// Build with a lattice sized by `spec` around the warped data.
    pub fn build_with_spec(
        kernel: StationaryKernel,
        warp: Warp,
        spec: &GridSpec,
        x: &Points,
    ) -> Result<Self> {
        let z = warp.forward_points(x)?;
        let grid = spec.build(&kernel, &z.bounding_box())?;
        check_arity(&kernel, grid.dims())?;
        let weights = Arc::new(interpolation_weights(&grid, &z)?);
        Self::assemble(kernel, warp, grid, weights)
    }

    fn check_inputs(
        kernel: &StationaryKernel,
        warp: &Warp,
        grid: &InducingGrid,
        x: &Points,
    ) -> Result<()> {
        check_arity(kernel, grid.dims())?;
        if warp.dims() != grid.dims() || x.dims() != grid.dims() {
            return Err(Error::DimensionMismatch {
                what: "warp/input dimension",
                expected: grid.dims(),
                found: if warp.dims() != grid.dims() { warp.dims() } else { x.dims() },
            });
        }
        Ok(())
    }

    fn assemble(
        kernel: StationaryKernel,
        warp: Warp,
        grid: InducingGrid,
        weights: Arc<InterpWeights>,
    ) -> Result<Self> {
        let kuu = lattice_kernel(&kernel, &grid)?;
        let dkuu = lattice_kernel_derivatives(&kernel, &grid, &kuu)?;
        Ok(Self {
            kernel,
            warp,
            grid,
            weights,
            kuu,
            dkuu,
        })
    }

    /// Same data and lattice, new kernel hyperparameters.
    pub fn with_kernel(&self, kernel: StationaryKernel) -> Result<Self> {
        Self::assemble(kernel, self.warp.clone(), self.grid.clone(), self.weights.clone())
    }

    /// Same kernel and lattice, interpolating to other inputs.
    pub fn at_points(&self, x: &Points) -> Result<Self> {
        let z = self.warp.forward_points(x)?;
        let weights = Arc::new(interpolation_weights(&self.grid, &z)?);
        Ok(Self {
            weights,
            ..self.clone()
        })
    }

    pub fn kernel(&self) -> &StationaryKernel {
        &self.kernel
    }

    pub fn warp(&self) -> &Warp {
        &self.warp
    }

    /// Lattice `U` in warped space.
    pub fn grid(&self) -> &InducingGrid {
        &self.grid
    }

    /// Inducing set `Û = Φ⁻¹(U)` in input space.
    pub fn inducing_points(&self) -> Result<InducingGrid> {
        self.grid.warped(&self.warp)
    }

    pub fn weights(&self) -> &InterpWeights {
        &self.weights
    }

    pub fn kuu(&self) -> &KronOperator {
        &self.kuu
    }

    pub fn num_points(&self) -> usize {
        self.weights.rows()
    }

    pub fn num_params(&self) -> usize {
        self.kernel.num_params()
    }

    /// `W K_UU Wᵀ v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        let mut out = vec![0.0; v.len()];
        self.matvec_into(v, &mut out);
        Ok(out)
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.num_points() {
            return Err(Error::DimensionMismatch {
                what: "component matvec",
                expected: self.num_points(),
                found: v.len(),
            });
        }
        Ok(())
    }

    fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        let mut t = vec![0.0; self.weights.cols()];
        self.weights.transpose_matvec_into(v, &mut t);
        let u = self.kuu.apply(&t);
        self.weights.matvec_into(&u, out);
    }

    /// `K_UU Wᵀ v`, the lattice-side half of a product.
    pub fn lattice_coefficients(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        let mut t = vec![0.0; self.weights.cols()];
        self.weights.transpose_matvec_into(v, &mut t);
        Ok(self.kuu.apply(&t))
    }

    /// `W (∂K_UU/∂log θ_j) Wᵀ v` for every kernel parameter `j`.
    pub fn derivative_matvecs(&self, v: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_len(v)?;
        let mut t = vec![0.0; self.weights.cols()];
        self.weights.transpose_matvec_into(v, &mut t);
        Ok(self
            .dkuu
            .iter()
            .map(|terms| {
                let u = terms.apply(&t);
                let mut out = vec![0.0; v.len()];
                self.weights.matvec_into(&u, &mut out);
                out
            })
            .collect())
    }

    /// Dense `W K_UU Wᵀ`, for oracles at desk scale.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let w = &self.weights;
        let n = w.rows();
        let kuu = self.kuu.to_dense();
        // (W K_UU) row by row, then multiply by Wᵀ through the sparse rows.
        let mut wk = DMatrix::<f64>::zeros(n, kuu.ncols());
        for r in 0..n {
            let (idx, vals) = w.row(r);
            for (&c, &a) in idx.iter().zip(&vals) {
                for k in 0..kuu.ncols() {
                    wk[(r, k)] += a * kuu[(c, k)];
                }
            }
        }
        let mut out = DMatrix::zeros(n, n);
        for s in 0..n {
            let (idx, vals) = w.row(s);
            for r in 0..n {
                out[(r, s)] = idx.iter().zip(&vals).map(|(&c, &a)| a * wk[(r, c)]).sum();
            }
        }
        out
    }
}

/// `Σ_i W_i K_{U_i U_i} W_iᵀ + σ² I`.
#[derive(Debug, Clone)]
pub struct MixtureOperator {
    components: Vec<SkiComponent>,
    noise_variance: f64,
    n: usize,
}

impl MixtureOperator {
    pub fn new(components: Vec<SkiComponent>, noise_variance: f64, n: usize) -> Result<Self> {
        if !(noise_variance.is_finite() && noise_variance > 0.0) {
            return Err(Error::InvalidHyperparameter {
                name: "noise variance".into(),
                value: noise_variance,
            });
        }
        if let Some(c) = components.iter().find(|c| c.num_points() != n) {
            return Err(Error::DimensionMismatch {
                what: "component data count",
                expected: n,
                found: c.num_points(),
            });
        }
        Ok(Self {
            components,
            noise_variance,
            n,
        })
    }

    pub fn components(&self) -> &[SkiComponent] {
        &self.components
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Same interpolation, new flattened log-space hyperparameters
    /// (component kernels in order, then log noise std).
    pub fn with_log_params(&self, log_params: &[f64]) -> Result<Self> {
        if log_params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                what: "mixture hyperparameter vector",
                expected: self.num_params(),
                found: log_params.len(),
            });
        }
        let mut offset = 0;
        let mut components = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let np = c.num_params();
            let kernel = c.kernel.with_log_params(&log_params[offset..offset + np])?;
            components.push(c.with_kernel(kernel)?);
            offset += np;
        }
        let noise_variance = (2.0 * log_params[offset]).exp();
        Self::new(components, noise_variance, self.n)
    }

    /// Flattened log-space hyperparameters.
    pub fn log_params(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.components.iter().flat_map(|c| c.kernel.log_params()).collect();
        out.push(0.5 * self.noise_variance.ln());
        out
    }

    /// Kernel parameters of all components plus the noise parameter.
    pub fn num_params(&self) -> usize {
        self.components.iter().map(|c| c.num_params()).sum::<usize>() + 1
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        Ok(self.apply(v))
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "mixture matvec",
                expected: self.n,
                found: v.len(),
            });
        }
        Ok(())
    }

    /// `W_j K_{U_j U_j} W_jᵀ v` for one component.
    pub fn component_matvec(&self, j: usize, v: &[f64]) -> Result<Vec<f64>> {
        self.components
            .get(j)
            .ok_or(Error::ParameterIndex {
                index: j,
                count: self.components.len(),
            })?
            .matvec(v)
    }

    /// `(∂K/∂log θ_which) v`.
    pub fn derivative_matvec(&self, which: usize, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        let count = self.num_params();
        if which >= count {
            return Err(Error::ParameterIndex { index: which, count });
        }
        if which == count - 1 {
            let s = 2.0 * self.noise_variance;
            return Ok(v.iter().map(|x| s * x).collect());
        }
        let mut offset = 0;
        for c in &self.components {
            if which < offset + c.num_params() {
                let mut t = vec![0.0; c.weights.cols()];
                c.weights.transpose_matvec_into(v, &mut t);
                let u = c.dkuu[which - offset].apply(&t);
                let mut out = vec![0.0; self.n];
                c.weights.matvec_into(&u, &mut out);
                return Ok(out);
            }
            offset += c.num_params();
        }
        unreachable!("index checked against parameter count")
    }

    /// `(∂K/∂log θ_j) v` for every parameter, in flattened order.
    pub fn derivative_matvecs(&self, v: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_len(v)?;
        let mut out = Vec::with_capacity(self.num_params());
        for c in &self.components {
            out.extend(c.derivative_matvecs(v)?);
        }
        let s = 2.0 * self.noise_variance;
        out.push(v.iter().map(|x| s * x).collect());
        Ok(out)
    }

    /// `(∂K/∂log θ_j) v` for the listed parameter indices only, in the
    /// order given.
    pub fn derivative_matvecs_subset(&self, v: &[f64], which: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_len(v)?;
        let count = self.num_params();
        if let Some(&bad) = which.iter().find(|&&j| j >= count) {
            return Err(Error::ParameterIndex { index: bad, count });
        }
        let mut out = vec![Vec::new(); which.len()];
        let mut offset = 0;
        for c in &self.components {
            let np = c.num_params();
            let wanted: Vec<(usize, usize)> = which
                .iter()
                .enumerate()
                .filter(|(_, &j)| j >= offset && j < offset + np)
                .map(|(slot, &j)| (slot, j - offset))
                .collect();
            if !wanted.is_empty() {
                let mut t = vec![0.0; c.weights.cols()];
                c.weights.transpose_matvec_into(v, &mut t);
                for (slot, local) in wanted {
                    let u = c.dkuu[local].apply(&t);
                    let mut r = vec![0.0; self.n];
                    c.weights.matvec_into(&u, &mut r);
                    out[slot] = r;
                }
            }
            offset += np;
        }
        for (slot, &j) in which.iter().enumerate() {
            if j == count - 1 {
                let s = 2.0 * self.noise_variance;
                out[slot] = v.iter().map(|x| s * x).collect();
            }
        }
        Ok(out)
    }

    /// Dense `K`, for oracles at desk scale.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut k = DMatrix::identity(self.n, self.n) * self.noise_variance;
        for c in &self.components {
            k += c.to_dense();
        }
        k
    }
}

impl LinearOperator for MixtureOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = self.noise_variance * v;
        }
        let mut tmp = vec![0.0; self.n];
        for c in &self.components {
            c.matvec_into(x, &mut tmp);
            out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
        }
    }
}

/// Operators that also expose products with `∂K/∂log θ_j`.
pub trait DifferentiableOperator: LinearOperator {
    fn num_params(&self) -> usize;

    /// `(∂K/∂log θ_j) x` for every parameter `j`.
    fn derivative_apply_all(&self, x: &[f64]) -> Vec<Vec<f64>>;
}

impl DifferentiableOperator for MixtureOperator {
    fn num_params(&self) -> usize {
        MixtureOperator::num_params(self)
    }

    fn derivative_apply_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.derivative_matvecs(x).expect("length checked by caller")
    }
}

/// Dense operator with dense derivative matrices; reference implementation.
#[derive(Debug, Clone)]
pub struct DenseFamily {
    pub matrix: DMatrix<f64>,
    pub derivatives: Vec<DMatrix<f64>>,
}

impl LinearOperator for DenseFamily {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        LinearOperator::apply_into(&self.matrix, x, out)
    }
}

impl DifferentiableOperator for DenseFamily {
    fn num_params(&self) -> usize {
        self.derivatives.len()
    }

    fn derivative_apply_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.derivatives.iter().map(|d| LinearOperator::apply(d, x)).collect()
    }
}

/// Dense `k(φ(x_i) − φ(x_j))` over a point set.
pub fn warped_kernel_matrix(
    kernel: &StationaryKernel,
    warp: &Warp,
    points: &Points,
) -> Result<DMatrix<f64>> {
    let z = warp.forward_points(points)?;
    kernel_matrix(kernel, &z)
}

/// Dense `k(x_i − x_j)`.
pub fn kernel_matrix(kernel: &StationaryKernel, points: &Points) -> Result<DMatrix<f64>> {
    if kernel.arity() != points.dims() {
        return Err(Error::DimensionMismatch {
            what: "kernel arity",
            expected: points.dims(),
            found: kernel.arity(),
        });
    }
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    let mut tau = vec![0.0; points.dims()];
    for j in 0..n {
        for i in j..n {
            for (t, (a, b)) in tau.iter_mut().zip(points.row(i).iter().zip(points.row(j))) {
                *t = a - b;
            }
            let v = kernel.eval_unchecked(&tau);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Whether a square matrix has constant diagonals to `tol` (absolute).
pub fn is_toeplitz(m: &DMatrix<f64>, tol: f64) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..n).all(|j| (m[(i, j)] - m[(i.abs_diff(j), 0)]).abs() <= tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::AxisSpec;
    use crate::warping::Interval;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cubic() -> Warp {
        Warp::polynomial(vec![2.0, 0.0, 1.0], Interval::new(-1.5, 1.5).unwrap()).unwrap()
    }

    fn uniform_points(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Points {
        Points::from_1d((0..n).map(|_| rng.random_range(lo..hi)).collect())
    }

    fn frob_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn identity_warp_reduces_to_ski() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = uniform_points(&mut rng, 300, 0.0, 4.0);
        let k = StationaryKernel::squared_exponential(1.0, 0.3).unwrap();
        let spec = GridSpec::Counts { counts: vec![512] };
        let c = SkiComponent::build_with_spec(k.clone(), Warp::identity(1), &spec, &x).unwrap();
        let exact = kernel_matrix(&k, &x).unwrap();
        assert!(frob_rel(&c.to_dense(), &exact) <= 1e-3);
    }

    #[test]
    fn cubic_warp_matches_dense_warped_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = uniform_points(&mut rng, 300, -1.2, 0.75);
        let k = StationaryKernel::squared_exponential(1.5, 0.4).unwrap();
        let spec = GridSpec::Counts { counts: vec![1024] };
        let c = SkiComponent::build_with_spec(k.clone(), cubic(), &spec, &x).unwrap();
        let exact = warped_kernel_matrix(&k, &cubic(), &x).unwrap();
        assert!(frob_rel(&c.to_dense(), &exact) <= 1e-3);
        assert!(c.kuu().factors().iter().all(KronFactor::is_toeplitz));
    }

    #[test]
    fn nodal_points_are_exact() {
        let grid = InducingGrid::equispaced(&[AxisSpec { min: 0.0, max: 3.0, count: 31 }]).unwrap();
        let nodes: Vec<f64> = grid.axis(0)[1..30].to_vec();
        let x = Points::from_1d(nodes);
        let k = StationaryKernel::squared_exponential(1.2, 0.5).unwrap();
        let c = SkiComponent::build(k.clone(), Warp::identity(1), grid, &x).unwrap();
        let exact = kernel_matrix(&k, &x).unwrap();
        assert!((c.to_dense() - exact).amax() <= 1e-12);
    }

    fn two_component(n: usize, seed: u64) -> (MixtureOperator, Points) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform_points(&mut rng, n, 0.0, 10.0);
        let phase = crate::warping::phase_from_events(
            &(0..16).map(|i| 0.7 * i as f64 + 0.05 * (i as f64).sin()).collect::<Vec<_>>(),
            true,
        )
        .unwrap();
        let k1 = StationaryKernel::quasi_periodic(1.0, 20.0, 0.8, 2.0 * std::f64::consts::PI).unwrap();
        let k2 = StationaryKernel::squared_exponential(0.7, 1.5).unwrap();
        let spec = GridSpec::PointsPerLengthscale { points: 8.0 };
        let c1 = SkiComponent::build_with_spec(k1, phase, &spec, &x).unwrap();
        let c2 = SkiComponent::build_with_spec(k2, Warp::identity(1), &spec, &x).unwrap();
        (MixtureOperator::new(vec![c1, c2], 0.09, n).unwrap(), x)
    }

    #[test]
    fn mixture_matvec_examples() {
        let empty = MixtureOperator::new(vec![], 0.25, 4).unwrap();
        assert_eq!(empty.matvec(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0.25, 0.5, 0.75, 1.0]);
        assert!(empty.matvec(&[1.0]).is_err());

        let (op, x) = two_component(300, 3);
        let mut exact = DMatrix::identity(300, 300) * 0.09;
        for c in op.components() {
            exact += warped_kernel_matrix(c.kernel(), c.warp(), &x).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = op.matvec(&v).unwrap();
        let dense = &exact * nalgebra::DVector::from_vec(v);
        let err = (nalgebra::DVector::from_vec(fast) - &dense).norm() / dense.norm();
        assert!(err <= 1e-3, "{err}");
    }

    #[test]
    fn operator_is_symmetric() {
        let (op, _) = two_component(400, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kv = op.apply(&v);
        let kw = op.apply(&w);
        let a: f64 = kv.iter().zip(&w).map(|(p, q)| p * q).sum();
        let b: f64 = kw.iter().zip(&v).map(|(p, q)| p * q).sum();
        assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()));
    }

    #[test]
    fn derivative_examples() {
        let (op, _) = two_component(200, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let np = op.num_params();
        assert_eq!(np, 4 + 2 + 1);
        let noise = op.derivative_matvec(np - 1, &v).unwrap();
        for (a, b) in noise.iter().zip(&v) {
            assert!((a - 2.0 * 0.09 * b).abs() <= 1e-15);
        }
        // Amplitude derivative of the second (SE) component is twice its product.
        let amp = op.derivative_matvec(4, &v).unwrap();
        let base = op.component_matvec(1, &v).unwrap();
        for (a, b) in amp.iter().zip(&base) {
            assert!((a - 2.0 * b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        let all = op.derivative_matvecs(&v).unwrap();
        for j in 0..np {
            assert_eq!(all[j], op.derivative_matvec(j, &v).unwrap());
        }
        assert!(matches!(op.derivative_matvec(np, &v), Err(Error::ParameterIndex { .. })));
    }

    #[test]
    fn lengthscale_derivative_matches_dense_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = uniform_points(&mut rng, 200, -1.2, 0.75);
        let k = StationaryKernel::squared_exponential(1.5, 0.4).unwrap();
        let spec = GridSpec::Counts { counts: vec![800] };
        let c = SkiComponent::build_with_spec(k.clone(), cubic(), &spec, &x).unwrap();
        let op = MixtureOperator::new(vec![c], 0.25, 200).unwrap();
        let v: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = op.derivative_matvec(1, &v).unwrap();
        let h = 1e-5;
        let mut lp = k.log_params();
        lp[1] += h;
        let up = warped_kernel_matrix(&k.with_log_params(&lp).unwrap(), &cubic(), &x).unwrap();
        lp[1] -= 2.0 * h;
        let down = warped_kernel_matrix(&k.with_log_params(&lp).unwrap(), &cubic(), &x).unwrap();
        let fd = (up - down) / (2.0 * h) * nalgebra::DVector::from_vec(v);
        let err = (nalgebra::DVector::from_vec(d) - &fd).norm() / fd.norm();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn two_dimensional_lengthscale_derivative_is_exact_for_the_lattice() {
        // With every point on a node, W is a selection and the derivative
        // operator must equal the dense derivative of K_UU restricted to the nodes.
        let grid = InducingGrid::equispaced(&[
            AxisSpec { min: 0.0, max: 1.0, count: 10 },
            AxisSpec { min: 0.0, max: 2.0, count: 12 },
        ])
        .unwrap();
        let nodes = grid.nodes();
        let keep: Vec<usize> = (0..nodes.len())
            .filter(|&i| {
                let r = nodes.row(i);
                r[0] > 0.15 && r[0] < 0.85 && r[1] > 0.2 && r[1] < 1.8
            })
            .collect();
        let x = nodes.select(&keep);
        let k = StationaryKernel::squared_exponential_nd(1.3, 0.35, 2).unwrap();
        let c = SkiComponent::build(k.clone(), Warp::identity(2), grid, &x).unwrap();
        let op = MixtureOperator::new(vec![c], 0.1, x.len()).unwrap();
        let v: Vec<f64> = (0..x.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let d = op.derivative_matvec(1, &v).unwrap();
        let n = x.len();
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let tau: Vec<f64> = x.row(i).iter().zip(x.row(j)).map(|(a, b)| a - b).collect();
                dense[(i, j)] = k.grad(&tau).unwrap()[1];
            }
        }
        let expected = dense * nalgebra::DVector::from_vec(v);
        for (a, b) in d.iter().zip(expected.iter()) {
            assert!((a - b).abs() <= 1e-10 * expected.amax());
        }
    }

    #[test]
    fn warped_grid_path_gives_identical_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = uniform_points(&mut rng, 300, -1.2, 0.75);
        let k = StationaryKernel::squared_exponential(1.5, 0.4).unwrap();
        let z = cubic().forward_points(&x).unwrap();
        let grid = InducingGrid::covering(&z.bounding_box(), &[256], 2).unwrap();
        let a = SkiComponent::build(k.clone(), cubic(), grid.clone(), &x).unwrap();
        let b = SkiComponent::build_via_warped_grid(k, cubic(), grid, &x).unwrap();
        let v: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (ka, kb) = (a.matvec(&v).unwrap(), b.matvec(&v).unwrap());
        for (p, q) in ka.iter().zip(&kb) {
            assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn unwarped_lattice_loses_toeplitz_structure() {
        let grid = InducingGrid::equispaced(&[AxisSpec { min: -1.2, max: 0.75, count: 40 }]).unwrap();
        let k = StationaryKernel::squared_exponential(1.5, 0.4).unwrap();
        let plain = warped_kernel_matrix(&k, &cubic(), &grid.nodes()).unwrap();
        assert!(!is_toeplitz(&plain, 1e-6));
        // In warped space the same kernel on the lattice U is Toeplitz.
        let u = InducingGrid::equispaced(&[AxisSpec { min: -4.7, max: 1.6, count: 40 }]).unwrap();
        let kuu = lattice_kernel(&k, &u).unwrap();
        assert!(kuu.factors()[0].is_toeplitz());
        assert!(is_toeplitz(&kuu.to_dense(), 1e-14));
        // And that lattice is exactly K_warp over Û.
        let hat = u.warped(&cubic()).unwrap();
        let k_hat = warped_kernel_matrix(&k, &cubic(), &hat.nodes()).unwrap();
        assert!((k_hat - kuu.to_dense()).amax() <= 1e-12);
    }

    #[test]
    fn general_warp_uses_warped_points() {
        let warp = Warp::affine(
            vec![1.0, 0.4, -0.3, 0.9],
            vec![0.0, 0.0],
            vec![Interval::new(-1.0, 1.0).unwrap(); 2],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let raw: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Points::new(2, raw).unwrap();
        let k = StationaryKernel::squared_exponential_nd(1.0, 0.5, 2).unwrap();
        let spec = GridSpec::Counts { counts: vec![60, 60] };
        let c = SkiComponent::build_with_spec(k.clone(), warp.clone(), &spec, &x).unwrap();
        assert!(c.kuu().factors().iter().all(KronFactor::is_toeplitz));
        let exact = warped_kernel_matrix(&k, &warp, &x).unwrap();
        assert!(frob_rel(&c.to_dense(), &exact) <= 1e-3);
        assert!(c.inducing_points().is_err());
    }
}
