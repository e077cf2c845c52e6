//! Inducing grids and sparse local-cubic interpolation weights.
//!
//! Grid nodes are enumerated lexicographically with the last dimension
//! varying fastest ([`crate::linalg::INDEX_ORDER`]); interpolation column
//! indices and Kronecker operators share this order.
//!
//! Weights are cubic Hermite interpolation with tangents taken from the
//! secant through the neighbouring nodes (non-uniform Catmull-Rom). On a
//! uniform axis this is exactly Keys' cubic convolution with `a = −1/2`.
//! Each point uses the 4 nodes around its cell per dimension, `4^D` per row.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::check_equispaced;
use crate::points::Points;
use crate::warping::Warp;

/// Smallest number of nodes per axis (cubic stencil plus margin).
pub const MIN_AXIS_POINTS: usize = 8;
/// Default number of grid cells left between the data box and the grid edge.
pub const DEFAULT_MARGIN_CELLS: usize = 2;

/// Equispaced axis specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

/// Tensor-product grid of inducing points.
#[derive(Debug, Clone, PartialEq)]
pub struct InducingGrid {
    axes: Vec<Vec<f64>>,
    equispaced: Vec<bool>,
}

impl InducingGrid {
    /// Grid from explicit, strictly increasing per-axis coordinates.
    pub fn from_axes(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidArgument("grid needs at least one axis".into()));
        }
        let mut equispaced = Vec::with_capacity(axes.len());
        for (d, axis) in axes.iter().enumerate() {
            if axis.len() < MIN_AXIS_POINTS {
                return Err(Error::GridTooSmall {
                    dim: d,
                    count: axis.len(),
                    required: MIN_AXIS_POINTS,
                });
            }
            if let Some(i) = (1..axis.len()).find(|&i| !(axis[i] > axis[i - 1])) {
                return Err(Error::NotIncreasing { index: i });
            }
            equispaced.push(check_equispaced(axis).is_ok());
        }
        Ok(Self { axes, equispaced })
    }

    /// Equispaced grid with the given per-axis ranges and counts.
    pub fn equispaced(specs: &[AxisSpec]) -> Result<Self> {
        let mut axes = Vec::with_capacity(specs.len());
        for (d, s) in specs.iter().enumerate() {
            if s.count < MIN_AXIS_POINTS {
                return Err(Error::GridTooSmall {
                    dim: d,
                    count: s.count,
                    required: MIN_AXIS_POINTS,
                });
            }
            if !(s.min < s.max) || !s.min.is_finite() || !s.max.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "axis {d}: need finite min < max, got [{}, {}]",
                    s.min, s.max
                )));
            }
            axes.push(linspace(s.min, s.max, s.count));
        }
        Self::from_axes(axes)
    }

    /// Equispaced grid with `counts[d]` nodes per axis that covers `data_box`
    /// with `margin_cells` spare cells on both sides.
    pub fn covering(data_box: &[(f64, f64)], counts: &[usize], margin_cells: usize) -> Result<Self> {
        if data_box.len() != counts.len() {
            return Err(Error::DimensionMismatch {
                what: "grid counts",
                expected: data_box.len(),
                found: counts.len(),
            });
        }
        let mut specs = Vec::with_capacity(counts.len());
        for (d, (&(lo, hi), &count)) in data_box.iter().zip(counts).enumerate() {
            let required = (2 * margin_cells + 2).max(MIN_AXIS_POINTS);
            if count < required {
                return Err(Error::GridTooSmall { dim: d, count, required });
            }
            let width = if hi > lo { hi - lo } else { 1e-9 * lo.abs().max(1.0) };
            let h = width / (count - 1 - 2 * margin_cells) as f64;
            let min = lo - margin_cells as f64 * h;
            specs.push(AxisSpec {
                min,
                max: min + (count - 1) as f64 * h,
                count,
            });
        }
        let grid = Self::equispaced(&specs)?;
        grid.check_margin(data_box, margin_cells)?;
        Ok(grid)
    }

    /// Equispaced grid of the given spacing covering `data_box` with margin.
    pub fn covering_with_spacing(
        data_box: &[(f64, f64)],
        spacing: &[f64],
        margin_cells: usize,
    ) -> Result<Self> {
        if data_box.len() != spacing.len() {
            return Err(Error::DimensionMismatch {
                what: "grid spacings",
                expected: data_box.len(),
                found: spacing.len(),
            });
        }
        let counts: Vec<usize> = data_box
            .iter()
            .zip(spacing)
            .map(|(&(lo, hi), &h)| {
                let cells = ((hi - lo) / h).ceil().max(1.0) as usize;
                (cells + 1 + 2 * margin_cells).max(MIN_AXIS_POINTS)
            })
            .collect();
        Self::covering(data_box, &counts, margin_cells)
    }

    /// Error unless every axis keeps `margin_cells` nodes outside `data_box`.
    pub fn check_margin(&self, data_box: &[(f64, f64)], margin_cells: usize) -> Result<()> {
        for (d, (axis, &(lo, hi))) in self.axes.iter().zip(data_box).enumerate() {
            let m = axis.len();
            let ok = m > 2 * margin_cells + 1
                && axis[margin_cells] <= lo + 1e-12 * lo.abs().max(1.0)
                && axis[m - 1 - margin_cells] >= hi - 1e-12 * hi.abs().max(1.0);
            if !ok {
                let h = (axis[m - 1] - axis[0]) / (m - 1) as f64;
                let found = ((lo - axis[0]) / h).min((axis[m - 1] - hi) / h);
                return Err(Error::InsufficientMargin {
                    dim: d,
                    found,
                    required: margin_cells,
                });
            }
        }
        Ok(())
    }

    /// `Û = Φ⁻¹(U)`: map every axis back through an elementwise warp.
    pub fn warped(&self, warp: &Warp) -> Result<Self> {
        if warp.dims() != self.dims() {
            return Err(Error::DimensionMismatch {
                what: "warp for grid",
                expected: self.dims(),
                found: warp.dims(),
            });
        }
        let mut axes = Vec::with_capacity(self.dims());
        for (d, axis) in self.axes.iter().enumerate() {
            let w = warp.axis(d).ok_or_else(|| {
                Error::InvalidWarp("warped grids need an elementwise warp".into())
            })?;
            let mapped = axis
                .iter()
                .map(|&u| w.inverse(&[u]).map(|x| x[0]))
                .collect::<Result<Vec<_>>>()?;
            axes.push(mapped);
        }
        Self::from_axes(axes)
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn axis(&self, d: usize) -> &[f64] {
        &self.axes[d]
    }

    pub fn is_equispaced(&self, d: usize) -> bool {
        self.equispaced[d]
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    /// `m = Π m_d`.
    pub fn total_size(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    /// Uniform spacing of axis `d` (mean spacing for non-uniform axes).
    pub fn spacing(&self, d: usize) -> f64 {
        let a = &self.axes[d];
        (a[a.len() - 1] - a[0]) / (a.len() - 1) as f64
    }

    /// Interval `[axis[1], axis[m−2]]` on which the 4-node stencil fits.
    pub fn safe_region(&self, d: usize) -> (f64, f64) {
        let a = &self.axes[d];
        (a[1], a[a.len() - 2])
    }

    /// All nodes, in grid index order.
    pub fn nodes(&self) -> Points {
        let shape = self.shape();
        let m = self.total_size();
        let mut data = Vec::with_capacity(m * self.dims());
        let mut idx = vec![0usize; self.dims()];
        for _ in 0..m {
            for (d, &i) in idx.iter().enumerate() {
                data.push(self.axes[d][i]);
            }
            for d in (0..self.dims()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Points::new(self.dims(), data).expect("grid has at least one axis")
    }

    /// Flat index of a multi-index.
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, a)| acc * a.len() + i)
    }
}

pub fn linspace(min: f64, max: f64, count: usize) -> Vec<f64> {
    let h = (max - min) / (count - 1) as f64;
    (0..count).map(|i| min + h * i as f64).collect()
}

/// Cell `[axis[i], axis[i+1]]` holding `x`; ties go to the left cell, and the
/// index is clamped so that nodes `i−1 ..= i+2` exist.
fn locate_cell(axis: &[f64], x: f64) -> usize {
    let k = axis.partition_point(|&u| u < x);
    k.saturating_sub(1).clamp(1, axis.len() - 3)
}

/// Weights on nodes `[x_{i−1}, x_i, x_{i+1}, x_{i+2}]` for a point `x` in `[x_i, x_{i+1}]`.
pub fn cubic_weights(nodes: [f64; 4], x: f64) -> [f64; 4] {
    let [xm, x0, x1, x2] = nodes;
    let h = x1 - x0;
    let s = (x - x0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    // Tangents d_i = (f_{i+1} − f_{i−1}) / (x_{i+1} − x_{i−1}), and likewise at i+1.
    let left = h10 * h / (x1 - xm);
    let right = h11 * h / (x2 - x0);
    [-left, h00 - right, h01 + left, right]
}

/// Sparse `n × m` interpolation matrix with exactly `4^D` entries per row.
///
/// Rows are kept in factored form: the flat index of the lowest stencil node
/// plus four weights per axis. Entry `k` of a row sits at `base + offsets[k]`
/// and its weight is the product of one weight per axis. This takes
/// `8 + 32·D` bytes per row instead of `16·4^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpWeights {
    rows: usize,
    cols: usize,
    dims: usize,
    base: Vec<usize>,
    /// `rows × dims × 4`, row-major.
    axis_weights: Vec<f64>,
    /// Flat offset of stencil node `k`; digit `d` of `k` in base 4 (most
    /// significant first) is the node's position along axis `d`.
    offsets: Vec<usize>,
    /// Flat stride of each axis.
    axis_strides: Vec<usize>,
}

impl InterpWeights {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Nonzeros per row, `4^D`.
    pub fn nnz_per_row(&self) -> usize {
        self.offsets.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows * self.offsets.len()
    }

    fn row_axis_weights(&self, r: usize) -> &[f64] {
        &self.axis_weights[r * 4 * self.dims..(r + 1) * 4 * self.dims]
    }

    /// Tensor product of the per-axis weights of row `r`, written to `buf`.
    fn expand_into(&self, r: usize, buf: &mut [f64]) {
        let aw = self.row_axis_weights(r);
        buf[0] = 1.0;
        let mut len = 1;
        for d in 0..self.dims {
            let w = &aw[4 * d..4 * d + 4];
            for j in (0..len).rev() {
                let head = buf[j];
                for a in (0..4).rev() {
                    buf[4 * j + a] = head * w[a];
                }
            }
            len *= 4;
        }
    }

    /// Column indices and weights of row `r`.
    pub fn row(&self, r: usize) -> (Vec<usize>, Vec<f64>) {
        let mut vals = vec![0.0; self.offsets.len()];
        self.expand_into(r, &mut vals);
        (self.offsets.iter().map(|o| self.base[r] + o).collect(), vals)
    }

    /// `W v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                what: "interpolation matvec",
                expected: self.cols,
                found: v.len(),
            });
        }
        let mut out = vec![0.0; self.rows];
        self.matvec_into(v, &mut out);
        Ok(out)
    }

    fn row_dot(&self, r: usize, v: &[f64], buf: &mut [f64]) -> f64 {
        let b = self.base[r];
        let aw = self.row_axis_weights(r);
        match self.dims {
            1 => aw[0] * v[b] + aw[1] * v[b + 1] + aw[2] * v[b + 2] + aw[3] * v[b + 3],
            2 => {
                let s0 = self.axis_strides[0];
                let mut acc = 0.0;
                for a in 0..4 {
                    let o = b + a * s0;
                    acc += aw[a] * (aw[4] * v[o] + aw[5] * v[o + 1] + aw[6] * v[o + 2] + aw[7] * v[o + 3]);
                }
                acc
            }
            _ => {
                self.expand_into(r, buf);
                self.offsets.iter().zip(buf.iter()).map(|(&o, &w)| w * v[b + o]).sum()
            }
        }
    }

    fn row_scatter(&self, r: usize, x: f64, out: &mut [f64], buf: &mut [f64]) {
        let b = self.base[r];
        let aw = self.row_axis_weights(r);
        match self.dims {
            1 => {
                for a in 0..4 {
                    out[b + a] += aw[a] * x;
                }
            }
            2 => {
                let s0 = self.axis_strides[0];
                for a in 0..4 {
                    let xa = aw[a] * x;
                    let o = b + a * s0;
                    for c in 0..4 {
                        out[o + c] += aw[4 + c] * xa;
                    }
                }
            }
            _ => {
                self.expand_into(r, buf);
                for (&o, &w) in self.offsets.iter().zip(buf.iter()) {
                    out[b + o] += w * x;
                }
            }
        }
    }

    pub(crate) fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        let stride = self.offsets.len();
        if self.nnz() >= PARALLEL_NNZ {
            out.par_iter_mut()
                .enumerate()
                .for_each_init(|| vec![0.0; stride], |buf, (r, o)| *o = self.row_dot(r, v, buf));
        } else {
            let mut buf = vec![0.0; stride];
            out.iter_mut().enumerate().for_each(|(r, o)| *o = self.row_dot(r, v, &mut buf));
        }
    }

    /// `Wᵀ v`.
    pub fn transpose_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::DimensionMismatch {
                what: "transposed interpolation matvec",
                expected: self.rows,
                found: v.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        self.transpose_matvec_into(v, &mut out);
        Ok(out)
    }

    pub(crate) fn transpose_matvec_into(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut buf = vec![0.0; self.offsets.len()];
        for (r, &vr) in v.iter().enumerate() {
            if vr != 0.0 {
                self.row_scatter(r, vr, out, &mut buf);
            }
        }
    }

    /// Dense copy, for oracles at desk scale.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let (idx, w) = self.row(r);
            for (&c, &v) in idx.iter().zip(&w) {
                m[(r, c)] += v;
            }
        }
        m
    }
}

const PARALLEL_NNZ: usize = 1 << 16;
const MAX_DIMS: usize = 8;

/// Weights interpolating from `grid` to `points` (both in the same space).
pub fn interpolation_weights(grid: &InducingGrid, points: &Points) -> Result<InterpWeights> {
    check_points(grid, points)?;
    let axes = grid.axes();
    build_weights(grid, points.len(), |i, d| {
        let x = points.row(i)[d];
        check_safe(grid, i, d, x)?;
        let a = &axes[d];
        let c = locate_cell(a, x);
        Ok((c, cubic_weights([a[c - 1], a[c], a[c + 1], a[c + 2]], x)))
    })
}

/// Weights between raw inputs `points` and the warped grid `Û = Φ⁻¹(U)`.
///
/// Cells are located against `Û` in input space while the stencil arithmetic
/// runs on the warped coordinates, so the result matches
/// `interpolation_weights(U, Φ(points))`.
pub fn interpolation_weights_warped_grid(
    warped_grid: &InducingGrid,
    warp: &Warp,
    points: &Points,
) -> Result<InterpWeights> {
    check_points(warped_grid, points)?;
    let dims = warped_grid.dims();
    let mut axis_warps = Vec::with_capacity(dims);
    let mut warped_axes = Vec::with_capacity(dims);
    for d in 0..dims {
        let w = warp
            .axis(d)
            .ok_or_else(|| Error::InvalidWarp("warped grids need an elementwise warp".into()))?;
        let mapped = warped_grid
            .axis(d)
            .iter()
            .map(|&x| w.forward(&[x]).map(|z| z[0]))
            .collect::<Result<Vec<_>>>()?;
        axis_warps.push(w);
        warped_axes.push(mapped);
    }
    let axes = warped_grid.axes();
    build_weights(warped_grid, points.len(), |i, d| {
        let x = points.row(i)[d];
        check_safe(warped_grid, i, d, x)?;
        let c = locate_cell(&axes[d], x);
        let z = axis_warps[d].forward(&[x])?[0];
        let u = &warped_axes[d];
        Ok((c, cubic_weights([u[c - 1], u[c], u[c + 1], u[c + 2]], z)))
    })
}

fn check_points(grid: &InducingGrid, points: &Points) -> Result<()> {
    if points.dims() != grid.dims() {
        return Err(Error::DimensionMismatch {
            what: "points for interpolation",
            expected: grid.dims(),
            found: points.dims(),
        });
    }
    Ok(())
}

fn check_safe(grid: &InducingGrid, point: usize, dim: usize, value: f64) -> Result<()> {
    let (lo, hi) = grid.safe_region(dim);
    if !(value >= lo && value <= hi) {
        return Err(Error::OutsideSafeRegion {
            point,
            dim,
            value,
            lo,
            hi,
        });
    }
    Ok(())
}

/// Tensor-product assembly from per-axis `(cell, weights)`.
fn build_weights<F>(grid: &InducingGrid, n: usize, axis_stencil: F) -> Result<InterpWeights>
where
    F: Fn(usize, usize) -> Result<(usize, [f64; 4])> + Sync,
{
    let dims = grid.dims();
    if dims > MAX_DIMS {
        return Err(Error::InvalidArgument(format!(
            "interpolation supports at most {MAX_DIMS} dimensions, got {dims}"
        )));
    }
    let shape = grid.shape();
    let mut axis_strides = vec![1usize; dims];
    for d in (0..dims.saturating_sub(1)).rev() {
        axis_strides[d] = axis_strides[d + 1] * shape[d + 1];
    }
    let offsets: Vec<usize> = (0..4usize.pow(dims as u32))
        .map(|k| {
            let mut rem = k;
            let mut off = 0;
            for d in (0..dims).rev() {
                off += (rem % 4) * axis_strides[d];
                rem /= 4;
            }
            off
        })
        .collect();
    let mut base = vec![0usize; n];
    let mut axis_weights = vec![0.0; n * dims * 4];
    let fill = |(i, (b, aw)): (usize, (&mut usize, &mut [f64]))| -> Result<()> {
        let mut flat = 0;
        for d in 0..dims {
            let (c, w) = axis_stencil(i, d)?;
            flat += (c - 1) * axis_strides[d];
            aw[4 * d..4 * d + 4].copy_from_slice(&w);
        }
        *b = flat;
        Ok(())
    };
    let chunk = (dims * 4).max(1);
    if n * offsets.len() >= PARALLEL_NNZ {
        base.par_iter_mut()
            .zip(axis_weights.par_chunks_mut(chunk))
            .enumerate()
            .try_for_each(fill)?;
    } else {
        base.iter_mut()
            .zip(axis_weights.chunks_mut(chunk))
            .enumerate()
            .try_for_each(fill)?;
    }
    Ok(InterpWeights {
        rows: n,
        cols: grid.total_size(),
        dims,
        base,
        axis_weights,
        offsets,
        axis_strides,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warping::Interval;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cubic_warp() -> Warp {
        Warp::polynomial(vec![2.0, 0.0, 1.0], Interval::new(-1.5, 1.5).unwrap()).unwrap()
    }

    #[test]
    fn equispaced_axis() {
        let g = InducingGrid::equispaced(&[AxisSpec { min: 0.0, max: 1.0, count: 11 }]).unwrap();
        assert_relative_eq!(g.spacing(0), 0.1, epsilon = 1e-15);
        for (i, &u) in g.axis(0).iter().enumerate() {
            assert_relative_eq!(u, 0.1 * i as f64, epsilon = 1e-15);
        }
        assert!(g.is_equispaced(0));
    }

    #[test]
    fn total_size_is_product() {
        let g = InducingGrid::equispaced(&[
            AxisSpec { min: 0.0, max: 1.0, count: 10 },
            AxisSpec { min: -1.0, max: 1.0, count: 20 },
        ])
        .unwrap();
        assert_eq!(g.total_size(), 200);
        assert_eq!(g.nodes().len(), 200);
        // Last dimension fastest.
        assert_eq!(g.nodes().row(1), &[0.0, -1.0 + 2.0 / 19.0]);
        assert_eq!(g.flat_index(&[1, 0]), 20);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let r = InducingGrid::equispaced(&[AxisSpec { min: 0.0, max: 1.0, count: 5 }]);
        assert_eq!(r, Err(Error::GridTooSmall { dim: 0, count: 5, required: 8 }));
    }

    #[test]
    fn covering_grid_keeps_margin() {
        let g = InducingGrid::covering(&[(-1.2, 0.75)], &[100], 2).unwrap();
        let h = g.spacing(0);
        assert!(g.axis(0)[0] <= -1.2 - 2.0 * h + 1e-12);
        assert!(g.axis(0)[99] >= 0.75 + 2.0 * h - 1e-12);
        let tight = InducingGrid::equispaced(&[AxisSpec { min: -1.22, max: 0.77, count: 100 }]).unwrap();
        assert!(matches!(
            tight.check_margin(&[(-1.2, 0.75)], 2),
            Err(Error::InsufficientMargin { dim: 0, .. })
        ));
    }

    #[test]
    fn warped_grid_examples() {
        let g = InducingGrid::from_axes(vec![vec![-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0]]).unwrap();
        let id = g.warped(&Warp::identity(1)).unwrap();
        assert_eq!(id, g);
        let hat = g.warped(&cubic_warp()).unwrap();
        assert_relative_eq!(hat.axis(0)[0], -1.0, epsilon = 1e-14);
        assert_relative_eq!(hat.axis(0)[3], 0.0, epsilon = 1e-14);
        assert_relative_eq!(hat.axis(0)[6], 1.0, epsilon = 1e-14);
        assert!(!hat.is_equispaced(0));

        let phase = crate::warping::phase_from_events(&[0.0, 1.0, 2.0], true).unwrap();
        let pi = std::f64::consts::PI;
        let g = InducingGrid::from_axes(vec![(0..8).map(|i| pi * i as f64).collect()]).unwrap();
        let hat = g.warped(&phase).unwrap();
        for (i, &x) in hat.axis(0).iter().enumerate().take(3) {
            assert_relative_eq!(x, 0.5 * i as f64, epsilon = 1e-14);
        }
    }

    #[test]
    fn nodal_points_get_unit_weight() {
        let g = InducingGrid::equispaced(&[AxisSpec { min: 0.0, max: 1.0, count: 11 }]).unwrap();
        let w = interpolation_weights(&g, &Points::from_1d(vec![0.5, 0.1, 0.9])).unwrap();
        let dense = w.to_dense();
        for (r, node) in [5usize, 1, 9].iter().enumerate() {
            for c in 0..11 {
                let expected = if c == *node { 1.0 } else { 0.0 };
                assert!((dense[(r, c)] - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn midpoint_weights_are_keys_weights() {
        let g = InducingGrid::equispaced(&[AxisSpec { min: 0.0, max: 1.0, count: 11 }]).unwrap();
        let w = interpolation_weights(&g, &Points::from_1d(vec![0.45])).unwrap();
        let (idx, vals) = w.row(0);
        assert_eq!(idx, [3, 4, 5, 6]);
        for (v, e) in vals.iter().zip([-1.0 / 16.0, 9.0 / 16.0, 9.0 / 16.0, -1.0 / 16.0]) {
            assert_relative_eq!(*v, e, epsilon = 1e-14);
        }
    }

    /// Keys' cubic convolution kernel with `a = −1/2`.
    fn keys(s: f64) -> f64 {
        let a = -0.5;
        let s = s.abs();
        if s <= 1.0 {
            (a + 2.0) * s.powi(3) - (a + 3.0) * s * s + 1.0
        } else if s < 2.0 {
            a * s.powi(3) - 5.0 * a * s * s + 8.0 * a * s - 4.0 * a
        } else {
            0.0
        }
    }

    #[test]
    fn uniform_weights_equal_keys_kernel() {
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let w = cubic_weights([-1.0, 0.0, 1.0, 2.0], t);
            let k = [keys(1.0 + t), keys(t), keys(1.0 - t), keys(2.0 - t)];
            for (a, b) in w.iter().zip(k) {
                assert_relative_eq!(*a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn reproduces_linear_functions_on_nonuniform_grids() {
        let hat = InducingGrid::equispaced(&[AxisSpec { min: -6.0, max: 6.0, count: 60 }])
            .unwrap()
            .warped(&cubic_warp())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (lo, hi) = hat.safe_region(0);
        let xs: Vec<f64> = (0..500).map(|_| rng.random_range(lo..hi)).collect();
        let w = interpolation_weights(&hat, &Points::from_1d(xs.clone())).unwrap();
        let g: Vec<f64> = hat.axis(0).iter().map(|x| 2.0 * x + 1.0).collect();
        let interp = w.matvec(&g).unwrap();
        for (x, v) in xs.iter().zip(interp) {
            assert!((v - (2.0 * x + 1.0)).abs() <= 1e-10);
        }
    }

    #[test]
    fn uniform_interior_reproduces_quadratics() {
        let g = InducingGrid::equispaced(&[AxisSpec { min: 0.0, max: 1.0, count: 21 }]).unwrap();
        let xs: Vec<f64> = (0..97).map(|i| 0.06 + 0.88 * i as f64 / 96.0).collect();
        let w = interpolation_weights(&g, &Points::from_1d(xs.clone())).unwrap();
        let f: Vec<f64> = g.axis(0).iter().map(|x| 3.0 * x * x - x + 0.5).collect();
        for (x, v) in xs.iter().zip(w.matvec(&f).unwrap()) {
            assert!((v - (3.0 * x * x - x + 0.5)).abs() <= 1e-12);
        }
    }

    #[test]
    fn rows_sum_to_one_with_4_pow_d_entries() {
        let g = InducingGrid::equispaced(&[
            AxisSpec { min: 0.0, max: 1.0, count: 12 },
            AxisSpec { min: 0.0, max: 2.0, count: 9 },
            AxisSpec { min: -1.0, max: 1.0, count: 10 },
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<f64> = (0..200)
            .flat_map(|_| {
                (0..3)
                    .map(|d| {
                        let (lo, hi) = g.safe_region(d);
                        rng.random_range(lo..hi)
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let w = interpolation_weights(&g, &Points::new(3, pts.clone()).unwrap()).unwrap();
        assert_eq!(w.nnz_per_row(), 64);
        let ones = w.matvec(&vec![1.0; g.total_size()]).unwrap();
        assert!(ones.iter().all(|v| (v - 1.0).abs() <= 1e-13));
        // Stencil columns surround the containing cell.
        let nodes = g.nodes();
        for r in 0..200 {
            let p = &pts[3 * r..3 * r + 3];
            for &c in &w.row(r).0 {
                for (d, &pd) in p.iter().enumerate() {
                    assert!((nodes.row(c)[d] - pd).abs() <= 2.0 * g.spacing(d) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn outside_safe_region_names_point() {
        let g = InducingGrid::equispaced(&[AxisSpec { min: 0.0, max: 1.0, count: 11 }]).unwrap();
        let r = interpolation_weights(&g, &Points::from_1d(vec![0.5, 0.05]));
        assert!(matches!(r, Err(Error::OutsideSafeRegion { point: 1, dim: 0, .. })));
        let r = interpolation_weights(&g, &Points::from_1d(vec![0.95]));
        assert!(matches!(r, Err(Error::OutsideSafeRegion { point: 0, .. })));
    }

    #[test]
    fn matvec_matches_dense() {
        let g = InducingGrid::equispaced(&[AxisSpec { min: 0.0, max: 1.0, count: 64 }]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (lo, hi) = g.safe_region(0);
        let pts = Points::from_1d((0..50).map(|_| rng.random_range(lo..hi)).collect());
        let w = interpolation_weights(&g, &pts).unwrap();
        let dense = w.to_dense();
        let v: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wv = w.matvec(&v).unwrap();
        let wtu = w.transpose_matvec(&u).unwrap();
        let dv = &dense * nalgebra::DVector::from_vec(v);
        let dtu = dense.transpose() * nalgebra::DVector::from_vec(u);
        for (a, b) in wv.iter().zip(dv.iter()) {
            assert!((a - b).abs() <= 1e-13);
        }
        for (a, b) in wtu.iter().zip(dtu.iter()) {
            assert!((a - b).abs() <= 1e-13);
        }
        assert!(w.matvec(&[1.0; 3]).is_err());
    }

    #[test]
    fn transpose_of_one_hot_scatters_row() {
        let g = InducingGrid::equispaced(&[AxisSpec { min: 0.0, max: 1.0, count: 11 }]).unwrap();
        let w = interpolation_weights(&g, &Points::from_1d(vec![0.33, 0.47])).unwrap();
        let out = w.transpose_matvec(&[0.0, 1.0]).unwrap();
        let (idx, vals) = w.row(1);
        let mut expected = vec![0.0; 11];
        for (&c, &v) in idx.iter().zip(&vals) {
            expected[c] = v;
        }
        assert_eq!(out, expected);
    }

    #[test]
    fn both_construction_paths_agree() {
        let warp = Warp::elementwise(vec![cubic_warp(), Warp::identity(1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let raw: Vec<f64> = (0..400)
            .flat_map(|_| [rng.random_range(-1.2..0.75), rng.random_range(-2.5..2.5)])
            .collect();
        let x = Points::new(2, raw).unwrap();
        let z = warp.forward_points(&x).unwrap();
        let u = InducingGrid::covering(&z.bounding_box(), &[80, 40], 2).unwrap();
        let direct = interpolation_weights(&u, &z).unwrap();
        let hat = u.warped(&warp).unwrap();
        let via_hat = interpolation_weights_warped_grid(&hat, &warp, &x).unwrap();
        for r in 0..x.len() {
            let (i1, v1) = direct.row(r);
            let (i2, v2) = via_hat.row(r);
            assert_eq!(i1, i2);
            for (a, b) in v1.iter().zip(&v2) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }
}
