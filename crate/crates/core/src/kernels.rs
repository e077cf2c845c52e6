//! Stationary, separable covariance functions.
//!
//! Every kernel is a function of the lag `τ = x − x′` only. Hyperparameters
//! are positive and stored as logarithms, so gradients are taken with respect
//! to `log θ`. Per kernel the parameter order is amplitude first, then
//! lengthscales, then periods:
//!
//! | kind                  | parameters                                   |
//! |-----------------------|----------------------------------------------|
//! | `SquaredExponential`  | `σ_f, ℓ`                                     |
//! | `Periodic`            | `σ_f, ℓ_p, p`                                |
//! | `QuasiPeriodic`       | `σ_f, ℓ_se, ℓ_p, p`                          |
//! | `Product` / `Sum`     | children's parameters, concatenated in order |
//!
//! A `SquaredExponential` may span several input dimensions with one shared
//! lengthscale; it is still separable, `σ_f² Π_d exp(−τ_d²/2ℓ²)`.
//! `Product` children act on disjoint, consecutive blocks of dimensions.
//! `Sum` children share all dimensions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for deciding whether a 1-D axis is equispaced.
pub const EQUISPACED_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    SquaredExponential,
    Periodic,
    QuasiPeriodic,
    Product,
    Sum,
}

impl KernelKind {
    fn param_names(self) -> &'static [&'static str] {
        match self {
            KernelKind::SquaredExponential => &["amplitude", "lengthscale"],
            KernelKind::Periodic => &["amplitude", "lengthscale", "period"],
            KernelKind::QuasiPeriodic => &[
                "amplitude",
                "lengthscale",
                "periodic_lengthscale",
                "period",
            ],
            KernelKind::Product | KernelKind::Sum => &[],
        }
    }
}

/// Positive hyperparameters, held in log-space.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    log_values: Vec<f64>,
}

impl Hyperparameters {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        for (i, &v) in values.iter().enumerate() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidHyperparameter {
                    name: format!("#{i}"),
                    value: v,
                });
            }
        }
        Ok(Self {
            log_values: values.iter().map(|v| v.ln()).collect(),
        })
    }

    pub fn from_log_values(log_values: Vec<f64>) -> Result<Self> {
        if let Some(&v) = log_values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidHyperparameter {
                name: "log-space value".into(),
                value: v,
            });
        }
        Ok(Self { log_values })
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn values(&self) -> Vec<f64> {
        self.log_values.iter().map(|v| v.exp()).collect()
    }

    pub fn value(&self, i: usize) -> f64 {
        self.log_values[i].exp()
    }

    pub fn len(&self) -> usize {
        self.log_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_values.is_empty()
    }
}

/// A stationary covariance function `k(τ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpec", into = "KernelSpec")]
pub struct StationaryKernel {
    kind: KernelKind,
    params: Hyperparameters,
    dims: usize,
    children: Vec<StationaryKernel>,
}

impl StationaryKernel {
    pub fn squared_exponential(amplitude: f64, lengthscale: f64) -> Result<Self> {
        Self::squared_exponential_nd(amplitude, lengthscale, 1)
    }

    /// Isotropic squared exponential over `dims` dimensions.
    pub fn squared_exponential_nd(amplitude: f64, lengthscale: f64, dims: usize) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidKernel("kernel needs at least one dimension".into()));
        }
        Self::leaf(KernelKind::SquaredExponential, &[amplitude, lengthscale], dims)
    }

    pub fn periodic(amplitude: f64, lengthscale: f64, period: f64) -> Result<Self> {
        Self::leaf(KernelKind::Periodic, &[amplitude, lengthscale, period], 1)
    }

    /// Squared-exponential envelope times a periodic kernel, sharing one amplitude.
    pub fn quasi_periodic(
        amplitude: f64,
        lengthscale: f64,
        periodic_lengthscale: f64,
        period: f64,
    ) -> Result<Self> {
        Self::leaf(
            KernelKind::QuasiPeriodic,
            &[amplitude, lengthscale, periodic_lengthscale, period],
            1,
        )
    }

    /// Product over disjoint dimension blocks, in child order.
    pub fn product(children: Vec<StationaryKernel>) -> Result<Self> {
        if children.is_empty() {
            return Err(Error::InvalidKernel("product needs at least one factor".into()));
        }
        let dims = children.iter().map(|c| c.dims).sum();
        Ok(Self {
            kind: KernelKind::Product,
            params: Hyperparameters { log_values: vec![] },
            dims,
            children,
        })
    }

    /// Sum of kernels over the same input dimensions.
    pub fn sum(children: Vec<StationaryKernel>) -> Result<Self> {
        let Some(first) = children.first() else {
            return Err(Error::InvalidKernel("sum needs at least one term".into()));
        };
        let dims = first.dims;
        if let Some(c) = children.iter().find(|c| c.dims != dims) {
            return Err(Error::DimensionMismatch {
                what: "sum kernel term",
                expected: dims,
                found: c.dims,
            });
        }
        Ok(Self {
            kind: KernelKind::Sum,
            params: Hyperparameters { log_values: vec![] },
            dims,
            children,
        })
    }

    fn leaf(kind: KernelKind, values: &[f64], dims: usize) -> Result<Self> {
        let names = kind.param_names();
        for (name, &v) in names.iter().zip(values) {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidHyperparameter {
                    name: (*name).to_string(),
                    value: v,
                });
            }
        }
        Ok(Self {
            kind,
            params: Hyperparameters::from_values(values)?,
            dims,
            children: vec![],
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    /// Number of input dimensions.
    pub fn arity(&self) -> usize {
        self.dims
    }

    pub fn children(&self) -> &[StationaryKernel] {
        &self.children
    }

    /// Own (leaf) hyperparameters; empty for composites.
    pub fn params(&self) -> &Hyperparameters {
        &self.params
    }

    /// The squared-exponential and periodic factors of a quasi-periodic kernel.
    pub fn quasi_periodic_factors(&self) -> Option<(StationaryKernel, StationaryKernel)> {
        if self.kind != KernelKind::QuasiPeriodic {
            return None;
        }
        let v = self.params.values();
        let se = Self::squared_exponential(v[0], v[1]).ok()?;
        let per = Self::periodic(1.0, v[2], v[3]).ok()?;
        Some((se, per))
    }

    pub fn num_params(&self) -> usize {
        self.params.len() + self.children.iter().map(|c| c.num_params()).sum::<usize>()
    }

    /// Flattened log-space hyperparameters.
    pub fn log_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.collect_log_params(&mut out);
        out
    }

    fn collect_log_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.params.log_values());
        for c in &self.children {
            c.collect_log_params(out);
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.num_params());
        self.collect_names("", &mut out);
        out
    }

    fn collect_names(&self, prefix: &str, out: &mut Vec<String>) {
        for name in self.kind.param_names() {
            out.push(format!("{prefix}{name}"));
        }
        for (i, c) in self.children.iter().enumerate() {
            c.collect_names(&format!("{prefix}{i}."), out);
        }
    }

    /// Copy of the kernel with the flattened log-space parameters replaced.
    pub fn with_log_params(&self, log_params: &[f64]) -> Result<Self> {
        if log_params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                what: "kernel hyperparameter vector",
                expected: self.num_params(),
                found: log_params.len(),
            });
        }
        let mut k = self.clone();
        let mut offset = 0;
        k.assign_log_params(log_params, &mut offset)?;
        Ok(k)
    }

    fn assign_log_params(&mut self, src: &[f64], offset: &mut usize) -> Result<()> {
        let own = self.params.len();
        self.params = Hyperparameters::from_log_values(src[*offset..*offset + own].to_vec())?;
        *offset += own;
        for c in &mut self.children {
            c.assign_log_params(src, offset)?;
        }
        Ok(())
    }

    /// Prior variance `k(0)`.
    pub fn variance(&self) -> f64 {
        self.eval_unchecked(&vec![0.0; self.dims])
    }

    /// Smallest lengthscale-like parameter (lengthscales and periods), in input units.
    pub fn smallest_lengthscale(&self) -> f64 {
        match self.kind {
            KernelKind::SquaredExponential => self.params.value(1),
            KernelKind::Periodic => {
                let (l, p) = (self.params.value(1), self.params.value(2));
                // The periodic kernel varies on a scale of roughly ℓ_p·p/(2π).
                (l * p / (2.0 * PI)).min(p)
            }
            KernelKind::QuasiPeriodic => {
                let (l, lp, p) = (
                    self.params.value(1),
                    self.params.value(2),
                    self.params.value(3),
                );
                l.min((lp * p / (2.0 * PI)).min(p))
            }
            KernelKind::Product | KernelKind::Sum => self
                .children
                .iter()
                .map(|c| c.smallest_lengthscale())
                .fold(f64::INFINITY, f64::min),
        }
    }

    fn check_lag(&self, tau: &[f64]) -> Result<()> {
        if tau.len() != self.dims {
            return Err(Error::DimensionMismatch {
                what: "kernel lag",
                expected: self.dims,
                found: tau.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, tau: &[f64]) -> Result<f64> {
        self.check_lag(tau)?;
        Ok(self.eval_unchecked(tau))
    }

    /// `k(x − x′)`.
    pub fn eval_pair(&self, x: &[f64], x_prime: &[f64]) -> Result<f64> {
        if x.len() != x_prime.len() {
            return Err(Error::DimensionMismatch {
                what: "kernel input pair",
                expected: x.len(),
                found: x_prime.len(),
            });
        }
        let tau: Vec<f64> = x.iter().zip(x_prime).map(|(a, b)| a - b).collect();
        self.eval(&tau)
    }

    pub(crate) fn eval_unchecked(&self, tau: &[f64]) -> f64 {
        let p = &self.params;
        match self.kind {
            KernelKind::SquaredExponential => {
                let r2: f64 = tau.iter().map(|t| t * t).sum();
                let (s, l) = (p.value(0), p.value(1));
                s * s * (-0.5 * r2 / (l * l)).exp()
            }
            KernelKind::Periodic => {
                let (s, l, per) = (p.value(0), p.value(1), p.value(2));
                let sn = (PI * tau[0] / per).sin();
                s * s * (-2.0 * sn * sn / (l * l)).exp()
            }
            KernelKind::QuasiPeriodic => {
                let (s, l, lp, per) = (p.value(0), p.value(1), p.value(2), p.value(3));
                let t = tau[0];
                let sn = (PI * t / per).sin();
                s * s * (-0.5 * t * t / (l * l) - 2.0 * sn * sn / (lp * lp)).exp()
            }
            KernelKind::Product => {
                let mut offset = 0;
                let mut acc = 1.0;
                for c in &self.children {
                    acc *= c.eval_unchecked(&tau[offset..offset + c.dims]);
                    offset += c.dims;
                }
                acc
            }
            KernelKind::Sum => self.children.iter().map(|c| c.eval_unchecked(tau)).sum(),
        }
    }

    /// Gradient of `k(τ)` with respect to the flattened log-space parameters.
    pub fn grad(&self, tau: &[f64]) -> Result<Vec<f64>> {
        self.check_lag(tau)?;
        let mut out = Vec::with_capacity(self.num_params());
        self.grad_into(tau, &mut out);
        Ok(out)
    }

    pub(crate) fn grad_into(&self, tau: &[f64], out: &mut Vec<f64>) {
        let p = &self.params;
        match self.kind {
            KernelKind::SquaredExponential => {
                let r2: f64 = tau.iter().map(|t| t * t).sum();
                let l = p.value(1);
                let k = self.eval_unchecked(tau);
                out.push(2.0 * k);
                out.push(k * r2 / (l * l));
            }
            KernelKind::Periodic => {
                let (l, per) = (p.value(1), p.value(2));
                let arg = PI * tau[0] / per;
                let (sn, cs) = arg.sin_cos();
                let k = self.eval_unchecked(tau);
                out.push(2.0 * k);
                out.push(k * 4.0 * sn * sn / (l * l));
                out.push(k * 4.0 * sn * cs * arg / (l * l));
            }
            KernelKind::QuasiPeriodic => {
                let (l, lp, per) = (p.value(1), p.value(2), p.value(3));
                let t = tau[0];
                let arg = PI * t / per;
                let (sn, cs) = arg.sin_cos();
                let k = self.eval_unchecked(tau);
                out.push(2.0 * k);
                out.push(k * t * t / (l * l));
                out.push(k * 4.0 * sn * sn / (lp * lp));
                out.push(k * 4.0 * sn * cs * arg / (lp * lp));
            }
            KernelKind::Product => {
                let values: Vec<f64> = {
                    let mut offset = 0;
                    self.children
                        .iter()
                        .map(|c| {
                            let v = c.eval_unchecked(&tau[offset..offset + c.dims]);
                            offset += c.dims;
                            v
                        })
                        .collect()
                };
                let mut offset = 0;
                for (i, c) in self.children.iter().enumerate() {
                    let others: f64 = values
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, v)| v)
                        .product();
                    let start = out.len();
                    c.grad_into(&tau[offset..offset + c.dims], out);
                    for g in &mut out[start..] {
                        *g *= others;
                    }
                    offset += c.dims;
                }
            }
            KernelKind::Sum => {
                for c in &self.children {
                    c.grad_into(tau, out);
                }
            }
        }
    }

    /// Whether `k(τ) = Π_d k_d(τ_d)` with per-axis factors available through
    /// [`axis_column`](Self::axis_column).
    pub fn is_separable(&self) -> bool {
        match self.kind {
            KernelKind::Sum => self.dims == 1,
            KernelKind::Product => self.children.iter().all(|c| c.is_separable()),
            _ => true,
        }
    }

    /// Values of the per-axis factor `k_axis(τ)` at the given 1-D lags.
    ///
    /// The factors multiply to the full kernel. Amplitudes are carried by the
    /// first axis of each leaf.
    pub fn axis_column(&self, axis: usize, lags: &[f64]) -> Result<Vec<f64>> {
        self.check_axis(axis)?;
        Ok(self.axis_column_unchecked(axis, lags))
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if !self.is_separable() {
            return Err(Error::NotSeparable);
        }
        if axis >= self.dims {
            return Err(Error::DimensionMismatch {
                what: "kernel axis",
                expected: self.dims,
                found: axis,
            });
        }
        Ok(())
    }

    fn axis_column_unchecked(&self, axis: usize, lags: &[f64]) -> Vec<f64> {
        match self.kind {
            KernelKind::SquaredExponential => {
                let (s, l) = (self.params.value(0), self.params.value(1));
                let scale = if axis == 0 { s * s } else { 1.0 };
                lags.iter()
                    .map(|t| scale * (-0.5 * t * t / (l * l)).exp())
                    .collect()
            }
            KernelKind::Product => {
                let (child, local) = self.child_for_axis(axis);
                self.children[child].axis_column_unchecked(local, lags)
            }
            _ => lags.iter().map(|&t| self.eval_unchecked(&[t])).collect(),
        }
    }

    /// Derivatives of the per-axis factor with respect to every flattened
    /// log-space parameter; `None` where the factor does not depend on it.
    pub fn axis_column_grads(&self, axis: usize, lags: &[f64]) -> Result<Vec<Option<Vec<f64>>>> {
        self.check_axis(axis)?;
        Ok(self.axis_column_grads_unchecked(axis, lags))
    }

    fn axis_column_grads_unchecked(&self, axis: usize, lags: &[f64]) -> Vec<Option<Vec<f64>>> {
        match self.kind {
            KernelKind::SquaredExponential => {
                let l = self.params.value(1);
                let col = self.axis_column_unchecked(axis, lags);
                let d_amp = (axis == 0).then(|| col.iter().map(|c| 2.0 * c).collect());
                let d_len = col
                    .iter()
                    .zip(lags)
                    .map(|(c, t)| c * t * t / (l * l))
                    .collect();
                vec![d_amp, Some(d_len)]
            }
            KernelKind::Product => {
                let (child, local) = self.child_for_axis(axis);
                let mut out = Vec::with_capacity(self.num_params());
                for (i, c) in self.children.iter().enumerate() {
                    if i == child {
                        out.extend(c.axis_column_grads_unchecked(local, lags));
                    } else {
                        out.extend(std::iter::repeat_n(None, c.num_params()));
                    }
                }
                out
            }
            _ => {
                let np = self.num_params();
                let mut cols = vec![Vec::with_capacity(lags.len()); np];
                let mut g = Vec::with_capacity(np);
                for &t in lags {
                    g.clear();
                    self.grad_into(&[t], &mut g);
                    for (col, gi) in cols.iter_mut().zip(&g) {
                        col.push(*gi);
                    }
                }
                cols.into_iter().map(Some).collect()
            }
        }
    }

    fn child_for_axis(&self, axis: usize) -> (usize, usize) {
        let mut offset = 0;
        for (i, c) in self.children.iter().enumerate() {
            if axis < offset + c.dims {
                return (i, axis - offset);
            }
            offset += c.dims;
        }
        unreachable!("axis checked against arity")
    }

    /// First column of the kernel matrix over an equispaced 1-D axis.
    pub fn toeplitz_column(&self, axis: &[f64]) -> Result<Vec<f64>> {
        if self.dims != 1 {
            return Err(Error::DimensionMismatch {
                what: "Toeplitz column kernel arity",
                expected: 1,
                found: self.dims,
            });
        }
        check_equispaced(axis)?;
        Ok(axis
            .iter()
            .map(|&a| self.eval_unchecked(&[a - axis[0]]))
            .collect())
    }
}

/// Verify uniform spacing to [`EQUISPACED_RTOL`]; returns the spacing.
pub fn check_equispaced(axis: &[f64]) -> Result<f64> {
    if axis.len() < 2 {
        return Ok(0.0);
    }
    let h = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
    if !(h > 0.0) {
        return Err(Error::NotIncreasing { index: 1 });
    }
    for (i, w) in axis.windows(2).enumerate() {
        let d = w[1] - w[0];
        if ((d - h) / h).abs() > EQUISPACED_RTOL {
            return Err(Error::NotEquispaced {
                index: i + 1,
                expected: h,
                found: d,
            });
        }
    }
    Ok(h)
}

/// Structured-text form of a kernel, with hyperparameters in natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<KernelSpec>,
}

impl TryFrom<KernelSpec> for StationaryKernel {
    type Error = Error;

    fn try_from(spec: KernelSpec) -> Result<Self> {
        let expect = |n: usize| -> Result<()> {
            if spec.params.len() != n {
                return Err(Error::InvalidKernel(format!(
                    "{:?} takes {n} parameters ({}), got {}",
                    spec.kind,
                    spec.kind.param_names().join(", "),
                    spec.params.len()
                )));
            }
            Ok(())
        };
        let p = &spec.params;
        match spec.kind {
            KernelKind::SquaredExponential => {
                expect(2)?;
                Self::squared_exponential_nd(p[0], p[1], spec.dims.unwrap_or(1))
            }
            KernelKind::Periodic => {
                expect(3)?;
                Self::periodic(p[0], p[1], p[2])
            }
            KernelKind::QuasiPeriodic => {
                expect(4)?;
                Self::quasi_periodic(p[0], p[1], p[2], p[3])
            }
            KernelKind::Product | KernelKind::Sum => {
                expect(0)?;
                let children = spec
                    .children
                    .into_iter()
                    .map(StationaryKernel::try_from)
                    .collect::<Result<Vec<_>>>()?;
                if spec.kind == KernelKind::Product {
                    Self::product(children)
                } else {
                    Self::sum(children)
                }
            }
        }
    }
}

impl From<StationaryKernel> for KernelSpec {
    fn from(k: StationaryKernel) -> Self {
        KernelSpec {
            kind: k.kind,
            params: k.params.values(),
            dims: (k.kind == KernelKind::SquaredExponential && k.dims != 1).then_some(k.dims),
            children: k.children.into_iter().map(KernelSpec::from).collect(),
        }
    }
}
