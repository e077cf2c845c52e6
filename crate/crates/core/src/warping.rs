//! Invertible input warps carrying a non-stationary phase.
//!
//! A warped kernel is `k(φ(x), φ(x′))` with `k` stationary. Every warp has an
//! explicit domain box; evaluating outside it is an error rather than an
//! extrapolation. Warps are immutable once built.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Points;

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 100;
const MONOTONE_SAMPLES: usize = 1000;

/// Closed interval, possibly unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidWarp(format!("empty interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum WarpKind {
    Identity {
        domain: Vec<Interval>,
    },
    /// Coefficients from the highest power down to the linear term.
    Polynomial1D {
        coeffs: Vec<f64>,
        domain: Interval,
    },
    PiecewiseLinearPhase {
        times: Vec<f64>,
        phases: Vec<f64>,
        domain: Interval,
    },
    Elementwise(Vec<Warp>),
    /// `x ↦ A x + b`, a general (non-elementwise) invertible map.
    Affine {
        matrix: DMatrix<f64>,
        inverse: DMatrix<f64>,
        offset: DVector<f64>,
        domain: Vec<Interval>,
    },
}

/// An invertible coordinate map `φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WarpSpec", into = "WarpSpec")]
pub struct Warp {
    kind: WarpKind,
}

impl Warp {
    pub fn identity(dims: usize) -> Self {
        Self::identity_on(vec![Interval::REAL_LINE; dims.max(1)])
    }

    pub fn identity_on(domain: Vec<Interval>) -> Self {
        Self {
            kind: WarpKind::Identity { domain },
        }
    }

    /// Odd-or-general polynomial without constant term, `Σ c_i x^{deg−i}`.
    ///
    /// `coeffs = [2, 0, 1]` is `2x³ + x`. The polynomial must be strictly
    /// increasing on `domain`, which must be bounded.
    pub fn polynomial(coeffs: Vec<f64>, domain: Interval) -> Result<Self> {
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidWarp(
                "polynomial needs finite coefficients".into(),
            ));
        }
        if !domain.is_bounded() {
            return Err(Error::InvalidWarp("polynomial warp needs a bounded domain".into()));
        }
        let w = Self {
            kind: WarpKind::Polynomial1D { coeffs, domain },
        };
        for i in 0..=MONOTONE_SAMPLES {
            let x = domain.lo + (domain.hi - domain.lo) * i as f64 / MONOTONE_SAMPLES as f64;
            if !(w.derivative_1d(x) > 0.0) {
                return Err(Error::NotMonotone { at: x });
            }
        }
        Ok(w)
    }

    /// Piecewise-linear phase through `(times[k], phases[k])`, extended beyond the
    /// outer knots with the slope of the adjacent segment.
    pub fn piecewise_linear(times: Vec<f64>, phases: Vec<f64>, domain: Interval) -> Result<Self> {
        if times.len() != phases.len() || times.len() < 2 {
            return Err(Error::InvalidWarp(
                "piecewise-linear warp needs at least two matching knots".into(),
            ));
        }
        for k in 1..times.len() {
            if !(times[k] > times[k - 1]) || !times[k].is_finite() {
                return Err(Error::NotIncreasing { index: k });
            }
            if !(phases[k] > phases[k - 1]) || !phases[k].is_finite() {
                return Err(Error::NotMonotone { at: times[k] });
            }
        }
        Ok(Self {
            kind: WarpKind::PiecewiseLinearPhase {
                times,
                phases,
                domain,
            },
        })
    }

    /// Independent 1-D warps per input dimension.
    pub fn elementwise(axes: Vec<Warp>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidWarp("elementwise warp needs at least one axis".into()));
        }
        if let Some(w) = axes.iter().find(|w| w.dims() != 1) {
            return Err(Error::DimensionMismatch {
                what: "elementwise warp axis",
                expected: 1,
                found: w.dims(),
            });
        }
        Ok(Self {
            kind: WarpKind::Elementwise(axes),
        })
    }

    /// `x ↦ A x + b` for row-major `matrix`.
    pub fn affine(matrix: Vec<f64>, offset: Vec<f64>, domain: Vec<Interval>) -> Result<Self> {
        let d = offset.len();
        if matrix.len() != d * d || domain.len() != d || d == 0 {
            return Err(Error::DimensionMismatch {
                what: "affine warp matrix",
                expected: d * d,
                found: matrix.len(),
            });
        }
        let m = DMatrix::from_row_slice(d, d, &matrix);
        let inverse = m
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidWarp("affine warp matrix is singular".into()))?;
        Ok(Self {
            kind: WarpKind::Affine {
                matrix: m,
                inverse,
                offset: DVector::from_vec(offset),
                domain,
            },
        })
    }

    pub fn dims(&self) -> usize {
        match &self.kind {
            WarpKind::Identity { domain } | WarpKind::Affine { domain, .. } => domain.len(),
            WarpKind::Polynomial1D { .. } | WarpKind::PiecewiseLinearPhase { .. } => 1,
            WarpKind::Elementwise(axes) => axes.len(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, WarpKind::Identity { .. })
    }

    /// Whether the warp acts independently on each coordinate.
    pub fn is_elementwise(&self) -> bool {
        !matches!(self.kind, WarpKind::Affine { .. })
    }

    /// The 1-D warp acting on dimension `d`, for elementwise warps.
    pub fn axis(&self, d: usize) -> Option<Warp> {
        if d >= self.dims() {
            return None;
        }
        match &self.kind {
            WarpKind::Identity { domain } => Some(Warp::identity_on(vec![domain[d]])),
            WarpKind::Polynomial1D { .. } | WarpKind::PiecewiseLinearPhase { .. } => {
                Some(self.clone())
            }
            WarpKind::Elementwise(axes) => Some(axes[d].clone()),
            WarpKind::Affine { .. } => None,
        }
    }

    pub fn domain(&self) -> Vec<Interval> {
        match &self.kind {
            WarpKind::Identity { domain } | WarpKind::Affine { domain, .. } => domain.clone(),
            WarpKind::Polynomial1D { domain, .. } | WarpKind::PiecewiseLinearPhase { domain, .. } => {
                vec![*domain]
            }
            WarpKind::Elementwise(axes) => axes.iter().flat_map(|a| a.domain()).collect(),
        }
    }

    fn check_dims(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims() {
            return Err(Error::DimensionMismatch {
                what: "warp input",
                expected: self.dims(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        for (d, (iv, &v)) in self.domain().iter().zip(x).enumerate() {
            if !iv.contains(v) {
                return Err(Error::OutOfDomain {
                    dim: d,
                    value: v,
                    lo: iv.lo,
                    hi: iv.hi,
                });
            }
        }
        Ok(())
    }

    /// `z = φ(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x)?;
        match &self.kind {
            WarpKind::Elementwise(axes) => axes
                .iter()
                .zip(x)
                .map(|(w, &v)| w.forward(&[v]).map(|z| z[0]))
                .collect(),
            WarpKind::Affine { matrix, offset, .. } => {
                self.check_domain(x)?;
                let z = matrix * DVector::from_column_slice(x) + offset;
                Ok(z.iter().copied().collect())
            }
            _ => {
                self.check_domain(x)?;
                if self.is_identity() {
                    Ok(x.to_vec())
                } else {
                    Ok(vec![self.forward_1d(x[0])])
                }
            }
        }
    }

    /// `x = φ⁻¹(z)`.
    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(z)?;
        match &self.kind {
            WarpKind::Identity { .. } => {
                self.check_image(z)?;
                Ok(z.to_vec())
            }
            WarpKind::Polynomial1D { .. } | WarpKind::PiecewiseLinearPhase { .. } => {
                self.check_image(z)?;
                Ok(vec![self.inverse_1d(z[0])])
            }
            WarpKind::Elementwise(axes) => axes
                .iter()
                .zip(z)
                .enumerate()
                .map(|(d, (w, &v))| {
                    w.inverse(&[v]).map(|x| x[0]).map_err(|e| match e {
                        Error::OutsideImage { value, lo, hi, .. } => Error::OutsideImage {
                            dim: d,
                            value,
                            lo,
                            hi,
                        },
                        other => other,
                    })
                })
                .collect(),
            WarpKind::Affine {
                inverse,
                offset,
                domain,
                ..
            } => {
                let x = inverse * (DVector::from_column_slice(z) - offset);
                for (d, (iv, &v)) in domain.iter().zip(x.iter()).enumerate() {
                    if !iv.contains(v) {
                        return Err(Error::OutsideImage {
                            dim: d,
                            value: z[d],
                            lo: f64::NAN,
                            hi: f64::NAN,
                        });
                    }
                }
                Ok(x.iter().copied().collect())
            }
        }
    }

    /// Warp every point.
    pub fn forward_points(&self, points: &Points) -> Result<Points> {
        if points.dims() != self.dims() {
            return Err(Error::DimensionMismatch {
                what: "warp input",
                expected: self.dims(),
                found: points.dims(),
            });
        }
        let mut out = Vec::with_capacity(points.as_slice().len());
        for r in points.rows() {
            out.extend(self.forward(r)?);
        }
        Points::new(self.dims(), out)
    }

    /// Image interval of a 1-D warp.
    fn image_1d(&self) -> Interval {
        match &self.kind {
            WarpKind::Identity { domain } => domain[0],
            WarpKind::Polynomial1D { domain, .. } | WarpKind::PiecewiseLinearPhase { domain, .. } => {
                Interval {
                    lo: self.forward_1d(domain.lo),
                    hi: self.forward_1d(domain.hi),
                }
            }
            _ => Interval::REAL_LINE,
        }
    }

    fn check_image(&self, z: &[f64]) -> Result<()> {
        if self.dims() == 1 {
            let im = self.image_1d();
            if !im.contains(z[0]) {
                return Err(Error::OutsideImage {
                    dim: 0,
                    value: z[0],
                    lo: im.lo,
                    hi: im.hi,
                });
            }
        } else if let WarpKind::Identity { domain } = &self.kind {
            for (d, (iv, &v)) in domain.iter().zip(z).enumerate() {
                if !iv.contains(v) {
                    return Err(Error::OutsideImage {
                        dim: d,
                        value: v,
                        lo: iv.lo,
                        hi: iv.hi,
                    });
                }
            }
        }
        Ok(())
    }

    /// 1-D evaluation without domain checks; linear extrapolation for phases.
    fn forward_1d(&self, x: f64) -> f64 {
        match &self.kind {
            WarpKind::Polynomial1D { coeffs, .. } => horner(coeffs, x) * x,
            WarpKind::PiecewiseLinearPhase { times, phases, .. } => {
                piecewise_linear(times, phases, x)
            }
            _ => x,
        }
    }

    /// `dφ/dx` of a 1-D warp.
    pub fn derivative_1d(&self, x: f64) -> f64 {
        match &self.kind {
            WarpKind::Polynomial1D { coeffs, .. } => {
                let deg = coeffs.len();
                coeffs
                    .iter()
                    .enumerate()
                    .fold(0.0, |acc, (i, c)| acc * x + c * (deg - i) as f64)
            }
            WarpKind::PiecewiseLinearPhase { times, phases, .. } => {
                let k = segment(times, x);
                (phases[k + 1] - phases[k]) / (times[k + 1] - times[k])
            }
            _ => 1.0,
        }
    }

    fn inverse_1d(&self, z: f64) -> f64 {
        match &self.kind {
            WarpKind::Polynomial1D { domain, .. } => self.newton_inverse(z, *domain),
            WarpKind::PiecewiseLinearPhase { times, phases, .. } => {
                piecewise_linear(phases, times, z)
            }
            _ => z,
        }
    }

    /// Safeguarded Newton on the bracket `domain`, falling back to bisection.
    fn newton_inverse(&self, z: f64, domain: Interval) -> f64 {
        let (mut a, mut b) = (domain.lo, domain.hi);
        let (fa, fb) = (self.forward_1d(a) - z, self.forward_1d(b) - z);
        if fa >= 0.0 {
            return a;
        }
        if fb <= 0.0 {
            return b;
        }
        let mut x = a + (b - a) * (-fa) / (fb - fa);
        for _ in 0..NEWTON_MAX_ITER {
            let f = self.forward_1d(x) - z;
            if f == 0.0 {
                return x;
            }
            if f < 0.0 {
                a = x;
            } else {
                b = x;
            }
            let newton = x - f / self.derivative_1d(x);
            let next = if newton > a && newton < b {
                newton
            } else {
                0.5 * (a + b)
            };
            let step = (next - x).abs();
            x = next;
            if step <= NEWTON_TOL * x.abs().max(1.0) {
                // Within the tolerance the Newton map contracts quadratically;
                // two more updates reach full precision.
                for _ in 0..2 {
                    let f = self.forward_1d(x) - z;
                    x -= f / self.derivative_1d(x);
                }
                break;
            }
        }
        x
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().fold(0.0, |acc, c| acc * x + c)
}

/// Index of the segment `[xs[k], xs[k+1]]` used for `x`, clamped to the outer segments.
fn segment(xs: &[f64], x: f64) -> usize {
    let k = xs.partition_point(|&v| v <= x);
    k.saturating_sub(1).min(xs.len() - 2)
}

fn piecewise_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let k = segment(xs, x);
    let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
    ys[k] + t * (ys[k + 1] - ys[k])
}

/// Phase warp from event times such as detected R-peaks.
///
/// The phase advances by `2π` (or by 1 when `two_pi_per_event` is false) from
/// one event to the next, is linear in between, and continues with the
/// neighbouring slope before the first and after the last event.
pub fn phase_from_events(event_times: &[f64], two_pi_per_event: bool) -> Result<Warp> {
    if event_times.len() < 2 {
        return Err(Error::InvalidEvents(format!(
            "need at least 2 events, got {}",
            event_times.len()
        )));
    }
    if let Some(k) = (1..event_times.len()).find(|&k| !(event_times[k] > event_times[k - 1])) {
        return Err(Error::InvalidEvents(format!(
            "event times must be strictly increasing (index {k}: {} after {})",
            event_times[k],
            event_times[k - 1]
        )));
    }
    let step = if two_pi_per_event { 2.0 * PI } else { 1.0 };
    let phases = (0..event_times.len()).map(|k| step * k as f64).collect();
    Warp::piecewise_linear(event_times.to_vec(), phases, Interval::REAL_LINE)
}

/// Structured-text form of a warp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WarpSpec {
    Identity {
        domain: Vec<Interval>,
    },
    Polynomial {
        coeffs: Vec<f64>,
        domain: Interval,
    },
    PiecewiseLinear {
        times: Vec<f64>,
        phases: Vec<f64>,
        #[serde(default = "real_line")]
        domain: Interval,
    },
    Elementwise {
        axes: Vec<WarpSpec>,
    },
    Affine {
        matrix: Vec<f64>,
        offset: Vec<f64>,
        domain: Vec<Interval>,
    },
}

fn real_line() -> Interval {
    Interval::REAL_LINE
}

impl TryFrom<WarpSpec> for Warp {
    type Error = Error;

    fn try_from(spec: WarpSpec) -> Result<Self> {
        match spec {
            WarpSpec::Identity { domain } => {
                if domain.is_empty() {
                    return Err(Error::InvalidWarp("identity warp needs a domain".into()));
                }
                Ok(Warp::identity_on(domain))
            }
            WarpSpec::Polynomial { coeffs, domain } => Warp::polynomial(coeffs, domain),
            WarpSpec::PiecewiseLinear {
                times,
                phases,
                domain,
            } => Warp::piecewise_linear(times, phases, domain),
            WarpSpec::Elementwise { axes } => Warp::elementwise(
                axes.into_iter()
                    .map(Warp::try_from)
                    .collect::<Result<Vec<_>>>()?,
            ),
            WarpSpec::Affine {
                matrix,
                offset,
                domain,
            } => Warp::affine(matrix, offset, domain),
        }
    }
}

impl From<Warp> for WarpSpec {
    fn from(w: Warp) -> Self {
        match w.kind {
            WarpKind::Identity { domain } => WarpSpec::Identity { domain },
            WarpKind::Polynomial1D { coeffs, domain } => WarpSpec::Polynomial { coeffs, domain },
            WarpKind::PiecewiseLinearPhase {
                times,
                phases,
                domain,
            } => WarpSpec::PiecewiseLinear {
                times,
                phases,
                domain,
            },
            WarpKind::Elementwise(axes) => WarpSpec::Elementwise {
                axes: axes.into_iter().map(WarpSpec::from).collect(),
            },
            WarpKind::Affine {
                matrix,
                offset,
                domain,
                ..
            } => WarpSpec::Affine {
                matrix: matrix.transpose().iter().copied().collect(),
                offset: offset.iter().copied().collect(),
                domain,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cubic() -> Warp {
        Warp::polynomial(vec![2.0, 0.0, 1.0], Interval::new(-1.5, 1.5).unwrap()).unwrap()
    }

    fn unit_phase() -> Warp {
        Warp::piecewise_linear(vec![0.0, 1.0], vec![0.0, 2.0 * PI], Interval::REAL_LINE).unwrap()
    }

    #[test]
    fn cubic_forward_and_inverse() {
        let w = cubic();
        assert_eq!(w.forward(&[1.0]).unwrap(), vec![3.0]);
        assert_relative_eq!(w.inverse(&[3.0]).unwrap()[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(w.derivative_1d(1.0), 7.0);
    }

    #[test]
    fn identity_is_identity() {
        let w = Warp::identity(2);
        assert_eq!(w.forward(&[0.3, -7.0]).unwrap(), vec![0.3, -7.0]);
        assert_eq!(w.inverse(&[0.3, -7.0]).unwrap(), vec![0.3, -7.0]);
    }

    #[test]
    fn piecewise_linear_midpoint() {
        let w = unit_phase();
        assert_relative_eq!(w.forward(&[0.5]).unwrap()[0], PI, epsilon = 1e-15);
        assert_relative_eq!(w.inverse(&[PI]).unwrap()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn out_of_domain_and_image_are_errors() {
        let w = cubic();
        assert!(matches!(w.forward(&[2.0]), Err(Error::OutOfDomain { dim: 0, .. })));
        // φ(1.5) = 8.25
        assert!(matches!(w.inverse(&[9.0]), Err(Error::OutsideImage { .. })));
        assert!(w.forward(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn non_monotone_polynomial_is_rejected() {
        // x³ − x decreases on (−1/√3, 1/√3).
        let r = Warp::polynomial(vec![1.0, 0.0, -1.0], Interval::new(-1.0, 1.0).unwrap());
        assert!(matches!(r, Err(Error::NotMonotone { .. })));
    }

    #[test]
    fn phase_from_events_examples() {
        let w = phase_from_events(&[0.0, 1.0, 2.0], true).unwrap();
        assert_relative_eq!(w.forward(&[1.5]).unwrap()[0], 3.0 * PI, epsilon = 1e-14);
        let w = phase_from_events(&[0.0, 2.0], true).unwrap();
        assert_relative_eq!(w.forward(&[1.0]).unwrap()[0], PI, epsilon = 1e-14);
        let w = phase_from_events(&[0.0, 1.0, 3.0], true).unwrap();
        assert_relative_eq!(w.forward(&[2.0]).unwrap()[0], 3.0 * PI, epsilon = 1e-14);
        assert_relative_eq!(w.derivative_1d(2.0), PI, epsilon = 1e-14);
        assert_relative_eq!(w.derivative_1d(0.5), 2.0 * PI, epsilon = 1e-14);
    }

    #[test]
    fn phase_hits_multiples_of_two_pi_and_extrapolates() {
        let events = [0.3, 1.1, 1.8, 2.9, 3.5];
        let w = phase_from_events(&events, true).unwrap();
        for (k, &t) in events.iter().enumerate() {
            assert_relative_eq!(w.forward(&[t]).unwrap()[0], 2.0 * PI * k as f64, epsilon = 1e-12);
        }
        let slope_first = 2.0 * PI / 0.8;
        assert_relative_eq!(w.forward(&[0.0]).unwrap()[0], -0.3 * slope_first, epsilon = 1e-12);
        let slope_last = 2.0 * PI / 0.6;
        assert_relative_eq!(
            w.forward(&[4.0]).unwrap()[0],
            8.0 * PI + 0.5 * slope_last,
            epsilon = 1e-12
        );
        let plain = phase_from_events(&events, false).unwrap();
        assert_relative_eq!(plain.forward(&[2.9]).unwrap()[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn phase_from_events_errors() {
        assert!(matches!(phase_from_events(&[1.0], true), Err(Error::InvalidEvents(_))));
        assert!(matches!(
            phase_from_events(&[0.0, 1.0, 1.0], true),
            Err(Error::InvalidEvents(_))
        ));
    }

    #[test]
    fn round_trip_all_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut t = 0.0;
        let events: Vec<f64> = (0..40)
            .map(|_| {
                t += rng.random_range(0.6..1.0);
                t
            })
            .collect();
        let warps = vec![
            cubic(),
            unit_phase(),
            phase_from_events(&events, true).unwrap(),
            Warp::elementwise(vec![cubic(), Warp::identity(1)]).unwrap(),
            Warp::affine(
                vec![1.0, 0.5, -0.3, 2.0],
                vec![0.1, -0.2],
                vec![Interval::new(-2.0, 2.0).unwrap(); 2],
            )
            .unwrap(),
        ];
        for w in &warps {
            let lo: Vec<f64> = w.domain().iter().map(|d| d.lo.max(-1.5)).collect();
            let hi: Vec<f64> = w.domain().iter().map(|d| d.hi.min(30.0)).collect();
            for _ in 0..10_000 {
                let x: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.random_range(*a..*b)).collect();
                let z = w.forward(&x).unwrap();
                let back = w.inverse(&z).unwrap();
                for (a, b) in x.iter().zip(&back) {
                    assert!((a - b).abs() <= 1e-10, "{w:?}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn forward_preserves_order() {
        let w = cubic();
        let xs: Vec<f64> = (0..1000).map(|i| -1.5 + 3.0 * i as f64 / 999.0).collect();
        let zs: Vec<f64> = xs.iter().map(|&x| w.forward(&[x]).unwrap()[0]).collect();
        assert!(zs.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn elementwise_maps_lattices_to_lattices() {
        let w = Warp::elementwise(vec![cubic(), unit_phase()]).unwrap();
        let a = [-1.0, -0.2, 0.4, 1.1];
        let b = [0.0, 0.25, 0.9];
        for &x1 in &a {
            for &x2 in &b {
                let z = w.forward(&[x1, x2]).unwrap();
                assert_eq!(z[0], w.axis(0).unwrap().forward(&[x1]).unwrap()[0]);
                assert_eq!(z[1], w.axis(1).unwrap().forward(&[x2]).unwrap()[0]);
            }
        }
        assert!(Warp::affine(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], vec![Interval::REAL_LINE; 2])
            .unwrap()
            .axis(0)
            .is_none());
    }

    #[test]
    fn spec_round_trip() {
        let w = Warp::elementwise(vec![cubic(), unit_phase()]).unwrap();
        let spec = WarpSpec::from(w.clone());
        assert_eq!(Warp::try_from(spec).unwrap(), w);
    }
}
