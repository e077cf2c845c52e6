//! Synthetic ground truth: jittered event streams and exact draws from
//! phase-warped quasi-periodic GPs.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use warpski::linalg::KronEigen;
use warpski::operators::{GridSpec, SkiComponent};
use warpski::{LinearOperator, Points, StationaryKernel, Warp};

use crate::error::CliError;

/// Event times covering `[start, end]` with one extra event on either side.
///
/// Intervals follow `period · (1 + jitter · r_k)` where `r_k` is a unit
/// variance AR(1) sequence, mimicking slow heart-rate variability.
pub fn jittered_events<R: Rng>(start: f64, end: f64, period: f64, jitter: f64, rng: &mut R) -> Vec<f64> {
    let rho: f64 = 0.9;
    let innovation = (1.0 - rho * rho).sqrt();
    let mut r: f64 = StandardNormal.sample(rng);
    let mut t = start - period * (1.0 + rng.random::<f64>());
    let mut events = vec![t];
    while t <= end + period {
        let step = period * (1.0 + jitter * r).max(0.2);
        t += step;
        events.push(t);
        let e: f64 = StandardNormal.sample(rng);
        r = rho * r + innovation * e;
    }
    events
}

/// Cosine-series coefficients of `exp(−2 sin²(τ/2)/ℓ²)` on `[0, 2π)`, so
/// that the kernel equals `Σ_k c_k cos(kτ)` with `Σ_k c_k = 1`.
pub fn periodic_cosine_coefficients(periodic_lengthscale: f64) -> Vec<f64> {
    let samples = 2048;
    let kernel = |tau: f64| (-2.0 * (tau / 2.0).sin().powi(2) / periodic_lengthscale.powi(2)).exp();
    let values: Vec<f64> = (0..samples).map(|i| kernel(2.0 * PI * i as f64 / samples as f64)).collect();
    let mut coeffs = Vec::new();
    for k in 0..samples / 2 {
        let proj: f64 = values
            .iter()
            .enumerate()
            .map(|(i, v)| v * (2.0 * PI * (k * i) as f64 / samples as f64).cos())
            .sum::<f64>()
            / samples as f64;
        let c = if k == 0 { proj } else { 2.0 * proj };
        if k > 0 && c.abs() < 1e-10 * coeffs[0] {
            break;
        }
        coeffs.push(c.max(0.0));
    }
    let total: f64 = coeffs.iter().sum();
    coeffs.iter().map(|c| c / total).collect()
}

/// One draw from `GP(0, SE(σ, ℓ) × Periodic(1, ℓ_p, 2π))` evaluated at the
/// given phases.
///
/// Writes the periodic factor as a cosine series and gives every harmonic
/// pair independent SE-distributed amplitudes; the sum then has exactly the
/// quasi-periodic covariance. Envelopes are drawn on a fine lattice through
/// the Kronecker square root and interpolated.
pub fn quasi_periodic_draw<R: Rng>(
    phases: &[f64],
    amplitude: f64,
    envelope_lengthscale: f64,
    periodic_lengthscale: f64,
    rng: &mut R,
) -> Result<Vec<f64>, CliError> {
    let coeffs = periodic_cosine_coefficients(periodic_lengthscale);
    let x = Points::from_1d(phases.to_vec());
    let envelope = StationaryKernel::squared_exponential(1.0, envelope_lengthscale)?;
    let comp = SkiComponent::build_with_spec(
        envelope,
        Warp::identity(1),
        &GridSpec::PointsPerLengthscale { points: 16.0 },
        &x,
    )?;
    let sqrt = KronEigen::new(comp.kuu())?.sqrt_operator();
    let m = comp.kuu().size();
    let mut out = vec![0.0; phases.len()];
    for (k, c) in coeffs.iter().enumerate() {
        let scale = amplitude * c.sqrt();
        for trig in 0..2 {
            if k == 0 && trig == 1 {
                continue;
            }
            let xi: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
            let env = comp.weights().matvec(&sqrt.apply(&xi))?;
            for ((o, e), p) in out.iter_mut().zip(&env).zip(phases) {
                let basis = if trig == 0 { (k as f64 * p).cos() } else { (k as f64 * p).sin() };
                *o += scale * e * basis;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cosine_series_reproduces_the_periodic_kernel() {
        for l in [0.4, 0.8, 1.5] {
            let c = periodic_cosine_coefficients(l);
            for tau in [0.0, 0.3, 1.0, 2.5, PI] {
                let series: f64 = c.iter().enumerate().map(|(k, ck)| ck * (k as f64 * tau).cos()).sum();
                let exact = (-2.0 * (tau / 2.0f64).sin().powi(2) / (l * l)).exp();
                assert!((series - exact).abs() < 1e-8, "l={l} tau={tau}: {series} vs {exact}");
            }
        }
    }

    #[test]
    fn events_are_increasing_and_cover_the_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = jittered_events(0.0, 10.0, 0.8, 0.05, &mut rng);
        assert!(e.windows(2).all(|w| w[1] > w[0]));
        assert!(e[0] < 0.0 && *e.last().unwrap() > 10.0);
        let mean = (e.last().unwrap() - e[0]) / (e.len() - 1) as f64;
        assert!((mean - 0.8).abs() < 0.1);
    }

    #[test]
    fn draws_have_the_quasi_periodic_covariance() {
        // Monte Carlo over many draws at three phases.
        let phases = [0.0, 0.9, 2.0 * PI];
        let (amp, env, per) = (1.3, 12.0, 0.7);
        let kernel = StationaryKernel::quasi_periodic(amp, env, per, 2.0 * PI).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 1500;
        let mut acc = [[0.0; 3]; 3];
        for _ in 0..draws {
            let f = quasi_periodic_draw(&phases, amp, env, per, &mut rng).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    acc[i][j] += f[i] * f[j] / draws as f64;
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let k = kernel.eval(&[phases[i] - phases[j]]).unwrap();
                // Standard error of a sample covariance is about k(0)·sqrt(2/draws).
                let se = amp * amp * (2.0 / draws as f64).sqrt();
                assert!((acc[i][j] - k).abs() < 4.0 * se, "({i},{j}) {} vs {k}", acc[i][j]);
            }
        }
    }
}
