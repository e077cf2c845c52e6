//! Error metrics for experiment reports.

use crate::error::CliError;

fn check_lengths(a: &[f64], b: &[f64]) -> Result<(), CliError> {
    if a.len() != b.len() {
        return Err(CliError::Metric(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(CliError::Metric("empty series".into()));
    }
    Ok(())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `sqrt(mean((a − b)²))`.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64, CliError> {
    check_lengths(a, b)?;
    Ok((squared_distance(a, b) / a.len() as f64).sqrt())
}

/// RMSE divided by the range of the reference `b`.
pub fn nrmse(a: &[f64], b: &[f64]) -> Result<f64, CliError> {
    let e = rmse(a, b)?;
    let (lo, hi) = b
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return Err(CliError::Metric("reference has zero range".into()));
    }
    Ok(e / (hi - lo))
}

/// `10 log10(‖raw − truth‖² / ‖cleaned − truth‖²)` in dB.
pub fn snr_improvement(raw: &[f64], cleaned: &[f64], truth: &[f64]) -> Result<f64, CliError> {
    check_lengths(raw, truth)?;
    check_lengths(cleaned, truth)?;
    let before = squared_distance(raw, truth);
    let after = squared_distance(cleaned, truth);
    if after == 0.0 || before == 0.0 {
        return Err(CliError::Metric("zero error energy".into()));
    }
    Ok(10.0 * (before / after).log10())
}

/// Relative L2 distance `‖a − b‖ / ‖b‖`.
pub fn relative_l2(a: &[f64], b: &[f64]) -> Result<f64, CliError> {
    check_lengths(a, b)?;
    let denom: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(CliError::Metric("reference has zero norm".into()));
    }
    Ok(squared_distance(a, b).sqrt() / denom)
}
