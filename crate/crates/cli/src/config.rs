//! Experiment configuration.
//!
//! Every field has a default, so a config file only lists what it changes.
//! Command-line flags and a TOML file are merged as tables, with the file
//! taking precedence.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use warpski::gp::GpModel;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Numeric2d,
    Separation1d,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub n: usize,
    pub seed: u64,
    /// CG tolerance for posterior inference.
    pub cg_tol_inference: f64,
    /// CG tolerance for source separation.
    pub cg_tol_separation: f64,
    /// CG tolerance inside the likelihood during learning.
    pub cg_tol_learning: f64,
    pub probes: usize,
    pub lanczos_steps: usize,
    /// L-BFGS step budget.
    pub max_steps: usize,
    pub resample_probes: bool,
    /// Timed operations run once to warm up, then this many times; the
    /// median is reported.
    pub timing_repeats: usize,
    pub numeric2d: Numeric2dConfig,
    pub separation: SeparationConfig,
    pub sweep: SweepConfig,
    pub custom: Option<CustomConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Numeric2d,
            n: 10_000,
            seed: 0,
            cg_tol_inference: 1e-1,
            cg_tol_separation: 5e-3,
            cg_tol_learning: 1e-4,
            probes: 20,
            lanczos_steps: 30,
            max_steps: 100,
            resample_probes: false,
            timing_repeats: 3,
            numeric2d: Numeric2dConfig::default(),
            separation: SeparationConfig::default(),
            sweep: SweepConfig::default(),
            custom: None,
        }
    }
}

/// Warped 2-D squared-exponential benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numeric2dConfig {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    /// Warp on the first input, highest power first, no constant term.
    pub warp_coeffs: Vec<f64>,
    pub true_amplitude: f64,
    pub true_lengthscale: f64,
    pub true_noise: f64,
    pub initial_amplitude: f64,
    pub initial_lengthscale: f64,
    pub initial_noise: f64,
    /// Lattice used for inference and learning.
    pub grid_counts: [usize; 2],
    /// Denser lattice used to draw the ground truth.
    pub sample_grid_counts: [usize; 2],
    pub fit: bool,
}

impl Default for Numeric2dConfig {
    fn default() -> Self {
        Self {
            x_range: [-1.2, 0.75],
            y_range: [-2.5, 2.5],
            warp_coeffs: vec![2.0, 0.0, 1.0],
            true_amplitude: 1.5,
            true_lengthscale: 0.4,
            true_noise: 0.5,
            initial_amplitude: 1.0,
            initial_lengthscale: 0.6,
            initial_noise: 1.0,
            grid_counts: [100, 100],
            sample_grid_counts: [300, 240],
            fit: true,
        }
    }
}

/// Two phase-warped quasi-periodic sources in noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparationConfig {
    pub sample_rate: f64,
    /// Mean event interval of the slower ("maternal") source, seconds.
    pub slow_period: f64,
    /// Slow period divided by the fast ("fetal") period.
    pub period_ratio: f64,
    /// Relative standard deviation of event intervals.
    pub period_jitter: f64,
    pub slow_amplitude: f64,
    pub fast_amplitude: f64,
    /// Fast-source signal-to-noise ratio in dB; sets the noise level.
    pub fast_snr_db: f64,
    /// Periodic lengthscale in radians of phase.
    pub periodic_lengthscale: f64,
    /// Envelope lengthscale, in events.
    pub envelope_events: f64,
    pub points_per_lengthscale: f64,
    /// Fit amplitudes and noise with lengthscales and periods fixed.
    pub fit: bool,
    /// Starting amplitudes and noise as a fraction of the signal's std.
    pub initial_fraction: f64,
    /// Largest n at which the dense oracle separation is also run.
    pub oracle_max_n: usize,
    /// Recorded data instead of synthetic sources.
    pub data: Option<RecordedData>,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            sample_rate: 250.0,
            slow_period: 0.8,
            period_ratio: 2.8,
            period_jitter: 0.03,
            slow_amplitude: 1.0,
            fast_amplitude: 0.3,
            fast_snr_db: 0.0,
            periodic_lengthscale: 0.6,
            envelope_events: 8.0,
            points_per_lengthscale: 4.0,
            fit: true,
            initial_fraction: 0.5,
            oracle_max_n: 3000,
            data: None,
        }
    }
}

/// A `time,value` recording plus one event file per source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordedData {
    pub series: PathBuf,
    pub slow_events: PathBuf,
    pub fast_events: PathBuf,
}

/// Scaling sweep over n and m on the 2-D benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_values: Vec<usize>,
    /// Lattice held fixed while n varies.
    pub fixed_grid: [usize; 2],
    /// Lattices visited while n is held at `fixed_n`.
    pub grids: Vec<[usize; 2]>,
    pub fixed_n: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_values: vec![2000, 4000, 8000, 16_000, 32_000],
            fixed_grid: [64, 64],
            grids: vec![[32, 32], [45, 45], [64, 64], [90, 90], [128, 128]],
            fixed_n: 4000,
        }
    }
}

/// A user-defined model run on a recorded 1-D series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomConfig {
    pub model: GpModel,
    pub series: PathBuf,
    #[serde(default = "yes")]
    pub fit: bool,
}

fn yes() -> bool {
    true
}

fn positive(path: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(path, format!("must be positive and finite, got {v}")))
    }
}

fn nonzero(path: &str, v: usize) -> Result<(), CliError> {
    if v > 0 {
        Ok(())
    } else {
        Err(CliError::config(path, "must be at least 1"))
    }
}

fn ordered(path: &str, r: [f64; 2]) -> Result<(), CliError> {
    if r[0] < r[1] && r.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CliError::config(path, format!("needs min < max, got {r:?}")))
    }
}

impl ExperimentConfig {
    /// Check every field, reporting the first problem with its path.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.kind != ExperimentKind::Custom {
            nonzero("n", self.n)?;
        }
        positive("cg_tol_inference", self.cg_tol_inference)?;
        positive("cg_tol_separation", self.cg_tol_separation)?;
        positive("cg_tol_learning", self.cg_tol_learning)?;
        nonzero("probes", self.probes)?;
        nonzero("lanczos_steps", self.lanczos_steps)?;
        let c = &self.numeric2d;
        ordered("numeric2d.x_range", c.x_range)?;
        ordered("numeric2d.y_range", c.y_range)?;
        if c.warp_coeffs.is_empty() {
            return Err(CliError::config("numeric2d.warp_coeffs", "needs at least the linear coefficient"));
        }
        for (p, v) in [
            ("numeric2d.true_amplitude", c.true_amplitude),
            ("numeric2d.true_lengthscale", c.true_lengthscale),
            ("numeric2d.true_noise", c.true_noise),
            ("numeric2d.initial_amplitude", c.initial_amplitude),
            ("numeric2d.initial_lengthscale", c.initial_lengthscale),
            ("numeric2d.initial_noise", c.initial_noise),
        ] {
            positive(p, v)?;
        }
        for (p, counts) in [("numeric2d.grid_counts", c.grid_counts), ("numeric2d.sample_grid_counts", c.sample_grid_counts)] {
            if counts.iter().any(|&m| m < warpski::grid::MIN_AXIS_POINTS) {
                return Err(CliError::config(
                    p,
                    format!("each axis needs at least {} nodes, got {counts:?}", warpski::grid::MIN_AXIS_POINTS),
                ));
            }
        }
        let s = &self.separation;
        for (p, v) in [
            ("separation.sample_rate", s.sample_rate),
            ("separation.slow_period", s.slow_period),
            ("separation.period_ratio", s.period_ratio),
            ("separation.slow_amplitude", s.slow_amplitude),
            ("separation.periodic_lengthscale", s.periodic_lengthscale),
            ("separation.envelope_events", s.envelope_events),
            ("separation.points_per_lengthscale", s.points_per_lengthscale),
            ("separation.initial_fraction", s.initial_fraction),
        ] {
            positive(p, v)?;
        }
        if !(s.fast_amplitude >= 0.0 && s.fast_amplitude.is_finite()) {
            return Err(CliError::config("separation.fast_amplitude", "must be non-negative"));
        }
        if !(0.0..0.5).contains(&s.period_jitter) {
            return Err(CliError::config("separation.period_jitter", "must lie in [0, 0.5)"));
        }
        if !s.fast_snr_db.is_finite() {
            return Err(CliError::config("separation.fast_snr_db", "must be finite"));
        }
        let w = &self.sweep;
        if w.n_values.iter().any(|&n| n == 0) {
            return Err(CliError::config("sweep.n_values", "entries must be at least 1"));
        }
        nonzero("sweep.fixed_n", w.fixed_n)?;
        nonzero("timing_repeats", self.timing_repeats)?;
        if self.kind == ExperimentKind::Custom && self.custom.is_none() {
            return Err(CliError::config("custom", "required when kind = \"custom\""));
        }
        Ok(())
    }

    /// Parse TOML text on top of the defaults.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::ConfigSyntax(e.to_string()))
    }

    /// Merge `overrides` (parsed TOML) over `base`, then deserialize.
    pub fn merged(base: toml::Table, overrides: toml::Table) -> Result<Self, CliError> {
        let mut merged = base;
        merge_tables(&mut merged, overrides);
        toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::ConfigSyntax(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }
}

fn merge_tables(base: &mut toml::Table, overrides: toml::Table) {
    for (k, v) in overrides {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
