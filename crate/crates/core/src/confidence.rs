//! Confidence intervals for per-bucket metric means.
//!
//! Bootstrap resampling is split into fixed-size chunks, each drawing from
//! its own ChaCha8 stream derived from the seed, so the result depends only
//! on the seed and not on how many threads run the chunks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::metrics::Metric;

pub const DEFAULT_LEVEL: f64 = 0.95;
pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_MIN_BUCKET_SIZE: usize = 5;
pub const DEFAULT_SEED: u64 = 0x6b67_785f_6369;
const CHUNK: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum CiError {
    #[error("confidence level must lie in (0, 1), got {0}")]
    Level(f64),
    #[error("at least one resample is required")]
    Resamples,
    #[error("no values")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    #[default]
    Bootstrap,
    T,
}

impl std::str::FromStr for CiMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bootstrap" => Ok(CiMethod::Bootstrap),
            "t" | "ttest" => Ok(CiMethod::T),
            other => Err(format!("unknown interval method '{other}', expected bootstrap, t or ttest")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiConfig {
    pub method: CiMethod,
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
    pub min_bucket_size: usize,
}

impl Default for CiConfig {
    fn default() -> Self {
        CiConfig {
            method: CiMethod::Bootstrap,
            level: DEFAULT_LEVEL,
            resamples: DEFAULT_RESAMPLES,
            seed: DEFAULT_SEED,
            min_bucket_size: DEFAULT_MIN_BUCKET_SIZE,
        }
    }
}

impl CiConfig {
    pub fn validate(&self) -> Result<(), CiError> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CiError::Level(self.level));
        }
        if self.method == CiMethod::Bootstrap && self.resamples == 0 {
            return Err(CiError::Resamples);
        }
        Ok(())
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Linear interpolation between order statistics of a sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Resampled means, in chunk order.
pub fn bootstrap_means(values: &[f64], resamples: usize, seed: u64) -> Vec<f64> {
    let n = values.len();
    let chunks = resamples.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(resamples - c * CHUNK);
            (0..count)
                .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Percentile bootstrap interval for the mean of `values`.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64), CiError> {
    if values.is_empty() {
        return Err(CiError::Empty);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(CiError::Level(level));
    }
    if resamples == 0 {
        return Err(CiError::Resamples);
    }
    let mut means = bootstrap_means(values, resamples, seed);
    means.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Ok((percentile(&means, alpha / 2.0), percentile(&means, 1.0 - alpha / 2.0)))
}

/// Two-sided Student-t quantile `t_{df, p}`.
pub fn t_quantile(df: f64, p: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom").inverse_cdf(p)
}

/// `mean ± t * s / sqrt(n)`. A single value gives a zero-width interval.
pub fn t_interval(values: &[f64], level: f64) -> Result<(f64, f64), CiError> {
    if values.is_empty() {
        return Err(CiError::Empty);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(CiError::Level(level));
    }
    let n = values.len();
    let m = mean(values);
    if n == 1 {
        return Ok((m, m));
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok((m, m));
    }
    let half = t_quantile((n - 1) as f64, 1.0 - (1.0 - level) / 2.0) * (var / n as f64).sqrt();
    Ok((m - half, m + half))
}

/// Clamps to the metric's range and widens to include the point estimate.
pub fn clamp_interval(metric: Metric, point: f64, (lo, hi): (f64, f64)) -> (f64, f64) {
    let (min, max) = metric.value_range();
    (lo.clamp(min, max).min(point), hi.clamp(min, max).max(point))
}

/// Interval for the mean of per-example metric values, or `None` when the
/// bucket is smaller than `min_bucket_size`.
pub fn metric_interval(metric: Metric, per_example: &[f64], point: f64, cfg: &CiConfig) -> Result<Option<(f64, f64)>, CiError> {
    cfg.validate()?;
    if per_example.len() < cfg.min_bucket_size.max(1) {
        return Ok(None);
    }
    let raw = match cfg.method {
        CiMethod::Bootstrap => bootstrap_ci(per_example, cfg.level, cfg.resamples, cfg.seed)?,
        CiMethod::T => t_interval(per_example, cfg.level)?,
    };
    Ok(Some(clamp_interval(metric, point, raw)))
}
