//! Gaussian kernel density curves for plotting estimate distributions.

use serde::{Deserialize, Serialize};

use crate::error::{GradError, Result};

/// Evaluation grid `lo, lo + step, ...` up to and including `hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Grid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if self.step.is_nan() || self.step <= 0.0 || !self.lo.is_finite() || !self.hi.is_finite() || self.hi < self.lo {
            return Err(GradError::InvalidConfig(format!(
                "bad grid lo={} hi={} step={}",
                self.lo, self.hi, self.step
            )));
        }
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.lo + i as f64 * self.step).collect())
    }

    /// Spans `pad` beyond the sample range on both sides.
    pub fn around(samples: &[f64], pad: f64, step: f64) -> Result<Grid> {
        if samples.is_empty() {
            return Err(GradError::EmptySamples);
        }
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Grid {
            lo: lo - pad,
            hi: hi + pad,
            step,
        })
    }
}

pub fn kde_curve(samples: &[f64], sigma: f64, grid: Grid) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(GradError::EmptySamples);
    }
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(GradError::InvalidConfig(format!("kernel width must be positive, got {sigma}")));
    }
    let norm = 1.0 / (samples.len() as f64 * sigma * (2.0 * std::f64::consts::PI).sqrt());
    let inv = 1.0 / (2.0 * sigma * sigma);
    Ok(grid
        .points()?
        .into_iter()
        .map(|x| {
            let s: f64 = samples.iter().map(|&v| (-(x - v) * (x - v) * inv).exp()).sum();
            (x, norm * s)
        })
        .collect())
}
