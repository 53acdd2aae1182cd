//! Operator-driven double thresholding of a single-channel image.
//!
//! Dark is ink. Pixels below `t1` (overtext) turn white; pixels in
//! `[t1, t2)` (undertext) are darkened to `alpha·v`; the rest pass through.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube_io::{CLASS_OVERTEXT, CLASS_UNDERTEXT};
use crate::error::{Error, Result};
use crate::linalg::{percentile_sorted, sorted_copy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    pub t1: f64,
    pub t2: f64,
    pub alpha: f64,
}

impl ThresholdParams {
    pub fn new(t1: f64, t2: f64, alpha: f64) -> Result<Self> {
        let p = ThresholdParams { t1, t2, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.t1) || !unit(self.t2) || !unit(self.alpha) {
            return Err(Error::Config(format!(
                "thresholds and alpha must lie in [0,1]: t1={}, t2={}, alpha={}",
                self.t1, self.t2, self.alpha
            )));
        }
        if self.t1 > self.t2 {
            return Err(Error::Config(format!("t1 = {} exceeds t2 = {}", self.t1, self.t2)));
        }
        Ok(())
    }

    /// Map one pixel value.
    pub fn apply(&self, v: f64) -> f64 {
        if v < self.t1 {
            1.0
        } else if v < self.t2 {
            self.alpha * v
        } else {
            v
        }
    }
}

/// Apply the two thresholds to every pixel of a plane with values in `[0,1]`.
pub fn apply_double_threshold(plane: &[f64], params: ThresholdParams) -> Result<Vec<f64>> {
    params.validate()?;
    if let Some((i, v)) = plane.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidInput(format!("pixel {i} has value {v} outside [0,1]")));
    }
    Ok(plane.par_iter().map(|&v| params.apply(v)).collect())
}

/// Starting thresholds from labeled overtext and undertext pixels of `plane`.
///
/// `t1` is the midpoint of the overtext 95th and undertext 5th percentiles,
/// clamped to the latter when the classes overlap; `t2` is the undertext
/// 95th percentile; `alpha` is 0.5.
pub fn suggest_thresholds(plane: &[f64], labels: &[u8]) -> Result<ThresholdParams> {
    if plane.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} pixels but {} labels",
            plane.len(),
            labels.len()
        )));
    }
    let class_values = |class: u8, name: &str| -> Result<Vec<f64>> {
        let v: Vec<f64> = plane.iter().zip(labels).filter(|(_, &l)| l == class).map(|(&v, _)| v).collect();
        if v.is_empty() {
            return Err(Error::MissingClass(format!("no {name} pixels labeled")));
        }
        Ok(sorted_copy(&v))
    };
    let over = class_values(CLASS_OVERTEXT, "overtext")?;
    let under = class_values(CLASS_UNDERTEXT, "undertext")?;
    let over_hi = percentile_sorted(&over, 95.0);
    let under_lo = percentile_sorted(&under, 5.0);
    let t2 = percentile_sorted(&under, 95.0).clamp(0.0, 1.0);
    let t1 = if over_hi > under_lo { under_lo } else { 0.5 * (over_hi + under_lo) };
    ThresholdParams::new(t1.clamp(0.0, t2), t2, 0.5)
}
