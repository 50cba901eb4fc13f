//! Band-pass spatiotemporal surrogate for the visual-system stage.
//!
//! Difference of two unit-sum Gaussians in-plane (centre minus surround)
//! followed by Gaussian smoothing across slices. Both stages have gain at
//! most one, and the DoG removes the DC component exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{convolve_axis_reflect, gaussian_kernel, Axis};
use crate::stackgen::{Stack, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HvsConfig {
    pub center_sigma: f64,
    pub surround_sigma: f64,
    pub temporal_sigma: f64,
    pub enabled: bool,
}

impl Default for HvsConfig {
    fn default() -> Self {
        Self {
            center_sigma: 1.0,
            surround_sigma: 4.0,
            temporal_sigma: 1.0,
            enabled: true,
        }
    }
}

impl HvsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.center_sigma >= 0.0 && self.surround_sigma > self.center_sigma) {
            return Err(Error::Config(format!(
                "need surround_sigma > center_sigma >= 0, got {} / {}",
                self.surround_sigma, self.center_sigma
            )));
        }
        if !(self.temporal_sigma >= 0.0 && self.temporal_sigma.is_finite()) {
            return Err(Error::Config("temporal_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// Filter a stack through the surrogate. A disabled config is the identity.
pub fn apply_hvs(stack: &Stack, cfg: &HvsConfig) -> Result<Stack> {
    if !cfg.enabled {
        return Ok(stack.clone());
    }
    cfg.validate()?;
    let dims = stack.dims;
    // The DoG ignores constant offsets; removing one keeps flat input at exactly zero.
    let offset = stack.voxels[0];
    let shifted: Vec<f64> = stack.voxels.iter().map(|v| v - offset).collect();

    let kc = gaussian_kernel(cfg.center_sigma);
    let ks = gaussian_kernel(cfg.surround_sigma);
    let smooth2 = |k: &[f64]| {
        let a = convolve_axis_reflect(&shifted, dims, Axis::Col, k);
        convolve_axis_reflect(&a, dims, Axis::Row, k)
    };
    let center = smooth2(&kc);
    let surround = smooth2(&ks);
    let dog: Vec<f64> = center.iter().zip(&surround).map(|(c, s)| c - s).collect();
    let voxels = convolve_axis_reflect(&dog, dims, Axis::Slice, &gaussian_kernel(cfg.temporal_sigma));

    Ok(Stack {
        voxels,
        stage: Stage::PostHvs,
        ..stack.clone()
    })
}
