//! Synthetic lesion-present / lesion-absent stacks at configurable
//! background-complexity levels.
//!
//! The base texture is white Gaussian noise smoothed by a separable 3-D
//! Gaussian, centred on mid-gray. Complexity is injected as an independent
//! low-pass noise field whose amplitude grows with the level. The lesion is a
//! hard disk added to the central slice only.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{convolve_valid, gaussian_kernel, radius, Dims};
use crate::rng;

/// Mean gray value of every generated background.
pub const MID_GRAY: f64 = 127.5;
/// 1-based index of the slice that carries the lesion.
pub const LESION_SLICE: usize = 16;
/// Number of complexity levels (0 = simple .. 4 = very complex).
pub const NUM_LEVELS: usize = 5;
/// Standard deviation of a normalized stack in display units: ±4σ spans [0, 255].
pub const DISPLAY_SIGMA: f64 = 255.0 / 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Healthy,
    Lesion,
}

impl Label {
    pub fn is_lesion(self) -> bool {
        matches!(self, Label::Lesion)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Healthy => "healthy",
            Label::Lesion => "lesion",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "healthy" => Ok(Label::Healthy),
            "lesion" => Ok(Label::Lesion),
            other => Err(Error::Data(format!("unknown label {other:?}"))),
        }
    }
}

/// Processing stage of a stack's voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    #[default]
    PreHvs,
    PostHvs,
}

/// Affine display mapping `display = offset + scale * voxel`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: f64,
    pub scale: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization {
        offset: 0.0,
        scale: 1.0,
    };

    /// Per-stack standardization onto the display range: the stack mean maps
    /// to 127.5 and one standard deviation to [`DISPLAY_SIGMA`].
    pub fn standardize(voxels: &[f64]) -> Self {
        let n = voxels.len() as f64;
        let mean = voxels.iter().sum::<f64>() / n;
        let var = voxels.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let scale = if std > 0.0 && std.is_finite() {
            DISPLAY_SIGMA / std
        } else {
            1.0
        };
        Normalization {
            offset: MID_GRAY - scale * mean,
            scale,
        }
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        self.offset + self.scale * v
    }

    /// 8-bit rendering with clamping.
    #[inline]
    pub fn to_u8(&self, v: f64) -> u8 {
        self.apply(v).round().clamp(0.0, 255.0) as u8
    }
}

/// A labeled 3-D scalar volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    pub stack_id: u64,
    pub dims: Dims,
    pub label: Label,
    pub complexity_level: u8,
    pub seed: u64,
    pub stage: Stage,
    pub voxels: Vec<f64>,
}

impl Stack {
    /// A 2-D view of slice `index` (1-based).
    pub fn slice(&self, index: usize) -> &[f64] {
        assert!(
            (1..=self.dims.slices).contains(&index),
            "slice {index} out of 1..={}",
            self.dims.slices
        );
        let n = self.dims.slice_len();
        &self.voxels[(index - 1) * n..index * n]
    }

    pub fn normalization(&self) -> Normalization {
        Normalization::standardize(&self.voxels)
    }

    /// Copy of the stack mapped into display units.
    pub fn normalized(&self) -> Stack {
        let norm = self.normalization();
        Stack {
            voxels: self.voxels.iter().map(|&v| norm.apply(v)).collect(),
            ..self.clone()
        }
    }

    /// Round every voxel to the nearest `f32`, the on-disk precision.
    pub fn quantize(mut self) -> Stack {
        self.voxels.iter_mut().for_each(|v| *v = *v as f32 as f64);
        self
    }

    /// Spatial centre pixel (row, col), shared by the lesion and every ROI.
    pub fn center(&self) -> (usize, usize) {
        (self.dims.rows / 2, self.dims.cols / 2)
    }
}

/// Generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub dims: Dims,
    /// Lesion disk radius in pixels.
    pub lesion_radius: f64,
    pub lesion_amplitude: f64,
    /// Standard deviation of the white noise before smoothing.
    pub base_noise_sigma: f64,
    pub spatial_kernel_sigma: f64,
    pub temporal_kernel_sigma: f64,
    /// Temporal smoothing of the injected complexity noise. Its in-plane
    /// smoothing matches the base texture.
    pub complexity_temporal_sigma: f64,
    /// White-noise amplitude per complexity level 0..4.
    pub complexity_amplitudes: [f64; NUM_LEVELS],
    pub master_seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        let base_noise_sigma = 400.0;
        Self {
            dims: Dims::default(),
            lesion_radius: 3.0,
            lesion_amplitude: 20.0,
            base_noise_sigma,
            spatial_kernel_sigma: 2.0,
            temporal_kernel_sigma: 3.0,
            complexity_temporal_sigma: 0.6,
            complexity_amplitudes: geometric_ramp(base_noise_sigma / 64.0),
            master_seed: 2015,
        }
    }
}

/// `(0, a, 2a, 4a, 8a)`.
pub fn geometric_ramp(a: f64) -> [f64; NUM_LEVELS] {
    [0.0, a, 2.0 * a, 4.0 * a, 8.0 * a]
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.slices == 0 || d.rows == 0 || d.cols == 0 {
            return Err(Error::Config(format!("non-positive dimensions {d:?}")));
        }
        for (name, v) in [
            ("spatial_kernel_sigma", self.spatial_kernel_sigma),
            ("temporal_kernel_sigma", self.temporal_kernel_sigma),
            ("complexity_temporal_sigma", self.complexity_temporal_sigma),
            ("lesion_radius", self.lesion_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.base_noise_sigma >= 0.0 && self.base_noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "base_noise_sigma must be non-negative, got {}",
                self.base_noise_sigma
            )));
        }
        if !self.lesion_amplitude.is_finite() {
            return Err(Error::Config("lesion_amplitude must be finite".into()));
        }
        let amps = &self.complexity_amplitudes;
        if amps[0] != 0.0 {
            return Err(Error::Config("complexity_amplitudes[0] must be 0".into()));
        }
        if amps.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::Config("complexity_amplitudes must be non-negative".into()));
        }
        if amps[1..].windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "complexity_amplitudes must be strictly increasing over levels 1..4".into(),
            ));
        }
        Ok(())
    }

    pub fn stack_seed(&self, stack_id: u64) -> u64 {
        rng::derive_seed(self.master_seed, stack_id, "background")
    }
}

/// White noise smoothed by a separable Gaussian; generated on a padded grid
/// and cropped so the field is stationary up to the borders.
fn filtered_noise(
    dims: Dims,
    amplitude: f64,
    spatial_sigma: f64,
    temporal_sigma: f64,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let ks = gaussian_kernel(temporal_sigma);
    let kp = gaussian_kernel(spatial_sigma);
    let (ps, pp) = (radius(&ks), radius(&kp));
    let padded = Dims::new(dims.slices + 2 * ps, dims.rows + 2 * pp, dims.cols + 2 * pp);
    let white: Vec<f64> = (0..padded.len())
        .map(|_| amplitude * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let (out, od) = convolve_valid(&white, padded, &ks, &kp, &kp);
    debug_assert_eq!(od, dims);
    out
}

/// Analytic variance of [`generate_background`] output before mean removal.
pub fn background_variance(cfg: &GenConfig) -> f64 {
    let sq = |k: Vec<f64>| k.iter().map(|v| v * v).sum::<f64>();
    let ks = sq(gaussian_kernel(cfg.temporal_kernel_sigma));
    let kp = sq(gaussian_kernel(cfg.spatial_kernel_sigma));
    cfg.base_noise_sigma.powi(2) * ks * kp * kp
}

/// Healthy level-0 stack for `stack_id`.
pub fn generate_background(cfg: &GenConfig, stack_id: u64) -> Result<Stack> {
    cfg.validate()?;
    let mut voxels = if cfg.base_noise_sigma == 0.0 {
        vec![0.0; cfg.dims.len()]
    } else {
        let mut rng = rng::stream(cfg.master_seed, stack_id, "background");
        filtered_noise(
            cfg.dims,
            cfg.base_noise_sigma,
            cfg.spatial_kernel_sigma,
            cfg.temporal_kernel_sigma,
            &mut rng,
        )
    };
    let mean = voxels.iter().sum::<f64>() / voxels.len() as f64;
    voxels.iter_mut().for_each(|v| *v += MID_GRAY - mean);
    Ok(Stack {
        stack_id,
        dims: cfg.dims,
        label: Label::Healthy,
        complexity_level: 0,
        seed: cfg.stack_seed(stack_id),
        stage: Stage::PreHvs,
        voxels,
    })
}

/// Add the complexity noise field for `level` and tag the stack with it.
pub fn add_complexity_noise(mut stack: Stack, level: u8, cfg: &GenConfig) -> Result<Stack> {
    cfg.validate()?;
    if level as usize >= NUM_LEVELS {
        return Err(Error::Config(format!("complexity level {level} not in 0..=4")));
    }
    if stack.dims != cfg.dims {
        return Err(Error::DimensionMismatch(format!(
            "stack {:?} vs config {:?}",
            stack.dims, cfg.dims
        )));
    }
    let amplitude = cfg.complexity_amplitudes[level as usize];
    if amplitude > 0.0 {
        let tag = format!("complexity/{level}");
        let mut rng = rng::stream(cfg.master_seed, stack.stack_id, &tag);
        let noise = filtered_noise(
            cfg.dims,
            amplitude,
            cfg.spatial_kernel_sigma,
            cfg.complexity_temporal_sigma,
            &mut rng,
        );
        stack.voxels.iter_mut().zip(noise).for_each(|(v, n)| *v += n);
    }
    stack.complexity_level = level;
    Ok(stack)
}

/// Pixels `(row, col)` within `radius` of the spatial centre.
pub fn disk_pixels(dims: Dims, radius: f64) -> Vec<(usize, usize)> {
    let (cy, cx) = (dims.rows as isize / 2, dims.cols as isize / 2);
    let r = radius.ceil() as isize;
    let r2 = radius * radius;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let (y, x) = (cy + dy, cx + dx);
            if ((dy * dy + dx * dx) as f64) <= r2
                && (0..dims.rows as isize).contains(&y)
                && (0..dims.cols as isize).contains(&x)
            {
                out.push((y as usize, x as usize));
            }
        }
    }
    out
}

/// Add the lesion disk to slice 16 and relabel the stack.
pub fn insert_lesion(mut stack: Stack, cfg: &GenConfig) -> Result<Stack> {
    if stack.label != Label::Healthy {
        return Err(Error::Data(format!(
            "stack {} already carries a lesion",
            stack.stack_id
        )));
    }
    let d = stack.dims;
    let r = cfg.lesion_radius.ceil() as usize;
    let (cy, cx) = (d.rows / 2, d.cols / 2);
    if d.slices < LESION_SLICE || cy < r || cx < r || cy + r >= d.rows || cx + r >= d.cols {
        return Err(Error::Config(format!(
            "lesion of radius {} on slice {LESION_SLICE} does not fit in {d:?}",
            cfg.lesion_radius
        )));
    }
    let s = LESION_SLICE - 1;
    for (y, x) in disk_pixels(d, cfg.lesion_radius) {
        stack.voxels[d.index(s, y, x)] += cfg.lesion_amplitude;
    }
    stack.label = Label::Lesion;
    Ok(stack)
}

/// Full generation of one stack, quantized to on-disk precision.
pub fn generate_stack(cfg: &GenConfig, stack_id: u64, label: Label, level: u8) -> Result<Stack> {
    let stack = generate_background(cfg, stack_id)?;
    let stack = add_complexity_noise(stack, level, cfg)?;
    let stack = match label {
        Label::Healthy => stack,
        Label::Lesion => insert_lesion(stack, cfg)?,
    };
    Ok(stack.quantize())
}

/// One entry of a dataset plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedStack {
    pub stack_id: u64,
    pub label: Label,
    pub level: u8,
}

/// `n_per_cell` stacks for every (level × label) cell, ids assigned from 1
/// in level-major, healthy-first order.
pub fn plan_dataset(n_per_cell: usize, levels: &[u8]) -> Result<Vec<PlannedStack>> {
    if n_per_cell == 0 {
        return Err(Error::Config("n_per_cell must be at least 1".into()));
    }
    if levels.is_empty() {
        return Err(Error::Config("at least one complexity level required".into()));
    }
    let mut levels = levels.to_vec();
    levels.sort_unstable();
    levels.dedup();
    if let Some(l) = levels.iter().find(|&&l| l as usize >= NUM_LEVELS) {
        return Err(Error::Config(format!("complexity level {l} not in 0..=4")));
    }
    let mut out = Vec::with_capacity(n_per_cell * 2 * levels.len());
    let mut id = 1u64;
    for &level in &levels {
        for label in [Label::Healthy, Label::Lesion] {
            for _ in 0..n_per_cell {
                out.push(PlannedStack {
                    stack_id: id,
                    label,
                    level,
                });
                id += 1;
            }
        }
    }
    Ok(out)
}
