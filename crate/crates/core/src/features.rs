//! Lesion cues (f1..f3) and background-complexity features (b1..b4).
//!
//! All regions are centred on the stack's spatial centre pixel. Membership
//! is by Euclidean distance on the integer pixel grid: a disk holds pixels
//! with `d <= r`, a ring those with `r_in <= d <= r_out`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{filter2_valid, gaussian_kernel_with_radius};
use crate::stackgen::{Label, Stack, LESION_SLICE};

/// Dynamic range assumed by PSNR and SSIM.
pub const DYNAMIC_RANGE: f64 = 255.0;
/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW_RADIUS: usize = 5;
const SSIM_WINDOW_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Borrowed row-major 2-D image.
#[derive(Debug, Clone, Copy)]
pub struct Image<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
}

impl<'a> Image<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {rows}x{cols} image",
                data.len()
            )));
        }
        Ok(Self { data, rows, cols })
    }

    /// Slice `index` (1-based) of a stack.
    pub fn of_slice(stack: &'a Stack, index: usize) -> Self {
        Self {
            data: stack.slice(index),
            rows: stack.dims.rows,
            cols: stack.dims.cols,
        }
    }

    fn same_shape(&self, other: &Image<'_>) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

/// A centred region of interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Region {
    Disk { radius: f64 },
    Ring { inner: f64, outer: f64 },
}

impl Region {
    fn contains(&self, d2: f64) -> bool {
        match *self {
            Region::Disk { radius } => d2 <= radius * radius,
            Region::Ring { inner, outer } => inner * inner <= d2 && d2 <= outer * outer,
        }
    }

    fn extent(&self) -> f64 {
        match *self {
            Region::Disk { radius } => radius,
            Region::Ring { outer, .. } => outer,
        }
    }

    /// Pixel coordinates of the region centred in a `rows × cols` image.
    pub fn pixels(&self, rows: usize, cols: usize) -> Result<Vec<(usize, usize)>> {
        let (cy, cx) = ((rows / 2) as isize, (cols / 2) as isize);
        let r = self.extent().ceil() as isize;
        if r < 0 || cy - r < 0 || cx - r < 0 || cy + r >= rows as isize || cx + r >= cols as isize {
            return Err(Error::Geometry(format!(
                "{self:?} does not fit in a {rows}x{cols} slice"
            )));
        }
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if self.contains((dy * dy + dx * dx) as f64) {
                    out.push(((cy + dy) as usize, (cx + dx) as usize));
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Geometry(format!("{self:?} contains no pixels")));
        }
        Ok(out)
    }
}

/// Measurement geometry for the lesion cues and the lesion-ROI energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiGeometry {
    pub lesion_disk: Region,
    pub surround_ring: Region,
    pub neighbor_disk: Region,
    /// Scope of the lesion-ROI energy (lesion plus surround footprint).
    pub energy_disk: Region,
}

impl Default for RoiGeometry {
    fn default() -> Self {
        Self {
            lesion_disk: Region::Disk { radius: 3.0 },
            surround_ring: Region::Ring {
                inner: 5.0,
                outer: 7.0,
            },
            neighbor_disk: Region::Disk { radius: 4.0 },
            energy_disk: Region::Disk { radius: 7.0 },
        }
    }
}

pub fn region_mean(img: Image<'_>, region: Region) -> Result<f64> {
    let px = region.pixels(img.rows, img.cols)?;
    let sum: f64 = px.iter().map(|&(y, x)| img.data[y * img.cols + x]).sum();
    Ok(sum / px.len() as f64)
}

/// Brightness-comparison cues for the lesion location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionFeatures {
    /// Lesion disk vs. its surround ring, same slice.
    pub f1: f64,
    /// Lesion disk vs. the disk on the previous slice.
    pub f2: f64,
    /// Lesion disk vs. the disk on the next slice.
    pub f3: f64,
}

impl LesionFeatures {
    pub fn as_array(&self) -> [f64; 3] {
        [self.f1, self.f2, self.f3]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self {
            f1: v[0],
            f2: v[1],
            f3: v[2],
        }
    }
}

pub fn compute_lesion_features(stack: &Stack) -> Result<LesionFeatures> {
    compute_lesion_features_with(stack, &RoiGeometry::default())
}

pub fn compute_lesion_features_with(stack: &Stack, geo: &RoiGeometry) -> Result<LesionFeatures> {
    if stack.dims.slices < LESION_SLICE + 1 {
        return Err(Error::Geometry(format!(
            "lesion cues need at least {} slices, stack has {}",
            LESION_SLICE + 1,
            stack.dims.slices
        )));
    }
    let lesion = region_mean(Image::of_slice(stack, LESION_SLICE), geo.lesion_disk)?;
    let surround = region_mean(Image::of_slice(stack, LESION_SLICE), geo.surround_ring)?;
    let prev = region_mean(Image::of_slice(stack, LESION_SLICE - 1), geo.neighbor_disk)?;
    let next = region_mean(Image::of_slice(stack, LESION_SLICE + 1), geo.neighbor_disk)?;
    Ok(LesionFeatures {
        f1: lesion - surround,
        f2: lesion - prev,
        f3: lesion - next,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyScope {
    LesionRoi,
    WholeSlice16,
}

fn local_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    let mean = sum / n as f64;
    values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64
}

/// Mean squared deviation from the regional mean.
pub fn region_energy(stack: &Stack, scope: EnergyScope) -> Result<f64> {
    if stack.dims.slices < LESION_SLICE {
        return Err(Error::Geometry(format!(
            "stack has {} slices, energy needs slice {LESION_SLICE}",
            stack.dims.slices
        )));
    }
    let img = Image::of_slice(stack, LESION_SLICE);
    match scope {
        EnergyScope::WholeSlice16 => Ok(local_variance(img.data.iter().copied())),
        EnergyScope::LesionRoi => {
            let px = RoiGeometry::default().energy_disk.pixels(img.rows, img.cols)?;
            Ok(local_variance(px.iter().map(|&(y, x)| img.data[y * img.cols + x])))
        }
    }
}

fn mse(x: Image<'_>, y: Image<'_>) -> Result<f64> {
    x.same_shape(&y)?;
    let n = x.data.len() as f64;
    Ok(x.data.iter().zip(y.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
}

/// PSNR in dB with the fixed 255 range maximum, capped at 100 dB and
/// floored at 0 dB.
pub fn psnr(x: Image<'_>, y: Image<'_>) -> Result<f64> {
    let mse = mse(x, y)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    let db = 20.0 * DYNAMIC_RANGE.log10() - 10.0 * mse.log10();
    Ok(db.clamp(0.0, PSNR_CAP_DB))
}

/// Mean structural similarity over all valid 11×11 Gaussian-window positions.
pub fn ssim(x: Image<'_>, y: Image<'_>) -> Result<f64> {
    x.same_shape(&y)?;
    let w = 2 * SSIM_WINDOW_RADIUS + 1;
    if x.rows < w || x.cols < w {
        return Err(Error::Geometry(format!(
            "SSIM needs at least {w}x{w} pixels, got {}x{}",
            x.rows, x.cols
        )));
    }
    let c1 = (SSIM_K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (SSIM_K2 * DYNAMIC_RANGE).powi(2);
    let k = gaussian_kernel_with_radius(SSIM_WINDOW_SIGMA, SSIM_WINDOW_RADIUS);
    let (rows, cols) = (x.rows, x.cols);
    let filt = |img: &[f64]| filter2_valid(img, rows, cols, &k).0;

    let xx: Vec<f64> = x.data.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.data.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.data.iter().zip(y.data).map(|(a, b)| a * b).collect();
    let (mx, my) = (filt(x.data), filt(y.data));
    let (exx, eyy, exy) = (filt(&xx), filt(&yy), filt(&xy));

    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cxy = exy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok((total / n as f64).clamp(-1.0, 1.0))
}

/// Background-complexity features of one stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityFeatures {
    pub b1: f64,
    pub b2: f64,
    /// PSNR between consecutive slices, `b3[i]` comparing slices i+1 and i+2 (1-based).
    pub b3: Vec<f64>,
    /// SSIM between consecutive slices.
    pub b4: Vec<f64>,
}

pub fn compute_complexity_features(stack: &Stack) -> Result<ComplexityFeatures> {
    let b1 = region_energy(stack, EnergyScope::LesionRoi)?;
    let b2 = region_energy(stack, EnergyScope::WholeSlice16)?;
    let pairs = 1..stack.dims.slices;
    let b3 = pairs
        .clone()
        .map(|i| psnr(Image::of_slice(stack, i), Image::of_slice(stack, i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let b4 = pairs
        .map(|i| ssim(Image::of_slice(stack, i), Image::of_slice(stack, i + 1)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ComplexityFeatures { b1, b2, b3, b4 })
}

/// Every feature of one stack, as written to `features.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub stack_id: u64,
    pub label: Label,
    pub level: u8,
    pub lesion: LesionFeatures,
    pub complexity: ComplexityFeatures,
}

/// Normalize the stack to display units, then extract all features.
pub fn extract_features(stack: &Stack) -> Result<FeatureRow> {
    let normalized = stack.normalized();
    Ok(FeatureRow {
        stack_id: stack.stack_id,
        label: stack.label,
        level: stack.complexity_level,
        lesion: compute_lesion_features(&normalized)?,
        complexity: compute_complexity_features(&normalized)?,
    })
}
