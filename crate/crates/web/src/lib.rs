//! In-browser playground: render synthetic slices, inspect the inter-slice
//! PSNR profile, and watch min-rank fusion degrade under feature noise.
//!
//! The `*_impl` functions hold the logic and are what the native tests call;
//! the exported wrappers only convert errors for JavaScript.

use anthro_observer::decision::{min_rank_combine, DecisionConfig, EstimationMode};
use anthro_observer::features::{compute_complexity_features, extract_features, FeatureRow};
use anthro_observer::hvs::{apply_hvs, HvsConfig};
use anthro_observer::pipeline::evaluate_rows;
use anthro_observer::roc::wilcoxon_auc;
use anthro_observer::stackgen::{generate_stack, GenConfig, Label, Stack};
use anthro_observer::Result;
use wasm_bindgen::prelude::*;

fn js(e: anthro_observer::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn build(seed: u32, stack_id: u32, level: u8, lesion: bool, hvs: bool) -> Result<Stack> {
    let cfg = GenConfig {
        master_seed: u64::from(seed),
        ..GenConfig::default()
    };
    let label = if lesion { Label::Lesion } else { Label::Healthy };
    let stack = generate_stack(&cfg, u64::from(stack_id), label, level)?;
    if hvs {
        apply_hvs(&stack, &HvsConfig::default())
    } else {
        Ok(stack)
    }
}

/// RGBA pixels of slice `slice` (1-based), ready for `ImageData`.
pub fn render_slice_impl(seed: u32, stack_id: u32, level: u8, lesion: bool, hvs: bool, slice: usize) -> Result<Vec<u8>> {
    let stack = build(seed, stack_id, level, lesion, hvs)?;
    if !(1..=stack.dims.slices).contains(&slice) {
        return Err(anthro_observer::Error::Validation(format!(
            "slice {slice} outside 1..={}",
            stack.dims.slices
        )));
    }
    let norm = stack.normalization();
    Ok(stack
        .slice(slice)
        .iter()
        .flat_map(|&v| {
            let g = norm.to_u8(v);
            [g, g, g, 255]
        })
        .collect())
}

/// PSNR (dB) between consecutive slices of the display-normalized stack.
pub fn psnr_profile_impl(seed: u32, stack_id: u32, level: u8, lesion: bool, hvs: bool) -> Result<Vec<f64>> {
    let stack = build(seed, stack_id, level, lesion, hvs)?;
    Ok(compute_complexity_features(&stack.normalized())?.b3)
}

pub fn min_rank_impl(r1: &[u32], r2: &[u32], r3: &[u32]) -> Result<Vec<u32>> {
    let cast = |v: &[u32]| v.iter().map(|&x| x as usize).collect::<Vec<_>>();
    Ok(min_rank_combine(&cast(r1), &cast(r2), &cast(r3))?
        .into_iter()
        .map(|x| x as u32)
        .collect())
}

#[wasm_bindgen]
pub fn render_slice(seed: u32, stack_id: u32, level: u8, lesion: bool, hvs: bool, slice: usize) -> Result<Vec<u8>, JsError> {
    render_slice_impl(seed, stack_id, level, lesion, hvs, slice).map_err(js)
}

#[wasm_bindgen]
pub fn psnr_profile(seed: u32, stack_id: u32, level: u8, lesion: bool, hvs: bool) -> Result<Vec<f64>, JsError> {
    psnr_profile_impl(seed, stack_id, level, lesion, hvs).map_err(js)
}

#[wasm_bindgen]
pub fn min_rank(r1: &[u32], r2: &[u32], r3: &[u32]) -> Result<Vec<u32>, JsError> {
    min_rank_impl(r1, r2, r3).map_err(js)
}

/// Lesion cues (after the HVS stage) of a small simple/complex dataset,
/// extracted once so that the noise gain can be swept interactively.
#[wasm_bindgen]
pub struct CueSet {
    rows: Vec<FeatureRow>,
}

impl CueSet {
    pub fn build(seed: u32, n_per_class: u32) -> Result<CueSet> {
        let cfg = GenConfig {
            master_seed: u64::from(seed),
            ..GenConfig::default()
        };
        let mut rows = Vec::new();
        let mut id = 0;
        for level in [0u8, 4] {
            for label in [Label::Healthy, Label::Lesion] {
                for _ in 0..n_per_class {
                    id += 1;
                    let stack = generate_stack(&cfg, id, label, level)?;
                    rows.push(extract_features(&apply_hvs(&stack, &HvsConfig::default())?)?);
                }
            }
        }
        Ok(CueSet { rows })
    }

    /// Detection AUC at levels 0 and 4 with true complexity and noise gain
    /// `kappa`; `trial` reseeds the feature noise.
    pub fn aucs(&self, kappa: f64, trial: u32) -> Result<[f64; 2]> {
        let dcfg = DecisionConfig {
            kappa,
            estimation_mode: EstimationMode::Ideal,
            ..DecisionConfig::default()
        };
        let scores = evaluate_rows(&self.rows, &self.rows, None, &dcfg, u64::from(trial))?;
        let auc = |level: u8| {
            let pick = |lesion: bool| {
                scores
                    .iter()
                    .filter(|s| s.level == level && s.label.is_lesion() == lesion)
                    .map(|s| s.score as f64)
                    .collect::<Vec<_>>()
            };
            wilcoxon_auc(&pick(true), &pick(false))
        };
        Ok([auc(0)?, auc(4)?])
    }
}

#[wasm_bindgen]
impl CueSet {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, n_per_class: u32) -> Result<CueSet, JsError> {
        CueSet::build(seed, n_per_class).map_err(js)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `[auc_simple, auc_complex]`, averaged over `trials` noise draws.
    pub fn auc_at(&self, kappa: f64, trials: u32) -> Result<Vec<f64>, JsError> {
        let mut sum = [0.0; 2];
        for t in 0..trials.max(1) {
            let a = self.aucs(kappa, t).map_err(js)?;
            sum[0] += a[0];
            sum[1] += a[1];
        }
        let n = f64::from(trials.max(1));
        Ok(vec![sum[0] / n, sum[1] / n])
    }
}
