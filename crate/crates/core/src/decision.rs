//! Confidence-modulated feature noise and minimum-rank fusion of the three
//! lesion sub-decisions.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::complexity::{normalized_complexity, HotellingModel};
use crate::error::{Error, Result};
use crate::features::{FeatureRow, LesionFeatures};
use crate::rng;
use crate::roc::wilcoxon_auc;
use crate::stackgen::{Label, NUM_LEVELS};

/// Source of the per-stack complexity estimate `ĉ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimationMode {
    /// `ĉ = 0`: no background-complexity estimation.
    None,
    /// `ĉ = level / 4` from the generator's ground truth.
    Ideal,
    /// Hotelling estimate from features of the stack before the HVS stage.
    PreHvs,
    /// Hotelling estimate from features of the stack after the HVS stage.
    PostHvs,
}

impl EstimationMode {
    pub const ALL: [EstimationMode; 4] = [
        EstimationMode::PostHvs,
        EstimationMode::PreHvs,
        EstimationMode::Ideal,
        EstimationMode::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimationMode::None => "none",
            EstimationMode::Ideal => "ideal",
            EstimationMode::PreHvs => "pre-hvs",
            EstimationMode::PostHvs => "post-hvs",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, EstimationMode::PreHvs | EstimationMode::PostHvs)
    }
}

impl std::str::FromStr for EstimationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "none" => Ok(EstimationMode::None),
            "ideal" => Ok(EstimationMode::Ideal),
            "pre-hvs" => Ok(EstimationMode::PreHvs),
            "post-hvs" => Ok(EstimationMode::PostHvs),
            other => Err(Error::Config(format!("unknown estimation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionConfig {
    /// Noise gain relative to the per-feature training spread.
    pub kappa: f64,
    pub estimation_mode: EstimationMode,
    /// Threshold estimated `ĉ` at 0.5 into {0, 1}.
    pub binary_complexity: bool,
    pub rng_tag: String,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            kappa: 8.0,
            estimation_mode: EstimationMode::PreHvs,
            binary_complexity: true,
            rng_tag: "decision".into(),
        }
    }
}

impl DecisionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        Ok(())
    }
}

/// Add `N(0, (κ·ĉ·s_j)²)` to each cue. `scale` holds the per-feature spread `s_j`.
pub fn perturb_features(
    lf: &LesionFeatures,
    c_hat: f64,
    kappa: f64,
    scale: [f64; 3],
    rng: &mut impl Rng,
) -> LesionFeatures {
    let mut v = lf.as_array();
    for (f, s) in v.iter_mut().zip(scale) {
        let z: f64 = rng.sample(StandardNormal);
        let sd = kappa * c_hat * s;
        if sd != 0.0 {
            *f += sd * z;
        }
    }
    LesionFeatures::from_array(v)
}

/// Ascending ranks 1..N; equal values are ordered by ascending stack id.
pub fn rank_by_feature(values: &[f64], ids: &[u64]) -> Result<Vec<usize>> {
    if values.len() != ids.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values for {} ids",
            values.len(),
            ids.len()
        )));
    }
    if values.is_empty() {
        return Err(Error::InsufficientData("nothing to rank".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite feature value".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(ids[a].cmp(&ids[b])));
    let mut ranks = vec![0; values.len()];
    for (r, i) in order.into_iter().enumerate() {
        ranks[i] = r + 1;
    }
    Ok(ranks)
}

/// Element-wise minimum of three rankings.
pub fn min_rank_combine(r1: &[usize], r2: &[usize], r3: &[usize]) -> Result<Vec<usize>> {
    if r1.len() != r2.len() || r1.len() != r3.len() {
        return Err(Error::DimensionMismatch(format!(
            "rank vectors of length {}, {}, {}",
            r1.len(),
            r2.len(),
            r3.len()
        )));
    }
    Ok(r1
        .iter()
        .zip(r2)
        .zip(r3)
        .map(|((a, b), c)| *a.min(b).min(c))
        .collect())
}

/// Per-stack outcome of the decision block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackScore {
    pub stack_id: u64,
    pub label: Label,
    pub level: u8,
    pub c_hat: f64,
    pub perturbed: LesionFeatures,
    pub ranks: [usize; 3],
    /// Minimum of the three ranks.
    pub score: usize,
}

/// Sample standard deviation of f1..f3 over `rows`.
pub fn feature_scale<'a>(rows: impl IntoIterator<Item = &'a FeatureRow>) -> Result<[f64; 3]> {
    let values: Vec<[f64; 3]> = rows.into_iter().map(|r| r.lesion.as_array()).collect();
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "feature scale needs at least 2 stacks, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mut out = [0.0; 3];
    for (j, o) in out.iter_mut().enumerate() {
        let m = values.iter().map(|v| v[j]).sum::<f64>() / n;
        *o = (values.iter().map(|v| (v[j] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    }
    Ok(out)
}

/// Complexity estimate for one stack under `mode`.
pub fn estimate_complexity(
    mode: EstimationMode,
    level: u8,
    complexity_row: &FeatureRow,
    model: Option<&HotellingModel>,
    binary: bool,
) -> Result<f64> {
    match mode {
        EstimationMode::None => Ok(0.0),
        EstimationMode::Ideal => Ok(level as f64 / (NUM_LEVELS - 1) as f64),
        EstimationMode::PreHvs | EstimationMode::PostHvs => {
            let model = model.ok_or(Error::MissingModel(mode.as_str()))?;
            let f = model.feature_set()?.extract(complexity_row)?;
            let c = normalized_complexity(model, &f)?;
            Ok(if binary {
                if c >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            } else {
                c
            })
        }
    }
}

/// Run the decision block over one evaluation set.
///
/// `rows` supply the lesion cues; `complexity_rows` (same stacks, same
/// order) supply the estimator's features, so the estimate can come from a
/// different processing stage than the cues. Ranking is joint over the set.
pub fn decide_dataset(
    rows: &[FeatureRow],
    complexity_rows: &[FeatureRow],
    model: Option<&HotellingModel>,
    scale: [f64; 3],
    cfg: &DecisionConfig,
    master_seed: u64,
) -> Result<Vec<StackScore>> {
    cfg.validate()?;
    if rows.len() != complexity_rows.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} cue rows vs {} complexity rows",
            rows.len(),
            complexity_rows.len()
        )));
    }
    if cfg.estimation_mode.needs_model() && model.is_none() {
        return Err(Error::MissingModel(cfg.estimation_mode.as_str()));
    }
    let mut perturbed = Vec::with_capacity(rows.len());
    let mut c_hats = Vec::with_capacity(rows.len());
    for (row, crow) in rows.iter().zip(complexity_rows) {
        if row.stack_id != crow.stack_id {
            return Err(Error::Data(format!(
                "cue row {} paired with complexity row {}",
                row.stack_id, crow.stack_id
            )));
        }
        let c_hat = estimate_complexity(
            cfg.estimation_mode,
            row.level,
            crow,
            model,
            cfg.binary_complexity,
        )?;
        let mut rng = rng::stream(master_seed, row.stack_id, &cfg.rng_tag);
        perturbed.push(perturb_features(&row.lesion, c_hat, cfg.kappa, scale, &mut rng));
        c_hats.push(c_hat);
    }
    let ids: Vec<u64> = rows.iter().map(|r| r.stack_id).collect();
    let column = |j: usize| perturbed.iter().map(|p| p.as_array()[j]).collect::<Vec<_>>();
    let r1 = rank_by_feature(&column(0), &ids)?;
    let r2 = rank_by_feature(&column(1), &ids)?;
    let r3 = rank_by_feature(&column(2), &ids)?;
    let fused = min_rank_combine(&r1, &r2, &r3)?;
    Ok(rows
        .iter()
        .enumerate()
        .map(|(i, row)| StackScore {
            stack_id: row.stack_id,
            label: row.label,
            level: row.level,
            c_hat: c_hats[i],
            perturbed: perturbed[i],
            ranks: [r1[i], r2[i], r3[i]],
            score: fused[i],
        })
        .collect())
}

/// Lesion-vs-healthy scores of a scored set.
pub fn split_scores(scores: &[StackScore]) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for s in scores {
        if s.label.is_lesion() {
            pos.push(s.score as f64);
        } else {
            neg.push(s.score as f64);
        }
    }
    (pos, neg)
}

pub fn detection_auc(scores: &[StackScore]) -> Result<f64> {
    let (pos, neg) = split_scores(scores);
    wilcoxon_auc(&pos, &neg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ComplexityFeatures;

    fn row(id: u64, label: Label, level: u8, f: [f64; 3]) -> FeatureRow {
        FeatureRow {
            stack_id: id,
            label,
            level,
            lesion: LesionFeatures::from_array(f),
            complexity: ComplexityFeatures {
                b1: 0.0,
                b2: 0.0,
                b3: vec![],
                b4: vec![],
            },
        }
    }

    #[test]
    fn zero_noise_cases() {
        let lf = LesionFeatures::from_array([1.0, -2.0, 3.5]);
        let mut rng = rng::stream(1, 1, "t");
        assert_eq!(perturb_features(&lf, 0.0, 8.0, [1.0; 3], &mut rng), lf);
        assert_eq!(perturb_features(&lf, 1.0, 0.0, [1.0; 3], &mut rng), lf);
        assert_ne!(perturb_features(&lf, 1.0, 8.0, [1.0; 3], &mut rng), lf);
    }

    #[test]
    fn ranks_examples() {
        assert_eq!(rank_by_feature(&[10.0, 30.0, 20.0], &[1, 2, 3]).unwrap(), vec![1, 3, 2]);
        assert_eq!(rank_by_feature(&[5.0; 4], &[4, 2, 3, 1]).unwrap(), vec![4, 2, 3, 1]);
        assert!(rank_by_feature(&[f64::INFINITY], &[1]).is_err());
        assert!(rank_by_feature(&[1.0], &[1, 2]).is_err());
    }

    #[test]
    fn min_rank_examples() {
        let id = [1, 2, 3, 4, 5];
        assert_eq!(min_rank_combine(&id, &id, &id).unwrap(), id.to_vec());
        let got = min_rank_combine(&[2, 1, 3, 4, 5], &[2, 3, 1, 4, 5], &[1, 3, 2, 4, 5]).unwrap();
        assert_eq!(got, vec![1, 1, 1, 4, 5]);
        assert!(min_rank_combine(&[1], &[1, 2], &[1]).is_err());
    }

    #[test]
    fn estimator_modes_need_a_model() {
        let rows = vec![row(1, Label::Healthy, 0, [0.0; 3]), row(2, Label::Lesion, 0, [1.0; 3])];
        let cfg = DecisionConfig {
            estimation_mode: EstimationMode::PostHvs,
            ..DecisionConfig::default()
        };
        assert!(matches!(
            decide_dataset(&rows, &rows, None, [1.0; 3], &cfg, 1),
            Err(Error::MissingModel(_))
        ));
    }

    #[test]
    fn none_mode_matches_zero_kappa() {
        let rows: Vec<FeatureRow> = (1..=20)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Lesion } else { Label::Healthy };
                let x = (i * 37 % 11) as f64;
                row(i, label, 4, [x, x * 0.5 - 1.0, 3.0 - x])
            })
            .collect();
        let none = DecisionConfig {
            estimation_mode: EstimationMode::None,
            ..DecisionConfig::default()
        };
        let ideal_k0 = DecisionConfig {
            estimation_mode: EstimationMode::Ideal,
            kappa: 0.0,
            ..DecisionConfig::default()
        };
        let a = decide_dataset(&rows, &rows, None, [1.0; 3], &none, 9).unwrap();
        let b = decide_dataset(&rows, &rows, None, [1.0; 3], &ideal_k0, 9).unwrap();
        let scores = |v: &[StackScore]| v.iter().map(|s| s.score).collect::<Vec<_>>();
        assert_eq!(scores(&a), scores(&b));
        for s in &a {
            assert_eq!(s.score, *s.ranks.iter().min().unwrap());
        }
    }

    #[test]
    fn feature_scale_is_sample_std() {
        let rows = vec![
            row(1, Label::Healthy, 0, [1.0, 0.0, 2.0]),
            row(2, Label::Healthy, 0, [3.0, 0.0, 2.0]),
        ];
        let s = feature_scale(&rows).unwrap();
        assert!((s[0] - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(s[1], 0.0);
        assert!(feature_scale(&rows[..1]).is_err());
    }
}
