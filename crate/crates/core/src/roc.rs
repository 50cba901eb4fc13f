//! Wilcoxon AUC, detectability index, score histograms and the
//! instance-spread confidence summary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::erfinv;

/// Area under the ROC curve from pairwise comparisons, ties credited 0.5.
///
/// Sorts once and sweeps tied blocks, O((P+N) log(P+N)).
pub fn wilcoxon_auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InsufficientData(format!(
            "AUC needs both classes (|pos| = {}, |neg| = {})",
            pos.len(),
            neg.len()
        )));
    }
    if pos.iter().chain(neg).any(|v| v.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&v| (v, true))
        .chain(neg.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Count, for each positive, negatives strictly below plus half the tied ones.
    let mut neg_below = 0usize;
    let mut twice_wins: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut p_block, mut n_block) = (0usize, 0usize);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                p_block += 1;
            } else {
                n_block += 1;
            }
            j += 1;
        }
        twice_wins += (p_block as u128) * (2 * neg_below as u128 + n_block as u128);
        neg_below += n_block;
        i = j;
    }
    Ok(twice_wins as f64 / (2.0 * pos.len() as f64 * neg.len() as f64))
}

/// Detectability index; infinite when the AUC is 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DPrime {
    /// `±∞` (serialized as `"inf"` / `"-inf"`) when `saturated`.
    #[serde(with = "extended_f64")]
    pub value: f64,
    pub saturated: bool,
}

/// Serde adapter for floats that may be infinite or NaN: finite values stay
/// JSON numbers, the rest become the strings `inf`, `-inf`, `nan`.
pub mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => other
                    .parse()
                    .map_err(|_| de::Error::custom(format!("not a number: {other:?}"))),
            },
        }
    }
}

/// `d' = 2·erfinv(2·AUC − 1)`.
pub fn dprime(auc: f64) -> Result<DPrime> {
    if !(0.0..=1.0).contains(&auc) {
        return Err(Error::Validation(format!("AUC {auc} outside [0, 1]")));
    }
    let value = 2.0 * erfinv(2.0 * auc - 1.0);
    Ok(DPrime {
        value,
        saturated: value.is_infinite(),
    })
}

/// Histogram of scores after affine scaling of `range` onto [0, 3].
/// Values outside the range fall into the end bins.
pub fn score_histogram(scores: &[f64], n_bins: usize, range: (f64, f64)) -> Result<Vec<usize>> {
    if n_bins < 2 {
        return Err(Error::Validation(format!("need at least 2 bins, got {n_bins}")));
    }
    let (lo, hi) = range;
    if !lo.is_finite() || !hi.is_finite() || hi <= lo {
        return Err(Error::Validation(format!("degenerate histogram range {range:?}")));
    }
    let mut counts = vec![0usize; n_bins];
    for &s in scores {
        let scaled = scale_to_reader_axis(s, range);
        let bin = ((scaled / 3.0) * n_bins as f64).floor();
        let bin = (bin.max(0.0) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    Ok(counts)
}

/// Affine map of `range` onto the 0..3 reader score axis.
pub fn scale_to_reader_axis(score: f64, range: (f64, f64)) -> f64 {
    3.0 * (score - range.0) / (range.1 - range.0)
}

/// Mean and `2·std` half-width over estimator instances (sample std).
pub fn instance_ci(aucs: &[f64]) -> Result<(f64, f64)> {
    if aucs.is_empty() {
        return Err(Error::InsufficientData("no estimator instances".into()));
    }
    if aucs.iter().all(|&a| a == aucs[0]) {
        return Ok((aucs[0], 0.0));
    }
    let n = aucs.len() as f64;
    let mean = aucs.iter().sum::<f64>() / n;
    let var = aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, 2.0 * var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub auc: f64,
    pub dprime: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ci_halfwidth: Option<f64>,
}

impl RocResult {
    pub fn from_scores(pos: &[f64], neg: &[f64]) -> Result<Self> {
        let auc = wilcoxon_auc(pos, neg)?;
        Ok(Self {
            auc,
            dprime: dprime(auc)?.value,
            n_pos: pos.len(),
            n_neg: neg.len(),
            ci_halfwidth: None,
        })
    }

    /// Summary over estimator instances: mean AUC with the `±2σ` half-width.
    pub fn from_instances(aucs: &[f64], n_pos: usize, n_neg: usize) -> Result<Self> {
        let (mean, half) = instance_ci(aucs)?;
        Ok(Self {
            auc: mean,
            dprime: dprime(mean)?.value,
            n_pos,
            n_neg,
            ci_halfwidth: Some(half),
        })
    }
}
