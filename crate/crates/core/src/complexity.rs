//! Hotelling discriminant used to measure feature-set power and to
//! estimate background complexity.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureRow;
use crate::linalg::{cholesky_solve, covariance, mean};
use crate::roc::wilcoxon_auc;

/// Relative ridge added to the pooled covariance: `λ = RIDGE_SCALE · trace / n`.
pub const RIDGE_SCALE: f64 = 1e-6;

/// One scalar feature of a [`FeatureRow`]. Vector indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureRef {
    F(u8),
    B1,
    B2,
    B3(usize),
    B4(usize),
}

impl FeatureRef {
    pub fn value(&self, row: &FeatureRow) -> Result<f64> {
        let c = &row.complexity;
        let pick = |v: &[f64], i: usize| {
            v.get(i.wrapping_sub(1)).copied().ok_or_else(|| {
                Error::Data(format!("{self} out of range for stack {}", row.stack_id))
            })
        };
        match *self {
            FeatureRef::F(j) => row
                .lesion
                .as_array()
                .get((j as usize).wrapping_sub(1))
                .copied()
                .ok_or_else(|| Error::Data(format!("no lesion feature {self}"))),
            FeatureRef::B1 => Ok(c.b1),
            FeatureRef::B2 => Ok(c.b2),
            FeatureRef::B3(i) => pick(&c.b3, i),
            FeatureRef::B4(i) => pick(&c.b4, i),
        }
    }
}

impl fmt::Display for FeatureRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureRef::F(j) => write!(f, "f{j}"),
            FeatureRef::B1 => write!(f, "b1"),
            FeatureRef::B2 => write!(f, "b2"),
            FeatureRef::B3(i) => write!(f, "b3[{i}]"),
            FeatureRef::B4(i) => write!(f, "b4[{i}]"),
        }
    }
}

impl FromStr for FeatureRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Data(format!("unknown feature name {s:?}"));
        match s {
            "f1" => return Ok(FeatureRef::F(1)),
            "f2" => return Ok(FeatureRef::F(2)),
            "f3" => return Ok(FeatureRef::F(3)),
            "b1" => return Ok(FeatureRef::B1),
            "b2" => return Ok(FeatureRef::B2),
            _ => {}
        }
        let (head, rest) = s.split_once('[').ok_or_else(bad)?;
        let idx: usize = rest.strip_suffix(']').ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if idx == 0 {
            return Err(bad());
        }
        match head {
            "b3" => Ok(FeatureRef::B3(idx)),
            "b4" => Ok(FeatureRef::B4(idx)),
            _ => Err(bad()),
        }
    }
}

/// An ordered list of scalar features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSet(pub Vec<FeatureRef>);

impl FeatureSet {
    pub fn lesion_cues() -> Self {
        Self((1..=3).map(FeatureRef::F).collect())
    }

    pub fn b1() -> Self {
        Self(vec![FeatureRef::B1])
    }

    pub fn b2() -> Self {
        Self(vec![FeatureRef::B2])
    }

    pub fn b3(pairs: usize) -> Self {
        Self((1..=pairs).map(FeatureRef::B3).collect())
    }

    pub fn b4(pairs: usize) -> Self {
        Self((1..=pairs).map(FeatureRef::B4).collect())
    }

    /// Parse a named set: `f`, `b1`, `b2`, `b3`, `b4`, or a comma-separated
    /// list of scalar names such as `b3[2],b3[3]`.
    pub fn parse(name: &str, pairs: usize) -> Result<Self> {
        match name {
            "f" | "f123" => Ok(Self::lesion_cues()),
            "b1" => Ok(Self::b1()),
            "b2" => Ok(Self::b2()),
            "b3" => Ok(Self::b3(pairs)),
            "b4" => Ok(Self::b4(pairs)),
            list => Self::from_names(list.split(',').map(str::trim)),
        }
    }

    pub fn from_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let refs = names.into_iter().map(str::parse).collect::<Result<Vec<_>>>()?;
        if refs.is_empty() {
            return Err(Error::Data("empty feature set".into()));
        }
        Ok(Self(refs))
    }

    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(ToString::to_string).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Restrict to the given 1-based positions.
    pub fn subset(&self, positions: &[usize]) -> Result<Self> {
        positions
            .iter()
            .map(|&p| {
                self.0
                    .get(p.wrapping_sub(1))
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("position {p} out of 1..={}", self.len())))
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn extract(&self, row: &FeatureRow) -> Result<Vec<f64>> {
        self.0.iter().map(|f| f.value(row)).collect()
    }
}

/// Trained linear discriminant with complexity calibration anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotellingModel {
    pub w: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub ridge: f64,
    /// Median training score of class 0 (simple background).
    pub calib_lo: f64,
    /// Median training score of class 1 (complex background).
    pub calib_hi: f64,
    pub feature_spec: Vec<String>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn check_class(samples: &[Vec<f64>], n: usize, which: &str) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "class {which} has {} samples, need at least 2",
            samples.len()
        )));
    }
    for s in samples {
        if s.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "feature vector of length {} in a {n}-feature set",
                s.len()
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature in class {which}")));
        }
    }
    Ok(())
}

/// Train `w = (Σ0 + Σ1 + λI)⁻¹ (μ1 − μ0)`; a single feature gets `w = 1`.
pub fn train_hotelling(
    class0: &[Vec<f64>],
    class1: &[Vec<f64>],
    feature_spec: Vec<String>,
) -> Result<HotellingModel> {
    let n = class0
        .first()
        .or(class1.first())
        .map(Vec::len)
        .ok_or_else(|| Error::InsufficientData("no training samples".into()))?;
    if n == 0 {
        return Err(Error::InsufficientData("zero-length feature vectors".into()));
    }
    check_class(class0, n, "0")?;
    check_class(class1, n, "1")?;
    if !feature_spec.is_empty() && feature_spec.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} feature names for {n} features",
            feature_spec.len()
        )));
    }

    let mu0 = mean(class0);
    let mu1 = mean(class1);
    let (w, ridge) = if n == 1 {
        (vec![1.0], 0.0)
    } else {
        let mut pooled = covariance(class0, &mu0);
        let c1 = covariance(class1, &mu1);
        pooled.data.iter_mut().zip(&c1.data).for_each(|(a, b)| *a += b);
        let ridge = RIDGE_SCALE * pooled.trace() / n as f64;
        for i in 0..n {
            *pooled.get_mut(i, i) += ridge;
        }
        let diff: Vec<f64> = mu1.iter().zip(&mu0).map(|(a, b)| a - b).collect();
        (cholesky_solve(&pooled, &diff)?, ridge)
    };

    let dot = |f: &Vec<f64>| f.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    let calib_lo = median(&mut class0.iter().map(dot).collect::<Vec<_>>());
    let calib_hi = median(&mut class1.iter().map(dot).collect::<Vec<_>>());
    Ok(HotellingModel {
        w,
        mu0,
        mu1,
        ridge,
        calib_lo,
        calib_hi,
        feature_spec,
    })
}

impl HotellingModel {
    pub fn n_features(&self) -> usize {
        self.w.len()
    }

    pub fn feature_set(&self) -> Result<FeatureSet> {
        FeatureSet::from_names(self.feature_spec.iter().map(String::as_str))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// `wᵀF`.
pub fn score(model: &HotellingModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.w.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} features for a {}-weight model",
            features.len(),
            model.w.len()
        )));
    }
    Ok(model.w.iter().zip(features).map(|(a, b)| a * b).sum())
}

/// Power of a score separation: `max(AUC, 1 − AUC)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Power {
    pub auc: f64,
    pub raw_auc: f64,
    pub swapped: bool,
}

pub fn power_from_auc(raw_auc: f64) -> Power {
    let swapped = raw_auc < 0.5;
    Power {
        auc: if swapped { 1.0 - raw_auc } else { raw_auc },
        raw_auc,
        swapped,
    }
}

pub fn feature_power(scores0: &[f64], scores1: &[f64]) -> Result<Power> {
    Ok(power_from_auc(wilcoxon_auc(scores1, scores0)?))
}

/// 1-based positions of the `k` largest-magnitude weights, in ascending order.
/// Ties go to the lower position.
pub fn select_top_k(model: &HotellingModel, k: usize) -> Result<Vec<usize>> {
    let n = model.w.len();
    if k == 0 || k > n {
        return Err(Error::Validation(format!("k = {k} outside 1..={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| model.w[b].abs().total_cmp(&model.w[a].abs()).then(a.cmp(&b)));
    let mut top: Vec<usize> = order[..k].iter().map(|i| i + 1).collect();
    top.sort_unstable();
    Ok(top)
}

/// `clamp((wᵀF − lo) / (hi − lo), 0, 1)`.
pub fn normalized_complexity(model: &HotellingModel, features: &[f64]) -> Result<f64> {
    let span = model.calib_hi - model.calib_lo;
    if span == 0.0 || !span.is_finite() {
        return Err(Error::DegenerateCalibration(model.calib_lo));
    }
    let s = score(model, features)?;
    Ok(((s - model.calib_lo) / span).clamp(0.0, 1.0))
}

/// One row of the coefficient export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub index: usize,
    pub feature: String,
    pub weight: f64,
}

pub fn export_coefficients(model: &HotellingModel) -> Vec<Coefficient> {
    model
        .w
        .iter()
        .enumerate()
        .map(|(i, &weight)| Coefficient {
            index: i + 1,
            feature: model.feature_spec.get(i).cloned().unwrap_or_default(),
            weight,
        })
        .collect()
}

pub fn write_coefficients_csv<W: Write>(rows: &[Coefficient], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<coefficients>", e))?;
    Ok(())
}

pub fn read_coefficients_csv<R: std::io::Read>(input: R) -> Result<Vec<Coefficient>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Which two classes a discriminant separates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "task")]
pub enum Task {
    /// Class 0 = `simple` level, class 1 = `complex` level.
    Complexity { simple: u8, complex: u8 },
    /// Class 0 = healthy, class 1 = lesion (all levels pooled).
    Lesion,
}

impl Task {
    /// Class of a row, or `None` when the row takes no part in the task.
    pub fn class_of(&self, row: &FeatureRow) -> Option<bool> {
        match *self {
            Task::Complexity { simple, complex } => {
                if row.level == simple {
                    Some(false)
                } else if row.level == complex {
                    Some(true)
                } else {
                    None
                }
            }
            Task::Lesion => Some(row.label.is_lesion()),
        }
    }
}

/// Feature vectors of class 0 and class 1.
pub type ClassSamples = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Split rows into (class 0, class 1) feature vectors.
pub fn split_classes<'a>(
    rows: impl IntoIterator<Item = &'a FeatureRow>,
    set: &FeatureSet,
    task: Task,
) -> Result<ClassSamples> {
    let (mut c0, mut c1) = (Vec::new(), Vec::new());
    for row in rows {
        match task.class_of(row) {
            Some(false) => c0.push(set.extract(row)?),
            Some(true) => c1.push(set.extract(row)?),
            None => {}
        }
    }
    Ok((c0, c1))
}

pub fn train_on_rows<'a>(
    rows: impl IntoIterator<Item = &'a FeatureRow>,
    set: &FeatureSet,
    task: Task,
) -> Result<HotellingModel> {
    let (c0, c1) = split_classes(rows, set, task)?;
    train_hotelling(&c0, &c1, set.names())
}

/// Power of `model` on `rows`.
pub fn evaluate_power<'a>(
    model: &HotellingModel,
    rows: impl IntoIterator<Item = &'a FeatureRow>,
    task: Task,
) -> Result<Power> {
    let set = model.feature_set()?;
    let (c0, c1) = split_classes(rows, &set, task)?;
    let s0 = c0.iter().map(|f| score(model, f)).collect::<Result<Vec<_>>>()?;
    let s1 = c1.iter().map(|f| score(model, f)).collect::<Result<Vec<_>>>()?;
    feature_power(&s0, &s1)
}
