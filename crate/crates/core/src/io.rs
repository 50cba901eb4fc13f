//! On-disk formats: raw stack files with JSON sidecars, the dataset
//! manifest, and the feature / score CSV tables.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decision::StackScore;
use crate::error::{Error, Result};
use crate::features::{ComplexityFeatures, FeatureRow, LesionFeatures};
use crate::filter::Dims;
use crate::par;
use crate::stackgen::{generate_stack, plan_dataset, GenConfig, Label, Normalization, Stack, Stage};

pub const MANIFEST_FILE: &str = "manifest.json";

/// JSON sidecar describing one raw stack file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub stack_id: u64,
    pub dims: Dims,
    pub label: Label,
    pub complexity_level: u8,
    pub seed: u64,
    pub normalization: Normalization,
    #[serde(default)]
    pub stage: Stage,
    /// Voxel file, relative to the dataset directory.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenConfig,
    pub n_per_cell: usize,
    pub levels: Vec<u8>,
    pub stacks: Vec<Sidecar>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Little-endian f32 voxels in slice-major order.
pub fn encode_voxels(stack: &Stack) -> Vec<u8> {
    let mut out = Vec::with_capacity(stack.voxels.len() * 4);
    for &v in &stack.voxels {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_voxels(bytes: &[u8], dims: Dims) -> Result<Vec<f64>> {
    if bytes.len() != dims.len() * 4 {
        return Err(Error::Data(format!(
            "{} bytes for a {dims:?} stack ({} expected)",
            bytes.len(),
            dims.len() * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn sidecar_for(stack: &Stack, file: String) -> Sidecar {
    Sidecar {
        stack_id: stack.stack_id,
        dims: stack.dims,
        label: stack.label,
        complexity_level: stack.complexity_level,
        seed: stack.seed,
        normalization: stack.normalization(),
        stage: stack.stage,
        file,
    }
}

/// Write `<dir>/stacks/<id>.f32` plus its `.json` sidecar.
pub fn write_stack(dir: &Path, stack: &Stack) -> Result<Sidecar> {
    let sub = dir.join("stacks");
    fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    let rel = format!("stacks/{:06}.f32", stack.stack_id);
    let path = dir.join(&rel);
    fs::write(&path, encode_voxels(stack)).map_err(|e| Error::io(&path, e))?;
    let sidecar = sidecar_for(stack, rel);
    write_json(&path.with_extension("json"), &sidecar)?;
    Ok(sidecar)
}

pub fn read_stack(dir: &Path, sidecar: &Sidecar) -> Result<Stack> {
    let path = dir.join(&sidecar.file);
    let mut bytes = Vec::new();
    fs::File::open(&path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(&path, e))?;
    Ok(Stack {
        stack_id: sidecar.stack_id,
        dims: sidecar.dims,
        label: sidecar.label,
        complexity_level: sidecar.complexity_level,
        seed: sidecar.seed,
        stage: sidecar.stage,
        voxels: decode_voxels(&bytes, sidecar.dims)?,
    })
}

/// Generate `n_per_cell` stacks per (label × level) cell into `out_dir` and
/// write the manifest. Output depends only on the arguments.
pub fn generate_dataset(cfg: &GenConfig, n_per_cell: usize, levels: &[u8], out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let plan = plan_dataset(n_per_cell, levels)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stacks = par::try_map(&plan, |p| {
        let stack = generate_stack(cfg, p.stack_id, p.label, p.level)?;
        write_stack(out_dir, &stack)
    })?;
    let mut levels = levels.to_vec();
    levels.sort_unstable();
    levels.dedup();
    let manifest = Manifest {
        config: cfg.clone(),
        n_per_cell,
        levels,
        stacks,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Directory holding a manifest path (or the path itself if it is a directory).
pub fn dataset_dir(manifest_path: &Path) -> PathBuf {
    if manifest_path.is_dir() {
        manifest_path.to_path_buf()
    } else {
        manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

pub fn feature_header(pairs: usize) -> Vec<String> {
    let mut h: Vec<String> = ["stack_id", "label", "level", "f1", "f2", "f3", "b1", "b2"]
        .iter()
        .map(ToString::to_string)
        .collect();
    h.extend((1..=pairs).map(|i| format!("b3_{i}")));
    h.extend((1..=pairs).map(|i| format!("b4_{i}")));
    h
}

/// One row per stack: `stack_id, label, level, f1..f3, b1, b2, b3_1.., b4_1..`.
pub fn write_features_csv<W: Write>(rows: &[FeatureRow], out: W) -> Result<()> {
    let pairs = rows.first().map_or(0, |r| r.complexity.b3.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(feature_header(pairs))?;
    for r in rows {
        if r.complexity.b3.len() != pairs || r.complexity.b4.len() != pairs {
            return Err(Error::Data(format!("stack {} has ragged b3/b4", r.stack_id)));
        }
        let mut rec = vec![r.stack_id.to_string(), r.label.as_str().into(), r.level.to_string()];
        rec.extend(r.lesion.as_array().iter().map(|v| v.to_string()));
        rec.push(r.complexity.b1.to_string());
        rec.push(r.complexity.b2.to_string());
        rec.extend(r.complexity.b3.iter().map(|v| v.to_string()));
        rec.extend(r.complexity.b4.iter().map(|v| v.to_string()));
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io("<features.csv>", e))
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Data(format!("cannot parse {what} value {s:?}")))
}

pub fn read_features_csv<R: Read>(input: R) -> Result<Vec<FeatureRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.len() < 8 || (header.len() - 8) % 2 != 0 {
        return Err(Error::Data(format!("unexpected feature header with {} columns", header.len())));
    }
    let pairs = (header.len() - 8) / 2;
    if header.iter().collect::<Vec<_>>() != feature_header(pairs) {
        return Err(Error::Data("feature header does not match the expected layout".into()));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| parse_f64(&rec[i], &header[i]);
        rows.push(FeatureRow {
            stack_id: rec[0]
                .parse()
                .map_err(|_| Error::Data(format!("bad stack_id {:?}", &rec[0])))?,
            label: rec[1].parse()?,
            level: rec[2]
                .parse()
                .map_err(|_| Error::Data(format!("bad level {:?}", &rec[2])))?,
            lesion: LesionFeatures::from_array([num(3)?, num(4)?, num(5)?]),
            complexity: ComplexityFeatures {
                b1: num(6)?,
                b2: num(7)?,
                b3: (8..8 + pairs).map(num).collect::<Result<_>>()?,
                b4: (8 + pairs..8 + 2 * pairs).map(num).collect::<Result<_>>()?,
            },
        });
    }
    Ok(rows)
}

pub fn load_features(path: &Path) -> Result<Vec<FeatureRow>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_features_csv(f)
}

pub fn save_features(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_features_csv(rows, f)
}

/// Flat CSV form of a [`StackScore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub stack_id: u64,
    pub label: Label,
    pub level: u8,
    pub c_hat: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub r1: usize,
    pub r2: usize,
    pub r3: usize,
    pub score: usize,
}

impl From<&StackScore> for ScoreRecord {
    fn from(s: &StackScore) -> Self {
        Self {
            stack_id: s.stack_id,
            label: s.label,
            level: s.level,
            c_hat: s.c_hat,
            f1: s.perturbed.f1,
            f2: s.perturbed.f2,
            f3: s.perturbed.f3,
            r1: s.ranks[0],
            r2: s.ranks[1],
            r3: s.ranks[2],
            score: s.score,
        }
    }
}

pub fn write_scores_csv<W: Write>(scores: &[ScoreRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in scores {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io("<scores.csv>", e))
}

pub fn read_scores_csv<R: Read>(input: R) -> Result<Vec<ScoreRecord>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voxel_bytes_round_trip() {
        let cfg = GenConfig {
            dims: Dims::new(17, 24, 24),
            ..GenConfig::default()
        };
        let s = generate_stack(&cfg, 3, Label::Lesion, 2).unwrap();
        let bytes = encode_voxels(&s);
        assert_eq!(bytes.len(), s.dims.len() * 4);
        assert_eq!(decode_voxels(&bytes, s.dims).unwrap(), s.voxels);
        assert!(decode_voxels(&bytes[1..], s.dims).is_err());
    }

    #[test]
    fn feature_csv_round_trip_is_exact() {
        let row = FeatureRow {
            stack_id: 12,
            label: Label::Lesion,
            level: 4,
            lesion: LesionFeatures::from_array([0.1, -1.0 / 3.0, 1e-300]),
            complexity: ComplexityFeatures {
                b1: 17.25,
                b2: std::f64::consts::PI,
                b3: vec![31.5, 100.0],
                b4: vec![0.999_999_999_1, -0.25],
            },
        };
        let mut buf = Vec::new();
        write_features_csv(std::slice::from_ref(&row), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("stack_id,label,level,f1,f2,f3,b1,b2,b3_1,b3_2,b4_1,b4_2\n"));
        assert_eq!(read_features_csv(buf.as_slice()).unwrap(), vec![row]);
    }

    #[test]
    fn rejects_malformed_features() {
        assert!(read_features_csv("a,b,c\n1,2,3\n".as_bytes()).is_err());
    }
}
