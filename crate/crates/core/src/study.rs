//! Reader-study sessions: seeded trial plans, blinded trial tokens, an
//! append-only score log, and ROC analysis of the collected scores.
//!
//! Everything here is transport-agnostic; the HTTP layer lives in the
//! service crate.

use std::io::BufRead;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{Manifest, Sidecar};
use crate::rng;
use crate::roc::{dprime, score_histogram, wilcoxon_auc};
use crate::stackgen::{Label, Stack};

/// Highest score on the reader scale:
/// 0 certain absent, 1 probably absent, 2 probably present, 3 certain present.
pub const MAX_SCORE: u8 = 3;
pub const SCORE_BINS: usize = 4;

/// One (complexity level × label) cell of the study design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub level: u8,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyPlan {
    pub conditions: Vec<Condition>,
    pub stacks_per_condition: usize,
    /// Seeds both stack selection and presentation order.
    pub order_seed: u64,
    /// Cine frames per second suggested to the client.
    pub frame_rate: f64,
}

impl Default for StudyPlan {
    /// Three levels × two labels × 35 stacks.
    fn default() -> Self {
        let conditions = [0u8, 2, 4]
            .into_iter()
            .flat_map(|level| {
                [Label::Healthy, Label::Lesion]
                    .into_iter()
                    .map(move |label| Condition { level, label })
            })
            .collect();
        Self {
            conditions,
            stacks_per_condition: 35,
            order_seed: 1,
            frame_rate: 10.0,
        }
    }
}

impl StudyPlan {
    pub fn validate(&self) -> Result<()> {
        if self.conditions.is_empty() {
            return Err(Error::Validation("plan has no conditions".into()));
        }
        if self.stacks_per_condition == 0 {
            return Err(Error::Validation("stacks_per_condition must be positive".into()));
        }
        for (i, c) in self.conditions.iter().enumerate() {
            if self.conditions[..i].contains(c) {
                return Err(Error::Validation(format!(
                    "duplicate condition (level {}, {})",
                    c.level,
                    c.label.as_str()
                )));
            }
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(Error::Validation("frame_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn n_trials(&self) -> usize {
        self.conditions.len() * self.stacks_per_condition
    }
}

/// Server-side trial description. Never sent to the client before the
/// session completes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub token: String,
    pub stack_id: u64,
    pub label: Label,
    pub level: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub plan: StudyPlan,
    pub n_frames: usize,
    pub trials: Vec<Trial>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Session id derived from the plan seed and a caller-supplied nonce.
pub fn session_id(order_seed: u64, nonce: u64) -> String {
    let mut h = Sha256::new();
    h.update(b"session");
    h.update(order_seed.to_le_bytes());
    h.update(nonce.to_le_bytes());
    hex(&h.finalize()[..8])
}

/// Keyed hash of (session, trial, stack): opaque to the client.
fn trial_token(key: &[u8], session_id: &str, index: usize, stack_id: u64) -> String {
    let mut h = Sha256::new();
    h.update(key);
    h.update(session_id.as_bytes());
    h.update((index as u64).to_le_bytes());
    h.update(stack_id.to_le_bytes());
    hex(&h.finalize()[..12])
}

/// Pick `stacks_per_condition` stacks per condition and shuffle them into
/// one presentation order. `key` keys the trial tokens.
pub fn create_session(plan: &StudyPlan, manifest: &Manifest, session_id: &str, key: &[u8]) -> Result<Session> {
    plan.validate()?;
    let mut picked: Vec<&Sidecar> = Vec::with_capacity(plan.n_trials());
    for (ci, c) in plan.conditions.iter().enumerate() {
        let mut pool: Vec<&Sidecar> = manifest
            .stacks
            .iter()
            .filter(|s| s.complexity_level == c.level && s.label == c.label)
            .collect();
        if pool.len() < plan.stacks_per_condition {
            return Err(Error::InsufficientData(format!(
                "condition (level {}, {}) has {} stacks, plan needs {}",
                c.level,
                c.label.as_str(),
                pool.len(),
                plan.stacks_per_condition
            )));
        }
        pool.sort_by_key(|s| s.stack_id);
        let mut r = rng::stream(plan.order_seed, ci as u64, "study/select");
        pool.shuffle(&mut r);
        picked.extend(pool.into_iter().take(plan.stacks_per_condition));
    }
    let mut r = rng::stream(plan.order_seed, 0, "study/order");
    picked.shuffle(&mut r);
    let n_frames = manifest.stacks.first().map_or(0, |s| s.dims.slices);
    let trials = picked
        .into_iter()
        .enumerate()
        .map(|(index, s)| Trial {
            index,
            token: trial_token(key, session_id, index, s.stack_id),
            stack_id: s.stack_id,
            label: s.label,
            level: s.complexity_level,
        })
        .collect();
    Ok(Session {
        session_id: session_id.to_string(),
        plan: plan.clone(),
        n_frames,
        trials,
    })
}

impl Session {
    /// Resolve a trial by numeric index or by token.
    pub fn trial(&self, key: &str) -> Result<&Trial> {
        let found = match key.parse::<usize>() {
            Ok(i) => self.trials.get(i),
            Err(_) => self.trials.iter().find(|t| t.token == key),
        };
        found.ok_or_else(|| Error::NotFound(format!("trial {key}")))
    }
}

/// One immutable score, one line of the session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub session_id: String,
    pub trial: usize,
    pub stack_id: u64,
    pub score: u8,
    pub response_time_ms: u64,
    pub frame_rate: f64,
}

impl TrialRecord {
    pub fn to_json_line(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// A session plus its scores so far.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub session: Session,
    pub records: Vec<TrialRecord>,
    scored: Vec<bool>,
}

impl SessionState {
    pub fn new(session: Session) -> Self {
        let scored = vec![false; session.trials.len()];
        Self {
            session,
            records: Vec::new(),
            scored,
        }
    }

    pub fn n_scored(&self) -> usize {
        self.records.len()
    }

    pub fn is_complete(&self) -> bool {
        self.records.len() == self.session.trials.len()
    }

    pub fn is_scored(&self, index: usize) -> bool {
        self.scored.get(index).copied().unwrap_or(false)
    }

    /// Validate a score without recording it.
    pub fn check(&self, trial: usize, score: u8) -> Result<&Trial> {
        if score > MAX_SCORE {
            return Err(Error::Validation(format!("score {score} outside 0..={MAX_SCORE}")));
        }
        let t = self
            .session
            .trials
            .get(trial)
            .ok_or_else(|| Error::NotFound(format!("trial {trial}")))?;
        if self.scored[trial] {
            return Err(Error::Conflict(format!("trial {trial} already scored")));
        }
        Ok(t)
    }

    /// Build the record a submission would append.
    pub fn record_for(&self, trial: usize, score: u8, response_time_ms: u64) -> Result<TrialRecord> {
        let t = self.check(trial, score)?;
        Ok(TrialRecord {
            session_id: self.session.session_id.clone(),
            trial,
            stack_id: t.stack_id,
            score,
            response_time_ms,
            frame_rate: self.session.plan.frame_rate,
        })
    }

    /// Append a record after validating it against the session.
    pub fn apply(&mut self, rec: TrialRecord) -> Result<()> {
        let t = self.check(rec.trial, rec.score)?;
        if rec.session_id != self.session.session_id || rec.stack_id != t.stack_id {
            return Err(Error::Data(format!(
                "record for trial {} does not match session {}",
                rec.trial, self.session.session_id
            )));
        }
        self.scored[rec.trial] = true;
        self.records.push(rec);
        Ok(())
    }

    pub fn submit(&mut self, trial: usize, score: u8, response_time_ms: u64) -> Result<&TrialRecord> {
        let rec = self.record_for(trial, score, response_time_ms)?;
        self.apply(rec)?;
        Ok(self.records.last().expect("just pushed"))
    }

    /// Rebuild state from a JSON-lines log.
    pub fn replay<R: BufRead>(session: Session, log: R) -> Result<Self> {
        let mut state = Self::new(session);
        for (n, line) in log.lines().enumerate() {
            let line = line.map_err(|e| Error::Data(format!("log line {}: {e}", n + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            state.apply(serde_json::from_str(&line)?)?;
        }
        Ok(state)
    }

    /// Client view that reveals nothing about labels, levels or stacks.
    pub fn blinded_view(&self) -> SessionView {
        SessionView {
            session_id: self.session.session_id.clone(),
            n_trials: self.session.trials.len(),
            n_scored: self.n_scored(),
            complete: self.is_complete(),
            frame_rate: self.session.plan.frame_rate,
            n_frames: self.session.n_frames,
            trials: self
                .session
                .trials
                .iter()
                .map(|t| TrialView {
                    index: t.index,
                    token: t.token.clone(),
                    scored: self.scored[t.index],
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub n_trials: usize,
    pub n_scored: usize,
    pub complete: bool,
    pub frame_rate: f64,
    pub n_frames: usize,
    pub trials: Vec<TrialView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    pub index: usize,
    pub token: String,
    pub scored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub level: u8,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Absent unless both labels have scored trials at this level.
    pub auc: Option<f64>,
    pub dprime: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub level: u8,
    pub label: Label,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResults {
    pub n_scored: usize,
    pub levels: Vec<LevelResult>,
    pub histograms: Vec<ScoreHistogram>,
}

/// `(label, level, score)` triples in, per-level ROC and histograms out.
pub fn analyze(scored: &[(Label, u8, u8)]) -> Result<StudyResults> {
    if scored.is_empty() {
        return Err(Error::InsufficientData("no scored trials".into()));
    }
    let mut levels: Vec<u8> = scored.iter().map(|s| s.1).collect();
    levels.sort_unstable();
    levels.dedup();
    let pick = |level: u8, label: Label| -> Vec<f64> {
        scored
            .iter()
            .filter(|s| s.1 == level && s.0 == label)
            .map(|s| f64::from(s.2))
            .collect()
    };
    let mut out = Vec::new();
    let mut histograms = Vec::new();
    for &level in &levels {
        let pos = pick(level, Label::Lesion);
        let neg = pick(level, Label::Healthy);
        let (auc, dp) = if pos.is_empty() || neg.is_empty() {
            (None, None)
        } else {
            let a = wilcoxon_auc(&pos, &neg)?;
            (Some(a), Some(dprime(a)?.value))
        };
        for (label, s) in [(Label::Lesion, &pos), (Label::Healthy, &neg)] {
            histograms.push(ScoreHistogram {
                level,
                label,
                counts: score_histogram(s, SCORE_BINS, (0.0, f64::from(MAX_SCORE)))?,
            });
        }
        out.push(LevelResult {
            level,
            n_pos: pos.len(),
            n_neg: neg.len(),
            auc,
            dprime: dp,
        });
    }
    Ok(StudyResults {
        n_scored: scored.len(),
        levels: out,
        histograms,
    })
}

pub fn study_results(state: &SessionState) -> Result<StudyResults> {
    let scored: Vec<(Label, u8, u8)> = state
        .records
        .iter()
        .map(|r| {
            let t = &state.session.trials[r.trial];
            (t.label, t.level, r.score)
        })
        .collect();
    analyze(&scored)
}

/// Slice `frame` (1-based) rendered to 8-bit grayscale, row-major.
pub fn render_frame(stack: &Stack, sidecar: &Sidecar, frame: usize) -> Result<Vec<u8>> {
    if !(1..=stack.dims.slices).contains(&frame) {
        return Err(Error::Validation(format!(
            "frame {frame} outside 1..={}",
            stack.dims.slices
        )));
    }
    let norm = sidecar.normalization;
    Ok(stack.slice(frame).iter().map(|&v| norm.to_u8(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::Dims;
    use crate::stackgen::{GenConfig, Normalization, Stage};

    fn manifest(per_cell: usize, levels: &[u8]) -> Manifest {
        let mut stacks = Vec::new();
        let mut id = 1;
        for &level in levels {
            for label in [Label::Healthy, Label::Lesion] {
                for _ in 0..per_cell {
                    stacks.push(Sidecar {
                        stack_id: id,
                        dims: Dims::default(),
                        label,
                        complexity_level: level,
                        seed: id,
                        normalization: Normalization::IDENTITY,
                        stage: Stage::PreHvs,
                        file: format!("stacks/{id:06}.f32"),
                    });
                    id += 1;
                }
            }
        }
        Manifest {
            config: GenConfig::default(),
            n_per_cell: per_cell,
            levels: levels.to_vec(),
            stacks,
        }
    }

    #[test]
    fn six_conditions_give_210_trials() {
        let m = manifest(40, &[0, 2, 4]);
        let s = create_session(&StudyPlan::default(), &m, "abc", b"k").unwrap();
        assert_eq!(s.trials.len(), 210);
        let mut ids: Vec<u64> = s.trials.iter().map(|t| t.stack_id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 210);
    }

    #[test]
    fn order_is_deterministic_and_seed_dependent() {
        let m = manifest(40, &[0, 2, 4]);
        let plan = StudyPlan::default();
        let a = create_session(&plan, &m, "abc", b"k").unwrap();
        let b = create_session(&plan, &m, "abc", b"k").unwrap();
        assert_eq!(a, b);
        let c = create_session(&StudyPlan { order_seed: 2, ..plan }, &m, "abc", b"k").unwrap();
        assert_ne!(a.trials, c.trials);
    }

    #[test]
    fn insufficient_stacks_rejected() {
        let m = manifest(10, &[0, 2, 4]);
        assert!(matches!(
            create_session(&StudyPlan::default(), &m, "abc", b"k"),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn submit_rules() {
        let m = manifest(5, &[0]);
        let plan = StudyPlan {
            conditions: vec![
                Condition { level: 0, label: Label::Healthy },
                Condition { level: 0, label: Label::Lesion },
            ],
            stacks_per_condition: 5,
            ..StudyPlan::default()
        };
        let mut st = SessionState::new(create_session(&plan, &m, "s", b"k").unwrap());
        assert!(matches!(st.submit(0, 4, 10), Err(Error::Validation(_))));
        st.submit(0, 2, 10).unwrap();
        assert_eq!(st.n_scored(), 1);
        assert!(matches!(st.submit(0, 3, 10), Err(Error::Conflict(_))));
        assert_eq!(st.records[0].score, 2);
        assert!(matches!(st.submit(99, 1, 10), Err(Error::NotFound(_))));
    }

    #[test]
    fn perfect_reader_has_auc_one() {
        let scored: Vec<(Label, u8, u8)> = (0..10)
            .map(|i| if i % 2 == 0 { (Label::Lesion, 0, 3) } else { (Label::Healthy, 0, 0) })
            .collect();
        let r = analyze(&scored).unwrap();
        assert_eq!(r.levels[0].auc, Some(1.0));
        let total: usize = r.histograms.iter().flat_map(|h| &h.counts).sum();
        assert_eq!(total, 10);
        assert_eq!(r.histograms[0].counts, vec![0, 0, 0, 5]);
    }

    #[test]
    fn empty_results_rejected() {
        assert!(matches!(analyze(&[]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn blinded_view_has_no_stack_identity() {
        let m = manifest(5, &[0]);
        let plan = StudyPlan {
            conditions: vec![Condition { level: 0, label: Label::Lesion }],
            stacks_per_condition: 5,
            ..StudyPlan::default()
        };
        let st = SessionState::new(create_session(&plan, &m, "s", b"k").unwrap());
        let json = serde_json::to_string(&st.blinded_view()).unwrap();
        for word in ["label", "level", "stack_id", "lesion", "healthy"] {
            assert!(!json.contains(word), "{word} leaked: {json}");
        }
    }
}
