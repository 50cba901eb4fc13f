//! End-to-end experiments: dataset synthesis, feature tables, the
//! complexity-power table, the detection table with its d′-drop summary,
//! coefficient export and score histograms.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::complexity::{
    evaluate_power, export_coefficients, feature_power, score, select_top_k, split_classes, train_on_rows,
    write_coefficients_csv, Coefficient, FeatureSet, HotellingModel, Power, Task,
};
use crate::decision::{decide_dataset, detection_auc, feature_scale, DecisionConfig, EstimationMode, StackScore};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureRow};
use crate::hvs::{apply_hvs, HvsConfig};
use crate::io::{write_json, ScoreRecord};
use crate::par;
use crate::roc::{dprime, instance_ci, score_histogram, scale_to_reader_axis};
use crate::stackgen::{generate_stack, plan_dataset, GenConfig, Label, PlannedStack};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_per_cell: usize,
    pub levels: Vec<u8>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_per_cell: 100,
            levels: vec![0, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Seeds every randomized step; overrides `gen.master_seed`.
    pub master_seed: u64,
    pub gen: GenConfig,
    pub hvs: HvsConfig,
    pub decision: DecisionConfig,
    pub dataset: DatasetConfig,
    /// Feature sets whose complexity power is tabulated (after the HVS stage).
    pub power_sets: Vec<String>,
    /// Feature set used by the complexity estimators.
    pub estimator_set: String,
    /// Size of the reduced b3 subset.
    pub top_k: usize,
    pub histogram_bins: usize,
    pub holdout: Holdout,
    /// Protocol for the lesion power of b3/b4.
    pub lesion_power_mode: PowerMode,
    pub output_dir: Option<PathBuf>,
}

/// Which groups serve as the detection test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Holdout {
    /// Only the last group is held out.
    Fixed,
    /// Every group is held out in turn (estimators trained on the other
    /// three); fold AUCs are averaged.
    #[default]
    Rotating,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 2015,
            gen: GenConfig::default(),
            hvs: HvsConfig::default(),
            decision: DecisionConfig::default(),
            dataset: DatasetConfig::default(),
            power_sets: ["f", "b1", "b2", "b3", "b4"].iter().map(ToString::to_string).collect(),
            estimator_set: "b3".into(),
            top_k: 5,
            histogram_bins: 4,
            holdout: Holdout::Rotating,
            lesion_power_mode: PowerMode::CrossValidated,
            output_dir: None,
        }
    }
}

/// Number of partitions for the grouped evaluation; the last is held out.
pub const GROUPS: usize = 4;

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            master_seed: self.master_seed,
            ..self.gen.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        if self.hvs.enabled {
            self.hvs.validate()?;
        }
        self.decision.validate()?;
        let levels: BTreeSet<u8> = self.dataset.levels.iter().copied().collect();
        if levels.len() < 2 {
            return Err(Error::Config("need at least two complexity levels".into()));
        }
        if self.dataset.n_per_cell < 2 * GROUPS {
            return Err(Error::Config(format!(
                "n_per_cell must be at least {} for the grouped evaluation",
                2 * GROUPS
            )));
        }
        if self.histogram_bins < 2 {
            return Err(Error::Config("histogram_bins must be >= 2".into()));
        }
        Ok(())
    }

    pub fn simple_level(&self) -> u8 {
        *self.dataset.levels.iter().min().expect("validated")
    }

    pub fn complex_level(&self) -> u8 {
        *self.dataset.levels.iter().max().expect("validated")
    }

    pub fn complexity_task(&self) -> Task {
        Task::Complexity {
            simple: self.simple_level(),
            complex: self.complex_level(),
        }
    }
}

/// Features of every stack before and after the HVS stage, in plan order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTables {
    pub pre: Vec<FeatureRow>,
    pub post: Vec<FeatureRow>,
}

impl FeatureTables {
    pub fn pairs(&self) -> usize {
        self.post.first().map_or(0, |r| r.complexity.b3.len())
    }
}

/// Synthesize the configured dataset in memory and extract both feature tables.
pub fn compute_feature_tables(cfg: &ExperimentConfig) -> Result<FeatureTables> {
    cfg.validate()?;
    let gen = cfg.gen_config();
    let plan = plan_dataset(cfg.dataset.n_per_cell, &cfg.dataset.levels)?;
    let rows = par::try_map(&plan, |p: &PlannedStack| {
        let stack = generate_stack(&gen, p.stack_id, p.label, p.level)?;
        let pre = extract_features(&stack)?;
        let post = if cfg.hvs.enabled {
            extract_features(&apply_hvs(&stack, &cfg.hvs)?)?
        } else {
            pre.clone()
        };
        Ok((pre, post))
    })?;
    let (pre, post) = rows.into_iter().unzip();
    Ok(FeatureTables { pre, post })
}

/// Stratified partition into [`GROUPS`] groups: within each (level × label)
/// cell, stacks ordered by id are dealt round-robin.
pub fn group_of(rows: &[FeatureRow]) -> Vec<usize> {
    let mut cells: Vec<((u8, Label), Vec<usize>)> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let key = (r.level, r.label);
        match cells.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(i),
            None => cells.push((key, vec![i])),
        }
    }
    let mut groups = vec![0; rows.len()];
    for (_, mut idx) in cells {
        idx.sort_by_key(|&i| rows[i].stack_id);
        for (k, i) in idx.into_iter().enumerate() {
            groups[i] = k % GROUPS;
        }
    }
    groups
}

fn select(rows: &[FeatureRow], groups: &[usize], pred: impl Fn(usize, &FeatureRow) -> bool) -> Vec<FeatureRow> {
    rows.iter()
        .zip(groups)
        .filter(|(r, &g)| pred(g, r))
        .map(|(r, _)| r.clone())
        .collect()
}

/// Evaluation protocol for feature power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerMode {
    /// Train and test on every stack.
    Pooled,
    /// Train on the first group, test on the held-out last group.
    Partitioned,
    /// Each group scored by a discriminant trained on the other groups;
    /// one AUC over the pooled out-of-fold scores.
    #[serde(rename = "cross-validated")]
    CrossValidated,
}

impl std::str::FromStr for PowerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(PowerMode::Pooled),
            "partitioned" => Ok(PowerMode::Partitioned),
            "cross-validated" => Ok(PowerMode::CrossValidated),
            other => Err(Error::Config(format!("unknown power mode {other:?}"))),
        }
    }
}

/// Train a discriminant for `set` on `task` and measure its power.
pub fn measure_power(
    rows: &[FeatureRow],
    set: &FeatureSet,
    task: Task,
    mode: PowerMode,
) -> Result<(HotellingModel, Power)> {
    match mode {
        PowerMode::Pooled => {
            let model = train_on_rows(rows, set, task)?;
            let power = evaluate_power(&model, rows, task)?;
            Ok((model, power))
        }
        PowerMode::Partitioned => {
            let groups = group_of(rows);
            let train = select(rows, &groups, |g, _| g == 0);
            let test = select(rows, &groups, |g, _| g == GROUPS - 1);
            let model = train_on_rows(&train, set, task)?;
            let power = evaluate_power(&model, &test, task)?;
            Ok((model, power))
        }
        PowerMode::CrossValidated => {
            let groups = group_of(rows);
            let (mut s0, mut s1) = (Vec::new(), Vec::new());
            for held in 0..GROUPS {
                let train = select(rows, &groups, |g, _| g != held);
                let test = select(rows, &groups, |g, _| g == held);
                let model = train_on_rows(&train, set, task)?;
                let (c0, c1) = split_classes(&test, set, task)?;
                for f in &c0 {
                    s0.push(score(&model, f)?);
                }
                for f in &c1 {
                    s1.push(score(&model, f)?);
                }
            }
            let model = train_on_rows(rows, set, task)?;
            Ok((model, feature_power(&s0, &s1)?))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub feature_set: String,
    /// `pre-hvs` or `post-hvs`.
    pub stage: String,
    /// `complexity` or `lesion`.
    pub task: String,
    pub protocol: PowerMode,
    pub n_features: usize,
    pub auc: f64,
    pub raw_auc: f64,
    pub swapped: bool,
    #[serde(with = "crate::roc::extended_f64")]
    pub dprime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTable {
    pub rows: Vec<PowerRow>,
    /// 1-based b3 pair indices kept in the reduced set.
    pub reduced_b3: Vec<usize>,
    /// Weights of the after-HVS b3 complexity discriminant.
    pub coefficients: Vec<Coefficient>,
}

impl PowerTable {
    pub fn get(&self, feature_set: &str, stage: &str, task: &str) -> Option<&PowerRow> {
        self.rows
            .iter()
            .find(|r| r.feature_set == feature_set && r.stage == stage && r.task == task)
    }
}

fn power_row(name: &str, stage: &str, task: &str, protocol: PowerMode, n: usize, p: Power) -> Result<PowerRow> {
    Ok(PowerRow {
        feature_set: name.into(),
        stage: stage.into(),
        task: task.into(),
        protocol,
        n_features: n,
        auc: p.auc,
        raw_auc: p.raw_auc,
        swapped: p.swapped,
        dprime: dprime(p.auc)?.value,
    })
}

/// Complexity power of every configured feature set (pooled protocol), b3
/// before the HVS stage, the reduced b3 subset, and lesion power of b3/b4.
pub fn run_power_table(cfg: &ExperimentConfig, tables: &FeatureTables) -> Result<PowerTable> {
    let pairs = tables.pairs();
    let task = cfg.complexity_task();
    let mut rows = Vec::new();
    let mut b3_model = None;
    for name in &cfg.power_sets {
        let set = FeatureSet::parse(name, pairs)?;
        let (model, p) = measure_power(&tables.post, &set, task, PowerMode::Pooled)?;
        rows.push(power_row(name, "post-hvs", "complexity", PowerMode::Pooled, set.len(), p)?);
        if name == "b3" {
            b3_model = Some(model);
        }
    }
    let b3 = FeatureSet::b3(pairs);
    let b3_model = match b3_model {
        Some(m) => m,
        None => measure_power(&tables.post, &b3, task, PowerMode::Pooled)?.0,
    };

    let (_, p) = measure_power(&tables.pre, &b3, task, PowerMode::Pooled)?;
    rows.push(power_row("b3", "pre-hvs", "complexity", PowerMode::Pooled, pairs, p)?);

    let k = cfg.top_k.min(pairs);
    let reduced_b3 = select_top_k(&b3_model, k)?;
    let reduced = b3.subset(&reduced_b3)?;
    let (_, p) = measure_power(&tables.post, &reduced, task, PowerMode::Pooled)?;
    rows.push(power_row("b3'", "post-hvs", "complexity", PowerMode::Pooled, k, p)?);

    for (name, set) in [("b3", FeatureSet::b3(pairs)), ("b4", FeatureSet::b4(pairs))] {
        let (_, p) = measure_power(&tables.post, &set, Task::Lesion, cfg.lesion_power_mode)?;
        rows.push(power_row(name, "post-hvs", "lesion", cfg.lesion_power_mode, pairs, p)?);
    }

    Ok(PowerTable {
        rows,
        reduced_b3,
        coefficients: export_coefficients(&b3_model),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCell {
    pub level: u8,
    pub mode: EstimationMode,
    /// Mean over folds of the per-fold mean AUC over estimator instances.
    pub auc: f64,
    #[serde(with = "crate::roc::extended_f64")]
    pub dprime: f64,
    /// `2·std` over the three estimator instances (averaged over folds),
    /// when there are instances.
    pub ci_halfwidth: Option<f64>,
    pub fold_aucs: Vec<f64>,
    /// Fold-major.
    pub instance_aucs: Vec<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRow {
    pub mode: EstimationMode,
    pub auc_simple: f64,
    pub auc_complex: f64,
    pub auc_drop: f64,
    #[serde(with = "crate::roc::extended_f64")]
    pub dprime_simple: f64,
    #[serde(with = "crate::roc::extended_f64")]
    pub dprime_complex: f64,
    /// `100 · (d′_simple − d′_complex) / d′_simple`.
    #[serde(with = "crate::roc::extended_f64")]
    pub dprime_drop_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub mode: EstimationMode,
    pub level: u8,
    pub label: Label,
    /// Counts over equal bins of the 0..3 score axis.
    pub counts: Vec<usize>,
    /// Mean of the scores after scaling onto 0..3.
    pub mean_scaled_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionTable {
    pub simple_level: u8,
    pub complex_level: u8,
    pub cells: Vec<DetectionCell>,
    pub drops: Vec<DropRow>,
    pub histograms: Vec<Histogram>,
}

impl DetectionTable {
    pub fn cell(&self, level: u8, mode: EstimationMode) -> Option<&DetectionCell> {
        self.cells.iter().find(|c| c.level == level && c.mode == mode)
    }

    pub fn drop(&self, mode: EstimationMode) -> Option<&DropRow> {
        self.drops.iter().find(|d| d.mode == mode)
    }

    pub fn histogram(&self, mode: EstimationMode, level: u8, label: Label) -> Option<&Histogram> {
        self.histograms
            .iter()
            .find(|h| h.mode == mode && h.level == level && h.label == label)
    }
}

/// Histograms of min-rank scores scaled from `[1, N]` onto the reader axis.
pub fn score_histograms(
    scores: &[StackScore],
    mode: EstimationMode,
    level: u8,
    bins: usize,
) -> Result<Vec<Histogram>> {
    let n = scores.len() as f64;
    let range = (1.0, n.max(2.0));
    [Label::Lesion, Label::Healthy]
        .into_iter()
        .map(|label| {
            let s: Vec<f64> = scores
                .iter()
                .filter(|x| x.label == label)
                .map(|x| x.score as f64)
                .collect();
            let mean = if s.is_empty() {
                0.0
            } else {
                s.iter().map(|&v| scale_to_reader_axis(v, range)).sum::<f64>() / s.len() as f64
            };
            Ok(Histogram {
                mode,
                level,
                label,
                counts: score_histogram(&s, bins, range)?,
                mean_scaled_score: mean,
            })
        })
        .collect()
}

/// Lesion-detection AUC per (level × estimation mode) on held-out groups.
///
/// For each held-out group, estimator modes train one discriminant on each of
/// the remaining groups; the feature scale comes from their simple stacks.
pub fn run_detection_table(cfg: &ExperimentConfig, tables: &FeatureTables) -> Result<DetectionTable> {
    let pairs = tables.pairs();
    let task = cfg.complexity_task();
    let est_set = FeatureSet::parse(&cfg.estimator_set, pairs)?;
    let groups = group_of(&tables.post);
    let (simple, complex) = (cfg.simple_level(), cfg.complex_level());
    let folds: Vec<usize> = match cfg.holdout {
        Holdout::Fixed => vec![GROUPS - 1],
        Holdout::Rotating => (0..GROUPS).collect(),
    };

    struct Acc {
        fold_aucs: Vec<f64>,
        instance_aucs: Vec<f64>,
        halves: Vec<f64>,
        n_pos: usize,
        n_neg: usize,
        // (label, counts, sum of scaled scores, n)
        hist: Vec<(Label, Vec<usize>, f64, usize)>,
    }
    let cells_order: Vec<(EstimationMode, u8)> = EstimationMode::ALL
        .iter()
        .flat_map(|&m| [(m, simple), (m, complex)])
        .collect();
    let mut accs: Vec<Acc> = cells_order
        .iter()
        .map(|_| Acc {
            fold_aucs: Vec::new(),
            instance_aucs: Vec::new(),
            halves: Vec::new(),
            n_pos: 0,
            n_neg: 0,
            hist: [Label::Lesion, Label::Healthy]
                .into_iter()
                .map(|l| (l, vec![0; cfg.histogram_bins], 0.0, 0))
                .collect(),
        })
        .collect();

    for &held in &folds {
        let train_groups: Vec<usize> = (0..GROUPS).filter(|&g| g != held).collect();
        let training_simple = select(&tables.post, &groups, |g, r| g != held && r.level == simple);
        let scale = feature_scale(&training_simple)?;

        let mut models: Vec<(EstimationMode, Vec<HotellingModel>)> = Vec::new();
        for (mode, source) in [
            (EstimationMode::PostHvs, &tables.post),
            (EstimationMode::PreHvs, &tables.pre),
        ] {
            let instances = train_groups
                .iter()
                .map(|&k| train_on_rows(&select(source, &groups, |g, _| g == k), &est_set, task))
                .collect::<Result<Vec<_>>>()?;
            models.push((mode, instances));
        }

        for (&(mode, level), acc) in cells_order.iter().zip(accs.iter_mut()) {
            let dcfg = DecisionConfig {
                estimation_mode: mode,
                ..cfg.decision.clone()
            };
            let source = match mode {
                EstimationMode::PreHvs => &tables.pre,
                _ => &tables.post,
            };
            let eval = select(&tables.post, &groups, |g, r| g == held && r.level == level);
            let eval_c = select(source, &groups, |g, r| g == held && r.level == level);
            let runs: Vec<Vec<StackScore>> = match models.iter().find(|(m, _)| *m == mode) {
                Some((_, instances)) => instances
                    .iter()
                    .map(|m| decide_dataset(&eval, &eval_c, Some(m), scale, &dcfg, cfg.master_seed))
                    .collect::<Result<_>>()?,
                None => vec![decide_dataset(&eval, &eval_c, None, scale, &dcfg, cfg.master_seed)?],
            };
            let aucs = runs.iter().map(|r| detection_auc(r)).collect::<Result<Vec<_>>>()?;
            let (auc, half) = instance_ci(&aucs)?;
            acc.fold_aucs.push(auc);
            acc.halves.push(half);
            acc.instance_aucs.extend(aucs);
            let n_pos = eval.iter().filter(|r| r.label.is_lesion()).count();
            acc.n_pos += n_pos;
            acc.n_neg += eval.len() - n_pos;
            for h in score_histograms(&runs[0], mode, level, cfg.histogram_bins)? {
                let slot = acc.hist.iter_mut().find(|x| x.0 == h.label).expect("both labels");
                let n = runs[0].iter().filter(|s| s.label == h.label).count();
                for (c, k) in slot.1.iter_mut().zip(&h.counts) {
                    *c += k;
                }
                slot.2 += h.mean_scaled_score * n as f64;
                slot.3 += n;
            }
        }
    }

    let mut cells = Vec::new();
    let mut histograms = Vec::new();
    for (&(mode, level), acc) in cells_order.iter().zip(accs) {
        let auc = mean(&acc.fold_aucs);
        cells.push(DetectionCell {
            level,
            mode,
            auc,
            dprime: dprime(auc)?.value,
            ci_halfwidth: mode.needs_model().then(|| mean(&acc.halves)),
            fold_aucs: acc.fold_aucs,
            instance_aucs: acc.instance_aucs,
            n_pos: acc.n_pos,
            n_neg: acc.n_neg,
        });
        for (label, counts, sum, n) in acc.hist {
            histograms.push(Histogram {
                mode,
                level,
                label,
                counts,
                mean_scaled_score: if n == 0 { 0.0 } else { sum / n as f64 },
            });
        }
    }

    let drops = EstimationMode::ALL
        .iter()
        .map(|&mode| {
            let find = |level| {
                cells
                    .iter()
                    .find(|c: &&DetectionCell| c.level == level && c.mode == mode)
                    .expect("every cell computed")
            };
            let (s, c) = (find(simple), find(complex));
            DropRow {
                mode,
                auc_simple: s.auc,
                auc_complex: c.auc,
                auc_drop: s.auc - c.auc,
                dprime_simple: s.dprime,
                dprime_complex: c.dprime,
                dprime_drop_percent: 100.0 * (s.dprime - c.dprime) / s.dprime,
            }
        })
        .collect();

    Ok(DetectionTable {
        simple_level: simple,
        complex_level: complex,
        cells,
        drops,
        histograms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub n_stacks: usize,
    pub power: PowerTable,
    pub detection: DetectionTable,
}

/// Run both tables from scratch.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let tables = compute_feature_tables(cfg)?;
    let power = run_power_table(cfg, &tables)?;
    let detection = run_detection_table(cfg, &tables)?;
    Ok(Report {
        config: cfg.clone(),
        n_stacks: tables.post.len(),
        power,
        detection,
    })
}

/// Mean that returns the value itself, bit for bit, when all entries agree.
fn mean(v: &[f64]) -> f64 {
    if v.windows(2).all(|w| w[0] == w[1]) {
        return v[0];
    }
    v.iter().sum::<f64>() / v.len() as f64
}

pub const REPORT_FILE: &str = "report.json";

/// Run everything and write the bundle (`report.json`, `power_table.csv`,
/// `detection_table.csv`, `dprime_drop.csv`, `coefficients.csv`,
/// `histograms.csv`) into `out_dir`. Files already written are removed if a
/// later write fails.
pub fn run_all(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Report> {
    let report = run_experiment(cfg)?;
    write_bundle(&report, out_dir)?;
    Ok(report)
}

pub fn write_bundle(report: &Report, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| -> Result<()> {
        let mut emit = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
            let path = out_dir.join(name);
            f(&path)?;
            written.push(path);
            Ok(())
        };
        emit(REPORT_FILE, &|p| write_json(p, report))?;
        emit("power_table.csv", &|p| write_csv(p, &report.power.rows))?;
        emit("coefficients.csv", &|p| {
            let f = fs::File::create(p).map_err(|e| Error::io(p, e))?;
            write_coefficients_csv(&report.power.coefficients, f)
        })?;
        emit("detection_table.csv", &|p| {
            let flat: Vec<DetectionCsvRow> = report.detection.cells.iter().map(DetectionCsvRow::from).collect();
            write_csv(p, &flat)
        })?;
        emit("dprime_drop.csv", &|p| write_csv(p, &report.detection.drops))?;
        emit("histograms.csv", &|p| {
            let flat: Vec<HistogramCsvRow> = report
                .detection
                .histograms
                .iter()
                .flat_map(HistogramCsvRow::expand)
                .collect();
            write_csv(p, &flat)
        })?;
        Ok(())
    })();
    if result.is_err() {
        for p in &written {
            let _ = fs::remove_file(p);
        }
    }
    result
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct DetectionCsvRow {
    level: u8,
    mode: &'static str,
    auc: f64,
    ci_halfwidth: Option<f64>,
    dprime: f64,
    n_pos: usize,
    n_neg: usize,
}

impl From<&DetectionCell> for DetectionCsvRow {
    fn from(c: &DetectionCell) -> Self {
        Self {
            level: c.level,
            mode: c.mode.as_str(),
            auc: c.auc,
            ci_halfwidth: c.ci_halfwidth,
            dprime: c.dprime,
            n_pos: c.n_pos,
            n_neg: c.n_neg,
        }
    }
}

#[derive(Serialize)]
struct HistogramCsvRow {
    mode: &'static str,
    level: u8,
    label: &'static str,
    bin: usize,
    bin_lo: f64,
    bin_hi: f64,
    count: usize,
}

impl HistogramCsvRow {
    fn expand(h: &Histogram) -> Vec<Self> {
        let n = h.counts.len() as f64;
        h.counts
            .iter()
            .enumerate()
            .map(|(i, &count)| Self {
                mode: h.mode.as_str(),
                level: h.level,
                label: h.label.as_str(),
                bin: i,
                bin_lo: 3.0 * i as f64 / n,
                bin_hi: 3.0 * (i + 1) as f64 / n,
                count,
            })
            .collect()
    }
}

/// Score a feature table with the decision block, ranking each complexity
/// level as its own evaluation set. The feature scale comes from the rows
/// at the lowest level present.
pub fn evaluate_rows(
    rows: &[FeatureRow],
    complexity_rows: &[FeatureRow],
    model: Option<&HotellingModel>,
    dcfg: &DecisionConfig,
    master_seed: u64,
) -> Result<Vec<StackScore>> {
    if rows.len() != complexity_rows.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} cue rows vs {} complexity rows",
            rows.len(),
            complexity_rows.len()
        )));
    }
    let levels: BTreeSet<u8> = rows.iter().map(|r| r.level).collect();
    let lowest = *levels
        .iter()
        .next()
        .ok_or_else(|| Error::InsufficientData("no feature rows".into()))?;
    let scale = feature_scale(rows.iter().filter(|r| r.level == lowest))?;
    let mut out = Vec::with_capacity(rows.len());
    for level in levels {
        let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].level == level).collect();
        let eval: Vec<FeatureRow> = idx.iter().map(|&i| rows[i].clone()).collect();
        let eval_c: Vec<FeatureRow> = idx.iter().map(|&i| complexity_rows[i].clone()).collect();
        out.extend(decide_dataset(&eval, &eval_c, model, scale, dcfg, master_seed)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: u8,
    pub auc: f64,
    #[serde(with = "crate::roc::extended_f64")]
    pub dprime: f64,
    pub dprime_saturated: bool,
    /// `2·std` over score files, when more than one is given.
    pub ci_halfwidth: Option<f64>,
    pub instance_aucs: Vec<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Counts over equal bins of the 0..3 axis, from the first score file.
    pub histogram_lesion: Vec<usize>,
    pub histogram_healthy: Vec<usize>,
    pub mean_scaled_lesion: f64,
    pub mean_scaled_healthy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub levels: Vec<LevelSummary>,
    /// Lowest vs highest level, when there are at least two.
    pub auc_drop: Option<f64>,
    pub dprime_drop_percent: Option<f64>,
}

/// Per-level ROC summary of one or more scored runs over the same stacks.
pub fn summarize_scores(instances: &[Vec<ScoreRecord>], bins: usize) -> Result<ScoreReport> {
    let first = instances
        .first()
        .ok_or_else(|| Error::InsufficientData("no score files".into()))?;
    let levels: BTreeSet<u8> = first.iter().map(|s| s.level).collect();
    let mut out = Vec::new();
    for &level in &levels {
        let split = |run: &[ScoreRecord], label: Label| -> Vec<f64> {
            run.iter()
                .filter(|s| s.level == level && s.label == label)
                .map(|s| s.score as f64)
                .collect()
        };
        let aucs = instances
            .iter()
            .map(|run| crate::roc::wilcoxon_auc(&split(run, Label::Lesion), &split(run, Label::Healthy)))
            .collect::<Result<Vec<_>>>()?;
        let (auc, half) = instance_ci(&aucs)?;
        let d = dprime(auc)?;
        let n = first.iter().filter(|s| s.level == level).count() as f64;
        let range = (1.0, n.max(2.0));
        let pos = split(first, Label::Lesion);
        let neg = split(first, Label::Healthy);
        let mean_scaled = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().map(|&x| scale_to_reader_axis(x, range)).sum::<f64>() / v.len() as f64
            }
        };
        out.push(LevelSummary {
            level,
            auc,
            dprime: d.value,
            dprime_saturated: d.saturated,
            ci_halfwidth: (instances.len() > 1).then_some(half),
            instance_aucs: aucs,
            n_pos: pos.len(),
            n_neg: neg.len(),
            histogram_lesion: score_histogram(&pos, bins, range)?,
            histogram_healthy: score_histogram(&neg, bins, range)?,
            mean_scaled_lesion: mean_scaled(&pos),
            mean_scaled_healthy: mean_scaled(&neg),
        });
    }
    let (auc_drop, dprime_drop_percent) = match (out.first(), out.last()) {
        (Some(s), Some(c)) if out.len() > 1 => (
            Some(s.auc - c.auc),
            Some(100.0 * (s.dprime - c.dprime) / s.dprime),
        ),
        _ => (None, None),
    };
    Ok(ScoreReport {
        levels: out,
        auc_drop,
        dprime_drop_percent,
    })
}
