use anthro_observer::complexity::{FeatureSet, Task};
use anthro_observer::decision::{DecisionConfig, EstimationMode};
use anthro_observer::features::extract_features;
use anthro_observer::io::{
    generate_dataset, load_features, read_scores_csv, read_stack, save_features, write_scores_csv, Manifest,
    ScoreRecord, MANIFEST_FILE,
};
use anthro_observer::pipeline::{
    compute_feature_tables, evaluate_rows, group_of, measure_power, summarize_scores, DatasetConfig,
    ExperimentConfig, PowerMode, ScoreReport, GROUPS,
};
use anthro_observer::stackgen::{generate_stack, GenConfig, Label};
use anthro_observer::study::{analyze, create_session, SessionState, StudyPlan};

#[test]
fn stacks_round_trip_through_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = GenConfig::default();
    let m = generate_dataset(&cfg, 2, &[0, 4], tmp.path()).unwrap();
    assert_eq!(m.stacks.len(), 8);
    assert_eq!(Manifest::load(&tmp.path().join(MANIFEST_FILE)).unwrap(), m);
    for sc in &m.stacks {
        let back = read_stack(tmp.path(), sc).unwrap();
        let fresh = generate_stack(&cfg, sc.stack_id, sc.label, sc.complexity_level).unwrap();
        assert_eq!(back.voxels.len(), fresh.voxels.len());
        // Stored as f32.
        for (a, b) in back.voxels.iter().zip(&fresh.voxels) {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0));
        }
    }
}

#[test]
fn generation_depends_only_on_seed() {
    let cfg = GenConfig::default();
    let a = generate_stack(&cfg, 7, Label::Lesion, 4).unwrap();
    let b = generate_stack(&cfg, 7, Label::Lesion, 4).unwrap();
    assert_eq!(a.voxels, b.voxels);
    let other = GenConfig {
        master_seed: cfg.master_seed + 1,
        ..cfg.clone()
    };
    assert_ne!(generate_stack(&other, 7, Label::Lesion, 4).unwrap().voxels, a.voxels);
    assert_ne!(generate_stack(&cfg, 8, Label::Lesion, 4).unwrap().voxels, a.voxels);
}

#[test]
fn feature_csv_round_trip() {
    let cfg = GenConfig::default();
    let rows: Vec<_> = [(1, Label::Healthy, 0), (2, Label::Lesion, 4)]
        .into_iter()
        .map(|(id, l, lv)| extract_features(&generate_stack(&cfg, id, l, lv).unwrap()).unwrap())
        .collect();
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("f.csv");
    save_features(&p, &rows).unwrap();
    let back = load_features(&p).unwrap();
    assert_eq!(back, rows);
}

fn small_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        master_seed: seed,
        dataset: DatasetConfig {
            n_per_cell: 24,
            levels: vec![0, 4],
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn groups_are_stratified_and_balanced() {
    let tables = compute_feature_tables(&small_config(1)).unwrap();
    let groups = group_of(&tables.post);
    for g in 0..GROUPS {
        for level in [0, 4] {
            for label in [Label::Healthy, Label::Lesion] {
                let n = tables
                    .post
                    .iter()
                    .zip(&groups)
                    .filter(|(r, &gg)| gg == g && r.level == level && r.label == label)
                    .count();
                assert_eq!(n, 24 / GROUPS);
            }
        }
    }
}

#[test]
fn resubstitution_is_optimistic() {
    // Averaged over seeds, training-set power is at least held-out power.
    let (mut pooled, mut part) = (0.0, 0.0);
    for seed in [3, 4, 5] {
        let tables = compute_feature_tables(&small_config(seed)).unwrap();
        let task = Task::Complexity { simple: 0, complex: 4 };
        let set = FeatureSet::b3(tables.pairs());
        pooled += measure_power(&tables.post, &set, task, PowerMode::Pooled).unwrap().1.auc;
        part += measure_power(&tables.post, &set, task, PowerMode::Partitioned).unwrap().1.auc;
    }
    assert!(pooled >= part - 1e-9, "pooled {pooled} vs partitioned {part}");
}

#[test]
fn score_files_round_trip_into_reports() {
    let tables = compute_feature_tables(&small_config(2)).unwrap();
    let dcfg = DecisionConfig {
        estimation_mode: EstimationMode::Ideal,
        ..DecisionConfig::default()
    };
    let scores = evaluate_rows(&tables.post, &tables.post, None, &dcfg, 2).unwrap();
    let records: Vec<ScoreRecord> = scores.iter().map(ScoreRecord::from).collect();
    let mut buf = Vec::new();
    write_scores_csv(&records, &mut buf).unwrap();
    let back = read_scores_csv(buf.as_slice()).unwrap();
    assert_eq!(back, records);

    let single = summarize_scores(std::slice::from_ref(&back), 4).unwrap();
    assert!(single.levels.iter().all(|l| l.ci_halfwidth.is_none()));
    let twice = summarize_scores(&[back.clone(), back.clone()], 4).unwrap();
    for l in &twice.levels {
        assert_eq!(l.ci_halfwidth, Some(0.0));
        assert_eq!(l.histogram_lesion.iter().sum::<usize>(), l.n_pos);
    }
    let json = serde_json::to_string(&twice).unwrap();
    let parsed: ScoreReport = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed, twice);
}

#[test]
fn random_reader_is_near_chance() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(&GenConfig::default(), 35, &[0], tmp.path()).unwrap();
    let plan = StudyPlan {
        conditions: StudyPlan::default()
            .conditions
            .into_iter()
            .filter(|c| c.level == 0)
            .collect(),
        ..StudyPlan::default()
    };
    let mut aucs = Vec::new();
    for seed in 0..10u64 {
        let session = create_session(&StudyPlan { order_seed: seed, ..plan.clone() }, &manifest, "s", b"k").unwrap();
        assert_eq!(session.trials.len(), 70);
        let mut state = SessionState::new(session);
        let mut rng = anthro_observer::rng::stream(seed, 0, "test/reader");
        for k in 0..70 {
            state.submit(k, rand::Rng::random_range(&mut rng, 0..=3), 500).unwrap();
        }
        let scored: Vec<(Label, u8, u8)> = state
            .records
            .iter()
            .map(|r| {
                let t = &state.session.trials[r.trial];
                (t.label, t.level, r.score)
            })
            .collect();
        aucs.push(analyze(&scored).unwrap().levels[0].auc.unwrap());
    }
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    assert!((mean - 0.5).abs() < 0.1, "mean AUC {mean} from {aucs:?}");
}
