//! Per-cue lesion AUC by level and stage, on the whole dataset.

use anthro_observer::pipeline::{compute_feature_tables, ExperimentConfig};
use anthro_observer::roc::wilcoxon_auc;

fn main() -> anthro_observer::Result<()> {
    let mut cfg = ExperimentConfig::default();
    let args: Vec<String> = std::env::args().collect();
    if let Some(p) = args.get(1) {
        cfg = ExperimentConfig::load(std::path::Path::new(p))?;
    }
    cfg.dataset.n_per_cell = args.get(2).map_or(50, |s| s.parse().unwrap());
    let t = compute_feature_tables(&cfg)?;
    for (stage, rows) in [("pre", &t.pre), ("post", &t.post)] {
        for level in cfg.dataset.levels.clone() {
            let mut line = format!("{stage:4} level {level}:");
            for j in 0..3 {
                let pos: Vec<f64> = rows.iter().filter(|r| r.level == level && r.label.is_lesion()).map(|r| r.lesion.as_array()[j]).collect();
                let neg: Vec<f64> = rows.iter().filter(|r| r.level == level && !r.label.is_lesion()).map(|r| r.lesion.as_array()[j]).collect();
                line += &format!(" f{} {:.3}", j + 1, wilcoxon_auc(&pos, &neg)?);
            }
            let b3: f64 = rows.iter().filter(|r| r.level == level).map(|r| r.complexity.b3.iter().sum::<f64>() / 31.0).sum::<f64>()
                / rows.iter().filter(|r| r.level == level).count() as f64;
            let b2: f64 = rows.iter().filter(|r| r.level == level).map(|r| r.complexity.b2).sum::<f64>()
                / rows.iter().filter(|r| r.level == level).count() as f64;
            line += &format!("  mean b3 {b3:.2} mean b2 {b2:.1}");
            println!("{line}");
        }
    }
    Ok(())
}
