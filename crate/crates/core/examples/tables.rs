//! Print the power and detection tables for a config (default if none given).

use std::path::Path;

use anthro_observer::pipeline::{run_experiment, ExperimentConfig};

fn main() -> anthro_observer::Result<()> {
    let mut cfg = match std::env::args().nth(1) {
        Some(p) if !p.is_empty() => ExperimentConfig::load(Path::new(&p))?,
        _ => ExperimentConfig::default(),
    };
    if let Some(seed) = std::env::args().nth(2) {
        cfg.master_seed = seed.parse().expect("seed");
    }
    let t = std::time::Instant::now();
    let report = run_experiment(&cfg)?;
    eprintln!("{} stacks in {:.1?}", report.n_stacks, t.elapsed());
    println!("{:<8} {:<9} {:<11} {:>7} {:>7}", "set", "stage", "task", "AUC", "d'");
    for r in &report.power.rows {
        println!(
            "{:<8} {:<9} {:<11} {:>7.3} {:>7.2}{}",
            r.feature_set,
            r.stage,
            r.task,
            r.auc,
            r.dprime,
            if r.swapped { " (swapped)" } else { "" }
        );
    }
    println!("reduced b3: {:?}", report.power.reduced_b3);
    println!();
    for c in &report.detection.cells {
        println!(
            "level {} {:<9} AUC {:.3} ±{:.3}  d' {:.2}  {:?}",
            c.level,
            c.mode.as_str(),
            c.auc,
            c.ci_halfwidth.unwrap_or(0.0),
            c.dprime,
            c.instance_aucs
        );
    }
    for d in &report.detection.drops {
        println!(
            "{:<9} drop AUC {:.3}  d' drop {:.1}%",
            d.mode.as_str(),
            d.auc_drop,
            d.dprime_drop_percent
        );
    }
    for h in &report.detection.histograms {
        println!(
            "{:<9} level {} {:<8} {:?} mean {:.2}",
            h.mode.as_str(),
            h.level,
            h.label.as_str(),
            h.counts,
            h.mean_scaled_score
        );
    }
    Ok(())
}
