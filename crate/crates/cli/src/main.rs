//! `anthro`: dataset generation, feature extraction, complexity training,
//! decision scoring, ROC reports, the full table run, and the study server.

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anthro_observer::complexity::{
    export_coefficients, write_coefficients_csv, FeatureSet, HotellingModel, Task,
};
use anthro_observer::decision::{DecisionConfig, EstimationMode};
use anthro_observer::features::extract_features;
use anthro_observer::hvs::apply_hvs;
use anthro_observer::io::{
    dataset_dir, generate_dataset, load_features, read_scores_csv, read_stack, save_features, write_json,
    write_scores_csv, Manifest, ScoreRecord, MANIFEST_FILE,
};
use anthro_observer::pipeline::{
    evaluate_rows, measure_power, run_all, summarize_scores, ExperimentConfig, PowerMode, Report,
};
use anthro_observer::roc::dprime;
use anthro_observer::{par, Error, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "anthro", version, about = "Anthropomorphic model observer workbench")]
struct Cli {
    /// Experiment config (JSON); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    PreHvs,
    PostHvs,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Complexity,
    Lesion,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset of stacks plus manifest.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Stacks per (label × level) cell.
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated complexity levels, e.g. 0,4.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<u8>>,
    },
    /// Extract f1..f3, b1..b4 for every stack of a dataset.
    Features {
        /// Manifest file or dataset directory.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "post-hvs")]
        stage: StageArg,
    },
    /// Train a Hotelling discriminant and print its power.
    TrainComplexity {
        #[arg(long)]
        features: PathBuf,
        /// f, b1, b2, b3, b4 or a comma list such as b3[1],b3[2].
        #[arg(long, default_value = "b3")]
        set: String,
        #[arg(long, default_value = "pooled")]
        mode: PowerMode,
        #[arg(long, value_enum, default_value = "complexity")]
        task: TaskArg,
        /// Simple / complex levels (default: lowest / highest present).
        #[arg(long)]
        simple: Option<u8>,
        #[arg(long)]
        complex: Option<u8>,
        /// Where to write the model (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional coefficient CSV.
        #[arg(long)]
        coefficients: Option<PathBuf>,
    },
    /// Score stacks with the decision block (ranking per complexity level).
    Evaluate {
        /// Lesion cues (normally post-HVS features).
        #[arg(long)]
        features: PathBuf,
        /// Features the estimator reads (default: --features).
        #[arg(long)]
        complexity_features: Option<PathBuf>,
        #[arg(long)]
        mode: EstimationMode,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// ROC summary of one or more score files.
    Report {
        /// Repeat for several estimator instances over the same stacks.
        #[arg(long, required = true)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        bins: usize,
        /// Also write a per-level CSV table.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the whole experiment and write the report bundle.
    Tables {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve reader-study sessions over HTTP.
    Serve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Session storage (default: DATA/sessions).
        #[arg(long)]
        sessions: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Service(#[from] anthro_service::ServiceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads;
    let result = match threads {
        Some(n) => par::with_threads(n, || run(cli)),
        None => run(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v).map_err(Error::from)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Generate { out, n, levels } => {
            let n = n.unwrap_or(cfg.dataset.n_per_cell);
            let levels = levels.unwrap_or_else(|| cfg.dataset.levels.clone());
            let m = generate_dataset(&cfg.gen_config(), n, &levels, &out)?;
            eprintln!("wrote {} stacks to {}", m.stacks.len(), out.display());
        }
        Command::Features { input, out, stage } => {
            let manifest_path = if input.is_dir() {
                input.join(MANIFEST_FILE)
            } else {
                input.clone()
            };
            let manifest = Manifest::load(&manifest_path)?;
            let dir = dataset_dir(&input);
            let rows = par::try_map(&manifest.stacks, |sc| {
                let stack = read_stack(&dir, sc)?;
                match stage {
                    StageArg::PreHvs => extract_features(&stack),
                    StageArg::PostHvs => extract_features(&apply_hvs(&stack, &cfg.hvs)?),
                }
            })?;
            save_features(&out, &rows)?;
            eprintln!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::TrainComplexity {
            features,
            set,
            mode,
            task,
            simple,
            complex,
            out,
            coefficients,
        } => {
            let rows = load_features(&features)?;
            let pairs = rows.first().map_or(0, |r| r.complexity.b3.len());
            let set_name = set;
            let set = FeatureSet::parse(&set_name, pairs)?;
            let task = match task {
                TaskArg::Lesion => Task::Lesion,
                TaskArg::Complexity => {
                    let lo = rows.iter().map(|r| r.level).min();
                    let hi = rows.iter().map(|r| r.level).max();
                    let (Some(lo), Some(hi)) = (simple.or(lo), complex.or(hi)) else {
                        return Err(Error::InsufficientData("empty feature table".into()).into());
                    };
                    Task::Complexity { simple: lo, complex: hi }
                }
            };
            let (model, power) = measure_power(&rows, &set, task, mode)?;
            if let Some(p) = &out {
                model.save(p)?;
            }
            if let Some(p) = &coefficients {
                let f = std::fs::File::create(p).map_err(Failure::Io)?;
                write_coefficients_csv(&export_coefficients(&model), f)?;
            }
            print_json(&serde_json::json!({
                "feature_set": set_name,
                "n_features": set.len(),
                "mode": mode,
                "auc": power.auc,
                "raw_auc": power.raw_auc,
                "swapped": power.swapped,
                "dprime": dprime(power.auc)?,
            }))?;
        }
        Command::Evaluate {
            features,
            complexity_features,
            mode,
            kappa,
            model,
            out,
        } => {
            let rows = load_features(&features)?;
            let crows = match &complexity_features {
                Some(p) => load_features(p)?,
                None => rows.clone(),
            };
            let model = model.as_deref().map(HotellingModel::load).transpose()?;
            let dcfg = DecisionConfig {
                estimation_mode: mode,
                kappa: kappa.unwrap_or(cfg.decision.kappa),
                ..cfg.decision.clone()
            };
            let scores = evaluate_rows(&rows, &crows, model.as_ref(), &dcfg, cfg.master_seed)?;
            let records: Vec<ScoreRecord> = scores.iter().map(ScoreRecord::from).collect();
            let f = std::fs::File::create(&out).map_err(Failure::Io)?;
            write_scores_csv(&records, f)?;
            eprintln!("wrote {} scores to {}", records.len(), out.display());
        }
        Command::Report { scores, out, bins, csv } => {
            let runs = scores
                .iter()
                .map(|p| {
                    let f = std::fs::File::open(p).map_err(Failure::Io)?;
                    Ok(read_scores_csv(f)?)
                })
                .collect::<Result<Vec<_>, Failure>>()?;
            let report = summarize_scores(&runs, bins)?;
            write_json(&out, &report)?;
            if let Some(p) = csv {
                write_level_csv(&p, &report).map_err(Failure::Io)?;
            }
            print_json(&report)?;
        }
        Command::Tables { out } => {
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            let report = run_all(&cfg, &out)?;
            print_summary(&report);
            eprintln!("bundle written to {}", out.display());
        }
        Command::Serve {
            data,
            port,
            host,
            sessions,
        } => {
            let sessions = sessions.unwrap_or_else(|| data.join("sessions"));
            let store = anthro_service::Store::open(&data, &sessions)?;
            let addr = SocketAddr::new(host, port);
            eprintln!("serving {} on http://{addr}", data.display());
            let rt = tokio::runtime::Runtime::new().map_err(Failure::Io)?;
            rt.block_on(anthro_service::serve(Arc::new(store), addr))
                .map_err(Failure::Io)?;
        }
    }
    Ok(())
}

fn write_level_csv(path: &Path, report: &anthro_observer::pipeline::ScoreReport) -> std::io::Result<()> {
    let mut text = String::from("level,auc,dprime,ci_halfwidth,n_pos,n_neg,mean_scaled_lesion,mean_scaled_healthy\n");
    for l in &report.levels {
        text += &format!(
            "{},{},{},{},{},{},{},{}\n",
            l.level,
            l.auc,
            l.dprime,
            l.ci_halfwidth.map(|v| v.to_string()).unwrap_or_default(),
            l.n_pos,
            l.n_neg,
            l.mean_scaled_lesion,
            l.mean_scaled_healthy
        );
    }
    std::fs::write(path, text)
}

fn print_summary(report: &Report) {
    println!("complexity / lesion power");
    for r in &report.power.rows {
        println!(
            "  {:<5} {:<9} {:<11} AUC {:.3}  d' {:.2}",
            r.feature_set, r.stage, r.task, r.auc, r.dprime
        );
    }
    println!("lesion detection");
    for c in &report.detection.cells {
        println!(
            "  level {} {:<9} AUC {:.3}{}",
            c.level,
            c.mode.as_str(),
            c.auc,
            c.ci_halfwidth.map(|h| format!(" ±{h:.3}")).unwrap_or_default()
        );
    }
    for d in &report.detection.drops {
        println!(
            "  drop {:<9} AUC {:.3}  d' {:.1}%",
            d.mode.as_str(),
            d.auc_drop,
            d.dprime_drop_percent
        );
    }
}
