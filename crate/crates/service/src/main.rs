use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use gib_core::cohort::{generate_cohort, read_cohort, write_cohort, CohortHeader, CohortSpec, PatientRecord};
use gib_core::forest::ForestParams;
use gib_core::guidelines::{ingest_guidelines, HashingEmbedder};
use gib_core::model::{RiskModel, TrainingConfig};
use gib_core::studylab::{aggregate_prepost, cronbach_alpha, Phase, SurveyTable};
use gib_service::app::{self, AppState};
use gib_service::patients::PatientDirectory;
use gib_service::{BackendKind, ServiceConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "gib", version, about = "GI-bleeding risk model, guideline retrieval and chat service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort (catalog.json + records.jsonl).
    GenCohort {
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 0.3)]
        prevalence: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit LASSO screening, the honest forest and the threshold.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 200)]
        trees: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        max_depth: Option<usize>,
        #[arg(long)]
        min_leaf: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print AUC, threshold, sensitivity and specificity on a cohort.
    Evaluate {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Chunk and embed a guideline document.
    Ingest {
        #[arg(long)]
        doc: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service. Flags override the config file.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        artifact: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        patients: Option<PathBuf>,
        #[arg(long, value_enum)]
        backend: Option<BackendKind>,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// One chat exchange with the offline backend.
    Ask {
        text: String,
        /// Patient id in --patients, or a path to a patient JSON file.
        #[arg(long)]
        patient: String,
        #[arg(long)]
        patients: Option<PathBuf>,
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
    /// Survey analysis.
    Study {
        #[command(subcommand)]
        command: StudyCommand,
    },
}

#[derive(Subcommand)]
enum StudyCommand {
    /// Cronbach's alpha for one construct.
    Alpha {
        #[arg(long)]
        csv: PathBuf,
        /// Item id prefix naming the construct.
        #[arg(long)]
        construct: String,
        #[arg(long)]
        arm: Option<String>,
        #[arg(long)]
        phase: Option<Phase>,
    },
    /// Mean construct score before and after, per arm.
    Prepost {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        construct: String,
        /// Restrict to one arm; all arms otherwise.
        #[arg(long)]
        arm: Option<String>,
    },
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn init_logging(log_path: Option<&Path>) -> anyhow::Result<()> {
    let mut builder = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if let Some(path) = log_path {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening log {}", path.display()))?;
        builder.target(env_logger::Target::Pipe(Box::new(file)));
    }
    builder.init();
    Ok(())
}

fn survey(csv: &Path) -> anyhow::Result<SurveyTable> {
    let file = File::open(csv).with_context(|| format!("opening {}", csv.display()))?;
    Ok(SurveyTable::from_csv(file)?)
}

fn resolve_patient(patient: &str, dir: Option<&Path>) -> anyhow::Result<PatientRecord> {
    if let Some(dir) = dir {
        let patients = PatientDirectory::load(dir)?;
        if let Some(p) = patients.get(patient) {
            return Ok(p.clone());
        }
    }
    let path = Path::new(patient);
    if path.is_file() {
        let record: PatientRecord = serde_json::from_str(&fs::read_to_string(path)?)?;
        record.validate()?;
        return Ok(record);
    }
    bail!("patient {patient} not found")
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenCohort { n, seed, prevalence, out } => {
            init_logging(None)?;
            let spec = CohortSpec::synthetic(n, seed, prevalence);
            let records = generate_cohort(&spec)?;
            write_cohort(&out, &CohortHeader::from_spec(&spec), &records)?;
            let positives = records.iter().filter(|r| r.outcome == Some(1)).count();
            print_json(&json!({ "out": out, "n": records.len(), "positives": positives }))
        }
        Command::Train { data, trees, seed, max_depth, min_leaf, out } => {
            init_logging(None)?;
            let (header, records) = read_cohort(&data)?;
            let mut forest = ForestParams {
                num_trees: trees,
                seed,
                ..Default::default()
            };
            if let Some(d) = max_depth {
                forest.max_depth = d;
            }
            if let Some(m) = min_leaf {
                forest.min_leaf = m;
            }
            let config = TrainingConfig {
                forest,
                ..Default::default()
            };
            let started = Instant::now();
            let model = RiskModel::train(&records, &header.features, &config)?;
            model.save(&out)?;
            log::info!("trained in {:.2?}", started.elapsed());
            print_json(&model.meta())
        }
        Command::Evaluate { artifact, data } => {
            let model = RiskModel::load(&artifact)?;
            let (_, records) = read_cohort(&data)?;
            print_json(&model.evaluate(&records)?)
        }
        Command::Ingest { doc, out } => {
            let text = fs::read_to_string(&doc).with_context(|| format!("reading {}", doc.display()))?;
            let store = ingest_guidelines(&text, &HashingEmbedder::default())?;
            store.save(&out)?;
            print_json(&json!({ "out": out, "chunks": store.len(), "embedder": store.embedder_id }))
        }
        Command::Serve { config, artifact, store, patients, backend, host, port } => {
            let mut cfg = match &config {
                Some(path) => ServiceConfig::from_file(path)?,
                None => ServiceConfig::new(
                    artifact.clone().context("--artifact or --config is required")?,
                    store.clone().context("--store or --config is required")?,
                ),
            };
            let env = |k: &str| std::env::var(k).ok();
            cfg.apply_env(env)?;
            if let Some(a) = artifact {
                cfg.artifact = a;
            }
            if let Some(s) = store {
                cfg.store = s;
            }
            if let Some(p) = patients {
                cfg.patients_dir = Some(p);
            }
            if let Some(b) = backend {
                cfg.backend = b;
            }
            if host.is_some() || port.is_some() {
                let (h, p) = cfg.bind.rsplit_once(':').unwrap_or((cfg.bind.as_str(), "8080"));
                cfg.bind = format!("{}:{}", host.as_deref().unwrap_or(h), port.map_or(p.to_string(), |p| p.to_string()));
            }
            init_logging(cfg.log_path.as_deref())?;
            let state = Arc::new(AppState::load(&cfg, env)?);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(app::serve(state, &cfg.bind))
        }
        Command::Ask { text, patient, patients, artifact, store } => {
            let patient = resolve_patient(&patient, patients.as_deref())?;
            let cfg = ServiceConfig::new(artifact, store);
            let state = AppState::load(&cfg, |_| None)?;
            let exchange = state.router.exchange(None, Some(&patient), &text)?;
            print_json(&exchange)
        }
        Command::Study { command } => match command {
            StudyCommand::Alpha { csv, construct, arm, phase } => {
                let table = survey(&csv)?;
                let items = table.items_with_prefix(&construct);
                let m = table.likert_matrix(&construct, &items, arm.as_deref(), phase)?;
                let alpha = cronbach_alpha(&m)?;
                print_json(&json!({
                    "construct": construct,
                    "items": items,
                    "arm": arm,
                    "phase": phase,
                    "respondents": m.responses.len(),
                    "alpha": alpha,
                }))
            }
            StudyCommand::Prepost { csv, construct, arm } => {
                let table = survey(&csv)?;
                let items = table.items_with_prefix(&construct);
                let arms = match arm {
                    Some(a) => vec![a],
                    None => table.arms(),
                };
                let rows = arms
                    .iter()
                    .map(|a| aggregate_prepost(&table, &construct, &items, a))
                    .collect::<Result<Vec<_>, _>>()?;
                print_json(&rows)
            }
        },
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
