use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use dynrank_cli::pipeline::{
    self, Artifacts, InStage, RerankArtifacts, Stage, StageError, Summary,
};
use dynrank_cli::{exit_code, run_pipeline, Overrides, PipelineConfig};
use dynrank_core::bm25::{Analyzer, InvertedIndex};
use dynrank_core::classifier::{self, ClassifierModel};
use dynrank_core::corpus;
use dynrank_core::{Error, Result};

/// Passage re-ranking by question likelihood under question-type prompts.
#[derive(Debug, Parser)]
#[command(name = "dynrank", version, about)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a BM25 index over the corpus.
    Index {
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Retrieve top passages per query with BM25.
    Retrieve {
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Validate an external TREC run (`--run-in`) for reranking.
    ImportRun {
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Train the question classifier on labeled questions (`--qc-train`).
    TrainQc {
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Labeled held-out questions to report accuracy on.
        #[arg(long, value_name = "FILE")]
        eval: Option<PathBuf>,
    },
    /// Assign a question type to every query.
    Classify {
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Rerank a first-stage run (`--run-in`).
    Rerank {
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        audit: Option<PathBuf>,
    },
    /// Score one or more runs against answers and/or qrels.
    Evaluate {
        /// Run file to evaluate; repeat for several.
        #[arg(long = "run", value_name = "FILE", required = true)]
        runs: Vec<PathBuf>,
        /// JSON report path; a text table is written next to it.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Run every stage end to end.
    Run,
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn output(out: Option<PathBuf>, default: PathBuf) -> Result<PathBuf> {
    let path = out.unwrap_or(default);
    ensure_parent(&path)?;
    Ok(path)
}

/// Ctrl-C stops scoring and lets caches flush; a second Ctrl-C exits at once.
fn install_cancel() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let handler_flag = flag.clone();
    let installed = ctrlc::set_handler(move || {
        if handler_flag.swap(true, Ordering::SeqCst) {
            std::process::exit(exit_code(dynrank_core::ErrorKind::Interrupted));
        }
        eprintln!("interrupt received, finishing in-flight requests");
    });
    if let Err(err) = installed {
        log::warn!("cannot install interrupt handler: {err}");
    }
    flag
}

fn execute(command: Command, config: &PipelineConfig) -> std::result::Result<(), StageError> {
    let art = Artifacts::in_dir(&config.paths.out_dir);
    match command {
        Command::Index { out } => {
            let out = output(out, art.index).in_stage(Stage::Index)?;
            let passages = pipeline::load_corpus(config).in_stage(Stage::Load)?;
            let index = pipeline::build_index(&passages, &out).in_stage(Stage::Index)?;
            eprintln!(
                "indexed {} passages -> {}",
                index.doc_count(),
                out.display()
            );
        }
        Command::Retrieve { out } => {
            let taxonomy = pipeline::load_taxonomy(config).in_stage(Stage::Load)?;
            let questions = pipeline::load_questions(config, &taxonomy).in_stage(Stage::Load)?;
            let index = match &config.paths.index {
                Some(path) => InvertedIndex::load(path).in_stage(Stage::Load)?,
                None => {
                    let passages = pipeline::load_corpus(config).in_stage(Stage::Load)?;
                    InvertedIndex::build(&passages, Analyzer).in_stage(Stage::Index)?
                }
            };
            let out = output(out, art.first_stage_run).in_stage(Stage::Retrieve)?;
            pipeline::retrieve(config, &index, &questions, &out).in_stage(Stage::Retrieve)?;
            eprintln!("retrieved {} queries -> {}", questions.len(), out.display());
        }
        Command::ImportRun { out } => {
            let input = config
                .require("paths.run_in", &config.paths.run_in)
                .in_stage(Stage::Config)?;
            let out = output(out, art.first_stage_run).in_stage(Stage::ImportRun)?;
            let run = pipeline::import_run(input, &out).in_stage(Stage::ImportRun)?;
            eprintln!("imported {} queries -> {}", run.len(), out.display());
        }
        Command::TrainQc { out, eval } => {
            let taxonomy = pipeline::load_taxonomy(config).in_stage(Stage::Load)?;
            let out = output(out, art.model).in_stage(Stage::TrainQc)?;
            let model =
                pipeline::train_classifier(config, &taxonomy, &out).in_stage(Stage::TrainQc)?;
            eprintln!(
                "trained {} classes -> {}",
                model.classes().len(),
                out.display()
            );
            if let Some(path) = eval {
                let held_out = pipeline::load_labeled(&path, &taxonomy).in_stage(Stage::Load)?;
                let (coarse, fine) = classifier::accuracy(&model, &held_out);
                println!(
                    "coarse_accuracy\t{coarse:.4}\nfine_accuracy\t{fine:.4}\nn\t{}",
                    held_out.len()
                );
            }
        }
        Command::Classify { out } => {
            let taxonomy = pipeline::load_taxonomy(config).in_stage(Stage::Load)?;
            let questions = pipeline::load_questions(config, &taxonomy).in_stage(Stage::Load)?;
            let model = match &config.paths.model {
                Some(path) => Some(ClassifierModel::load(path).in_stage(Stage::Load)?),
                None => None,
            };
            if model.is_none() && questions.iter().any(|q| q.gold_type.is_none()) {
                log::warn!("no classifier model given; untyped questions use the default template");
            }
            let out = output(out, art.qtypes).in_stage(Stage::Classify)?;
            let assignments = pipeline::classify(&questions, model.as_ref());
            pipeline::write_atomic(&out, pipeline::format_qtypes(&assignments).as_bytes())
                .in_stage(Stage::Classify)?;
            eprintln!(
                "classified {} queries -> {}",
                assignments.len(),
                out.display()
            );
        }
        Command::Rerank { out, audit } => {
            let taxonomy = pipeline::load_taxonomy(config).in_stage(Stage::Load)?;
            let registry =
                pipeline::load_registry(config, taxonomy.clone()).in_stage(Stage::Load)?;
            let passages = pipeline::load_corpus(config).in_stage(Stage::Load)?;
            let mut questions =
                pipeline::load_questions(config, &taxonomy).in_stage(Stage::Load)?;
            let input = config
                .require("paths.run_in", &config.paths.run_in)
                .in_stage(Stage::Config)?;
            let run = corpus::read_run(input).in_stage(Stage::Load)?;
            corpus::validate_run(&run).in_stage(Stage::Load)?;
            let assignments = match (&config.paths.qtypes, &config.paths.model) {
                (Some(path), _) => pipeline::read_qtypes(path, &taxonomy).in_stage(Stage::Load)?,
                (None, Some(path)) => {
                    let model = ClassifierModel::load(path).in_stage(Stage::Load)?;
                    pipeline::classify(&questions, Some(&model))
                }
                (None, None) => pipeline::classify(&questions, None),
            };
            pipeline::apply_types(&mut questions, &assignments);
            let out = output(out, art.reranked_run).in_stage(Stage::Rerank)?;
            let audit = output(audit, art.audit).in_stage(Stage::Rerank)?;
            let mut summary = Summary::default();
            let targets = RerankArtifacts {
                run: &out,
                audit: &audit,
            };
            pipeline::rerank(
                config,
                &registry,
                &passages,
                &questions,
                &run,
                targets,
                Some(install_cancel()),
                &mut summary,
            )
            .in_stage(Stage::Rerank)?;
            eprintln!(
                "reranked {} queries ({} score calls) -> {}",
                run.len(),
                summary.score_calls,
                out.display()
            );
        }
        Command::Evaluate { runs, out } => {
            let taxonomy = pipeline::load_taxonomy(config).in_stage(Stage::Load)?;
            let questions = match &config.paths.queries {
                Some(_) => Some(pipeline::load_questions(config, &taxonomy).in_stage(Stage::Load)?),
                None => None,
            };
            let passages = match &config.paths.corpus {
                Some(_) => Some(pipeline::load_corpus(config).in_stage(Stage::Load)?),
                None => None,
            };
            let mut labeled = Vec::with_capacity(runs.len());
            for path in &runs {
                let run = corpus::read_run(path).in_stage(Stage::Load)?;
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
                labeled.push((pipeline::run_label(&run, stem), run));
            }
            let report =
                pipeline::evaluate(config, &labeled, questions.as_deref(), passages.as_deref())
                    .in_stage(Stage::Evaluate)?;
            let json = output(out, art.report_json).in_stage(Stage::Evaluate)?;
            let txt = json.with_extension("txt");
            pipeline::write_report(&report, &json, &txt).in_stage(Stage::Evaluate)?;
            print!("{}", report.to_table());
        }
        Command::Run => {
            let summary = run_pipeline(config, Some(install_cancel()))?;
            eprintln!("{summary}");
            eprintln!("artifacts in {}", config.paths.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = PipelineConfig::resolve(&cli.overrides)
        .in_stage(Stage::Config)
        .and_then(|config| execute(cli.command, &config));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(err.kind()) as u8)
        }
    }
}
