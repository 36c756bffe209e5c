//! Operator surface of the engine: build graphs offline, ask questions,
//! run evaluations and sweeps, generate synthetic corpora, and inspect
//! persisted graphs.
//!
//! Exit codes are a stable contract for CI: 0 success, 2 build error,
//! 3 query/pipeline error, 4 configuration error.

mod cliconfig;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cliconfig::{BackendKind, PartialEngine};
use clipgraph_core::RefinementStrategy;

pub const EXIT_BUILD: u8 = 2;
pub const EXIT_QUERY: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;

/// A graph-based retrieval and reasoning engine for long-video QA.
#[derive(Parser)]
#[command(name = "clipgraph", version, about)]
struct Cli {
    /// JSON config file; its values override environment and defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base directory all relative paths resolve against.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    verbosity: String,
    #[command(subcommand)]
    command: Command,
}

/// Engine parameters; flags mirror the engine config field names.
#[derive(Args, Default, Clone)]
struct EngineArgs {
    /// Frames per clip (K).
    #[arg(long)]
    frames_per_clip: Option<u32>,
    /// Frame sampling rate in frames per second.
    #[arg(long)]
    sample_fps: Option<f64>,
    /// Entity merge threshold (tau).
    #[arg(long)]
    merge_threshold: Option<f64>,
    /// Keyword retrieval threshold (theta).
    #[arg(long)]
    retrieval_threshold: Option<f64>,
    /// Clips kept after re-ranking (N).
    #[arg(long)]
    retrieval_top_n: Option<usize>,
    /// Clips kept after refinement (r).
    #[arg(long, alias = "r")]
    refine_max_r: Option<usize>,
    /// Refinement strategy: structured, confidence, or none.
    #[arg(long)]
    strategy: Option<String>,
    /// Record wall-clock timings in traces and reports.
    #[arg(long)]
    record_timings: bool,
}

impl EngineArgs {
    fn to_partial(&self) -> anyhow::Result<PartialEngine> {
        let refinement_strategy = match self.strategy.as_deref() {
            None => None,
            Some("structured") => Some(RefinementStrategy::Structured),
            Some("confidence") => Some(RefinementStrategy::Confidence),
            Some("none") => Some(RefinementStrategy::None),
            Some(other) => anyhow::bail!(
                "unknown strategy {other:?} (expected structured, confidence, or none)"
            ),
        };
        Ok(PartialEngine {
            frames_per_clip: self.frames_per_clip,
            sample_fps: self.sample_fps,
            merge_threshold: self.merge_threshold,
            retrieval_threshold: self.retrieval_threshold,
            retrieval_top_n: self.retrieval_top_n,
            refine_max_r: self.refine_max_r,
            refinement_strategy,
            record_timings: self.record_timings.then_some(true),
            ..Default::default()
        })
    }
}

/// Backend selection; the API key is read from CLIPGRAPH_API_KEY.
#[derive(Args, Default, Clone)]
struct BackendArgs {
    /// Backend kind: mock (fixture-driven, offline) or http.
    #[arg(long)]
    backend: Option<String>,
    /// Chat-completion base URL (up to the API root, e.g. .../v1).
    #[arg(long)]
    chat_url: Option<String>,
    /// Chat model identifier.
    #[arg(long)]
    chat_model: Option<String>,
    /// Embedding base URL.
    #[arg(long)]
    embed_url: Option<String>,
    /// Embedding model identifier.
    #[arg(long)]
    embed_model: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a video graph offline from a fixture directory.
    Build {
        /// Directory holding video.json plus sidecars.json and/or
        /// subtitles for the selected backend.
        #[arg(long)]
        video_dir: PathBuf,
        /// Output graph file (default: <video-dir>/graph.json).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite an existing graph file.
        #[arg(long)]
        force: bool,
        /// Skip clips whose extraction fails instead of aborting.
        #[arg(long)]
        lenient: bool,
        #[command(flatten)]
        engine: EngineArgs,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Answer one question against a persisted graph.
    Query {
        /// Graph file produced by `build`.
        #[arg(long)]
        graph: PathBuf,
        /// The question text.
        #[arg(long)]
        question: String,
        /// MCQ option as LETTER=TEXT; repeat for each option.
        #[arg(long = "option", value_name = "LETTER=TEXT")]
        options: Vec<String>,
        /// Directory the answer trace is written into.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        /// Fixture directory for the mock backend (sidecars.json).
        #[arg(long)]
        video_dir: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Run an evaluation (or a parameter sweep) over a corpus.
    Eval {
        /// Corpus directory produced by `gen-corpus`.
        #[arg(long)]
        corpus: PathBuf,
        /// Pipeline variant: graph_sr, graph_no_sr, naive_rag, or
        /// naive_plus_sr.
        #[arg(long, default_value = "graph_sr")]
        mode: String,
        /// Output directory (default: <workdir>/eval).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Sweep spec, e.g. r=1..6 or theta=0.3,0.5,0.7 or n=5,10,20.
        #[arg(long)]
        sweep: Option<String>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Generate a synthetic corpus with planted ground truth.
    GenCorpus {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Corpus preset: default or count-sweep.
        #[arg(long, default_value = "default")]
        preset: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        videos: Option<u32>,
        #[arg(long)]
        clips_per_video: Option<u32>,
        #[arg(long)]
        entities_per_video: Option<u32>,
        #[arg(long)]
        aliases_per_entity: Option<u32>,
    },
    /// Print a human-readable summary of a persisted graph.
    Inspect {
        /// Graph file to summarize.
        #[arg(long)]
        graph: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_CONFIG),
            };
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.verbosity)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.source);
            ExitCode::from(e.exit_code)
        }
    }
}

/// An error tagged with the exit code it maps to.
pub struct CliError {
    pub exit_code: u8,
    pub source: anyhow::Error,
}

impl CliError {
    fn config(source: anyhow::Error) -> Self {
        Self { exit_code: EXIT_CONFIG, source }
    }

    fn build(source: anyhow::Error) -> Self {
        Self { exit_code: EXIT_BUILD, source }
    }

    fn query(source: anyhow::Error) -> Self {
        Self { exit_code: EXIT_QUERY, source }
    }
}

pub(crate) use cliconfig::BackendSettings;

pub(crate) fn backend_kind_of(args: &BackendArgs, settings: &BackendSettings) -> anyhow::Result<BackendKind> {
    match &args.backend {
        Some(s) => s.parse(),
        None => Ok(settings.kind.clone()),
    }
}
