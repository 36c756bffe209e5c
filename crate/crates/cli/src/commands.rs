//! Command implementations behind the thin clap surface.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};

use clipgraph_core::backend::http::{HttpChatBackend, HttpConfig, HttpEmbedBackend};
use clipgraph_core::backend::mock::{MockChatBackend, MockEmbedBackend};
use clipgraph_core::backend::{BackendTrace, Backends};
use clipgraph_core::builder::{self, BuildOptions, CaptionCue};
use clipgraph_core::generation;
use clipgraph_core::harness::{self, EvalMode, SweepParameter, SyntheticCorpusSpec};
use clipgraph_core::{load_graph, save_graph, EngineConfig, VideoGraph};

use crate::cliconfig::{resolve, BackendKind, BackendSettings, FileConfig};
use crate::{BackendArgs, Cli, CliError, Command, EngineArgs};

type CliResult = std::result::Result<(), CliError>;

pub fn run(cli: Cli) -> CliResult {
    let file = match &cli.config {
        Some(path) => FileConfig::load(&resolve(&cli.workdir, path)).map_err(CliError::config)?,
        None => FileConfig::default(),
    };
    let make_config = |engine_args: &EngineArgs| -> Result<EngineConfig> {
        let mut config = EngineConfig::default();
        file.engine.apply(&mut config);
        engine_args.to_partial()?.apply(&mut config);
        config.validate().map_err(|e| anyhow!(e))?;
        Ok(config)
    };
    let settings = BackendSettings::from_file(&file.backend).map_err(CliError::config)?;

    match &cli.command {
        Command::Build {
            video_dir,
            out,
            force,
            lenient,
            engine,
            backend,
        } => {
            let config = make_config(engine).map_err(CliError::config)?;
            let video_dir = resolve(&cli.workdir, video_dir);
            let out = out
                .as_ref()
                .map(|p| resolve(&cli.workdir, p))
                .unwrap_or_else(|| video_dir.join("graph.json"));
            cmd_build(&video_dir, &out, *force, *lenient, &config, backend, &settings)
        }
        Command::Query {
            graph,
            question,
            options,
            trace_dir,
            video_dir,
            engine,
            backend,
        } => {
            let config = make_config(engine).map_err(CliError::config)?;
            let graph_path = resolve(&cli.workdir, graph);
            let trace_dir = trace_dir
                .as_ref()
                .map(|p| resolve(&cli.workdir, p))
                .or_else(|| file.paths.trace_dir.as_ref().map(|p| resolve(&cli.workdir, p)))
                .unwrap_or_else(|| cli.workdir.join("traces"));
            let video_dir = video_dir.as_ref().map(|p| resolve(&cli.workdir, p));
            cmd_query(
                &graph_path,
                question,
                options,
                &trace_dir,
                video_dir.as_deref(),
                &config,
                backend,
                &settings,
            )
        }
        Command::Eval {
            corpus,
            mode,
            out,
            sweep,
            engine,
        } => {
            let config = make_config(engine).map_err(CliError::config)?;
            let corpus_dir = resolve(&cli.workdir, corpus);
            let out_dir = out
                .as_ref()
                .map(|p| resolve(&cli.workdir, p))
                .unwrap_or_else(|| cli.workdir.join("eval"));
            cmd_eval(&corpus_dir, mode, &out_dir, sweep.as_deref(), &config)
        }
        Command::GenCorpus {
            out,
            preset,
            seed,
            videos,
            clips_per_video,
            entities_per_video,
            aliases_per_entity,
        } => {
            let mut spec = match preset.as_str() {
                "default" => SyntheticCorpusSpec::default_spec(*seed),
                "count-sweep" => SyntheticCorpusSpec::count_sweep_spec(*seed),
                other => {
                    return Err(CliError::config(anyhow!(
                        "unknown preset {other:?} (expected default or count-sweep)"
                    )))
                }
            };
            if let Some(v) = videos {
                spec.videos = *v;
            }
            if let Some(v) = clips_per_video {
                spec.clips_per_video = *v;
            }
            if let Some(v) = entities_per_video {
                spec.entities_per_video = *v;
            }
            if let Some(v) = aliases_per_entity {
                spec.aliases_per_entity = *v;
            }
            let out = resolve(&cli.workdir, out);
            let manifest = harness::generate_corpus(&spec, &out)
                .map_err(|e| CliError::config(anyhow!(e)))?;
            println!(
                "corpus written to {} ({} videos, {} questions/video, oracle needle differential {:.3})",
                out.display(),
                manifest.spec.videos,
                manifest.spec.questions.len(),
                manifest.oracle.needle_recall_differential
            );
            Ok(())
        }
        Command::Inspect { graph } => {
            let graph_path = resolve(&cli.workdir, graph);
            cmd_inspect(&graph_path)
        }
    }
}

/// Fixture-described video: identity plus frame count, with optional
/// subtitle sources next to it.
fn load_video_meta(video_dir: &Path) -> Result<(String, u64)> {
    let path = video_dir.join("video.json");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))?;
    let video_id = value["video_id"]
        .as_str()
        .ok_or_else(|| anyhow!("{}: missing video_id", path.display()))?
        .to_string();
    let frame_count = value["frame_count"]
        .as_u64()
        .ok_or_else(|| anyhow!("{}: missing frame_count", path.display()))?;
    Ok((video_id, frame_count))
}

/// Per-clip subtitle files, or a timed-caption file sliced by clip
/// windows, or nothing.
fn load_subtitles(video_dir: &Path, frame_count: u64, config: &EngineConfig) -> Result<Vec<String>> {
    let ranges = builder::segment_video(frame_count, config.frames_per_clip);
    let sub_dir = video_dir.join("subtitles");
    if sub_dir.is_dir() {
        return (0..ranges.len())
            .map(|c| {
                let path = sub_dir.join(format!("clip_{c:04}.txt"));
                match std::fs::read_to_string(&path) {
                    Ok(text) => Ok(text.trim_end().to_string()),
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(String::new()),
                    Err(e) => Err(anyhow!("{}: {e}", path.display())),
                }
            })
            .collect();
    }
    let captions = video_dir.join("captions.json");
    if captions.is_file() {
        let text = std::fs::read_to_string(&captions)
            .with_context(|| format!("reading {}", captions.display()))?;
        let cues: Vec<CaptionCue> = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", captions.display()))?;
        return Ok(builder::slice_timed_captions(&cues, &ranges, config.sample_fps));
    }
    Ok(Vec::new())
}

fn make_backends(
    kind: &BackendKind,
    args: &BackendArgs,
    settings: &BackendSettings,
    config: &EngineConfig,
    sidecar_sources: &[(String, PathBuf)],
) -> Result<Backends> {
    let trace = BackendTrace::new();
    match kind {
        BackendKind::Mock => {
            let mut chat = MockChatBackend::new(config.frames_per_clip, trace.clone());
            for (video_id, path) in sidecar_sources {
                chat.load_sidecar_file(video_id, path)
                    .map_err(|e| anyhow!("loading sidecars for {video_id}: {e}"))?;
            }
            Ok(Backends::new(
                Arc::new(chat),
                Arc::new(MockEmbedBackend::new(trace.clone())),
                trace,
            ))
        }
        BackendKind::Http => {
            let chat_url = args
                .chat_url
                .clone()
                .or_else(|| settings.chat_url.clone())
                .ok_or_else(|| anyhow!("--chat-url is required with the http backend"))?;
            let embed_url = args
                .embed_url
                .clone()
                .or_else(|| settings.embed_url.clone())
                .unwrap_or_else(|| chat_url.clone());
            let chat_model = args
                .chat_model
                .clone()
                .unwrap_or_else(|| settings.chat_model.clone());
            let embed_model = args
                .embed_model
                .clone()
                .unwrap_or_else(|| settings.embed_model.clone());
            let mut chat_config = HttpConfig::new(chat_url, chat_model);
            chat_config.api_key = settings.api_key.clone();
            let mut embed_config = HttpConfig::new(embed_url, embed_model);
            embed_config.api_key = settings.api_key.clone();
            Ok(Backends::new(
                Arc::new(HttpChatBackend::new(chat_config, trace.clone())?),
                Arc::new(HttpEmbedBackend::new(embed_config, trace.clone())?),
                trace,
            ))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_build(
    video_dir: &Path,
    out: &Path,
    force: bool,
    lenient: bool,
    config: &EngineConfig,
    backend_args: &BackendArgs,
    settings: &BackendSettings,
) -> CliResult {
    if out.exists() && !force {
        return Err(CliError::build(anyhow!(
            "{} already exists; pass --force to overwrite",
            out.display()
        )));
    }
    let (video_id, frame_count) = load_video_meta(video_dir).map_err(CliError::build)?;
    let subtitles = load_subtitles(video_dir, frame_count, config).map_err(CliError::build)?;
    let kind = crate::backend_kind_of(backend_args, settings).map_err(CliError::config)?;
    let sidecars = vec![(video_id.clone(), video_dir.join("sidecars.json"))];
    let sidecar_sources = if kind == BackendKind::Mock { sidecars } else { Vec::new() };
    let backends = make_backends(&kind, backend_args, settings, config, &sidecar_sources)
        .map_err(CliError::config)?;
    let graph = builder::build_graph(
        &video_id,
        frame_count,
        &subtitles,
        &backends,
        config,
        BuildOptions { lenient },
    )
    .map_err(|e| CliError::build(anyhow!(e)))?;
    save_graph(&graph, out).map_err(|e| CliError::build(anyhow!(e)))?;
    println!(
        "graph written to {}: {} clips, {} prototypes, {} edges",
        out.display(),
        graph.clips.len(),
        graph.prototypes.len(),
        graph.adjacency.len()
    );
    Ok(())
}

fn parse_options(raw: &[String]) -> Result<Vec<(char, String)>> {
    raw.iter()
        .map(|item| {
            let (letter, text) = item
                .split_once('=')
                .ok_or_else(|| anyhow!("option {item:?} must look like A=text"))?;
            let letter = letter.trim();
            if letter.len() != 1 || !letter.chars().all(|c| c.is_ascii_uppercase()) {
                anyhow::bail!("option letter {letter:?} must be a single uppercase letter");
            }
            Ok((letter.chars().next().expect("checked"), text.trim().to_string()))
        })
        .collect()
}

fn fnv16(text: &str) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

#[allow(clippy::too_many_arguments)]
fn cmd_query(
    graph_path: &Path,
    question: &str,
    raw_options: &[String],
    trace_dir: &Path,
    video_dir: Option<&Path>,
    config: &EngineConfig,
    backend_args: &BackendArgs,
    settings: &BackendSettings,
) -> CliResult {
    let options = parse_options(raw_options).map_err(CliError::config)?;
    let graph: VideoGraph = load_graph(graph_path).map_err(|e| CliError::query(anyhow!(e)))?;
    let kind = crate::backend_kind_of(backend_args, settings).map_err(CliError::config)?;
    let sidecar_sources = match (&kind, video_dir) {
        (BackendKind::Mock, Some(dir)) => vec![(graph.video_id.clone(), dir.join("sidecars.json"))],
        (BackendKind::Mock, None) => {
            return Err(CliError::config(anyhow!(
                "--video-dir (holding sidecars.json) is required with the mock backend"
            )))
        }
        _ => Vec::new(),
    };
    let backends = make_backends(&kind, backend_args, settings, config, &sidecar_sources)
        .map_err(CliError::config)?;
    let trace = generation::answer_question(question, &options, &graph, &backends, config)
        .map_err(|e| CliError::query(anyhow!(e)))?;

    std::fs::create_dir_all(trace_dir)
        .map_err(|e| CliError::query(anyhow!("creating {}: {e}", trace_dir.display())))?;
    let trace_path = trace_dir.join(format!("trace_{}.json", fnv16(question)));
    let mut bytes = serde_json::to_vec_pretty(&trace)
        .map_err(|e| CliError::query(anyhow!(e)))?;
    bytes.push(b'\n');
    std::fs::write(&trace_path, bytes)
        .map_err(|e| CliError::query(anyhow!("writing {}: {e}", trace_path.display())))?;

    match (&trace.parsed_option, &trace.error) {
        (Some(letter), None) => {
            println!("answer: {letter}");
            println!("trace: {}", trace_path.display());
            Ok(())
        }
        (None, None) if options.is_empty() => {
            println!("answer: {}", trace.raw_answer);
            println!("trace: {}", trace_path.display());
            Ok(())
        }
        (_, err) => {
            println!("trace: {}", trace_path.display());
            let message = err
                .as_ref()
                .map(|e| format!("{}: {}", e.stage, e.message))
                .unwrap_or_else(|| "no parsed answer".to_string());
            Err(CliError::query(anyhow!(message)))
        }
    }
}

fn parse_sweep(spec: &str) -> Result<(SweepParameter, Vec<f64>)> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("sweep spec {spec:?} must look like r=1..6 or theta=0.3,0.5"))?;
    let parameter: SweepParameter = name.trim().parse().map_err(|e| anyhow!("{e}"))?;
    let values = values.trim();
    let parsed: Vec<f64> = if let Some((lo, hi)) = values.split_once("..") {
        let lo: i64 = lo.trim().parse().context("sweep range start")?;
        let hi: i64 = hi.trim().parse().context("sweep range end")?;
        if lo > hi {
            anyhow::bail!("sweep range {lo}..{hi} is empty");
        }
        (lo..=hi).map(|v| v as f64).collect()
    } else {
        values
            .split(',')
            .map(|v| v.trim().parse::<f64>().with_context(|| format!("sweep value {v:?}")))
            .collect::<Result<_>>()?
    };
    if parsed.is_empty() {
        anyhow::bail!("sweep spec {spec:?} has no values");
    }
    Ok((parameter, parsed))
}

fn cmd_eval(
    corpus_dir: &Path,
    mode: &str,
    out_dir: &Path,
    sweep_spec: Option<&str>,
    config: &EngineConfig,
) -> CliResult {
    let mode: EvalMode = mode.parse().map_err(|e| CliError::config(anyhow!("{e}")))?;
    let corpus = harness::load_corpus(corpus_dir).map_err(|e| CliError::config(anyhow!(e)))?;
    match sweep_spec {
        None => {
            let report = harness::run_eval(&corpus, mode, config, Some(out_dir))
                .map_err(|e| CliError::query(anyhow!(e)))?;
            println!("{}", harness::eval::render_report(&report));
            println!("report: {}", out_dir.join("report.json").display());
            Ok(())
        }
        Some(spec) => {
            let (parameter, values) = parse_sweep(spec).map_err(CliError::config)?;
            let reports = harness::sweep(&corpus, parameter, &values, mode, config, Some(out_dir))
                .map_err(|e| CliError::query(anyhow!(e)))?;
            println!("| value | accuracy | recall@r |");
            println!("|---|---|---|");
            for (value, report) in &reports {
                println!(
                    "| {value} | {:.3} | {:.3} |",
                    report.overall_accuracy, report.retrieval_recall_at_r
                );
            }
            println!("{} reports under {}", reports.len(), out_dir.display());
            Ok(())
        }
    }
}

fn cmd_inspect(graph_path: &Path) -> CliResult {
    let graph = load_graph(graph_path).map_err(|e| CliError::query(anyhow!(e)))?;
    println!("video: {}", graph.video_id);
    println!(
        "{} clips, {} prototypes, {} edges",
        graph.clips.len(),
        graph.prototypes.len(),
        graph.adjacency.len()
    );
    let mut by_members: Vec<&clipgraph_core::PrototypeEntity> = graph.prototypes.iter().collect();
    by_members.sort_by_key(|p| std::cmp::Reverse(p.member_forms.len()));
    println!("top prototypes by member count:");
    for p in by_members.iter().take(5) {
        println!(
            "  {} ({} members, {} nodes): {}",
            p.prototype_id,
            p.member_forms.len(),
            p.node_set.len(),
            p.canonical_description
        );
    }
    let degrees = graph.degrees();
    let mut by_degree: Vec<(&u32, &usize)> = degrees.iter().collect();
    by_degree.sort_by_key(|(clip, degree)| (std::cmp::Reverse(**degree), **clip));
    println!("top-degree nodes:");
    for (clip, degree) in by_degree.iter().take(5) {
        println!("  clip {clip}: degree {degree}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn option_parsing() {
        let parsed = parse_options(&["A=the plate".into(), "B=the sink".into()]).unwrap();
        assert_eq!(parsed, vec![('A', "the plate".into()), ('B', "the sink".into())]);
        assert!(parse_options(&["AB=bad".into()]).is_err());
        assert!(parse_options(&["noequals".into()]).is_err());
    }

    #[test]
    fn sweep_spec_parsing() {
        let (p, v) = parse_sweep("r=1..6").unwrap();
        assert_eq!(p, SweepParameter::RefineR);
        assert_eq!(v, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (p, v) = parse_sweep("theta=0.3,0.5,0.7").unwrap();
        assert_eq!(p, SweepParameter::Theta);
        assert_eq!(v, vec![0.3, 0.5, 0.7]);
        assert!(parse_sweep("bogus").is_err());
        assert!(parse_sweep("q=1..2").is_err());
    }
}
