//! Final multimodal augmented generation: prompt assembly from refined
//! clips plus aggregated evidence, answer production, MCQ option
//! parsing, and the fallback paths.
//!
//! Every stage of [`answer_question`] is captured in an [`AnswerTrace`],
//! including per-stage backend call counts, so a full pipeline run is
//! auditable and — with mock backends — byte-reproducible.

use std::sync::OnceLock;
use std::time::Instant;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backend::{Backends, ChatRequest, MediaRef, TraceCounts};
use crate::config::{EngineConfig, RefinementStrategy};
use crate::error::{EngineError, Result};
use crate::graph::VideoGraph;
use crate::prompts;
use crate::reasoning::{
    self, AggregatedContext, Subquery, VerificationMatrix,
};
use crate::retrieval::{self, QueryAnalysis, QueryEmbedCache, RankedClip};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// Backend calls attributed to one pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCalls {
    pub stage: String,
    pub chat_calls: u64,
    pub embed_calls: u64,
}

/// The stage that failed and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub message: String,
}

/// Audit record of one question's full pipeline execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerTrace {
    pub trace_schema_version: u32,
    pub video_id: String,
    pub question: String,
    pub options: Vec<(char, String)>,
    pub strategy: RefinementStrategy,
    pub analysis: Option<QueryAnalysis>,
    /// Size of the candidate set before re-ranking and truncation.
    pub candidate_count: usize,
    pub ranked: Vec<RankedClip>,
    pub subqueries: Vec<Subquery>,
    pub matrix: Option<VerificationMatrix>,
    pub refined: Vec<RankedClip>,
    pub context: Option<AggregatedContext>,
    pub final_prompt: String,
    pub media_clips: Vec<u32>,
    pub raw_answer: String,
    pub parsed_option: Option<char>,
    pub fallback_used: bool,
    pub error: Option<StageError>,
    pub stage_calls: Vec<StageCalls>,
    /// Wall-clock per stage; omitted unless timing capture is enabled,
    /// so persisted traces stay byte-stable.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[serde(default)]
    pub timings_ms: Option<Vec<(String, f64)>>,
}

impl AnswerTrace {
    fn new(video_id: &str, question: &str, options: &[(char, String)], config: &EngineConfig) -> Self {
        Self {
            trace_schema_version: TRACE_SCHEMA_VERSION,
            video_id: video_id.to_string(),
            question: question.to_string(),
            options: options.to_vec(),
            strategy: config.refinement_strategy,
            analysis: None,
            candidate_count: 0,
            ranked: Vec::new(),
            subqueries: Vec::new(),
            matrix: None,
            refined: Vec::new(),
            context: None,
            final_prompt: String::new(),
            media_clips: Vec::new(),
            raw_answer: String::new(),
            parsed_option: None,
            fallback_used: false,
            error: None,
            stage_calls: Vec::new(),
            timings_ms: None,
        }
    }

    pub fn total_calls(&self) -> TraceCounts {
        TraceCounts {
            chat_calls: self.stage_calls.iter().map(|s| s.chat_calls).sum(),
            embed_calls: self.stage_calls.iter().map(|s| s.embed_calls).sum(),
        }
    }
}

/// Assemble the final multimodal request: evidence summary and findings
/// table first, then clip markers, the question, the lettered options,
/// and the answer-format instruction. Media refs carry the refined clips
/// in temporal order.
pub fn assemble_prompt(
    question: &str,
    options: &[(char, String)],
    refined: &[RankedClip],
    context: Option<&AggregatedContext>,
    graph: &VideoGraph,
) -> Result<ChatRequest> {
    let mut sections: Vec<String> = Vec::new();
    sections.push(
        "Use the provided video clips and any verified evidence to answer the question."
            .to_string(),
    );
    if let Some(ctx) = context {
        sections.push(format!("Evidence summary:\n{}", ctx.summary_text));
        sections.push(format!(
            "Verified findings:\n{}",
            reasoning::render_findings_table(&ctx.per_clip_findings, &ctx.totals)
        ));
    }

    let mut clip_lines: Vec<String> = vec!["Clips:".to_string()];
    let mut media = Vec::with_capacity(refined.len());
    for r in refined {
        let clip = graph.clip(r.clip_index).ok_or_else(|| {
            EngineError::Invariant(format!("refined clip {} not in graph", r.clip_index))
        })?;
        clip_lines.push(format!(
            "[Clip {} | frames {}..{})",
            clip.clip_index, clip.frame_start, clip.frame_end
        ));
        if graph.config_snapshot.include_subtitles_in_prompt && !clip.subtitle_text.is_empty() {
            clip_lines.push(format!("Subtitle: {}", clip.subtitle_text));
        }
        media.push(MediaRef {
            video_id: graph.video_id.clone(),
            frame_start: clip.frame_start,
            frame_end: clip.frame_end,
        });
    }
    if refined.is_empty() {
        clip_lines.push("(none)".to_string());
    }
    sections.push(clip_lines.join("\n"));
    sections.push(format!("Question: {question}"));
    if options.is_empty() {
        sections.push("Answer concisely in free text.".to_string());
    } else {
        sections.push(format!("Options:\n{}", prompts::render_candidates(options)));
        sections.push("Answer with the option letter only.".to_string());
    }
    Ok(ChatRequest::text(sections.join("\n\n")).with_media(media)?)
}

fn standalone_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*([A-Za-z])\s*$").expect("valid regex"))
}

fn answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)answer\s*[:\-]\s*([A-Za-z])\b").expect("valid regex"))
}

fn paren_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([A-Za-z])\)").expect("valid regex"))
}

fn leading_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*([A-Za-z])[.)]").expect("valid regex"))
}

/// Parse the chosen option letter out of a raw answer. Patterns tried in
/// order: standalone letter, `Answer: X`, `(X)`, and `X.` at the start;
/// all case-insensitive and restricted to the question's option letters.
pub fn parse_mcq_answer(raw: &str, letters: &[char]) -> Result<char> {
    if letters.is_empty() {
        return Err(EngineError::AnswerParse("no option letters given".into()));
    }
    for re in [standalone_re(), answer_re(), paren_re(), leading_re()] {
        if let Some(cap) = re.captures(raw) {
            let letter = cap[1].chars().next().expect("single char group");
            let upper = letter.to_ascii_uppercase();
            if letters.contains(&upper) {
                return Ok(upper);
            }
        }
    }
    Err(EngineError::AnswerParse(format!(
        "no option letter found in {raw:?}"
    )))
}

fn uniform_fallback(graph: &VideoGraph, max_r: usize) -> Vec<RankedClip> {
    retrieval::uniform_stride_clips(graph.clips.len() as u32, max_r)
        .into_iter()
        .map(|clip_index| RankedClip {
            clip_index,
            score: 0.0,
            matched_prototypes: Vec::new(),
            per_keyword_scores: Vec::new(),
        })
        .collect()
}

fn top_ranked_fallback(ranked: &[RankedClip], max_r: usize) -> Vec<RankedClip> {
    let mut clips: Vec<RankedClip> = ranked.iter().take(max_r).cloned().collect();
    clips.sort_by_key(|c| c.clip_index);
    clips
}

struct StageRecorder<'a> {
    backends: &'a Backends,
    record_timings: bool,
    stage_calls: Vec<StageCalls>,
    timings: Vec<(String, f64)>,
    last_counts: TraceCounts,
    last_instant: Instant,
}

impl<'a> StageRecorder<'a> {
    fn new(backends: &'a Backends, record_timings: bool) -> Self {
        Self {
            backends,
            record_timings,
            stage_calls: Vec::new(),
            timings: Vec::new(),
            last_counts: backends.trace.counts(),
            last_instant: Instant::now(),
        }
    }

    fn finish_stage(&mut self, stage: &str) {
        let now_counts = self.backends.trace.counts();
        let delta = now_counts.delta_since(self.last_counts);
        self.stage_calls.push(StageCalls {
            stage: stage.to_string(),
            chat_calls: delta.chat_calls,
            embed_calls: delta.embed_calls,
        });
        if self.record_timings {
            self.timings
                .push((stage.to_string(), self.last_instant.elapsed().as_secs_f64() * 1e3));
        }
        self.last_counts = now_counts;
        self.last_instant = Instant::now();
    }

    fn install(self, trace: &mut AnswerTrace) {
        trace.stage_calls = self.stage_calls;
        if self.record_timings {
            trace.timings_ms = Some(self.timings);
        }
    }
}

/// Execute the full pipeline for one question. Stage failures are
/// captured in the returned trace rather than propagated, so a batch of
/// questions never aborts on one bad response.
pub fn answer_question(
    question: &str,
    options: &[(char, String)],
    graph: &VideoGraph,
    backends: &Backends,
    config: &EngineConfig,
) -> Result<AnswerTrace> {
    config.validate()?;
    let mut trace = AnswerTrace::new(&graph.video_id, question, options, config);
    let mut recorder = StageRecorder::new(backends, config.record_timings);

    macro_rules! fail {
        ($recorder:expr, $trace:expr, $stage:expr, $err:expr) => {{
            $recorder.finish_stage($stage);
            $trace.error = Some(StageError {
                stage: $stage.to_string(),
                message: $err.to_string(),
            });
            $recorder.install(&mut $trace);
            return Ok($trace);
        }};
    }

    // Keyword / task analysis.
    let analysis = match retrieval::analyze_query(question, options, backends.chat.as_ref()) {
        Ok(a) => a,
        Err(e) => fail!(recorder, trace, "analyze", e),
    };
    trace.analysis = Some(analysis.clone());
    recorder.finish_stage("analyze");

    // Retrieval, or the uniform-stride fallback for global questions.
    let mut refined: Vec<RankedClip>;
    let mut context: Option<AggregatedContext> = None;
    if analysis.global {
        refined = uniform_fallback(graph, config.refine_max_r);
        trace.fallback_used = true;
        recorder.finish_stage("global_fallback");
    } else {
        let mut cache = QueryEmbedCache::new(backends.embed.as_ref());
        let candidates = match retrieval::retrieve_candidates(
            &analysis,
            graph,
            config.retrieval_threshold,
            &mut cache,
        ) {
            Ok(c) => c,
            Err(e) => fail!(recorder, trace, "retrieve", e),
        };
        trace.candidate_count = candidates.len();
        recorder.finish_stage("retrieve");

        if candidates.is_empty() {
            refined = uniform_fallback(graph, config.refine_max_r);
            trace.fallback_used = true;
            recorder.finish_stage("empty_retrieval_fallback");
        } else {
            let ranked = match retrieval::rerank(
                &candidates,
                &analysis,
                graph,
                config.retrieval_top_n,
                &mut cache,
            ) {
                Ok(r) => r,
                Err(e) => fail!(recorder, trace, "rerank", e),
            };
            let ranked =
                retrieval::apply_time_hint(ranked, analysis.time, graph.clips.len() as u32);
            trace.ranked = ranked.clone();
            recorder.finish_stage("rerank");

            match config.refinement_strategy {
                RefinementStrategy::None => {
                    refined = top_ranked_fallback(&ranked, config.refine_max_r);
                    recorder.finish_stage("select_top_r");
                }
                RefinementStrategy::Confidence => {
                    match reasoning::confidence_refine(
                        &ranked,
                        question,
                        graph,
                        backends.chat.as_ref(),
                        config.refine_max_r,
                    ) {
                        Ok(r) => refined = r,
                        Err(e) => fail!(recorder, trace, "confidence_refine", e),
                    }
                    recorder.finish_stage("confidence_refine");
                }
                RefinementStrategy::Structured => {
                    let subqueries = match reasoning::generate_subqueries(
                        question,
                        options,
                        backends.chat.as_ref(),
                    ) {
                        Ok(s) => s,
                        Err(e) => fail!(recorder, trace, "subqueries", e),
                    };
                    trace.subqueries = subqueries.clone();
                    recorder.finish_stage("subqueries");

                    let matrix = match reasoning::verify_clips(
                        graph,
                        &ranked,
                        &subqueries,
                        backends.chat.as_ref(),
                        config.verify_concurrency,
                    ) {
                        Ok(m) => m,
                        Err(e) => fail!(recorder, trace, "verify", e),
                    };
                    trace.matrix = Some(matrix.clone());
                    recorder.finish_stage("verify");

                    refined = match reasoning::refine(&ranked, &matrix, config.refine_max_r) {
                        Ok(r) => r,
                        Err(e) => fail!(recorder, trace, "refine", e),
                    };
                    recorder.finish_stage("refine");

                    if refined.is_empty() {
                        // Refinement eliminated everything; fall back to
                        // the top-ranked clips without findings.
                        refined = top_ranked_fallback(&ranked, config.refine_max_r);
                        trace.fallback_used = true;
                        recorder.finish_stage("empty_refined_fallback");
                    } else {
                        match reasoning::aggregate(
                            question,
                            &refined,
                            &matrix,
                            Some(backends.chat.as_ref()),
                        ) {
                            Ok(ctx) => context = Some(ctx),
                            Err(e) => fail!(recorder, trace, "aggregate", e),
                        }
                        recorder.finish_stage("aggregate");
                    }
                }
            }
        }
    }
    trace.refined = refined.clone();
    trace.context = context.clone();

    // Final multimodal generation.
    let request = match assemble_prompt(question, options, &refined, context.as_ref(), graph) {
        Ok(r) => r,
        Err(e) => fail!(recorder, trace, "assemble", e),
    };
    trace.final_prompt = request.prompt_text.clone();
    trace.media_clips = refined.iter().map(|c| c.clip_index).collect();
    let raw_answer = match backends.chat.chat(&request) {
        Ok(a) => a,
        Err(e) => fail!(recorder, trace, "generate", e),
    };
    trace.raw_answer = raw_answer.clone();
    recorder.finish_stage("generate");

    if !options.is_empty() {
        let letters: Vec<char> = options.iter().map(|(l, _)| *l).collect();
        match parse_mcq_answer(&raw_answer, &letters) {
            Ok(letter) => trace.parsed_option = Some(letter),
            Err(e) => {
                trace.error = Some(StageError {
                    stage: "parse_answer".to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    recorder.install(&mut trace);
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::PrototypeId;

    #[test]
    fn mcq_patterns_in_order() {
        let letters = ['A', 'B', 'C', 'D'];
        assert_eq!(parse_mcq_answer("B", &letters).unwrap(), 'B');
        assert_eq!(parse_mcq_answer("Answer: B", &letters).unwrap(), 'B');
        assert_eq!(parse_mcq_answer("(c) the plate", &letters).unwrap(), 'C');
        assert_eq!(parse_mcq_answer("D. because it sank", &letters).unwrap(), 'D');
        assert_eq!(parse_mcq_answer("  a  ", &letters).unwrap(), 'A');
    }

    #[test]
    fn unparseable_answer_is_an_error() {
        let letters = ['A', 'B', 'C', 'D'];
        assert!(parse_mcq_answer("The video shows a boat.", &letters).is_err());
        // A letter outside the option set does not count.
        assert!(parse_mcq_answer("Answer: F", &letters).is_err());
        assert!(parse_mcq_answer("x", &[]).is_err());
    }

    fn tiny_graph() -> VideoGraph {
        let mut g = VideoGraph::new("v", EngineConfig::default());
        g.clips = vec![
            crate::graph::ClipRecord {
                clip_index: 0,
                frame_start: 0,
                frame_end: 64,
                subtitle_text: "hello world".into(),
                extraction: Some(Default::default()),
            },
            crate::graph::ClipRecord {
                clip_index: 1,
                frame_start: 64,
                frame_end: 128,
                subtitle_text: String::new(),
                extraction: Some(Default::default()),
            },
        ];
        g
    }

    fn ranked_clip(clip_index: u32) -> RankedClip {
        RankedClip {
            clip_index,
            score: 0.5,
            matched_prototypes: vec![PrototypeId(0)],
            per_keyword_scores: vec![0.5],
        }
    }

    #[test]
    fn prompt_sections_are_ordered() {
        let graph = tiny_graph();
        let ctx = AggregatedContext {
            summary_text: "summary here".into(),
            per_clip_findings: vec![crate::reasoning::Finding {
                clip_index: 0,
                subquery: "Is there a laptop open?".into(),
                value: 1.0,
            }],
            totals: vec![],
        };
        let options = vec![('A', "yes".to_string()), ('B', "no".to_string())];
        let req = assemble_prompt(
            "Did I open the laptop?",
            &options,
            &[ranked_clip(0), ranked_clip(1)],
            Some(&ctx),
            &graph,
        )
        .unwrap();
        let p = &req.prompt_text;
        let evidence_at = p.find("Evidence summary:").unwrap();
        let findings_at = p.find("Verified findings:").unwrap();
        let clips_at = p.find("Clips:").unwrap();
        let question_at = p.find("Question:").unwrap();
        let options_at = p.find("Options:").unwrap();
        let instruction_at = p.find("Answer with the option letter").unwrap();
        assert!(evidence_at < findings_at);
        assert!(findings_at < clips_at);
        assert!(clips_at < question_at);
        assert!(question_at < options_at);
        assert!(options_at < instruction_at);
        assert!(p.contains("| 0 | Is there a laptop open? | yes |"));
        assert!(p.contains("[Clip 0 | frames 0..64)"));
        assert!(p.contains("Subtitle: hello world"));
        assert_eq!(req.media_refs.len(), 2);
    }

    #[test]
    fn open_ended_prompt_has_no_option_block() {
        let graph = tiny_graph();
        let req = assemble_prompt("What happens?", &[], &[ranked_clip(0)], None, &graph).unwrap();
        assert!(!req.prompt_text.contains("Options:"));
        assert!(req.prompt_text.contains("Answer concisely in free text."));
    }

    #[test]
    fn fallback_prompt_has_no_findings_table() {
        let graph = tiny_graph();
        let req = assemble_prompt(
            "Did it happen?",
            &[('A', "yes".into())],
            &[ranked_clip(1)],
            None,
            &graph,
        )
        .unwrap();
        assert!(!req.prompt_text.contains("Verified findings:"));
        assert_eq!(req.media_refs[0].frame_start, 64);
    }
}
