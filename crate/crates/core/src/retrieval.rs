//! Online query-dependent retrieval: keyword/task analysis, graph-based
//! candidate collection, similarity re-ranking, and the time-hint bias.
//!
//! Everything here is a pure read over an immutable graph; per-query
//! embedding caches are query-local, so concurrent queries are safe.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{ChatBackend, ChatRequest, EmbedBackend, EmbedRequest, ResponseFormatHint};
use crate::error::{EngineError, Result};
use crate::graph::{PrototypeId, VideoGraph};
use crate::prompts;
use crate::similarity::cosine_similarity;

/// Which part of the video the question points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeHint {
    Begin,
    End,
    #[default]
    None,
}

/// Auxiliary tool the question may call for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolHint {
    ObjectCounting,
    ActionCounting,
    Order,
    #[default]
    None,
}

/// Parsed keyword/task analysis of one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryAnalysis {
    pub keywords: Vec<String>,
    pub multiple: bool,
    pub time: TimeHint,
    pub tool: ToolHint,
    pub candidates_necessary: bool,
    pub global: bool,
}

/// One retrieved clip with its re-ranking state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedClip {
    pub clip_index: u32,
    /// Mean of the per-keyword scores; 0 until re-ranked.
    pub score: f64,
    /// Prototypes that witnessed this clip's retrieval.
    pub matched_prototypes: Vec<PrototypeId>,
    #[serde(default)]
    pub per_keyword_scores: Vec<f64>,
}

fn parse_yes_no(value: &Value, field: &str) -> Result<bool> {
    match value {
        Value::Bool(b) => Ok(*b),
        Value::String(s) => match s.trim().to_lowercase().as_str() {
            "yes" | "true" => Ok(true),
            "no" | "false" => Ok(false),
            other => {
                log::warn!("{field}: unrecognized value {other:?}, defaulting to no");
                Ok(false)
            }
        },
        Value::Null => Ok(false),
        other => Err(EngineError::Analysis(format!(
            "{field}: expected yes/no, got {other}"
        ))),
    }
}

fn normalize_enum(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.trim().to_lowercase().replace([' ', '-'], "_")),
        Value::Null => Some("none".into()),
        _ => None,
    }
}

/// Parse the analysis JSON out of a model response. Yes/no strings map
/// to booleans; unknown enum values map to their `none` variants with a
/// warning; missing keywords are only tolerated for global questions.
pub fn parse_analysis_response(text: &str) -> Result<QueryAnalysis> {
    let block = crate::parsing::extract_json_block(text)
        .ok_or_else(|| EngineError::Analysis(format!("no JSON in response: {text:?}")))?;
    let value: Value = serde_json::from_str(block)
        .map_err(|e| EngineError::Analysis(format!("invalid JSON: {e}; raw: {text:?}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| EngineError::Analysis(format!("not an object: {text:?}")))?;

    let global = obj
        .get("global")
        .map(|v| parse_yes_no(v, "global"))
        .transpose()?
        .unwrap_or(false);

    let keywords: Vec<String> = match obj.get("keywords") {
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(Value::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect(),
        Some(Value::String(s)) if !s.trim().is_empty() => vec![s.trim().to_string()],
        _ => Vec::new(),
    };
    if keywords.is_empty() && !global {
        return Err(EngineError::Analysis(format!(
            "keywords missing for a non-global question; raw: {text:?}"
        )));
    }

    let time = match obj.get("time").and_then(normalize_enum).as_deref() {
        Some("begin") => TimeHint::Begin,
        Some("end") => TimeHint::End,
        Some("none") | None => TimeHint::None,
        Some(other) => {
            log::warn!("time: unrecognized value {other:?}, using none");
            TimeHint::None
        }
    };
    let tool = match obj.get("tool").and_then(normalize_enum).as_deref() {
        Some("object_counting") => ToolHint::ObjectCounting,
        Some("action_counting") => ToolHint::ActionCounting,
        Some("order") => ToolHint::Order,
        Some("none") | None => ToolHint::None,
        Some(other) => {
            log::warn!("tool: unrecognized value {other:?}, using none");
            ToolHint::None
        }
    };

    Ok(QueryAnalysis {
        keywords,
        multiple: obj
            .get("multiple")
            .map(|v| parse_yes_no(v, "multiple"))
            .transpose()?
            .unwrap_or(false),
        time,
        tool,
        candidates_necessary: obj
            .get("candidates_necessary")
            .map(|v| parse_yes_no(v, "candidates_necessary"))
            .transpose()?
            .unwrap_or(false),
        global,
    })
}

/// Run the keyword/task-identification prompt for a question.
pub fn analyze_query(
    question: &str,
    options: &[(char, String)],
    chat: &dyn ChatBackend,
) -> Result<QueryAnalysis> {
    if question.trim().is_empty() {
        return Err(EngineError::Analysis("question must be non-empty".into()));
    }
    let prompt = prompts::query_analysis_prompt(question, &prompts::render_candidates(options));
    let response = chat
        .chat(&ChatRequest::text(prompt).with_format(ResponseFormatHint::Json))?;
    parse_analysis_response(&response)
}

/// Query-local embedding cache; texts are embedded once per query.
pub struct QueryEmbedCache<'a> {
    backend: &'a dyn EmbedBackend,
    cache: BTreeMap<String, Vec<f64>>,
}

impl<'a> QueryEmbedCache<'a> {
    pub fn new(backend: &'a dyn EmbedBackend) -> Self {
        Self {
            backend,
            cache: BTreeMap::new(),
        }
    }

    /// Embed every not-yet-cached text in one batched call.
    pub fn warm<S: AsRef<str>>(&mut self, texts: impl IntoIterator<Item = S>) -> Result<()> {
        let missing: Vec<String> = {
            let mut seen = std::collections::BTreeSet::new();
            texts
                .into_iter()
                .map(|t| t.as_ref().to_string())
                .filter(|t| !t.is_empty() && !self.cache.contains_key(t) && seen.insert(t.clone()))
                .collect()
        };
        if missing.is_empty() {
            return Ok(());
        }
        let vectors = self.backend.embed(&EmbedRequest::new(missing.clone())?)?;
        for (text, vector) in missing.into_iter().zip(vectors) {
            self.cache.insert(text, vector);
        }
        Ok(())
    }

    pub fn get(&self, text: &str) -> Option<&[f64]> {
        self.cache.get(text).map(Vec::as_slice)
    }
}

/// Collect the candidate set: every node of every prototype whose
/// canonical-description embedding clears the threshold against some
/// keyword. Candidates are unscored; witnesses are recorded.
pub fn retrieve_candidates(
    analysis: &QueryAnalysis,
    graph: &VideoGraph,
    threshold: f64,
    cache: &mut QueryEmbedCache,
) -> Result<Vec<RankedClip>> {
    cache.warm(analysis.keywords.iter())?;
    let mut witnesses: BTreeMap<u32, Vec<PrototypeId>> = BTreeMap::new();
    for keyword in &analysis.keywords {
        let Some(kv) = cache.get(keyword) else { continue };
        for p in &graph.prototypes {
            let Some(pv) = p.embedding.as_deref() else { continue };
            if cosine_similarity(kv, pv)? > threshold {
                for &node in &p.node_set {
                    let list = witnesses.entry(node).or_default();
                    if !list.contains(&p.prototype_id) {
                        list.push(p.prototype_id);
                    }
                }
            }
        }
    }
    Ok(witnesses
        .into_iter()
        .map(|(clip_index, mut matched)| {
            matched.sort();
            RankedClip {
                clip_index,
                score: 0.0,
                matched_prototypes: matched,
                per_keyword_scores: Vec::new(),
            }
        })
        .collect())
}

/// Re-rank candidates by the mean, over keywords, of the best cosine
/// between the keyword and any info string of the node; descending, ties
/// toward the lower clip index, truncated to `top_n`.
pub fn rerank(
    candidates: &[RankedClip],
    analysis: &QueryAnalysis,
    graph: &VideoGraph,
    top_n: usize,
    cache: &mut QueryEmbedCache,
) -> Result<Vec<RankedClip>> {
    let extended = graph.config_snapshot.rerank_extended_info;
    let mut node_infos: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for c in candidates {
        let Some(clip) = graph.clip(c.clip_index) else {
            return Err(EngineError::Invariant(format!(
                "candidate clip {} not in graph",
                c.clip_index
            )));
        };
        let mut infos: Vec<&str> = clip
            .extraction
            .as_ref()
            .map(|e| e.info_strings(extended))
            .unwrap_or_default();
        if !clip.subtitle_text.is_empty() {
            infos.push(clip.subtitle_text.as_str());
        }
        node_infos.insert(c.clip_index, infos);
    }
    cache.warm(analysis.keywords.iter())?;
    cache.warm(node_infos.values().flatten().copied())?;

    let mut ranked: Vec<RankedClip> = Vec::with_capacity(candidates.len());
    for c in candidates {
        let infos = &node_infos[&c.clip_index];
        let mut per_keyword = Vec::with_capacity(analysis.keywords.len());
        for keyword in &analysis.keywords {
            let kv = cache
                .get(keyword)
                .ok_or_else(|| EngineError::Analysis(format!("keyword {keyword:?} not embedded")))?;
            let mut best = 0.0f64;
            for info in infos.iter() {
                if let Some(iv) = cache.get(info) {
                    best = best.max(cosine_similarity(kv, iv)?);
                }
            }
            per_keyword.push(best);
        }
        let score = if per_keyword.is_empty() {
            0.0
        } else {
            per_keyword.iter().sum::<f64>() / per_keyword.len() as f64
        };
        ranked.push(RankedClip {
            clip_index: c.clip_index,
            score,
            matched_prototypes: c.matched_prototypes.clone(),
            per_keyword_scores: per_keyword,
        });
    }
    sort_ranked(&mut ranked);
    ranked.truncate(top_n);
    Ok(ranked)
}

fn sort_ranked(ranked: &mut [RankedClip]) {
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.clip_index.cmp(&b.clip_index))
    });
}

/// Bias scores toward the hinted quarter of the video: clips outside the
/// first (begin) or last (end) quartile of clip indices have their
/// scores halved, then the list is re-sorted.
pub fn apply_time_hint(mut ranked: Vec<RankedClip>, hint: TimeHint, clip_count: u32) -> Vec<RankedClip> {
    if hint == TimeHint::None || clip_count == 0 {
        return ranked;
    }
    let quartile = clip_count.div_ceil(4);
    for clip in &mut ranked {
        let inside = match hint {
            TimeHint::Begin => clip.clip_index < quartile,
            TimeHint::End => clip.clip_index >= clip_count.saturating_sub(quartile),
            TimeHint::None => true,
        };
        if !inside {
            clip.score *= 0.5;
        }
    }
    sort_ranked(&mut ranked);
    ranked
}

/// Evenly strided clip selection capped at `max_clips`: the fallback for
/// global questions and empty retrievals.
pub fn uniform_stride_clips(clip_count: u32, max_clips: usize) -> Vec<u32> {
    if clip_count == 0 || max_clips == 0 {
        return Vec::new();
    }
    let stride = (clip_count as usize).div_ceil(max_clips) as u32;
    (0..clip_count)
        .step_by(stride as usize)
        .take(max_clips)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MockChatBackend, MockEmbedBackend, ScriptedChatBackend};
    use crate::backend::{BackendTrace, Backends};
    use crate::builder::{build_graph, BuildOptions};
    use crate::config::EngineConfig;
    use std::sync::Arc;

    #[test]
    fn parses_the_reference_analysis_shape() {
        let raw = r#"{"multiple":"no","keywords":["man in black"],"time":"begin","tool":"none","candidates_necessary":"yes","global":"yes"}"#;
        let a = parse_analysis_response(raw).unwrap();
        assert_eq!(a.keywords, vec!["man in black"]);
        assert!(!a.multiple);
        assert_eq!(a.time, TimeHint::Begin);
        assert_eq!(a.tool, ToolHint::None);
        assert!(a.candidates_necessary);
        assert!(a.global);
    }

    #[test]
    fn enum_values_are_normalized() {
        let raw = r#"{"multiple":"no","keywords":["x"],"time":"none","tool":"object counting","candidates_necessary":"no","global":"no"}"#;
        let a = parse_analysis_response(raw).unwrap();
        assert_eq!(a.tool, ToolHint::ObjectCounting);
        // Unknown enum value maps to none with a warning.
        let raw = r#"{"keywords":["x"],"time":"middle","tool":"somethingelse","global":"no"}"#;
        let a = parse_analysis_response(raw).unwrap();
        assert_eq!(a.time, TimeHint::None);
        assert_eq!(a.tool, ToolHint::None);
    }

    #[test]
    fn missing_keywords_without_global_is_an_error() {
        let raw = r#"{"multiple":"no","time":"none","tool":"none","global":"no"}"#;
        assert!(parse_analysis_response(raw).is_err());
    }

    #[test]
    fn null_tool_is_tolerated() {
        let raw = r#"{"keywords":["x"],"tool":null,"global":"no"}"#;
        let a = parse_analysis_response(raw).unwrap();
        assert_eq!(a.tool, ToolHint::None);
    }

    #[test]
    fn analyze_query_uses_the_chat_backend() {
        let trace = BackendTrace::new();
        let chat = ScriptedChatBackend::new(
            vec![r#"{"keywords": ["laptop"], "global": "no"}"#],
            trace.clone(),
        );
        let a = analyze_query("Did I open the laptop?", &[], &chat).unwrap();
        assert_eq!(a.keywords, vec!["laptop"]);
        assert_eq!(trace.counts().chat_calls, 1);
    }

    fn test_graph(entity_descs: &[(u32, &str, &str)]) -> (VideoGraph, Backends) {
        let trace = BackendTrace::new();
        let mut chat = MockChatBackend::new(4, trace.clone());
        let max_clip = entity_descs.iter().map(|(c, _, _)| *c).max().unwrap_or(0);
        for clip in 0..=max_clip {
            let entities: Vec<serde_json::Value> = entity_descs
                .iter()
                .filter(|(c, _, _)| *c == clip)
                .map(|(_, name, desc)| {
                    serde_json::json!({"entity name": name, "description": desc})
                })
                .collect();
            chat.insert_sidecar(
                "v",
                clip,
                &serde_json::json!({"entities": entities, "actions": [], "scenes": []}),
            )
            .unwrap();
        }
        let backends = Backends::new(
            Arc::new(chat),
            Arc::new(MockEmbedBackend::new(trace.clone())),
            trace,
        );
        let config = EngineConfig {
            frames_per_clip: 4,
            ..Default::default()
        };
        let graph = build_graph(
            "v",
            u64::from(max_clip + 1) * 4,
            &[],
            &backends,
            &config,
            BuildOptions::default(),
        )
        .unwrap();
        (graph, backends)
    }

    fn analysis_with_keywords(keywords: &[&str]) -> QueryAnalysis {
        QueryAnalysis {
            keywords: keywords.iter().map(|s| s.to_string()).collect(),
            multiple: false,
            time: TimeHint::None,
            tool: ToolHint::None,
            candidates_necessary: false,
            global: false,
        }
    }

    #[test]
    fn exact_keyword_retrieves_all_prototype_nodes() {
        let (graph, backends) = test_graph(&[
            (0, "plate", "white ceramic plate"),
            (1, "plate", "white ceramic plate"),
            (2, "kettle", "copper kettle stove"),
        ]);
        let analysis = analysis_with_keywords(&["white ceramic plate"]);
        let mut cache = QueryEmbedCache::new(backends.embed.as_ref());
        let candidates = retrieve_candidates(&analysis, &graph, 0.5, &mut cache).unwrap();
        let clips: Vec<u32> = candidates.iter().map(|c| c.clip_index).collect();
        assert_eq!(clips, vec![0, 1]);
        assert!(candidates.iter().all(|c| !c.matched_prototypes.is_empty()));
    }

    #[test]
    fn disjoint_keyword_retrieves_nothing() {
        let (graph, backends) = test_graph(&[(0, "plate", "white ceramic plate")]);
        let analysis = analysis_with_keywords(&["zebra savanna grass"]);
        let mut cache = QueryEmbedCache::new(backends.embed.as_ref());
        let candidates = retrieve_candidates(&analysis, &graph, 0.5, &mut cache).unwrap();
        assert!(candidates.is_empty());
    }

    #[test]
    fn keyword_straddles_the_threshold_between_prototypes() {
        let (graph, backends) = test_graph(&[
            (0, "laptop", "a black laptop on the desk"),
            (1, "sink", "a kitchen sink"),
        ]);
        // Pinned mock cosines: "black laptop" vs the laptop prototype is
        // 2/sqrt(2*6) ~= 0.577 > 0.5; vs the sink prototype it is 0.
        let sim_laptop =
            crate::backend::mock::mock_cosine("black laptop", "a black laptop on the desk")
                .unwrap();
        let sim_sink = crate::backend::mock::mock_cosine("black laptop", "a kitchen sink").unwrap();
        approx::assert_abs_diff_eq!(sim_laptop, 2.0 / 12.0f64.sqrt(), epsilon = 1e-9);
        approx::assert_abs_diff_eq!(sim_sink, 0.0, epsilon = 1e-9);
        assert!(sim_laptop > 0.5 && sim_sink < 0.5);

        let analysis = analysis_with_keywords(&["black laptop"]);
        let mut cache = QueryEmbedCache::new(backends.embed.as_ref());
        let candidates = retrieve_candidates(&analysis, &graph, 0.5, &mut cache).unwrap();
        let clips: Vec<u32> = candidates.iter().map(|c| c.clip_index).collect();
        assert_eq!(clips, vec![0]);
    }

    #[test]
    fn rerank_prefers_verbatim_over_partial_overlap() {
        let (graph, backends) = test_graph(&[
            (0, "laptop", "black laptop desk office"),
            (1, "laptop", "black laptop on the desk near the window"),
        ]);
        let analysis = analysis_with_keywords(&["black laptop desk office"]);
        let mut cache = QueryEmbedCache::new(backends.embed.as_ref());
        let candidates = retrieve_candidates(&analysis, &graph, 0.3, &mut cache).unwrap();
        let ranked = rerank(&candidates, &analysis, &graph, 20, &mut cache).unwrap();
        assert_eq!(ranked[0].clip_index, 0);
        approx::assert_abs_diff_eq!(ranked[0].score, 1.0, epsilon = 1e-9);
        assert!(ranked[1].score < 1.0);
        assert_eq!(ranked[0].per_keyword_scores.len(), 1);
    }

    #[test]
    fn rerank_truncates_to_top_n() {
        let pairs: Vec<(u32, &str, &str)> =
            (0..25).map(|i| (i, "plate", "white ceramic plate")).collect();
        let (graph, backends) = test_graph(&pairs);
        let analysis = analysis_with_keywords(&["white ceramic plate"]);
        let mut cache = QueryEmbedCache::new(backends.embed.as_ref());
        let candidates = retrieve_candidates(&analysis, &graph, 0.5, &mut cache).unwrap();
        assert_eq!(candidates.len(), 25);
        let ranked = rerank(&candidates, &analysis, &graph, 20, &mut cache).unwrap();
        assert_eq!(ranked.len(), 20);
        // Ties break toward the lower clip index.
        let clips: Vec<u32> = ranked.iter().map(|c| c.clip_index).collect();
        assert_eq!(clips, (0..20).collect::<Vec<u32>>());
    }

    #[test]
    fn single_candidate_survives_rerank() {
        let (graph, backends) = test_graph(&[(0, "plate", "white ceramic plate")]);
        let analysis = analysis_with_keywords(&["white ceramic plate"]);
        let mut cache = QueryEmbedCache::new(backends.embed.as_ref());
        let candidates = retrieve_candidates(&analysis, &graph, 0.5, &mut cache).unwrap();
        let ranked = rerank(&candidates, &analysis, &graph, 20, &mut cache).unwrap();
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].clip_index, 0);
    }

    fn flat_ranked(clips: &[u32]) -> Vec<RankedClip> {
        clips
            .iter()
            .map(|&clip_index| RankedClip {
                clip_index,
                score: 1.0,
                matched_prototypes: vec![PrototypeId(0)],
                per_keyword_scores: vec![1.0],
            })
            .collect()
    }

    #[test]
    fn time_hint_none_is_identity() {
        let ranked = flat_ranked(&[2, 28]);
        let out = apply_time_hint(ranked.clone(), TimeHint::None, 30);
        assert_eq!(out, ranked);
    }

    #[test]
    fn begin_hint_promotes_early_clips() {
        let out = apply_time_hint(flat_ranked(&[2, 28]), TimeHint::Begin, 30);
        assert_eq!(out[0].clip_index, 2);
        approx::assert_abs_diff_eq!(out[1].score, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn end_hint_on_single_clip_video_is_identity() {
        let ranked = flat_ranked(&[0]);
        let out = apply_time_hint(ranked.clone(), TimeHint::End, 1);
        assert_eq!(out, ranked);
    }

    #[test]
    fn uniform_stride_selection() {
        assert_eq!(uniform_stride_clips(10, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(uniform_stride_clips(3, 5), vec![0, 1, 2]);
        assert_eq!(uniform_stride_clips(11, 5), vec![0, 3, 6, 9]);
        assert!(uniform_stride_clips(0, 5).is_empty());
    }
}
