//! Offline, query-independent graph construction: clip segmentation,
//! extraction orchestration, greedy entity merging, and edge wiring.
//!
//! Extraction calls fan out across clips, but merge outcomes are applied
//! strictly in (clip order, extraction order) by a single writer, so a
//! build is reproducible regardless of scheduling.

use rayon::prelude::*;
use serde_json::Value;

use crate::backend::{Backends, ChatBackend, ChatRequest, EmbedRequest, MediaRef, ResponseFormatHint};
use crate::config::EngineConfig;
use crate::error::{EngineError, Result};
use crate::graph::{
    edge, merge_text, ActionMention, ClipRecord, Edge, EntityMention, ExtractionRecord,
    PrototypeEntity, PrototypeId, SceneMention, VideoGraph,
};
use crate::prompts;
use crate::similarity::{cosine_similarity, round_7sig};

/// Partition `frame_count` frames into half-open, contiguous clip ranges
/// of width `frames_per_clip`, the last possibly shorter.
pub fn segment_video(frame_count: u64, frames_per_clip: u32) -> Vec<(u64, u64)> {
    assert!(frame_count >= 1, "frame_count must be positive");
    assert!(frames_per_clip >= 1, "frames_per_clip must be positive");
    let k = u64::from(frames_per_clip);
    let mut ranges = Vec::with_capacity(frame_count.div_ceil(k) as usize);
    let mut start = 0;
    while start < frame_count {
        let end = (start + k).min(frame_count);
        ranges.push((start, end));
        start = end;
    }
    ranges
}

fn string_field(obj: &serde_json::Map<String, Value>, keys: &[&str]) -> Option<String> {
    keys.iter()
        .find_map(|k| obj.get(*k))
        .and_then(Value::as_str)
        .map(str::to_string)
}

/// Parse a model extraction response. The JSON may be wrapped in prose
/// or code fences, nested under an `info` key, and may spell action
/// entries either as `{"entity name": ..., "description": ...}` objects
/// or as single-pair `{name: description}` objects. Missing lists are
/// repaired to empty ones; anything else unparseable is an error that
/// carries the raw text.
pub fn parse_extraction_response(text: &str) -> Result<ExtractionRecord> {
    let block = crate::parsing::extract_json_block(text).ok_or_else(|| {
        EngineError::Extraction {
            clip_index: u32::MAX,
            message: format!("no parseable JSON in response: {text:?}"),
        }
    })?;
    let err = |message: String| EngineError::Extraction {
        clip_index: u32::MAX,
        message,
    };
    let value: Value =
        serde_json::from_str(block).map_err(|e| err(format!("invalid JSON: {e}")))?;
    let root = value
        .as_object()
        .ok_or_else(|| err("top-level JSON is not an object".into()))?;
    let record = root
        .get("info")
        .and_then(Value::as_object)
        .unwrap_or(root);

    let mut extraction = ExtractionRecord::default();
    for item in list_of(record, "entities") {
        let obj = item
            .as_object()
            .ok_or_else(|| err("entity entry is not an object".into()))?;
        let name = string_field(obj, &["entity name", "entity_name", "name"])
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| err("entity entry has no name".into()))?;
        let description = string_field(obj, &["description", "desc"]).unwrap_or_default();
        extraction.entities.push(EntityMention { name, description });
    }
    for item in list_of(record, "actions") {
        let obj = item
            .as_object()
            .ok_or_else(|| err("action entry is not an object".into()))?;
        let parsed = if obj.contains_key("entity name")
            || obj.contains_key("entity_name")
            || obj.contains_key("name")
        {
            let entity_name = string_field(obj, &["entity name", "entity_name", "name"])
                .filter(|s| !s.trim().is_empty())
                .ok_or_else(|| err("action entry has no entity name".into()))?;
            let description = string_field(obj, &["description", "desc"]).unwrap_or_default();
            ActionMention { entity_name, description }
        } else if obj.len() == 1 {
            let (name, desc) = obj.iter().next().expect("len checked");
            ActionMention {
                entity_name: name.clone(),
                description: desc.as_str().unwrap_or_default().to_string(),
            }
        } else {
            return Err(err(format!("unrecognized action entry: {item}")));
        };
        extraction.actions.push(parsed);
    }
    for item in list_of(record, "scenes") {
        let location = match &item {
            Value::String(s) => s.clone(),
            Value::Object(obj) => string_field(obj, &["location", "scene"])
                .ok_or_else(|| err(format!("scene entry has no location: {item}")))?,
            other => return Err(err(format!("unrecognized scene entry: {other}"))),
        };
        extraction.scenes.push(SceneMention { location });
    }
    for orphan in extraction.orphan_actions() {
        log::warn!(
            "action references unlisted entity {:?}; keeping it",
            orphan.entity_name
        );
    }
    Ok(extraction)
}

fn list_of<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> &'a [Value] {
    obj.get(key).and_then(Value::as_array).map_or(&[], |v| v.as_slice())
}

/// Run the extraction prompt for one clip and parse the result.
pub fn extract_clip(
    video_id: &str,
    clip: &ClipRecord,
    chat: &dyn ChatBackend,
) -> Result<ExtractionRecord> {
    let req = ChatRequest::text(prompts::extraction_prompt(&clip.subtitle_text))
        .with_media(vec![MediaRef {
            video_id: video_id.to_string(),
            frame_start: clip.frame_start,
            frame_end: clip.frame_end,
        }])?
        .with_format(ResponseFormatHint::Json);
    let response = chat.chat(&req)?;
    parse_extraction_response(&response).map_err(|e| match e {
        EngineError::Extraction { message, .. } => EngineError::Extraction {
            clip_index: clip.clip_index,
            message,
        },
        other => other,
    })
}

/// What happened when an entity was pushed into the global prototype set.
#[derive(Debug, Clone, PartialEq)]
pub enum MergeDecision {
    MergedInto(PrototypeId),
    CreatedNew(PrototypeId),
}

/// Outcome of one greedy merge step: the best similarity found and the
/// decision it forced.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub decision: MergeDecision,
    /// Highest similarity against any existing prototype; `None` when
    /// the set was empty.
    pub best_score: Option<f64>,
    pub best_prototype: Option<PrototypeId>,
}

impl MergeOutcome {
    pub fn target(&self) -> PrototypeId {
        match self.decision {
            MergeDecision::MergedInto(id) | MergeDecision::CreatedNew(id) => id,
        }
    }
}

/// Greedy merge of one (name, description) pair into the prototype set.
///
/// The incoming description is compared against canonical descriptions
/// only (frozen at each prototype's first insertion); ties in the argmax
/// break toward the earliest-created prototype. The merge either fully
/// applies or, on embedding failure, leaves the set untouched.
pub fn merge_entity(
    prototypes: &mut Vec<PrototypeEntity>,
    clip_index: u32,
    name: &str,
    description: &str,
    config: &EngineConfig,
    embed: &dyn crate::backend::EmbedBackend,
) -> Result<MergeOutcome> {
    if description.trim().is_empty() {
        return Err(EngineError::Invariant(
            "entity description must be non-empty".into(),
        ));
    }
    let text = merge_text(config, name, description);
    let vector = embed
        .embed(&EmbedRequest::new(vec![text])?)?
        .pop()
        .expect("one vector per text");

    let mut best: Option<(PrototypeId, f64)> = None;
    for p in prototypes.iter() {
        let Some(canonical) = p.embedding.as_deref() else {
            continue;
        };
        let score = cosine_similarity(&vector, canonical)?;
        if best.map_or(true, |(_, s)| score > s) {
            best = Some((p.prototype_id, score));
        }
    }

    if let Some((id, score)) = best {
        if score >= config.merge_threshold {
            let target = &mut prototypes[id.0 as usize];
            target.member_forms.push(crate::graph::MemberForm {
                clip_index,
                name: name.to_string(),
                description: description.to_string(),
            });
            target.node_set.insert(clip_index);
            return Ok(MergeOutcome {
                decision: MergeDecision::MergedInto(id),
                best_score: Some(score),
                best_prototype: Some(id),
            });
        }
    }

    let id = PrototypeId(prototypes.len() as u32);
    prototypes.push(PrototypeEntity {
        prototype_id: id,
        canonical_description: description.to_string(),
        member_forms: vec![crate::graph::MemberForm {
            clip_index,
            name: name.to_string(),
            description: description.to_string(),
        }],
        node_set: std::iter::once(clip_index).collect(),
        embedding: Some(vector.iter().map(|&x| round_7sig(x)).collect()),
    });
    Ok(MergeOutcome {
        decision: MergeDecision::CreatedNew(id),
        best_score: best.map(|(_, s)| s),
        best_prototype: best.map(|(id, _)| id),
    })
}

/// Wire `clip_index` to every other member of the prototype. Idempotent;
/// returns the edges that were actually new.
pub fn connect_node(
    clip_index: u32,
    prototype: &PrototypeEntity,
    adjacency: &mut std::collections::BTreeSet<Edge>,
) -> Result<Vec<Edge>> {
    if !prototype.node_set.contains(&clip_index) {
        return Err(EngineError::Invariant(format!(
            "prototype {} does not contain clip {clip_index}",
            prototype.prototype_id
        )));
    }
    let mut added = Vec::new();
    for &other in &prototype.node_set {
        if other == clip_index {
            continue;
        }
        let e = edge(clip_index, other);
        if adjacency.insert(e) {
            added.push(e);
        }
    }
    Ok(added)
}

/// One cue of a timed-caption file, in seconds.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CaptionCue {
    pub start: f64,
    pub end: f64,
    pub text: String,
}

/// Slice timed captions into per-clip subtitle text: clip `i` covers
/// `[frame_start/fps, frame_end/fps)` seconds and collects every cue
/// overlapping that window, in cue order.
pub fn slice_timed_captions(
    cues: &[CaptionCue],
    clip_ranges: &[(u64, u64)],
    fps: f64,
) -> Vec<String> {
    clip_ranges
        .iter()
        .map(|&(frame_start, frame_end)| {
            let window = (frame_start as f64 / fps, frame_end as f64 / fps);
            cues.iter()
                .filter(|cue| cue.start < window.1 && cue.end > window.0)
                .map(|cue| cue.text.trim())
                .filter(|t| !t.is_empty())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// Build options independent of the engine configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    /// Skip clips whose extraction fails instead of aborting; the gap
    /// stays visible as a clip without an extraction record.
    pub lenient: bool,
}

/// Construct the full video graph: segment, extract each clip exactly
/// once (fan-out), then merge entities and wire edges in order.
pub fn build_graph(
    video_id: &str,
    frame_count: u64,
    subtitles: &[String],
    backends: &Backends,
    config: &EngineConfig,
    options: BuildOptions,
) -> Result<VideoGraph> {
    config.validate()?;
    if frame_count == 0 {
        return Err(EngineError::Config("frame_count must be positive".into()));
    }
    let ranges = segment_video(frame_count, config.frames_per_clip);
    if !subtitles.is_empty() && subtitles.len() != ranges.len() {
        return Err(EngineError::Config(format!(
            "subtitle list has {} entries for {} clips",
            subtitles.len(),
            ranges.len()
        )));
    }

    let mut clips: Vec<ClipRecord> = ranges
        .iter()
        .enumerate()
        .map(|(i, &(frame_start, frame_end))| ClipRecord {
            clip_index: i as u32,
            frame_start,
            frame_end,
            subtitle_text: subtitles.get(i).cloned().unwrap_or_default(),
            extraction: None,
        })
        .collect();

    // Fan out extraction; exactly one chat call per clip.
    let extracted: Vec<Result<ExtractionRecord>> = clips
        .par_iter()
        .map(|clip| extract_clip(video_id, clip, backends.chat.as_ref()))
        .collect();

    for (clip, result) in clips.iter_mut().zip(extracted) {
        match result {
            Ok(record) => clip.extraction = Some(record),
            Err(e) if options.lenient => {
                log::warn!("skipping clip {}: {e}", clip.clip_index);
            }
            Err(e) => return Err(e),
        }
    }

    let mut graph = VideoGraph::new(video_id, config.clone());
    let mut prototypes: Vec<PrototypeEntity> = Vec::new();
    let mut adjacency = std::collections::BTreeSet::new();
    for clip in &clips {
        let Some(extraction) = &clip.extraction else {
            continue;
        };
        for entity in &extraction.entities {
            if entity.description.trim().is_empty() {
                log::warn!(
                    "clip {}: entity {:?} has an empty description; not merged",
                    clip.clip_index,
                    entity.name
                );
                continue;
            }
            let outcome = merge_entity(
                &mut prototypes,
                clip.clip_index,
                &entity.name,
                &entity.description,
                config,
                backends.embed.as_ref(),
            )?;
            let target = &prototypes[outcome.target().0 as usize];
            connect_node(clip.clip_index, target, &mut adjacency)?;
        }
    }

    graph.clips = clips;
    graph.prototypes = prototypes;
    graph.adjacency = adjacency;
    graph.validate_structure()?;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MockChatBackend, MockEmbedBackend};
    use crate::backend::BackendTrace;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    #[test]
    fn segmentation_covers_the_frame_range() {
        assert_eq!(
            segment_video(200, 64),
            vec![(0, 64), (64, 128), (128, 192), (192, 200)]
        );
        assert_eq!(segment_video(64, 64), vec![(0, 64)]);
        assert_eq!(segment_video(65, 64), vec![(0, 64), (64, 65)]);
    }

    const SAILBOAT_RESPONSE: &str = r#"{
        "idx": 0,
        "info": {
            "entities": [
                {"entity name": "sailboat", "description": "A classic sailboat with white sails and wooden rigging"},
                {"entity name": "man", "description": "A man wearing a dark sweater"},
                {"entity name": "ocean", "description": "A calm ocean under a partly cloudy sky"}
            ],
            "actions": [
                {"entity name": "sailboat", "description": "sailing smoothly on the water"},
                {"entity name": "man", "description": "steering the sailboat"},
                {"entity name": "man", "description": "looking around"},
                {"entity name": "man", "description": "adjusting his hair"}
            ],
            "scenes": [
                {"location": "open sea"}
            ]
        }
    }"#;

    #[test]
    fn sailboat_fixture_parses() {
        let record = parse_extraction_response(SAILBOAT_RESPONSE).unwrap();
        let names: Vec<&str> = record.entities.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, vec!["sailboat", "man", "ocean"]);
        assert!(record
            .actions
            .iter()
            .any(|a| a.entity_name == "man" && a.description == "steering the sailboat"));
        assert_eq!(record.scenes[0].location, "open sea");
        assert!(record.orphan_actions().is_empty());
    }

    #[test]
    fn fenced_response_parses_like_bare_json() {
        let bare = r#"{"entities": [{"entity name": "plate", "description": "a white plate"}]}"#;
        let fenced = format!("```json\n{bare}\n```");
        assert_eq!(
            parse_extraction_response(bare).unwrap(),
            parse_extraction_response(&fenced).unwrap()
        );
    }

    #[test]
    fn prose_without_json_is_an_extraction_error() {
        let err = parse_extraction_response("I cannot see the video.").unwrap_err();
        assert!(matches!(err, EngineError::Extraction { .. }));
    }

    #[test]
    fn single_pair_action_form_is_accepted() {
        let record = parse_extraction_response(
            r#"{"entities": [{"entity name": "man", "description": "a man"}],
                "actions": [{"man": "waving at the camera"}],
                "scenes": ["beach"]}"#,
        )
        .unwrap();
        assert_eq!(record.actions[0].entity_name, "man");
        assert_eq!(record.actions[0].description, "waving at the camera");
        assert_eq!(record.scenes[0].location, "beach");
    }

    #[test]
    fn missing_lists_are_repaired_to_empty() {
        let record = parse_extraction_response(r#"{"entities": []}"#).unwrap();
        assert!(record.entities.is_empty());
        assert!(record.actions.is_empty());
        assert!(record.scenes.is_empty());
    }

    #[test]
    fn orphan_actions_are_kept() {
        let record = parse_extraction_response(
            r#"{"entities": [{"entity name": "man", "description": "a man"}],
                "actions": [{"entity name": "dog", "description": "barking"}]}"#,
        )
        .unwrap();
        assert_eq!(record.orphan_actions().len(), 1);
        assert_eq!(record.actions.len(), 1);
    }

    fn test_config() -> EngineConfig {
        EngineConfig::default()
    }

    #[test]
    fn first_entity_creates_a_prototype() {
        let trace = BackendTrace::new();
        let embed = MockEmbedBackend::new(trace);
        let mut protos = Vec::new();
        let outcome =
            merge_entity(&mut protos, 0, "plate", "a white plate", &test_config(), &embed)
                .unwrap();
        assert_eq!(outcome.decision, MergeDecision::CreatedNew(PrototypeId(0)));
        assert_eq!(outcome.best_score, None);
        assert_eq!(protos.len(), 1);
        assert_eq!(protos[0].canonical_description, "a white plate");
    }

    #[test]
    fn identical_description_merges_at_similarity_one() {
        let trace = BackendTrace::new();
        let embed = MockEmbedBackend::new(trace);
        let mut protos = Vec::new();
        merge_entity(&mut protos, 0, "plate", "a white plate", &test_config(), &embed).unwrap();
        let outcome =
            merge_entity(&mut protos, 1, "dish", "a white plate", &test_config(), &embed)
                .unwrap();
        assert_eq!(outcome.decision, MergeDecision::MergedInto(PrototypeId(0)));
        assert_abs_diff_eq!(outcome.best_score.unwrap(), 1.0, epsilon = 1e-9);
        assert_eq!(protos.len(), 1);
        assert_eq!(protos[0].node_set.len(), 2);
        // Canonical description stays frozen at the first member's.
        assert_eq!(protos[0].canonical_description, "a white plate");
    }

    #[test]
    fn dissimilar_description_creates_a_new_prototype() {
        let trace = BackendTrace::new();
        let embed = MockEmbedBackend::new(trace);
        let mut protos = Vec::new();
        merge_entity(
            &mut protos,
            0,
            "plate",
            "a white plate in the sink",
            &test_config(),
            &embed,
        )
        .unwrap();
        let outcome = merge_entity(
            &mut protos,
            1,
            "laptop",
            "a black laptop on the desk",
            &test_config(),
            &embed,
        )
        .unwrap();
        assert_eq!(outcome.decision, MergeDecision::CreatedNew(PrototypeId(1)));
        // Shared tokens {a, the} out of 6 per description: cosine 2/6.
        let expected = crate::backend::mock::mock_cosine(
            "a white plate in the sink",
            "a black laptop on the desk",
        )
        .unwrap();
        assert_abs_diff_eq!(outcome.best_score.unwrap(), expected, epsilon = 1e-9);
        assert_abs_diff_eq!(expected, 1.0 / 3.0, epsilon = 1e-9);
        assert!(expected < 0.7);
    }

    #[test]
    fn connect_node_wires_to_all_members() {
        let mut protos = Vec::new();
        let trace = BackendTrace::new();
        let embed = MockEmbedBackend::new(trace);
        for clip in [1u32, 3] {
            merge_entity(&mut protos, clip, "e", "same text", &test_config(), &embed).unwrap();
        }
        merge_entity(&mut protos, 5, "e", "same text", &test_config(), &embed).unwrap();
        let mut adjacency = std::collections::BTreeSet::new();
        let added = connect_node(5, &protos[0], &mut adjacency).unwrap();
        assert_eq!(added, vec![(1, 5), (3, 5)]);
        // Idempotent on reconnection.
        let again = connect_node(5, &protos[0], &mut adjacency).unwrap();
        assert!(again.is_empty());
    }

    #[test]
    fn singleton_prototype_adds_no_edges() {
        let trace = BackendTrace::new();
        let embed = MockEmbedBackend::new(trace);
        let mut protos = Vec::new();
        merge_entity(&mut protos, 5, "e", "lone text", &test_config(), &embed).unwrap();
        let mut adjacency = std::collections::BTreeSet::new();
        assert!(connect_node(5, &protos[0], &mut adjacency).unwrap().is_empty());
    }

    fn backends_with_sidecars(
        sidecars: &[(u32, serde_json::Value)],
        frames_per_clip: u32,
    ) -> Backends {
        let trace = BackendTrace::new();
        let mut chat = MockChatBackend::new(frames_per_clip, trace.clone());
        for (clip, value) in sidecars {
            chat.insert_sidecar("v1", *clip, value).unwrap();
        }
        Backends::new(
            Arc::new(chat),
            Arc::new(MockEmbedBackend::new(trace.clone())),
            trace,
        )
    }

    fn entity_sidecar(name: &str, desc: &str) -> serde_json::Value {
        serde_json::json!({
            "entities": [{"entity name": name, "description": desc}],
            "actions": [],
            "scenes": []
        })
    }

    #[test]
    fn two_clips_sharing_an_entity_get_an_edge() {
        let backends = backends_with_sidecars(
            &[
                (0, entity_sidecar("laptop", "a black laptop on a desk")),
                (1, entity_sidecar("laptop", "a black laptop on a desk")),
            ],
            64,
        );
        let graph = build_graph("v1", 128, &[], &backends, &test_config(), BuildOptions::default())
            .unwrap();
        assert_eq!(graph.clips.len(), 2);
        assert_eq!(graph.prototypes.len(), 1);
        assert_eq!(graph.adjacency, std::collections::BTreeSet::from([(0, 1)]));
        assert_eq!(
            crate::graph::recompute_adjacency(&graph),
            graph.adjacency
        );
        // Exactly one extraction call per clip.
        assert_eq!(backends.trace.counts().chat_calls, 2);
    }

    #[test]
    fn single_clip_video_has_no_edges() {
        let backends =
            backends_with_sidecars(&[(0, entity_sidecar("boat", "a sailboat at sea"))], 64);
        let graph = build_graph("v1", 40, &[], &backends, &test_config(), BuildOptions::default())
            .unwrap();
        assert_eq!(graph.clips.len(), 1);
        assert!(graph.adjacency.is_empty());
    }

    #[test]
    fn missing_sidecar_aborts_strict_build() {
        let backends =
            backends_with_sidecars(&[(0, entity_sidecar("boat", "a sailboat at sea"))], 64);
        let err = build_graph("v1", 128, &[], &backends, &test_config(), BuildOptions::default())
            .unwrap_err();
        match err {
            EngineError::Backend(e) => assert!(e.to_string().contains("clip 1")),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn lenient_build_records_the_gap() {
        let backends =
            backends_with_sidecars(&[(0, entity_sidecar("boat", "a sailboat at sea"))], 64);
        let graph = build_graph(
            "v1",
            128,
            &[],
            &backends,
            &test_config(),
            BuildOptions { lenient: true },
        )
        .unwrap();
        assert!(graph.clips[0].extraction.is_some());
        assert!(graph.clips[1].extraction.is_none());
    }

    #[test]
    fn timed_captions_slice_by_clip_window() {
        let cues = vec![
            CaptionCue { start: 0.0, end: 10.0, text: "first".into() },
            CaptionCue { start: 60.0, end: 70.0, text: "straddles".into() },
            CaptionCue { start: 100.0, end: 110.0, text: "second".into() },
        ];
        // Two 64-frame clips at 1 fps: windows [0, 64) and [64, 128).
        let ranges = segment_video(128, 64);
        let sliced = slice_timed_captions(&cues, &ranges, 1.0);
        assert_eq!(sliced, vec!["first straddles".to_string(), "straddles second".to_string()]);
    }

    #[test]
    fn subtitle_count_mismatch_is_a_config_error() {
        let backends =
            backends_with_sidecars(&[(0, entity_sidecar("boat", "a sailboat at sea"))], 64);
        let err = build_graph(
            "v1",
            64,
            &["a".into(), "b".into()],
            &backends,
            &test_config(),
            BuildOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, EngineError::Config(_)));
    }
}
