//! End-to-end pipeline tests over mock backends: the hard-negative
//! laptop scenario, strategy ablations, fallback paths, and trace
//! bookkeeping.

use std::sync::Arc;

use clipgraph_core::backend::mock::{MockChatBackend, MockEmbedBackend};
use clipgraph_core::backend::{BackendTrace, Backends};
use clipgraph_core::builder::{build_graph, BuildOptions};
use clipgraph_core::generation::answer_question;
use clipgraph_core::{EngineConfig, RefinementStrategy, VideoGraph};

/// Eight-clip video: several clips show an already-open laptop (hard
/// negatives for an "opening" question); clip 6 shows the closed laptop
/// being opened; the rest are unrelated kitchen clips.
fn laptop_fixture() -> (VideoGraph, Backends, EngineConfig) {
    let config = EngineConfig {
        frames_per_clip: 8,
        ..Default::default()
    };
    let trace = BackendTrace::new();
    let mut chat = MockChatBackend::new(config.frames_per_clip, trace.clone());
    let laptop = "a silver laptop on the wooden desk";
    let sidecar = |entities: Vec<(&str, &str)>, actions: Vec<(&str, &str)>| {
        serde_json::json!({
            "entities": entities
                .iter()
                .map(|(n, d)| serde_json::json!({"entity name": n, "description": d}))
                .collect::<Vec<_>>(),
            "actions": actions
                .iter()
                .map(|(n, d)| serde_json::json!({"entity name": n, "description": d}))
                .collect::<Vec<_>>(),
            "scenes": [{"location": "home office"}],
        })
    };
    for clip in 0..8u32 {
        let value = match clip {
            // Hard negatives: the laptop sits open, nobody opens it.
            1 | 3 | 5 => sidecar(
                vec![("laptop", laptop)],
                vec![("laptop", "sitting open showing a spreadsheet")],
            ),
            // The evidence clip: the closed laptop gets opened.
            6 => sidecar(
                vec![("laptop", laptop)],
                vec![("laptop", "being opened by hand")],
            ),
            // Unrelated kitchen clips.
            _ => sidecar(
                vec![("plate", "a white ceramic plate in the kitchen sink")],
                vec![("plate", "being rinsed under running water")],
            ),
        };
        chat.insert_sidecar("laptop_video", clip, &value).unwrap();
    }
    let backends = Backends::new(
        Arc::new(chat),
        Arc::new(MockEmbedBackend::new(trace.clone())),
        trace,
    );
    let graph = build_graph("laptop_video", 64, &[], &backends, &config, BuildOptions::default())
        .unwrap();
    (graph, backends, config)
}

fn laptop_question() -> (String, Vec<(char, String)>) {
    (
        r#"What happened to the "silver laptop on the wooden desk"?"#.to_string(),
        vec![
            ('A', "sitting idle all day".to_string()),
            ('B', "being opened by hand".to_string()),
            ('C', "carried out of the room".to_string()),
            ('D', "dropped on the floor".to_string()),
        ],
    )
}

#[test]
fn structured_reasoning_removes_hard_negatives() {
    let (graph, backends, config) = laptop_fixture();
    // All four laptop clips share one prototype and form a clique.
    let laptop_proto = graph
        .prototypes
        .iter()
        .find(|p| p.canonical_description.contains("laptop"))
        .unwrap();
    assert_eq!(
        laptop_proto.node_set.iter().copied().collect::<Vec<u32>>(),
        vec![1, 3, 5, 6]
    );

    let (question, options) = laptop_question();
    let trace = answer_question(&question, &options, &graph, &backends, &config).unwrap();
    assert!(trace.error.is_none(), "{:?}", trace.error);
    // Retrieval pulled the whole clique; refinement kept only clip 6.
    let ranked: Vec<u32> = trace.ranked.iter().map(|c| c.clip_index).collect();
    assert_eq!(ranked.len(), 4);
    let refined: Vec<u32> = trace.refined.iter().map(|c| c.clip_index).collect();
    assert_eq!(refined, vec![6]);
    assert_eq!(trace.parsed_option, Some('B'));
    assert!(!trace.fallback_used);
    // The verification matrix covered every ranked clip.
    let matrix = trace.matrix.as_ref().unwrap();
    assert_eq!(matrix.rows.len(), 4);
    // Findings carry only the positive cells of the refined clip.
    let context = trace.context.as_ref().unwrap();
    assert!(!context.per_clip_findings.is_empty());
    assert!(context.per_clip_findings.iter().all(|f| f.clip_index == 6));
}

#[test]
fn strategy_none_feeds_top_ranked_clips_directly() {
    let (graph, backends, config) = laptop_fixture();
    let config = EngineConfig {
        refinement_strategy: RefinementStrategy::None,
        ..config
    };
    let (question, options) = laptop_question();
    let trace = answer_question(&question, &options, &graph, &backends, &config).unwrap();
    // Structured-reasoning stages were skipped entirely.
    assert!(trace.subqueries.is_empty());
    assert!(trace.matrix.is_none());
    assert!(trace.context.is_none());
    assert!(trace
        .stage_calls
        .iter()
        .all(|s| s.stage != "verify" && s.stage != "subqueries"));
    // Hard negatives flow straight into generation.
    let refined: Vec<u32> = trace.refined.iter().map(|c| c.clip_index).collect();
    assert_eq!(refined, vec![1, 3, 5, 6]);
}

#[test]
fn confidence_strategy_keeps_top_rated_clips() {
    let (graph, backends, config) = laptop_fixture();
    let config = EngineConfig {
        refinement_strategy: RefinementStrategy::Confidence,
        refine_max_r: 2,
        ..config
    };
    let (question, options) = laptop_question();
    let trace = answer_question(&question, &options, &graph, &backends, &config).unwrap();
    assert!(trace.matrix.is_none());
    assert!(trace.refined.len() <= 2);
    // The evidence clip rates highest: its text covers the most
    // question words under the mock rater.
    assert!(trace.refined.iter().any(|c| c.clip_index == 6));
}

#[test]
fn refine_cap_bounds_the_media_budget() {
    let (graph, backends, config) = laptop_fixture();
    for r in 1..=3 {
        let config = EngineConfig {
            refine_max_r: r,
            ..config.clone()
        };
        let (question, options) = laptop_question();
        let trace = answer_question(&question, &options, &graph, &backends, &config).unwrap();
        assert!(trace.media_clips.len() <= r, "媒体 budget exceeded at r={r}");
        assert!(trace.refined.len() <= r);
    }
}

#[test]
fn global_question_uses_the_uniform_stride_fallback() {
    let (graph, backends, config) = laptop_fixture();
    let trace = answer_question(
        "What is the main topic of the video?",
        &[('A', "office work".into()), ('B', "cooking".into())],
        &graph,
        &backends,
        &config,
    )
    .unwrap();
    assert!(trace.fallback_used);
    assert!(trace.matrix.is_none());
    assert!(trace.context.is_none());
    // ceil(8/5) = 2-strided clips, capped at r.
    assert_eq!(trace.media_clips, vec![0, 2, 4, 6]);
}

#[test]
fn empty_retrieval_falls_back_to_uniform_stride() {
    let (graph, backends, config) = laptop_fixture();
    let trace = answer_question(
        r#"What happened to the "bright orange bicycle"?"#,
        &[('A', "ridden away".into()), ('B', "parked".into())],
        &graph,
        &backends,
        &config,
    )
    .unwrap();
    assert!(trace.fallback_used);
    assert_eq!(trace.candidate_count, 0);
    assert_eq!(trace.media_clips, vec![0, 2, 4, 6]);
}

#[test]
fn pipeline_is_deterministic_end_to_end() {
    let (graph, backends, config) = laptop_fixture();
    let (question, options) = laptop_question();
    let a = answer_question(&question, &options, &graph, &backends, &config).unwrap();
    let b = answer_question(&question, &options, &graph, &backends, &config).unwrap();
    assert_eq!(a, b);
    let json_a = serde_json::to_string(&a).unwrap();
    let json_b = serde_json::to_string(&b).unwrap();
    assert_eq!(json_a, json_b);
}

#[test]
fn analysis_failure_is_captured_in_the_trace() {
    let (graph, _backends, config) = laptop_fixture();
    // A chat backend that always fails analysis.
    let trace_store = BackendTrace::new();
    let backends = Backends::new(
        Arc::new(clipgraph_core::backend::mock::ScriptedChatBackend::new(
            vec!["no json here at all"],
            trace_store.clone(),
        )),
        Arc::new(MockEmbedBackend::new(trace_store.clone())),
        trace_store,
    );
    let (question, options) = laptop_question();
    let trace = answer_question(&question, &options, &graph, &backends, &config).unwrap();
    let error = trace.error.unwrap();
    assert_eq!(error.stage, "analyze");
    assert!(trace.parsed_option.is_none());
}
