//! Shared helpers for the integration suites: a collision-free test
//! vocabulary and a sidecar-driven graph builder over mock backends.

use std::sync::Arc;

use clipgraph_core::backend::mock::{MockChatBackend, MockEmbedBackend};
use clipgraph_core::backend::{BackendTrace, Backends};
use clipgraph_core::builder::{build_graph, BuildOptions};
use clipgraph_core::{EngineConfig, VideoGraph};

/// Words occupying pairwise-distinct mock-embedding buckets (checked by
/// a test in props.rs), so multiset overlap fully controls similarity.
pub const VOCAB: &[&str] = &[
    "amber", "basket", "candle", "driftwood", "ember", "fjord", "garnet", "harbor", "ivory",
    "juniper", "kestrel", "lantern", "meadow", "nutmeg", "orchid", "pebble", "quartz", "russet",
    "saffron", "thistle", "umber", "velvet", "willow", "zephyr",
];

pub fn small_config() -> EngineConfig {
    EngineConfig {
        frames_per_clip: 4,
        ..Default::default()
    }
}

/// Build a graph from per-clip (entity name, description) lists through
/// the full mock pipeline.
pub fn build_from_entities(
    clips: &[Vec<(String, String)>],
    config: &EngineConfig,
) -> (VideoGraph, Backends) {
    let trace = BackendTrace::new();
    let mut chat = MockChatBackend::new(config.frames_per_clip, trace.clone());
    for (i, entities) in clips.iter().enumerate() {
        let entity_json: Vec<serde_json::Value> = entities
            .iter()
            .map(|(name, desc)| serde_json::json!({"entity name": name, "description": desc}))
            .collect();
        chat.insert_sidecar(
            "v",
            i as u32,
            &serde_json::json!({"entities": entity_json, "actions": [], "scenes": []}),
        )
        .unwrap();
    }
    let backends = Backends::new(
        Arc::new(chat),
        Arc::new(MockEmbedBackend::new(trace.clone())),
        trace,
    );
    let frame_count = clips.len() as u64 * u64::from(config.frames_per_clip);
    let graph = build_graph("v", frame_count, &[], &backends, config, BuildOptions::default())
        .unwrap();
    (graph, backends)
}
