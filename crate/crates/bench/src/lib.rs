//! Shared fixtures for the criterion benches.

use std::sync::Arc;

use clipgraph_core::backend::mock::{MockChatBackend, MockEmbedBackend};
use clipgraph_core::backend::{BackendTrace, Backends};
use clipgraph_core::harness::{generate_corpus, load_corpus, Corpus, SyntheticCorpusSpec};
use clipgraph_core::EngineConfig;

/// Generate the default benchmark corpus into a temp dir and load it.
pub fn bench_corpus(seed: u64) -> (tempfile::TempDir, Corpus) {
    let dir = tempfile::tempdir().expect("tempdir");
    generate_corpus(&SyntheticCorpusSpec::default_spec(seed), dir.path()).expect("corpus");
    let corpus = load_corpus(dir.path()).expect("load corpus");
    (dir, corpus)
}

/// Mock backends covering every corpus video.
pub fn bench_backends(corpus: &Corpus, config: &EngineConfig) -> Backends {
    let trace = BackendTrace::new();
    let mut chat = MockChatBackend::new(config.frames_per_clip, trace.clone());
    for video in &corpus.videos {
        for (&clip, value) in &video.sidecars {
            chat.insert_sidecar(&video.video_id, clip, value).expect("sidecar");
        }
    }
    Backends::new(
        Arc::new(chat),
        Arc::new(MockEmbedBackend::new(trace.clone())),
        trace,
    )
}
