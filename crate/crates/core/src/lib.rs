//! Graph-based retrieval-reasoning engine for long-video question
//! answering.
//!
//! A long video is segmented into fixed-length clips and described once,
//! offline, by a video-language model; recurring entities are merged
//! into global prototypes that link the clips into a knowledge graph.
//! At question time the engine extracts keywords, retrieves and re-ranks
//! candidate clips over the graph, verifies them with structured
//! subqueries, aggregates the verified evidence, and assembles the final
//! answer prompt. All model inference sits behind the [`backend`]
//! contracts, with deterministic mocks that make every stage testable
//! offline.

pub mod backend;
pub mod builder;
pub mod config;
pub mod error;
pub mod generation;
pub mod graph;
pub mod harness;
pub mod parsing;
pub mod persist;
pub mod prompts;
pub mod reasoning;
pub mod retrieval;
pub mod similarity;

pub use backend::{BackendError, BackendTrace, Backends, ChatBackend, EmbedBackend};
pub use config::{EngineConfig, RefinementStrategy};
pub use error::{EngineError, Result};
pub use graph::{ClipRecord, ExtractionRecord, PrototypeEntity, PrototypeId, VideoGraph};
pub use persist::{load_graph, save_graph};
