//! Bit-exact persistence of the video graph.
//!
//! One JSON document with an explicit schema version. Adjacency is
//! serialized as sorted `[a, b]` pairs with `a < b`; embeddings are
//! stored rounded to 7 significant digits, so reserializing a loaded
//! graph is byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::{EngineError, Result};
use crate::graph::{ClipRecord, PrototypeEntity, VideoGraph};
use crate::similarity::round_7sig;

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    version: u32,
    video_id: String,
    config: EngineConfig,
    clips: Vec<ClipRecord>,
    prototypes: Vec<PrototypeEntity>,
    adjacency: Vec<[u32; 2]>,
}

/// Serialize a graph to its canonical JSON bytes.
pub fn graph_to_bytes(graph: &VideoGraph) -> Result<Vec<u8>> {
    graph.validate_structure()?;
    let mut prototypes = graph.prototypes.clone();
    for p in &mut prototypes {
        if let Some(embedding) = &mut p.embedding {
            for x in embedding.iter_mut() {
                *x = round_7sig(*x);
            }
        }
    }
    let file = GraphFile {
        version: GRAPH_SCHEMA_VERSION,
        video_id: graph.video_id.clone(),
        config: graph.config_snapshot.clone(),
        clips: graph.clips.clone(),
        prototypes,
        adjacency: graph.adjacency.iter().map(|&(a, b)| [a, b]).collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&file)
        .map_err(|e| EngineError::GraphFile(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn save_graph(graph: &VideoGraph, path: &Path) -> Result<()> {
    let bytes = graph_to_bytes(graph)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn graph_from_bytes(bytes: &[u8]) -> Result<VideoGraph> {
    let file: GraphFile = serde_json::from_slice(bytes)
        .map_err(|e| EngineError::GraphFile(format!("schema error: {e}")))?;
    if file.version != GRAPH_SCHEMA_VERSION {
        return Err(EngineError::GraphFile(format!(
            "version: expected {GRAPH_SCHEMA_VERSION}, found {}",
            file.version
        )));
    }
    let mut adjacency = std::collections::BTreeSet::new();
    for [a, b] in file.adjacency {
        if a >= b {
            return Err(EngineError::GraphFile(format!(
                "adjacency: pair [{a}, {b}] is not sorted"
            )));
        }
        adjacency.insert((a, b));
    }
    let graph = VideoGraph {
        video_id: file.video_id,
        config_snapshot: file.config,
        clips: file.clips,
        prototypes: file.prototypes,
        adjacency,
    };
    graph.validate_structure()?;
    Ok(graph)
}

pub fn load_graph(path: &Path) -> Result<VideoGraph> {
    let bytes = std::fs::read(path)
        .map_err(|e| EngineError::GraphFile(format!("{}: {e}", path.display())))?;
    graph_from_bytes(&bytes)
}
