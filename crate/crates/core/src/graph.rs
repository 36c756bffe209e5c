//! Domain types of the video knowledge graph: clips, extraction records,
//! prototype entities, and the graph itself.
//!
//! A graph is immutable once built; all query-time operations are pure
//! reads and safe to run concurrently.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::backend::EmbedBackend;
use crate::config::EngineConfig;
use crate::error::{EngineError, Result};
use crate::similarity::cosine_similarity;

/// One named entity observed in a clip, with its textual description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub name: String,
    pub description: String,
}

/// An action attributed to one of the clip's entities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionMention {
    pub entity_name: String,
    pub description: String,
}

/// A scene/location observed in a clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneMention {
    pub location: String,
}

/// Structured knowledge extracted from one clip.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub entities: Vec<EntityMention>,
    pub actions: Vec<ActionMention>,
    pub scenes: Vec<SceneMention>,
}

impl ExtractionRecord {
    /// All searchable text of the record, one string per mention field.
    pub fn info_strings(&self, extended: bool) -> Vec<&str> {
        let mut out = Vec::new();
        for e in &self.entities {
            out.push(e.name.as_str());
            out.push(e.description.as_str());
        }
        if extended {
            for a in &self.actions {
                out.push(a.description.as_str());
            }
            for s in &self.scenes {
                out.push(s.location.as_str());
            }
        }
        out
    }

    /// Everything joined into one blob, for substring checks and the
    /// naive-retrieval document text.
    pub fn full_text(&self) -> String {
        let mut parts = Vec::new();
        for e in &self.entities {
            parts.push(e.name.clone());
            parts.push(e.description.clone());
        }
        for a in &self.actions {
            parts.push(a.entity_name.clone());
            parts.push(a.description.clone());
        }
        for s in &self.scenes {
            parts.push(s.location.clone());
        }
        parts.join(" ")
    }

    /// Action entries whose names do not refer to any listed entity.
    /// These are kept (their text still helps re-ranking) but flagged.
    pub fn orphan_actions(&self) -> Vec<&ActionMention> {
        let names: BTreeSet<&str> = self.entities.iter().map(|e| e.name.as_str()).collect();
        self.actions
            .iter()
            .filter(|a| !names.contains(a.entity_name.as_str()))
            .collect()
    }
}

/// One video clip: a half-open frame range at the sampled FPS, its
/// subtitles, and (after the offline build) its extraction record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_index: u32,
    pub frame_start: u64,
    pub frame_end: u64,
    #[serde(default)]
    pub subtitle_text: String,
    #[serde(default)]
    pub extraction: Option<ExtractionRecord>,
}

/// Stable identifier of a prototype entity, assigned in creation order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct PrototypeId(pub u32);

impl std::fmt::Display for PrototypeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "u{}", self.0)
    }
}

/// One surface form merged into a prototype.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberForm {
    pub clip_index: u32,
    pub name: String,
    pub description: String,
}

/// A merged global entity: its canonical description is frozen at first
/// insertion, and `node_set` lists every clip it occurs in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeEntity {
    pub prototype_id: PrototypeId,
    pub canonical_description: String,
    pub member_forms: Vec<MemberForm>,
    pub node_set: BTreeSet<u32>,
    /// Embedding of the canonical description, rounded to 7 significant
    /// digits so persistence is lossless.
    #[serde(default)]
    pub embedding: Option<Vec<f64>>,
}

impl PrototypeEntity {
    pub fn validate(&self) -> Result<()> {
        if self.member_forms.is_empty() {
            return Err(EngineError::Invariant(format!(
                "prototype {} has no member forms",
                self.prototype_id
            )));
        }
        let member_clips: BTreeSet<u32> =
            self.member_forms.iter().map(|m| m.clip_index).collect();
        if member_clips != self.node_set {
            return Err(EngineError::Invariant(format!(
                "prototype {}: node_set does not match member clip indices",
                self.prototype_id
            )));
        }
        if self.member_forms[0].description != self.canonical_description {
            return Err(EngineError::Invariant(format!(
                "prototype {}: canonical description is not the earliest member's",
                self.prototype_id
            )));
        }
        Ok(())
    }
}

/// An unordered clip-index pair, stored with the smaller index first.
pub type Edge = (u32, u32);

pub fn edge(a: u32, b: u32) -> Edge {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// The video knowledge graph. Nodes are clips; two nodes are adjacent
/// iff some prototype entity occurs in both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoGraph {
    pub video_id: String,
    pub config_snapshot: EngineConfig,
    pub clips: Vec<ClipRecord>,
    pub prototypes: Vec<PrototypeEntity>,
    pub adjacency: BTreeSet<Edge>,
}

impl VideoGraph {
    pub fn new(video_id: impl Into<String>, config: EngineConfig) -> Self {
        Self {
            video_id: video_id.into(),
            config_snapshot: config,
            clips: Vec::new(),
            prototypes: Vec::new(),
            adjacency: BTreeSet::new(),
        }
    }

    pub fn clip(&self, clip_index: u32) -> Option<&ClipRecord> {
        self.clips.get(clip_index as usize)
    }

    pub fn prototype(&self, id: PrototypeId) -> Option<&PrototypeEntity> {
        self.prototypes.get(id.0 as usize)
    }

    /// Degree of each node, for inspection output.
    pub fn degrees(&self) -> BTreeMap<u32, usize> {
        let mut deg: BTreeMap<u32, usize> = BTreeMap::new();
        for &(a, b) in &self.adjacency {
            *deg.entry(a).or_default() += 1;
            *deg.entry(b).or_default() += 1;
        }
        deg
    }

    /// Structural invariants that need no model backend: clip ordering,
    /// prototype consistency, and adjacency = shared-prototype relation.
    pub fn validate_structure(&self) -> Result<()> {
        for (i, clip) in self.clips.iter().enumerate() {
            if clip.clip_index as usize != i {
                return Err(EngineError::Invariant(format!(
                    "clip at position {i} has index {}",
                    clip.clip_index
                )));
            }
            if clip.frame_start >= clip.frame_end {
                return Err(EngineError::Invariant(format!(
                    "clip {i}: frame range [{}, {}) is empty",
                    clip.frame_start, clip.frame_end
                )));
            }
            let width = clip.frame_end - clip.frame_start;
            if width > u64::from(self.config_snapshot.frames_per_clip) {
                return Err(EngineError::Invariant(format!(
                    "clip {i}: width {width} exceeds frames_per_clip"
                )));
            }
        }
        for (i, p) in self.prototypes.iter().enumerate() {
            if p.prototype_id.0 as usize != i {
                return Err(EngineError::Invariant(format!(
                    "prototype at position {i} has id {}",
                    p.prototype_id
                )));
            }
            p.validate()?;
            if let Some(&max) = p.node_set.iter().next_back() {
                if max as usize >= self.clips.len() {
                    return Err(EngineError::Invariant(format!(
                        "prototype {} references missing clip {max}",
                        p.prototype_id
                    )));
                }
            }
        }
        for &(a, b) in &self.adjacency {
            if a >= b {
                return Err(EngineError::Invariant(format!(
                    "edge ({a}, {b}) is not normalized"
                )));
            }
        }
        let expected = recompute_adjacency(self);
        if expected != self.adjacency {
            return Err(EngineError::Invariant(
                "adjacency does not equal the shared-prototype relation".into(),
            ));
        }
        Ok(())
    }

    /// The merge acceptance condition: every member description embeds
    /// within `tolerance` of the merge threshold against its prototype's
    /// canonical description.
    pub fn validate_merge_acceptance(
        &self,
        backend: &dyn EmbedBackend,
        tolerance: f64,
    ) -> Result<()> {
        let tau = self.config_snapshot.merge_threshold;
        for p in &self.prototypes {
            let canonical = p.embedding.as_deref().ok_or_else(|| {
                EngineError::Invariant(format!("prototype {} has no embedding", p.prototype_id))
            })?;
            let texts: Vec<String> = p
                .member_forms
                .iter()
                .map(|m| merge_text(&self.config_snapshot, &m.name, &m.description))
                .collect();
            let vectors = backend.embed(&crate::backend::EmbedRequest::new(texts)?)?;
            for (m, v) in p.member_forms.iter().zip(&vectors) {
                let s = cosine_similarity(v, canonical)?;
                if s < tau - tolerance {
                    return Err(EngineError::Invariant(format!(
                        "prototype {}: member ({}, {:?}) has similarity {s:.6} < {tau}",
                        p.prototype_id, m.clip_index, m.description
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Text submitted to the embedding backend when merging an entity.
pub fn merge_text(config: &EngineConfig, name: &str, description: &str) -> String {
    if config.embed_entity_name {
        format!("{name}: {description}")
    } else {
        description.to_string()
    }
}

/// The shared-prototype relation, recomputed from scratch:
/// {(a, b) | a != b and some prototype contains both}.
pub fn recompute_adjacency(graph: &VideoGraph) -> BTreeSet<Edge> {
    let mut edges = BTreeSet::new();
    for p in &graph.prototypes {
        let nodes: Vec<u32> = p.node_set.iter().copied().collect();
        for i in 0..nodes.len() {
            for j in (i + 1)..nodes.len() {
                edges.insert(edge(nodes[i], nodes[j]));
            }
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;

    fn proto(id: u32, nodes: &[u32]) -> PrototypeEntity {
        PrototypeEntity {
            prototype_id: PrototypeId(id),
            canonical_description: "d".into(),
            member_forms: nodes
                .iter()
                .map(|&c| MemberForm {
                    clip_index: c,
                    name: "e".into(),
                    description: "d".into(),
                })
                .collect(),
            node_set: nodes.iter().copied().collect(),
            embedding: None,
        }
    }

    fn graph_with(protos: Vec<PrototypeEntity>) -> VideoGraph {
        let mut g = VideoGraph::new("v", EngineConfig::default());
        g.prototypes = protos;
        g
    }

    #[test]
    fn pair_and_singleton_prototypes() {
        let g = graph_with(vec![proto(0, &[1, 3]), proto(1, &[2])]);
        assert_eq!(recompute_adjacency(&g), BTreeSet::from([(1, 3)]));
    }

    #[test]
    fn shared_entity_forms_a_clique() {
        let g = graph_with(vec![proto(0, &[1, 2, 3])]);
        assert_eq!(
            recompute_adjacency(&g),
            BTreeSet::from([(1, 2), (1, 3), (2, 3)])
        );
    }

    #[test]
    fn no_prototypes_no_edges() {
        let g = graph_with(vec![]);
        assert!(recompute_adjacency(&g).is_empty());
    }

    #[test]
    fn prototype_node_set_must_match_members() {
        let mut p = proto(0, &[1, 2]);
        p.node_set.insert(9);
        assert!(p.validate().is_err());
    }

    #[test]
    fn canonical_must_be_earliest_member() {
        let mut p = proto(0, &[1, 2]);
        p.canonical_description = "other".into();
        assert!(p.validate().is_err());
    }
}
