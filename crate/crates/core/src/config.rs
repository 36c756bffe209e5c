//! Engine configuration and its defaults.

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

/// How the retrieved clip set is refined before generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinementStrategy {
    /// Subquery verification and the existential filter (the default).
    #[default]
    Structured,
    /// Self-rated relevance scores, keep the top-r.
    Confidence,
    /// No post-retrieval refinement; top-r ranked clips are fed directly.
    None,
}

/// Tunable parameters of the whole pipeline.
///
/// The defaults mirror the reference setup: 64-frame clips sampled at
/// 1.0 FPS, entity merge threshold 0.7, retrieval threshold 0.5, top-20
/// retrieval, and at most 5 clips after refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    /// Frames per clip (K).
    pub frames_per_clip: u32,
    /// Sampling rate of the frame index space, in frames per second.
    pub sample_fps: f64,
    /// Cosine threshold at or above which an entity merges into an
    /// existing prototype.
    pub merge_threshold: f64,
    /// Cosine threshold a keyword must exceed to match a prototype.
    pub retrieval_threshold: f64,
    /// Maximum number of clips kept after re-ranking (N).
    pub retrieval_top_n: usize,
    /// Maximum number of clips kept after refinement (r).
    pub refine_max_r: usize,
    /// Post-retrieval refinement strategy.
    pub refinement_strategy: RefinementStrategy,
    /// Embed "name: description" instead of the description alone when
    /// merging entities.
    #[serde(default)]
    pub embed_entity_name: bool,
    /// Score re-ranking against action descriptions and scene locations
    /// in addition to entity names, descriptions, and subtitles.
    #[serde(default = "default_true")]
    pub rerank_extended_info: bool,
    /// Include subtitle text in the clip markers of the final prompt.
    #[serde(default = "default_true")]
    pub include_subtitles_in_prompt: bool,
    /// Upper bound on concurrent verification calls.
    #[serde(default = "default_verify_concurrency")]
    pub verify_concurrency: usize,
    /// Record wall-clock timings in answer traces. Off by default so
    /// that persisted artifacts are byte-stable across runs.
    #[serde(default)]
    pub record_timings: bool,
}

fn default_true() -> bool {
    true
}

fn default_verify_concurrency() -> usize {
    8
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            frames_per_clip: 64,
            sample_fps: 1.0,
            merge_threshold: 0.7,
            retrieval_threshold: 0.5,
            retrieval_top_n: 20,
            refine_max_r: 5,
            refinement_strategy: RefinementStrategy::Structured,
            embed_entity_name: false,
            rerank_extended_info: true,
            include_subtitles_in_prompt: true,
            verify_concurrency: default_verify_concurrency(),
            record_timings: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_clip == 0 {
            return Err(EngineError::Config("frames_per_clip must be positive".into()));
        }
        if !(self.sample_fps > 0.0) {
            return Err(EngineError::Config("sample_fps must be positive".into()));
        }
        for (name, v) in [
            ("merge_threshold", self.merge_threshold),
            ("retrieval_threshold", self.retrieval_threshold),
        ] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(EngineError::Config(format!("{name} must lie in [-1, 1]")));
            }
        }
        if self.retrieval_top_n == 0 {
            return Err(EngineError::Config("retrieval_top_n must be positive".into()));
        }
        if self.refine_max_r == 0 {
            return Err(EngineError::Config("refine_max_r must be positive".into()));
        }
        if self.refine_max_r > self.retrieval_top_n {
            return Err(EngineError::Config(
                "refine_max_r must not exceed retrieval_top_n".into(),
            ));
        }
        if self.verify_concurrency == 0 {
            return Err(EngineError::Config("verify_concurrency must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_setup() {
        let c = EngineConfig::default();
        assert_eq!(c.frames_per_clip, 64);
        assert_eq!(c.sample_fps, 1.0);
        assert_eq!(c.merge_threshold, 0.7);
        assert_eq!(c.retrieval_threshold, 0.5);
        assert_eq!(c.retrieval_top_n, 20);
        assert_eq!(c.refine_max_r, 5);
        assert_eq!(c.refinement_strategy, RefinementStrategy::Structured);
        c.validate().unwrap();
    }

    #[test]
    fn r_must_not_exceed_n() {
        let c = EngineConfig {
            refine_max_r: 21,
            ..EngineConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn thresholds_bounded() {
        let c = EngineConfig {
            merge_threshold: 1.5,
            ..EngineConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
