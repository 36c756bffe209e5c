//! Layered CLI configuration: defaults, then the JSON config file, then
//! command-line flags. Backend secrets come from the environment only.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use clipgraph_core::backend::http::DEFAULT_EMBED_MODEL;
use clipgraph_core::{EngineConfig, RefinementStrategy};

/// Environment variable holding the backend API key.
pub const API_KEY_ENV: &str = "CLIPGRAPH_API_KEY";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartialEngine {
    pub frames_per_clip: Option<u32>,
    pub sample_fps: Option<f64>,
    pub merge_threshold: Option<f64>,
    pub retrieval_threshold: Option<f64>,
    pub retrieval_top_n: Option<usize>,
    pub refine_max_r: Option<usize>,
    pub refinement_strategy: Option<RefinementStrategy>,
    pub embed_entity_name: Option<bool>,
    pub rerank_extended_info: Option<bool>,
    pub include_subtitles_in_prompt: Option<bool>,
    pub verify_concurrency: Option<usize>,
    pub record_timings: Option<bool>,
}

impl PartialEngine {
    pub fn apply(&self, config: &mut EngineConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { config.$field = v; })*
            };
        }
        set!(
            frames_per_clip,
            sample_fps,
            merge_threshold,
            retrieval_threshold,
            retrieval_top_n,
            refine_max_r,
            refinement_strategy,
            embed_entity_name,
            rerank_extended_info,
            include_subtitles_in_prompt,
            verify_concurrency,
            record_timings
        );
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileBackend {
    pub kind: Option<String>,
    pub chat_url: Option<String>,
    pub chat_model: Option<String>,
    pub embed_url: Option<String>,
    pub embed_model: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilePaths {
    pub graph_dir: Option<PathBuf>,
    pub corpus_dir: Option<PathBuf>,
    pub trace_dir: Option<PathBuf>,
}

/// The JSON config file shape.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub engine: PartialEngine,
    pub backend: FileBackend,
    pub paths: FilePaths,
    pub verbosity: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("parsing config file {}", path.display()))
    }
}

/// Which backend pair to construct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendKind {
    Mock,
    Http,
}

impl std::str::FromStr for BackendKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock" => Ok(BackendKind::Mock),
            "http" => Ok(BackendKind::Http),
            other => anyhow::bail!("unknown backend kind {other:?} (expected mock or http)"),
        }
    }
}

/// Resolved backend settings.
#[derive(Debug, Clone)]
pub struct BackendSettings {
    pub kind: BackendKind,
    pub chat_url: Option<String>,
    pub chat_model: String,
    pub embed_url: Option<String>,
    pub embed_model: String,
    pub api_key: Option<String>,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            chat_url: None,
            chat_model: "default-chat-model".to_string(),
            embed_url: None,
            embed_model: DEFAULT_EMBED_MODEL.to_string(),
            api_key: None,
        }
    }
}

impl BackendSettings {
    /// Defaults layered under the file config; flags layer on top at the
    /// call site. The API key always comes from the environment.
    pub fn from_file(file: &FileBackend) -> Result<Self> {
        let mut settings = Self::default();
        if let Some(kind) = &file.kind {
            settings.kind = kind.parse()?;
        }
        settings.chat_url = file.chat_url.clone().or(settings.chat_url);
        settings.embed_url = file.embed_url.clone().or(settings.embed_url);
        if let Some(m) = &file.chat_model {
            settings.chat_model = m.clone();
        }
        if let Some(m) = &file.embed_model {
            settings.embed_model = m.clone();
        }
        settings.api_key = std::env::var(API_KEY_ENV).ok();
        Ok(settings)
    }
}

/// Resolve a possibly-relative path against the workdir.
pub fn resolve(workdir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        workdir.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults_and_flags_override_file() {
        let file: FileConfig = serde_json::from_str(
            r#"{"engine": {"merge_threshold": 0.8, "refine_max_r": 3}}"#,
        )
        .unwrap();
        let mut config = EngineConfig::default();
        file.engine.apply(&mut config);
        assert_eq!(config.merge_threshold, 0.8);
        assert_eq!(config.refine_max_r, 3);
        // A later (flag-level) layer wins.
        let flags = PartialEngine {
            refine_max_r: Some(2),
            ..Default::default()
        };
        flags.apply(&mut config);
        assert_eq!(config.refine_max_r, 2);
        assert_eq!(config.merge_threshold, 0.8);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let result: Result<FileConfig, _> = serde_json::from_str(r#"{"enigne": {}}"#);
        assert!(result.is_err());
    }
}
