//! Run configuration: one TOML file, every field defaulted, secrets and
//! endpoints overridable from the environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical::to_canonical_line;
use crate::gateway::HttpBackendConfig;
use crate::planner::Mode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Script file for the scripted backend.
    pub script: Option<PathBuf>,
    #[serde(flatten)]
    pub http: HttpBackendConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub seed: u64,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Hash,
            dim: 384,
            seed: 0,
            endpoint: None,
            model: None,
            api_key_env: None,
        }
    }
}

/// Endpoints win over fixtures; with neither, empty stubs are used.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolServicesConfig {
    pub detector_endpoint: Option<String>,
    pub detector_fixture: Option<PathBuf>,
    pub search_endpoint: Option<String>,
    pub search_fixture: Option<PathBuf>,
    pub search_max_results: Option<usize>,
    pub super_resolve_endpoint: Option<String>,
    pub api_key_env: Option<String>,
}

/// Pipeline stages that can be switched off for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Off: skip rule retrieval and planning; use the minimal plan.
    pub planning: bool,
    /// Off: Insufficient verdicts take the default score immediately.
    pub reflection: bool,
    /// Off: no short-memory context in prompts and no experience lookup.
    pub memory: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            planning: true,
            reflection: true,
            memory: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Perception keyframes in offline mode.
    pub m_offline: usize,
    /// Perception keyframes in online mode.
    pub m_online: usize,
    /// Frames per clip.
    pub s: usize,
    /// Knowledge entries per anomaly category.
    pub h: usize,
    /// Rules retrieved for planning.
    pub k: usize,
    /// Reflection rounds per clip.
    pub r: usize,
    /// Short memory length in steps.
    pub l: usize,
    /// Frames returned by image retrieval.
    pub top_s: usize,
    pub smooth_window: usize,
    pub sample_fps: f64,
    /// Used when a video has no usable fps metadata.
    pub fallback_fps: f64,
    pub default_insufficient_score: f64,
    pub temperature: f64,
    pub schema_retries: u32,
    /// Keep reflected experience across videos (forces one worker).
    pub cross_video_memory: bool,
    pub query: Option<String>,
    pub kb_path: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,
    pub ablation: AblationConfig,
    pub backend: BackendConfig,
    pub embedder: EmbedderConfig,
    pub tools: ToolServicesConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Offline,
            m_offline: 300,
            m_online: 10,
            s: 5,
            h: 20,
            k: 5,
            r: 3,
            l: 5,
            top_s: 5,
            smooth_window: 10,
            sample_fps: 1.0,
            fallback_fps: 30.0,
            default_insufficient_score: 0.5,
            temperature: 0.0,
            schema_retries: 2,
            cross_video_memory: false,
            query: None,
            kb_path: None,
            prompts_dir: None,
            ablation: AblationConfig::default(),
            backend: BackendConfig::default(),
            embedder: EmbedderConfig::default(),
            tools: ToolServicesConfig::default(),
        }
    }
}

/// Environment variables consulted by [`RunConfig::apply_env`].
pub const ENV_ENDPOINT: &str = "VADAGENT_ENDPOINT";
pub const ENV_MODEL: &str = "VADAGENT_MODEL";
pub const ENV_API_KEY: &str = "VADAGENT_API_KEY";

impl RunConfig {
    pub fn from_toml(text: &str, source: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: source.to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Loads `path`, resolving relative paths inside it against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::from_toml(&text, &path.display().to_string())?;
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.kb_path);
        fix(&mut self.prompts_dir);
        fix(&mut self.backend.script);
        fix(&mut self.tools.detector_fixture);
        fix(&mut self.tools.search_fixture);
    }

    /// Applies endpoint/model overrides and resolves API keys. `lookup`
    /// reads an environment variable.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(endpoint) = lookup(ENV_ENDPOINT).filter(|v| !v.is_empty()) {
            self.backend.http.endpoint = endpoint;
        }
        if let Some(model) = lookup(ENV_MODEL).filter(|v| !v.is_empty()) {
            self.backend.http.model = model;
        }
        let key_var = self
            .backend
            .http
            .api_key_env
            .clone()
            .unwrap_or_else(|| ENV_API_KEY.to_string());
        self.backend.http.api_key = lookup(&key_var).filter(|v| !v.is_empty());
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("m_offline", self.m_offline),
            ("m_online", self.m_online),
            ("s", self.s),
            ("h", self.h),
            ("k", self.k),
            ("r", self.r),
            ("top_s", self.top_s),
            ("smooth_window", self.smooth_window),
            ("embedder.dim", self.embedder.dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::Invalid(format!("`{name}` must be at least 1")));
        }
        if [self.sample_fps, self.fallback_fps]
            .iter()
            .any(|f| f.is_nan() || *f <= 0.0)
        {
            return Err(ConfigError::Invalid("frame rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.default_insufficient_score) {
            return Err(ConfigError::Invalid(
                "`default_insufficient_score` must lie in [0, 1]".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ConfigError::Invalid(
                "`temperature` must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Keyframes for perception in the configured mode.
    pub fn m(&self) -> usize {
        match self.mode {
            Mode::Offline => self.m_offline,
            Mode::Online => self.m_online,
        }
    }

    /// SHA-256 over the canonical JSON form; secrets are never serialized.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(to_canonical_line(self).as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("", "inline").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(
            (c.m_offline, c.m_online, c.s, c.h, c.k, c.r, c.l),
            (300, 10, 5, 20, 5, 3, 5)
        );
        assert_eq!(c.smooth_window, 10);
        assert_eq!(c.default_insufficient_score, 0.5);
        assert_eq!(c.embedder.dim, 384);
    }

    #[test]
    fn parses_sections_and_rejects_unknown_keys() {
        let c = RunConfig::from_toml(
            "mode = \"online\"\nr = 1\n[ablation]\nreflection = false\n[backend]\nkind = \"http\"\nendpoint = \"http://x/v1\"\nnetwork_retries = 5\n",
            "inline",
        )
        .unwrap();
        assert_eq!(c.mode, Mode::Online);
        assert_eq!(c.m(), 10);
        assert!(!c.ablation.reflection && c.ablation.memory);
        assert_eq!(c.backend.kind, BackendKind::Http);
        assert_eq!(c.backend.http.network_retries, 5);
        assert!(RunConfig::from_toml("typo_field = 1", "inline").is_err());
        assert!(RunConfig::from_toml("s = 0", "inline").is_err());
    }

    #[test]
    fn env_overrides_and_secret_stays_out_of_digest() {
        let mut c = RunConfig::default();
        let before = c.digest();
        c.apply_env(|k| match k {
            ENV_API_KEY => Some("secret".into()),
            _ => None,
        });
        assert_eq!(c.backend.http.api_key.as_deref(), Some("secret"));
        assert_eq!(c.digest(), before);
        c.apply_env(|k| (k == ENV_ENDPOINT).then(|| "http://other".to_string()));
        assert_eq!(c.backend.http.endpoint, "http://other");
        assert_ne!(c.digest(), before);
    }

    #[test]
    fn relative_paths_resolve_against_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[backend]\nscript = \"script.json\"\n").unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.backend.script.unwrap(), dir.path().join("script.json"));
    }
}
