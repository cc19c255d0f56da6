//! Service configuration.
//!
//! Sources, strongest first: command-line flags, `MEMESENTINEL_*`
//! environment variables, a TOML file, built-in defaults. An environment
//! variable names a `section_key` pair, so `MEMESENTINEL_BACKENDS_VLM_URL`
//! sets `[backends] vlm_url`. Flags use the same dotted path through
//! `--set backends.vlm_url=...`.

use std::path::{Path, PathBuf};

use memesentinel::ocr::Recognizers;
use memesentinel::vlm::{DecodeSettings, RetryPolicy};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "MEMESENTINEL_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub server: ServerSection,
    pub store: StoreSection,
    pub backends: BackendSection,
    pub stages: StageSection,
    pub decode: DecodeSettings,
    pub retry: RetryPolicy,
    pub recognizers: Recognizers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub bind: String,
    pub max_body_bytes: usize,
    /// Pipelines allowed in flight; further classify calls get 503.
    pub concurrency: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            max_body_bytes: 10 * 1024 * 1024,
            concurrency: 8,
            api_key: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    pub path: PathBuf,
    /// Appended operations between compactions; 0 disables compaction.
    pub compact_every: usize,
}

impl Default for StoreSection {
    fn default() -> Self {
        Self {
            path: PathBuf::from("memesentinel-store.jsonl"),
            compact_every: 1000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    /// Serve from fixtures instead of HTTP backends.
    pub mock: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
    pub ocr_url: String,
    pub translation_url: String,
    pub vlm_url: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vlm_model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vlm_api_key: Option<String>,
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSection {
    pub ocr: bool,
    pub translation: bool,
    pub vlm: bool,
    /// Abbreviation dictionary; the bundled Singapore list when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abbreviations: Option<PathBuf>,
}

impl Default for StageSection {
    fn default() -> Self {
        Self {
            ocr: true,
            translation: true,
            vlm: true,
            abbreviations: None,
        }
    }
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            server: ServerSection::default(),
            store: StoreSection::default(),
            backends: BackendSection {
                timeout_secs: 120,
                ..Default::default()
            },
            stages: StageSection::default(),
            decode: DecodeSettings::default(),
            retry: RetryPolicy::default(),
            recognizers: Recognizers::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("override {0:?} must look like section.key=value")]
    BadOverride(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Parses a scalar the way a TOML value would be written, falling back to a
/// plain string.
fn scalar(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(root: &mut toml::Table, section: &str, key: &str, value: toml::Value) {
    let entry = root
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    if let toml::Value::Table(t) = entry {
        t.insert(key.to_string(), value);
    }
}

/// Layered configuration builder.
#[derive(Debug, Default, Clone)]
pub struct ConfigLayers {
    file: Option<PathBuf>,
    env: Vec<(String, String)>,
    overrides: Vec<String>,
}

impl ConfigLayers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn file(mut self, path: Option<impl AsRef<Path>>) -> Self {
        self.file = path.map(|p| p.as_ref().to_path_buf());
        self
    }

    pub fn env<I: IntoIterator<Item = (String, String)>>(mut self, vars: I) -> Self {
        self.env = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        self
    }

    pub fn process_env(self) -> Self {
        self.env(std::env::vars())
    }

    /// `section.key=value` overrides, applied last.
    pub fn overrides<I: IntoIterator<Item = String>>(mut self, items: I) -> Self {
        self.overrides.extend(items);
        self
    }

    pub fn build(&self) -> Result<ServiceConfig, ConfigError> {
        let defaults = toml::Table::try_from(ServiceConfig::default())
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut root = defaults;
        let sections: Vec<String> = root.keys().cloned().collect();

        if let Some(path) = &self.file {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
            let file: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
                origin: path.display().to_string(),
                message: e.to_string(),
            })?;
            for (section, value) in file {
                match (value, root.get_mut(&section)) {
                    (toml::Value::Table(t), Some(toml::Value::Table(base))) => base.extend(t),
                    (value, _) => {
                        root.insert(section, value);
                    }
                }
            }
        }

        let mut env = self.env.clone();
        env.sort();
        for (name, raw) in env {
            let rest = name[ENV_PREFIX.len()..].to_ascii_lowercase();
            let Some((section, key)) = rest.split_once('_') else { continue };
            if !sections.iter().any(|s| s == section) {
                continue;
            }
            set_path(&mut root, section, key, scalar(&raw));
        }

        for item in &self.overrides {
            let (path, raw) = item.split_once('=').ok_or_else(|| ConfigError::BadOverride(item.clone()))?;
            let (section, key) = path
                .trim()
                .split_once('.')
                .ok_or_else(|| ConfigError::BadOverride(item.clone()))?;
            set_path(&mut root, section, key, scalar(raw.trim()));
        }

        let config: ServiceConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse {
                origin: "merged layers".into(),
                message: e.to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.server.concurrency == 0 {
            return bad("server.concurrency must be at least 1");
        }
        if self.server.max_body_bytes == 0 {
            return bad("server.max_body_bytes must be positive");
        }
        if self.decode.logprob_depth < 2 {
            return bad("decode.logprob_depth must be at least 2");
        }
        if self.decode.max_new_tokens == 0 {
            return bad("decode.max_new_tokens must be positive");
        }
        if self.decode.sampling_temperature.is_nan() || self.decode.sampling_temperature <= 0.0 {
            return bad("decode.sampling_temperature must be positive");
        }
        if !(0.0..=1.0).contains(&self.decode.sampling_min_p) {
            return bad("decode.sampling_min_p must be in [0, 1]");
        }
        if !self.backends.mock {
            let b = &self.backends;
            let s = &self.stages;
            for (enabled, url, name) in [
                (s.ocr, &b.ocr_url, "backends.ocr_url"),
                (s.ocr && s.translation, &b.translation_url, "backends.translation_url"),
                (s.vlm, &b.vlm_url, "backends.vlm_url"),
            ] {
                if enabled && url.trim().is_empty() {
                    return Err(ConfigError::Invalid(format!("{name} is required while its stage is enabled")));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_need_endpoints() {
        assert!(matches!(ConfigLayers::new().build(), Err(ConfigError::Invalid(_))));
        let c = ConfigLayers::new().overrides(["backends.mock=true".into()]).build().unwrap();
        assert_eq!(c.retry.max_retries, 3);
        assert_eq!(c.decode.logprob_depth, 20);
    }

    #[test]
    fn precedence_flags_env_file_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(
            &file,
            "[backends]\nmock = true\nvlm_url = \"http://file\"\n[server]\nconcurrency = 3\nbind = \"0.0.0.0:1\"\n",
        )
        .unwrap();
        let layers = ConfigLayers::new().file(Some(&file)).env(env(&[
            ("MEMESENTINEL_BACKENDS_VLM_URL", "http://env"),
            ("MEMESENTINEL_SERVER_CONCURRENCY", "5"),
            ("OTHER_SERVER_CONCURRENCY", "9"),
        ]));
        let c = layers.build().unwrap();
        assert_eq!(c.backends.vlm_url, "http://env");
        assert_eq!(c.server.concurrency, 5);
        assert_eq!(c.server.bind, "0.0.0.0:1");
        assert_eq!(c.server.max_body_bytes, ServerSection::default().max_body_bytes);

        let c = layers.overrides(["server.concurrency=7".into()]).build().unwrap();
        assert_eq!(c.server.concurrency, 7);
        assert_eq!(c.backends.vlm_url, "http://env");
    }

    #[test]
    fn stage_toggles_relax_endpoint_checks() {
        let c = ConfigLayers::new()
            .overrides(["stages.ocr=false".into(), "backends.vlm_url=http://x".into()])
            .build()
            .unwrap();
        assert!(!c.stages.ocr);
        let err = ConfigLayers::new().overrides(["backends.vlm_url=http://x".into()]).build();
        assert!(err.unwrap_err().to_string().contains("ocr_url"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let r = ConfigLayers::new().overrides(["backends.mock=true".into(), "server.nope=1".into()]).build();
        assert!(matches!(r, Err(ConfigError::Parse { .. })));
        let r = ConfigLayers::new()
            .overrides(["backends.mock=true".into(), "decode.logprob_depth=1".into()])
            .build();
        assert!(matches!(r, Err(ConfigError::Invalid(_))));
        assert!(matches!(
            ConfigLayers::new().overrides(["nodot=1".into()]).build(),
            Err(ConfigError::BadOverride(_))
        ));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = ServiceConfig::default();
        c.backends.mock = true;
        let back: ServiceConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
