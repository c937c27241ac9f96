//! The run configuration file: one TOML document with a table per stage.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spcsfm::graph::OptimizerConfig;
use spcsfm::scene::{NoiseConfig, PhotometryConfig, SceneConfig};
use spcsfm::sfm::BootstrapConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub noise: NoiseConfig,
    pub photometry: PhotometryConfig,
    pub optimizer: OptimizerConfig,
    pub bootstrap: BootstrapConfig,
}

/// A configuration problem, located in the source text when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub origin: String,
    /// One-based line and column.
    pub position: Option<(usize, usize)>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.position {
            Some((line, col)) => write!(f, "{}:{line}:{col}: {}", self.origin, self.message),
            None => write!(f, "{}: {}", self.origin, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, col)
}

/// Line and column of `key = …` inside `[section]`.
fn key_position(text: &str, section: &str, key: &str) -> Option<(usize, usize)> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = header.trim().to_string();
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else { continue };
        let lhs = lhs.trim();
        let (table, name) = match lhs.rsplit_once('.') {
            Some((t, n)) if current.is_empty() => (t.trim().to_string(), n.trim()),
            _ => (current.clone(), lhs),
        };
        if table == section && name == key {
            return Some((i + 1, raw.len() - raw.trim_start().len() + 1));
        }
    }
    None
}

/// First word of `message` that names a key set in `[section]`.
fn locate(text: &str, section: &str, message: &str) -> Option<(usize, usize)> {
    message
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '.'))
        .map(|w| w.rsplit('.').next().unwrap_or(w))
        .filter(|w| !w.is_empty())
        .find_map(|w| key_position(text, section, w))
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError {
            origin: origin.to_string(),
            position: e.span().map(|s| line_col(text, s.start)),
            message: e.message().trim().to_string(),
        })?;
        let checks = [
            ("scene", config.scene.validate().map_err(|e| e.to_string())),
            ("noise", config.noise.validate().map_err(|e| e.to_string())),
            ("photometry", config.photometry.validate().map_err(|e| e.to_string())),
            ("optimizer", config.optimizer.validate()),
            ("bootstrap", config.bootstrap.validate()),
        ];
        for (section, check) in checks {
            if let Err(message) = check {
                return Err(ConfigError {
                    origin: origin.to_string(),
                    position: locate(text, section, &message),
                    message: format!("[{section}] {message}"),
                });
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError { origin: origin.clone(), position: None, message: e.to_string() })?;
        Self::parse(&text, &origin)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}
