//! TOML configuration shared by the CLI and the service.
//!
//! ```toml
//! cjk_ranges = [[0x4E00, 0x9FFF], [0x3400, 0x4DBF]]
//! instruction_lang = "en"
//! mask_penalty = -1e9
//! max_prompt_chars = 2000
//! concurrency = 8
//!
//! [decode]
//! temperature = 0.8
//! top_p = 0.9
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::charclass::CjkRanges;
use crate::decoding::DecodePolicy;
use crate::logitmask::{MaskError, Penalty, DEFAULT_PENALTY};
use crate::prompting::InstructionLang;
use crate::validation::{Validator, DEFAULT_BOUNDARIES};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub cjk_ranges: CjkRanges,
    pub instruction_lang: InstructionLang,
    pub mask_penalty: f64,
    /// Longest accepted user prompt, in characters.
    pub max_prompt_chars: usize,
    /// Concurrent decodes in the service; in-flight judge requests in eval.
    pub concurrency: usize,
    pub line_boundaries: Vec<char>,
    pub decode: DecodePolicy,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            cjk_ranges: CjkRanges::default(),
            instruction_lang: InstructionLang::En,
            mask_penalty: DEFAULT_PENALTY,
            max_prompt_chars: 2000,
            concurrency: std::thread::available_parallelism().map_or(4, |n| n.get()),
            line_boundaries: DEFAULT_BOUNDARIES.to_vec(),
            decode: DecodePolicy::default(),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        CjkRanges::new(self.cjk_ranges.ranges().to_vec()).map_err(ConfigError::Invalid)?;
        self.penalty().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.concurrency == 0 {
            return Err(ConfigError::Invalid("concurrency must be at least 1".into()));
        }
        if self.max_prompt_chars == 0 {
            return Err(ConfigError::Invalid("max_prompt_chars must be at least 1".into()));
        }
        Ok(())
    }

    pub fn penalty(&self) -> Result<Penalty, MaskError> {
        Penalty::new(self.mask_penalty)
    }

    pub fn validator(&self) -> Validator {
        Validator::new(self.cjk_ranges.clone(), self.line_boundaries.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::from_toml_str("").unwrap();
        assert_eq!(c.cjk_ranges, CjkRanges::default());
        assert_eq!(c.mask_penalty, -1e9);
        assert_eq!(c.max_prompt_chars, 2000);
    }

    #[test]
    fn overrides() {
        let c = Config::from_toml_str(
            "cjk_ranges = [[0x4E00, 0x9FFF]]\ninstruction_lang = \"zh\"\nmask_penalty = -1e5\n[decode]\ntop_p = 0.5\n",
        )
        .unwrap();
        assert_eq!(c.cjk_ranges.ranges(), &[(0x4E00, 0x9FFF)]);
        assert_eq!(c.instruction_lang, InstructionLang::Zh);
        assert_eq!(c.decode.top_p, 0.5);
        assert_eq!(c.decode.temperature, 0.8);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::from_toml_str("mask_penalty = -10.0").is_err());
        assert!(Config::from_toml_str("cjk_ranges = [[0x9FFF, 0x4E00]]").is_err());
        assert!(Config::from_toml_str("concurrency = 0").is_err());
        assert!(Config::from_toml_str("no_such_key = 1").is_err());
    }
}
