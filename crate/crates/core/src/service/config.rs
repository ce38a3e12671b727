use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::matching::MatchConfig;
use crate::ranker::SelectionPolicy;

/// Serving-time knobs persisted with a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Posts returned by dense retrieval.
    pub k1: usize,
    #[serde(flatten)]
    pub matching: MatchConfig,
    pub policy: SelectionPolicy,
    pub temperature: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k1: 100,
            matching: MatchConfig::default(),
            policy: SelectionPolicy::Sample,
            temperature: 1.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k1 == 0 || self.matching.k2 == 0 || self.matching.cap == 0 {
            return Err("k1, k2 and cap must be at least 1".into());
        }
        if !(self.temperature > 0.0) {
            return Err("temperature must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config line {line}: {reason}")]
pub struct ConfigError {
    pub line: usize,
    pub reason: String,
}

/// Parses `key = value` lines. Blank lines and `#` comments are ignored,
/// keys may use `-` or `_` interchangeably, and later keys override earlier
/// ones.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError {
            line: i + 1,
            reason: "expected `key = value`".into(),
        })?;
        let key = k.trim().replace('-', "_");
        if key.is_empty() {
            return Err(ConfigError {
                line: i + 1,
                reason: "empty key".into(),
            });
        }
        let value = v.trim().trim_matches('"').to_string();
        out.insert(key, value);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs() {
        let cfg = parse_key_values("# comment\nk1 = 50\n\ntitles-dim=256\npolicy = \"argmax\"\nk1 = 60\n").unwrap();
        assert_eq!(cfg["k1"], "60");
        assert_eq!(cfg["titles_dim"], "256");
        assert_eq!(cfg["policy"], "argmax");
        assert_eq!(parse_key_values("oops").unwrap_err().line, 1);
    }

    #[test]
    fn defaults_validate() {
        assert!(PipelineConfig::default().validate().is_ok());
        let bad = PipelineConfig {
            temperature: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
