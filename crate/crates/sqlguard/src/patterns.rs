//! Natural-language phrasing patterns used by the workload generator.
//!
//! Each workload template carries a list of paraphrase patterns with
//! `{slot}` placeholders; op and aggregate keywords map to the phrases
//! that express them in questions.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("invalid pattern json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error reading `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("pattern file must provide at least one pattern per template")]
    Empty,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PatternSet {
    pub select: Vec<String>,
    #[serde(default)]
    pub select_no_condition: Vec<String>,
    pub join: Vec<String>,
    pub ops: BTreeMap<String, Vec<String>>,
    pub aggs: BTreeMap<String, Vec<String>>,
}

impl PatternSet {
    pub fn from_json(text: &str) -> Result<Self, PatternError> {
        let set: PatternSet = serde_json::from_str(text)?;
        if set.select.is_empty() || set.join.is_empty() || set.ops.is_empty() || set.aggs.is_empty()
        {
            return Err(PatternError::Empty);
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, PatternError> {
        let text = std::fs::read_to_string(path).map_err(|source| PatternError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Every fixed (non-slot) word appearing in any pattern or phrase;
    /// used to seed the encoder vocabulary.
    pub fn fixed_words(&self) -> Vec<String> {
        let mut words = std::collections::BTreeSet::new();
        let all = self
            .select
            .iter()
            .chain(self.select_no_condition.iter())
            .chain(self.join.iter());
        for pattern in all {
            for word in pattern.split_whitespace() {
                if !word.starts_with('{') {
                    words.insert(word.to_string());
                }
            }
        }
        for phrases in self.ops.values().chain(self.aggs.values()) {
            for phrase in phrases {
                for word in phrase.split_whitespace() {
                    words.insert(word.to_string());
                }
            }
        }
        words.into_iter().collect()
    }
}
