//! Loading and wiring of the full translation stack: grammar, schema,
//! synonyms, phrasing patterns, vocabularies and dependency rules.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::grammar::{Grammar, GrammarError};
use crate::nn::Pipeline;
use crate::patterns::{PatternError, PatternSet};
use crate::rules::{self, LongTermRules, RuleError, ShortTermRules};
use crate::schema::{Database, Schema, SchemaError};
use crate::vocab::{vocab_hash, InputVocab, OutputVocab};

/// Default decoding grammar (selection + inner-join + aggregates).
pub const DEFAULT_GRAMMAR: &str = include_str!("../assets/grammar/sql.bnf");
/// Default question phrasing patterns for workload generation.
pub const DEFAULT_PATTERNS: &str = include_str!("../assets/patterns.json");

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("bad synonyms file `{path}`: {reason}")]
    Synonyms { path: String, reason: String },
    #[error("io error on `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn read(path: &Path) -> Result<String, EngineError> {
    std::fs::read_to_string(path).map_err(|source| EngineError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Everything needed to tag questions, mask decoding and train models
/// for one grammar + schema combination.
pub struct Engine {
    pub grammar: Grammar,
    pub schema: Schema,
    pub synonyms: HashMap<String, String>,
    pub patterns: PatternSet,
    pub input_vocab: InputVocab,
    pub output_vocab: OutputVocab,
    pub short: ShortTermRules,
    pub long: LongTermRules,
}

impl Engine {
    pub fn new(
        grammar: Grammar,
        schema: Schema,
        synonyms: HashMap<String, String>,
        patterns: PatternSet,
    ) -> Result<Engine, EngineError> {
        let input_vocab = InputVocab::build(&schema, &synonyms, &patterns.fixed_words());
        let output_vocab = OutputVocab::build(&grammar, &schema);
        let short = rules::generate_short_term_rules(&grammar)?;
        let long = rules::generate_long_term_rules(&output_vocab, &schema);
        Ok(Engine {
            grammar,
            schema,
            synonyms,
            patterns,
            input_vocab,
            output_vocab,
            short,
            long,
        })
    }

    pub fn from_texts(
        grammar: &str,
        schema: &str,
        synonyms: &str,
        patterns: &str,
    ) -> Result<Engine, EngineError> {
        let synonyms: HashMap<String, String> =
            serde_json::from_str(synonyms).map_err(|e| EngineError::Synonyms {
                path: "<inline>".into(),
                reason: e.to_string(),
            })?;
        Engine::new(
            Grammar::parse(grammar)?,
            Schema::from_json(schema)?,
            synonyms,
            PatternSet::from_json(patterns)?,
        )
    }

    /// Load from a data directory containing `schema.json` and
    /// `synonyms.json`; grammar and patterns fall back to the embedded
    /// defaults when no path is given.
    pub fn from_dir(
        data_dir: &Path,
        grammar: Option<&Path>,
        patterns: Option<&Path>,
    ) -> Result<Engine, EngineError> {
        let grammar_text = match grammar {
            Some(p) => read(p)?,
            None => DEFAULT_GRAMMAR.to_string(),
        };
        let patterns_text = match patterns {
            Some(p) => read(p)?,
            None => DEFAULT_PATTERNS.to_string(),
        };
        let syn_path = data_dir.join("synonyms.json");
        let synonyms_text = read(&syn_path)?;
        let synonyms: HashMap<String, String> = serde_json::from_str(&synonyms_text)
            .map_err(|e| EngineError::Synonyms {
                path: syn_path.display().to_string(),
                reason: e.to_string(),
            })?;
        Engine::new(
            Grammar::parse(&grammar_text)?,
            Schema::load(&data_dir.join("schema.json"))?,
            synonyms,
            PatternSet::from_json(&patterns_text)?,
        )
    }

    /// Load the CSV tables next to the schema.
    pub fn load_db(&self, dir: &Path) -> Result<Database, SchemaError> {
        Database::load_csv_dir(self.schema.clone(), dir)
    }

    pub fn pipeline(&self) -> Pipeline<'_> {
        Pipeline {
            grammar: &self.grammar,
            schema: &self.schema,
            synonyms: &self.synonyms,
            input_vocab: &self.input_vocab,
            output_vocab: &self.output_vocab,
            short: &self.short,
            long: &self.long,
        }
    }

    /// Vocabulary fingerprints stored in checkpoints.
    pub fn vocab_hashes(&self) -> (u64, u64) {
        (
            vocab_hash(self.input_vocab.tokens()),
            vocab_hash(self.output_vocab.tokens()),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_defaults_build_with_toy_assets() {
        let engine = Engine::from_texts(
            DEFAULT_GRAMMAR,
            include_str!("../assets/toy/schema.json"),
            include_str!("../assets/toy/synonyms.json"),
            DEFAULT_PATTERNS,
        )
        .unwrap();
        assert!(engine.output_vocab.id("SELECT").is_some());
        let (ih, oh) = engine.vocab_hashes();
        assert_ne!(ih, oh);
    }

    #[test]
    fn from_dir_matches_from_texts() {
        let a = Engine::from_dir(Path::new("assets/toy"), None, None).unwrap();
        let b = Engine::from_texts(
            DEFAULT_GRAMMAR,
            include_str!("../assets/toy/schema.json"),
            include_str!("../assets/toy/synonyms.json"),
            DEFAULT_PATTERNS,
        )
        .unwrap();
        assert_eq!(a.output_vocab.tokens(), b.output_vocab.tokens());
        assert_eq!(a.input_vocab.tokens(), b.input_vocab.tokens());
    }
}
