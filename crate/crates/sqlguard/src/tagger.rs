//! Deterministic semantic labelling of question words.
//!
//! Each input word gets at most one of four labels (column, table
//! reference, value expression, string expression) derived from the
//! schema lexicon, a synonym table and literal shape.  Labelled
//! value/string spans are bound to decoder slot tokens (VAL_i / STR_i).

use std::collections::HashMap;

use crate::schema::Schema;
use crate::vocab::{InputVocab, NUM_STRING_SLOTS, NUM_VALUE_SLOTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    None,
    Column,
    Table,
    Value,
    Str,
}

impl Label {
    /// One-hot bits (column, table, value, string); all zero for None.
    pub fn bits(self) -> [u8; 4] {
        match self {
            Label::None => [0, 0, 0, 0],
            Label::Column => [1, 0, 0, 0],
            Label::Table => [0, 1, 0, 0],
            Label::Value => [0, 0, 1, 0],
            Label::Str => [0, 0, 0, 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Value,
    Str,
}

#[derive(Debug, Clone)]
pub struct TaggedQuestion {
    pub tokens: Vec<String>,
    pub labels: Vec<Label>,
    /// Per-token slot binding; consecutive tokens of one span share it.
    pub slots: Vec<Option<(SlotKind, usize)>>,
    /// Literal text of each value span, indexed by slot id.
    pub value_bindings: Vec<String>,
    /// Literal text of each string span, indexed by slot id.
    pub string_bindings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct EncoderInput {
    pub vocab_id: usize,
    pub label_bits: [u8; 4],
    pub slot: Option<(SlotKind, usize)>,
}

const TRAILING_PUNCT: &[char] = &['?', ',', '.', '!', ';', ':'];

/// Tokenize, tracking whether each token lies inside a quoted span
/// (quotes may enclose several whitespace-separated words).
fn tokenize(question: &str) -> (Vec<String>, Vec<bool>) {
    let mut tokens = Vec::new();
    let mut quoted = Vec::new();
    let mut open: Option<char> = None;
    for raw in question.split_whitespace() {
        let mut word = raw.trim_end_matches(TRAILING_PUNCT);
        let mut in_quote = open.is_some();
        if open.is_none() {
            if let Some(q) = word.chars().next().filter(|c| *c == '\'' || *c == '"') {
                word = &word[1..];
                in_quote = true;
                open = Some(q);
            }
        }
        if let Some(q) = open {
            if word.ends_with(q) {
                word = &word[..word.len() - 1];
                open = None;
            }
        }
        if word.is_empty() {
            continue;
        }
        tokens.push(word.to_string());
        quoted.push(in_quote);
    }
    (tokens, quoted)
}

/// Label every word of a question.  Unknown words get `Label::None`;
/// there are no error cases.
pub fn tag_question(
    question: &str,
    schema: &Schema,
    synonyms: &HashMap<String, String>,
) -> TaggedQuestion {
    let (tokens, quoted_flags) = tokenize(question);
    let mut labels = Vec::new();

    let is_table = |w: &str| schema.table(w).is_some();
    let is_column = |w: &str| !schema.tables_with_column(w).is_empty();

    for (i, word) in tokens.iter().enumerate() {
        let lower = word.to_lowercase();
        let resolved = synonyms.get(&lower).cloned().unwrap_or(lower);
        let label = if is_column(&resolved) {
            Label::Column
        } else if is_table(&resolved) {
            Label::Table
        } else if word.parse::<f64>().is_ok() {
            Label::Value
        } else if quoted_flags[i] {
            Label::Str
        } else if i > 0 && word.chars().next().is_some_and(|c| c.is_uppercase()) {
            // capitalized out-of-lexicon content word; position 0 is
            // exempt (sentence-initial capitalization)
            Label::Str
        } else {
            Label::None
        };
        labels.push(label);
    }

    // bind maximal value/string spans to slots, one slot per span
    let mut slots = vec![None; tokens.len()];
    let mut value_bindings = Vec::new();
    let mut string_bindings = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let kind = match labels[i] {
            Label::Value => Some(SlotKind::Value),
            Label::Str => Some(SlotKind::Str),
            _ => None,
        };
        let Some(kind) = kind else {
            i += 1;
            continue;
        };
        let mut j = i;
        while j + 1 < tokens.len() && labels[j + 1] == labels[i] {
            j += 1;
        }
        let text = tokens[i..=j].join(" ");
        let (bindings, limit) = match kind {
            SlotKind::Value => (&mut value_bindings, NUM_VALUE_SLOTS),
            SlotKind::Str => (&mut string_bindings, NUM_STRING_SLOTS),
        };
        if bindings.len() < limit {
            let slot = bindings.len();
            bindings.push(text);
            for s in slots.iter_mut().take(j + 1).skip(i) {
                *s = Some((kind, slot));
            }
        }
        i = j + 1;
    }

    TaggedQuestion {
        tokens,
        labels,
        slots,
        value_bindings,
        string_bindings,
    }
}

/// Map a tagged question to encoder inputs: vocabulary id plus the four
/// label bits and the slot binding.
pub fn encode_inputs(tagged: &TaggedQuestion, vocab: &InputVocab) -> Vec<EncoderInput> {
    tagged
        .tokens
        .iter()
        .zip(&tagged.labels)
        .zip(&tagged.slots)
        .map(|((word, label), slot)| EncoderInput {
            vocab_id: vocab.id(&word.to_lowercase()),
            label_bits: label.bits(),
            slot: *slot,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Schema, HashMap<String, String>) {
        let schema = Schema::from_json(include_str!("../assets/toy/schema.json")).unwrap();
        let synonyms: HashMap<String, String> =
            serde_json::from_str(include_str!("../assets/toy/synonyms.json")).unwrap();
        (schema, synonyms)
    }

    #[test]
    fn labels_follow_lexicon_and_shape() {
        let (schema, synonyms) = toy();
        let t = tag_question("return the name of authors whose age is 30", &schema, &synonyms);
        let by_word: HashMap<&str, Label> = t
            .tokens
            .iter()
            .map(|s| s.as_str())
            .zip(t.labels.iter().copied())
            .collect();
        assert_eq!(by_word["name"], Label::Column);
        assert_eq!(by_word["authors"], Label::Table);
        assert_eq!(by_word["age"], Label::Column);
        assert_eq!(by_word["30"], Label::Value);
        assert_eq!(by_word["whose"], Label::None);
        assert_eq!(t.value_bindings, vec!["30"]);
        assert_eq!(t.string_bindings, Vec::<String>::new());
    }

    #[test]
    fn capitalized_out_of_lexicon_is_string() {
        let (schema, synonyms) = toy();
        let t = tag_question("Show authors whose name is Turing", &schema, &synonyms);
        assert_eq!(*t.labels.first().unwrap(), Label::None, "sentence-initial word exempt");
        assert_eq!(*t.labels.last().unwrap(), Label::Str);
        assert_eq!(t.string_bindings, vec!["Turing"]);
    }

    #[test]
    fn quoted_literal_is_string_anywhere() {
        let (schema, synonyms) = toy();
        let t = tag_question("which publication has title 'deep learning'?", &schema, &synonyms);
        assert_eq!(t.labels[t.tokens.len() - 2], Label::Str);
        assert_eq!(t.labels[t.tokens.len() - 1], Label::Str);
        // maximal span: one slot shared by both words
        assert_eq!(t.slots[t.tokens.len() - 2], Some((SlotKind::Str, 0)));
        assert_eq!(t.slots[t.tokens.len() - 1], Some((SlotKind::Str, 0)));
        assert_eq!(t.string_bindings, vec!["deep learning"]);
    }

    #[test]
    fn all_stopword_question_all_none() {
        let (schema, synonyms) = toy();
        let t = tag_question("what is going on here", &schema, &synonyms);
        assert!(t.labels.iter().all(|&l| l == Label::None));
        assert!(t.value_bindings.is_empty() && t.string_bindings.is_empty());
    }

    #[test]
    fn label_bits_mutually_exclusive() {
        let (schema, synonyms) = toy();
        let t = tag_question(
            "list the title and year of publications where year exceeds 1999",
            &schema,
            &synonyms,
        );
        for label in &t.labels {
            assert!(label.bits().iter().sum::<u8>() <= 1);
        }
    }

    #[test]
    fn encode_uses_unk_for_unknown_words() {
        let (schema, synonyms) = toy();
        let vocab = InputVocab::build(&schema, &synonyms, &["is".to_string()]);
        let t = tag_question("is zzz age 30", &schema, &synonyms);
        let enc = encode_inputs(&t, &vocab);
        assert_eq!(enc[1].vocab_id, vocab.unk_id());
        assert_ne!(enc[0].vocab_id, vocab.unk_id());
        assert_eq!(enc[2].label_bits, [1, 0, 0, 0]);
        assert_eq!(enc[3].slot, Some((SlotKind::Value, 0)));
    }

    #[test]
    fn deterministic() {
        let (schema, synonyms) = toy();
        let q = "name of authors whose age exceeds 40";
        let a = tag_question(q, &schema, &synonyms);
        let b = tag_question(q, &schema, &synonyms);
        assert_eq!(a.tokens, b.tokens);
        assert!(a.labels == b.labels && a.slots == b.slots);
    }
}
