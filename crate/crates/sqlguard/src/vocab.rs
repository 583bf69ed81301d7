//! Output and input vocabularies.
//!
//! The output vocabulary D_S holds every token the decoder may emit:
//! grammar keywords and punctuation, schema identifiers (table names,
//! bare and qualified column names) and the value/string slot tokens that
//! stand in for concrete condition values.  Token classification links
//! each vocabulary entry to the grammar's terminal classes.

use std::collections::{BTreeSet, HashMap};

use crate::grammar::{Grammar, Symbol, SymbolKind, TerminalClass};
use crate::schema::{ColumnType, Schema};

/// Number of value/string slot tokens (VAL_0.., STR_0..).
pub const NUM_VALUE_SLOTS: usize = 3;
pub const NUM_STRING_SLOTS: usize = 3;

pub const STOP_SYMBOL: &str = "Stop_symbol";
pub const UNK: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Keyword,
    Punct,
    Column,
    Table,
    ValueSlot(usize),
    StringSlot(usize),
}

#[derive(Debug, Clone)]
pub struct OutputVocab {
    tokens: Vec<String>,
    kinds: Vec<TokenKind>,
    by_text: HashMap<String, usize>,
    stop_id: usize,
    column_ids: Vec<usize>,
    table_ids: Vec<usize>,
    value_slot_ids: Vec<usize>,
    string_slot_ids: Vec<usize>,
    /// Link-endpoint (qualified key column) token ids.
    key_column_ids: Vec<usize>,
    /// Identifier token -> tables it belongs to (bare columns may belong
    /// to several).
    token_tables: Vec<BTreeSet<String>>,
    /// Column token type, if unambiguous across its tables.
    column_types: Vec<Option<ColumnType>>,
}

impl OutputVocab {
    pub fn build(grammar: &Grammar, schema: &Schema) -> OutputVocab {
        let mut tokens: Vec<String> = Vec::new();
        let mut kinds: Vec<TokenKind> = Vec::new();

        // keywords and punctuation in grammar symbol order (deterministic
        // document order)
        for sym in grammar.symbols() {
            match sym.kind {
                SymbolKind::Terminal(TerminalClass::Keyword) => {
                    tokens.push(sym.name.clone());
                    kinds.push(TokenKind::Keyword);
                }
                SymbolKind::Terminal(TerminalClass::Punctuation) => {
                    tokens.push(sym.name.clone());
                    kinds.push(TokenKind::Punct);
                }
                _ => {}
            }
        }

        let (columns_by_table, tables) = schema.identifier_tokens();
        for table in &tables {
            tokens.push(table.clone());
            kinds.push(TokenKind::Table);
        }
        let mut bare: BTreeSet<String> = BTreeSet::new();
        let mut qualified: BTreeSet<String> = BTreeSet::new();
        for (table, cols) in &columns_by_table {
            for col in cols {
                bare.insert(col.clone());
                qualified.insert(format!("{table}.{col}"));
            }
        }
        for col in bare.iter().chain(qualified.iter()) {
            tokens.push(col.clone());
            kinds.push(TokenKind::Column);
        }
        for i in 0..NUM_VALUE_SLOTS {
            tokens.push(format!("VAL_{i}"));
            kinds.push(TokenKind::ValueSlot(i));
        }
        for i in 0..NUM_STRING_SLOTS {
            tokens.push(format!("STR_{i}"));
            kinds.push(TokenKind::StringSlot(i));
        }

        let by_text: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        assert_eq!(by_text.len(), tokens.len(), "identifier collides with a keyword");

        let endpoints = schema.link_endpoint_tokens();
        let mut column_ids = Vec::new();
        let mut table_ids = Vec::new();
        let mut value_slot_ids = Vec::new();
        let mut string_slot_ids = Vec::new();
        let mut key_column_ids = Vec::new();
        let mut token_tables = vec![BTreeSet::new(); tokens.len()];
        let mut column_types = vec![None; tokens.len()];
        for (id, (text, kind)) in tokens.iter().zip(&kinds).enumerate() {
            match kind {
                TokenKind::Column => {
                    column_ids.push(id);
                    if endpoints.contains(text) {
                        key_column_ids.push(id);
                    }
                    let (owners, ty) = match crate::schema::split_qualified(text) {
                        Some((t, c)) => {
                            let ty = schema.table(t).and_then(|tb| tb.column(c)).map(|c| c.ty);
                            (BTreeSet::from([t.to_string()]), ty)
                        }
                        None => {
                            let owners = schema.tables_with_column(text);
                            let mut types: BTreeSet<_> = owners
                                .iter()
                                .filter_map(|t| {
                                    schema.table(t).and_then(|tb| tb.column(text)).map(|c| c.ty)
                                })
                                .collect();
                            let ty = if types.len() == 1 { types.pop_first() } else { None };
                            (owners, ty)
                        }
                    };
                    token_tables[id] = owners;
                    column_types[id] = ty;
                }
                TokenKind::Table => {
                    table_ids.push(id);
                    token_tables[id] = BTreeSet::from([text.clone()]);
                }
                TokenKind::ValueSlot(_) => value_slot_ids.push(id),
                TokenKind::StringSlot(_) => string_slot_ids.push(id),
                _ => {}
            }
        }
        let stop_id = *by_text.get(STOP_SYMBOL).expect("grammar declares Stop_symbol");

        OutputVocab {
            tokens,
            kinds,
            by_text,
            stop_id,
            column_ids,
            table_ids,
            value_slot_ids,
            string_slot_ids,
            key_column_ids,
            token_tables,
            column_types,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn kind(&self, id: usize) -> &TokenKind {
        &self.kinds[id]
    }

    pub fn id(&self, text: &str) -> Option<usize> {
        self.by_text.get(text).copied()
    }

    pub fn stop_id(&self) -> usize {
        self.stop_id
    }

    pub fn column_ids(&self) -> &[usize] {
        &self.column_ids
    }

    pub fn table_ids(&self) -> &[usize] {
        &self.table_ids
    }

    pub fn value_slot_ids(&self) -> &[usize] {
        &self.value_slot_ids
    }

    pub fn string_slot_ids(&self) -> &[usize] {
        &self.string_slot_ids
    }

    pub fn key_column_ids(&self) -> &[usize] {
        &self.key_column_ids
    }

    /// Tables an identifier token belongs to (empty for non-identifiers).
    pub fn tables_of(&self, id: usize) -> &BTreeSet<String> {
        &self.token_tables[id]
    }

    /// Declared type of a column token, when unambiguous.
    pub fn column_type(&self, id: usize) -> Option<ColumnType> {
        self.column_types[id]
    }

    /// Does vocabulary token `id` match grammar terminal `sym`?
    pub fn matches_terminal(&self, id: usize, sym: &Symbol) -> bool {
        let class = match sym.kind {
            SymbolKind::Terminal(c) => c,
            SymbolKind::NonTerminal => return false,
        };
        match (class, &self.kinds[id]) {
            (TerminalClass::Keyword, TokenKind::Keyword)
            | (TerminalClass::Punctuation, TokenKind::Punct) => sym.name == self.tokens[id],
            (TerminalClass::DerivedColumn, TokenKind::Column) => true,
            (TerminalClass::TableName, TokenKind::Table) => true,
            (TerminalClass::ValueExpr, TokenKind::ValueSlot(_)) => true,
            (TerminalClass::StringExpr, TokenKind::StringSlot(_)) => true,
            _ => false,
        }
    }

    /// All token ids matching a terminal symbol, without any lexicon
    /// policy applied.
    pub fn tokens_of_terminal(&self, sym: &Symbol) -> Vec<usize> {
        (0..self.tokens.len())
            .filter(|&id| self.matches_terminal(id, sym))
            .collect()
    }
}

/// Encoder-side vocabulary: pattern words, schema lexicon, synonyms and
/// an explicit unknown token.
#[derive(Debug, Clone)]
pub struct InputVocab {
    tokens: Vec<String>,
    by_text: HashMap<String, usize>,
    unk: usize,
}

impl InputVocab {
    pub fn build(
        schema: &Schema,
        synonyms: &HashMap<String, String>,
        fixed_words: &[String],
    ) -> InputVocab {
        let mut set: BTreeSet<String> = BTreeSet::new();
        set.insert(UNK.to_string());
        for word in fixed_words {
            set.insert(word.clone());
        }
        for word in synonyms.keys() {
            set.insert(word.clone());
        }
        let (columns_by_table, tables) = schema.identifier_tokens();
        for table in tables {
            set.insert(table);
        }
        for cols in columns_by_table.values() {
            for col in cols {
                set.insert(col.clone());
            }
        }
        let tokens: Vec<String> = set.into_iter().collect();
        let by_text: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let unk = by_text[UNK];
        InputVocab {
            tokens,
            by_text,
            unk,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, text: &str) -> usize {
        self.by_text.get(text).copied().unwrap_or(self.unk)
    }

    pub fn unk_id(&self) -> usize {
        self.unk
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// FNV-1a over the token list; pinned into checkpoint headers so a model
/// is never decoded against a different vocabulary.
pub fn vocab_hash(tokens: &[String]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for token in tokens {
        for byte in token.as_bytes() {
            hash ^= *byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        hash ^= 0xff;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Grammar, Schema) {
        let grammar = Grammar::parse(include_str!("../assets/grammar/sql.bnf")).unwrap();
        let schema = Schema::from_json(include_str!("../assets/imdb/schema.json")).unwrap();
        (grammar, schema)
    }

    #[test]
    fn output_vocab_contents() {
        let (grammar, schema) = setup();
        let vocab = OutputVocab::build(&grammar, &schema);
        for text in ["SELECT", "FROM", "WHERE", ",", "movie", "actor.name", "budget", "VAL_0",
                     "STR_2", STOP_SYMBOL] {
            assert!(vocab.id(text).is_some(), "missing {text}");
        }
        assert_eq!(vocab.kind(vocab.stop_id()), &TokenKind::Keyword);
        let budget = vocab.id("budget").unwrap();
        assert_eq!(vocab.tables_of(budget), &BTreeSet::from(["movie".to_string()]));
        assert_eq!(vocab.column_type(budget), Some(ColumnType::Numeric));
        let name = vocab.id("name").unwrap();
        assert_eq!(vocab.tables_of(name).len(), 2);
        assert_eq!(vocab.column_type(name), Some(ColumnType::String));
        assert!(vocab
            .key_column_ids()
            .contains(&vocab.id("movie.id").unwrap()));
    }

    #[test]
    fn terminal_matching() {
        let (grammar, schema) = setup();
        let vocab = OutputVocab::build(&grammar, &schema);
        let column_sym = grammar.symbol(grammar.symbol_id("derived column").unwrap()).clone();
        let ids = vocab.tokens_of_terminal(&column_sym);
        assert!(ids.contains(&vocab.id("movie.title").unwrap()));
        assert!(!ids.contains(&vocab.id("movie").unwrap()));
        let select_sym = grammar.symbol(grammar.symbol_id("SELECT").unwrap()).clone();
        assert_eq!(vocab.tokens_of_terminal(&select_sym), vec![vocab.id("SELECT").unwrap()]);
    }

    #[test]
    fn deterministic_build() {
        let (grammar, schema) = setup();
        let a = OutputVocab::build(&grammar, &schema);
        let b = OutputVocab::build(&grammar, &schema);
        assert_eq!(a.tokens(), b.tokens());
        assert_eq!(vocab_hash(a.tokens()), vocab_hash(b.tokens()));
    }
}
