//! Parser for the grammar file format.
//!
//! One production per line; a production continues on the next line when
//! the line ends with `|` or the next line starts with `|`.  Symbols:
//! `<name>` non-terminals, bare keywords, quoted punctuation (`","`),
//! class tags `@column @table @value @string`, `[ ]` options, `{ }`
//! blocks with optional `...` repetition, `#` comments.

use std::collections::HashMap;

use thiserror::Error;

use super::{Item, Symbol, SymbolId, SymbolKind, TerminalClass};

#[derive(Debug, Error)]
pub enum GrammarParseError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: terminal symbol {name} appears on the left-hand side")]
    TerminalOnLhs { line: usize, name: String },
    #[error("line {line}: duplicate production for <{name}>")]
    DuplicateProduction { line: usize, name: String },
    #[error("line {line}: option/block nesting exceeds depth {max}")]
    TooDeep { line: usize, max: usize },
}

const MAX_NEST: usize = 16;

/// Interned symbol name for a class terminal (angle brackets stripped).
fn class_symbol_name(class: TerminalClass) -> &'static str {
    match class {
        TerminalClass::DerivedColumn => "derived column",
        TerminalClass::TableName => "table name",
        TerminalClass::ValueExpr => "value expression",
        TerminalClass::StringExpr => "string expression",
        TerminalClass::Keyword | TerminalClass::Punctuation => unreachable!("not a class tag"),
    }
}

/// Names that alias the four class terminals when written in angle
/// brackets; using one as a left-hand side is a terminal-on-lhs error.
fn class_alias(name: &str) -> Option<TerminalClass> {
    match name {
        "derived column" => Some(TerminalClass::DerivedColumn),
        "table name" | "table reference" => Some(TerminalClass::TableName),
        "value expression" => Some(TerminalClass::ValueExpr),
        "string expression" => Some(TerminalClass::StringExpr),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    NonTerminal(String),
    Keyword(String),
    Punct(String),
    Class(TerminalClass),
    Define, // ::=
    Bar,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Ellipsis,
}

struct Lexer<'a> {
    text: &'a str,
    line: usize,
}

impl<'a> Lexer<'a> {
    fn err(&self, column: usize, message: impl Into<String>) -> GrammarParseError {
        GrammarParseError::Syntax {
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn lex(&self) -> Result<Vec<(Tok, usize)>, GrammarParseError> {
        let mut out = Vec::new();
        let chars: Vec<char> = self.text.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            match c {
                ' ' | '\t' => i += 1,
                '#' => break,
                '<' => {
                    let start = i + 1;
                    let mut j = start;
                    while j < chars.len() && chars[j] != '>' {
                        j += 1;
                    }
                    if j == chars.len() {
                        return Err(self.err(col, "unterminated <symbol>"));
                    }
                    let name: String = chars[start..j].iter().collect();
                    if name.trim().is_empty() {
                        return Err(self.err(col, "empty symbol name"));
                    }
                    out.push((Tok::NonTerminal(name.trim().to_string()), col));
                    i = j + 1;
                }
                '"' => {
                    let start = i + 1;
                    let mut j = start;
                    while j < chars.len() && chars[j] != '"' {
                        j += 1;
                    }
                    if j == chars.len() {
                        return Err(self.err(col, "unterminated quoted terminal"));
                    }
                    let text: String = chars[start..j].iter().collect();
                    if text.is_empty() {
                        return Err(self.err(col, "empty quoted terminal"));
                    }
                    out.push((Tok::Punct(text), col));
                    i = j + 1;
                }
                '@' => {
                    let start = i + 1;
                    let mut j = start;
                    while j < chars.len() && chars[j].is_ascii_alphabetic() {
                        j += 1;
                    }
                    let tag: String = chars[start..j].iter().collect();
                    let class = match tag.as_str() {
                        "column" => TerminalClass::DerivedColumn,
                        "table" => TerminalClass::TableName,
                        "value" => TerminalClass::ValueExpr,
                        "string" => TerminalClass::StringExpr,
                        other => {
                            return Err(self.err(col, format!("unknown class tag @{other}")))
                        }
                    };
                    out.push((Tok::Class(class), col));
                    i = j;
                }
                ':' => {
                    if chars.get(i + 1) == Some(&':') && chars.get(i + 2) == Some(&'=') {
                        out.push((Tok::Define, col));
                        i += 3;
                    } else {
                        return Err(self.err(col, "expected ::="));
                    }
                }
                '|' => {
                    out.push((Tok::Bar, col));
                    i += 1;
                }
                '[' => {
                    out.push((Tok::LBracket, col));
                    i += 1;
                }
                ']' => {
                    out.push((Tok::RBracket, col));
                    i += 1;
                }
                '{' => {
                    out.push((Tok::LBrace, col));
                    i += 1;
                }
                '}' => {
                    out.push((Tok::RBrace, col));
                    i += 1;
                }
                '.' => {
                    if chars.get(i + 1) == Some(&'.') && chars.get(i + 2) == Some(&'.') {
                        out.push((Tok::Ellipsis, col));
                        i += 3;
                    } else {
                        return Err(self.err(col, "stray '.'"));
                    }
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let start = i;
                    let mut j = i;
                    while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                        j += 1;
                    }
                    let word: String = chars[start..j].iter().collect();
                    out.push((Tok::Keyword(word), col));
                    i = j;
                }
                other => return Err(self.err(col, format!("unexpected character {other:?}"))),
            }
        }
        Ok(out)
    }
}

pub(super) struct RawGrammar {
    pub symbols: Vec<Symbol>,
    pub by_name: HashMap<String, SymbolId>,
    pub raw_prods: Vec<(SymbolId, Vec<Vec<Item>>)>,
}

struct SymbolTable {
    symbols: Vec<Symbol>,
    by_name: HashMap<String, SymbolId>,
}

impl SymbolTable {
    fn intern(&mut self, name: &str, kind: SymbolKind) -> SymbolId {
        if let Some(&id) = self.by_name.get(name) {
            return id;
        }
        let id = self.symbols.len();
        self.symbols.push(Symbol {
            name: name.to_string(),
            kind,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }
}

pub(super) fn parse_text(text: &str) -> Result<RawGrammar, GrammarParseError> {
    // join continuation lines
    let mut logical: Vec<(usize, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let stripped = match raw.find('#') {
            Some(pos) if !raw[..pos].contains('"') || raw[..pos].matches('"').count() % 2 == 0 => {
                &raw[..pos]
            }
            _ => raw,
        };
        let trimmed = stripped.trim();
        if trimmed.is_empty() {
            continue;
        }
        let continues_prev = trimmed.starts_with('|')
            || logical
                .last()
                .map(|(_, l)| l.trim_end().ends_with('|'))
                .unwrap_or(false);
        let is_new_production = trimmed.contains("::=");
        if continues_prev && !is_new_production {
            let (_, last) = logical.last_mut().expect("continuation without production");
            last.push(' ');
            last.push_str(trimmed);
        } else {
            logical.push((line_no, trimmed.to_string()));
        }
    }

    let mut table = SymbolTable {
        symbols: Vec::new(),
        by_name: HashMap::new(),
    };
    let mut raw_prods: Vec<(SymbolId, Vec<Vec<Item>>)> = Vec::new();

    for (line, content) in logical {
        let toks = Lexer {
            text: &content,
            line,
        }
        .lex()?;
        let mut pos = 0;
        // left-hand side
        let lhs = match toks.get(pos) {
            Some((Tok::NonTerminal(name), _)) => {
                if let Some(class) = class_alias(name) {
                    let _ = class;
                    return Err(GrammarParseError::TerminalOnLhs {
                        line,
                        name: format!("<{name}>"),
                    });
                }
                name.clone()
            }
            Some((Tok::Keyword(word), _)) | Some((Tok::Punct(word), _)) => {
                return Err(GrammarParseError::TerminalOnLhs {
                    line,
                    name: word.clone(),
                })
            }
            _ => {
                return Err(GrammarParseError::Syntax {
                    line,
                    column: 1,
                    message: "expected <non-terminal> ::= ...".into(),
                })
            }
        };
        pos += 1;
        match toks.get(pos) {
            Some((Tok::Define, _)) => pos += 1,
            _ => {
                return Err(GrammarParseError::Syntax {
                    line,
                    column: 1,
                    message: format!("expected ::= after <{lhs}>"),
                })
            }
        }
        let lhs_id = table.intern(&lhs, SymbolKind::NonTerminal);
        if table.symbols[lhs_id].is_terminal() {
            return Err(GrammarParseError::TerminalOnLhs {
                line,
                name: table.symbols[lhs_id].name.clone(),
            });
        }
        if raw_prods.iter().any(|(l, _)| *l == lhs_id) {
            return Err(GrammarParseError::DuplicateProduction { line, name: lhs });
        }

        // alternatives
        let mut alts: Vec<Vec<Item>> = Vec::new();
        let mut current: Vec<Item> = Vec::new();
        let mut stack: Vec<(char, Vec<Item>)> = Vec::new();
        macro_rules! push_item {
            ($item:expr) => {
                if let Some((_, items)) = stack.last_mut() {
                    items.push($item);
                } else {
                    current.push($item);
                }
            };
        }
        while pos < toks.len() {
            let (tok, col) = &toks[pos];
            match tok {
                Tok::NonTerminal(name) => {
                    let item = if let Some(class) = class_alias(name) {
                        Item::Sym(
                            table.intern(class_symbol_name(class), SymbolKind::Terminal(class)),
                        )
                    } else {
                        Item::Sym(table.intern(name, SymbolKind::NonTerminal))
                    };
                    push_item!(item);
                }
                Tok::Keyword(word) => {
                    let id =
                        table.intern(word, SymbolKind::Terminal(TerminalClass::Keyword));
                    push_item!(Item::Sym(id));
                }
                Tok::Punct(text) => {
                    let id =
                        table.intern(text, SymbolKind::Terminal(TerminalClass::Punctuation));
                    push_item!(Item::Sym(id));
                }
                Tok::Class(class) => {
                    let id =
                        table.intern(class_symbol_name(*class), SymbolKind::Terminal(*class));
                    push_item!(Item::Sym(id));
                }
                Tok::LBracket | Tok::LBrace => {
                    if stack.len() >= MAX_NEST {
                        return Err(GrammarParseError::TooDeep {
                            line,
                            max: MAX_NEST,
                        });
                    }
                    let open = if matches!(tok, Tok::LBracket) { '[' } else { '{' };
                    stack.push((open, Vec::new()));
                }
                Tok::RBracket => {
                    match stack.pop() {
                        Some(('[', items)) if !items.is_empty() => {
                            push_item!(Item::Optional(items))
                        }
                        Some(('[', _)) => {
                            return Err(GrammarParseError::Syntax {
                                line,
                                column: *col,
                                message: "empty option".into(),
                            })
                        }
                        _ => {
                            return Err(GrammarParseError::Syntax {
                                line,
                                column: *col,
                                message: "unmatched ]".into(),
                            })
                        }
                    }
                }
                Tok::RBrace => {
                    let items = match stack.pop() {
                        Some(('{', items)) if !items.is_empty() => items,
                        Some(('{', _)) => {
                            return Err(GrammarParseError::Syntax {
                                line,
                                column: *col,
                                message: "empty block".into(),
                            })
                        }
                        _ => {
                            return Err(GrammarParseError::Syntax {
                                line,
                                column: *col,
                                message: "unmatched }".into(),
                            })
                        }
                    };
                    let repeat = matches!(toks.get(pos + 1), Some((Tok::Ellipsis, _)));
                    if repeat {
                        pos += 1;
                    }
                    push_item!(Item::Block { items, repeat });
                }
                Tok::Ellipsis => {
                    return Err(GrammarParseError::Syntax {
                        line,
                        column: *col,
                        message: "'...' is only valid after a block".into(),
                    })
                }
                Tok::Bar => {
                    if !stack.is_empty() {
                        return Err(GrammarParseError::Syntax {
                            line,
                            column: *col,
                            message: "'|' inside option/block".into(),
                        });
                    }
                    if current.is_empty() {
                        return Err(GrammarParseError::Syntax {
                            line,
                            column: *col,
                            message: "empty alternative".into(),
                        });
                    }
                    alts.push(std::mem::take(&mut current));
                }
                Tok::Define => {
                    return Err(GrammarParseError::Syntax {
                        line,
                        column: *col,
                        message: "unexpected ::=".into(),
                    })
                }
            }
            pos += 1;
        }
        if !stack.is_empty() {
            return Err(GrammarParseError::Syntax {
                line,
                column: content.len(),
                message: "unclosed option/block".into(),
            });
        }
        if current.is_empty() {
            return Err(GrammarParseError::Syntax {
                line,
                column: content.len(),
                message: "empty alternative".into(),
            });
        }
        alts.push(current);
        raw_prods.push((lhs_id, alts));
    }

    Ok(RawGrammar {
        symbols: table.symbols,
        by_name: table.by_name,
        raw_prods,
    })
}
