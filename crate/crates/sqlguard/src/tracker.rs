//! Pushdown tracking of the grammatical state of a partially emitted SQL
//! sequence.
//!
//! The tracker is a predictive (LL(1)) pushdown machine over the
//! compiled grammar.  Its stack holds one frame per entered expression;
//! the binary grammar vector g_t marks which expressions currently
//! appear on the stack.  Entering a nested sub-query pushes fresh frames
//! above the saved outer ones, so finishing the sub-query restores the
//! outer state with exactly one cursor advance.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::grammar::{ExprId, Grammar, SymbolId};
use crate::vocab::OutputVocab;

/// Recursion bound: the same expression may be on the stack at most this
/// many times (bounds sub-query nesting).
pub const MAX_NESTING: usize = 8;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("token `{token}` rejected; expected one of: {expected}")]
    Reject { token: String, expected: String },
    #[error("sequence already accepted; no further tokens allowed")]
    AlreadyAccepted,
    #[error("sub-query nesting exceeds depth {0}")]
    TooDeep(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Frame {
    /// Root non-terminal whose alternative is not chosen yet (only at
    /// t=0).
    Pending { nt: SymbolId },
    Active {
        expr: ExprId,
        next: Vec<usize>,
        can_end: bool,
    },
}

#[derive(Debug, Clone)]
pub struct GrammarState<'g> {
    grammar: &'g Grammar,
    stack: Vec<Frame>,
    g: Vec<bool>,
    emitted: usize,
    accepted: bool,
    /// (lhs, terminal, expression) of the frame that consumed the last
    /// token; kept even if that frame popped.
    last_consumed: Option<(SymbolId, SymbolId, ExprId)>,
    /// (depth, expression) of every frame pushed or repositioned while
    /// consuming the last token, outermost first; entries may refer to
    /// frames that popped before the advance finished.
    touched: Vec<(usize, ExprId)>,
}

impl<'g> GrammarState<'g> {
    pub fn init(grammar: &'g Grammar) -> GrammarState<'g> {
        let mut state = GrammarState {
            grammar,
            stack: vec![Frame::Pending { nt: grammar.root() }],
            g: vec![false; grammar.expr_count()],
            emitted: 0,
            accepted: false,
            last_consumed: None,
            touched: Vec::new(),
        };
        state.refresh_grammar_vector();
        state
    }

    pub fn grammar(&self) -> &'g Grammar {
        self.grammar
    }

    /// Copy of g_t.
    pub fn grammar_vector(&self) -> Vec<bool> {
        self.g.clone()
    }

    pub fn grammar_vector_f64(&self) -> Vec<f64> {
        self.g.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn is_expression_active(&self, expr: ExprId) -> bool {
        self.g[expr]
    }

    pub fn active_expressions(&self) -> Vec<ExprId> {
        (0..self.g.len()).filter(|&i| self.g[i]).collect()
    }

    pub fn is_accepting(&self) -> bool {
        self.accepted
    }

    pub fn emitted_count(&self) -> usize {
        self.emitted
    }

    pub fn stack_depth(&self) -> usize {
        self.stack.len()
    }

    /// (lhs, terminal) of the frame that consumed the last token.
    pub fn last_consumed(&self) -> Option<(SymbolId, SymbolId)> {
        self.last_consumed.map(|(l, t, _)| (l, t))
    }

    /// Frames involved in consuming the last token, outermost first;
    /// frames that completed during the same advance are included even
    /// though they are no longer on the stack.
    pub fn last_consumed_frames(&self) -> &[(usize, ExprId)] {
        &self.touched
    }

    fn touch(&mut self, depth: usize, expr: ExprId) {
        if self.touched.last() != Some(&(depth, expr)) {
            self.touched.push((depth, expr));
        }
    }

    /// Expressions of the current stack frames, outermost first.
    pub fn stack_expressions(&self) -> Vec<ExprId> {
        self.stack
            .iter()
            .filter_map(|f| match f {
                Frame::Active { expr, .. } => Some(*expr),
                Frame::Pending { .. } => None,
            })
            .collect()
    }

    /// Innermost stack frame whose left-hand side is in `scopes`, as
    /// (stack depth, expression).
    pub fn innermost_scope_frame(&self, scopes: &BTreeSet<SymbolId>) -> Option<(usize, ExprId)> {
        self.stack.iter().enumerate().rev().find_map(|(d, f)| match f {
            Frame::Active { expr, .. } if scopes.contains(&self.grammar.expr(*expr).lhs) => {
                Some((d, *expr))
            }
            _ => None,
        })
    }

    /// Innermost stack frame whose left-hand side is NOT in `scopes`
    /// (the local clause enclosing the cursor).
    pub fn innermost_non_scope_frame(&self, scopes: &BTreeSet<SymbolId>) -> Option<(usize, ExprId)> {
        self.stack.iter().enumerate().rev().find_map(|(d, f)| match f {
            Frame::Active { expr, .. } if !scopes.contains(&self.grammar.expr(*expr).lhs) => {
                Some((d, *expr))
            }
            _ => None,
        })
    }

    /// Canonical stack signature: one (expression-or-symbol, cursor
    /// positions, flags) triple per frame.  Two states with equal
    /// signatures accept exactly the same continuations.
    pub fn signature(&self) -> Vec<(usize, Vec<usize>, u8)> {
        self.stack
            .iter()
            .map(|f| match f {
                Frame::Pending { nt } => (*nt, Vec::new(), 2),
                Frame::Active { expr, next, can_end } => {
                    (*expr, next.clone(), u8::from(*can_end))
                }
            })
            .collect()
    }

    /// Is the frame identified by (depth, expression) still on the stack?
    pub fn frame_alive(&self, depth: usize, expr: ExprId) -> bool {
        matches!(self.stack.get(depth), Some(Frame::Active { expr: e, .. }) if *e == expr)
    }

    /// Minimal number of further tokens needed to reach acceptance;
    /// every frame is already positioned past its child non-terminal, so
    /// the per-frame completions sum.
    pub fn min_tokens_to_accept(&self) -> usize {
        self.stack
            .iter()
            .map(|f| match f {
                Frame::Pending { nt } => self.grammar.min_tokens(*nt),
                Frame::Active { expr, next, can_end } => {
                    self.grammar.min_completion(*expr, next, *can_end)
                }
            })
            .sum()
    }

    fn refresh_grammar_vector(&mut self) {
        self.g.iter_mut().for_each(|b| *b = false);
        for frame in &self.stack {
            match frame {
                Frame::Pending { nt } => {
                    for &e in self.grammar.alternatives(*nt) {
                        self.g[e] = true;
                    }
                }
                Frame::Active { expr, .. } => self.g[*expr] = true,
            }
        }
    }

    /// Terminal symbols acceptable as the next token, computed directly
    /// from the pushdown state.
    pub fn next_terminals(&self) -> BTreeSet<SymbolId> {
        let mut out = BTreeSet::new();
        for frame in self.stack.iter().rev() {
            match frame {
                Frame::Pending { nt } => {
                    out.extend(self.grammar.first(*nt).iter().copied());
                    break;
                }
                Frame::Active { expr, next, can_end } => {
                    let graph = &self.grammar.expr(*expr).graph;
                    for &p in next {
                        out.extend(self.grammar.first(graph.nodes[p]).iter().copied());
                    }
                    if !can_end {
                        break;
                    }
                }
            }
        }
        out
    }

    /// Vocabulary token ids acceptable as the next token.
    pub fn acceptable_tokens(&self, vocab: &OutputVocab) -> Vec<usize> {
        if self.accepted {
            return Vec::new();
        }
        let terminals = self.next_terminals();
        (0..vocab.len())
            .filter(|&id| {
                terminals
                    .iter()
                    .any(|&t| vocab.matches_terminal(id, self.grammar.symbol(t)))
            })
            .collect()
    }

    /// Consume one output token, updating the pushdown state and g_t.
    pub fn advance(&mut self, vocab: &OutputVocab, token_id: usize) -> Result<(), TrackError> {
        if self.accepted {
            return Err(TrackError::AlreadyAccepted);
        }
        self.touched.clear();
        loop {
            let Some(top) = self.stack.last().cloned() else {
                return Err(self.reject(vocab, token_id));
            };
            match top {
                Frame::Pending { nt } => {
                    // choose the alternative whose FIRST matches the token
                    let chosen = self.grammar.alternatives(nt).iter().copied().find(|&e| {
                        let (first, _) = self
                            .grammar
                            .positions_first(e, &self.grammar.expr(e).graph.start);
                        first
                            .iter()
                            .any(|&t| vocab.matches_terminal(token_id, self.grammar.symbol(t)))
                    });
                    let Some(expr) = chosen else {
                        return Err(self.reject(vocab, token_id));
                    };
                    let start = self.grammar.expr(expr).graph.start.clone();
                    *self.stack.last_mut().unwrap() = Frame::Active {
                        expr,
                        next: start.next,
                        can_end: start.can_end,
                    };
                    self.touch(self.stack.len() - 1, expr);
                }
                Frame::Active { expr, ref next, can_end } => {
                    let graph = &self.grammar.expr(expr).graph;
                    // candidate position whose symbol can start with this
                    // token (unique under LL(1))
                    let candidate = next.iter().copied().find(|&p| {
                        self.grammar
                            .first(graph.nodes[p])
                            .iter()
                            .any(|&t| vocab.matches_terminal(token_id, self.grammar.symbol(t)))
                    });
                    match candidate {
                        Some(p) => {
                            let sym = graph.nodes[p];
                            let succ = graph.succ[p].clone();
                            if self.grammar.symbol(sym).is_terminal() {
                                // consume
                                let lhs = self.grammar.expr(expr).lhs;
                                *self.stack.last_mut().unwrap() = Frame::Active {
                                    expr,
                                    next: succ.next,
                                    can_end: succ.can_end,
                                };
                                self.touch(self.stack.len() - 1, expr);
                                self.last_consumed = Some((lhs, sym, expr));
                                self.pop_completed();
                                self.accepted = self.stack.is_empty();
                                self.emitted += 1;
                                self.refresh_grammar_vector();
                                return Ok(());
                            }
                            // descend into the non-terminal
                            let chosen =
                                self.grammar.alternatives(sym).iter().copied().find(|&e| {
                                    let (first, _) = self
                                        .grammar
                                        .positions_first(e, &self.grammar.expr(e).graph.start);
                                    first.iter().any(|&t| {
                                        vocab.matches_terminal(token_id, self.grammar.symbol(t))
                                    })
                                });
                            let Some(child) = chosen else {
                                return Err(self.reject(vocab, token_id));
                            };
                            let occurrences = self
                                .stack
                                .iter()
                                .filter(|f| matches!(f, Frame::Active { expr: e, .. } if *e == child))
                                .count();
                            if occurrences >= MAX_NESTING {
                                return Err(TrackError::TooDeep(MAX_NESTING));
                            }
                            // advance this frame past the non-terminal
                            // before descending
                            *self.stack.last_mut().unwrap() = Frame::Active {
                                expr,
                                next: succ.next,
                                can_end: succ.can_end,
                            };
                            self.touch(self.stack.len() - 1, expr);
                            let start = self.grammar.expr(child).graph.start.clone();
                            self.stack.push(Frame::Active {
                                expr: child,
                                next: start.next,
                                can_end: start.can_end,
                            });
                            self.touch(self.stack.len() - 1, child);
                        }
                        None if can_end => {
                            self.stack.pop();
                        }
                        None => return Err(self.reject(vocab, token_id)),
                    }
                }
            }
        }
    }

    /// New state after consuming `token_id`.
    pub fn advanced(&self, vocab: &OutputVocab, token_id: usize) -> Result<GrammarState<'g>, TrackError> {
        let mut next = self.clone();
        next.advance(vocab, token_id)?;
        Ok(next)
    }

    fn pop_completed(&mut self) {
        while let Some(Frame::Active { next, can_end, .. }) = self.stack.last() {
            if next.is_empty() {
                debug_assert!(can_end, "cursor with no successors must be at an exit");
                self.stack.pop();
            } else {
                break;
            }
        }
    }

    fn reject(&self, vocab: &OutputVocab, token_id: usize) -> TrackError {
        let expected: Vec<String> = self
            .next_terminals()
            .iter()
            .map(|&t| self.grammar.symbol(t).display())
            .collect();
        TrackError::Reject {
            token: vocab.token(token_id).to_string(),
            expected: expected.join(", "),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::Grammar;
    use crate::schema::Schema;

    fn toy_setup() -> (Grammar, Schema) {
        let grammar = Grammar::parse(include_str!("../assets/grammar/sql.bnf")).unwrap();
        let schema = Schema::from_json(include_str!("../assets/toy/schema.json")).unwrap();
        (grammar, schema)
    }

    fn nested_setup() -> (Grammar, Schema) {
        let grammar = Grammar::parse(include_str!("../assets/grammar/sql_nested.bnf")).unwrap();
        let schema = Schema::from_json(include_str!("../assets/toy/schema.json")).unwrap();
        (grammar, schema)
    }

    fn advance_all<'g>(
        state: &mut GrammarState<'g>,
        vocab: &OutputVocab,
        tokens: &[&str],
    ) {
        for t in tokens {
            let id = vocab.id(t).unwrap_or_else(|| panic!("token {t} not in vocab"));
            state.advance(vocab, id).unwrap_or_else(|e| panic!("advance {t}: {e}"));
        }
    }

    #[test]
    fn initial_state_permits_only_select() {
        let (grammar, schema) = toy_setup();
        let vocab = OutputVocab::build(&grammar, &schema);
        let state = GrammarState::init(&grammar);
        let acceptable = state.acceptable_tokens(&vocab);
        assert_eq!(acceptable, vec![vocab.id("SELECT").unwrap()]);
        assert!(!state.is_accepting());
        assert_eq!(state.emitted_count(), 0);
    }

    #[test]
    fn single_expression_grammar_vector() {
        let grammar = Grammar::parse("<a> ::= X\n").unwrap();
        let state = GrammarState::init(&grammar);
        assert_eq!(state.grammar_vector(), vec![true]);
    }

    #[test]
    fn select_blocks_from_next() {
        let (grammar, schema) = toy_setup();
        let vocab = OutputVocab::build(&grammar, &schema);
        let mut state = GrammarState::init(&grammar);
        advance_all(&mut state, &vocab, &["SELECT"]);
        let acceptable = state.acceptable_tokens(&vocab);
        assert!(!acceptable.contains(&vocab.id("FROM").unwrap()));
        assert!(acceptable.contains(&vocab.id("name").unwrap()));
    }

    #[test]
    fn full_query_accepts_on_stop() {
        let (grammar, schema) = toy_setup();
        let vocab = OutputVocab::build(&grammar, &schema);
        let mut state = GrammarState::init(&grammar);
        advance_all(&mut state, &vocab, &["SELECT", "name", "FROM", "author"]);
        assert!(!state.is_accepting());
        let acceptable = state.acceptable_tokens(&vocab);
        assert!(acceptable.contains(&vocab.id("WHERE").unwrap()));
        assert!(acceptable.contains(&vocab.id("Stop_symbol").unwrap()));
        advance_all(&mut state, &vocab, &["Stop_symbol"]);
        assert!(state.is_accepting());
        assert!(state.grammar_vector().iter().all(|&b| !b));
        assert!(state
            .advance(&vocab, vocab.id("SELECT").unwrap())
            .is_err());
    }

    #[test]
    fn mid_where_not_accepting() {
        let (grammar, schema) = toy_setup();
        let vocab = OutputVocab::build(&grammar, &schema);
        let mut state = GrammarState::init(&grammar);
        advance_all(&mut state, &vocab, &["SELECT", "name", "FROM", "author", "WHERE", "age"]);
        assert!(!state.is_accepting());
        let acceptable: Vec<&str> = state
            .acceptable_tokens(&vocab)
            .into_iter()
            .map(|id| vocab.token(id))
            .collect();
        assert_eq!(acceptable, vec!["=", ">"]);
    }

    #[test]
    fn ungrammatical_token_rejected_with_expected() {
        let (grammar, schema) = toy_setup();
        let vocab = OutputVocab::build(&grammar, &schema);
        let mut state = GrammarState::init(&grammar);
        let err = state.advance(&vocab, vocab.id("FROM").unwrap()).unwrap_err();
        match err {
            TrackError::Reject { expected, .. } => assert!(expected.contains("SELECT")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sub_query_push_and_restore() {
        let (grammar, schema) = nested_setup();
        let vocab = OutputVocab::build(&grammar, &schema);
        let mut state = GrammarState::init(&grammar);
        advance_all(&mut state, &vocab, &["SELECT", "name", "FROM", "author", "WHERE", "age", "="]);
        let before = state.clone();
        advance_all(
            &mut state,
            &vocab,
            &["(", "SELECT", "year", "FROM", "publication", ")"],
        );
        // recursion invariant: state after a balanced sub-query span
        // equals the state reached by consuming a plain value instead
        let mut direct = before.clone();
        advance_all(&mut direct, &vocab, &["VAL_0"]);
        assert_eq!(state.grammar_vector(), direct.grammar_vector());
        assert_eq!(state.stack_expressions(), direct.stack_expressions());
        advance_all(&mut state, &vocab, &["Stop_symbol"]);
        assert!(state.is_accepting());
    }

    #[test]
    fn nesting_depth_bounded() {
        let (grammar, schema) = nested_setup();
        let vocab = OutputVocab::build(&grammar, &schema);
        let mut state = GrammarState::init(&grammar);
        advance_all(&mut state, &vocab, &["SELECT", "name", "FROM", "author", "WHERE", "age", "="]);
        let mut err = None;
        for _ in 0..MAX_NESTING + 1 {
            for t in ["(", "SELECT", "name", "FROM", "author", "WHERE", "age", "="] {
                if let Err(e) = state.advance(&vocab, vocab.id(t).unwrap()) {
                    err = Some(e);
                    break;
                }
            }
            if err.is_some() {
                break;
            }
        }
        assert!(matches!(err, Some(TrackError::TooDeep(_))), "expected nesting bound");
    }

    #[test]
    fn min_tokens_to_accept_is_a_certificate() {
        // from any prefix, greedily consuming the token that minimizes
        // the remaining distance reaches acceptance in exactly that many
        // steps, and each step decreases the distance by one
        let (grammar, schema) = nested_setup();
        let vocab = OutputVocab::build(&grammar, &schema);
        let prefixes: [&[&str]; 4] = [
            &[],
            &["SELECT", "name", ","],
            &["SELECT", "COUNT", "("],
            &["SELECT", "name", "FROM", "author", "WHERE", "age", "=", "(", "SELECT"],
        ];
        for prefix in prefixes {
            let mut state = GrammarState::init(&grammar);
            advance_all(&mut state, &vocab, prefix);
            let mut dist = state.min_tokens_to_accept();
            assert!(dist > 0);
            for _ in 0..dist {
                let (_, next) = state
                    .acceptable_tokens(&vocab)
                    .into_iter()
                    .filter_map(|id| {
                        let n = state.advanced(&vocab, id).ok()?;
                        Some((n.min_tokens_to_accept(), n))
                    })
                    .min_by_key(|(d, _)| *d)
                    .expect("a grammatical continuation must exist");
                state = next;
                assert_eq!(state.min_tokens_to_accept(), dist - 1);
                dist -= 1;
            }
            assert!(state.is_accepting(), "prefix {prefix:?}");
        }
    }

    #[test]
    fn grammar_vector_matches_replay_oracle() {
        // g_t must be a deterministic function of the emitted prefix
        let (grammar, schema) = toy_setup();
        let vocab = OutputVocab::build(&grammar, &schema);
        let tokens = ["SELECT", "name", ",", "age", "FROM", "author", "WHERE", "age", ">", "VAL_0"];
        let mut state = GrammarState::init(&grammar);
        for i in 0..tokens.len() {
            advance_all(&mut state, &vocab, &tokens[i..=i]);
            let mut replay = GrammarState::init(&grammar);
            advance_all(&mut replay, &vocab, &tokens[..=i]);
            assert_eq!(state.grammar_vector(), replay.grammar_vector());
        }
    }
}
