//! Dependency rules and vocabulary masks.
//!
//! Short-term rules are generated statically from the grammar: for every
//! (state non-terminal, current terminal) pair, the set of terminals
//! allowed next.  They reproduce the tabular rule form and must agree
//! with the dynamic pushdown tracker at every reachable state.
//!
//! Long-term rules are generated from the schema: emitting an identifier
//! token activates a mask over incompatible identifiers, which is
//! retired only when the expression it is bound to leaves the stack.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::grammar::{ExprId, Grammar, SymbolId, SymbolKind, TerminalClass};
use crate::schema::{ColumnType, Schema};
use crate::tracker::GrammarState;
use crate::vocab::{OutputVocab, TokenKind};

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("conflicting short-term rules for (<{lhs}>, {current}): {detail}")]
    Conflict {
        lhs: String,
        current: String,
        detail: String,
    },
    #[error("no short-term rule for (<{lhs}>, {current})")]
    MissingRule { lhs: String, current: String },
}

/// Lexicon expansion policy restricting which concrete tokens a class
/// terminal may produce at a given grammar position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LexPolicy {
    All,
    /// Aggregate arguments: numeric columns only.
    NumericColumns,
    /// Join conditions: declared link endpoints only.
    KeyColumns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct AllowedNext {
    pub terminal: SymbolId,
    pub policy: LexPolicy,
}

#[derive(Debug, Clone)]
pub struct ShortTermRule {
    /// Non-terminal whose expression consumed the current token.
    pub lhs: SymbolId,
    /// Terminal class/keyword of the current token.
    pub current: SymbolId,
    pub next: Vec<AllowedNext>,
}

#[derive(Debug, Clone)]
pub struct ShortTermRules {
    rules: Vec<ShortTermRule>,
    by_key: HashMap<(SymbolId, SymbolId), usize>,
    /// Terminals allowed before the first token is emitted.
    start: Vec<AllowedNext>,
}

/// Non-terminal names whose derived-column expansions are restricted.
const NUMERIC_ARG_NTS: &[&str] = &["agg column", "sub agg column"];
const KEY_COLUMN_NTS: &[&str] = &["join target", "sub join target"];
const KEY_COLUMN_LHS: &[&str] = &["join clause", "sub join clause"];

fn name_set(grammar: &Grammar, names: &[&str]) -> BTreeSet<SymbolId> {
    names.iter().filter_map(|n| grammar.symbol_id(n)).collect()
}

pub fn generate_short_term_rules(grammar: &Grammar) -> Result<ShortTermRules, RuleError> {
    let numeric_nts = name_set(grammar, NUMERIC_ARG_NTS);
    let key_nts = name_set(grammar, KEY_COLUMN_NTS);
    let key_lhs = name_set(grammar, KEY_COLUMN_LHS);

    // policy for a terminal `t` introduced through symbol `via` inside an
    // expression of `lhs`
    let policy_of = |lhs: SymbolId, via: SymbolId, t: SymbolId| -> LexPolicy {
        let is_column = matches!(
            grammar.symbol(t).kind,
            SymbolKind::Terminal(TerminalClass::DerivedColumn)
        );
        if !is_column {
            return LexPolicy::All;
        }
        if numeric_nts.contains(&via) {
            return LexPolicy::NumericColumns;
        }
        if key_nts.contains(&via) || (via == t && key_lhs.contains(&lhs)) {
            return LexPolicy::KeyColumns;
        }
        LexPolicy::All
    };

    let mut by_key: HashMap<(SymbolId, SymbolId), usize> = HashMap::new();
    let mut rules: Vec<ShortTermRule> = Vec::new();

    for (e, expr) in grammar.exprs().iter().enumerate() {
        let graph = &grammar.expr(e).graph;
        for (p, &sym) in graph.nodes.iter().enumerate() {
            if !grammar.symbol(sym).is_terminal() {
                continue;
            }
            let succ = &graph.succ[p];
            let mut next: BTreeMap<SymbolId, LexPolicy> = BTreeMap::new();
            let insert = |map: &mut BTreeMap<SymbolId, LexPolicy>,
                              t: SymbolId,
                              pol: LexPolicy|
             -> Result<(), RuleError> {
                match map.get(&t) {
                    Some(&old) if old != pol => Err(RuleError::Conflict {
                        lhs: grammar.symbol(expr.lhs).name.clone(),
                        current: grammar.symbol(sym).display(),
                        detail: format!(
                            "terminal {} reachable under policies {old:?} and {pol:?}",
                            grammar.symbol(t).display()
                        ),
                    }),
                    _ => {
                        map.insert(t, pol);
                        Ok(())
                    }
                }
            };
            for &q in &succ.next {
                let via = graph.nodes[q];
                for &t in grammar.first(via) {
                    insert(&mut next, t, policy_of(expr.lhs, via, t))?;
                }
            }
            if succ.can_end {
                for &t in grammar.follow(expr.lhs) {
                    insert(&mut next, t, LexPolicy::All)?;
                }
            }
            let next: Vec<AllowedNext> = next
                .into_iter()
                .map(|(terminal, policy)| AllowedNext { terminal, policy })
                .collect();
            let key = (expr.lhs, sym);
            match by_key.get(&key) {
                Some(&idx) => {
                    if rules[idx].next != next {
                        return Err(RuleError::Conflict {
                            lhs: grammar.symbol(expr.lhs).name.clone(),
                            current: grammar.symbol(sym).display(),
                            detail: "two positions yield different next sets".into(),
                        });
                    }
                }
                None => {
                    by_key.insert(key, rules.len());
                    rules.push(ShortTermRule {
                        lhs: expr.lhs,
                        current: sym,
                        next,
                    });
                }
            }
        }
    }

    let start: Vec<AllowedNext> = grammar
        .first(grammar.root())
        .iter()
        .map(|&terminal| AllowedNext {
            terminal,
            policy: LexPolicy::All,
        })
        .collect();

    Ok(ShortTermRules {
        rules,
        by_key,
        start,
    })
}

impl ShortTermRules {
    pub fn rules(&self) -> &[ShortTermRule] {
        &self.rules
    }

    pub fn get(&self, lhs: SymbolId, current: SymbolId) -> Option<&ShortTermRule> {
        self.by_key.get(&(lhs, current)).map(|&i| &self.rules[i])
    }

    pub fn start_allowed(&self) -> &[AllowedNext] {
        &self.start
    }

    /// Allowed-next entries for a tracker state: the start rule before
    /// any token, the matched (state, current) rule afterwards.
    pub fn allowed_for(&self, state: &GrammarState<'_>) -> Result<&[AllowedNext], RuleError> {
        match state.last_consumed() {
            None => Ok(&self.start),
            Some((lhs, current)) => self
                .get(lhs, current)
                .map(|r| r.next.as_slice())
                .ok_or_else(|| RuleError::MissingRule {
                    lhs: state.grammar().symbol(lhs).name.clone(),
                    current: state.grammar().symbol(current).display(),
                }),
        }
    }

    /// Terminal set allowed next, ignoring lexicon policies; the static
    /// counterpart of `GrammarState::next_terminals`.
    pub fn allowed_terminals(&self, state: &GrammarState<'_>) -> Result<BTreeSet<SymbolId>, RuleError> {
        if state.is_accepting() {
            return Ok(BTreeSet::new());
        }
        Ok(self.allowed_for(state)?.iter().map(|a| a.terminal).collect())
    }

    /// Rule-table dump in document order, one row per line.
    pub fn dump(&self, grammar: &Grammar) -> String {
        let mut out = String::new();
        for (i, rule) in self.rules.iter().enumerate() {
            let next: Vec<String> = rule
                .next
                .iter()
                .map(|a| {
                    let name = grammar.symbol(a.terminal).display();
                    match a.policy {
                        LexPolicy::All => name,
                        LexPolicy::NumericColumns => format!("{name}[numeric]"),
                        LexPolicy::KeyColumns => format!("{name}[key]"),
                    }
                })
                .collect();
            out.push_str(&format!(
                "S{}\t<{}>\t{}\t{}\n",
                i + 1,
                grammar.symbol(rule.lhs).name,
                grammar.symbol(rule.current).display(),
                next.join(", ")
            ));
        }
        out
    }
}

fn policy_admits(vocab: &OutputVocab, policy: LexPolicy, id: usize) -> bool {
    match policy {
        LexPolicy::All => true,
        LexPolicy::NumericColumns => vocab.column_type(id) == Some(ColumnType::Numeric),
        LexPolicy::KeyColumns => vocab.key_column_ids().contains(&id),
    }
}

/// Binary mask (true = allowed) from the short-term rule matching the
/// current state, with lexicon policies applied.
pub fn short_term_mask(
    rules: &ShortTermRules,
    state: &GrammarState<'_>,
    vocab: &OutputVocab,
) -> Result<Vec<bool>, RuleError> {
    let mut mask = vec![false; vocab.len()];
    if state.is_accepting() {
        return Ok(mask);
    }
    let grammar = state.grammar();
    for allowed in rules.allowed_for(state)? {
        let sym = grammar.symbol(allowed.terminal);
        for id in 0..vocab.len() {
            if !mask[id] && vocab.matches_terminal(id, sym) && policy_admits(vocab, allowed.policy, id)
            {
                mask[id] = true;
            }
        }
    }
    Ok(mask)
}

/// Long-term rule: emitting `token` masks `foreign` identifiers while the
/// enclosing query scope is active and `local` tokens while the enclosing
/// clause is active.
#[derive(Debug, Clone)]
pub struct LongTermRule {
    pub class: TerminalClass,
    pub token: usize,
    /// Incompatible tables and their exclusive columns; bound to the
    /// innermost query-scope expression.
    pub foreign: Vec<usize>,
    /// Self token plus wrong-type value slots; bound to the innermost
    /// non-scope expression.
    pub local: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LongTermRules {
    rules: Vec<LongTermRule>,
    by_token: HashMap<usize, usize>,
    /// Owning-table sets per column token.
    owners: BTreeMap<usize, BTreeSet<String>>,
    /// Table name per table token.
    table_names: BTreeMap<usize, String>,
    /// Direct join partners per table.
    partners: BTreeMap<String, BTreeSet<String>>,
    where_id: Option<usize>,
    stop_id: Option<usize>,
    inner_id: Option<usize>,
}

pub fn generate_long_term_rules(vocab: &OutputVocab, schema: &Schema) -> LongTermRules {
    let all_tables: BTreeSet<String> = schema.tables.iter().map(|t| t.name.clone()).collect();
    let mut rules = Vec::new();
    let mut by_token = HashMap::new();
    let mut owners_map = BTreeMap::new();
    let mut table_names = BTreeMap::new();

    // tables compatible with an owner set: the owners plus their direct
    // join partners
    let compatible = |owners: &BTreeSet<String>| -> BTreeSet<String> {
        let mut ok = owners.clone();
        for t in owners {
            if let Ok(partners) = schema.join_partners(t) {
                ok.extend(partners);
            }
        }
        ok
    };

    // identifier tokens masked when only `ok` tables remain usable
    let foreign_tokens = |ok: &BTreeSet<String>| -> Vec<usize> {
        let masked_tables: BTreeSet<String> = all_tables.difference(ok).cloned().collect();
        let mut out = Vec::new();
        for &id in vocab.table_ids() {
            if masked_tables.contains(vocab.token(id)) {
                out.push(id);
            }
        }
        for &id in vocab.column_ids() {
            let owners = vocab.tables_of(id);
            if owners.iter().all(|t| masked_tables.contains(t)) {
                out.push(id);
            }
        }
        out.sort_unstable();
        out
    };

    for id in 0..vocab.len() {
        let (class, owners) = match vocab.kind(id) {
            TokenKind::Column => {
                owners_map.insert(id, vocab.tables_of(id).clone());
                (TerminalClass::DerivedColumn, vocab.tables_of(id).clone())
            }
            TokenKind::Table => {
                table_names.insert(id, vocab.token(id).to_string());
                (TerminalClass::TableName, vocab.tables_of(id).clone())
            }
            _ => continue,
        };
        let foreign = foreign_tokens(&compatible(&owners));
        let mut local = Vec::new();
        if class == TerminalClass::DerivedColumn {
            local.push(id);
            match vocab.column_type(id) {
                Some(ColumnType::Numeric) => local.extend_from_slice(vocab.string_slot_ids()),
                Some(ColumnType::String) => local.extend_from_slice(vocab.value_slot_ids()),
                None => {}
            }
            local.sort_unstable();
        }
        by_token.insert(id, rules.len());
        rules.push(LongTermRule {
            class,
            token: id,
            foreign,
            local,
        });
    }

    let partners = all_tables
        .iter()
        .map(|t| (t.clone(), schema.join_partners(t).unwrap_or_default()))
        .collect();
    LongTermRules {
        rules,
        by_token,
        owners: owners_map,
        table_names,
        partners,
        where_id: vocab.id("WHERE"),
        stop_id: vocab.id("Stop_symbol"),
        inner_id: vocab.id("INNER"),
    }
}

impl LongTermRules {
    pub fn rules(&self) -> &[LongTermRule] {
        &self.rules
    }

    pub fn for_token(&self, token: usize) -> Option<&LongTermRule> {
        self.by_token.get(&token).map(|&i| &self.rules[i])
    }

    /// Rule-table dump, one row per identifier token with a non-trivial
    /// mask.
    pub fn dump(&self, vocab: &OutputVocab) -> String {
        let mut out = String::new();
        let mut n = 0;
        for rule in &self.rules {
            if rule.foreign.is_empty() && rule.local.is_empty() {
                continue;
            }
            n += 1;
            let fmt = |ids: &[usize]| {
                ids.iter()
                    .map(|&i| vocab.token(i).to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            out.push_str(&format!(
                "L{}\t{}\t{}\t{}\t{}\n",
                n,
                rule.class.display_name(),
                vocab.token(rule.token),
                fmt(&rule.foreign),
                fmt(&rule.local)
            ));
        }
        out
    }
}

/// Which component of a long-term rule an activation carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Component {
    Foreign,
    Local,
}

#[derive(Debug, Clone)]
struct ActiveRule {
    rule: usize,
    component: Component,
    depth: usize,
    expr: ExprId,
}

/// Per-query-scope table bookkeeping: which tables the emitted
/// identifiers require, and how far the FROM/JOIN decision has
/// progressed.  Drives the masks that keep every decode resolvable
/// against the final table scope (forced joins, scope pinning).
#[derive(Debug, Clone)]
struct ScopeState {
    depth: usize,
    expr: ExprId,
    /// Owner sets of emitted columns; each must intersect the final
    /// table scope for the query to resolve.
    mentioned: Vec<BTreeSet<String>>,
    from_table: Option<String>,
    join_table: Option<String>,
    /// Tables the ON clause's columns resolve to, in emission order.
    on_tables: Vec<String>,
    /// True once INNER has been emitted: the join's token cost is
    /// already part of the grammatical minimum completion.
    join_started: bool,
    /// True once the join decision is final (join taken, or WHERE
    /// emitted without one): the table scope is pinned.
    closed: bool,
}

/// Canonical form of the scope bookkeeping, for state deduplication.
pub type ScopeSignature =
    Vec<(usize, usize, Vec<Vec<String>>, Option<String>, Option<String>, Vec<String>, bool, bool)>;

/// Long-term rule activations bound to live stack frames.  Call
/// `observe` after every `GrammarState::advance`.
#[derive(Debug, Clone, Default)]
pub struct ActiveRuleSet {
    active: Vec<ActiveRule>,
    scopes: BTreeSet<SymbolId>,
    scope_states: Vec<ScopeState>,
}

/// Non-terminals that open a query scope: those that can derive the
/// root's opening keyword as their first token.
pub fn scope_symbols(grammar: &Grammar) -> BTreeSet<SymbolId> {
    let root_first: BTreeSet<SymbolId> = grammar.first(grammar.root()).clone();
    grammar
        .productions()
        .iter()
        .map(|(lhs, _)| *lhs)
        .filter(|&lhs| !grammar.first(lhs).is_disjoint(&root_first))
        .collect()
}

impl ActiveRuleSet {
    pub fn new(grammar: &Grammar) -> ActiveRuleSet {
        ActiveRuleSet {
            active: Vec::new(),
            scopes: scope_symbols(grammar),
            scope_states: Vec::new(),
        }
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    /// Rule indices currently active (for tracing).
    pub fn active_rules(&self) -> Vec<usize> {
        self.active.iter().map(|a| a.rule).collect()
    }

    /// Canonical signature of the activation set: (rule, component,
    /// depth, expression) per activation.
    pub fn signature(&self) -> Vec<(usize, u8, usize, usize)> {
        self.active
            .iter()
            .map(|a| (a.rule, a.component as u8, a.depth, a.expr))
            .collect()
    }

    /// Canonical signature of the scope bookkeeping.
    pub fn scope_signature(&self) -> ScopeSignature {
        self.scope_states
            .iter()
            .map(|s| {
                let mentioned: BTreeSet<Vec<String>> = s
                    .mentioned
                    .iter()
                    .map(|m| m.iter().cloned().collect())
                    .collect();
                (
                    s.depth,
                    s.expr,
                    mentioned.into_iter().collect(),
                    s.from_table.clone(),
                    s.join_table.clone(),
                    s.on_tables.clone(),
                    s.join_started,
                    s.closed,
                )
            })
            .collect()
    }

    /// Retire rules whose bound frame left the stack, then activate the
    /// rule triggered by the token just consumed (if any).
    pub fn observe(&mut self, rules: &LongTermRules, state: &GrammarState<'_>, token: usize) {
        self.active.retain(|a| state.frame_alive(a.depth, a.expr));
        self.scope_states.retain(|s| state.frame_alive(s.depth, s.expr));
        self.track_scope(rules, state, token);
        let Some(idx) = rules.by_token.get(&token).copied() else {
            return;
        };
        let rule = &rules.rules[idx];
        if !rule.foreign.is_empty() {
            if let Some((depth, expr)) = state.innermost_scope_frame(&self.scopes) {
                self.active.push(ActiveRule {
                    rule: idx,
                    component: Component::Foreign,
                    depth,
                    expr,
                });
            }
        }
        if !rule.local.is_empty() {
            // bind to the innermost clause frame the consuming advance
            // actually went through and that is still alive; if the
            // triggering clause completed in the same advance there is
            // nothing left to protect and the rule never activates
            let grammar = state.grammar();
            let bind = state.last_consumed_frames().iter().rev().find(|&&(d, e)| {
                state.frame_alive(d, e) && !self.scopes.contains(&grammar.expr(e).lhs)
            });
            if let Some(&(depth, expr)) = bind {
                self.active.push(ActiveRule {
                    rule: idx,
                    component: Component::Local,
                    depth,
                    expr,
                });
            }
        }
    }

    /// Record the token against the innermost query scope.
    fn track_scope(&mut self, rules: &LongTermRules, state: &GrammarState<'_>, token: usize) {
        let Some((depth, expr)) = state.innermost_scope_frame(&self.scopes) else {
            return;
        };
        let st = match self
            .scope_states
            .iter_mut()
            .find(|s| s.depth == depth && s.expr == expr)
        {
            Some(st) => st,
            None => {
                self.scope_states.push(ScopeState {
                    depth,
                    expr,
                    mentioned: Vec::new(),
                    from_table: None,
                    join_table: None,
                    on_tables: Vec::new(),
                    join_started: false,
                    closed: false,
                });
                self.scope_states.last_mut().unwrap()
            }
        };
        if let Some(owners) = rules.owners.get(&token) {
            if !st.mentioned.contains(owners) {
                st.mentioned.push(owners.clone());
            }
            // the first two columns after the join target are the ON
            // pair; resolve like the executor (from-table first)
            if st.closed && st.join_table.is_some() && st.on_tables.len() < 2 {
                let resolved = [st.from_table.as_ref(), st.join_table.as_ref()]
                    .into_iter()
                    .flatten()
                    .find(|t| owners.contains(t.as_str()));
                if let Some(t) = resolved {
                    st.on_tables.push(t.clone());
                }
            }
        } else if let Some(name) = rules.table_names.get(&token) {
            if st.from_table.is_none() {
                st.from_table = Some(name.clone());
            } else if st.join_table.is_none() {
                st.join_table = Some(name.clone());
                st.closed = true;
            }
        } else if Some(token) == rules.where_id && st.from_table.is_some() && st.join_table.is_none()
        {
            st.closed = true;
        } else if Some(token) == rules.inner_id {
            st.join_started = true;
        }
    }

    /// Combined long-term mask (true = allowed).
    pub fn mask(&self, rules: &LongTermRules, vocab_len: usize) -> Vec<bool> {
        let mut mask = vec![true; vocab_len];
        for a in &self.active {
            let rule = &rules.rules[a.rule];
            let blocked = match a.component {
                Component::Foreign => &rule.foreign,
                Component::Local => &rule.local,
            };
            for &id in blocked {
                mask[id] = false;
            }
        }
        // only the innermost scope constrains the current position
        if let Some(st) = self.scope_states.last() {
            self.apply_scope_mask(rules, st, &mut mask);
        }
        mask
    }

    /// Mask contributions that keep the decode resolvable against the
    /// query's final table scope.
    fn apply_scope_mask(&self, rules: &LongTermRules, st: &ScopeState, mask: &mut [bool]) {
        let Some(t) = &st.from_table else { return };
        if st.closed {
            // table scope pinned: only identifiers resolvable in it
            let mut scope: BTreeSet<&str> = BTreeSet::new();
            scope.insert(t);
            if let Some(u) = &st.join_table {
                scope.insert(u);
            }
            for (&id, owners) in &rules.owners {
                if !owners.iter().any(|o| scope.contains(o.as_str())) {
                    mask[id] = false;
                }
            }
            for (&id, name) in &rules.table_names {
                if !scope.contains(name.as_str()) {
                    mask[id] = false;
                }
            }
            // second ON column must land on the opposite table, or the
            // join condition degenerates to a single-table comparison
            if st.join_table.is_some() && st.on_tables.len() == 1 {
                let left = &st.on_tables[0];
                for (&id, owners) in &rules.owners {
                    let resolved = [st.from_table.as_ref(), st.join_table.as_ref()]
                        .into_iter()
                        .flatten()
                        .find(|t| owners.contains(t.as_str()));
                    if resolved == Some(left) {
                        mask[id] = false;
                    }
                }
            }
            return;
        }
        // join decision still open; a self-join would leave the ON
        // clause a single key column that its own self-mask then blocks
        for (&id, name) in &rules.table_names {
            if name == t {
                mask[id] = false;
            }
        }
        let partners = rules.partners.get(t).cloned().unwrap_or_default();
        let pending: Vec<&BTreeSet<String>> =
            st.mentioned.iter().filter(|m| !m.contains(t)).collect();
        if partners.is_empty() {
            // no join target exists: keep the decoder out of the join
            // clause entirely
            if let Some(id) = rules.inner_id {
                mask[id] = false;
            }
            return;
        }
        if pending.is_empty() {
            return;
        }
        let covers = |u: &str| pending.iter().all(|m| m.contains(u));
        if partners.iter().any(|u| covers(u)) {
            // some selected column resolves only through a join: force
            // one, onto a table covering everything still pending
            if let Some(id) = rules.where_id {
                mask[id] = false;
            }
            if let Some(id) = rules.stop_id {
                mask[id] = false;
            }
            for (&id, name) in &rules.table_names {
                if !covers(name) {
                    mask[id] = false;
                }
            }
        } else if let Some(id) = rules.inner_id {
            // unreachable by construction (pending identifiers imply a
            // covering partner); never dead-end the decoder regardless
            mask[id] = false;
        }
    }
}

/// Element-wise AND of the short- and long-term masks.
pub fn combine_masks(short: &[bool], long: &[bool]) -> Vec<bool> {
    short.iter().zip(long).map(|(&s, &l)| s && l).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::Grammar;

    fn terminal_names(g: &Grammar, rule: &ShortTermRule) -> Vec<String> {
        rule.next
            .iter()
            .map(|a| g.symbol(a.terminal).display())
            .collect()
    }

    fn rule_by_names<'r>(
        g: &Grammar,
        rules: &'r ShortTermRules,
        lhs: &str,
        current: &str,
    ) -> &'r ShortTermRule {
        let lhs_id = g.symbol_id(lhs).unwrap();
        let cur_id = g.symbol_id(current).unwrap();
        rules
            .get(lhs_id, cur_id)
            .unwrap_or_else(|| panic!("no rule (<{lhs}>, {current})"))
    }

    #[test]
    fn select92_reproduces_nine_rule_table() {
        let g = Grammar::parse(include_str!("../assets/grammar/select92.bnf")).unwrap();
        let rules = generate_short_term_rules(&g).unwrap();
        let expect = [
            ("query", "SELECT", vec!["<derived column>"]),
            ("select list", "derived column", vec!["<comma>", "FROM"]),
            ("select list", ",", vec!["<derived column>"]),
            ("from clause", "FROM", vec!["<table name>"]),
            ("from clause", "table name", vec!["WHERE", "Stop_symbol"]),
            ("where clause", "WHERE", vec!["<derived column>"]),
            ("where clause", "derived column", vec!["<equals operator>"]),
            ("where clause", "=", vec!["<value expression>"]),
            ("where clause", "value expression", vec!["Stop_symbol"]),
        ];
        for (lhs, current, next) in expect {
            let rule = rule_by_names(&g, &rules, lhs, current);
            let mut got = terminal_names(&g, rule);
            got.sort();
            let mut want: Vec<String> = next.iter().map(|s| s.to_string()).collect();
            want.sort();
            assert_eq!(got, want, "rule (<{lhs}>, {current})");
        }
    }

    #[test]
    fn join_grammar_generates_without_conflict() {
        for text in [
            include_str!("../assets/grammar/sql.bnf"),
            include_str!("../assets/grammar/sql_nested.bnf"),
        ] {
            let g = Grammar::parse(text).unwrap();
            let rules = generate_short_term_rules(&g).unwrap();
            let rule = rule_by_names(&g, &rules, "from clause", "table name");
            let mut got = terminal_names(&g, rule);
            got.sort();
            assert_eq!(got, vec!["INNER", "Stop_symbol", "WHERE"]);
        }
    }

    #[test]
    fn lexicon_policies_attach_to_agg_and_join_positions() {
        let g = Grammar::parse(include_str!("../assets/grammar/sql.bnf")).unwrap();
        let rules = generate_short_term_rules(&g).unwrap();
        let agg = rule_by_names(&g, &rules, "select sublist", "(");
        assert_eq!(agg.next.len(), 1);
        assert_eq!(agg.next[0].policy, LexPolicy::NumericColumns);
        let on = rule_by_names(&g, &rules, "join clause", "ON");
        assert_eq!(on.next[0].policy, LexPolicy::KeyColumns);
        let eq = rule_by_names(&g, &rules, "join clause", "=");
        assert_eq!(eq.next[0].policy, LexPolicy::KeyColumns);
        let sel = rule_by_names(&g, &rules, "select sublist", "derived column");
        assert!(sel.next.iter().all(|a| a.policy == LexPolicy::All));
    }

    #[test]
    fn conflicting_grammar_rejected() {
        // same (lhs, terminal) key with different next sets
        let g = Grammar::parse("<a> ::= X Y Stop_symbol | X Z Stop_symbol\n").unwrap();
        assert!(matches!(
            generate_short_term_rules(&g),
            Err(RuleError::Conflict { .. })
        ));
    }

    #[test]
    fn static_rules_agree_with_tracker_on_walks() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let g = Grammar::parse(include_str!("../assets/grammar/sql.bnf")).unwrap();
        let schema = crate::schema::Schema::from_json(include_str!("../assets/imdb/schema.json")).unwrap();
        let vocab = OutputVocab::build(&g, &schema);
        let rules = generate_short_term_rules(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let mut state = GrammarState::init(&g);
            for _ in 0..64 {
                assert_eq!(
                    rules.allowed_terminals(&state).unwrap(),
                    state.next_terminals(),
                    "static/dynamic divergence at step {}",
                    state.emitted_count()
                );
                if state.is_accepting() {
                    break;
                }
                let choices = state.acceptable_tokens(&vocab);
                let tok = *choices.choose(&mut rng).unwrap();
                state.advance(&vocab, tok).unwrap();
            }
        }
    }

    #[test]
    fn long_rules_on_two_table_schema() {
        let g = Grammar::parse(include_str!("../assets/grammar/sql.bnf")).unwrap();
        let schema = crate::schema::Schema::from_json(include_str!("../assets/toy/schema.json")).unwrap();
        let vocab = OutputVocab::build(&g, &schema);
        let rules = generate_long_term_rules(&vocab, &schema);

        // column trigger: "name" masks publication, its columns, itself
        let name = vocab.id("name").unwrap();
        let rule = rules.for_token(name).unwrap();
        assert_eq!(rule.class, TerminalClass::DerivedColumn);
        let masked: BTreeSet<&str> = rule.foreign.iter().map(|&i| vocab.token(i)).collect();
        for t in ["publication", "pid", "title", "year", "publication.pid", "publication.title", "publication.year"] {
            assert!(masked.contains(t), "missing {t}");
        }
        assert!(!masked.contains("author"));
        assert!(!masked.contains("age"));
        assert!(rule.local.contains(&name));
        // "name" is a string column: numeric value slots masked locally
        assert!(rule.local.contains(&vocab.id("VAL_0").unwrap()));
        assert!(!rule.local.contains(&vocab.id("STR_0").unwrap()));

        // table trigger: "author" masks publication and its columns only
        let author = vocab.id("author").unwrap();
        let rule = rules.for_token(author).unwrap();
        assert_eq!(rule.class, TerminalClass::TableName);
        let masked: BTreeSet<&str> = rule.foreign.iter().map(|&i| vocab.token(i)).collect();
        assert_eq!(
            masked,
            ["publication", "pid", "title", "year", "publication.pid", "publication.title", "publication.year"]
                .into_iter()
                .collect()
        );
        assert!(rule.local.is_empty());
    }

    #[test]
    fn join_partner_exempt_from_table_mask() {
        let g = Grammar::parse(include_str!("../assets/grammar/sql.bnf")).unwrap();
        let schema = crate::schema::Schema::from_json(include_str!("../assets/imdb/schema.json")).unwrap();
        let vocab = OutputVocab::build(&g, &schema);
        let rules = generate_long_term_rules(&vocab, &schema);
        let actor = vocab.id("actor").unwrap();
        let rule = rules.for_token(actor).unwrap();
        let masked: BTreeSet<&str> = rule.foreign.iter().map(|&i| vocab.token(i)).collect();
        assert!(!masked.contains("movie"), "link partner must stay available");
        assert!(masked.contains("director"));
        assert!(masked.contains("birth_year"));
        // "name" is shared between actor and director: not masked
        assert!(!masked.contains("name"));
        assert!(masked.contains("director.name"));
    }

    #[test]
    fn active_rules_follow_stack_lifetime() {
        let g = Grammar::parse(include_str!("../assets/grammar/sql.bnf")).unwrap();
        let schema = crate::schema::Schema::from_json(include_str!("../assets/toy/schema.json")).unwrap();
        let vocab = OutputVocab::build(&g, &schema);
        let long = generate_long_term_rules(&vocab, &schema);
        let mut state = GrammarState::init(&g);
        let mut active = ActiveRuleSet::new(&g);
        let step = |state: &mut GrammarState, active: &mut ActiveRuleSet, tok: &str| {
            let id = vocab.id(tok).unwrap();
            state.advance(&vocab, id).unwrap();
            active.observe(&long, state, id);
        };
        step(&mut state, &mut active, "SELECT");
        step(&mut state, &mut active, "name");
        // foreign + local (self) components active
        assert_eq!(active.active_count(), 2);
        let mask = active.mask(&long, vocab.len());
        assert!(!mask[vocab.id("publication").unwrap()]);
        assert!(!mask[vocab.id("name").unwrap()]);
        step(&mut state, &mut active, "FROM");
        // select list popped: self-mask retired, foreign mask persists
        let mask = active.mask(&long, vocab.len());
        assert!(mask[vocab.id("name").unwrap()]);
        assert!(!mask[vocab.id("publication").unwrap()]);
        step(&mut state, &mut active, "author");
        step(&mut state, &mut active, "WHERE");
        // the same column may be referenced again in the where clause
        let mask = active.mask(&long, vocab.len());
        assert!(mask[vocab.id("name").unwrap()]);
        step(&mut state, &mut active, "name");
        // string column: numeric slots masked until the value is emitted
        let mask = active.mask(&long, vocab.len());
        assert!(!mask[vocab.id("VAL_0").unwrap()]);
        assert!(mask[vocab.id("STR_0").unwrap()]);
        step(&mut state, &mut active, "=");
        step(&mut state, &mut active, "STR_0");
        step(&mut state, &mut active, "Stop_symbol");
        assert!(state.is_accepting());
    }

    #[test]
    fn on_clause_triggers_do_not_leak_into_where() {
        // a column closing the join clause must not carry its self-mask
        // or type-mask into the sibling where clause
        let g = Grammar::parse(include_str!("../assets/grammar/sql.bnf")).unwrap();
        let schema = crate::schema::Schema::from_json(include_str!("../assets/imdb/schema.json")).unwrap();
        let vocab = OutputVocab::build(&g, &schema);
        let long = generate_long_term_rules(&vocab, &schema);
        let short = generate_short_term_rules(&g).unwrap();
        let mut state = GrammarState::init(&g);
        let mut active = ActiveRuleSet::new(&g);
        for tok in [
            "SELECT", "AVG", "(", "movie.year", ")", "FROM", "movie", "INNER", "JOIN", "actor",
            "ON", "movie.id", "=", "actor.movie_id", "WHERE",
        ] {
            let id = vocab.id(tok).unwrap();
            state.advance(&vocab, id).unwrap();
            active.observe(&long, &state, id);
        }
        let mask = combine_masks(
            &short_term_mask(&short, &state, &vocab).unwrap(),
            &active.mask(&long, vocab.len()),
        );
        // FK column reusable in WHERE despite its ON appearance
        assert!(mask[vocab.id("actor.movie_id").unwrap()]);
        assert!(mask[vocab.id("actor.name").unwrap()]);
        let id = vocab.id("actor.name").unwrap();
        state.advance(&vocab, id).unwrap();
        active.observe(&long, &state, id);
        let eq = vocab.id("=").unwrap();
        state.advance(&vocab, eq).unwrap();
        active.observe(&long, &state, eq);
        let mask = combine_masks(
            &short_term_mask(&short, &state, &vocab).unwrap(),
            &active.mask(&long, vocab.len()),
        );
        // string condition value admitted; the ON columns' numeric type
        // masks must be gone by now
        assert!(mask[vocab.id("STR_0").unwrap()]);
        assert!(!mask[vocab.id("VAL_0").unwrap()], "string column blocks numeric slots");
    }

    fn imdb_stack() -> (Grammar, OutputVocab, LongTermRules, ShortTermRules) {
        let g = Grammar::parse(include_str!("../assets/grammar/sql.bnf")).unwrap();
        let schema =
            crate::schema::Schema::from_json(include_str!("../assets/imdb/schema.json")).unwrap();
        let vocab = OutputVocab::build(&g, &schema);
        let long = generate_long_term_rules(&vocab, &schema);
        let short = generate_short_term_rules(&g).unwrap();
        (g, vocab, long, short)
    }

    fn replay<'g>(
        g: &'g Grammar,
        vocab: &OutputVocab,
        long: &LongTermRules,
        tokens: &[&str],
    ) -> (GrammarState<'g>, ActiveRuleSet) {
        let mut state = GrammarState::init(g);
        let mut active = ActiveRuleSet::new(g);
        for tok in tokens {
            let id = vocab.id(tok).unwrap_or_else(|| panic!("unknown token {tok}"));
            state.advance(vocab, id).unwrap();
            active.observe(long, &state, id);
        }
        (state, active)
    }

    #[test]
    fn selected_partner_column_forces_a_covering_join() {
        // birth_year lives only in director: after FROM movie the query
        // must not end (or reach WHERE) until the join lands on director
        let (g, vocab, long, _) = imdb_stack();
        let (_, active) = replay(&g, &vocab, &long, &["SELECT", "birth_year", "FROM", "movie"]);
        let mask = active.mask(&long, vocab.len());
        assert!(!mask[vocab.id("WHERE").unwrap()]);
        assert!(!mask[vocab.id("Stop_symbol").unwrap()]);
        assert!(mask[vocab.id("director").unwrap()]);
        assert!(!mask[vocab.id("actor").unwrap()], "actor resolves nothing pending");
        assert!(!mask[vocab.id("movie").unwrap()], "self-join never helps");
    }

    #[test]
    fn where_without_join_pins_the_table_scope() {
        let (g, vocab, long, _) = imdb_stack();
        let (_, active) = replay(&g, &vocab, &long, &["SELECT", "title", "FROM", "movie", "WHERE"]);
        let mask = active.mask(&long, vocab.len());
        // join partners were exempt until now; the decision is final
        assert!(!mask[vocab.id("birth_year").unwrap()]);
        assert!(!mask[vocab.id("name").unwrap()], "no owner of bare name is in scope");
        assert!(mask[vocab.id("year").unwrap()]);
        assert!(mask[vocab.id("movie.budget").unwrap()]);
    }

    #[test]
    fn second_on_column_must_switch_tables() {
        let (g, vocab, long, short) = imdb_stack();
        let (state, active) = replay(
            &g,
            &vocab,
            &long,
            &["SELECT", "title", "FROM", "movie", "INNER", "JOIN", "actor", "ON", "movie.id", "="],
        );
        let mask = combine_masks(
            &short_term_mask(&short, &state, &vocab).unwrap(),
            &active.mask(&long, vocab.len()),
        );
        assert!(mask[vocab.id("actor.movie_id").unwrap()]);
        assert!(
            !mask[vocab.id("movie.director_id").unwrap()],
            "a one-table ON pair joins nothing"
        );
    }

    #[test]
    fn schema_without_links_blocks_inner_join() {
        let g = Grammar::parse(include_str!("../assets/grammar/sql.bnf")).unwrap();
        let schema =
            crate::schema::Schema::from_json(include_str!("../assets/toy/schema.json")).unwrap();
        let vocab = OutputVocab::build(&g, &schema);
        let long = generate_long_term_rules(&vocab, &schema);
        let (_, active) = replay(&g, &vocab, &long, &["SELECT", "name", "FROM", "author"]);
        let mask = active.mask(&long, vocab.len());
        assert!(!mask[vocab.id("INNER").unwrap()]);
        assert!(mask[vocab.id("WHERE").unwrap()]);
        assert!(mask[vocab.id("Stop_symbol").unwrap()]);
    }

    #[test]
    fn start_mask_allows_only_select() {
        let g = Grammar::parse(include_str!("../assets/grammar/sql.bnf")).unwrap();
        let schema = crate::schema::Schema::from_json(include_str!("../assets/toy/schema.json")).unwrap();
        let vocab = OutputVocab::build(&g, &schema);
        let rules = generate_short_term_rules(&g).unwrap();
        let state = GrammarState::init(&g);
        let mask = short_term_mask(&rules, &state, &vocab).unwrap();
        let allowed: Vec<usize> = (0..vocab.len()).filter(|&i| mask[i]).collect();
        assert_eq!(allowed, vec![vocab.id("SELECT").unwrap()]);
    }

    #[test]
    fn scope_symbols_cover_query_family() {
        let g = Grammar::parse(include_str!("../assets/grammar/sql_nested.bnf")).unwrap();
        let scopes = scope_symbols(&g);
        let names: BTreeSet<&str> = scopes.iter().map(|&s| g.symbol(s).name.as_str()).collect();
        assert_eq!(names, ["query", "sub query"].into_iter().collect());
    }
}
