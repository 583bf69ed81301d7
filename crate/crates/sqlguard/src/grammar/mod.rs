//! BNF grammar representation and analysis.
//!
//! A grammar is a set of productions over terminal and non-terminal
//! symbols.  Each alternative of a production is an *expression*; the
//! expression index (document order) is the coordinate system for the
//! binary grammar vector maintained by the state tracker.

mod parse;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

pub use parse::GrammarParseError;

pub type SymbolId = usize;
pub type ExprId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TerminalClass {
    DerivedColumn,
    TableName,
    ValueExpr,
    StringExpr,
    Keyword,
    Punctuation,
}

impl TerminalClass {
    /// Display name used in rule-table dumps, mirroring the angle-bracket
    /// convention for class terminals.
    pub fn display_name(self) -> &'static str {
        match self {
            TerminalClass::DerivedColumn => "<derived column>",
            TerminalClass::TableName => "<table name>",
            TerminalClass::ValueExpr => "<value expression>",
            TerminalClass::StringExpr => "<string expression>",
            TerminalClass::Keyword => "keyword",
            TerminalClass::Punctuation => "punctuation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SymbolKind {
    NonTerminal,
    Terminal(TerminalClass),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Symbol {
    pub name: String,
    pub kind: SymbolKind,
}

impl Symbol {
    pub fn is_terminal(&self) -> bool {
        matches!(self.kind, SymbolKind::Terminal(_))
    }

    pub fn terminal_class(&self) -> Option<TerminalClass> {
        match self.kind {
            SymbolKind::Terminal(c) => Some(c),
            SymbolKind::NonTerminal => None,
        }
    }

    /// Human-readable form: `<name>` for non-terminals and class
    /// terminals, the bare text for keywords and punctuation.
    pub fn display(&self) -> String {
        match self.kind {
            SymbolKind::NonTerminal => format!("<{}>", self.name),
            SymbolKind::Terminal(TerminalClass::Keyword) => self.name.clone(),
            SymbolKind::Terminal(TerminalClass::Punctuation) => format!("<{}>", punct_name(&self.name)),
            SymbolKind::Terminal(c) => c.display_name().to_string(),
        }
    }
}

fn punct_name(text: &str) -> &'static str {
    match text {
        "," => "comma",
        "(" => "left paren",
        ")" => "right paren",
        "=" => "equals operator",
        ">" => "greater-than operator",
        _ => "punctuation",
    }
}

/// One item on the right-hand side of an alternative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Item {
    Sym(SymbolId),
    /// `[ ... ]`
    Optional(Vec<Item>),
    /// `{ ... }` with optional trailing `...` repetition marker.
    Block { items: Vec<Item>, repeat: bool },
}

/// Cursor positions within an alternative graph: candidate next nodes
/// plus whether the alternative may end here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Positions {
    pub next: Vec<usize>,
    pub can_end: bool,
}

/// An alternative compiled to a position graph (Glushkov-style): every
/// node is one symbol occurrence; `succ[i]` gives the positions reachable
/// after consuming node `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AltGraph {
    pub nodes: Vec<SymbolId>,
    pub start: Positions,
    pub succ: Vec<Positions>,
}

#[derive(Debug, Clone)]
pub struct Expression {
    pub lhs: SymbolId,
    pub items: Vec<Item>,
    pub graph: AltGraph,
}

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error(transparent)]
    Parse(#[from] GrammarParseError),
    #[error("undefined symbol <{0}>")]
    UndefinedSymbol(String),
    #[error("terminal symbol {0} appears on the left-hand side")]
    TerminalOnLhs(String),
    #[error("left recursion through <{0}>")]
    LeftRecursion(String),
    #[error("non-terminal <{0}> derives the empty sequence, which is not supported")]
    NullableNonTerminal(String),
    #[error("unknown symbol {0}")]
    UnknownSymbol(String),
    #[error("LL(1) conflict in <{symbol}> on {tokens}")]
    Ll1Conflict { symbol: String, tokens: String },
}

#[derive(Debug, Clone)]
pub struct Grammar {
    symbols: Vec<Symbol>,
    by_name: HashMap<String, SymbolId>,
    exprs: Vec<Expression>,
    /// Productions in document order: (lhs, expression ids).
    prods: Vec<(SymbolId, Vec<ExprId>)>,
    root: SymbolId,
    first: Vec<BTreeSet<SymbolId>>,
    follow: Vec<BTreeSet<SymbolId>>,
    /// Minimal number of tokens a full derivation of each symbol
    /// consumes.
    min_sym: Vec<usize>,
    /// Per expression, per graph node: minimal tokens to consume that
    /// node and then finish the alternative.
    min_pos: Vec<Vec<usize>>,
}

impl Grammar {
    /// Parse a grammar from the text file format.  The first production's
    /// left-hand side is the root symbol.
    pub fn parse(text: &str) -> Result<Grammar, GrammarError> {
        let raw = parse::parse_text(text)?;
        Grammar::from_raw(raw)
    }

    fn from_raw(raw: parse::RawGrammar) -> Result<Grammar, GrammarError> {
        let parse::RawGrammar { symbols, by_name, raw_prods } = raw;
        let mut exprs = Vec::new();
        let mut prods = Vec::new();
        for (lhs, alts) in raw_prods {
            let mut ids = Vec::new();
            for items in alts {
                let graph = compile_alternative(&items);
                let id = exprs.len();
                exprs.push(Expression { lhs, items, graph });
                ids.push(id);
            }
            prods.push((lhs, ids));
        }
        let root = prods
            .first()
            .map(|(lhs, _)| *lhs)
            .ok_or_else(|| GrammarError::UndefinedSymbol("query".into()))?;
        let mut grammar = Grammar {
            symbols,
            by_name,
            exprs,
            prods,
            root,
            first: Vec::new(),
            follow: Vec::new(),
            min_sym: Vec::new(),
            min_pos: Vec::new(),
        };
        grammar.check_declared()?;
        grammar.check_left_recursion()?;
        grammar.analyze()?;
        grammar.compute_min_lengths();
        Ok(grammar)
    }

    fn check_declared(&self) -> Result<(), GrammarError> {
        let declared: BTreeSet<SymbolId> = self.prods.iter().map(|(l, _)| *l).collect();
        for expr in &self.exprs {
            for &sym in &expr.graph.nodes {
                if !self.symbols[sym].is_terminal() && !declared.contains(&sym) {
                    return Err(GrammarError::UndefinedSymbol(self.symbols[sym].name.clone()));
                }
            }
        }
        Ok(())
    }

    fn check_left_recursion(&self) -> Result<(), GrammarError> {
        // edge nt -> nt' if nt' can appear as the first symbol of an
        // expansion of nt
        let mut edges: HashMap<SymbolId, BTreeSet<SymbolId>> = HashMap::new();
        for expr in &self.exprs {
            for &p in &expr.graph.start.next {
                let sym = expr.graph.nodes[p];
                if !self.symbols[sym].is_terminal() {
                    edges.entry(expr.lhs).or_default().insert(sym);
                }
            }
        }
        // DFS cycle detection
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Grey,
            Black,
        }
        let mut marks: HashMap<SymbolId, Mark> = HashMap::new();
        fn visit(
            n: SymbolId,
            edges: &HashMap<SymbolId, BTreeSet<SymbolId>>,
            marks: &mut HashMap<SymbolId, Mark>,
        ) -> Option<SymbolId> {
            match marks.get(&n).copied().unwrap_or(Mark::White) {
                Mark::Grey => return Some(n),
                Mark::Black => return None,
                Mark::White => {}
            }
            marks.insert(n, Mark::Grey);
            if let Some(next) = edges.get(&n) {
                for &m in next {
                    if let Some(c) = visit(m, edges, marks) {
                        return Some(c);
                    }
                }
            }
            marks.insert(n, Mark::Black);
            None
        }
        for (lhs, _) in &self.prods {
            if let Some(c) = visit(*lhs, &edges, &mut marks) {
                return Err(GrammarError::LeftRecursion(self.symbols[c].name.clone()));
            }
        }
        Ok(())
    }

    fn analyze(&mut self) -> Result<(), GrammarError> {
        let n = self.symbols.len();
        // reject nullable non-terminals (alternatives made entirely of
        // optional parts); the tracker and rule generation assume every
        // symbol consumes at least one token
        for expr in &self.exprs {
            if expr.graph.start.can_end {
                return Err(GrammarError::NullableNonTerminal(
                    self.symbols[expr.lhs].name.clone(),
                ));
            }
        }
        // FIRST fixpoint
        let mut first: Vec<BTreeSet<SymbolId>> = vec![BTreeSet::new(); n];
        for (id, sym) in self.symbols.iter().enumerate() {
            if sym.is_terminal() {
                first[id].insert(id);
            }
        }
        loop {
            let mut changed = false;
            for expr in &self.exprs {
                for &p in &expr.graph.start.next {
                    let sym = expr.graph.nodes[p];
                    let add: Vec<SymbolId> = first[sym].iter().copied().collect();
                    for t in add {
                        changed |= first[expr.lhs].insert(t);
                    }
                }
            }
            if !changed {
                break;
            }
        }
        self.first = first;
        // FOLLOW fixpoint
        let mut follow: Vec<BTreeSet<SymbolId>> = vec![BTreeSet::new(); n];
        loop {
            let mut changed = false;
            for expr in &self.exprs {
                for (p, &sym) in expr.graph.nodes.iter().enumerate() {
                    let succ = &expr.graph.succ[p];
                    let mut add: BTreeSet<SymbolId> = BTreeSet::new();
                    for &q in &succ.next {
                        let qsym = expr.graph.nodes[q];
                        add.extend(self.first[qsym].iter().copied());
                    }
                    if succ.can_end {
                        add.extend(follow[expr.lhs].iter().copied());
                    }
                    for t in add {
                        changed |= follow[sym].insert(t);
                    }
                }
            }
            if !changed {
                break;
            }
        }
        self.follow = follow;
        Ok(())
    }

    /// Shortest-derivation fixpoint: minimal sentence length per symbol
    /// and minimal completion length per cursor position.  Minimal paths
    /// never take a repetition cycle, so the relaxation converges.
    fn compute_min_lengths(&mut self) {
        const INF: usize = usize::MAX / 4;
        let mut ms = vec![INF; self.symbols.len()];
        for (id, sym) in self.symbols.iter().enumerate() {
            if sym.is_terminal() {
                ms[id] = 1;
            }
        }
        let mut mp: Vec<Vec<usize>> = self
            .exprs
            .iter()
            .map(|e| vec![INF; e.graph.nodes.len()])
            .collect();
        loop {
            let mut changed = false;
            for (ei, expr) in self.exprs.iter().enumerate() {
                for p in 0..expr.graph.nodes.len() {
                    let succ = &expr.graph.succ[p];
                    let rest = if succ.can_end {
                        0
                    } else {
                        succ.next.iter().map(|&q| mp[ei][q]).min().unwrap_or(INF)
                    };
                    let total = ms[expr.graph.nodes[p]].saturating_add(rest).min(INF);
                    if total < mp[ei][p] {
                        mp[ei][p] = total;
                        changed = true;
                    }
                }
                let alt = expr.graph.start.next.iter().map(|&p| mp[ei][p]).min().unwrap_or(INF);
                if alt < ms[expr.lhs] {
                    ms[expr.lhs] = alt;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        self.min_sym = ms;
        self.min_pos = mp;
    }

    /// Minimal number of tokens a full derivation of `sym` consumes.
    pub fn min_tokens(&self, sym: SymbolId) -> usize {
        self.min_sym[sym]
    }

    /// Minimal tokens to finish an alternative from a cursor given by
    /// candidate positions and end-reachability.
    pub fn min_completion(&self, expr: ExprId, next: &[usize], can_end: bool) -> usize {
        if can_end {
            return 0;
        }
        next.iter().map(|&p| self.min_pos[expr][p]).min().unwrap_or(0)
    }

    pub fn root(&self) -> SymbolId {
        self.root
    }

    pub fn symbol(&self, id: SymbolId) -> &Symbol {
        &self.symbols[id]
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn symbol_id(&self, name: &str) -> Option<SymbolId> {
        self.by_name.get(name).copied()
    }

    pub fn expr(&self, id: ExprId) -> &Expression {
        &self.exprs[id]
    }

    /// Total number of expressions E; the length of the grammar vector.
    pub fn expr_count(&self) -> usize {
        self.exprs.len()
    }

    pub fn exprs(&self) -> &[Expression] {
        &self.exprs
    }

    pub fn productions(&self) -> &[(SymbolId, Vec<ExprId>)] {
        &self.prods
    }

    pub fn alternatives(&self, nt: SymbolId) -> &[ExprId] {
        self.prods
            .iter()
            .find(|(l, _)| *l == nt)
            .map(|(_, ids)| ids.as_slice())
            .unwrap_or(&[])
    }

    /// FIRST set of a symbol (terminals derivable as the first token of
    /// any expansion); a terminal's FIRST is itself.
    pub fn first(&self, sym: SymbolId) -> &BTreeSet<SymbolId> {
        &self.first[sym]
    }

    pub fn follow(&self, sym: SymbolId) -> &BTreeSet<SymbolId> {
        &self.follow[sym]
    }

    /// Terminals reachable as the first token from `from`, looked up by
    /// symbol name.
    pub fn reachable_terminals(&self, from: &str) -> Result<BTreeSet<SymbolId>, GrammarError> {
        let id = self
            .symbol_id(from)
            .ok_or_else(|| GrammarError::UnknownSymbol(from.to_string()))?;
        Ok(self.first[id].clone())
    }

    /// Terminals and end-reachability for a position set within an
    /// expression of `lhs`.
    pub fn positions_first(&self, expr: ExprId, pos: &Positions) -> (BTreeSet<SymbolId>, bool) {
        let graph = &self.exprs[expr].graph;
        let mut set = BTreeSet::new();
        let end = pos.can_end;
        for &p in &pos.next {
            set.extend(self.first[graph.nodes[p]].iter().copied());
        }
        (set, end)
    }

    /// Validates that the grammar is LL(1): alternative FIRST sets of
    /// each non-terminal are pairwise disjoint, and within every
    /// expression each choice point is resolvable by one token of
    /// lookahead (including the choice between continuing and popping to
    /// the parent, which uses FOLLOW).
    pub fn check_ll1(&self) -> Result<(), GrammarError> {
        for (lhs, alts) in &self.prods {
            let sets: Vec<BTreeSet<SymbolId>> = alts
                .iter()
                .map(|&e| self.positions_first(e, &self.exprs[e].graph.start).0)
                .collect();
            for i in 0..sets.len() {
                for j in i + 1..sets.len() {
                    let overlap: Vec<&SymbolId> = sets[i].intersection(&sets[j]).collect();
                    if !overlap.is_empty() {
                        return Err(self.ll1_conflict(*lhs, &overlap));
                    }
                }
            }
        }
        for expr in &self.exprs {
            let mut points: Vec<&Positions> = vec![&expr.graph.start];
            points.extend(expr.graph.succ.iter());
            for pos in points {
                let mut choice_sets: Vec<BTreeSet<SymbolId>> = pos
                    .next
                    .iter()
                    .map(|&p| self.first[expr.graph.nodes[p]].clone())
                    .collect();
                if pos.can_end {
                    choice_sets.push(self.follow[expr.lhs].clone());
                }
                for i in 0..choice_sets.len() {
                    for j in i + 1..choice_sets.len() {
                        let overlap: Vec<&SymbolId> =
                            choice_sets[i].intersection(&choice_sets[j]).collect();
                        if !overlap.is_empty() {
                            return Err(self.ll1_conflict(expr.lhs, &overlap));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn ll1_conflict(&self, lhs: SymbolId, tokens: &[&SymbolId]) -> GrammarError {
        GrammarError::Ll1Conflict {
            symbol: self.symbols[lhs].name.clone(),
            tokens: tokens
                .iter()
                .map(|&&t| self.symbols[t].display())
                .collect::<Vec<_>>()
                .join(", "),
        }
    }

    /// Serialize back to the grammar file format.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (lhs, alts) in &self.prods {
            let rendered: Vec<String> = alts
                .iter()
                .map(|&e| self.render_items(&self.exprs[e].items))
                .collect();
            out.push_str(&format!(
                "<{}> ::= {}\n",
                self.symbols[*lhs].name,
                rendered.join(" | ")
            ));
        }
        out
    }

    fn render_items(&self, items: &[Item]) -> String {
        items
            .iter()
            .map(|item| self.render_item(item))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn render_item(&self, item: &Item) -> String {
        match item {
            Item::Sym(s) => {
                let sym = &self.symbols[*s];
                match sym.kind {
                    SymbolKind::NonTerminal => format!("<{}>", sym.name),
                    SymbolKind::Terminal(TerminalClass::Keyword) => sym.name.clone(),
                    SymbolKind::Terminal(TerminalClass::Punctuation) => {
                        format!("\"{}\"", sym.name)
                    }
                    SymbolKind::Terminal(TerminalClass::DerivedColumn) => "@column".to_string(),
                    SymbolKind::Terminal(TerminalClass::TableName) => "@table".to_string(),
                    SymbolKind::Terminal(TerminalClass::ValueExpr) => "@value".to_string(),
                    SymbolKind::Terminal(TerminalClass::StringExpr) => "@string".to_string(),
                }
            }
            Item::Optional(inner) => format!("[ {} ]", self.render_items(inner)),
            Item::Block { items, repeat } => {
                let tail = if *repeat { " ..." } else { "" };
                format!("{{ {} }}{}", self.render_items(items), tail)
            }
        }
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

/// Compile an alternative's item sequence into a position graph.
fn compile_alternative(items: &[Item]) -> AltGraph {
    struct Builder {
        nodes: Vec<SymbolId>,
        succ: Vec<(BTreeSet<usize>, bool)>,
    }
    struct Frag {
        starts: Vec<usize>,
        exits: Vec<usize>,
        nullable: bool,
    }
    impl Builder {
        fn item(&mut self, item: &Item) -> Frag {
            match item {
                Item::Sym(s) => {
                    let idx = self.nodes.len();
                    self.nodes.push(*s);
                    self.succ.push((BTreeSet::new(), false));
                    Frag {
                        starts: vec![idx],
                        exits: vec![idx],
                        nullable: false,
                    }
                }
                Item::Optional(inner) => {
                    let f = self.seq(inner);
                    Frag {
                        nullable: true,
                        ..f
                    }
                }
                Item::Block { items, repeat } => {
                    let f = self.seq(items);
                    if *repeat {
                        // loop: block exits connect back to block starts
                        for &e in &f.exits {
                            for &s in &f.starts {
                                self.succ[e].0.insert(s);
                            }
                        }
                        Frag {
                            nullable: true,
                            ..f
                        }
                    } else {
                        f
                    }
                }
            }
        }

        fn seq(&mut self, items: &[Item]) -> Frag {
            let mut starts: Vec<usize> = Vec::new();
            let mut exits: Vec<usize> = Vec::new();
            let mut nullable = true;
            for item in items {
                let f = self.item(item);
                for &e in &exits {
                    for &s in &f.starts {
                        self.succ[e].0.insert(s);
                    }
                }
                if nullable {
                    starts.extend(f.starts.iter().copied());
                }
                if f.nullable {
                    // earlier exits stay live when this item can be skipped
                    exits.extend(f.exits.iter().copied());
                } else {
                    exits = f.exits.clone();
                }
                nullable &= f.nullable;
            }
            // dedupe
            starts.sort_unstable();
            starts.dedup();
            exits.sort_unstable();
            exits.dedup();
            Frag {
                starts,
                exits,
                nullable,
            }
        }
    }

    let mut b = Builder {
        nodes: Vec::new(),
        succ: Vec::new(),
    };
    let frag = b.seq(items);
    for &e in &frag.exits {
        b.succ[e].1 = true;
    }
    AltGraph {
        start: Positions {
            next: frag.starts,
            can_end: frag.nullable,
        },
        succ: b
            .succ
            .into_iter()
            .map(|(next, can_end)| Positions {
                next: next.into_iter().collect(),
                can_end,
            })
            .collect(),
        nodes: b.nodes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const SQL_BNF: &str = include_str!("../../assets/grammar/sql.bnf");
    pub const SELECT92_BNF: &str = include_str!("../../assets/grammar/select92.bnf");
    pub const NESTED_BNF: &str = include_str!("../../assets/grammar/sql_nested.bnf");

    fn names(g: &Grammar, set: &BTreeSet<SymbolId>) -> BTreeSet<String> {
        set.iter().map(|&s| g.symbol(s).display()).collect()
    }

    #[test]
    fn parses_shipped_grammars() {
        for text in [SQL_BNF, SELECT92_BNF, NESTED_BNF] {
            let g = Grammar::parse(text).unwrap();
            assert_eq!(g.symbol(g.root()).name, "query");
            g.check_ll1().unwrap();
        }
    }

    #[test]
    fn root_production_shape() {
        let g = Grammar::parse(SQL_BNF).unwrap();
        let alts = g.alternatives(g.root());
        assert_eq!(alts.len(), 1);
        let expr = g.expr(alts[0]);
        assert_eq!(expr.items.len(), 4); // SELECT <select list> <table expression> Stop_symbol
    }

    #[test]
    fn minimal_grammar() {
        let g = Grammar::parse("<a> ::= X\n").unwrap();
        assert_eq!(g.expr_count(), 1);
        assert_eq!(g.alternatives(g.root()).len(), 1);
    }

    #[test]
    fn undefined_symbol_error() {
        let err = Grammar::parse("<a> ::= X <ghost>\n").unwrap_err();
        match err {
            GrammarError::UndefinedSymbol(name) => assert_eq!(name, "ghost"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn terminal_on_lhs_error() {
        let err = Grammar::parse("<derived column> ::= X\n").unwrap_err();
        assert!(matches!(err, GrammarError::Parse(GrammarParseError::TerminalOnLhs { .. })));
    }

    #[test]
    fn left_recursion_rejected() {
        let err = Grammar::parse("<a> ::= <b> X\n<b> ::= <a> Y | Z\n").unwrap_err();
        assert!(matches!(err, GrammarError::LeftRecursion(_)));
    }

    #[test]
    fn select_list_first_is_derived_column() {
        let g = Grammar::parse(SELECT92_BNF).unwrap();
        let set = g.reachable_terminals("select list").unwrap();
        assert_eq!(names(&g, &set), ["<derived column>".to_string()].into());
    }

    #[test]
    fn reachable_terminals_identity_on_terminals() {
        let g = Grammar::parse(SQL_BNF).unwrap();
        let set = g.reachable_terminals("SELECT").unwrap();
        assert_eq!(names(&g, &set), ["SELECT".to_string()].into());
    }

    #[test]
    fn where_clause_first_matches_enumerator() {
        // independent recursive enumerator over expansions
        let g = Grammar::parse(SQL_BNF).unwrap();
        fn enumerate(g: &Grammar, sym: SymbolId, depth: usize, out: &mut BTreeSet<SymbolId>) {
            if g.symbol(sym).is_terminal() {
                out.insert(sym);
                return;
            }
            if depth == 0 {
                return;
            }
            for &e in g.alternatives(sym) {
                let graph = &g.expr(e).graph;
                for &p in &graph.start.next {
                    enumerate(g, graph.nodes[p], depth - 1, out);
                }
            }
        }
        for name in ["where clause", "query", "select list", "condition value"] {
            let id = g.symbol_id(name).unwrap();
            let mut brute = BTreeSet::new();
            enumerate(&g, id, g.productions().len() + 1, &mut brute);
            assert_eq!(brute, *g.first(id), "FIRST mismatch for <{name}>");
        }
    }

    #[test]
    fn reachable_terminals_is_a_fixpoint() {
        let g = Grammar::parse(SQL_BNF).unwrap();
        for sym in 0..g.symbols().len() {
            for &t in g.first(sym) {
                assert_eq!(g.first(t).iter().copied().collect::<Vec<_>>(), vec![t]);
            }
        }
    }

    #[test]
    fn min_tokens_matches_shortest_sentences() {
        // sql.bnf: SELECT <column> FROM <table> Stop_symbol
        let g = Grammar::parse(SQL_BNF).unwrap();
        assert_eq!(g.min_tokens(g.root()), 5);
        assert_eq!(g.min_tokens(g.symbol_id("select list").unwrap()), 1);
        assert_eq!(g.min_tokens(g.symbol_id("where clause").unwrap()), 4);
        let nested = Grammar::parse(NESTED_BNF).unwrap();
        assert_eq!(nested.min_tokens(nested.root()), 5);
    }

    #[test]
    fn min_tokens_of_terminals_is_one() {
        let g = Grammar::parse(SQL_BNF).unwrap();
        for (id, sym) in g.symbols().iter().enumerate() {
            if sym.is_terminal() {
                assert_eq!(g.min_tokens(id), 1);
            }
        }
    }

    #[test]
    fn serialize_round_trip() {
        for text in [SQL_BNF, SELECT92_BNF, NESTED_BNF] {
            let g1 = Grammar::parse(text).unwrap();
            let g2 = Grammar::parse(&g1.serialize()).unwrap();
            assert_eq!(g1.serialize(), g2.serialize());
            assert_eq!(g1.expr_count(), g2.expr_count());
        }
    }
}
