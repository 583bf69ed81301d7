//! In-memory execution of the supported SQL subset.
//!
//! Queries are parsed from token sequences (validated against the
//! grammar by the pushdown tracker), then evaluated with bag semantics
//! over an in-memory [`Database`].  Evaluation is total over every
//! grammatical, mask-conforming query: joins are relaxed to arbitrary
//! equi-joins, MIN/MAX order strings lexicographically, and aggregates
//! over empty inputs yield a NULL marker instead of failing.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::grammar::Grammar;
use crate::schema::{ColumnType, Database, Schema, Value};
use crate::tracker::GrammarState;
use crate::vocab::{OutputVocab, STOP_SYMBOL};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("ungrammatical query: {0}")]
    Ungrammatical(String),
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("malformed query near `{0}`")]
    Malformed(String),
    #[error("type mismatch comparing column `{column}` ({ty:?}) with `{literal}`")]
    TypeMismatch {
        column: String,
        ty: ColumnType,
        literal: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agg {
    Min,
    Max,
    Avg,
    Count,
}

impl Agg {
    fn from_keyword(kw: &str) -> Option<Agg> {
        match kw {
            "MIN" => Some(Agg::Min),
            "MAX" => Some(Agg::Max),
            "AVG" => Some(Agg::Avg),
            "COUNT" => Some(Agg::Count),
            _ => None,
        }
    }

    fn keyword(self) -> &'static str {
        match self {
            Agg::Min => "MIN",
            Agg::Max => "MAX",
            Agg::Avg => "AVG",
            Agg::Count => "COUNT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Gt,
}

#[derive(Debug, Clone)]
pub struct SelectItem {
    pub agg: Option<Agg>,
    pub column: String,
}

#[derive(Debug, Clone)]
pub struct JoinClause {
    pub table: String,
    pub left: String,
    pub right: String,
}

#[derive(Debug, Clone)]
pub struct WhereClause {
    pub column: String,
    pub op: CmpOp,
    pub value: Value,
}

#[derive(Debug, Clone)]
pub struct QueryAst {
    pub select: Vec<SelectItem>,
    pub from: String,
    pub join: Option<JoinClause>,
    pub filter: Option<WhereClause>,
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self
            .select
            .iter()
            .map(|s| match s.agg {
                Some(a) => format!("{}({})", a.keyword(), s.column),
                None => s.column.clone(),
            })
            .collect();
        write!(f, "SELECT {} FROM {}", items.join(", "), self.from)?;
        if let Some(j) = &self.join {
            write!(f, " INNER JOIN {} ON {} = {}", j.table, j.left, j.right)?;
        }
        if let Some(w) = &self.filter {
            let op = match w.op {
                CmpOp::Eq => "=",
                CmpOp::Gt => ">",
            };
            write!(f, " WHERE {} {} {}", w.column, op, w.value.render())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultBag {
    pub headers: Vec<String>,
    pub tuples: Vec<Vec<Value>>,
}

/// Validate a token sequence against the grammar via the tracker.
/// Tokens outside the output vocabulary (concrete literals) are
/// classified as value/string slots by shape.
pub fn validate_tokens(
    tokens: &[String],
    grammar: &Grammar,
    vocab: &OutputVocab,
) -> Result<(), ExecError> {
    let mut state = GrammarState::init(grammar);
    let mut seq: Vec<&str> = tokens.iter().map(|s| s.as_str()).collect();
    if seq.last() != Some(&STOP_SYMBOL) {
        seq.push(STOP_SYMBOL);
    }
    for tok in seq {
        let known = vocab.id(tok);
        let id = known.unwrap_or_else(|| {
            if tok.parse::<f64>().is_ok() {
                vocab.value_slot_ids()[0]
            } else {
                vocab.string_slot_ids()[0]
            }
        });
        if let Err(e) = state.advance(vocab, id) {
            // a word unknown to the vocabulary that would fit an
            // identifier position is a naming error, not a grammar error
            if known.is_none() {
                let fits = vocab
                    .column_ids()
                    .iter()
                    .chain(vocab.table_ids())
                    .any(|&probe| state.advanced(vocab, probe).is_ok());
                if fits {
                    return Err(ExecError::UnknownIdentifier(tok.to_string()));
                }
            }
            return Err(ExecError::Ungrammatical(e.to_string()));
        }
    }
    if !state.is_accepting() {
        return Err(ExecError::Ungrammatical("incomplete query".into()));
    }
    Ok(())
}

/// Parse a grammatical token sequence into an AST and validate all
/// identifiers against the schema.
pub fn parse_sql(
    tokens: &[String],
    grammar: &Grammar,
    vocab: &OutputVocab,
    schema: &Schema,
) -> Result<QueryAst, ExecError> {
    validate_tokens(tokens, grammar, vocab)?;
    let toks: Vec<&str> = tokens
        .iter()
        .map(|s| s.as_str())
        .filter(|&t| t != STOP_SYMBOL)
        .collect();
    let mut pos = 0usize;
    let peek = |pos: usize| toks.get(pos).copied().unwrap_or("");
    let expect = |pos: &mut usize, what: &str| -> Result<(), ExecError> {
        if peek(*pos) == what {
            *pos += 1;
            Ok(())
        } else {
            Err(ExecError::Malformed(peek(*pos).to_string()))
        }
    };

    expect(&mut pos, "SELECT")?;
    let mut select = Vec::new();
    loop {
        let tok = peek(pos);
        let item = if let Some(agg) = Agg::from_keyword(tok) {
            pos += 1;
            expect(&mut pos, "(")?;
            let column = peek(pos).to_string();
            pos += 1;
            expect(&mut pos, ")")?;
            SelectItem {
                agg: Some(agg),
                column,
            }
        } else {
            pos += 1;
            SelectItem {
                agg: None,
                column: tok.to_string(),
            }
        };
        select.push(item);
        if peek(pos) == "," {
            pos += 1;
        } else {
            break;
        }
    }
    expect(&mut pos, "FROM")?;
    let from = peek(pos).to_string();
    pos += 1;
    let mut join = None;
    if peek(pos) == "INNER" {
        pos += 1;
        expect(&mut pos, "JOIN")?;
        let table = peek(pos).to_string();
        pos += 1;
        expect(&mut pos, "ON")?;
        let left = peek(pos).to_string();
        pos += 1;
        expect(&mut pos, "=")?;
        let right = peek(pos).to_string();
        pos += 1;
        join = Some(JoinClause { table, left, right });
    }
    let mut filter = None;
    if peek(pos) == "WHERE" {
        pos += 1;
        let column = peek(pos).to_string();
        pos += 1;
        let op = match peek(pos) {
            "=" => CmpOp::Eq,
            ">" => CmpOp::Gt,
            other => return Err(ExecError::Malformed(other.to_string())),
        };
        pos += 1;
        let literal = peek(pos).to_string();
        pos += 1;
        let value = match literal.parse::<f64>() {
            Ok(n) => Value::Num(n),
            Err(_) => Value::Str(literal),
        };
        filter = Some(WhereClause { column, op, value });
    }
    if pos != toks.len() {
        return Err(ExecError::Malformed(peek(pos).to_string()));
    }

    let ast = QueryAst {
        select,
        from,
        join,
        filter,
    };
    resolve_identifiers(&ast, schema)?;
    Ok(ast)
}

/// A column resolved to its owning table within the query scope.
#[derive(Debug, Clone)]
struct Resolved {
    table: String,
    index: usize,
    ty: ColumnType,
}

fn resolve_column(name: &str, scope: &[&str], schema: &Schema) -> Result<Resolved, ExecError> {
    if let Some((t, c)) = crate::schema::split_qualified(name) {
        if !scope.contains(&t) {
            return Err(ExecError::UnknownIdentifier(name.to_string()));
        }
        let table = schema
            .table(t)
            .ok_or_else(|| ExecError::UnknownIdentifier(name.to_string()))?;
        let index = table
            .column_index(c)
            .ok_or_else(|| ExecError::UnknownIdentifier(name.to_string()))?;
        return Ok(Resolved {
            table: t.to_string(),
            index,
            ty: table.columns[index].ty,
        });
    }
    // bare column: the from table wins over the join table
    for &t in scope {
        if let Some(table) = schema.table(t) {
            if let Some(index) = table.column_index(name) {
                return Ok(Resolved {
                    table: t.to_string(),
                    index,
                    ty: table.columns[index].ty,
                });
            }
        }
    }
    Err(ExecError::UnknownIdentifier(name.to_string()))
}

fn resolve_identifiers(ast: &QueryAst, schema: &Schema) -> Result<(), ExecError> {
    if schema.table(&ast.from).is_none() {
        return Err(ExecError::UnknownIdentifier(ast.from.clone()));
    }
    let mut scope: Vec<&str> = vec![&ast.from];
    if let Some(j) = &ast.join {
        if schema.table(&j.table).is_none() {
            return Err(ExecError::UnknownIdentifier(j.table.clone()));
        }
        scope.push(&j.table);
        resolve_column(&j.left, &scope, schema)?;
        resolve_column(&j.right, &scope, schema)?;
    }
    for item in &ast.select {
        resolve_column(&item.column, &scope, schema)?;
    }
    if let Some(w) = &ast.filter {
        resolve_column(&w.column, &scope, schema)?;
    }
    Ok(())
}

fn cmp_values(a: &Value, b: &Value) -> std::cmp::Ordering {
    match (a, b) {
        (Value::Num(x), Value::Num(y)) => x.total_cmp(y),
        (Value::Str(x), Value::Str(y)) => x.cmp(y),
        // arbitrary but total: numbers before strings
        (Value::Num(_), Value::Str(_)) => std::cmp::Ordering::Less,
        (Value::Str(_), Value::Num(_)) => std::cmp::Ordering::Greater,
    }
}

fn values_equal(a: &Value, b: &Value) -> bool {
    a.canonical() == b.canonical()
}

/// Execute a query with bag semantics.  The database is not modified.
pub fn execute_query(ast: &QueryAst, db: &Database) -> Result<ResultBag, ExecError> {
    let schema = &db.schema;
    resolve_identifiers(ast, schema)?;
    let mut scope: Vec<&str> = vec![&ast.from];
    if let Some(j) = &ast.join {
        scope.push(&j.table);
    }

    // working rows: (from row, optional join row)
    let from_rows = db.table_rows(&ast.from);
    let mut rows: Vec<(&[Value], Option<&[Value]>)> = Vec::new();
    match &ast.join {
        None => {
            for r in from_rows {
                rows.push((r.as_slice(), None));
            }
        }
        Some(j) => {
            let left = resolve_column(&j.left, &scope, schema)?;
            let right = resolve_column(&j.right, &scope, schema)?;
            if left.table == right.table {
                return Err(ExecError::Malformed(format!(
                    "ON {} = {} compares columns of one table",
                    j.left, j.right
                )));
            }
            // evaluate left on the from side and right on the join side,
            // swapping if the identifiers bind the other way round
            let (fcol, jcol) = if left.table == ast.from {
                (left.index, right.index)
            } else {
                (right.index, left.index)
            };
            for fr in from_rows {
                for jr in db.table_rows(&j.table) {
                    if values_equal(&fr[fcol], &jr[jcol]) {
                        rows.push((fr.as_slice(), Some(jr.as_slice())));
                    }
                }
            }
        }
    }

    let fetch = |res: &Resolved, row: &(&[Value], Option<&[Value]>)| -> Value {
        if res.table == ast.from {
            row.0[res.index].clone()
        } else {
            row.1.expect("join row present when join column resolved")[res.index].clone()
        }
    };

    if let Some(w) = &ast.filter {
        let col = resolve_column(&w.column, &scope, schema)?;
        let literal_ty = match &w.value {
            Value::Num(_) => ColumnType::Numeric,
            Value::Str(_) => ColumnType::String,
        };
        if literal_ty != col.ty {
            return Err(ExecError::TypeMismatch {
                column: w.column.clone(),
                ty: col.ty,
                literal: w.value.render(),
            });
        }
        rows.retain(|row| {
            let v = fetch(&col, row);
            match w.op {
                CmpOp::Eq => values_equal(&v, &w.value),
                CmpOp::Gt => cmp_values(&v, &w.value) == std::cmp::Ordering::Greater,
            }
        });
    }

    let headers: Vec<String> = ast
        .select
        .iter()
        .map(|s| match s.agg {
            Some(a) => format!("{}({})", a.keyword(), s.column),
            None => s.column.clone(),
        })
        .collect();

    let any_agg = ast.select.iter().any(|s| s.agg.is_some());
    let tuples = if any_agg {
        // single-row result; non-aggregated items take the first row's
        // value (MySQL-style), NULL marker when no rows qualify
        let mut tuple = Vec::new();
        for item in &ast.select {
            let col = resolve_column(&item.column, &scope, schema)?;
            let values: Vec<Value> = rows.iter().map(|r| fetch(&col, r)).collect();
            let v = match item.agg {
                Some(Agg::Count) => Value::Num(values.len() as f64),
                Some(Agg::Min) => values
                    .iter()
                    .min_by(|a, b| cmp_values(a, b))
                    .cloned()
                    .unwrap_or_else(|| Value::Str("NULL".into())),
                Some(Agg::Max) => values
                    .iter()
                    .max_by(|a, b| cmp_values(a, b))
                    .cloned()
                    .unwrap_or_else(|| Value::Str("NULL".into())),
                Some(Agg::Avg) => {
                    let nums: Vec<f64> = values.iter().filter_map(|v| v.as_num()).collect();
                    if nums.is_empty() {
                        Value::Str("NULL".into())
                    } else {
                        Value::Num(nums.iter().sum::<f64>() / nums.len() as f64)
                    }
                }
                None => values
                    .first()
                    .cloned()
                    .unwrap_or_else(|| Value::Str("NULL".into())),
            };
            tuple.push(v);
        }
        vec![tuple]
    } else {
        let cols: Vec<Resolved> = ast
            .select
            .iter()
            .map(|s| resolve_column(&s.column, &scope, schema))
            .collect::<Result<_, _>>()?;
        rows.iter()
            .map(|r| cols.iter().map(|c| fetch(c, r)).collect())
            .collect()
    };

    Ok(ResultBag { headers, tuples })
}

fn bag_counts(bag: &ResultBag) -> BTreeMap<Vec<String>, usize> {
    let mut counts = BTreeMap::new();
    for t in &bag.tuples {
        let key: Vec<String> = t.iter().map(|v| v.canonical()).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

/// Multiset comparison of predicted (`a`) against gold (`b`): returns
/// (equal, tuple recall, tuple precision).
pub fn compare_results(a: &ResultBag, b: &ResultBag) -> (bool, f64, f64) {
    let ca = bag_counts(a);
    let cb = bag_counts(b);
    if ca.is_empty() && cb.is_empty() {
        return (true, 1.0, 1.0);
    }
    if ca.is_empty() || cb.is_empty() {
        return (false, 0.0, 0.0);
    }
    let inter: usize = ca
        .iter()
        .map(|(k, &n)| n.min(cb.get(k).copied().unwrap_or(0)))
        .sum();
    let na: usize = ca.values().sum();
    let nb: usize = cb.values().sum();
    let equal = ca == cb;
    (equal, inter as f64 / nb as f64, inter as f64 / na as f64)
}

/// Split a rendered SQL string into tokens, keeping quoted literals as
/// single tokens and separating punctuation.
pub fn tokenize_sql(sql: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut chars = sql.chars().peekable();
    let mut cur = String::new();
    while let Some(c) = chars.next() {
        match c {
            '\'' | '"' => {
                let quote = c;
                let mut lit = String::new();
                for d in chars.by_ref() {
                    if d == quote {
                        break;
                    }
                    lit.push(d);
                }
                out.push(lit);
            }
            '(' | ')' | ',' | '=' | '>' => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}
