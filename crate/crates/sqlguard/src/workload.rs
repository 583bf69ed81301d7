//! Synthetic (question, SQL) workload generation and dataset splits.
//!
//! Queries instantiate two template shapes — plain selection queries and
//! single inner-join aggregate queries — over a schema and its data.
//! Questions are rendered from paraphrase patterns, so gold semantic
//! labels are known by construction.  Each base query expands into
//! variants that differ only in the where-clause value; cross-validation
//! folds keep all variants of a base together.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patterns::PatternSet;
use crate::schema::{ColumnType, Database, Value};
use crate::tagger::Label;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("database has no rows to sample condition values from")]
    EmptyDatabase,
    #[error("requested {requested} samples but only {available} distinct instantiations exist")]
    Exhausted { requested: usize, available: usize },
    #[error("dataset has {len} samples, fewer than k={k}")]
    TooFewSamples { len: usize, k: usize },
    #[error("io error on `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid dataset line: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    Select,
    Join,
    Mixed,
}

impl std::str::FromStr for Template {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "select" => Ok(Template::Select),
            "join" => Ok(Template::Join),
            "mixed" => Ok(Template::Mixed),
            other => Err(format!("unknown template `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SampleMeta {
    pub template: String,
    pub base_id: usize,
    pub variant: usize,
    pub tables: Vec<String>,
    pub columns: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Sample {
    pub question: Vec<String>,
    pub sql: Vec<String>,
    pub labels: Vec<String>,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Hash of the generator configuration.
    pub provenance: u64,
}

pub fn label_str(label: Label) -> &'static str {
    match label {
        Label::None => "none",
        Label::Column => "column",
        Label::Table => "table",
        Label::Value => "value",
        Label::Str => "string",
    }
}

/// Words rendered for one slot of a pattern, with their gold labels.
struct Rendered {
    words: Vec<String>,
    labels: Vec<Label>,
}

impl Rendered {
    fn plain(text: &str) -> Rendered {
        let words: Vec<String> = text.split_whitespace().map(|s| s.to_string()).collect();
        let labels = vec![Label::None; words.len()];
        Rendered { words, labels }
    }

    fn labeled(word: &str, label: Label) -> Rendered {
        Rendered {
            words: vec![word.to_string()],
            labels: vec![label],
        }
    }
}

/// One enumerated base query before value instantiation.
#[derive(Debug, Clone)]
enum Base {
    Select {
        table: String,
        columns: Vec<String>,
        cond_column: String,
        op: &'static str,
    },
    Join {
        agg: &'static str,
        agg_column: String,
        table1: String,
        table2: String,
        key1: String,
        key2: String,
        cond_column: String,
        op: &'static str,
    },
}

const VARIANTS_PER_BASE: usize = 4;
const MAX_SELECT_COLUMNS: usize = 2;
const AGGS: [&str; 4] = ["MIN", "MAX", "AVG", "COUNT"];

fn ops_for(ty: ColumnType) -> &'static [&'static str] {
    match ty {
        ColumnType::Numeric => &["=", ">"],
        ColumnType::String => &["="],
    }
}

fn enumerate_select_bases(db: &Database) -> Vec<Base> {
    let mut bases = Vec::new();
    for table in &db.schema.tables {
        let cols: Vec<&str> = table.columns.iter().map(|c| c.name.as_str()).collect();
        let mut subsets: Vec<Vec<String>> = Vec::new();
        for (i, &a) in cols.iter().enumerate() {
            subsets.push(vec![a.to_string()]);
            if MAX_SELECT_COLUMNS >= 2 {
                for &b in &cols[i + 1..] {
                    subsets.push(vec![a.to_string(), b.to_string()]);
                }
            }
        }
        for subset in subsets {
            for cond in &table.columns {
                for &op in ops_for(cond.ty) {
                    bases.push(Base::Select {
                        table: table.name.clone(),
                        columns: subset.clone(),
                        cond_column: cond.name.clone(),
                        op,
                    });
                }
            }
        }
    }
    bases
}

fn enumerate_join_bases(db: &Database) -> Vec<Base> {
    let mut bases = Vec::new();
    for link in &db.schema.links {
        let (ft, fc) = link.from_parts();
        let (tt, tc) = link.to_parts();
        // both orientations of the linked pair
        for &(t1, k1, t2, k2) in &[(ft, fc, tt, tc), (tt, tc, ft, fc)] {
            let table1 = db.schema.table(t1).unwrap();
            let table2 = db.schema.table(t2).unwrap();
            for agg_col in table1
                .columns
                .iter()
                .filter(|c| c.ty == ColumnType::Numeric)
            {
                for &agg in &AGGS {
                    for cond in &table2.columns {
                        for &op in ops_for(cond.ty) {
                            bases.push(Base::Join {
                                agg,
                                agg_column: format!("{t1}.{}", agg_col.name),
                                table1: t1.to_string(),
                                table2: t2.to_string(),
                                key1: format!("{t1}.{k1}"),
                                key2: format!("{t2}.{k2}"),
                                cond_column: format!("{t2}.{}", cond.name),
                                op,
                            });
                        }
                    }
                }
            }
        }
    }
    bases
}

/// Distinct values of a column, in row order.
fn distinct_values(db: &Database, table: &str, column: &str) -> Vec<Value> {
    let Some(t) = db.schema.table(table) else {
        return Vec::new();
    };
    let Some(idx) = t.column_index(column) else {
        return Vec::new();
    };
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in db.table_rows(table) {
        if seen.insert(row[idx].canonical()) {
            out.push(row[idx].clone());
        }
    }
    out
}

/// Surface form for an identifier: itself or one of its synonyms.
fn surface_form(
    identifier: &str,
    reverse: &BTreeMap<String, Vec<String>>,
    rng: &mut ChaCha8Rng,
) -> String {
    let mut options = vec![identifier.to_string()];
    if let Some(extra) = reverse.get(identifier) {
        options.extend(extra.iter().cloned());
    }
    options.choose(rng).unwrap().clone()
}

fn bare(column: &str) -> &str {
    crate::schema::split_qualified(column).map_or(column, |(_, c)| c)
}

fn value_label(v: &Value) -> Label {
    match v {
        Value::Num(_) => Label::Value,
        Value::Str(_) => Label::Str,
    }
}

struct Renderer<'a> {
    patterns: &'a PatternSet,
    reverse: BTreeMap<String, Vec<String>>,
}

impl<'a> Renderer<'a> {
    fn new(patterns: &'a PatternSet, synonyms: &HashMap<String, String>) -> Renderer<'a> {
        let mut reverse: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (word, ident) in synonyms {
            reverse.entry(ident.clone()).or_default().push(word.clone());
        }
        for list in reverse.values_mut() {
            list.sort();
        }
        Renderer { patterns, reverse }
    }

    fn render(
        &self,
        pattern: &str,
        slots: &HashMap<&str, Rendered>,
    ) -> (Vec<String>, Vec<Label>) {
        let mut words = Vec::new();
        let mut labels = Vec::new();
        for part in pattern.split_whitespace() {
            if let Some(name) = part.strip_prefix('{').and_then(|p| p.strip_suffix('}')) {
                let r = slots
                    .get(name)
                    .unwrap_or_else(|| panic!("pattern slot {{{name}}} not provided"));
                words.extend(r.words.iter().cloned());
                labels.extend(r.labels.iter().copied());
            } else {
                words.push(part.to_string());
                labels.push(Label::None);
            }
        }
        (words, labels)
    }

    /// Column list surface: "a", "a and b".
    fn columns_slot(&self, columns: &[String], rng: &mut ChaCha8Rng) -> Rendered {
        let mut words = Vec::new();
        let mut labels = Vec::new();
        for (i, col) in columns.iter().enumerate() {
            if i > 0 {
                words.push("and".to_string());
                labels.push(Label::None);
            }
            words.push(surface_form(bare(col), &self.reverse, rng));
            labels.push(Label::Column);
        }
        Rendered { words, labels }
    }
}

fn instantiate(
    base: &Base,
    base_id: usize,
    variant: usize,
    value: &Value,
    renderer: &Renderer<'_>,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Sample {
    match base {
        Base::Select {
            table,
            columns,
            cond_column,
            op,
        } => {
            let mut sql = vec!["SELECT".to_string()];
            for (i, c) in columns.iter().enumerate() {
                if i > 0 {
                    sql.push(",".to_string());
                }
                sql.push(c.clone());
            }
            sql.extend([
                "FROM".to_string(),
                table.clone(),
                "WHERE".to_string(),
                cond_column.clone(),
                op.to_string(),
                value.render(),
            ]);

            let op_phrase = renderer.patterns.ops[*op].choose(rng).unwrap().clone();
            let mut slots: HashMap<&str, Rendered> = HashMap::new();
            slots.insert("columns", renderer.columns_slot(columns, rng));
            slots.insert(
                "table",
                Rendered::labeled(&surface_form(table, &renderer.reverse, rng), Label::Table),
            );
            slots.insert(
                "cond_column",
                Rendered::labeled(
                    &surface_form(bare(cond_column), &renderer.reverse, rng),
                    Label::Column,
                ),
            );
            slots.insert("op", Rendered::plain(&op_phrase));
            slots.insert("value", Rendered::labeled(&value.render(), value_label(value)));
            let pattern = renderer.patterns.select.choose(rng).unwrap();
            let (question, labels) = renderer.render(pattern, &slots);

            Sample {
                question,
                sql,
                labels: labels.into_iter().map(label_str).map(String::from).collect(),
                meta: SampleMeta {
                    template: "select".into(),
                    base_id,
                    variant,
                    tables: vec![table.clone()],
                    columns: columns.iter().chain([cond_column]).cloned().collect(),
                    seed,
                },
            }
        }
        Base::Join {
            agg,
            agg_column,
            table1,
            table2,
            key1,
            key2,
            cond_column,
            op,
        } => {
            let sql = vec![
                "SELECT".to_string(),
                agg.to_string(),
                "(".to_string(),
                agg_column.clone(),
                ")".to_string(),
                "FROM".to_string(),
                table1.clone(),
                "INNER".to_string(),
                "JOIN".to_string(),
                table2.clone(),
                "ON".to_string(),
                key1.clone(),
                "=".to_string(),
                key2.clone(),
                "WHERE".to_string(),
                cond_column.clone(),
                op.to_string(),
                value.render(),
            ];

            let agg_phrase = renderer.patterns.aggs[*agg].choose(rng).unwrap().clone();
            let op_phrase = renderer.patterns.ops[*op].choose(rng).unwrap().clone();
            let mut slots: HashMap<&str, Rendered> = HashMap::new();
            slots.insert("agg", Rendered::plain(&agg_phrase));
            slots.insert(
                "column",
                Rendered::labeled(
                    &surface_form(bare(agg_column), &renderer.reverse, rng),
                    Label::Column,
                ),
            );
            slots.insert(
                "table1",
                Rendered::labeled(&surface_form(table1, &renderer.reverse, rng), Label::Table),
            );
            slots.insert(
                "table2",
                Rendered::labeled(&surface_form(table2, &renderer.reverse, rng), Label::Table),
            );
            slots.insert(
                "cond_column",
                Rendered::labeled(
                    &surface_form(bare(cond_column), &renderer.reverse, rng),
                    Label::Column,
                ),
            );
            slots.insert("op", Rendered::plain(&op_phrase));
            slots.insert("value", Rendered::labeled(&value.render(), value_label(value)));
            let pattern = renderer.patterns.join.choose(rng).unwrap();
            let (question, labels) = renderer.render(pattern, &slots);

            Sample {
                question,
                sql,
                labels: labels.into_iter().map(label_str).map(String::from).collect(),
                meta: SampleMeta {
                    template: "join".into(),
                    base_id,
                    variant,
                    tables: vec![table1.clone(), table2.clone()],
                    columns: vec![agg_column.clone(), cond_column.clone()],
                    seed,
                },
            }
        }
    }
}

fn generate_one(
    db: &Database,
    patterns: &PatternSet,
    synonyms: &HashMap<String, String>,
    bases: Vec<Base>,
    base_id_offset: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Sample>, WorkloadError> {
    if db.schema.tables.iter().all(|t| db.table_rows(&t.name).is_empty()) {
        return Err(WorkloadError::EmptyDatabase);
    }
    let renderer = Renderer::new(patterns, synonyms);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bases = bases;
    bases.shuffle(&mut rng);

    let mut samples = Vec::new();
    let mut seen: BTreeSet<(Vec<String>, Vec<String>)> = BTreeSet::new();
    let mut available = 0usize;
    for (i, base) in bases.iter().enumerate() {
        let (cond_table, cond_col) = match base {
            Base::Select {
                table, cond_column, ..
            } => (table.clone(), cond_column.clone()),
            Base::Join {
                table2,
                cond_column,
                ..
            } => (table2.clone(), bare(cond_column).to_string()),
        };
        let mut values = distinct_values(&db, &cond_table, bare(&cond_col));
        values.shuffle(&mut rng);
        values.truncate(VARIANTS_PER_BASE);
        available += values.len();
        for (variant, value) in values.iter().enumerate() {
            if samples.len() >= n {
                return Ok(samples);
            }
            let sample = instantiate(
                base,
                base_id_offset + i,
                variant,
                value,
                &renderer,
                &mut rng,
                seed,
            );
            if seen.insert((sample.question.clone(), sample.sql.clone())) {
                samples.push(sample);
            }
        }
    }
    if samples.len() < n {
        return Err(WorkloadError::Exhausted {
            requested: n,
            available,
        });
    }
    Ok(samples)
}

/// Generate `n` (question, SQL) samples; deterministic under `seed`.
pub fn generate_workload(
    db: &Database,
    patterns: &PatternSet,
    synonyms: &HashMap<String, String>,
    template: Template,
    n: usize,
    seed: u64,
) -> Result<Dataset, WorkloadError> {
    let samples = match template {
        Template::Select => generate_one(
            db,
            patterns,
            synonyms,
            enumerate_select_bases(db),
            0,
            n,
            seed,
        )?,
        Template::Join => {
            generate_one(db, patterns, synonyms, enumerate_join_bases(db), 0, n, seed)?
        }
        Template::Mixed => {
            let n_select = n - n / 2;
            let mut samples = generate_one(
                db,
                patterns,
                synonyms,
                enumerate_select_bases(db),
                0,
                n_select,
                seed,
            )?;
            samples.extend(generate_one(
                db,
                patterns,
                synonyms,
                enumerate_join_bases(db),
                0,
                n / 2,
                seed.wrapping_add(1),
            )?);
            samples
        }
    };
    let provenance = crate::vocab::vocab_hash(&[
        format!("{template:?}"),
        n.to_string(),
        seed.to_string(),
    ]);
    Ok(Dataset {
        samples,
        provenance,
    })
}

/// K-fold split: returns (train, test) index lists per fold.  Variants
/// of the same base query stay in the same fold.
pub fn kfold_split(
    dataset: &Dataset,
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>, WorkloadError> {
    let len = dataset.samples.len();
    if len < k || k == 0 {
        return Err(WorkloadError::TooFewSamples { len, k });
    }
    let mut groups: BTreeMap<(String, usize), Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        groups
            .entry((s.meta.template.clone(), s.meta.base_id))
            .or_default()
            .push(i);
    }
    let mut group_list: Vec<Vec<usize>> = groups.into_values().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    group_list.shuffle(&mut rng);

    // greedy balance: each group goes to the currently smallest fold
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for group in group_list {
        let target = (0..k).min_by_key(|&f| folds[f].len()).unwrap();
        folds[target].extend(group);
    }
    Ok((0..k)
        .map(|f| {
            let test = folds[f].clone();
            let train: Vec<usize> = (0..k)
                .filter(|&g| g != f)
                .flat_map(|g| folds[g].iter().copied())
                .collect();
            (train, test)
        })
        .collect())
}

pub fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<(), WorkloadError> {
    let io_err = |source| WorkloadError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for sample in &dataset.samples {
        serde_json::to_writer(&mut file, sample)?;
        file.write_all(b"\n").map_err(|source| WorkloadError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

pub fn load_jsonl(path: &Path) -> Result<Dataset, WorkloadError> {
    let file = std::fs::File::open(path).map_err(|source| WorkloadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut samples = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|source| WorkloadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(serde_json::from_str(&line)?);
    }
    Ok(Dataset {
        samples,
        provenance: 0,
    })
}
