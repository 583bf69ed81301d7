//! Evaluation metrics: token-level corpus BLEU, query accuracy and
//! tuple recall/precision.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::executor::{self, ExecError};
use crate::grammar::Grammar;
use crate::schema::Database;
use crate::vocab::OutputVocab;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("candidate and reference counts differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU over n-grams 1..4 with uniform weights and brevity
/// penalty; modified precisions for n >= 2 use add-one smoothing.
pub fn bleu(
    candidates: &[Vec<String>],
    references: &[Vec<String>],
) -> Result<f64, MetricsError> {
    if candidates.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch(
            candidates.len(),
            references.len(),
        ));
    }
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    for (cand, reference) in candidates.iter().zip(references) {
        cand_len += cand.len();
        ref_len += reference.len();
        for n in 1..=4 {
            let cc = ngram_counts(cand, n);
            let rc = ngram_counts(reference, n);
            for (gram, &count) in &cc {
                matched[n - 1] += count.min(rc.get(gram).copied().unwrap_or(0));
                total[n - 1] += count;
            }
        }
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (m, t) = (matched[n - 1] as f64, total[n - 1] as f64);
        let p = if n == 1 {
            if t == 0.0 || m == 0.0 {
                return Ok(0.0);
            }
            m / t
        } else {
            (m + 1.0) / (t + 1.0)
        };
        log_sum += 0.25 * p.ln();
    }
    let bp = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(100.0 * bp * log_sum.exp())
}

#[derive(Debug, Clone, Serialize)]
pub struct PerQuery {
    pub pred: String,
    pub gold: String,
    pub equal: bool,
    pub recall: f64,
    pub precision: f64,
    /// Execution failure of the prediction, if any.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub fold: usize,
    pub bleu: f64,
    pub query_accuracy: f64,
    pub tuple_recall: f64,
    pub tuple_precision: f64,
    pub per_query: Vec<PerQuery>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "fold {}", self.fold)?;
        writeln!(f, "  bleu             {:7.2}", self.bleu)?;
        writeln!(f, "  query accuracy   {:7.4}", self.query_accuracy)?;
        writeln!(f, "  tuple recall     {:7.4}", self.tuple_recall)?;
        writeln!(f, "  tuple precision  {:7.4}", self.tuple_precision)?;
        let failed = self.per_query.iter().filter(|q| q.error.is_some()).count();
        writeln!(
            f,
            "  queries          {} ({} unexecutable)",
            self.per_query.len(),
            failed
        )
    }
}

fn run_query(
    sql: &[String],
    grammar: &Grammar,
    vocab: &OutputVocab,
    db: &Database,
) -> Result<executor::ResultBag, ExecError> {
    let ast = executor::parse_sql(sql, grammar, vocab, &db.schema)?;
    executor::execute_query(&ast, db)
}

/// Compare predicted and gold queries by execution; unexecutable
/// predictions count as failures, never as errors.
pub fn evaluate(
    fold: usize,
    pred_sqls: &[Vec<String>],
    gold_sqls: &[Vec<String>],
    grammar: &Grammar,
    vocab: &OutputVocab,
    db: &Database,
) -> Result<EvalReport, MetricsError> {
    if pred_sqls.len() != gold_sqls.len() {
        return Err(MetricsError::LengthMismatch(
            pred_sqls.len(),
            gold_sqls.len(),
        ));
    }
    if pred_sqls.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut per_query = Vec::with_capacity(pred_sqls.len());
    for (pred, gold) in pred_sqls.iter().zip(gold_sqls) {
        let gold_bag =
            run_query(gold, grammar, vocab, db).expect("gold queries must be executable");
        match run_query(pred, grammar, vocab, db) {
            Ok(pred_bag) => {
                let (equal, recall, precision) = executor::compare_results(&pred_bag, &gold_bag);
                per_query.push(PerQuery {
                    pred: pred.join(" "),
                    gold: gold.join(" "),
                    equal,
                    recall,
                    precision,
                    error: None,
                });
            }
            Err(e) => per_query.push(PerQuery {
                pred: pred.join(" "),
                gold: gold.join(" "),
                equal: false,
                recall: 0.0,
                precision: 0.0,
                error: Some(e.to_string()),
            }),
        }
    }
    let n = per_query.len() as f64;
    Ok(EvalReport {
        fold,
        bleu: bleu(pred_sqls, gold_sqls)?,
        query_accuracy: per_query.iter().filter(|q| q.equal).count() as f64 / n,
        tuple_recall: per_query.iter().map(|q| q.recall).sum::<f64>() / n,
        tuple_precision: per_query.iter().map(|q| q.precision).sum::<f64>() / n,
        per_query,
    })
}

pub fn query_accuracy(
    pred_sqls: &[Vec<String>],
    gold_sqls: &[Vec<String>],
    grammar: &Grammar,
    vocab: &OutputVocab,
    db: &Database,
) -> Result<f64, MetricsError> {
    evaluate(0, pred_sqls, gold_sqls, grammar, vocab, db).map(|r| r.query_accuracy)
}

pub fn tuple_recall_precision(
    pred_sqls: &[Vec<String>],
    gold_sqls: &[Vec<String>],
    grammar: &Grammar,
    vocab: &OutputVocab,
    db: &Database,
) -> Result<(f64, f64), MetricsError> {
    evaluate(0, pred_sqls, gold_sqls, grammar, vocab, db)
        .map(|r| (r.tuple_recall, r.tuple_precision))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_corpus_is_100() {
        let c = vec![toks("SELECT name FROM author")];
        assert!((bleu(&c, &c).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn brevity_penalty_hand_example() {
        let c = vec![toks("a b c d")];
        let r = vec![toks("a b c d e")];
        let expected = 100.0 * (-0.25f64).exp();
        assert!((bleu(&c, &r).unwrap() - expected).abs() < 1e-6, "want ≈77.88");
    }

    #[test]
    fn disjoint_corpus_is_zero() {
        let c = vec![toks("x y z w")];
        let r = vec![toks("a b c d")];
        assert_eq!(bleu(&c, &r).unwrap(), 0.0);
    }

    #[test]
    fn empty_corpus_is_error() {
        assert!(matches!(bleu(&[], &[]), Err(MetricsError::EmptyCorpus)));
    }

    fn setup() -> (Grammar, OutputVocab, Database) {
        let grammar = Grammar::parse(include_str!("../assets/grammar/sql.bnf")).unwrap();
        let schema =
            crate::schema::Schema::from_json(include_str!("../assets/toy/schema.json")).unwrap();
        let vocab = OutputVocab::build(&grammar, &schema);
        let db = Database::load_csv_dir(schema, Path::new("assets/toy")).unwrap();
        (grammar, vocab, db)
    }

    #[test]
    fn accuracy_counts_equal_bags() {
        let (g, v, db) = setup();
        let gold = vec![
            toks("SELECT name FROM author WHERE age > 30"),
            toks("SELECT title FROM publication"),
        ];
        let pred = vec![
            toks("SELECT name FROM author WHERE age > 30"),
            toks("SELECT year FROM publication"),
        ];
        let acc = query_accuracy(&pred, &gold, &g, &v, &db).unwrap();
        assert!((acc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unexecutable_prediction_counts_zero() {
        let (g, v, db) = setup();
        let gold = vec![toks("SELECT name FROM author")];
        let pred = vec![toks("FROM FROM FROM")];
        let report = evaluate(0, &pred, &gold, &g, &v, &db).unwrap();
        assert_eq!(report.query_accuracy, 0.0);
        assert_eq!(report.tuple_recall, 0.0);
        assert!(report.per_query[0].error.is_some());
    }

    #[test]
    fn macro_average_matches_hand_arithmetic() {
        let (g, v, db) = setup();
        // one exact match, one overlapping prediction
        let gold = vec![
            toks("SELECT name FROM author"),
            toks("SELECT name FROM author WHERE age > 0"),
        ];
        let pred = vec![
            toks("SELECT name FROM author"),
            toks("SELECT name FROM author WHERE age > 40"),
        ];
        let report = evaluate(0, &pred, &gold, &g, &v, &db).unwrap();
        let q1 = &report.per_query[1];
        assert!(q1.recall < 1.0 && q1.precision == 1.0);
        let want_r = (1.0 + q1.recall) / 2.0;
        assert!((report.tuple_recall - want_r).abs() < 1e-12);
        assert!((report.tuple_precision - 1.0).abs() < 1e-12);
    }
}
