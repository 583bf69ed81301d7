//! Evaluation metrics: corpus BLEU and execution-based query accuracy,
//! tuple recall and precision.

use std::path::Path;

use sqlguard::engine::Engine;
use sqlguard::metrics::{bleu, evaluate};
use sqlguard::workload::{generate_workload, Template};

fn main() {
    // hand example: a perfect 4-token prefix of a 5-token reference has
    // every n-gram precision 1, so BLEU = 100 * BP = 100 * e^(1 - 5/4)
    let cand = vec![words("SELECT name FROM author")];
    let reference = vec![words("SELECT name FROM author Stop_symbol")];
    let hand = bleu(&cand, &reference).unwrap();
    println!("hand example BLEU: {hand:.2} (100 * e^-0.25 = {:.2})", 100.0 * (-0.25f64).exp());
    let same = vec![words("SELECT name FROM author")];
    println!("identical corpora: {:.2}\n", bleu(&same, &same).unwrap());

    // execution-based metrics over a workload where the "predictions"
    // are the gold queries with one deliberately wrong condition
    let dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/toy"));
    let engine = Engine::from_dir(dir, None, None).expect("load stack");
    let db = engine.load_db(dir).expect("load tables");
    let data = generate_workload(&db, &engine.patterns, &engine.synonyms, Template::Select, 12, 5)
        .expect("generate");
    let golds: Vec<Vec<String>> = data.samples.iter().map(|s| s.sql.clone()).collect();
    let mut preds = golds.clone();
    for p in preds.iter_mut().skip(6) {
        let last = p.len() - 1;
        p[last] = "0".into(); // perturb the condition value
    }
    let report = evaluate(0, &preds, &golds, &engine.grammar, &engine.output_vocab, &db)
        .expect("evaluate");
    println!("{report}");
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}
