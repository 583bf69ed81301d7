//! Replay a token sequence through the pushdown grammar tracker and
//! watch the grammar-state vector evolve.

use std::path::Path;

use sqlguard::engine::Engine;
use sqlguard::executor::tokenize_sql;
use sqlguard::tracker::GrammarState;

fn main() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/toy");
    let engine = Engine::from_dir(Path::new(dir), None, None).expect("load stack");
    let vocab = &engine.output_vocab;

    let sql = "SELECT name , age FROM author WHERE age > VAL_0 Stop_symbol";
    println!("replaying: {sql}\n");
    let mut state = GrammarState::init(&engine.grammar);
    for tok in tokenize_sql(sql) {
        let id = vocab.id(&tok).expect("token in vocabulary");
        state.advance(vocab, id).expect("grammatical prefix");
        let g: String = state
            .grammar_vector()
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect();
        println!(
            "{:<12} g_t={g} depth={} min_to_accept={}",
            tok,
            state.stack_depth(),
            state.min_tokens_to_accept()
        );
    }
    assert!(state.is_accepting());
    println!("\naccepted; next acceptable token set is empty: {:?}", state.acceptable_tokens(vocab));

    // an ungrammatical continuation is rejected with the expected set
    let mut state = GrammarState::init(&engine.grammar);
    state.advance(vocab, vocab.id("SELECT").unwrap()).unwrap();
    let err = state.advance(vocab, vocab.id("FROM").unwrap()).unwrap_err();
    println!("\nafter SELECT, FROM is rejected:\n  {err}");
}
