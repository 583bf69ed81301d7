//! The grammar guard at work: an untrained, random-weight model decodes
//! executable SQL when the masks are on, and babble when they are off.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqlguard::engine::Engine;
use sqlguard::executor::{execute_query, parse_sql};
use sqlguard::nn::{greedy_decode, model_dims, Hyperparams, MaskConfig, Seq2SeqModel};
use sqlguard::tagger::tag_question;

fn main() {
    let dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/imdb"));
    let engine = Engine::from_dir(dir, None, None).expect("load stack");
    let db = engine.load_db(dir).expect("load tables");
    let pipe = engine.pipeline();

    let hp = Hyperparams::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let model = Seq2SeqModel::new(model_dims(&hp, &pipe), &mut rng);
    let tagged = tag_question("movies from 1994", &engine.schema, &engine.synonyms);

    let guarded = greedy_decode(&model, &pipe, &tagged, &MaskConfig::default(), hp.max_decode_len);
    println!("guarded:   {}", guarded.tokens.join(" "));
    let ast = parse_sql(&guarded.tokens, &engine.grammar, &engine.output_vocab, &engine.schema)
        .expect("guarded output always parses");
    let result = execute_query(&ast, &db).expect("guarded output always executes");
    println!("           parses and executes ({} tuples)\n", result.tuples.len());

    let off = MaskConfig { use_short: false, use_long: false, use_grammar: false };
    let free = greedy_decode(&model, &pipe, &tagged, &off, hp.max_decode_len);
    println!("unguarded: {}", free.tokens.join(" "));
    match parse_sql(&free.tokens, &engine.grammar, &engine.output_vocab, &engine.schema) {
        Ok(_) => println!("           happened to be grammatical"),
        Err(e) => println!("           rejected: {e}"),
    }
}
