//! Lexicon tagging of natural-language questions: schema labels and
//! value/string slot binding.

use std::path::Path;

use sqlguard::engine::Engine;
use sqlguard::tagger::tag_question;

fn main() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/toy");
    let engine = Engine::from_dir(Path::new(dir), None, None).expect("load stack");

    for q in [
        "what is the name of authors whose age exceeds 40",
        "list the title and year of papers named 'Deep Parsing'",
        "how many writers are there",
    ] {
        let tagged = tag_question(q, &engine.schema, &engine.synonyms);
        println!("{q}");
        for ((tok, label), slot) in tagged.tokens.iter().zip(&tagged.labels).zip(&tagged.slots) {
            let slot = slot
                .map(|(kind, i)| format!(" [{kind:?} slot {i}]"))
                .unwrap_or_default();
            println!("  {tok:<12} {label:?}{slot}");
        }
        println!("  value bindings:  {:?}", tagged.value_bindings);
        println!("  string bindings: {:?}\n", tagged.string_bindings);
    }
}
