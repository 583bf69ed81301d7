//! Dump the short- and long-term dependency rule tables generated from
//! a grammar and schema.

use std::path::Path;

use sqlguard::engine::Engine;

fn main() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/toy");
    let engine = Engine::from_dir(Path::new(dir), None, None).expect("load stack");

    println!("short-term rules (state, current -> allowed next):");
    print!("{}", engine.short.dump(&engine.grammar));

    println!("\nlong-term rules (trigger -> masked while scope / clause active):");
    print!("{}", engine.long.dump(&engine.output_vocab));
}
