//! Parse and execute SQL against the in-memory tables, including an
//! aggregate and a two-table join.

use std::path::Path;

use sqlguard::engine::Engine;
use sqlguard::executor::{execute_query, parse_sql, tokenize_sql};

fn main() {
    let dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/imdb"));
    let engine = Engine::from_dir(dir, None, None).expect("load stack");
    let db = engine.load_db(dir).expect("load tables");

    for sql in [
        "SELECT title , year FROM movie WHERE year > 2000",
        "SELECT COUNT ( movie.id ) FROM movie",
        "SELECT actor.name FROM actor INNER JOIN movie ON actor.movie_id = movie.id WHERE movie.year = 1999",
    ] {
        let tokens = tokenize_sql(sql);
        let ast = parse_sql(&tokens, &engine.grammar, &engine.output_vocab, &engine.schema)
            .expect("parse");
        let result = execute_query(&ast, &db).expect("execute");
        println!("{sql}");
        println!("  {:?}", result.headers);
        for row in &result.tuples {
            println!("  {row:?}");
        }
        println!();
    }
}
