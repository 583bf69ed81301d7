//! Finite-difference verification of the hand-derived gradients on a
//! real prepared sample.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqlguard::engine::Engine;
use sqlguard::nn::gradcheck::{max_relative_error, max_relative_error_with};
use sqlguard::nn::{model_dims, prepare_samples, Hyperparams, MaskConfig, Seq2SeqModel};
use sqlguard::workload::{generate_workload, Template};

fn main() {
    let dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/toy"));
    let engine = Engine::from_dir(dir, None, None).expect("load stack");
    let db = engine.load_db(dir).expect("load tables");
    let pipe = engine.pipeline();

    let data = generate_workload(&db, &engine.patterns, &engine.synonyms, Template::Select, 1, 9)
        .expect("generate");
    let prepared = prepare_samples(&pipe, &data.samples, &MaskConfig::default()).expect("prepare");

    let mut hp = Hyperparams::desk();
    hp.hidden = 8;
    hp.embed_in = 5;
    hp.embed_out = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut model = Seq2SeqModel::new(model_dims(&hp, &pipe), &mut rng);

    let tf = prepared[0].teacher_forced();
    let err = max_relative_error(&mut model, &tf, 13);
    println!("max relative error (every 13th parameter): {err:.3e}");
    assert!(err < 1e-4);

    // negative control: a corrupted gradient is caught
    let bad = max_relative_error_with(&mut model, &tf, 29, 0.05);
    println!("with +0.05 corruption the check reports:    {bad:.3e}");
    assert!(bad > 1e-2);
}
