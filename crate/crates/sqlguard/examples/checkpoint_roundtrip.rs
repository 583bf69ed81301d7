//! Save a trained model and load it back; the restored model decodes
//! identically and refuses mismatched vocabularies.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqlguard::engine::Engine;
use sqlguard::nn::{
    greedy_decode, load_model, model_dims, prepare_samples, save_model, train, Hyperparams,
    MaskConfig, Seq2SeqModel, TrainConfig,
};
use sqlguard::workload::{generate_workload, Template};

fn main() {
    let dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/toy"));
    let engine = Engine::from_dir(dir, None, None).expect("load stack");
    let db = engine.load_db(dir).expect("load tables");
    let pipe = engine.pipeline();
    let cfg = MaskConfig::default();

    let data = generate_workload(&db, &engine.patterns, &engine.synonyms, Template::Select, 8, 3)
        .expect("generate");
    let prepared = prepare_samples(&pipe, &data.samples, &cfg).expect("prepare");
    let hp = Hyperparams::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut model = Seq2SeqModel::new(model_dims(&hp, &pipe), &mut rng);
    train(&mut model, &prepared, &TrainConfig { hp: hp.clone(), epochs: 40, loss_log: None })
        .expect("train");

    let tmp = std::env::temp_dir().join("sqlguard_roundtrip.ckpt");
    let (ih, oh) = engine.vocab_hashes();
    save_model(&tmp, &model, ih, oh).expect("save");
    println!("saved {} bytes", std::fs::metadata(&tmp).unwrap().len());

    let restored = load_model(&tmp, model_dims(&hp, &pipe), ih, oh).expect("load");
    for p in &prepared {
        let a = greedy_decode(&model, &pipe, &p.tagged, &cfg, hp.max_decode_len);
        let b = greedy_decode(&restored, &pipe, &p.tagged, &cfg, hp.max_decode_len);
        assert_eq!(a.token_ids, b.token_ids);
    }
    println!("restored model decodes identically on {} samples", prepared.len());

    let err = load_model(&tmp, model_dims(&hp, &pipe), ih ^ 1, oh).unwrap_err();
    println!("tampered vocabulary hash rejected: {err}");
    let _ = std::fs::remove_file(&tmp);
}
