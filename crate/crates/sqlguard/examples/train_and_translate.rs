//! Train a small model on a generated workload, then translate fresh
//! questions with grammar-guarded greedy decoding.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqlguard::engine::Engine;
use sqlguard::nn::{
    greedy_decode, model_dims, prepare_samples, train, Hyperparams, MaskConfig, Seq2SeqModel,
    TrainConfig,
};
use sqlguard::tagger::tag_question;
use sqlguard::workload::{generate_workload, Template};

fn main() {
    let dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/toy"));
    let engine = Engine::from_dir(dir, None, None).expect("load stack");
    let db = engine.load_db(dir).expect("load tables");
    let pipe = engine.pipeline();
    let cfg = MaskConfig::default();

    let data = generate_workload(&db, &engine.patterns, &engine.synonyms, Template::Select, 40, 7)
        .expect("generate");
    let prepared = prepare_samples(&pipe, &data.samples, &cfg).expect("prepare");

    let hp = Hyperparams::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut model = Seq2SeqModel::new(model_dims(&hp, &pipe), &mut rng);
    let stats = train(
        &mut model,
        &prepared,
        &TrainConfig { hp: hp.clone(), epochs: 200, loss_log: None },
    )
    .expect("train");
    println!(
        "loss: {:.4} -> {:.4} over {} epochs\n",
        stats.epoch_losses[0],
        stats.epoch_losses.last().unwrap(),
        stats.epoch_losses.len()
    );

    // two training questions and a rephrasing of the first; a corpus
    // this small cannot generalize much further
    let seen: Vec<String> = data.samples.iter().take(2).map(|s| s.question.join(" ")).collect();
    let unseen = seen[0].replace("what is", "show me");
    for q in seen.iter().chain([&unseen]) {
        let tagged = tag_question(q, &engine.schema, &engine.synonyms);
        let out = greedy_decode(&model, &pipe, &tagged, &cfg, hp.max_decode_len);
        println!("Q: {q}");
        println!("A: {} (completed: {})\n", out.tokens.join(" "), out.completed);
    }
}
