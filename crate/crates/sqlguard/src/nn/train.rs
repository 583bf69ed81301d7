//! Sample preparation and Adam training.
//!
//! Preparation replays every gold SQL sequence through the grammar
//! tracker once, recording the grammar vector and the combined
//! dependency mask that precede each output step; training then never
//! touches the tracker again.

use std::collections::HashMap;
use std::path::PathBuf;

use ndarray::Array1;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::grammar::Grammar;
use crate::rules::{self, ActiveRuleSet, LongTermRules, ShortTermRules};
use crate::schema::Schema;
use crate::tagger::{self, EncoderInput, TaggedQuestion};
use crate::tracker::GrammarState;
use crate::vocab::{InputVocab, OutputVocab};
use crate::workload::Sample;

use super::model::{ModelDims, Seq2SeqModel, TeacherForced};
use super::{Hyperparams, MaskConfig, NnError};

/// Shared references needed to turn raw samples into tensors and to
/// decode model output.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub grammar: &'a Grammar,
    pub schema: &'a Schema,
    pub synonyms: &'a HashMap<String, String>,
    pub input_vocab: &'a InputVocab,
    pub output_vocab: &'a OutputVocab,
    pub short: &'a ShortTermRules,
    pub long: &'a LongTermRules,
}

pub fn model_dims(hp: &Hyperparams, pipe: &Pipeline<'_>) -> ModelDims {
    ModelDims {
        input_vocab: pipe.input_vocab.len(),
        output_vocab: pipe.output_vocab.len(),
        grammar: pipe.grammar.expr_count(),
        embed_in: hp.embed_in,
        embed_out: hp.embed_out,
        hidden: hp.hidden,
    }
}

#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub inputs: Vec<EncoderInput>,
    /// Gold output ids, slot tokens substituted, ending in Stop_symbol.
    pub targets: Vec<usize>,
    pub gs: Vec<Array1<f64>>,
    pub masks: Vec<Vec<bool>>,
    pub tagged: TaggedQuestion,
    pub gold_sql: Vec<String>,
}

impl PreparedSample {
    pub fn teacher_forced(&self) -> TeacherForced<'_> {
        TeacherForced {
            inputs: &self.inputs,
            targets: &self.targets,
            gs: &self.gs,
            masks: &self.masks,
        }
    }
}

/// Map gold SQL tokens to output-vocabulary ids, replacing concrete
/// condition values with the slot token bound to the same question span.
fn map_sql(
    pipe: &Pipeline<'_>,
    tagged: &TaggedQuestion,
    sql: &[String],
) -> Result<Vec<usize>, String> {
    let vocab = pipe.output_vocab;
    let mut ids = Vec::with_capacity(sql.len() + 1);
    for tok in sql {
        if let Some(id) = vocab.id(tok) {
            ids.push(id);
            continue;
        }
        if let Ok(num) = tok.parse::<f64>() {
            let slot = tagged
                .value_bindings
                .iter()
                .position(|b| b.parse::<f64>() == Ok(num))
                .ok_or_else(|| format!("value `{tok}` not tagged in the question"))?;
            ids.push(vocab.value_slot_ids()[slot]);
            continue;
        }
        let text = tok.trim_matches('\'');
        let slot = tagged
            .string_bindings
            .iter()
            .position(|b| b.eq_ignore_ascii_case(text))
            .ok_or_else(|| format!("string `{tok}` not tagged in the question"))?;
        ids.push(vocab.string_slot_ids()[slot]);
    }
    if ids.last() != Some(&vocab.stop_id()) {
        ids.push(vocab.stop_id());
    }
    Ok(ids)
}

/// Replay `targets` through the tracker, collecting per-step grammar
/// vectors and combined masks as configured.
pub fn guidance(
    pipe: &Pipeline<'_>,
    targets: &[usize],
    cfg: &MaskConfig,
) -> Result<(Vec<Array1<f64>>, Vec<Vec<bool>>), String> {
    let vocab = pipe.output_vocab;
    let mut state = GrammarState::init(pipe.grammar);
    let mut active = ActiveRuleSet::new(pipe.grammar);
    let mut gs = Vec::with_capacity(targets.len());
    let mut masks = Vec::with_capacity(targets.len());
    for &target in targets {
        gs.push(if cfg.use_grammar {
            Array1::from(state.grammar_vector_f64())
        } else {
            Array1::zeros(pipe.grammar.expr_count())
        });
        let mut mask = if cfg.use_short {
            rules::short_term_mask(pipe.short, &state, vocab).map_err(|e| e.to_string())?
        } else {
            vec![true; vocab.len()]
        };
        if cfg.use_long {
            let long_mask = active.mask(pipe.long, vocab.len());
            mask = rules::combine_masks(&mask, &long_mask);
        }
        if !mask[target] {
            return Err(format!(
                "gold token `{}` blocked by the dependency masks",
                vocab.token(target)
            ));
        }
        masks.push(mask);
        state
            .advance(vocab, target)
            .map_err(|e| format!("gold sequence rejected: {e}"))?;
        active.observe(pipe.long, &state, target);
    }
    if !state.is_accepting() {
        return Err("gold sequence does not reach an accepting state".into());
    }
    Ok((gs, masks))
}

/// Prepare workload samples for training; samples whose gold SQL cannot
/// be reconciled with the tagged question are skipped with a warning.
pub fn prepare_samples(
    pipe: &Pipeline<'_>,
    samples: &[Sample],
    cfg: &MaskConfig,
) -> Result<Vec<PreparedSample>, NnError> {
    let mut out = Vec::with_capacity(samples.len());
    for (index, sample) in samples.iter().enumerate() {
        let question = sample.question.join(" ");
        let tagged = tagger::tag_question(&question, pipe.schema, pipe.synonyms);
        let prepared = map_sql(pipe, &tagged, &sample.sql)
            .and_then(|targets| {
                let (gs, masks) = guidance(pipe, &targets, cfg)?;
                Ok(PreparedSample {
                    inputs: tagger::encode_inputs(&tagged, pipe.input_vocab),
                    targets,
                    gs,
                    masks,
                    tagged: tagged.clone(),
                    gold_sql: sample.sql.clone(),
                })
            });
        match prepared {
            Ok(p) => out.push(p),
            Err(reason) => {
                log::warn!("skipping sample {index}: {reason}");
            }
        }
    }
    if out.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub hp: Hyperparams,
    pub epochs: usize,
    /// Optional CSV log of per-epoch mean token loss.
    pub loss_log: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainStats {
    /// Mean per-token loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Minibatch Adam over the full parameter vector.
pub fn train(
    model: &mut Seq2SeqModel,
    data: &[PreparedSample],
    cfg: &TrainConfig,
) -> Result<TrainStats, NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let n = model.params.num_params();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut step = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.hp.seed);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for (bi, batch) in order.chunks(cfg.hp.batch.max(1)).enumerate() {
            let mut total = model.params.zeros_like();
            for &i in batch {
                let sample = &data[i];
                let (loss, grads) =
                    model.loss_and_grads(&sample.teacher_forced(), cfg.hp.dropout, &mut rng);
                if !loss.is_finite() {
                    return Err(NnError::Diverged { epoch, batch: bi });
                }
                epoch_loss += loss;
                epoch_tokens += sample.targets.len();
                total.add_scaled(&grads, 1.0);
            }
            let scale = 1.0 / batch.len() as f64;
            step += 1;
            let bc1 = 1.0 - B1.powi(step as i32);
            let bc2 = 1.0 - B2.powi(step as i32);
            let mut off = 0;
            let grad_arrays = total.arrays();
            for (p_slice, g_slice) in model.params.arrays_mut().into_iter().zip(grad_arrays) {
                for (p, &graw) in p_slice.iter_mut().zip(g_slice) {
                    let g = graw * scale;
                    m[off] = B1 * m[off] + (1.0 - B1) * g;
                    v[off] = B2 * v[off] + (1.0 - B2) * g * g;
                    let mhat = m[off] / bc1;
                    let vhat = v[off] / bc2;
                    *p -= cfg.hp.lr * mhat / (vhat.sqrt() + EPS);
                    off += 1;
                }
            }
        }
        let mean = epoch_loss / epoch_tokens as f64;
        epoch_losses.push(mean);
        log::info!("epoch {epoch}: mean token loss {mean:.4}");
    }

    if let Some(path) = &cfg.loss_log {
        let mut text = String::from("epoch,mean_token_loss\n");
        for (e, l) in epoch_losses.iter().enumerate() {
            text.push_str(&format!("{e},{l}\n"));
        }
        std::fs::write(path, text).map_err(|source| NnError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(TrainStats { epoch_losses })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::patterns::PatternSet;
    use crate::schema::Database;
    use std::path::Path;

    /// Owned pieces backing a toy-dataset `Pipeline`.
    pub struct Owned {
        pub grammar: Grammar,
        pub schema: Schema,
        pub synonyms: HashMap<String, String>,
        pub input_vocab: InputVocab,
        pub output_vocab: OutputVocab,
        pub short: ShortTermRules,
        pub long: LongTermRules,
        pub patterns: PatternSet,
        pub db: Database,
    }

    pub fn toy_owned() -> Owned {
        let grammar = Grammar::parse(include_str!("../../assets/grammar/sql.bnf")).unwrap();
        let schema = Schema::from_json(include_str!("../../assets/toy/schema.json")).unwrap();
        let synonyms: HashMap<String, String> =
            serde_json::from_str(include_str!("../../assets/toy/synonyms.json")).unwrap();
        let patterns = PatternSet::from_json(include_str!("../../assets/patterns.json")).unwrap();
        let input_vocab = InputVocab::build(&schema, &synonyms, &patterns.fixed_words());
        let output_vocab = OutputVocab::build(&grammar, &schema);
        let short = rules::generate_short_term_rules(&grammar).unwrap();
        let long = rules::generate_long_term_rules(&output_vocab, &schema);
        let db = Database::load_csv_dir(schema.clone(), Path::new("assets/toy")).unwrap();
        Owned {
            grammar,
            schema,
            synonyms,
            input_vocab,
            output_vocab,
            short,
            long,
            patterns,
            db,
        }
    }

    impl Owned {
        pub fn pipeline(&self) -> Pipeline<'_> {
            Pipeline {
                grammar: &self.grammar,
                schema: &self.schema,
                synonyms: &self.synonyms,
                input_vocab: &self.input_vocab,
                output_vocab: &self.output_vocab,
                short: &self.short,
                long: &self.long,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::toy_owned;
    use super::*;
    use crate::workload::{generate_workload, Template};

    fn small_hp() -> Hyperparams {
        Hyperparams {
            batch: 4,
            hidden: 24,
            embed_in: 16,
            embed_out: 16,
            encoder_layers: 2,
            decoder_layers: 2,
            lr: 0.01,
            dropout: 0.0,
            max_decode_len: 48,
            seed: 11,
        }
    }

    #[test]
    fn prepare_substitutes_slots_and_appends_stop() {
        let owned = toy_owned();
        let pipe = owned.pipeline();
        let data = generate_workload(&owned.db, &owned.patterns, &owned.synonyms, Template::Select, 6, 3)
            .unwrap();
        let prepared = prepare_samples(&pipe, &data.samples, &MaskConfig::default()).unwrap();
        assert_eq!(prepared.len(), 6);
        let vocab = pipe.output_vocab;
        for p in &prepared {
            assert_eq!(*p.targets.last().unwrap(), vocab.stop_id());
            // the concrete condition value never survives into targets
            let has_slot = p.targets.iter().any(|&id| {
                vocab.value_slot_ids().contains(&id) || vocab.string_slot_ids().contains(&id)
            });
            assert!(has_slot, "gold {:?} lost its value slot", p.gold_sql);
            assert_eq!(p.gs.len(), p.targets.len());
            assert_eq!(p.masks.len(), p.targets.len());
            for (mask, &t) in p.masks.iter().zip(&p.targets) {
                assert!(mask[t]);
            }
        }
    }

    #[test]
    fn guidance_honours_ablation_flags() {
        let owned = toy_owned();
        let pipe = owned.pipeline();
        let toks = ["SELECT", "name", "FROM", "author", "Stop_symbol"];
        let ids: Vec<usize> = toks.iter().map(|t| pipe.output_vocab.id(t).unwrap()).collect();
        let all_on = MaskConfig::default();
        let (gs, masks) = guidance(&pipe, &ids, &all_on).unwrap();
        assert!(gs[1].sum() > 0.0);
        assert!(masks[0].iter().filter(|&&b| b).count() == 1, "start admits SELECT only");
        let off = MaskConfig { use_short: false, use_long: false, use_grammar: false };
        let (gs, masks) = guidance(&pipe, &ids, &off).unwrap();
        assert!(gs.iter().all(|g| g.sum() == 0.0));
        assert!(masks.iter().all(|m| m.iter().all(|&b| b)));
    }

    #[test]
    fn zero_epochs_leaves_parameters_untouched() {
        let owned = toy_owned();
        let pipe = owned.pipeline();
        let data = generate_workload(&owned.db, &owned.patterns, &owned.synonyms, Template::Select, 4, 5)
            .unwrap();
        let prepared = prepare_samples(&pipe, &data.samples, &MaskConfig::default()).unwrap();
        let hp = small_hp();
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let mut model = Seq2SeqModel::new(model_dims(&hp, &pipe), &mut rng);
        let before: Vec<f64> = model.params.arrays().concat();
        let stats = train(&mut model, &prepared, &TrainConfig { hp, epochs: 0, loss_log: None })
            .unwrap();
        assert!(stats.epoch_losses.is_empty());
        assert_eq!(model.params.arrays().concat(), before);
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let owned = toy_owned();
        let pipe = owned.pipeline();
        let data = generate_workload(&owned.db, &owned.patterns, &owned.synonyms, Template::Select, 4, 5)
            .unwrap();
        let prepared = prepare_samples(&pipe, &data.samples, &MaskConfig::default()).unwrap();
        let hp = small_hp();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
            let mut model = Seq2SeqModel::new(model_dims(&hp, &pipe), &mut rng);
            let stats = train(
                &mut model,
                &prepared,
                &TrainConfig { hp: hp.clone(), epochs: 3, loss_log: None },
            )
            .unwrap();
            (stats.epoch_losses, model.params.arrays().concat())
        };
        let (la, pa) = run();
        let (lb, pb) = run();
        assert_eq!(la, lb);
        assert_eq!(pa, pb);
    }

    #[test]
    fn training_overfits_a_small_workload() {
        let owned = toy_owned();
        let pipe = owned.pipeline();
        let data = generate_workload(&owned.db, &owned.patterns, &owned.synonyms, Template::Select, 8, 7)
            .unwrap();
        let prepared = prepare_samples(&pipe, &data.samples, &MaskConfig::default()).unwrap();
        let hp = small_hp();
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let mut model = Seq2SeqModel::new(model_dims(&hp, &pipe), &mut rng);
        let stats = train(&mut model, &prepared, &TrainConfig { hp, epochs: 60, loss_log: None })
            .unwrap();
        let first = stats.epoch_losses[0];
        let last = *stats.epoch_losses.last().unwrap();
        assert!(
            last < first * 0.2 && last < 0.5,
            "loss must collapse on a memorizable set ({first:.3} -> {last:.3})"
        );
    }
}
