//! Command-line front end: dataset generation, training, translation,
//! evaluation, grammar checking and state tracing.
//!
//! Exit codes: 0 success, 2 configuration error, 3 ungrammatical gold
//! data, 4 training divergence.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::Engine;
use crate::nn::{
    self, greedy_decode, load_model, model_dims, prepare_samples, save_model, train, Hyperparams,
    MaskConfig, Seq2SeqModel, TrainConfig,
};
use crate::rules::ActiveRuleSet;
use crate::tracker::GrammarState;
use crate::workload::{self, generate_workload, kfold_split, Template};
use crate::{executor, metrics, tagger};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BAD_GOLD: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Parser)]
#[command(name = "sqlguard", about = "Grammar-guarded NL-to-SQL translation")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct StackArgs {
    /// Directory with schema.json, synonyms.json and CSV tables.
    #[arg(long)]
    data_dir: PathBuf,
    /// Grammar file; embedded default when omitted.
    #[arg(long)]
    grammar: Option<PathBuf>,
    /// Phrasing-pattern file; embedded default when omitted.
    #[arg(long)]
    patterns: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct MaskArgs {
    /// Disable the short-term dependency masks.
    #[arg(long)]
    no_short_masks: bool,
    /// Disable the long-term dependency masks.
    #[arg(long)]
    no_long_masks: bool,
    /// Zero the grammar-state vector fed to the decoder.
    #[arg(long)]
    no_grammar_state: bool,
}

impl MaskArgs {
    fn config(&self) -> MaskConfig {
        MaskConfig {
            use_short: !self.no_short_masks,
            use_long: !self.no_long_masks,
            use_grammar: !self.no_grammar_state,
        }
    }
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Hyperparameter profile.
    #[arg(long, default_value = "desk")]
    profile: Hyperparams,
    /// Training epochs.
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Seed overriding the profile's.
    #[arg(long)]
    seed: Option<u64>,
    /// Learning rate overriding the profile's.
    #[arg(long)]
    lr: Option<f64>,
    /// Dropout rate overriding the profile's.
    #[arg(long)]
    dropout: Option<f64>,
}

impl TrainArgs {
    fn hyperparams(&self) -> Hyperparams {
        let mut hp = self.profile.clone();
        if let Some(seed) = self.seed {
            hp.seed = seed;
        }
        if let Some(lr) = self.lr {
            hp.lr = lr;
        }
        if let Some(dropout) = self.dropout {
            hp.dropout = dropout;
        }
        hp
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic question/SQL workload.
    Gen {
        #[command(flatten)]
        stack: StackArgs,
        /// Workload template.
        #[arg(long, default_value = "mixed")]
        template: Template,
        /// Number of samples.
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output JSON-lines file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a generated dataset.
    Train {
        #[command(flatten)]
        stack: StackArgs,
        #[command(flatten)]
        masks: MaskArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Dataset JSON-lines file.
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Per-epoch loss CSV output path.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Translate a natural-language question with a trained checkpoint.
    Translate {
        #[command(flatten)]
        stack: StackArgs,
        #[command(flatten)]
        masks: MaskArgs,
        #[arg(long, default_value = "desk")]
        profile: Hyperparams,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        question: String,
        /// Print the per-step grammar-state trace of the decode.
        #[arg(long)]
        trace: bool,
    },
    /// Cross-validated train/decode/evaluate runs.
    Eval {
        #[command(flatten)]
        stack: StackArgs,
        #[command(flatten)]
        masks: MaskArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Evaluate only this fold index.
        #[arg(long)]
        fold: Option<usize>,
        /// Directory for per-fold JSON reports.
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Validate a grammar file and dump the generated rule tables.
    CheckGrammar {
        #[arg(long)]
        grammar: Option<PathBuf>,
        /// Schema for expanding rule classes to concrete tokens.
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Replay an SQL token sequence through the state tracker.
    Trace {
        #[command(flatten)]
        stack: StackArgs,
        /// SQL text, e.g. "SELECT name FROM author".
        #[arg(long)]
        sql: String,
    },
}

/// Parse argv and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version through this path too
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

struct CliError {
    code: i32,
    message: String,
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError {
        code: EXIT_CONFIG,
        message: e.to_string(),
    }
}

fn nn_err(e: nn::NnError) -> CliError {
    let code = match e {
        nn::NnError::EmptyDataset | nn::NnError::BadSample { .. } => EXIT_BAD_GOLD,
        nn::NnError::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_CONFIG,
    };
    CliError {
        code,
        message: e.to_string(),
    }
}

fn load_stack(stack: &StackArgs) -> Result<Engine, CliError> {
    Engine::from_dir(
        &stack.data_dir,
        stack.grammar.as_deref(),
        stack.patterns.as_deref(),
    )
    .map_err(config_err)
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen {
            stack,
            template,
            n,
            seed,
            out,
        } => {
            let engine = load_stack(&stack)?;
            let db = engine.load_db(&stack.data_dir).map_err(config_err)?;
            let dataset = generate_workload(&db, &engine.patterns, &engine.synonyms, template, n, seed)
                .map_err(config_err)?;
            workload::save_jsonl(&dataset, &out).map_err(config_err)?;
            println!("wrote {} samples to {}", dataset.samples.len(), out.display());
            Ok(())
        }
        Command::Train {
            stack,
            masks,
            train: targs,
            dataset,
            checkpoint,
            loss_csv,
        } => {
            let engine = load_stack(&stack)?;
            let pipe = engine.pipeline();
            let cfg = masks.config();
            let data = workload::load_jsonl(&dataset).map_err(config_err)?;
            let prepared = prepare_samples(&pipe, &data.samples, &cfg).map_err(nn_err)?;
            let hp = targs.hyperparams();
            let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
            let mut model = Seq2SeqModel::new(model_dims(&hp, &pipe), &mut rng);
            let stats = train(
                &mut model,
                &prepared,
                &TrainConfig {
                    hp,
                    epochs: targs.epochs,
                    loss_log: loss_csv,
                },
            )
            .map_err(nn_err)?;
            let (ih, oh) = engine.vocab_hashes();
            save_model(&checkpoint, &model, ih, oh).map_err(nn_err)?;
            println!(
                "trained {} epochs on {} samples; final mean token loss {:.4}",
                stats.epoch_losses.len(),
                prepared.len(),
                stats.epoch_losses.last().copied().unwrap_or(f64::NAN)
            );
            println!("checkpoint: {}", checkpoint.display());
            Ok(())
        }
        Command::Translate {
            stack,
            masks,
            profile,
            checkpoint,
            question,
            trace,
        } => {
            let engine = load_stack(&stack)?;
            let pipe = engine.pipeline();
            let cfg = masks.config();
            let (ih, oh) = engine.vocab_hashes();
            let model = load_model(&checkpoint, model_dims(&profile, &pipe), ih, oh)
                .map_err(nn_err)?;
            let tagged = tagger::tag_question(&question, &engine.schema, &engine.synonyms);
            let out = greedy_decode(&model, &pipe, &tagged, &cfg, profile.max_decode_len);
            if trace {
                print_trace(&engine, &out.token_ids);
            }
            println!("{}", out.tokens.join(" "));
            if !out.completed {
                return Err(CliError {
                    code: EXIT_CONFIG,
                    message: "decode did not reach an accepting state".into(),
                });
            }
            Ok(())
        }
        Command::Eval {
            stack,
            masks,
            train: targs,
            dataset,
            folds,
            fold: only_fold,
            report_dir,
        } => {
            let engine = load_stack(&stack)?;
            let db = engine.load_db(&stack.data_dir).map_err(config_err)?;
            let data = workload::load_jsonl(&dataset).map_err(config_err)?;
            let cfg = masks.config();
            let hp = targs.hyperparams();
            let splits = kfold_split(&data, folds, hp.seed).map_err(config_err)?;
            let mut accuracies = Vec::new();
            for (fold, (train_idx, test_idx)) in splits.iter().enumerate() {
                if only_fold.is_some_and(|f| f != fold) {
                    continue;
                }
                let report = run_fold(
                    &engine, &db, &data.samples, train_idx, test_idx, &cfg, &hp, targs.epochs, fold,
                )?;
                println!("{report}");
                accuracies.push(report.query_accuracy);
                if let Some(dir) = &report_dir {
                    std::fs::create_dir_all(dir).map_err(config_err)?;
                    let path = dir.join(format!("fold{fold}.json"));
                    let text = serde_json::to_string_pretty(&report).map_err(config_err)?;
                    std::fs::write(&path, text).map_err(config_err)?;
                }
            }
            let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
            println!("mean query accuracy over {} folds: {mean:.4}", accuracies.len());
            Ok(())
        }
        Command::CheckGrammar { grammar, schema } => {
            let text = match &grammar {
                Some(p) => std::fs::read_to_string(p).map_err(config_err)?,
                None => crate::engine::DEFAULT_GRAMMAR.to_string(),
            };
            let g = crate::grammar::Grammar::parse(&text).map_err(config_err)?;
            g.check_ll1().map_err(config_err)?;
            let short = crate::rules::generate_short_term_rules(&g).map_err(config_err)?;
            println!(
                "grammar ok: {} expressions, {} short-term rules",
                g.expr_count(),
                short.rules().len()
            );
            println!("{}", short.dump(&g));
            if let Some(path) = schema {
                let s = crate::schema::Schema::load(&path).map_err(config_err)?;
                let vocab = crate::vocab::OutputVocab::build(&g, &s);
                let long = crate::rules::generate_long_term_rules(&vocab, &s);
                println!("{}", long.dump(&vocab));
            }
            Ok(())
        }
        Command::Trace { stack, sql } => {
            let engine = load_stack(&stack)?;
            let tokens = executor::tokenize_sql(&sql);
            let mut ids = Vec::new();
            // literal values are not vocabulary members; bind them to
            // fresh slot tokens the way training data does
            let (mut vals, mut strs) = (0usize, 0usize);
            for tok in &tokens {
                let id = match engine.output_vocab.id(tok) {
                    Some(id) => id,
                    None => {
                        let slot = if tok.parse::<f64>().is_ok() {
                            vals += 1;
                            format!("VAL_{}", vals - 1)
                        } else {
                            strs += 1;
                            format!("STR_{}", strs - 1)
                        };
                        engine.output_vocab.id(&slot).ok_or_else(|| CliError {
                            code: EXIT_CONFIG,
                            message: format!("token `{tok}`: no free slot `{slot}`"),
                        })?
                    }
                };
                ids.push(id);
            }
            if ids.last() != Some(&engine.output_vocab.stop_id()) {
                ids.push(engine.output_vocab.stop_id());
            }
            print_trace(&engine, &ids);
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    engine: &Engine,
    db: &crate::schema::Database,
    samples: &[workload::Sample],
    train_idx: &[usize],
    test_idx: &[usize],
    cfg: &MaskConfig,
    hp: &Hyperparams,
    epochs: usize,
    fold: usize,
) -> Result<metrics::EvalReport, CliError> {
    let pipe = engine.pipeline();
    let train_samples: Vec<_> = train_idx.iter().map(|&i| samples[i].clone()).collect();
    let prepared = prepare_samples(&pipe, &train_samples, cfg).map_err(nn_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut model = Seq2SeqModel::new(model_dims(hp, &pipe), &mut rng);
    train(
        &mut model,
        &prepared,
        &TrainConfig {
            hp: hp.clone(),
            epochs,
            loss_log: None,
        },
    )
    .map_err(nn_err)?;
    let mut preds = Vec::with_capacity(test_idx.len());
    let mut golds = Vec::with_capacity(test_idx.len());
    for &i in test_idx {
        let sample = &samples[i];
        let tagged =
            tagger::tag_question(&sample.question.join(" "), &engine.schema, &engine.synonyms);
        let out = greedy_decode(&model, &pipe, &tagged, cfg, hp.max_decode_len);
        preds.push(out.tokens);
        golds.push(sample.sql.clone());
    }
    metrics::evaluate(fold, &preds, &golds, &engine.grammar, &engine.output_vocab, db)
        .map_err(config_err)
}

/// One line per step: `t | token | active expressions | active rules`.
fn print_trace(engine: &Engine, token_ids: &[usize]) {
    let vocab = &engine.output_vocab;
    let mut state = GrammarState::init(&engine.grammar);
    let mut active = ActiveRuleSet::new(&engine.grammar);
    for (t, &id) in token_ids.iter().enumerate() {
        match state.advance(vocab, id) {
            Ok(()) => active.observe(&engine.long, &state, id),
            Err(e) => {
                println!("{t:3} | {} | REJECTED: {e}", vocab.token(id));
                return;
            }
        }
        let exprs: Vec<String> = state
            .active_expressions()
            .into_iter()
            .map(|e| format!("<{}>", engine.grammar.symbol(engine.grammar.expr(e).lhs).name))
            .collect();
        let mut rules: Vec<String> = active
            .active_rules()
            .into_iter()
            .map(|r| format!("L{r}"))
            .collect();
        rules.dedup();
        println!(
            "{t:3} | {:<12} | {} | {}",
            vocab.token(id),
            exprs.join(" "),
            rules.join(" ")
        );
    }
}

