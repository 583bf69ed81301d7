//! Greedy masked decoding.
//!
//! At each step the candidate set is the dependency-mask intersection
//! with the tracker's acceptable tokens; a one-step lookahead skips
//! choices that would strand the decoder in a dead end.  When the
//! long-term mask eliminates every candidate the decoder falls back to
//! the short-term mask, then to the raw tracker set.

use ndarray::Array1;

use crate::rules::{self, ActiveRuleSet};
use crate::tagger::{self, TaggedQuestion};
use crate::tracker::GrammarState;
use crate::vocab::TokenKind;

use super::model::Seq2SeqModel;
use super::train::Pipeline;
use super::MaskConfig;

#[derive(Debug, Clone)]
pub struct DecodeOutcome {
    /// Raw emitted output-vocabulary ids, including Stop_symbol.
    pub token_ids: Vec<usize>,
    /// SQL tokens with slot tokens substituted by the bound question
    /// spans; Stop_symbol stripped.
    pub tokens: Vec<String>,
    /// Did the tracker reach an accepting state?
    pub completed: bool,
    /// Steps that needed a mask fallback tier.
    pub fallbacks: usize,
}

fn candidate_ids(
    pipe: &Pipeline<'_>,
    state: &GrammarState<'_>,
    active: &ActiveRuleSet,
    cfg: &MaskConfig,
) -> (Vec<usize>, bool) {
    let vocab = pipe.output_vocab;
    let acceptable = state.acceptable_tokens(vocab);
    if !cfg.use_short && !cfg.use_long {
        // unmasked ablation: the model is free to pick any token
        return ((0..vocab.len()).collect(), false);
    }
    let short = if cfg.use_short {
        rules::short_term_mask(pipe.short, state, vocab).ok()
    } else {
        None
    };
    let long = cfg
        .use_long
        .then(|| active.mask(pipe.long, vocab.len()));
    let admit = |with_long: bool, id: usize| {
        short.as_ref().map_or(true, |m| m[id])
            && (!with_long || long.as_ref().map_or(true, |m| m[id]))
    };
    // tier 1: configured masks; tier 2: short only; tier 3: tracker set
    let tier1: Vec<usize> = acceptable
        .iter()
        .copied()
        .filter(|&id| admit(true, id))
        .collect();
    if !tier1.is_empty() {
        return (tier1, false);
    }
    let tier2: Vec<usize> = acceptable
        .iter()
        .copied()
        .filter(|&id| admit(false, id))
        .collect();
    if !tier2.is_empty() {
        return (tier2, true);
    }
    (acceptable, true)
}

/// Can `state` still reach acceptance within `budget` tokens using only
/// fully-masked (tier 1) choices?  Shortest-first depth-first search;
/// the dead-end memo keeps mask-starved regions (e.g. a select list
/// that exhausted every unmasked column) from being re-explored.
type DeadKey = (
    Vec<(usize, Vec<usize>, u8)>,
    Vec<(usize, u8, usize, usize)>,
    crate::rules::ScopeSignature,
    usize,
);

fn completable(
    pipe: &Pipeline<'_>,
    state: &GrammarState<'_>,
    active: &ActiveRuleSet,
    cfg: &MaskConfig,
    budget: usize,
    dead: &mut std::collections::HashSet<DeadKey>,
) -> bool {
    if state.is_accepting() {
        return true;
    }
    if state.min_tokens_to_accept() > budget {
        return false;
    }
    let key = (state.signature(), active.signature(), active.scope_signature(), budget);
    if dead.contains(&key) {
        return false;
    }
    let (candidates, fell_back) = candidate_ids(pipe, state, active, cfg);
    if fell_back {
        // a state whose only continuations violate the masks is a dead
        // end for guarantee purposes
        dead.insert(key);
        return false;
    }
    let mut ordered: Vec<(usize, GrammarState<'_>)> = candidates
        .into_iter()
        .filter_map(|c| Some((c, state.advanced(pipe.output_vocab, c).ok()?)))
        .collect();
    ordered.sort_by_key(|(_, n)| n.min_tokens_to_accept());
    for (c, next) in ordered {
        let mut next_active = active.clone();
        next_active.observe(pipe.long, &next, c);
        if completable(pipe, &next, &next_active, cfg, budget - 1, dead) {
            return true;
        }
    }
    dead.insert(key);
    false
}

/// Would choosing `id` leave a mask-respecting completion that fits the
/// token budget?
fn survives_lookahead(
    pipe: &Pipeline<'_>,
    state: &GrammarState<'_>,
    active: &ActiveRuleSet,
    cfg: &MaskConfig,
    id: usize,
    budget: usize,
) -> bool {
    let Ok(next) = state.advanced(pipe.output_vocab, id) else {
        return false;
    };
    let mut next_active = active.clone();
    next_active.observe(pipe.long, &next, id);
    let mut dead = std::collections::HashSet::new();
    completable(pipe, &next, &next_active, cfg, budget - 1, &mut dead)
}

/// Budget-forced close: the grammatical token whose continuation is
/// shortest, mask-respecting choices first, ties broken by model
/// preference.
fn wrap_up_choice(
    pipe: &Pipeline<'_>,
    state: &GrammarState<'_>,
    active: &ActiveRuleSet,
    logits: &Array1<f64>,
) -> Option<usize> {
    let long = active.mask(pipe.long, pipe.output_vocab.len());
    let short = rules::short_term_mask(pipe.short, state, pipe.output_vocab).ok();
    state
        .acceptable_tokens(pipe.output_vocab)
        .into_iter()
        .filter_map(|id| {
            let next = state.advanced(pipe.output_vocab, id).ok()?;
            let short_ok = short.as_ref().is_none_or(|m| m[id]);
            let tier = match (short_ok, long[id]) {
                (true, true) => 0u8,
                (true, false) => 1,
                _ => 2,
            };
            Some((tier, next.min_tokens_to_accept(), id))
        })
        .min_by(|a, b| {
            a.0.cmp(&b.0)
                .then(a.1.cmp(&b.1))
                .then_with(|| logits[b.2].partial_cmp(&logits[a.2]).unwrap())
        })
        .map(|(_, _, id)| id)
}

/// Substitute slot tokens with the spans bound in the question; unbound
/// slots get neutral defaults so the output always parses.
pub fn substitute_slots(
    tagged: &TaggedQuestion,
    vocab: &crate::vocab::OutputVocab,
    ids: &[usize],
) -> Vec<String> {
    ids.iter()
        .filter(|&&id| id != vocab.stop_id())
        .map(|&id| match vocab.kind(id) {
            TokenKind::ValueSlot(i) => tagged
                .value_bindings
                .get(*i)
                .cloned()
                .unwrap_or_else(|| "0".to_string()),
            TokenKind::StringSlot(i) => tagged
                .string_bindings
                .get(*i)
                .cloned()
                .unwrap_or_else(|| "Unknown".to_string()),
            _ => vocab.token(id).to_string(),
        })
        .collect()
}

pub fn greedy_decode(
    model: &Seq2SeqModel,
    pipe: &Pipeline<'_>,
    tagged: &TaggedQuestion,
    cfg: &MaskConfig,
    max_len: usize,
) -> DecodeOutcome {
    let vocab = pipe.output_vocab;
    let inputs = tagger::encode_inputs(tagged, pipe.input_vocab);
    let mut st = model.encode_for_decode(&inputs);
    let mut state = GrammarState::init(pipe.grammar);
    let mut active = ActiveRuleSet::new(pipe.grammar);
    let zero_g = Array1::zeros(pipe.grammar.expr_count());

    let mut token_ids = Vec::new();
    let mut fallbacks = 0;
    let mut tracker_ok = true;
    let mut prev = None;
    for _ in 0..max_len {
        if tracker_ok && state.is_accepting() {
            break;
        }
        let g = if cfg.use_grammar && tracker_ok {
            Array1::from(state.grammar_vector_f64())
        } else {
            zero_g.clone()
        };
        let (logits, next_st) = model.decode_step(&st, prev, &g);
        let (candidates, fell_back) = if tracker_ok {
            candidate_ids(pipe, &state, &active, cfg)
        } else {
            ((0..vocab.len()).collect(), false)
        };
        if candidates.is_empty() {
            break;
        }
        if fell_back {
            fallbacks += 1;
        }
        let mut ranked = candidates;
        ranked.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap());
        let choice = if tracker_ok {
            let budget = max_len - token_ids.len();
            ranked
                .iter()
                .copied()
                .find(|&id| survives_lookahead(pipe, &state, &active, cfg, id, budget))
                .or_else(|| {
                    fallbacks += 1;
                    wrap_up_choice(pipe, &state, &active, &logits)
                })
                .unwrap_or(ranked[0])
        } else {
            ranked[0]
        };

        token_ids.push(choice);
        if tracker_ok {
            match state.advance(vocab, choice) {
                Ok(()) => active.observe(pipe.long, &state, choice),
                // only reachable in unmasked ablation runs
                Err(_) => tracker_ok = false,
            }
        }
        if !tracker_ok && choice == vocab.stop_id() {
            break;
        }
        st = next_st;
        prev = Some(choice);
    }

    DecodeOutcome {
        tokens: substitute_slots(tagged, vocab, &token_ids),
        completed: tracker_ok && state.is_accepting(),
        token_ids,
        fallbacks,
    }
}
