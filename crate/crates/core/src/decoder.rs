//! Greedy and beam-search decoding over the transition system.
//!
//! Both decoders rank the same expansion set: every legal action, with
//! arc actions carrying their best role's log-probability (or one
//! expansion per role when `expand_roles` is on). Ties break toward the
//! lower action index, then the lower role index, so beam width 1
//! reproduces the greedy decoder bit for bit.

use rayon::prelude::*;

use crate::data::{Sentence, SrlGraph};
use crate::embeddings::ContextVectors;
use crate::error::{Error, Result};
use crate::oracle::action_count_bound;
use crate::scorer::{NeuralState, SrlModel, StepScore};
use crate::transition::{ActionKind, ActionStep, State, TraceStep};

#[derive(Debug, Clone, Copy)]
pub struct DecodeConfig {
    /// Beam width; 1 is exactly the greedy decoder.
    pub beam: usize,
    /// Expand one hypothesis per role at arc steps instead of only the
    /// best role.
    pub expand_roles: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { beam: 1, expand_roles: false }
    }
}

/// A finished decode: the predicted graph, the per-step trace (each row
/// carries the added log-probability) and the total score.
#[derive(Debug, Clone)]
pub struct DecodeOutcome {
    pub graph: SrlGraph,
    pub trace: Vec<TraceStep>,
    pub score: f64,
    pub steps: usize,
}

/// One scored continuation of a hypothesis.
struct Expansion {
    kind: ActionKind,
    role_idx: Option<usize>,
    add_lp: f64,
}

/// Enumerates continuations in canonical order: action kinds by index,
/// roles by index. This order is the tie-break everywhere.
fn expansions(
    model: &SrlModel,
    tape: &mut crate::nn::Tape,
    score: &StepScore,
    expand_roles: bool,
) -> Vec<Expansion> {
    let alp = model.action_log_probs(tape, score);
    let rlp = model.role_log_probs(tape, score);
    let mut out = Vec::new();
    for kind in ActionKind::ALL {
        if !score.legal[kind.index()] {
            continue;
        }
        if kind.is_arc() {
            let roles = rlp.as_ref().expect("a legal arc implies role scores");
            if expand_roles {
                for (ri, &lp) in roles.iter().enumerate() {
                    out.push(Expansion {
                        kind,
                        role_idx: Some(ri),
                        add_lp: alp[kind.index()] + lp,
                    });
                }
            } else {
                let mut best = 0;
                for (ri, &lp) in roles.iter().enumerate() {
                    if lp > roles[best] {
                        best = ri;
                    }
                }
                out.push(Expansion {
                    kind,
                    role_idx: Some(best),
                    add_lp: alp[kind.index()] + roles[best],
                });
            }
        } else {
            out.push(Expansion { kind, role_idx: None, add_lp: alp[kind.index()] });
        }
    }
    out
}

fn step_of(model: &SrlModel, e: &Expansion) -> ActionStep {
    match e.role_idx {
        Some(ri) => ActionStep::arc(e.kind, model.vocabs.roles.known_symbols()[ri].clone()),
        None => ActionStep::plain(e.kind),
    }
}

/// Greedy decoding: at each step take the best-scoring expansion.
pub fn decode_greedy(
    model: &SrlModel,
    sent: &Sentence,
    context: Option<&[Vec<f64>]>,
) -> Result<DecodeOutcome> {
    let order = model.config.order;
    let bound = action_count_bound(sent.len(), sent.len());
    let mut tape = crate::nn::Tape::new();
    let mut tp = model.tape_params();
    let enc = model.encode(&mut tape, &mut tp, sent, context, None)?;
    let mut state = State::initial(sent.len())?;
    let mut ns = model.initial_neural_state(&mut tape, &mut tp, &enc);
    let mut trace = Vec::new();
    let mut score_total = 0.0;
    let mut steps = 0;
    while !state.is_terminal() {
        if steps >= bound {
            return Err(Error::Contract(format!(
                "decode exceeded the action bound {bound} on sentence {}",
                sent.id
            )));
        }
        let score = model.score_step(&mut tape, &mut tp, &enc, &state, &ns)?;
        let exps = expansions(model, &mut tape, &score, false);
        let mut best = 0;
        for (i, e) in exps.iter().enumerate().skip(1) {
            if e.add_lp > exps[best].add_lp {
                best = i;
            }
        }
        let chosen = &exps[best];
        let step = step_of(model, chosen);
        debug_assert!(score.legal[step.kind.index()], "greedy chose an illegal action");
        let mut row = TraceStep::capture(steps, &state, &step, order);
        row.log_prob = Some(chosen.add_lp);
        trace.push(row);
        ns = model.advance(&mut tape, &mut tp, &enc, &state, &ns, &step, &score);
        state = state.apply(&step, order)?;
        score_total += chosen.add_lp;
        steps += 1;
    }
    Ok(DecodeOutcome { graph: state.graph, trace, score: score_total, steps })
}

struct Hypothesis {
    state: State,
    ns: NeuralState,
    score: f64,
    trace: Vec<TraceStep>,
}

/// Beam decoding, synchronized per transition step: every live
/// hypothesis expands, the pool is pruned to the beam width, finished
/// hypotheses are frozen and compete at the end. Pruning ties keep the
/// earlier-generated candidate.
pub fn decode_beam(
    model: &SrlModel,
    sent: &Sentence,
    context: Option<&[Vec<f64>]>,
    cfg: DecodeConfig,
) -> Result<DecodeOutcome> {
    if cfg.beam == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let order = model.config.order;
    let bound = action_count_bound(sent.len(), sent.len());
    let mut tape = crate::nn::Tape::new();
    let mut tp = model.tape_params();
    let enc = model.encode(&mut tape, &mut tp, sent, context, None)?;
    let initial = Hypothesis {
        state: State::initial(sent.len())?,
        ns: model.initial_neural_state(&mut tape, &mut tp, &enc),
        score: 0.0,
        trace: Vec::new(),
    };
    let mut live = vec![initial];
    let mut done: Vec<Hypothesis> = Vec::new();
    let mut steps = 0;
    while !live.is_empty() {
        if steps >= bound {
            return Err(Error::Contract(format!(
                "beam decode exceeded the action bound {bound} on sentence {}",
                sent.id
            )));
        }
        // Score every live hypothesis once, then enumerate candidates in
        // (hypothesis, expansion) order so the stable sort's tie-break is
        // deterministic.
        let mut scored = Vec::with_capacity(live.len());
        for hyp in &live {
            let s = model.score_step(&mut tape, &mut tp, &enc, &hyp.state, &hyp.ns)?;
            scored.push(s);
        }
        let mut candidates: Vec<(usize, Expansion, f64)> = Vec::new();
        for (hi, (hyp, s)) in live.iter().zip(&scored).enumerate() {
            for e in expansions(model, &mut tape, s, cfg.expand_roles) {
                let total = hyp.score + e.add_lp;
                candidates.push((hi, e, total));
            }
        }
        candidates.sort_by(|a, b| b.2.total_cmp(&a.2));
        candidates.truncate(cfg.beam);

        let mut next = Vec::with_capacity(candidates.len());
        for (hi, e, total) in candidates {
            let hyp = &live[hi];
            let step = step_of(model, &e);
            debug_assert!(scored[hi].legal[step.kind.index()], "beam chose an illegal action");
            let mut row = TraceStep::capture(steps, &hyp.state, &step, order);
            row.log_prob = Some(e.add_lp);
            let mut trace = hyp.trace.clone();
            trace.push(row);
            let ns = model.advance(&mut tape, &mut tp, &enc, &hyp.state, &hyp.ns, &step, &scored[hi]);
            let state = hyp.state.apply(&step, order)?;
            let out = Hypothesis { state, ns, score: total, trace };
            if out.state.is_terminal() {
                done.push(out);
            } else {
                next.push(out);
            }
        }
        live = next;
        steps += 1;
    }
    // Completion order is chronological, so a strict comparison keeps
    // the earliest of equal-scoring hypotheses.
    let mut best = 0;
    for (i, h) in done.iter().enumerate().skip(1) {
        if h.score > done[best].score {
            best = i;
        }
    }
    let won = done.swap_remove(best);
    Ok(DecodeOutcome {
        steps: won.trace.len(),
        graph: won.state.graph,
        trace: won.trace,
        score: won.score,
    })
}

/// Decodes one sentence with the configured beam (width 1 routes through
/// the greedy decoder).
pub fn decode_sentence(
    model: &SrlModel,
    sent: &Sentence,
    context: Option<&[Vec<f64>]>,
    cfg: DecodeConfig,
) -> Result<DecodeOutcome> {
    if cfg.beam == 1 && !cfg.expand_roles {
        decode_greedy(model, sent, context)
    } else {
        decode_beam(model, sent, context, cfg)
    }
}

/// Decodes a corpus, preserving input order. `workers` > 1 fans
/// sentences out over a dedicated thread pool; outputs are identical to
/// the serial run because sentences are independent.
pub fn decode_corpus(
    model: &SrlModel,
    sentences: &[Sentence],
    context: Option<&ContextVectors>,
    cfg: DecodeConfig,
    workers: usize,
) -> Result<Vec<DecodeOutcome>> {
    let one = |sent: &Sentence| -> Result<DecodeOutcome> {
        let rows = match context {
            Some(cv) => Some(cv.for_sentence(&sent.id, sent.len())?),
            None => None,
        };
        decode_sentence(model, sent, rows, cfg)
    };
    if workers <= 1 {
        return sentences.iter().map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build a {workers}-thread pool: {e}")))?;
    pool.install(|| sentences.par_iter().map(one).collect())
}
