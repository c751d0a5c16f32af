//! Training loop: teacher-forced negative log-likelihood over oracle
//! action sequences, L2 regularization, global-norm clipping, Adam, and
//! early stopping on development F1.
//!
//! Determinism: the only randomness is parameter initialization and the
//! per-epoch shuffle, both driven by [`TrainConfig::seed`]. Batches run
//! serially, the development decode is serial, and the metrics file
//! carries no timestamps, so identical inputs reproduce identical
//! checkpoints and metrics byte for byte.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{build_vocabs, Sentence, SrlGraph, Vocab};
use crate::decoder::{decode_corpus, DecodeConfig};
use crate::embeddings::{ContextVectors, Pretrained};
use crate::error::{Error, Result};
use crate::eval::{score_predicates, score_triplets};
use crate::nn::{clip_global_norm, Adam, Gradients, ParamStore, Tape, TapeParams, Tensor};
use crate::oracle::{derive_actions, OracleOptions};
use crate::scorer::{ModelConfig, SrlModel};
use crate::transition::{ActionStep, ParsingOrder, State};

/// Name of the per-epoch metrics file written into the output directory.
pub const METRICS_FILE: &str = "metrics.ndjson";

/// Development metric that drives checkpoint selection and patience.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    /// Labeled argument-attachment F1 over (predicate, argument, role)
    /// triplets.
    ArgF1,
    /// Predicate-identification F1.
    PrdF1,
}

/// Optimization settings. Defaults mirror the model's reference training
/// recipe; every field can be overridden from JSON, and unknown keys are
/// rejected so typos fail loudly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Adam learning rate. Zero is allowed (the parameters never move),
    /// which is occasionally useful for plumbing tests.
    pub lr: f64,
    /// L2 penalty strength; the loss term is `l2/2 · Σ‖θ‖²` over
    /// trainable parameters.
    pub l2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many consecutive epochs without a strict
    /// improvement of the selection metric.
    pub patience: usize,
    /// Seeds parameter initialization and the epoch shuffle.
    pub seed: u64,
    /// Words and characters seen fewer than this many times in the
    /// training corpus stay out of the vocabulary.
    pub min_freq: usize,
    /// Global gradient-norm ceiling applied after the L2 term.
    pub clip_norm: f64,
    /// Argument attachment order used for both the oracle and the model.
    pub order: ParsingOrder,
    /// Whether the model scores arcs against pooled arc-history features.
    pub high_order: bool,
    pub selection: SelectionMetric,
    /// Beam width for the per-epoch development decode.
    pub dev_beam: usize,
    /// Whether oracle sequences spell out NO-ARC for every leftover
    /// stack entry instead of shifting early.
    pub trailing_no_arcs: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            lr: 1e-5,
            l2: 0.2,
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
            seed: 1,
            min_freq: 1,
            clip_norm: 5.0,
            order: ParsingOrder::CloseFirst,
            high_order: true,
            selection: SelectionMetric::ArgF1,
            dev_beam: 1,
            trailing_no_arcs: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !self.lr.is_finite() || self.lr < 0.0 {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if !self.l2.is_finite() || self.l2 < 0.0 {
            return bad(format!("l2 must be finite and non-negative, got {}", self.l2));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.min_freq == 0 {
            return bad("min_freq must be at least 1".into());
        }
        if !self.clip_norm.is_finite() || self.clip_norm <= 0.0 {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if self.dev_beam == 0 {
            return bad("dev_beam must be at least 1".into());
        }
        Ok(())
    }
}

/// Summary of a finished training run.
#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_dev_arg_f1: f64,
    pub best_dev_prd_f1: f64,
}

/// Teacher-forced loss for one sentence, evaluated against `store`
/// (normally the model's own parameters; split out so derivative checks
/// can perturb a copy). Returns the loss value and its gradients.
///
/// The loss is the summed negative log-probability of every oracle
/// action and of the gold role at every arc, plus `l2/2 · Σ‖θ‖²` over
/// trainable parameters when `l2 > 0`. Steps with a single legal action
/// contribute exactly zero.
pub fn sentence_loss(
    model: &SrlModel,
    store: &ParamStore,
    sent: &Sentence,
    actions: &[ActionStep],
    context: Option<&[Vec<f64>]>,
    l2: f64,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let mut tp = TapeParams::new(store);
    let enc = model.encode(&mut tape, &mut tp, sent, context, None)?;
    let mut state = State::initial(sent.len())?;
    let mut ns = model.initial_neural_state(&mut tape, &mut tp, &enc);

    let mut terms = Vec::new();
    for step in actions {
        let score = model.score_step(&mut tape, &mut tp, &enc, &state, &ns)?;
        terms.push(tape.nll_masked(score.action_logits, &score.legal, step.kind.index()));
        if step.kind.is_arc() {
            let logits = score.role_logits.ok_or_else(|| {
                Error::Contract(format!(
                    "sentence {}: arc step without role scores",
                    sent.id
                ))
            })?;
            let label = step.role.as_ref().ok_or_else(|| {
                Error::Contract(format!("sentence {}: arc step without a role", sent.id))
            })?;
            let idx = Vocab::known_index(model.vocabs.roles.id(label)).ok_or_else(|| {
                Error::Input(format!(
                    "sentence {}: role {label:?} is not in the model vocabulary",
                    sent.id
                ))
            })?;
            let mask = vec![true; model.num_roles()];
            terms.push(tape.nll_masked(logits, &mask, idx));
        }
        let next = state.apply(step, model.config.order)?;
        ns = model.advance(&mut tape, &mut tp, &enc, &state, &ns, step, &score);
        state = next;
    }

    let mut total = tape.add_n(&terms);
    if l2 > 0.0 {
        let squares: Vec<_> = store
            .ids()
            .filter(|&id| store.is_trainable(id))
            .map(|id| {
                let theta = tp.get(&mut tape, id);
                tape.sum_squares(theta)
            })
            .collect();
        let sum = tape.add_n(&squares);
        let penalty = tape.scale(sum, l2 / 2.0);
        total = tape.add(total, penalty);
    }

    let value = tape.scalar_value(total);
    let grads = tape.backward(total, store.len());
    Ok((value, grads))
}

/// Adds the analytic L2 gradient `l2·θ` for every trainable parameter
/// and returns the penalty value `l2/2 · Σ‖θ‖²`. Equivalent to building
/// the penalty on the tape, without the extra nodes.
fn apply_l2(grads: &mut Gradients, store: &ParamStore, l2: f64) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    let mut sq = 0.0;
    for id in store.ids() {
        if !store.is_trainable(id) {
            continue;
        }
        let theta = store.tensor(id);
        sq += theta.data.iter().map(|x| x * x).sum::<f64>();
        let slot = &mut grads.slots[id.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(theta.rows, theta.cols));
        }
        let g = slot.as_mut().expect("slot was just filled");
        for (gk, tk) in g.data.iter_mut().zip(&theta.data) {
            *gk += l2 * tk;
        }
    }
    0.5 * l2 * sq
}

/// Trains a fresh model and writes the best checkpoint (by the selected
/// development metric) plus `metrics.ndjson` into `out_dir`.
///
/// The vocabulary comes from the training corpus alone. Oracle action
/// sequences are derived once up front; an unprojectable gold graph is
/// therefore rejected before any optimization happens.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_data: &[(Sentence, SrlGraph)],
    dev_data: &[(Sentence, SrlGraph)],
    pretrained: Option<&Pretrained>,
    context: Option<&ContextVectors>,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    if dev_data.is_empty() {
        return Err(Error::Config("development corpus is empty".into()));
    }

    let mut mc = model_cfg.clone();
    mc.order = cfg.order;
    mc.high_order = cfg.high_order;
    let vocabs = build_vocabs(train_data, cfg.min_freq);
    let mut model = SrlModel::new(mc, vocabs, pretrained, cfg.seed)?;

    let opts = OracleOptions { order: cfg.order, trailing_no_arcs: cfg.trailing_no_arcs };
    let mut sequences = Vec::with_capacity(train_data.len());
    let mut train_ctx: Vec<Option<&[Vec<f64>]>> = Vec::with_capacity(train_data.len());
    for (sent, gold) in train_data {
        sequences.push(derive_actions(sent.len(), gold, &opts)?);
        train_ctx.push(match context {
            Some(c) => Some(c.for_sentence(&sent.id, sent.len())?),
            None => None,
        });
    }

    let dev_sents: Vec<Sentence> = dev_data.iter().map(|(s, _)| s.clone()).collect();
    let dev_cfg = DecodeConfig { beam: cfg.dev_beam, expand_roles: false };

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let mut metrics = BufWriter::new(
        File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?,
    );

    let mut adam = Adam::new(&model.params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    let mut best_metric: Option<f64> = None;
    let mut best_epoch = 0;
    let mut best_arg = 0.0;
    let mut best_prd = 0.0;
    let mut since_improved = 0;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::new(model.params.len());
            let mut nll_sum = 0.0;
            for &i in batch {
                let (sent, _) = &train_data[i];
                let (value, g) =
                    sentence_loss(&model, &model.params, sent, &sequences[i], train_ctx[i], 0.0)?;
                nll_sum += value;
                grads.add_assign(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            let penalty = apply_l2(&mut grads, &model.params, cfg.l2);
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.step(&mut model.params, &grads)?;
            loss_sum += nll_sum / batch.len() as f64 + penalty;
            batches += 1;
        }
        let loss = loss_sum / batches as f64;

        let outcomes = decode_corpus(&model, &dev_sents, context, dev_cfg, 1)?;
        let pred: Vec<(Sentence, SrlGraph)> = dev_sents
            .iter()
            .cloned()
            .zip(outcomes.into_iter().map(|o| o.graph))
            .collect();
        let arg = score_triplets(dev_data, &pred)?;
        let prd = score_predicates(dev_data, &pred)?;
        let metric = match cfg.selection {
            SelectionMetric::ArgF1 => arg.f1,
            SelectionMetric::PrdF1 => prd.f1,
        };

        let improved = best_metric.map_or(true, |b| metric > b);
        if improved {
            best_metric = Some(metric);
            best_epoch = epoch;
            best_arg = arg.f1;
            best_prd = prd.f1;
            since_improved = 0;
            model.save(out_dir)?;
        } else {
            since_improved += 1;
        }

        let line = serde_json::json!({
            "epoch": epoch,
            "loss": loss,
            "dev_arg_f1": arg.f1,
            "dev_prd_f1": prd.f1,
            "improved": improved,
        });
        writeln!(metrics, "{line}").map_err(|e| Error::io(&metrics_path, e))?;

        if since_improved >= cfg.patience {
            break;
        }
    }
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;

    Ok(TrainOutcome {
        epochs_run,
        best_epoch,
        best_dev_arg_f1: best_arg,
        best_dev_prd_f1: best_prd,
    })
}
