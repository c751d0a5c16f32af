//! The neural scorer: token features, sentence encoder, transition-state
//! representation and the action/role classifier heads, plus the
//! attention-pooled high-order feature over past arc decisions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Sentence, Vocabs};
use crate::embeddings::Pretrained;
use crate::error::{Error, Result};
use crate::nn::layers::{BiLstm, CharCnn, Embedding, Ffn, Linear, StackLstm, StackState, TreeLstm};
use crate::nn::params::{Init, ParamId, ParamStore, TapeParams};
use crate::nn::tape::{Tape, Tensor, Var};
use crate::nn::checkpoint;
use crate::transition::{ActionKind, ActionStep, ParsingOrder, Side, State, NUM_ACTION_KINDS};

/// Architecture configuration. Serialized into checkpoints; unknown
/// fields in hand-written JSON are rejected to catch typos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Trainable word embedding size; forced to the pretrained dimension
    /// when a pretrained table is supplied.
    pub word_dim: usize,
    pub pos_dim: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    /// Action-kind embedding size for the history stack.
    pub action_dim: usize,
    /// Hidden size of the BiLSTM, TreeLSTM and Stack-LSTM encoders.
    pub hidden: usize,
    /// Per-component projection size of the state representation.
    pub state_dim: usize,
    /// Hidden layer size of the classifier heads.
    pub ffn_hidden: usize,
    pub attention_dim: usize,
    pub bilstm_layers: usize,
    pub stack_layers: usize,
    /// Dimension of precomputed per-token context vectors (0 = unused).
    pub context_dim: usize,
    pub use_char: bool,
    pub use_pos: bool,
    pub use_dep: bool,
    pub use_pretrained: bool,
    pub high_order: bool,
    pub order: ParsingOrder,
    /// Input-dropout probability applied during training only.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 100,
            pos_dim: 32,
            char_dim: 30,
            char_filters: 30,
            action_dim: 32,
            hidden: 200,
            state_dim: 150,
            ffn_hidden: 200,
            attention_dim: 150,
            bilstm_layers: 2,
            stack_layers: 2,
            context_dim: 0,
            use_char: true,
            use_pos: true,
            use_dep: true,
            use_pretrained: false,
            high_order: true,
            order: ParsingOrder::CloseFirst,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    /// Token feature size before the dependency slice.
    pub fn base_dim(&self) -> usize {
        let mut d = self.word_dim;
        if self.use_pretrained {
            d += self.word_dim;
        }
        if self.use_char {
            d += self.char_filters;
        }
        if self.use_pos {
            d += self.pos_dim;
        }
        d + self.context_dim
    }

    /// Full token feature size x_i.
    pub fn input_dim(&self) -> usize {
        self.base_dim() + if self.use_dep { self.hidden } else { 0 }
    }

    /// Concatenated state representation size (seven projected parts).
    pub fn state_repr_dim(&self) -> usize {
        7 * self.state_dim
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("word_dim", self.word_dim),
            ("hidden", self.hidden),
            ("state_dim", self.state_dim),
            ("ffn_hidden", self.ffn_hidden),
            ("attention_dim", self.attention_dim),
            ("action_dim", self.action_dim),
            ("bilstm_layers", self.bilstm_layers),
            ("stack_layers", self.stack_layers),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

struct HighOrderStream {
    /// [r_a; r_p] → distribution over this stream's classes.
    rel: Ffn,
    w1: ParamId,
    w2: ParamId,
    v: ParamId,
}

struct HighOrder {
    action: HighOrderStream,
    role: HighOrderStream,
}

/// Per-sentence precomputation: encoder states and the buffer encoder's
/// per-position states.
pub struct Encoding {
    pub h: Vec<Var>,
    pub buf: Vec<Var>,
}

/// Neural mirror of a transition state. Cloning is cheap; beam
/// hypotheses fork it freely while sharing one tape.
#[derive(Clone, Default)]
pub struct NeuralState {
    sigma_l: StackState,
    sigma_r: StackState,
    alpha_l: StackState,
    alpha_r: StackState,
    lambda: Option<Var>,
    delta: StackState,
    hist_action: Vec<Var>,
    hist_role: Vec<Var>,
}

/// Scores for one transition decision.
pub struct StepScore {
    pub action_logits: Var,
    pub legal: [bool; NUM_ACTION_KINDS],
    /// Present iff an arc is currently possible (active predicate and a
    /// scheduled context token).
    pub role_logits: Option<Var>,
    pair_action: Option<Var>,
    pair_role: Option<Var>,
}

pub struct SrlModel {
    pub config: ModelConfig,
    pub vocabs: Vocabs,
    pub params: ParamStore,

    word_emb: Embedding,
    pretrained: Option<Embedding>,
    char_cnn: Option<CharCnn>,
    pos_emb: Option<Embedding>,
    tree: Option<TreeLstm>,
    encoder: BiLstm,
    buf_encoder: BiLstm,
    lambda_encoder: BiLstm,
    lambda_empty: ParamId,
    beta_empty: ParamId,
    stack_sigma_l: StackLstm,
    stack_sigma_r: StackLstm,
    stack_alpha_l: StackLstm,
    stack_alpha_r: StackLstm,
    action_emb: Embedding,
    stack_delta: StackLstm,
    proj: [Linear; 7],
    action_head: Ffn,
    role_head: Ffn,
    high_order: Option<HighOrder>,
}

impl SrlModel {
    /// Builds a fresh model. When `pretrained` is given, the frozen table
    /// and the trainable word table are both sized to its dimension and
    /// filled from it for in-vocabulary words; all other parameters get
    /// seeded random or zero initialization.
    pub fn new(
        mut config: ModelConfig,
        vocabs: Vocabs,
        pretrained: Option<&Pretrained>,
        seed: u64,
    ) -> Result<SrlModel> {
        if let Some(p) = pretrained {
            config.use_pretrained = true;
            config.word_dim = p.dim;
        }
        config.validate()?;
        let num_roles = vocabs.roles.known();
        if num_roles == 0 {
            return Err(Error::Config(
                "the role vocabulary is empty; the corpus has no argument arcs".into(),
            ));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();

        let word_emb = Embedding::new(&mut store, &mut rng, "word.emb", vocabs.words.len(), config.word_dim);
        if let Some(p) = pretrained {
            // In-vocabulary rows start from the pretrained vectors; the
            // rest keep their random initialization.
            for (w, vec) in &p.vectors {
                if vocabs.words.contains(w) {
                    let id = vocabs.words.id(w);
                    let t = store.tensor_mut(word_emb.table);
                    for (j, &x) in vec.iter().enumerate() {
                        t.set(id, j, x);
                    }
                }
            }
        }
        let pretrained_emb = if config.use_pretrained {
            let table = store.add(
                "pretrained.table",
                vocabs.words.len(),
                config.word_dim,
                Init::Zeros,
                &mut rng,
                false,
            );
            if let Some(p) = pretrained {
                for (w, vec) in &p.vectors {
                    if vocabs.words.contains(w) {
                        let id = vocabs.words.id(w);
                        let t = store.tensor_mut(table);
                        for (j, &x) in vec.iter().enumerate() {
                            t.set(id, j, x);
                        }
                    }
                }
            }
            Some(Embedding::from_param(&store, table))
        } else {
            None
        };
        let char_cnn = config.use_char.then(|| {
            CharCnn::new(
                &mut store,
                &mut rng,
                "char",
                vocabs.chars.len(),
                config.char_dim,
                config.char_filters,
                crate::data::PAD,
            )
        });
        let pos_emb = config
            .use_pos
            .then(|| Embedding::new(&mut store, &mut rng, "pos.emb", vocabs.pos.len(), config.pos_dim));
        let tree = config
            .use_dep
            .then(|| TreeLstm::new(&mut store, &mut rng, "tree", config.base_dim(), config.hidden));

        let encoder = BiLstm::new(
            &mut store,
            &mut rng,
            "encoder",
            config.input_dim(),
            config.hidden,
            config.bilstm_layers,
        );
        let h_dim = encoder.out_dim();
        let buf_encoder = BiLstm::new(&mut store, &mut rng, "buffer", h_dim, config.hidden, 1);
        let lambda_encoder = BiLstm::new(&mut store, &mut rng, "lambda", h_dim, config.hidden, 1);
        let lambda_empty =
            store.add("lambda.empty", 2 * config.hidden, 1, Init::Xavier, &mut rng, true);
        let beta_empty = store.add("beta.empty", 2 * config.hidden, 1, Init::Xavier, &mut rng, true);

        let stack = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str| {
            StackLstm::new(store, rng, name, h_dim, config.hidden, config.stack_layers)
        };
        let stack_sigma_l = stack(&mut store, &mut rng, "sigma_l");
        let stack_sigma_r = stack(&mut store, &mut rng, "sigma_r");
        let stack_alpha_l = stack(&mut store, &mut rng, "alpha_l");
        let stack_alpha_r = stack(&mut store, &mut rng, "alpha_r");
        let action_emb =
            Embedding::new(&mut store, &mut rng, "action.emb", vocabs.actions.len(), config.action_dim);
        let stack_delta = StackLstm::new(
            &mut store,
            &mut rng,
            "delta",
            config.action_dim,
            config.hidden,
            config.stack_layers,
        );

        let s = config.state_dim;
        let proj = [
            Linear::new(&mut store, &mut rng, "proj.sigma_l", config.hidden, s),
            Linear::new(&mut store, &mut rng, "proj.sigma_r", config.hidden, s),
            Linear::new(&mut store, &mut rng, "proj.alpha_l", config.hidden, s),
            Linear::new(&mut store, &mut rng, "proj.alpha_r", config.hidden, s),
            Linear::new(&mut store, &mut rng, "proj.lambda", 2 * config.hidden, s),
            Linear::new(&mut store, &mut rng, "proj.beta", 2 * config.hidden, s),
            Linear::new(&mut store, &mut rng, "proj.delta", config.hidden, s),
        ];

        let g_dim = config.state_repr_dim();
        let (action_in, role_in) = if config.high_order {
            (g_dim + NUM_ACTION_KINDS, g_dim + num_roles)
        } else {
            (g_dim, g_dim)
        };
        let action_head = Ffn::new(
            &mut store,
            &mut rng,
            "head.action",
            action_in,
            config.ffn_hidden,
            NUM_ACTION_KINDS,
        );
        let role_head =
            Ffn::new(&mut store, &mut rng, "head.role", role_in, config.ffn_hidden, num_roles);

        let high_order = if config.high_order {
            let mut stream = |tag: &str, classes: usize| -> HighOrderStream {
                let rel = Ffn::new(
                    &mut store,
                    &mut rng,
                    &format!("ho.{tag}.rel"),
                    2 * h_dim,
                    config.ffn_hidden,
                    classes,
                );
                let w1 = store.add(
                    &format!("ho.{tag}.att.w1"),
                    config.attention_dim,
                    g_dim,
                    Init::Xavier,
                    &mut rng,
                    true,
                );
                let w2 = store.add(
                    &format!("ho.{tag}.att.w2"),
                    config.attention_dim,
                    classes,
                    Init::Xavier,
                    &mut rng,
                    true,
                );
                let v = store.add(
                    &format!("ho.{tag}.att.v"),
                    1,
                    config.attention_dim,
                    Init::Xavier,
                    &mut rng,
                    true,
                );
                HighOrderStream { rel, w1, w2, v }
            };
            Some(HighOrder {
                action: stream("action", NUM_ACTION_KINDS),
                role: stream("role", num_roles),
            })
        } else {
            None
        };

        Ok(SrlModel {
            config,
            vocabs,
            params: store,
            word_emb,
            pretrained: pretrained_emb,
            char_cnn,
            pos_emb,
            tree,
            encoder,
            buf_encoder,
            lambda_encoder,
            lambda_empty,
            beta_empty,
            stack_sigma_l,
            stack_sigma_r,
            stack_alpha_l,
            stack_alpha_r,
            action_emb,
            stack_delta,
            proj,
            action_head,
            role_head,
            high_order,
        })
    }

    pub fn num_roles(&self) -> usize {
        self.vocabs.roles.known()
    }

    pub fn tape_params(&self) -> TapeParams<'_> {
        TapeParams::new(&self.params)
    }

    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        checkpoint::save(dir, &self.config, &self.params, &self.vocabs)
    }

    /// Rebuilds the architecture from a checkpoint and fills every
    /// parameter from the stored values.
    pub fn load(dir: &std::path::Path) -> Result<SrlModel> {
        let (config, stored, vocabs) = checkpoint::load::<ModelConfig>(dir)?;
        let mut model = SrlModel::new(config, vocabs, None, 0)?;
        if stored.len() != model.params.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, the configured model has {}",
                stored.len(),
                model.params.len()
            )));
        }
        for id in stored.ids() {
            let name = stored.name(id);
            let Some(mine) = model.params.lookup(name) else {
                return Err(Error::Config(format!("checkpoint tensor {name:?} is not part of the model")));
            };
            let src = stored.tensor(id);
            let dst = model.params.tensor_mut(mine);
            if (src.rows, src.cols) != (dst.rows, dst.cols) {
                return Err(Error::Shape {
                    op: "checkpoint",
                    detail: format!(
                        "tensor {name:?} is {}x{}, the model expects {}x{}",
                        src.rows, src.cols, dst.rows, dst.cols
                    ),
                });
            }
            dst.data.clone_from(&src.data);
        }
        Ok(model)
    }

    fn char_ids(&self, form: &str) -> Vec<usize> {
        form.chars().map(|c| self.vocabs.chars.id(&c.to_string())).collect()
    }

    /// Runs the token feature extractors and both sentence encoders.
    /// `context` supplies precomputed per-token vectors when the config
    /// declares them; `dropout_rng` enables input dropout (training).
    pub fn encode(
        &self,
        tape: &mut Tape,
        tp: &mut TapeParams,
        sent: &Sentence,
        context: Option<&[Vec<f64>]>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Encoding> {
        let n = sent.len();
        if self.config.context_dim > 0 {
            let rows = context.ok_or_else(|| {
                Error::Input(format!("sentence {}: context vectors required but missing", sent.id))
            })?;
            if rows.len() != n || rows.iter().any(|r| r.len() != self.config.context_dim) {
                return Err(Error::Shape {
                    op: "encode",
                    detail: format!(
                        "sentence {}: context vectors do not match {} tokens of dim {}",
                        sent.id, n, self.config.context_dim
                    ),
                });
            }
        }

        let mut base = Vec::with_capacity(n);
        for (i, tok) in sent.tokens.iter().enumerate() {
            let wid = self.vocabs.words.id(&tok.form);
            let mut parts = vec![self.word_emb.lookup(tape, tp, wid)];
            if let Some(pre) = &self.pretrained {
                parts.push(pre.lookup(tape, tp, wid));
            }
            if let Some(cnn) = &self.char_cnn {
                let ids = self.char_ids(&tok.form);
                parts.push(cnn.forward(tape, tp, &ids));
            }
            if let Some(pos) = &self.pos_emb {
                parts.push(pos.lookup(tape, tp, self.vocabs.pos.id(&tok.pos)));
            }
            if self.config.context_dim > 0 {
                let row = &context.unwrap()[i];
                parts.push(tape.leaf(Tensor::column(row.clone())));
            }
            base.push(tape.concat_rows(&parts));
        }

        let mut xs = if let Some(tree) = &self.tree {
            let heads: Vec<Option<usize>> = sent.tokens.iter().map(|t| t.head).collect();
            let syn = tree.run(tape, tp, &heads, &base);
            base.iter()
                .zip(syn)
                .map(|(&b, s)| tape.concat_rows(&[b, s]))
                .collect()
        } else {
            base
        };

        if self.config.dropout > 0.0 {
            if let Some(rng) = dropout_rng.as_deref_mut() {
                let keep = 1.0 - self.config.dropout;
                for x in &mut xs {
                    let dim = tape.value(*x).rows;
                    let mask: Vec<f64> = (0..dim)
                        .map(|_| {
                            if rand::Rng::gen_range(rng, 0.0..1.0) < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let m = tape.leaf(Tensor::column(mask));
                    *x = tape.mul(*x, m);
                }
            }
        }

        let h = self.encoder.run(tape, tp, &xs);
        let buf = self.buf_encoder.run(tape, tp, &h);
        Ok(Encoding { h, buf })
    }

    /// Mirrors [`State::initial`]: pre-loads the right stack with every
    /// token after the first, bottom (last token) to top (token 1).
    pub fn initial_neural_state(
        &self,
        tape: &mut Tape,
        tp: &mut TapeParams,
        enc: &Encoding,
    ) -> NeuralState {
        let mut sigma_r = self.stack_sigma_r.empty_state();
        for i in (1..enc.h.len()).rev() {
            sigma_r = self.stack_sigma_r.push(tape, tp, &sigma_r, enc.h[i]);
        }
        NeuralState {
            sigma_l: self.stack_sigma_l.empty_state(),
            sigma_r,
            alpha_l: self.stack_alpha_l.empty_state(),
            alpha_r: self.stack_alpha_r.empty_state(),
            lambda: None,
            delta: self.stack_delta.empty_state(),
            hist_action: Vec::new(),
            hist_role: Vec::new(),
        }
    }

    /// The seven-part state representation: each component encoder's
    /// output (or its learned empty vector) through a tanh projection.
    fn state_repr(
        &self,
        tape: &mut Tape,
        tp: &mut TapeParams,
        enc: &Encoding,
        state: &State,
        ns: &NeuralState,
    ) -> Var {
        let sl = self.stack_sigma_l.output(tape, tp, &ns.sigma_l);
        let sr = self.stack_sigma_r.output(tape, tp, &ns.sigma_r);
        let al = self.stack_alpha_l.output(tape, tp, &ns.alpha_l);
        let ar = self.stack_alpha_r.output(tape, tp, &ns.alpha_r);
        let lam = ns.lambda.unwrap_or_else(|| tp.get(tape, self.lambda_empty));
        let beta = match state.candidate() {
            Some(c) => enc.buf[c],
            None => tp.get(tape, self.beta_empty),
        };
        let delta = self.stack_delta.output(tape, tp, &ns.delta);
        let raw = [sl, sr, al, ar, lam, beta, delta];
        let parts: Vec<Var> = raw
            .iter()
            .zip(&self.proj)
            .map(|(&r, p)| {
                let lin = p.forward(tape, tp, r);
                tape.tanh(lin)
            })
            .collect();
        tape.concat_rows(&parts)
    }

    /// The current predicate/candidate-argument pair, if an arc decision
    /// is possible: (h of the scheduled context token, h of λ_p).
    fn current_pair(&self, enc: &Encoding, state: &State) -> Option<(Var, Var)> {
        let p = state.lambda_p?;
        let side = state.schedule(self.config.order)?;
        let a = match side {
            Side::Left => state.sigma_l_top().expect("left schedule implies a left top"),
            Side::Right => state.sigma_r_top().expect("right schedule implies a right top"),
        };
        Some((enc.h[a], enc.h[p]))
    }

    /// Attention-pooled summary of the distribution features: softmax
    /// over u_k = v·tanh(W1 g + W2 I_k), then o = Σ α_k I_k. Returns the
    /// pooled vector and the attention weights.
    fn attend(
        &self,
        tape: &mut Tape,
        tp: &mut TapeParams,
        stream: &HighOrderStream,
        g: Var,
        items: &[Var],
    ) -> (Var, Var) {
        let w1 = tp.get(tape, stream.w1);
        let w2 = tp.get(tape, stream.w2);
        let v = tp.get(tape, stream.v);
        let g_proj = tape.matmul(w1, g);
        let scores: Vec<Var> = items
            .iter()
            .map(|&item| {
                let i_proj = tape.matmul(w2, item);
                let sum = tape.add(g_proj, i_proj);
                let t = tape.tanh(sum);
                tape.matmul(v, t)
            })
            .collect();
        let u = tape.concat_rows(&scores);
        let alpha = tape.softmax(u);
        let weighted: Vec<Var> = items
            .iter()
            .enumerate()
            .map(|(k, &item)| {
                let ak = tape.slice_rows(alpha, k, 1);
                tape.scale_by(item, ak)
            })
            .collect();
        (tape.add_n(&weighted), alpha)
    }

    /// Scores one decision. The caller advances both the symbolic state
    /// (via [`State::apply`]) and the neural state (via
    /// [`SrlModel::advance`]) after choosing an action.
    pub fn score_step(
        &self,
        tape: &mut Tape,
        tp: &mut TapeParams,
        enc: &Encoding,
        state: &State,
        ns: &NeuralState,
    ) -> Result<StepScore> {
        let legal_kinds = state.legal_actions(self.config.order)?;
        let mut legal = [false; NUM_ACTION_KINDS];
        for k in &legal_kinds {
            legal[k.index()] = true;
        }
        let g = self.state_repr(tape, tp, enc, state, ns);
        let pair = self.current_pair(enc, state);

        let (action_in, role_in, pair_action, pair_role) = match &self.high_order {
            None => (g, g, None, None),
            Some(ho) => {
                let pair_feats = pair.map(|(ra, rp)| {
                    let cat = tape.concat_rows(&[ra, rp]);
                    let ia_logits = ho.action.rel.forward(tape, tp, cat);
                    let ir_logits = ho.role.rel.forward(tape, tp, cat);
                    (tape.softmax(ia_logits), tape.softmax(ir_logits))
                });
                let mut items_a = ns.hist_action.clone();
                let mut items_r = ns.hist_role.clone();
                if let Some((ia, ir)) = pair_feats {
                    items_a.push(ia);
                    items_r.push(ir);
                }
                let o_a = if items_a.is_empty() {
                    tape.leaf(Tensor::zeros(NUM_ACTION_KINDS, 1))
                } else {
                    self.attend(tape, tp, &ho.action, g, &items_a).0
                };
                let o_r = if items_r.is_empty() {
                    tape.leaf(Tensor::zeros(self.num_roles(), 1))
                } else {
                    self.attend(tape, tp, &ho.role, g, &items_r).0
                };
                let ga = tape.concat_rows(&[g, o_a]);
                let gr = tape.concat_rows(&[g, o_r]);
                (ga, gr, pair_feats.map(|f| f.0), pair_feats.map(|f| f.1))
            }
        };

        let action_logits = self.action_head.forward(tape, tp, action_in);
        let role_logits = pair.map(|_| self.role_head.forward(tape, tp, role_in));
        Ok(StepScore { action_logits, legal, role_logits, pair_action, pair_role })
    }

    /// Log-probabilities over action kinds with illegal kinds at −∞;
    /// masking happens before normalization so illegal mass is exactly 0.
    pub fn action_log_probs(&self, tape: &mut Tape, score: &StepScore) -> [f64; NUM_ACTION_KINDS] {
        let probs = tape.softmax_masked(score.action_logits, &score.legal);
        let p = tape.value(probs);
        let mut out = [f64::NEG_INFINITY; NUM_ACTION_KINDS];
        for k in 0..NUM_ACTION_KINDS {
            if score.legal[k] {
                out[k] = p.data[k].ln();
            }
        }
        out
    }

    /// Log-probabilities over the known role labels, indexed like
    /// `Vocab::known_symbols`.
    pub fn role_log_probs(&self, tape: &mut Tape, score: &StepScore) -> Option<Vec<f64>> {
        let logits = score.role_logits?;
        let probs = tape.softmax(logits);
        Some(tape.value(probs).data.iter().map(|p| p.ln()).collect())
    }

    /// Advances the neural state to mirror `before.apply(step)`. The
    /// score from which `step` was chosen supplies the pair features
    /// appended to the arc history.
    pub fn advance(
        &self,
        tape: &mut Tape,
        tp: &mut TapeParams,
        enc: &Encoding,
        before: &State,
        ns: &NeuralState,
        step: &ActionStep,
        score: &StepScore,
    ) -> NeuralState {
        let mut next = ns.clone();
        match step.kind {
            ActionKind::NoPrd => {
                let c = before.candidate().expect("NO-PRD requires a candidate");
                next.sigma_l = self.stack_sigma_l.push(tape, tp, &ns.sigma_l, enc.h[c]);
                next.sigma_r = self.stack_sigma_r.pop(&ns.sigma_r);
            }
            ActionKind::PrdGen => {
                let c = before.candidate().expect("PRD-GEN requires a candidate");
                let reprs = self.lambda_encoder.run(tape, tp, &[enc.h[c]]);
                next.lambda = Some(reprs[0]);
            }
            ActionKind::LeftArc => {
                let a = before.sigma_l_top().expect("LEFT-ARC requires a left top");
                next.sigma_l = self.stack_sigma_l.pop(&ns.sigma_l);
                next.alpha_l = self.stack_alpha_l.push(tape, tp, &ns.alpha_l, enc.h[a]);
                self.record_arc(&mut next, score);
            }
            ActionKind::RightArc => {
                let a = before.sigma_r_top().expect("RIGHT-ARC requires a right top");
                next.sigma_r = self.stack_sigma_r.pop(&ns.sigma_r);
                next.alpha_r = self.stack_alpha_r.push(tape, tp, &ns.alpha_r, enc.h[a]);
                self.record_arc(&mut next, score);
            }
            ActionKind::NoArc => match before.schedule(self.config.order) {
                Some(Side::Left) => {
                    let a = before.sigma_l_top().expect("left schedule implies a left top");
                    next.sigma_l = self.stack_sigma_l.pop(&ns.sigma_l);
                    next.alpha_l = self.stack_alpha_l.push(tape, tp, &ns.alpha_l, enc.h[a]);
                }
                Some(Side::Right) => {
                    let a = before.sigma_r_top().expect("right schedule implies a right top");
                    next.sigma_r = self.stack_sigma_r.pop(&ns.sigma_r);
                    next.alpha_r = self.stack_alpha_r.push(tape, tp, &ns.alpha_r, enc.h[a]);
                }
                None => unreachable!("NO-ARC on exhausted stacks is rejected by apply"),
            },
            ActionKind::Shift => {
                // Replay the restores in the same order as the symbolic
                // stacks: α tops return first.
                for &t in before.alpha_l.iter().rev() {
                    next.sigma_l = self.stack_sigma_l.push(tape, tp, &next.sigma_l, enc.h[t]);
                }
                for &t in before.alpha_r.iter().rev() {
                    next.sigma_r = self.stack_sigma_r.push(tape, tp, &next.sigma_r, enc.h[t]);
                }
                next.alpha_l = self.stack_alpha_l.empty_state();
                next.alpha_r = self.stack_alpha_r.empty_state();
                next.lambda = None;
                let c = before.candidate().expect("SHIFT requires a candidate");
                next.sigma_l = self.stack_sigma_l.push(tape, tp, &next.sigma_l, enc.h[c]);
                next.sigma_r = self.stack_sigma_r.pop(&next.sigma_r);
            }
        }
        let emb_id = self.vocabs.actions.id(step.kind.name());
        let emb = self.action_emb.lookup(tape, tp, emb_id);
        next.delta = self.stack_delta.push(tape, tp, &ns.delta, emb);
        next
    }

    fn record_arc(&self, ns: &mut NeuralState, score: &StepScore) {
        if self.high_order.is_some() {
            ns.hist_action
                .push(score.pair_action.expect("arc steps always have pair features"));
            ns.hist_role.push(score.pair_role.expect("arc steps always have pair features"));
        }
    }

    /// Copies every first-order parameter from `vanilla` (a model built
    /// with `high_order: false` and otherwise identical configuration)
    /// and zeroes the head columns that read the high-order slice. After
    /// this, the two models produce identical distributions: the zeroed
    /// columns ignore the pooled history features entirely.
    pub fn align_with_first_order(&mut self, vanilla: &SrlModel) -> Result<()> {
        if self.high_order.is_none() || vanilla.high_order.is_some() {
            return Err(Error::Config(
                "alignment requires a high-order target and a first-order source".into(),
            ));
        }
        let mut check = self.config.clone();
        check.high_order = vanilla.config.high_order;
        if check != vanilla.config {
            return Err(Error::Config(
                "alignment requires identical configurations apart from high_order".into(),
            ));
        }
        let g_dim = self.config.state_repr_dim();
        for id in vanilla.params.ids() {
            let name = vanilla.params.name(id).to_string();
            let src = vanilla.params.tensor(id);
            let mine = self
                .params
                .lookup(&name)
                .ok_or_else(|| Error::Config(format!("source tensor {name:?} missing here")))?;
            let dst = self.params.tensor_mut(mine);
            if (dst.rows, dst.cols) == (src.rows, src.cols) {
                dst.data.clone_from(&src.data);
            } else if dst.rows == src.rows && src.cols == g_dim && dst.cols > g_dim {
                // Head hidden layer: first-order block on the left, the
                // high-order columns zeroed.
                for i in 0..dst.rows {
                    for j in 0..dst.cols {
                        let v = if j < g_dim { src.get(i, j) } else { 0.0 };
                        dst.set(i, j, v);
                    }
                }
            } else {
                return Err(Error::Shape {
                    op: "align",
                    detail: format!(
                        "tensor {name:?}: cannot map {}x{} onto {}x{}",
                        src.rows, src.cols, dst.rows, dst.cols
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Small dimensions that keep unit tests fast while exercising every
/// component (including two-layer encoders and stacks).
#[cfg(test)]
pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        word_dim: 6,
        pos_dim: 3,
        char_dim: 4,
        char_filters: 5,
        action_dim: 4,
        hidden: 7,
        state_dim: 8,
        ffn_hidden: 9,
        attention_dim: 5,
        bilstm_layers: 2,
        stack_layers: 2,
        context_dim: 0,
        use_char: true,
        use_pos: true,
        use_dep: true,
        use_pretrained: false,
        high_order: true,
        order: ParsingOrder::CloseFirst,
        dropout: 0.0,
    }
}
