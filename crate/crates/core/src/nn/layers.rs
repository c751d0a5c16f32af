//! Layers used by the scorer: linear / FFN heads, embeddings, char-CNN,
//! LSTM cell, BiLSTM, Stack-LSTM and child-sum TreeLSTM.
//!
//! Every layer registers its parameters once at construction (names
//! prefixed by the layer name) and builds graph nodes in `forward`-style
//! methods taking the current tape.

use rand_chacha::ChaCha8Rng;

use crate::nn::params::{Init, ParamId, ParamStore, TapeParams};
use crate::nn::tape::{Tape, Tensor, Var};

/// w·x + b with w of shape (out, in).
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Linear {
        let w = store.add(&format!("{name}.w"), out_dim, in_dim, Init::Xavier, rng, true);
        let b = store.add(&format!("{name}.b"), out_dim, 1, Init::Zeros, rng, true);
        Linear { w, b, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, tp: &mut TapeParams, x: Var) -> Var {
        let w = tp.get(tape, self.w);
        let b = tp.get(tape, self.b);
        let wx = tape.matmul(w, x);
        tape.add(wx, b)
    }
}

/// Two-layer feed-forward network with a tanh hidden layer and a linear
/// output layer.
pub struct Ffn {
    pub hidden: Linear,
    pub out: Linear,
}

impl Ffn {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
    ) -> Ffn {
        Ffn {
            hidden: Linear::new(store, rng, &format!("{name}.hidden"), in_dim, hidden_dim),
            out: Linear::new(store, rng, &format!("{name}.out"), hidden_dim, out_dim),
        }
    }

    pub fn forward(&self, tape: &mut Tape, tp: &mut TapeParams, x: Var) -> Var {
        let h = self.hidden.forward(tape, tp, x);
        let h = tape.tanh(h);
        self.out.forward(tape, tp, h)
    }
}

/// Lookup table of shape (vocab, dim); rows come out as (dim, 1)
/// columns. Out-of-range ids fall back to row 0 (UNK) rather than error.
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        vocab: usize,
        dim: usize,
    ) -> Embedding {
        let table = store.add(name, vocab, dim, Init::Xavier, rng, true);
        Embedding { table, vocab, dim }
    }

    /// Wraps an already-registered table (frozen pretrained vectors).
    pub fn from_param(store: &ParamStore, table: ParamId) -> Embedding {
        let t = store.tensor(table);
        Embedding { table, vocab: t.rows, dim: t.cols }
    }

    pub fn lookup(&self, tape: &mut Tape, tp: &mut TapeParams, id: usize) -> Var {
        let table = tp.get(tape, self.table);
        let row = if id < self.vocab { id } else { 0 };
        tape.lookup_row(table, row)
    }
}

/// Single LSTM step; gate layout along rows is [input, forget, cell,
/// output], so the forget-bias block sits at rows h..2h.
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> LstmCell {
        let wx = store.add(&format!("{name}.wx"), 4 * hidden, in_dim, Init::Xavier, rng, true);
        let wh = store.add(&format!("{name}.wh"), 4 * hidden, hidden, Init::Xavier, rng, true);
        let b = store.add(&format!("{name}.b"), 4 * hidden, 1, Init::LstmBias { hidden }, rng, true);
        LstmCell { wx, wh, b, hidden }
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        tp: &mut TapeParams,
        x: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> (Var, Var) {
        let wx = tp.get(tape, self.wx);
        let wh = tp.get(tape, self.wh);
        let b = tp.get(tape, self.b);
        let hx = tape.matmul(wx, x);
        let hh = tape.matmul(wh, h_prev);
        let pre = tape.add_n(&[hx, hh, b]);
        let h = self.hidden;
        let i_pre = tape.slice_rows(pre, 0, h);
        let f_pre = tape.slice_rows(pre, h, h);
        let g_pre = tape.slice_rows(pre, 2 * h, h);
        let o_pre = tape.slice_rows(pre, 3 * h, h);
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let g = tape.tanh(g_pre);
        let o = tape.sigmoid(o_pre);
        let fc = tape.mul(f, c_prev);
        let ig = tape.mul(i, g);
        let c = tape.add(fc, ig);
        let tc = tape.tanh(c);
        let h_out = tape.mul(o, tc);
        (h_out, c)
    }
}

/// Stacked bidirectional LSTM; each position's output is the
/// concatenation of the top layer's forward and backward hidden states,
/// of dimension 2 × hidden.
pub struct BiLstm {
    layers: Vec<(LstmCell, LstmCell)>,
    pub hidden: usize,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
        layers: usize,
    ) -> BiLstm {
        assert!(layers >= 1, "BiLstm: at least one layer");
        let mut cells = Vec::with_capacity(layers);
        for l in 0..layers {
            let dim = if l == 0 { in_dim } else { 2 * hidden };
            cells.push((
                LstmCell::new(store, rng, &format!("{name}.l{l}.fw"), dim, hidden),
                LstmCell::new(store, rng, &format!("{name}.l{l}.bw"), dim, hidden),
            ));
        }
        BiLstm { layers: cells, hidden }
    }

    pub fn out_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn run(&self, tape: &mut Tape, tp: &mut TapeParams, xs: &[Var]) -> Vec<Var> {
        let n = xs.len();
        let mut inputs: Vec<Var> = xs.to_vec();
        for (fw, bw) in &self.layers {
            let mut fwd = Vec::with_capacity(n);
            let mut h = tape.leaf(Tensor::zeros(self.hidden, 1));
            let mut c = tape.leaf(Tensor::zeros(self.hidden, 1));
            for &x in &inputs {
                let (nh, nc) = fw.step(tape, tp, x, h, c);
                fwd.push(nh);
                h = nh;
                c = nc;
            }
            let mut bwd = vec![None; n];
            let mut h = tape.leaf(Tensor::zeros(self.hidden, 1));
            let mut c = tape.leaf(Tensor::zeros(self.hidden, 1));
            for i in (0..n).rev() {
                let (nh, nc) = bw.step(tape, tp, inputs[i], h, c);
                bwd[i] = Some(nh);
                h = nh;
                c = nc;
            }
            inputs = (0..n)
                .map(|i| tape.concat_rows(&[fwd[i], bwd[i].unwrap()]))
                .collect();
        }
        inputs
    }
}

/// Immutable snapshot of a Stack-LSTM: one frame of per-layer (h, c)
/// pairs per pushed element. Cloning is cheap (node handles only), so
/// beam hypotheses can fork freely.
#[derive(Debug, Clone, Default)]
pub struct StackState {
    frames: Vec<Vec<(Var, Var)>>,
}

impl StackState {
    pub fn depth(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Recurrent stack encoder: push advances each layer one step from the
/// current top frame; pop truncates, restoring the exact pre-push state.
pub struct StackLstm {
    cells: Vec<LstmCell>,
    empty: ParamId,
    pub hidden: usize,
}

impl StackLstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
        layers: usize,
    ) -> StackLstm {
        assert!(layers >= 1, "StackLstm: at least one layer");
        let mut cells = Vec::with_capacity(layers);
        for l in 0..layers {
            let dim = if l == 0 { in_dim } else { hidden };
            cells.push(LstmCell::new(store, rng, &format!("{name}.l{l}"), dim, hidden));
        }
        let empty = store.add(&format!("{name}.empty"), hidden, 1, Init::Xavier, rng, true);
        StackLstm { cells, empty, hidden }
    }

    pub fn empty_state(&self) -> StackState {
        StackState::default()
    }

    pub fn push(&self, tape: &mut Tape, tp: &mut TapeParams, st: &StackState, x: Var) -> StackState {
        let mut frame = Vec::with_capacity(self.cells.len());
        let mut input = x;
        for (l, cell) in self.cells.iter().enumerate() {
            let (h_prev, c_prev) = match st.frames.last() {
                Some(top) => top[l],
                None => {
                    let h = tape.leaf(Tensor::zeros(self.hidden, 1));
                    let c = tape.leaf(Tensor::zeros(self.hidden, 1));
                    (h, c)
                }
            };
            let (h, c) = cell.step(tape, tp, input, h_prev, c_prev);
            frame.push((h, c));
            input = h;
        }
        let mut frames = st.frames.clone();
        frames.push(frame);
        StackState { frames }
    }

    /// No-op on an empty stack, mirroring the transition system's
    /// tolerant right-stack pop.
    pub fn pop(&self, st: &StackState) -> StackState {
        let mut frames = st.frames.clone();
        frames.pop();
        StackState { frames }
    }

    /// Top frame's final-layer hidden state, or the learned empty vector.
    pub fn output(&self, tape: &mut Tape, tp: &mut TapeParams, st: &StackState) -> Var {
        match st.frames.last() {
            Some(top) => top.last().unwrap().0,
            None => tp.get(tape, self.empty),
        }
    }
}

/// Character CNN: width-3 windows over padded character embeddings, tanh
/// convolution, max-pool over positions. Output dim = filter count.
pub struct CharCnn {
    pub emb: Embedding,
    conv: Linear,
    pad: usize,
    pub filters: usize,
}

impl CharCnn {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        vocab: usize,
        char_dim: usize,
        filters: usize,
        pad: usize,
    ) -> CharCnn {
        let emb = Embedding::new(store, rng, &format!("{name}.emb"), vocab, char_dim);
        let conv = Linear::new(store, rng, &format!("{name}.conv"), 3 * char_dim, filters);
        CharCnn { emb, conv, pad, filters }
    }

    pub fn forward(&self, tape: &mut Tape, tp: &mut TapeParams, ids: &[usize]) -> Var {
        // One window per character thanks to single-pad on both ends.
        let mut padded = Vec::with_capacity(ids.len().max(1) + 2);
        padded.push(self.pad);
        if ids.is_empty() {
            padded.push(self.pad);
        } else {
            padded.extend_from_slice(ids);
        }
        padded.push(self.pad);
        let embedded: Vec<Var> = padded
            .iter()
            .map(|&id| self.emb.lookup(tape, tp, id))
            .collect();
        let mut activations = Vec::with_capacity(embedded.len() - 2);
        for w in embedded.windows(3) {
            let window = tape.concat_rows(w);
            let conv = self.conv.forward(tape, tp, window);
            activations.push(tape.tanh(conv));
        }
        tape.max_pool(&activations)
    }
}

/// Child-sum TreeLSTM over a dependency tree. Gate layout along `wx`
/// rows is [input, forget, output, update]; the forget gate is computed
/// per child against `uf`.
pub struct TreeLstm {
    wx: ParamId,
    uh: ParamId,
    uf: ParamId,
    b: ParamId,
    pub hidden: usize,
}

impl TreeLstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> TreeLstm {
        let wx = store.add(&format!("{name}.wx"), 4 * hidden, in_dim, Init::Xavier, rng, true);
        let uh = store.add(&format!("{name}.uh"), 3 * hidden, hidden, Init::Xavier, rng, true);
        let uf = store.add(&format!("{name}.uf"), hidden, hidden, Init::Xavier, rng, true);
        let b = store.add(&format!("{name}.b"), 4 * hidden, 1, Init::LstmBias { hidden }, rng, true);
        TreeLstm { wx, uh, uf, b, hidden }
    }

    /// Bottom-up pass; `heads[i]` is the parent of token i, None for the
    /// root. Returns one hidden state per token.
    pub fn run(
        &self,
        tape: &mut Tape,
        tp: &mut TapeParams,
        heads: &[Option<usize>],
        xs: &[Var],
    ) -> Vec<Var> {
        let n = xs.len();
        assert_eq!(heads.len(), n, "TreeLstm: heads/inputs length mismatch");
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut roots = Vec::new();
        for (i, head) in heads.iter().enumerate() {
            match head {
                Some(h) => children[*h].push(i),
                None => roots.push(i),
            }
        }
        // Parents after children: reverse of a parent-first traversal.
        let mut order = Vec::with_capacity(n);
        let mut stack = roots;
        while let Some(j) = stack.pop() {
            order.push(j);
            stack.extend_from_slice(&children[j]);
        }
        assert_eq!(order.len(), n, "TreeLstm: input is not a forest");
        order.reverse();

        let h = self.hidden;
        let wx = tp.get(tape, self.wx);
        let uh = tp.get(tape, self.uh);
        let uf = tp.get(tape, self.uf);
        let b = tp.get(tape, self.b);
        let mut hs: Vec<Option<Var>> = vec![None; n];
        let mut cs: Vec<Option<Var>> = vec![None; n];
        for j in order {
            let wxx = tape.matmul(wx, xs[j]);
            let pre = tape.add(wxx, b);
            let i_pre = tape.slice_rows(pre, 0, h);
            let f_pre = tape.slice_rows(pre, h, h);
            let o_pre = tape.slice_rows(pre, 2 * h, h);
            let u_pre = tape.slice_rows(pre, 3 * h, h);

            let kid_h: Vec<Var> = children[j].iter().map(|&k| hs[k].unwrap()).collect();
            let h_sum = if kid_h.is_empty() {
                tape.leaf(Tensor::zeros(h, 1))
            } else {
                tape.add_n(&kid_h)
            };
            let uh_sum = tape.matmul(uh, h_sum);
            let uh_i = tape.slice_rows(uh_sum, 0, h);
            let uh_o = tape.slice_rows(uh_sum, h, h);
            let uh_u = tape.slice_rows(uh_sum, 2 * h, h);

            let i_sum = tape.add(i_pre, uh_i);
            let i_gate = tape.sigmoid(i_sum);
            let o_sum = tape.add(o_pre, uh_o);
            let o_gate = tape.sigmoid(o_sum);
            let u_sum = tape.add(u_pre, uh_u);
            let u_val = tape.tanh(u_sum);

            let mut c_terms = vec![tape.mul(i_gate, u_val)];
            for &k in &children[j] {
                let uf_h = tape.matmul(uf, hs[k].unwrap());
                let f_sum = tape.add(f_pre, uf_h);
                let f_gate = tape.sigmoid(f_sum);
                c_terms.push(tape.mul(f_gate, cs[k].unwrap()));
            }
            let c = tape.add_n(&c_terms);
            let tc = tape.tanh(c);
            let h_out = tape.mul(o_gate, tc);
            hs[j] = Some(h_out);
            cs[j] = Some(c);
        }
        hs.into_iter().map(|v| v.unwrap()).collect()
    }
}
