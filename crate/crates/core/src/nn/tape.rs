//! Reverse-mode automatic differentiation over a flat operation tape.
//!
//! Graphs are built define-by-run: each builder computes its value
//! eagerly and records the operation. [`Tape::backward`] walks the tape
//! in reverse, propagating gradients only through nodes that can reach a
//! trainable parameter. Shape mismatches are programming errors and
//! panic with the operation name.

use crate::nn::params::ParamId;

/// Dense row-major matrix. Column vectors are (rows, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn column(data: Vec<f64>) -> Tensor {
        let rows = data.len();
        Tensor { rows, cols: 1, data }
    }

    pub fn scalar(x: f64) -> Tensor {
        Tensor { rows: 1, cols: 1, data: vec![x] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, x: f64) {
        self.data[i * self.cols + j] = x;
    }

    fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// a(m,k) × b(k,n)
fn mm_nn(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for l in 0..a.cols {
            let av = a.data[i * a.cols + l];
            if av == 0.0 {
                continue;
            }
            for j in 0..b.cols {
                out.data[i * b.cols + j] += av * b.data[l * b.cols + j];
            }
        }
    }
    out
}

/// a(m,k) × bᵀ where b is (n,k)
fn mm_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        for j in 0..b.rows {
            let mut s = 0.0;
            for l in 0..a.cols {
                s += a.data[i * a.cols + l] * b.data[j * b.cols + l];
            }
            out.data[i * b.rows + j] = s;
        }
    }
    out
}

/// aᵀ × b where a is (k,m), b is (k,n)
fn mm_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.cols, b.cols);
    for l in 0..a.rows {
        for i in 0..a.cols {
            let av = a.data[l * a.cols + i];
            if av == 0.0 {
                continue;
            }
            for j in 0..b.cols {
                out.data[i * b.cols + j] += av * b.data[l * b.cols + j];
            }
        }
    }
    out
}

fn axpy(dst: &mut Tensor, k: f64, src: &Tensor) {
    debug_assert!(dst.same_shape(src));
    for (d, s) in dst.data.iter_mut().zip(&src.data) {
        *d += k * s;
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug)]
enum Op {
    /// Constant input; never receives gradient.
    Leaf,
    /// Trainable parameter leaf; gradient collected into [`Gradients`].
    Param(ParamId),
    Matmul(Var, Var),
    Add(Var, Var),
    AddN(Vec<Var>),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Elementwise product of a tensor with a (1,1) scalar variable.
    ScaleBy(Var, Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    LookupRow(Var, usize),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    SoftmaxMasked(Var, Vec<bool>),
    MaxPool(Vec<Var>),
    /// Negative log of the masked softmax probability at `target`.
    NllMasked { logits: Var, mask: Vec<bool>, target: usize },
    SumSquares(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Per-parameter gradient slots indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn new(param_count: usize) -> Gradients {
        Gradients { slots: vec![None; param_count] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots[id.0].as_ref()
    }

    fn add(&mut self, id: ParamId, grad: &Tensor) {
        match &mut self.slots[id.0] {
            Some(t) => axpy(t, 1.0, grad),
            slot => *slot = Some(grad.clone()),
        }
    }

    /// Accumulates `other`, for summing per-sentence gradients.
    pub fn add_assign(&mut self, other: &Gradients) {
        assert_eq!(self.slots.len(), other.slots.len());
        for (mine, theirs) in self.slots.iter_mut().zip(&other.slots) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => axpy(m, 1.0, t),
                    slot => *slot = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for slot in self.slots.iter_mut().flatten() {
            for x in &mut slot.data {
                *x *= k;
            }
        }
    }
}

/// Operation tape; one per forward/backward pass or per decoded sentence.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.idx()].value
    }

    /// Reads a (1,1) node as a plain number.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!((t.rows, t.cols), (1, 1), "scalar_value on non-scalar");
        t.data[0]
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        let id = u32::try_from(self.nodes.len()).expect("tape overflow");
        self.nodes.push(Node { op, value, needs_grad });
        Var(id)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.idx()].needs_grad
    }

    /// Constant input leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Parameter leaf. `trainable: false` keeps the value out of the
    /// gradient flow entirely (frozen embeddings).
    pub fn param(&mut self, id: ParamId, value: Tensor, trainable: bool) -> Var {
        if trainable {
            self.push(Op::Param(id), value, true)
        } else {
            self.push(Op::Leaf, value, false)
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.cols, tb.rows, "matmul: {}x{} times {}x{}", ta.rows, ta.cols, tb.rows, tb.cols);
        let value = mm_nn(ta, tb);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Matmul(a, b), value, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(ta.same_shape(tb), "add: shape mismatch");
        let mut value = ta.clone();
        axpy(&mut value, 1.0, tb);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), value, ng)
    }

    pub fn add_n(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty(), "add_n: empty input");
        let mut value = self.value(vars[0]).clone();
        for &v in &vars[1..] {
            assert!(value.same_shape(self.value(v)), "add_n: shape mismatch");
            axpy(&mut value, 1.0, self.value(v));
        }
        let ng = vars.iter().any(|&v| self.needs(v));
        self.push(Op::AddN(vars.to_vec()), value, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(ta.same_shape(tb), "mul: shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let value = Tensor { rows: ta.rows, cols: ta.cols, data };
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), value, ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data.iter().map(|x| x * k).collect();
        let value = Tensor { rows: ta.rows, cols: ta.cols, data };
        let ng = self.needs(a);
        self.push(Op::Scale(a, k), value, ng)
    }

    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let ts = self.value(s);
        assert_eq!((ts.rows, ts.cols), (1, 1), "scale_by: scalar operand must be (1,1)");
        let k = ts.data[0];
        let ta = self.value(a);
        let data = ta.data.iter().map(|x| x * k).collect();
        let value = Tensor { rows: ta.rows, cols: ta.cols, data };
        let ng = self.needs(a) || self.needs(s);
        self.push(Op::ScaleBy(a, s), value, ng)
    }

    pub fn concat_rows(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty(), "concat_rows: empty input");
        let cols = self.value(vars[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &v in vars {
            let t = self.value(v);
            assert_eq!(t.cols, cols, "concat_rows: column mismatch");
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        let ng = vars.iter().any(|&v| self.needs(v));
        self.push(Op::ConcatRows(vars.to_vec()), Tensor { rows, cols, data }, ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ta = self.value(a);
        assert!(start + len <= ta.rows, "slice_rows: out of range");
        let cols = ta.cols;
        let data = ta.data[start * cols..(start + len) * cols].to_vec();
        let ng = self.needs(a);
        self.push(Op::SliceRows(a, start), Tensor { rows: len, cols, data }, ng)
    }

    /// Extracts row `row` of a (v, d) table as a (d, 1) column vector.
    pub fn lookup_row(&mut self, table: Var, row: usize) -> Var {
        let tt = self.value(table);
        assert!(row < tt.rows, "lookup_row: row {} of {}", row, tt.rows);
        let data = tt.data[row * tt.cols..(row + 1) * tt.cols].to_vec();
        let value = Tensor { rows: tt.cols, cols: 1, data };
        let ng = self.needs(table);
        self.push(Op::LookupRow(table, row), value, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data.iter().map(|x| x.tanh()).collect();
        let value = Tensor { rows: ta.rows, cols: ta.cols, data };
        let ng = self.needs(a);
        self.push(Op::Tanh(a), value, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        let value = Tensor { rows: ta.rows, cols: ta.cols, data };
        let ng = self.needs(a);
        self.push(Op::Sigmoid(a), value, ng)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        assert_eq!(ta.cols, 1, "softmax: expects a column vector");
        let value = Tensor::column(softmax_masked_values(&ta.data, None));
        let ng = self.needs(a);
        self.push(Op::Softmax(a), value, ng)
    }

    /// Softmax over the unmasked entries; masked entries are exactly 0.
    pub fn softmax_masked(&mut self, a: Var, mask: &[bool]) -> Var {
        let ta = self.value(a);
        assert_eq!(ta.cols, 1, "softmax_masked: expects a column vector");
        assert_eq!(mask.len(), ta.rows, "softmax_masked: mask length");
        assert!(mask.iter().any(|&m| m), "softmax_masked: everything masked");
        let value = Tensor::column(softmax_masked_values(&ta.data, Some(mask)));
        let ng = self.needs(a);
        self.push(Op::SoftmaxMasked(a, mask.to_vec()), value, ng)
    }

    /// Elementwise max over same-shaped tensors; gradient flows to the
    /// first input attaining each maximum.
    pub fn max_pool(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty(), "max_pool: empty input");
        let mut value = self.value(vars[0]).clone();
        for &v in &vars[1..] {
            let t = self.value(v);
            assert!(value.same_shape(t), "max_pool: shape mismatch");
            for (m, x) in value.data.iter_mut().zip(&t.data) {
                if *x > *m {
                    *m = *x;
                }
            }
        }
        let ng = vars.iter().any(|&v| self.needs(v));
        self.push(Op::MaxPool(vars.to_vec()), value, ng)
    }

    /// −log p(target) under the masked softmax of `logits`, fused for
    /// stability. `target` must be unmasked.
    pub fn nll_masked(&mut self, logits: Var, mask: &[bool], target: usize) -> Var {
        let ta = self.value(logits);
        assert_eq!(ta.cols, 1, "nll_masked: expects a column vector");
        assert_eq!(mask.len(), ta.rows, "nll_masked: mask length");
        assert!(target < ta.rows && mask[target], "nll_masked: target {target} is masked");
        let max = masked_max(&ta.data, mask);
        let mut lse = 0.0;
        for (x, &m) in ta.data.iter().zip(mask) {
            if m {
                lse += (x - max).exp();
            }
        }
        let loss = max + lse.ln() - ta.data[target];
        let ng = self.needs(logits);
        self.push(
            Op::NllMasked { logits, mask: mask.to_vec(), target },
            Tensor::scalar(loss),
            ng,
        )
    }

    /// Σ xᵢ² over all entries, as a (1,1) scalar.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data.iter().map(|x| x * x).sum();
        let ng = self.needs(a);
        self.push(Op::SumSquares(a), Tensor::scalar(s), ng)
    }

    /// Reverse pass from a (1,1) loss node. `param_count` sizes the
    /// output slots (total parameters in the store).
    pub fn backward(&self, loss: Var, param_count: usize) -> Gradients {
        let lt = self.value(loss);
        assert_eq!((lt.rows, lt.cols), (1, 1), "backward: loss must be scalar");
        let mut out = Gradients::new(param_count);
        if !self.needs(loss) {
            return out;
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.idx()] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.idx()).rev() {
            if !self.nodes[idx].needs_grad {
                grads[idx] = None;
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.add(*id, &g),
                Op::Matmul(a, b) => {
                    if self.needs(*a) {
                        let da = mm_nt(&g, self.value(*b));
                        acc(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let db = mm_tn(self.value(*a), &g);
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::AddN(vars) => {
                    for &v in vars {
                        if self.needs(v) {
                            acc(&mut grads, v, g.clone());
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let tb = self.value(*b);
                        let mut da = g.clone();
                        for (d, y) in da.data.iter_mut().zip(&tb.data) {
                            *d *= y;
                        }
                        acc(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let ta = self.value(*a);
                        let mut db = g;
                        for (d, x) in db.data.iter_mut().zip(&ta.data) {
                            *d *= x;
                        }
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Scale(a, k) => {
                    if self.needs(*a) {
                        let mut da = g;
                        for d in &mut da.data {
                            *d *= k;
                        }
                        acc(&mut grads, *a, da);
                    }
                }
                Op::ScaleBy(a, s) => {
                    let k = self.value(*s).data[0];
                    if self.needs(*s) {
                        let ta = self.value(*a);
                        let ds: f64 = g.data.iter().zip(&ta.data).map(|(gx, x)| gx * x).sum();
                        acc(&mut grads, *s, Tensor::scalar(ds));
                    }
                    if self.needs(*a) {
                        let mut da = g;
                        for d in &mut da.data {
                            *d *= k;
                        }
                        acc(&mut grads, *a, da);
                    }
                }
                Op::ConcatRows(vars) => {
                    let mut start = 0;
                    for &v in vars {
                        let t = self.value(v);
                        let len = t.rows * t.cols;
                        if self.needs(v) {
                            let slice = Tensor {
                                rows: t.rows,
                                cols: t.cols,
                                data: g.data[start..start + len].to_vec(),
                            };
                            acc(&mut grads, v, slice);
                        }
                        start += len;
                    }
                }
                Op::SliceRows(a, start) => {
                    if self.needs(*a) {
                        let ta = self.value(*a);
                        let mut da = Tensor::zeros(ta.rows, ta.cols);
                        let offset = start * ta.cols;
                        for (k, gx) in g.data.iter().enumerate() {
                            da.data[offset + k] += gx;
                        }
                        acc(&mut grads, *a, da);
                    }
                }
                Op::LookupRow(table, row) => {
                    if self.needs(*table) {
                        let tt = self.value(*table);
                        let mut dt = Tensor::zeros(tt.rows, tt.cols);
                        for (j, gx) in g.data.iter().enumerate() {
                            dt.data[row * tt.cols + j] += gx;
                        }
                        acc(&mut grads, *table, dt);
                    }
                }
                Op::Tanh(a) => {
                    if self.needs(*a) {
                        let mut da = g;
                        for (d, y) in da.data.iter_mut().zip(&node.value.data) {
                            *d *= 1.0 - y * y;
                        }
                        acc(&mut grads, *a, da);
                    }
                }
                Op::Sigmoid(a) => {
                    if self.needs(*a) {
                        let mut da = g;
                        for (d, y) in da.data.iter_mut().zip(&node.value.data) {
                            *d *= y * (1.0 - y);
                        }
                        acc(&mut grads, *a, da);
                    }
                }
                Op::Softmax(a) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, softmax_backward(&node.value, &g, None));
                    }
                }
                Op::SoftmaxMasked(a, mask) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, softmax_backward(&node.value, &g, Some(mask)));
                    }
                }
                Op::MaxPool(vars) => {
                    // Route each entry's gradient to the first input
                    // attaining the max.
                    for (k, gx) in g.data.iter().enumerate() {
                        if *gx == 0.0 {
                            continue;
                        }
                        let target = node.value.data[k];
                        for &v in vars {
                            if self.value(v).data[k] == target {
                                if self.needs(v) {
                                    let t = self.value(v);
                                    let slot = grads[v.idx()]
                                        .get_or_insert_with(|| Tensor::zeros(t.rows, t.cols));
                                    slot.data[k] += gx;
                                }
                                break;
                            }
                        }
                    }
                }
                Op::NllMasked { logits, mask, target } => {
                    if self.needs(*logits) {
                        let ta = self.value(*logits);
                        let p = softmax_masked_values(&ta.data, Some(mask));
                        let up = g.data[0];
                        let mut da = Tensor::zeros(ta.rows, 1);
                        for (k, &m) in mask.iter().enumerate() {
                            if m {
                                let indicator = if k == *target { 1.0 } else { 0.0 };
                                da.data[k] = up * (p[k] - indicator);
                            }
                        }
                        acc(&mut grads, *logits, da);
                    }
                }
                Op::SumSquares(a) => {
                    if self.needs(*a) {
                        let ta = self.value(*a);
                        let up = g.data[0];
                        let mut da = ta.clone();
                        for d in &mut da.data {
                            *d *= 2.0 * up;
                        }
                        acc(&mut grads, *a, da);
                    }
                }
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
    match &mut grads[v.idx()] {
        Some(t) => axpy(t, 1.0, &delta),
        slot => *slot = Some(delta),
    }
}

fn masked_max(xs: &[f64], mask: &[bool]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (x, &m) in xs.iter().zip(mask) {
        if m && *x > max {
            max = *x;
        }
    }
    max
}

fn softmax_masked_values(xs: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let live = |k: usize| mask.map_or(true, |m| m[k]);
    let mut max = f64::NEG_INFINITY;
    for (k, x) in xs.iter().enumerate() {
        if live(k) && *x > max {
            max = *x;
        }
    }
    let mut out = vec![0.0; xs.len()];
    let mut denom = 0.0;
    for (k, x) in xs.iter().enumerate() {
        if live(k) {
            out[k] = (x - max).exp();
            denom += out[k];
        }
    }
    for v in &mut out {
        *v /= denom;
    }
    out
}

fn softmax_backward(y: &Tensor, g: &Tensor, mask: Option<&[bool]>) -> Tensor {
    let live = |k: usize| mask.map_or(true, |m| m[k]);
    let mut dot = 0.0;
    for k in 0..y.data.len() {
        if live(k) {
            dot += y.data[k] * g.data[k];
        }
    }
    let mut da = Tensor::zeros(y.rows, 1);
    for k in 0..y.data.len() {
        if live(k) {
            da.data[k] = y.data[k] * (g.data[k] - dot);
        }
    }
    da
}
