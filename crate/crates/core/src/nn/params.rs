//! Named parameter storage.
//!
//! Parameters are registered once, in a fixed order, under unique names;
//! checkpoint layout and optimizer state both follow that order, which
//! keeps runs reproducible.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::tape::{Tape, Tensor, Var};

/// Index of a parameter within its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// How a freshly registered tensor is filled.
pub enum Init {
    Zeros,
    Const(f64),
    /// Uniform(−s, s) with s = sqrt(6 / (fan_in + fan_out)); fan_out is
    /// the row count, fan_in the column count.
    Xavier,
    /// Zero bias with the forget-gate block (rows h..2h) set to 1.
    LstmBias { hidden: usize },
    Given(Vec<f64>),
}

#[derive(Debug)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    trainable: Vec<bool>,
    index: BTreeMap<String, ParamId>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            trainable: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn add(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
        trainable: bool,
    ) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name:?}");
        let tensor = match init {
            Init::Zeros => Tensor::zeros(rows, cols),
            Init::Const(x) => Tensor::from_vec(rows, cols, vec![x; rows * cols]),
            Init::Xavier => {
                let s = (6.0 / (rows + cols) as f64).sqrt();
                let data = (0..rows * cols).map(|_| rng.gen_range(-s..s)).collect();
                Tensor::from_vec(rows, cols, data)
            }
            Init::LstmBias { hidden } => {
                let mut t = Tensor::zeros(rows, cols);
                assert!(2 * hidden <= rows, "LstmBias: rows too small");
                for i in hidden..2 * hidden {
                    t.data[i] = 1.0;
                }
                t
            }
            Init::Given(data) => Tensor::from_vec(rows, cols, data),
        };
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.trainable.push(trainable);
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Count of trainable scalar entries, for L2 bookkeeping.
    pub fn trainable_len(&self) -> usize {
        self.ids()
            .filter(|&id| self.is_trainable(id))
            .map(|id| self.tensor(id).len())
            .sum()
    }
}

/// Per-tape cache that injects each referenced parameter once.
pub struct TapeParams<'a> {
    store: &'a ParamStore,
    cache: Vec<Option<Var>>,
}

impl<'a> TapeParams<'a> {
    pub fn new(store: &'a ParamStore) -> TapeParams<'a> {
        TapeParams { store, cache: vec![None; store.len()] }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn get(&mut self, tape: &mut Tape, id: ParamId) -> Var {
        if let Some(v) = self.cache[id.0] {
            return v;
        }
        let v = tape.param(id, self.store.tensor(id).clone(), self.store.is_trainable(id));
        self.cache[id.0] = Some(v);
        v
    }
}
