//! Finite-difference gradient verification.
//!
//! Central differences with h scaled to the parameter magnitude; the
//! relative error denominator is floored so near-zero gradients compare
//! on an absolute scale.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::nn::params::{ParamId, ParamStore};
use crate::nn::tape::Gradients;

#[derive(Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: String,
    pub points: usize,
}

/// Compares analytic gradients against central finite differences at up
/// to `samples` trainable coordinates. `f` evaluates the loss and its
/// gradients at the store's current values; the store is restored after
/// each probe.
pub fn finite_diff(
    store: &mut ParamStore,
    f: &mut dyn FnMut(&ParamStore) -> (f64, Gradients),
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> GradCheck {
    let (_, grads) = f(store);

    let mut coords: Vec<(ParamId, usize)> = Vec::new();
    for id in store.ids() {
        if store.is_trainable(id) {
            for k in 0..store.tensor(id).len() {
                coords.push((id, k));
            }
        }
    }
    coords.shuffle(rng);
    coords.truncate(samples);

    let mut max_rel_err = 0.0;
    let mut worst = String::from("(none)");
    for &(id, k) in &coords {
        let original = store.tensor(id).data[k];
        let h = 1e-5 * original.abs().max(1.0);

        store.tensor_mut(id).data[k] = original + h;
        let (up, _) = f(store);
        store.tensor_mut(id).data[k] = original - h;
        let (down, _) = f(store);
        store.tensor_mut(id).data[k] = original;

        let fd = (up - down) / (2.0 * h);
        let an = grads.get(id).map(|t| t.data[k]).unwrap_or(0.0);
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = format!("{}[{}] fd={} analytic={}", store.name(id), k, fd, an);
        }
    }
    GradCheck { max_rel_err, worst, points: coords.len() }
}
