//! Adam optimizer and global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::nn::tape::{Gradients, Tensor};

/// Rescales gradients so their global L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for slot in grads.slots.iter().flatten() {
        for x in &slot.data {
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Adam {
        let m = store
            .ids()
            .map(|id| {
                let t = store.tensor(id);
                Tensor::zeros(t.rows, t.cols)
            })
            .collect::<Vec<_>>();
        let v = m.clone();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m, v }
    }

    /// One update over all trainable parameters. Missing gradient slots
    /// count as zero. A non-finite gradient entry aborts the step.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        assert_eq!(grads.slots.len(), store.len(), "optimizer/store size mismatch");
        for id in store.ids() {
            if let Some(g) = grads.get(id) {
                if g.data.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Contract(format!(
                        "non-finite gradient for parameter {:?}",
                        store.name(id)
                    )));
                }
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in store.ids() {
            if !store.is_trainable(id) {
                continue;
            }
            let idx = id.0;
            let theta = store.tensor_mut(id);
            for k in 0..theta.data.len() {
                let g = grads.slots[idx].as_ref().map(|t| t.data[k]).unwrap_or(0.0);
                let m = &mut self.m[idx].data[k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                let v = &mut self.v[idx].data[k];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                theta.data[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{Init, ParamId};
    use crate::nn::tape::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_descends_a_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let id = store.add("x", 2, 1, Init::Const(4.0), &mut rng, true);
        let mut opt = Adam::new(&store, 0.1);
        let mut losses = Vec::new();
        for _ in 0..200 {
            let mut tape = Tape::new();
            let x = tape.param(id, store.tensor(id).clone(), true);
            let loss = tape.sum_squares(x);
            losses.push(tape.scalar_value(loss));
            let grads = tape.backward(loss, store.len());
            opt.step(&mut store, &grads).unwrap();
        }
        assert!(losses[199] < 1e-2 * losses[0], "did not descend: {losses:?}");
    }

    #[test]
    fn frozen_parameters_never_move() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let frozen = store.add("frozen", 2, 1, Init::Const(1.5), &mut rng, false);
        let live = store.add("live", 2, 1, Init::Const(1.5), &mut rng, true);
        let mut opt = Adam::new(&store, 0.05);
        let mut grads = Gradients::new(store.len());
        grads.slots[0] = Some(Tensor::column(vec![1.0, 1.0]));
        grads.slots[1] = Some(Tensor::column(vec![1.0, 1.0]));
        opt.step(&mut store, &grads).unwrap();
        assert_eq!(store.tensor(frozen).data, vec![1.5, 1.5]);
        assert_ne!(store.tensor(live).data, vec![1.5, 1.5]);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        store.add("bad.w", 1, 1, Init::Zeros, &mut rng, true);
        let mut opt = Adam::new(&store, 0.1);
        let mut grads = Gradients::new(1);
        grads.slots[0] = Some(Tensor::scalar(f64::NAN));
        let err = opt.step(&mut store, &grads).unwrap_err();
        assert!(err.to_string().contains("bad.w"), "{err}");
    }

    #[test]
    fn clipping_preserves_direction_and_caps_norm() {
        let mut grads = Gradients::new(2);
        grads.slots[0] = Some(Tensor::column(vec![3.0, 0.0]));
        grads.slots[1] = Some(Tensor::column(vec![0.0, 4.0]));
        let norm = clip_global_norm(&mut grads, 2.5);
        assert!((norm - 5.0).abs() < 1e-12);
        let a = grads.get(ParamId(0)).unwrap();
        let b = grads.get(ParamId(1)).unwrap();
        assert!((a.data[0] - 1.5).abs() < 1e-12);
        assert!((b.data[1] - 2.0).abs() < 1e-12);

        // Below the threshold nothing changes.
        let norm2 = clip_global_norm(&mut grads, 100.0);
        assert!((norm2 - 2.5).abs() < 1e-12);
        assert!((grads.get(ParamId(0)).unwrap().data[0] - 1.5).abs() < 1e-12);
    }
}
