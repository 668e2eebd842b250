//! Adaptive-moment optimizer with persistent state keyed by parameter id.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::{ParamId, ParamStore, Scalar};

/// Adam with bias correction. First/second moments are kept in the scalar
/// type of the model; the hyperparameters stay `f64` so configs are
/// precision-independent.
pub struct Adam<A: Scalar> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<ArrayD<A>>,
    v: Vec<ArrayD<A>>,
}

/// Serializable snapshot of optimizer state (moments in f64).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl<A: Scalar> Adam<A> {
    pub fn new(store: &ParamStore<A>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let m = store.iter().map(|(_, _, v)| ArrayD::zeros(v.raw_dim())).collect();
        let v = store.iter().map(|(_, _, v)| ArrayD::zeros(v.raw_dim())).collect();
        Adam { lr, beta1, beta2, eps, t: 0, m, v }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Apply one update for the given (id, gradient) pairs. Parameters not
    /// listed are left untouched and their moments do not advance.
    pub fn step<'g>(
        &mut self,
        store: &mut ParamStore<A>,
        grads: impl Iterator<Item = (ParamId, &'g ArrayD<A>)>,
    ) where
        A: 'g,
    {
        self.t += 1;
        let b1 = A::from_f64(self.beta1);
        let b2 = A::from_f64(self.beta2);
        let one = A::one();
        let bc1 = A::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = A::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr = A::from_f64(self.lr);
        let eps = A::from_f64(self.eps);
        for (id, grad) in grads {
            let idx = id.0 as usize;
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let p = store.value_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(grad).for_each(|p, m, v, &g| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
    }

    pub fn export_state(&self) -> AdamState {
        AdamState {
            t: self.t,
            m: self.m.iter().map(|a| a.iter().map(|v| v.to_f64().unwrap()).collect()).collect(),
            v: self.v.iter().map(|a| a.iter().map(|v| v.to_f64().unwrap()).collect()).collect(),
        }
    }

    pub fn import_state(&mut self, state: &AdamState) -> crate::Result<()> {
        if state.m.len() != self.m.len() || state.v.len() != self.v.len() {
            return Err(crate::Error::SpecMismatch(format!(
                "optimizer state holds {} moment arrays, model has {}",
                state.m.len(),
                self.m.len()
            )));
        }
        self.t = state.t;
        for (dst, src) in self.m.iter_mut().zip(&state.m) {
            if dst.len() != src.len() {
                return Err(crate::Error::SpecMismatch("moment array size mismatch".into()));
            }
            for (d, s) in dst.iter_mut().zip(src) {
                *d = A::from_f64(*s);
            }
        }
        for (dst, src) in self.v.iter_mut().zip(&state.v) {
            if dst.len() != src.len() {
                return Err(crate::Error::SpecMismatch("moment array size mismatch".into()));
            }
            for (d, s) in dst.iter_mut().zip(src) {
                *d = A::from_f64(*s);
            }
        }
        Ok(())
    }
}
