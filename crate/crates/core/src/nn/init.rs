//! Seeded parameter initialization.
//!
//! All draws happen in `f64` and are cast to the model scalar afterwards,
//! so the same seed produces the same network in `f32` and `f64`.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ParamId, ParamStore, Scalar};

/// Registers freshly initialized parameters into a store, drawing from a
/// deterministic stream.
pub struct Initializer<'s, A: Scalar> {
    store: &'s mut ParamStore<A>,
    rng: ChaCha8Rng,
}

impl<'s, A: Scalar> Initializer<'s, A> {
    pub fn new(store: &'s mut ParamStore<A>, rng: ChaCha8Rng) -> Self {
        Initializer { store, rng }
    }

    /// Conv weights: zero-mean normal, std 0.02 (the usual GAN setting).
    pub fn conv_weight(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let dist = Normal::new(0.0f64, 0.02).unwrap();
        let rng = &mut self.rng;
        let arr = ArrayD::from_shape_fn(IxDyn(shape), |_| A::from_f64(dist.sample(rng)));
        self.store.add(name, arr)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.store.add(name, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.store.add(name, ArrayD::ones(IxDyn(shape)))
    }

    /// Uniform in [-limit, limit]; used by tests that want spread-out values.
    pub fn uniform(&mut self, name: &str, shape: &[usize], limit: f64) -> ParamId {
        let rng = &mut self.rng;
        let arr =
            ArrayD::from_shape_fn(IxDyn(shape), |_| A::from_f64(rng.gen_range(-limit..limit)));
        self.store.add(name, arr)
    }

    pub fn store(&mut self) -> &mut ParamStore<A> {
        self.store
    }
}
