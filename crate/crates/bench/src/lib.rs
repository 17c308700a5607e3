//! Benchmark fixtures shared by the criterion benches.

use dlen_core::{DlenConfig, DlenModel, Prng, Tensor};

pub fn random_batch(shape: &[usize], seed: u64) -> Tensor<f32> {
    Tensor::rand_uniform(shape, 0.0, 1.0, &mut Prng::new(seed))
}

/// Default configuration at width `c`, positional encodings sized for `side`.
pub fn model(c: usize, side: usize) -> DlenModel<f32> {
    let mut cfg = DlenConfig::new(c);
    cfg.train_h = side;
    cfg.train_w = side;
    DlenModel::init(cfg, 0).expect("valid config")
}
