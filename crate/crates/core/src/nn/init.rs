use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Real, Tensor};

/// Standard deviation of He-normal initialization for a `Cout x Cin x Kh x Kw`
/// kernel: `sqrt(2 / fan_in)`.
pub fn he_std(shape: &[usize]) -> f64 {
    let fan_in: usize = shape.iter().skip(1).product();
    (2.0 / fan_in.max(1) as f64).sqrt()
}

/// He-normal kernel values, deterministic in `seed`.
pub fn he_init<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, he_std(shape)).expect("positive std");
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| T::lit(normal.sample(&mut rng))).collect();
    Tensor::from_vec(shape, values).expect("length matches shape")
}
