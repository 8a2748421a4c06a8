//! Weight initializers.

use rand_distr::{Distribution, Normal, Uniform};

use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `N(0, 2/fan_in)`, for weights feeding a ReLU.
    HeNormal,
    /// `U(±√(6/(fan_in+fan_out)))`.
    XavierUniform,
    /// `N(0, σ²)` redrawn outside ±2σ.
    TruncatedNormal(f64),
    Zeros,
    Ones,
}

pub fn initialize(init: Init, shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::ones(shape),
        Init::HeNormal => {
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            Tensor::from_fn(shape, |_| dist.sample(rng))
        }
        Init::XavierUniform => {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            Tensor::from_fn(shape, |_| dist.sample(rng))
        }
        Init::TruncatedNormal(std) => {
            let dist = Normal::new(0.0, std).expect("positive std");
            Tensor::from_fn(shape, |_| loop {
                let v: f64 = dist.sample(rng);
                if v.abs() <= 2.0 * std {
                    break v;
                }
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn truncated_normal_is_bounded() {
        let mut rng = substream(1, "t");
        let t = initialize(Init::TruncatedNormal(0.02), &[1000], 1, 1, &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= 0.04));
    }

    #[test]
    fn he_normal_scale() {
        let mut rng = substream(2, "t");
        let t = initialize(Init::HeNormal, &[20000], 50, 1, &mut rng);
        let var = t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64;
        assert!((var - 2.0 / 50.0).abs() < 0.004, "{var}");
    }
}
