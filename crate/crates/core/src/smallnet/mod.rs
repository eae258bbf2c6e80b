//! Small dense noise predictors with hand-written reverse-mode gradients.

mod adam;
mod affine;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use affine::{AffineCache, PerStepAffine};
pub use mlp::{init_params, MlpCache, MlpParams, ACTIVATION};

use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::predictor::NoisePredictor;

/// Flat gradient vector laid out exactly like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    values: Vec<f64>,
}

impl GradBundle {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn add_assign(&mut self, other: &GradBundle) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A noise predictor whose parameters can be fitted by gradient descent.
///
/// `backward` must reject a cache produced before the last parameter
/// mutation (see [`Trainable::params_mut`]).
pub trait Trainable: NoisePredictor + Clone + Send {
    type Cache: Send;

    fn params(&self) -> &[f64];

    /// Mutable parameter access; invalidates outstanding caches.
    fn params_mut(&mut self) -> &mut [f64];

    fn param_count(&self) -> usize {
        self.params().len()
    }

    fn forward_cached(&self, x: &SampleBatch, t: &[usize]) -> Result<(SampleBatch, Self::Cache)>;

    fn backward(&self, cache: &Self::Cache, upstream: &SampleBatch) -> Result<GradBundle>;
}

/// Sinusoidal embedding of `t / steps`: interleaved `(sin, cos)` pairs with
/// frequencies spaced geometrically from 1 to 1e4.
pub fn time_embed(t: usize, steps: usize, dim: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dim];
    time_embed_into(t, steps, &mut out)?;
    Ok(out)
}

pub(crate) fn time_embed_into(t: usize, steps: usize, out: &mut [f64]) -> Result<()> {
    let dim = out.len();
    if !dim.is_multiple_of(2) {
        return Err(Error::config("net.time_embed_dim", format!("must be even, got {dim}")));
    }
    if steps == 0 || t > steps {
        return Err(Error::Index {
            index: t,
            lo: 0,
            hi: steps,
        });
    }
    let u = t as f64 / steps as f64;
    let half = dim / 2;
    for j in 0..half {
        let omega = if half == 1 {
            1.0
        } else {
            10f64.powf(4.0 * j as f64 / (half - 1) as f64)
        };
        out[2 * j] = (u * omega).sin();
        out[2 * j + 1] = (u * omega).cos();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embed_at_zero() {
        let e = time_embed(0, 100, 8).unwrap();
        for j in 0..4 {
            assert_eq!(e[2 * j], 0.0);
            assert_eq!(e[2 * j + 1], 1.0);
        }
    }

    #[test]
    fn embed_at_end_dim4() {
        let e = time_embed(50, 50, 4).unwrap();
        let want = [1f64.sin(), 1f64.cos(), 1e4f64.sin(), 1e4f64.cos()];
        for (a, b) in e.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn embed_range_and_errors() {
        for t in 0..=37 {
            assert!(time_embed(t, 37, 16).unwrap().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        assert!(matches!(time_embed(1, 10, 3), Err(Error::Config { .. })));
        assert!(time_embed(11, 10, 4).is_err());
    }
}
