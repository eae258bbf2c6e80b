//! The noise-prediction contract shared by trained models and oracles.

use crate::batch::SampleBatch;
use crate::error::{Error, Result};

/// Maps noisy points and their timesteps to predicted noise.
///
/// `t` carries one timestep per row. Implementations must act row by row:
/// a row's prediction may not depend on which other rows share the batch.
pub trait NoisePredictor: Sync {
    fn data_dim(&self) -> usize;

    fn predict(&self, x: &SampleBatch, t: &[usize]) -> Result<SampleBatch>;
}

pub(crate) fn check_inputs(dim: usize, x: &SampleBatch, t: &[usize]) -> Result<()> {
    if x.dim() != dim {
        return Err(Error::Shape(format!("input width {} but model expects {dim}", x.dim())));
    }
    if t.len() != x.n() {
        return Err(Error::Shape(format!("{} timesteps for {} rows", t.len(), x.n())));
    }
    Ok(())
}

/// Predicts zero noise everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ZeroPredictor {
    pub dim: usize,
}

impl NoisePredictor for ZeroPredictor {
    fn data_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &SampleBatch, t: &[usize]) -> Result<SampleBatch> {
        check_inputs(self.dim, x, t)?;
        Ok(SampleBatch::zeros(x.n(), self.dim))
    }
}

/// Row-wise closure predictor, mostly for tests and probes.
pub struct FnPredictor<F> {
    dim: usize,
    f: F,
}

impl<F> FnPredictor<F>
where
    F: Fn(&[f64], usize) -> Vec<f64> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> NoisePredictor for FnPredictor<F>
where
    F: Fn(&[f64], usize) -> Vec<f64> + Sync,
{
    fn data_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &SampleBatch, t: &[usize]) -> Result<SampleBatch> {
        check_inputs(self.dim, x, t)?;
        let mut out = Vec::with_capacity(x.n() * self.dim);
        for (row, &ti) in x.rows().zip(t) {
            let e = (self.f)(row, ti);
            if e.len() != self.dim {
                return Err(Error::Shape("predictor returned wrong width".into()));
            }
            out.extend(e);
        }
        SampleBatch::new(x.n(), self.dim, out)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn data_dim(&self) -> usize {
        (**self).data_dim()
    }

    fn predict(&self, x: &SampleBatch, t: &[usize]) -> Result<SampleBatch> {
        (**self).predict(x, t)
    }
}
