//! Concrete model choice used by training runs and checkpoints.

use crate::batch::SampleBatch;
use crate::error::Result;
use crate::predictor::NoisePredictor;
use crate::smallnet::{self, AffineCache, GradBundle, MlpCache, MlpParams, PerStepAffine, Trainable};

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    /// Dense SiLU network on `[x, time embedding]`.
    Mlp {
        hidden: Vec<usize>,
        time_embed_dim: usize,
    },
    /// One affine map per timestep, initialised at zero.
    Affine,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Mlp {
            hidden: vec![128, 128],
            time_embed_dim: 32,
        }
    }
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Mlp { .. } => "mlp",
            ModelSpec::Affine => "affine",
        }
    }

    pub fn build(&self, data_dim: usize, steps: usize, seed: u64) -> Result<Model> {
        Ok(match self {
            ModelSpec::Mlp {
                hidden,
                time_embed_dim,
            } => Model::Mlp(smallnet::init_params(data_dim, hidden, *time_embed_dim, steps, seed)?),
            ModelSpec::Affine => Model::Affine(PerStepAffine::zeros(data_dim, steps)?),
        })
    }

    /// The model shape filled with `params`, as when loading a checkpoint.
    pub fn with_params(&self, data_dim: usize, steps: usize, params: Vec<f64>) -> Result<Model> {
        Ok(match self {
            ModelSpec::Mlp {
                hidden,
                time_embed_dim,
            } => Model::Mlp(MlpParams::zeros(data_dim, hidden, *time_embed_dim, steps)?.with_params(params)?),
            ModelSpec::Affine => Model::Affine(PerStepAffine::zeros(data_dim, steps)?.with_params(params)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Mlp(MlpParams),
    Affine(PerStepAffine),
}

pub enum ModelCache {
    Mlp(MlpCache),
    Affine(AffineCache),
}

impl Model {
    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Mlp(m) => ModelSpec::Mlp {
                hidden: m.hidden_dims().to_vec(),
                time_embed_dim: m.time_embed_dim(),
            },
            Model::Affine(_) => ModelSpec::Affine,
        }
    }
}

impl NoisePredictor for Model {
    fn data_dim(&self) -> usize {
        match self {
            Model::Mlp(m) => m.data_dim(),
            Model::Affine(m) => m.data_dim(),
        }
    }

    fn predict(&self, x: &SampleBatch, t: &[usize]) -> Result<SampleBatch> {
        match self {
            Model::Mlp(m) => m.predict(x, t),
            Model::Affine(m) => m.predict(x, t),
        }
    }
}

impl Trainable for Model {
    type Cache = ModelCache;

    fn params(&self) -> &[f64] {
        match self {
            Model::Mlp(m) => m.params(),
            Model::Affine(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Model::Mlp(m) => m.params_mut(),
            Model::Affine(m) => m.params_mut(),
        }
    }

    fn forward_cached(&self, x: &SampleBatch, t: &[usize]) -> Result<(SampleBatch, ModelCache)> {
        Ok(match self {
            Model::Mlp(m) => {
                let (o, c) = m.forward_cached(x, t)?;
                (o, ModelCache::Mlp(c))
            }
            Model::Affine(m) => {
                let (o, c) = m.forward_cached(x, t)?;
                (o, ModelCache::Affine(c))
            }
        })
    }

    fn backward(&self, cache: &ModelCache, upstream: &SampleBatch) -> Result<GradBundle> {
        match (self, cache) {
            (Model::Mlp(m), ModelCache::Mlp(c)) => Trainable::backward(m, c, upstream),
            (Model::Affine(m), ModelCache::Affine(c)) => m.backward(c, upstream),
            _ => Err(crate::Error::Usage("cache belongs to a different model kind".into())),
        }
    }
}
