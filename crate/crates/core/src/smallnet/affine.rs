use super::{GradBundle, Trainable};
use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::predictor::{check_inputs, NoisePredictor};

/// Independent affine map per timestep: `eps(x, t) = A_t x + b_t`.
///
/// Parameter layout, for `t = 1..=T` in order: `A_t` row-major (`dim x dim`)
/// followed by `b_t`.
#[derive(Debug, Clone)]
pub struct PerStepAffine {
    dim: usize,
    steps: usize,
    params: Vec<f64>,
    revision: u64,
}

/// Equality ignores the cache revision counter.
impl PartialEq for PerStepAffine {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.steps == other.steps && self.params == other.params
    }
}

pub struct AffineCache {
    revision: u64,
    x: SampleBatch,
    t: Vec<usize>,
}

impl PerStepAffine {
    pub fn zeros(dim: usize, steps: usize) -> Result<Self> {
        if dim == 0 || steps == 0 {
            return Err(Error::config("model", "affine model needs dim >= 1 and T >= 1"));
        }
        Ok(Self {
            dim,
            steps,
            params: vec![0.0; steps * (dim * dim + dim)],
            revision: 0,
        })
    }

    pub fn with_params(mut self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} parameters for an affine model with {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params = params;
        self.revision += 1;
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn block(&self) -> usize {
        self.dim * self.dim + self.dim
    }

    fn offset(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps {
            return Err(Error::Index {
                index: t,
                lo: 1,
                hi: self.steps,
            });
        }
        Ok((t - 1) * self.block())
    }

    /// `(A_t, b_t)` as slices.
    pub fn map(&self, t: usize) -> Result<(&[f64], &[f64])> {
        let o = self.offset(t)?;
        let dd = self.dim * self.dim;
        Ok((&self.params[o..o + dd], &self.params[o + dd..o + dd + self.dim]))
    }

    pub fn set_map(&mut self, t: usize, a: &[f64], b: &[f64]) -> Result<()> {
        let o = self.offset(t)?;
        let dd = self.dim * self.dim;
        if a.len() != dd || b.len() != self.dim {
            return Err(Error::Shape("affine map has wrong size".into()));
        }
        self.params[o..o + dd].copy_from_slice(a);
        self.params[o + dd..o + dd + self.dim].copy_from_slice(b);
        self.revision += 1;
        Ok(())
    }
}

impl NoisePredictor for PerStepAffine {
    fn data_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &SampleBatch, t: &[usize]) -> Result<SampleBatch> {
        check_inputs(self.dim, x, t)?;
        let d = self.dim;
        let mut out = SampleBatch::zeros(x.n(), d);
        for (i, &ti) in t.iter().enumerate() {
            let (a, b) = self.map(ti)?;
            let xr = x.row(i);
            let or = out.row_mut(i);
            for r in 0..d {
                or[r] = b[r] + a[r * d..(r + 1) * d].iter().zip(xr).map(|(p, q)| p * q).sum::<f64>();
            }
        }
        Ok(out)
    }
}

impl Trainable for PerStepAffine {
    type Cache = AffineCache;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.revision += 1;
        &mut self.params
    }

    fn forward_cached(&self, x: &SampleBatch, t: &[usize]) -> Result<(SampleBatch, AffineCache)> {
        let out = self.predict(x, t)?;
        Ok((
            out,
            AffineCache {
                revision: self.revision,
                x: x.clone(),
                t: t.to_vec(),
            },
        ))
    }

    fn backward(&self, cache: &AffineCache, upstream: &SampleBatch) -> Result<GradBundle> {
        if cache.revision != self.revision {
            return Err(Error::Usage("backward called with a stale cache".into()));
        }
        cache.x.same_shape(upstream, "affine backward")?;
        let d = self.dim;
        let mut g = GradBundle::zeros(self.params.len());
        for (i, &ti) in cache.t.iter().enumerate() {
            let o = self.offset(ti)?;
            let (xr, ur) = (cache.x.row(i), upstream.row(i));
            let gv = g.values_mut();
            for r in 0..d {
                for c in 0..d {
                    gv[o + r * d + c] += ur[r] * xr[c];
                }
                gv[o + d * d + r] += ur[r];
            }
        }
        Ok(g)
    }
}
