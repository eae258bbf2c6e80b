use super::{time_embed_into, GradBundle, Trainable};
use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::predictor::{check_inputs, NoisePredictor};
use crate::rng;

/// The only hidden nonlinearity: `silu(z) = z * sigmoid(z)`.
pub const ACTIVATION: &str = "silu";

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Dense SiLU network taking `[x, time_embed(t)]` and returning noise.
///
/// Parameters are one flat vector, layer by layer: the weight matrix of
/// shape `[fan_in][fan_out]` in row-major order, then the bias.
#[derive(Debug, Clone)]
pub struct MlpParams {
    layer_dims: Vec<usize>,
    data_dim: usize,
    time_embed_dim: usize,
    steps: usize,
    params: Vec<f64>,
    /// `(weight_offset, bias_offset)` per layer.
    offsets: Vec<(usize, usize)>,
    revision: u64,
}

/// Equality ignores the cache revision counter.
impl PartialEq for MlpParams {
    fn eq(&self, other: &Self) -> bool {
        self.layer_dims == other.layer_dims && self.data_dim == other.data_dim && self.time_embed_dim == other.time_embed_dim && self.steps == other.steps && self.params == other.params
    }
}

fn layout(layer_dims: &[usize]) -> (Vec<(usize, usize)>, usize) {
    let mut offsets = Vec::with_capacity(layer_dims.len() - 1);
    let mut at = 0;
    for w in layer_dims.windows(2) {
        let bias = at + w[0] * w[1];
        offsets.push((at, bias));
        at = bias + w[1];
    }
    (offsets, at)
}

/// He-normal weights from the `init` stream of `seed`, zero biases.
pub fn init_params(
    data_dim: usize,
    hidden_dims: &[usize],
    time_embed_dim: usize,
    steps: usize,
    seed: u64,
) -> Result<MlpParams> {
    let mut net = MlpParams::zeros(data_dim, hidden_dims, time_embed_dim, steps)?;
    let mut r = rng::stream(seed, "init");
    for l in 0..net.offsets.len() {
        let (w, b) = net.offsets[l];
        let scale = (2.0 / net.layer_dims[l] as f64).sqrt();
        for v in &mut net.params[w..b] {
            *v = rng::normal(&mut r) * scale;
        }
    }
    Ok(net)
}

pub struct MlpCache {
    revision: u64,
    n: usize,
    /// Input to each layer, row-major `n x layer_dims[l]`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
}

impl MlpParams {
    pub fn zeros(
        data_dim: usize,
        hidden_dims: &[usize],
        time_embed_dim: usize,
        steps: usize,
    ) -> Result<Self> {
        if data_dim == 0 {
            return Err(Error::config("model.data_dim", "must be at least 1"));
        }
        if hidden_dims.contains(&0) {
            return Err(Error::config("net.hidden", "hidden widths must be at least 1"));
        }
        if time_embed_dim == 0 || !time_embed_dim.is_multiple_of(2) {
            return Err(Error::config(
                "net.time_embed_dim",
                format!("must be a positive even number, got {time_embed_dim}"),
            ));
        }
        if steps == 0 {
            return Err(Error::config("schedule.T", "must be at least 1"));
        }
        let mut layer_dims = vec![data_dim + time_embed_dim];
        layer_dims.extend_from_slice(hidden_dims);
        layer_dims.push(data_dim);
        let (offsets, total) = layout(&layer_dims);
        Ok(Self {
            layer_dims,
            data_dim,
            time_embed_dim,
            steps,
            params: vec![0.0; total],
            offsets,
            revision: 0,
        })
    }

    pub fn with_params(mut self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} parameters for a network with {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params = params;
        self.revision += 1;
        Ok(self)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.layer_dims[1..self.layer_dims.len() - 1]
    }

    pub fn time_embed_dim(&self) -> usize {
        self.time_embed_dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn layer_count(&self) -> usize {
        self.offsets.len()
    }

    /// Weight matrix (`[fan_in][fan_out]`) and bias of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (w, b) = self.offsets[l];
        (&self.params[w..b], &self.params[b..b + self.layer_dims[l + 1]])
    }

    fn build_input(&self, x: &SampleBatch, t: &[usize]) -> Result<Vec<f64>> {
        let width = self.layer_dims[0];
        let d = self.data_dim;
        let mut input = vec![0.0; x.n() * width];
        let mut last: Option<usize> = None;
        for (i, (row, &ti)) in x.rows().zip(t).enumerate() {
            let dst = &mut input[i * width..(i + 1) * width];
            dst[..d].copy_from_slice(row);
            if last == Some(ti) {
                let (prev, cur) = input.split_at_mut(i * width);
                cur[d..width].copy_from_slice(&prev[(i - 1) * width + d..i * width]);
            } else {
                time_embed_into(ti, self.steps, &mut dst[d..])?;
                last = Some(ti);
            }
        }
        Ok(input)
    }

    fn run(&self, x: &SampleBatch, t: &[usize], keep: bool) -> Result<(SampleBatch, Option<MlpCache>)> {
        check_inputs(self.data_dim, x, t)?;
        x.ensure_finite("network input")?;
        let n = x.n();
        let mut a = self.build_input(x, t)?;
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        let layers = self.layer_count();
        for l in 0..layers {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let (w, b) = self.layer(l);
            let mut z = Vec::with_capacity(n * fan_out);
            for r in 0..n {
                let start = z.len();
                z.extend_from_slice(b);
                let zr = &mut z[start..];
                let ar = &a[r * fan_in..(r + 1) * fan_in];
                for (i, &ai) in ar.iter().enumerate() {
                    let wi = &w[i * fan_out..(i + 1) * fan_out];
                    for (zo, wo) in zr.iter_mut().zip(wi) {
                        *zo += ai * wo;
                    }
                }
            }
            let next = if l + 1 < layers {
                z.iter().map(|&v| silu(v)).collect()
            } else {
                Vec::new()
            };
            if keep {
                inputs.push(std::mem::take(&mut a));
            }
            if l + 1 < layers {
                if keep {
                    pre.push(z);
                }
                a = next;
            } else {
                a = z;
            }
        }
        let out = SampleBatch::new(n, self.data_dim, a)?;
        let cache = keep.then_some(MlpCache {
            revision: self.revision,
            n,
            inputs,
            pre,
        });
        Ok((out, cache))
    }

    pub fn forward(&self, x: &SampleBatch, t: &[usize]) -> Result<(SampleBatch, MlpCache)> {
        let (out, cache) = self.run(x, t, true)?;
        Ok((out, cache.expect("cache requested")))
    }

    pub fn backward(&self, cache: &MlpCache, upstream: &SampleBatch) -> Result<GradBundle> {
        if cache.revision != self.revision || cache.inputs.len() != self.layer_count() {
            return Err(Error::Usage(
                "backward called with a cache from different or since-updated parameters".into(),
            ));
        }
        if upstream.n() != cache.n || upstream.dim() != self.data_dim {
            return Err(Error::Shape(format!(
                "upstream {}x{} for a forward pass of {}x{}",
                upstream.n(),
                upstream.dim(),
                cache.n,
                self.data_dim
            )));
        }
        let n = cache.n;
        let mut grads = GradBundle::zeros(self.params.len());
        let mut delta = upstream.values().to_vec();
        for l in (0..self.layer_count()).rev() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let (w_off, b_off) = self.offsets[l];
            let a = &cache.inputs[l];
            {
                let g = grads.values_mut();
                let (gw, gb) = g[w_off..b_off + fan_out].split_at_mut(b_off - w_off);
                for r in 0..n {
                    let dr = &delta[r * fan_out..(r + 1) * fan_out];
                    for (gbo, d) in gb.iter_mut().zip(dr) {
                        *gbo += d;
                    }
                    let ar = &a[r * fan_in..(r + 1) * fan_in];
                    for (i, &ai) in ar.iter().enumerate() {
                        let gwi = &mut gw[i * fan_out..(i + 1) * fan_out];
                        for (g, d) in gwi.iter_mut().zip(dr) {
                            *g += ai * d;
                        }
                    }
                }
            }
            if l > 0 {
                let (w, _) = self.layer(l);
                let z = &cache.pre[l - 1];
                let mut prev = vec![0.0; n * fan_in];
                for r in 0..n {
                    let dr = &delta[r * fan_out..(r + 1) * fan_out];
                    for i in 0..fan_in {
                        let wi = &w[i * fan_out..(i + 1) * fan_out];
                        let s: f64 = wi.iter().zip(dr).map(|(a, b)| a * b).sum();
                        prev[r * fan_in + i] = s * silu_grad(z[r * fan_in + i]);
                    }
                }
                delta = prev;
            }
        }
        debug_assert_eq!(grads.len(), self.params.len());
        Ok(grads)
    }
}

impl NoisePredictor for MlpParams {
    fn data_dim(&self) -> usize {
        self.data_dim
    }

    fn predict(&self, x: &SampleBatch, t: &[usize]) -> Result<SampleBatch> {
        Ok(self.run(x, t, false)?.0)
    }
}

impl Trainable for MlpParams {
    type Cache = MlpCache;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.revision += 1;
        &mut self.params
    }

    fn forward_cached(&self, x: &SampleBatch, t: &[usize]) -> Result<(SampleBatch, MlpCache)> {
        self.forward(x, t)
    }

    fn backward(&self, cache: &MlpCache, upstream: &SampleBatch) -> Result<crate::smallnet::GradBundle> {
        MlpParams::backward(self, cache, upstream)
    }
}
