//! DDIM and PLMS sampling over stride schedules, plus latent interpolation.
//!
//! Sample `i` of a run owns substream `i` of the `sampler` stream: its latent
//! is drawn first, then any per-step noise. Batches are processed in fixed
//! chunks, so serial and parallel runs give identical output.

use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::par::{self, ExecMode};
use crate::predictor::NoisePredictor;
use crate::rng::{self, StreamRng};
use crate::schedule::{NoiseSchedule, StrideSchedule};

pub const SAMPLE_CHUNK: usize = 64;

/// `(x - sqrt(1 - ab) eps) / sqrt(ab)`.
pub fn predict_x0(x: &SampleBatch, eps_hat: &SampleBatch, abar_t: f64) -> Result<SampleBatch> {
    if !(abar_t > 0.0 && abar_t <= 1.0) {
        return Err(Error::Domain(format!("alpha_bar must lie in (0, 1], got {abar_t}")));
    }
    x.same_shape(eps_hat, "predict_x0")?;
    let (s, n) = (abar_t.sqrt(), (1.0 - abar_t).sqrt());
    let mut out = x.clone();
    for (o, e) in out.values_mut().iter_mut().zip(eps_hat.values()) {
        *o = (*o - n * e) / s;
    }
    Ok(out)
}

/// One generalized DDIM transition `t_from -> t_to`.
///
/// `z` is required only when the step is stochastic (`eta > 0` and
/// `t_to > 0`); otherwise it is ignored.
pub fn ddim_step(
    x: &SampleBatch,
    eps_hat: &SampleBatch,
    sched: &NoiseSchedule,
    t_from: usize,
    t_to: usize,
    eta: f64,
    z: Option<&SampleBatch>,
) -> Result<SampleBatch> {
    let sigma = if t_to == 0 {
        sched.ddim_sigma(t_from, t_to, eta)?;
        0.0
    } else {
        sched.ddim_sigma(t_from, t_to, eta)?
    };
    let ab_from = sched.alpha_bar(t_from)?;
    let ab_to = sched.alpha_bar(t_to)?;
    let dir2 = 1.0 - ab_to - sigma * sigma;
    if dir2 < 0.0 {
        return Err(Error::Numeric(format!(
            "1 - alpha_bar - sigma^2 = {dir2} < 0 for step {t_from} -> {t_to} at eta {eta}"
        )));
    }
    let x0 = predict_x0(x, eps_hat, ab_from)?;
    let (a, d) = (ab_to.sqrt(), dir2.sqrt());
    let mut out = x0;
    for (o, e) in out.values_mut().iter_mut().zip(eps_hat.values()) {
        *o = a * *o + d * e;
    }
    if sigma > 0.0 {
        let z = z.ok_or_else(|| Error::Usage("stochastic DDIM step needs noise".into()))?;
        x.same_shape(z, "ddim_step noise")?;
        for (o, zi) in out.values_mut().iter_mut().zip(z.values()) {
            *o += sigma * zi;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Ddim,
    Pndm,
}

impl SamplerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ddim" => Some(SamplerKind::Ddim),
            "pndm" => Some(SamplerKind::Pndm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    pub eta: f64,
    pub stride: StrideSchedule,
    pub record_trajectory: bool,
}

impl SamplerSpec {
    pub fn ddim(stride: StrideSchedule, eta: f64) -> Self {
        Self {
            kind: SamplerKind::Ddim,
            eta,
            stride,
            record_trajectory: false,
        }
    }

    /// PLMS runs the deterministic path only, so `eta` is fixed at zero.
    pub fn pndm(stride: StrideSchedule) -> Self {
        Self {
            kind: SamplerKind::Pndm,
            eta: 0.0,
            stride,
            record_trajectory: false,
        }
    }

    pub fn with_trajectory(mut self, on: bool) -> Self {
        self.record_trajectory = on;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::config("eta", format!("must lie in [0, 1], got {}", self.eta)));
        }
        if self.kind == SamplerKind::Pndm {
            if self.eta != 0.0 {
                return Err(Error::config("eta", "the pndm sampler is deterministic; eta must be 0"));
            }
            if self.stride.len() < 4 {
                return Err(Error::config(
                    "steps",
                    format!(
                        "pndm needs at least 4 steps for its warmup, got {}; use the ddim sampler instead",
                        self.stride.len()
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// States visited by a sampling run, from the latent down to `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub states: Vec<(usize, SampleBatch)>,
}

/// Latents for samples `0..n`, each from its own substream.
pub fn draw_latents(n: usize, dim: usize, seed: u64) -> SampleBatch {
    let mut out = SampleBatch::zeros(n, dim);
    for i in 0..n {
        let mut r = rng::substream(seed, "sampler", i as u64);
        rng::fill_normal(&mut r, out.row_mut(i));
    }
    out
}

/// The PLMS fourth-order combination of the newest four predictions
/// (`hist[0]` oldest).
pub fn plms_combine(hist: [&SampleBatch; 4]) -> SampleBatch {
    let mut out = hist[3].clone();
    let [e3, e2, e1] = [hist[0].values(), hist[1].values(), hist[2].values()];
    for (i, o) in out.values_mut().iter_mut().enumerate() {
        *o = (55.0 * *o - 59.0 * e1[i] + 37.0 * e2[i] - 9.0 * e3[i]) / 24.0;
    }
    out
}

fn run_chunk<P: NoisePredictor + ?Sized>(
    predictor: &P,
    sched: &NoiseSchedule,
    spec: &SamplerSpec,
    mut x: SampleBatch,
    mut rngs: Vec<StreamRng>,
) -> Result<(SampleBatch, Vec<(usize, SampleBatch)>)> {
    let n = x.n();
    let transitions = spec.stride.transitions();
    let mut traj = Vec::new();
    if spec.record_trajectory {
        traj.push((transitions[0].0, x.clone()));
    }
    let mut hist: Vec<SampleBatch> = Vec::new();
    for (i, &(from, to)) in transitions.iter().enumerate() {
        let e = predictor.predict(&x, &vec![from; n])?;
        e.ensure_finite("noise prediction")?;
        let eps = match spec.kind {
            SamplerKind::Pndm if i >= 3 => plms_combine([&hist[i - 3], &hist[i - 2], &hist[i - 1], &e]),
            _ => e.clone(),
        };
        if spec.kind == SamplerKind::Pndm {
            hist.push(e);
        }
        let stochastic = spec.eta > 0.0 && to > 0;
        let z = if stochastic {
            let mut z = SampleBatch::zeros(n, x.dim());
            for (r, row) in rngs.iter_mut().enumerate() {
                rng::fill_normal(row, z.row_mut(r));
            }
            Some(z)
        } else {
            None
        };
        x = ddim_step(&x, &eps, sched, from, to, spec.eta, z.as_ref())?;
        if spec.record_trajectory {
            traj.push((to, x.clone()));
        }
    }
    Ok((x, traj))
}

fn check_stride(sched: &NoiseSchedule, spec: &SamplerSpec) -> Result<()> {
    spec.validate()?;
    if spec.stride.steps().last().is_some_and(|&s| s > sched.steps()) {
        return Err(Error::config("steps", "stride exceeds the schedule length"));
    }
    Ok(())
}

fn assemble(
    parts: Vec<(SampleBatch, Vec<(usize, SampleBatch)>)>,
    dim: usize,
    record: bool,
) -> Result<(SampleBatch, Option<TrajectoryRecord>)> {
    let traj = if record {
        let len = parts.first().map_or(0, |p| p.1.len());
        let mut states = Vec::with_capacity(len);
        for s in 0..len {
            let t = parts[0].1[s].0;
            let pieces: Vec<SampleBatch> = parts.iter().map(|p| p.1[s].1.clone()).collect();
            states.push((t, SampleBatch::concat(&pieces, dim)?));
        }
        Some(TrajectoryRecord { states })
    } else {
        None
    };
    let xs: Vec<SampleBatch> = parts.into_iter().map(|p| p.0).collect();
    Ok((SampleBatch::concat(&xs, dim)?, traj))
}

/// Draws `n` latents from `seed` and runs the sampler described by `spec`.
pub fn sample<P: NoisePredictor + ?Sized>(
    predictor: &P,
    sched: &NoiseSchedule,
    spec: &SamplerSpec,
    n: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<(SampleBatch, Option<TrajectoryRecord>)> {
    check_stride(sched, spec)?;
    let dim = predictor.data_dim();
    let chunks = par::chunk_ranges(n, SAMPLE_CHUNK);
    let parts = par::try_map(mode, &chunks, |r| {
        let mut rngs: Vec<StreamRng> = r.clone().map(|i| rng::substream(seed, "sampler", i as u64)).collect();
        let mut x = SampleBatch::zeros(r.len(), dim);
        for (j, g) in rngs.iter_mut().enumerate() {
            rng::fill_normal(g, x.row_mut(j));
        }
        run_chunk(predictor, sched, spec, x, rngs)
    })?;
    if n == 0 {
        let traj = spec.record_trajectory.then(|| TrajectoryRecord { states: Vec::new() });
        return Ok((SampleBatch::zeros(0, dim), traj));
    }
    assemble(parts, dim, spec.record_trajectory)
}

pub fn ddim_sample<P: NoisePredictor + ?Sized>(
    predictor: &P,
    sched: &NoiseSchedule,
    spec: &SamplerSpec,
    n: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<(SampleBatch, Option<TrajectoryRecord>)> {
    if spec.kind != SamplerKind::Ddim {
        return Err(Error::Usage("ddim_sample called with a non-ddim spec".into()));
    }
    sample(predictor, sched, spec, n, seed, mode)
}

pub fn pndm_sample<P: NoisePredictor + ?Sized>(
    predictor: &P,
    sched: &NoiseSchedule,
    stride: &StrideSchedule,
    n: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<SampleBatch> {
    Ok(sample(predictor, sched, &SamplerSpec::pndm(stride.clone()), n, seed, mode)?.0)
}

/// Deterministically decodes given latents (`eta` must be 0).
pub fn decode<P: NoisePredictor + ?Sized>(
    predictor: &P,
    sched: &NoiseSchedule,
    spec: &SamplerSpec,
    latents: &SampleBatch,
    mode: ExecMode,
) -> Result<SampleBatch> {
    check_stride(sched, spec)?;
    if spec.eta != 0.0 {
        return Err(Error::config("eta", "decoding fixed latents requires eta = 0"));
    }
    if latents.dim() != predictor.data_dim() {
        return Err(Error::Shape("latent width differs from the model".into()));
    }
    let spec = SamplerSpec {
        record_trajectory: false,
        ..spec.clone()
    };
    let chunks = par::chunk_ranges(latents.n(), SAMPLE_CHUNK);
    let parts = par::try_map(mode, &chunks, |r| {
        run_chunk(predictor, sched, &spec, latents.slice_rows(r.clone()), Vec::new())
    })?;
    Ok(assemble(parts, latents.dim(), false)?.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum InterpMode {
    #[default]
    Spherical,
    Linear,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Spherical interpolation, falling back to linear below a 1e-6 angle.
pub fn slerp(z1: &[f64], z2: &[f64], alpha: f64) -> Result<Vec<f64>> {
    interpolate(z1, z2, alpha, InterpMode::Spherical)
}

pub fn interpolate(z1: &[f64], z2: &[f64], alpha: f64, mode: InterpMode) -> Result<Vec<f64>> {
    if z1.len() != z2.len() {
        return Err(Error::Shape("interpolating vectors of different length".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let (n1, n2) = (norm(z1), norm(z2));
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::Domain("cannot interpolate a zero vector".into()));
    }
    if alpha == 0.0 {
        return Ok(z1.to_vec());
    }
    if alpha == 1.0 {
        return Ok(z2.to_vec());
    }
    let cos = (z1.iter().zip(z2).map(|(a, b)| a * b).sum::<f64>() / (n1 * n2)).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let (w1, w2) = if mode == InterpMode::Linear || theta < 1e-6 {
        (1.0 - alpha, alpha)
    } else {
        let s = theta.sin();
        (((1.0 - alpha) * theta).sin() / s, (alpha * theta).sin() / s)
    };
    Ok(z1.iter().zip(z2).map(|(a, b)| w1 * a + w2 * b).collect())
}

/// `m` weights evenly spaced on `[0, 1]`, endpoints included.
pub fn alpha_grid(m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..m).map(|i| i as f64 / (m - 1) as f64).collect(),
    }
}

/// Decodes the interpolation between two latent batches at every alpha.
/// Each latent batch is treated as one flat vector.
pub fn interpolate_run<P: NoisePredictor + ?Sized>(
    predictor: &P,
    sched: &NoiseSchedule,
    stride: &StrideSchedule,
    z1: &SampleBatch,
    z2: &SampleBatch,
    alphas: &[f64],
    mode: InterpMode,
    exec: ExecMode,
) -> Result<Vec<SampleBatch>> {
    z1.same_shape(z2, "interpolation latents")?;
    let spec = SamplerSpec::ddim(stride.clone(), 0.0);
    alphas
        .iter()
        .map(|&a| {
            let z = SampleBatch::new(z1.n(), z1.dim(), interpolate(z1.values(), z2.values(), a, mode)?)?;
            decode(predictor, sched, &spec, &z, exec)
        })
        .collect()
}
