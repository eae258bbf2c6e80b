//! Forward noising, the base and skip-step losses, and the training loop.
//!
//! One iteration draws `(x0, t, eps)` once and evaluates both terms on it:
//!
//! * base: `|| eps - f(sqrt(ab_t) x0 + sqrt(1 - ab_t) eps, t) ||^2`
//! * skip: `|| eps - c_t * f(sqrt(ab_{t+k}) x0 + sqrt(1 - ab_{t+k}) eps, t + k) ||^2`
//!
//! where `ab` is the cumulative alpha product and `c_t` the skip coefficient
//! of [`SkipPlan`]. Gradients of the weighted sum flow through both network
//! evaluations.

use std::time::Instant;

use rand::Rng;

use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::par::{self, ExecMode};
use crate::predictor::NoisePredictor;
use crate::rng::{self, StreamRng};
use crate::schedule::{NoiseSchedule, ScheduleParams, SkipPlan};
use crate::smallnet::{adam_step, AdamConfig, AdamState, GradBundle, Trainable};

/// Rows per work unit. Fixed so serial and parallel runs reduce identically.
pub const CHUNK_ROWS: usize = 32;

/// Combined loss above this value aborts training as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Which loss term the weight `tau` multiplies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TauConvention {
    /// `(1 - tau) * L0 + tau * Lskip`.
    #[default]
    TauOnSkip,
    /// `tau * L0 + (1 - tau) * Lskip`.
    TauOnBase,
}

impl TauConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            TauConvention::TauOnSkip => "skip",
            TauConvention::TauOnBase => "base",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "skip" => Some(TauConvention::TauOnSkip),
            "base" => Some(TauConvention::TauOnBase),
            _ => None,
        }
    }

    /// `(w_base, w_skip)`.
    pub fn weights(self, tau: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::config("train.tau", format!("must lie in [0, 1], got {tau}")));
        }
        Ok(match self {
            TauConvention::TauOnSkip => (1.0 - tau, tau),
            TauConvention::TauOnBase => (tau, 1.0 - tau),
        })
    }
}

/// How base timesteps are drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TimePolicy {
    /// Uniform on `2..=T-k`; both terms use every row.
    #[default]
    SkipRange,
    /// Uniform on `1..=T`; the skip term drops rows outside `2..=T-k`
    /// (they contribute zero, the batch mean still divides by the full size).
    FullRange,
}

impl TimePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            TimePolicy::SkipRange => "skip_range",
            TimePolicy::FullRange => "full_range",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "skip_range" => Some(TimePolicy::SkipRange),
            "full_range" => Some(TimePolicy::FullRange),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// `lr / sqrt(1 + i / scale)` at iteration `i`.
    InvSqrt { scale: f64 },
}

impl LrSchedule {
    pub fn rate(self, base: f64, iteration: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::InvSqrt { scale } => base / (1.0 + iteration as f64 / scale).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub schedule: ScheduleParams,
    pub model: ModelSpec,
    pub tau: f64,
    pub tau_convention: TauConvention,
    pub skip: usize,
    pub coeff_cap: Option<f64>,
    pub time_policy: TimePolicy,
    pub adam: AdamConfig,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleParams::default(),
            model: ModelSpec::default(),
            tau: 0.5,
            tau_convention: TauConvention::default(),
            skip: 10,
            coeff_cap: None,
            time_policy: TimePolicy::default(),
            adam: AdamConfig::default(),
            lr_schedule: LrSchedule::default(),
            batch_size: 128,
            iterations: 1000,
            seed: 1234,
            snapshot_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.tau_convention.weights(self.tau)?;
        let steps = self.schedule.steps;
        self.schedule.build()?;
        if self.skip == 0 || self.skip + 2 > steps {
            return Err(Error::config(
                "train.skip",
                format!("need 1 <= skip <= T - 2 (T = {steps}), got {}", self.skip),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::config("train.iterations", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::config("train.adam_beta1", "Adam betas must lie in [0, 1)"));
        }
        if let LrSchedule::InvSqrt { scale } = self.lr_schedule {
            if !(scale > 0.0) {
                return Err(Error::config("train.lr_decay_scale", "must be positive"));
            }
        }
        if let Some(c) = self.coeff_cap {
            if !(c > 0.0) {
                return Err(Error::config("train.coeff_cap", "must be positive"));
            }
        }
        if self.snapshot_every == 0 {
            return Err(Error::config("train.snapshot_every", "must be at least 1"));
        }
        if let ModelSpec::Mlp {
            hidden,
            time_embed_dim,
        } = &self.model
        {
            if hidden.contains(&0) {
                return Err(Error::config("net.hidden", "widths must be at least 1"));
            }
            if *time_embed_dim == 0 || time_embed_dim % 2 != 0 {
                return Err(Error::config("net.time_embed_dim", "must be a positive even number"));
            }
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> Result<(f64, f64)> {
        self.tau_convention.weights(self.tau)
    }
}

/// `sqrt(ab_t) x0 + sqrt(1 - ab_t) eps` with one timestep for every row.
pub fn q_sample(sched: &NoiseSchedule, x0: &SampleBatch, t: usize, eps: &SampleBatch) -> Result<SampleBatch> {
    q_sample_rows(sched, x0, &vec![t; x0.n()], eps)
}

/// [`q_sample`] with a timestep per row.
pub fn q_sample_rows(
    sched: &NoiseSchedule,
    x0: &SampleBatch,
    t: &[usize],
    eps: &SampleBatch,
) -> Result<SampleBatch> {
    x0.same_shape(eps, "q_sample")?;
    if t.len() != x0.n() {
        return Err(Error::Shape(format!("{} timesteps for {} rows", t.len(), x0.n())));
    }
    let mut out = x0.clone();
    for (i, &ti) in t.iter().enumerate() {
        let ab = sched.alpha_bar(ti)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for (o, e) in out.row_mut(i).iter_mut().zip(eps.row(i)) {
            *o = a * *o + b * e;
        }
    }
    Ok(out)
}

fn sq_residual_sum(target: &SampleBatch, pred: &SampleBatch, scale: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, (tr, pr)) in target.rows().zip(pred.rows()).enumerate() {
        for (a, b) in tr.iter().zip(pr) {
            let r = a - scale[i] * b;
            s += r * r;
        }
    }
    s
}

/// Mean over rows of `|| eps - f(x_t, t) ||^2`.
pub fn loss_base<P: NoisePredictor + ?Sized>(
    predictor: &P,
    sched: &NoiseSchedule,
    x0: &SampleBatch,
    t: usize,
    eps: &SampleBatch,
) -> Result<f64> {
    loss_base_rows(predictor, sched, x0, &vec![t; x0.n()], eps)
}

pub fn loss_base_rows<P: NoisePredictor + ?Sized>(
    predictor: &P,
    sched: &NoiseSchedule,
    x0: &SampleBatch,
    t: &[usize],
    eps: &SampleBatch,
) -> Result<f64> {
    if let Some(&bad) = t.iter().find(|&&ti| ti == 0 || ti > sched.steps()) {
        return Err(Error::Index {
            index: bad,
            lo: 1,
            hi: sched.steps(),
        });
    }
    let xt = q_sample_rows(sched, x0, t, eps)?;
    let pred = predictor.predict(&xt, t)?;
    pred.ensure_finite("base-loss prediction")?;
    Ok(sq_residual_sum(eps, &pred, &vec![1.0; x0.n()]) / x0.n().max(1) as f64)
}

/// Mean over rows of `|| eps - c_t f(x_{t+k}, t+k) ||^2`; `t` must lie in
/// the plan's base range.
pub fn loss_skip<P: NoisePredictor + ?Sized>(
    predictor: &P,
    sched: &NoiseSchedule,
    plan: &SkipPlan,
    x0: &SampleBatch,
    t: usize,
    eps: &SampleBatch,
) -> Result<f64> {
    plan.coefficient(t)?;
    loss_skip_rows(predictor, sched, plan, x0, &vec![t; x0.n()], eps)
}

/// Per-row skip loss. Rows whose base timestep lies outside the plan's range
/// contribute zero; the mean still divides by the total row count.
pub fn loss_skip_rows<P: NoisePredictor + ?Sized>(
    predictor: &P,
    sched: &NoiseSchedule,
    plan: &SkipPlan,
    x0: &SampleBatch,
    t: &[usize],
    eps: &SampleBatch,
) -> Result<f64> {
    let keep: Vec<usize> = (0..t.len()).filter(|&i| plan.contains(t[i])).collect();
    let n = x0.n().max(1) as f64;
    if keep.is_empty() {
        return Ok(0.0);
    }
    let x0k = x0.select_rows(&keep);
    let epsk = eps.select_rows(&keep);
    let tk: Vec<usize> = keep.iter().map(|&i| t[i] + plan.skip()).collect();
    let coeffs = keep
        .iter()
        .map(|&i| plan.coefficient(t[i]))
        .collect::<Result<Vec<_>>>()?;
    let xs = q_sample_rows(sched, &x0k, &tk, &epsk)?;
    let pred = predictor.predict(&xs, &tk)?;
    pred.ensure_finite("skip-loss prediction")?;
    Ok(sq_residual_sum(&epsk, &pred, &coeffs) / n)
}

pub fn combined_loss(l0: f64, lskip: f64, tau: f64, convention: TauConvention) -> Result<f64> {
    let (w0, w1) = convention.weights(tau)?;
    Ok(w0 * l0 + w1 * lskip)
}

/// Draws one base timestep under `policy`.
pub fn sample_base_time<R: Rng + ?Sized>(rng: &mut R, steps: usize, k: usize, policy: TimePolicy) -> Result<usize> {
    match policy {
        TimePolicy::SkipRange => {
            if steps < k + 2 {
                return Err(Error::config(
                    "train.skip",
                    format!("base range 2..={} is empty for T = {steps}", steps as i64 - k as i64),
                ));
            }
            Ok(rng.random_range(2..=steps - k))
        }
        TimePolicy::FullRange => {
            if steps == 0 {
                return Err(Error::config("schedule.T", "must be at least 1"));
            }
            Ok(rng.random_range(1..=steps))
        }
    }
}

/// Per-step loss values.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l0: f64,
    pub lskip: f64,
    pub combined: f64,
    /// Base timestep drawn for each row.
    pub t: Vec<usize>,
}

/// One shared `(x0, t, eps)` draw.
#[derive(Debug, Clone)]
pub struct StepDraw {
    pub x0: SampleBatch,
    pub t: Vec<usize>,
    pub eps: SampleBatch,
}

#[derive(Debug, Clone)]
pub struct StepGrads {
    pub loss: LossBreakdown,
    pub base: GradBundle,
    /// `None` when the skip weight is zero and the term was not evaluated.
    pub skip: Option<GradBundle>,
    pub combined: GradBundle,
}

/// Everything the objective needs besides the model and the draw.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub sched: &'a NoiseSchedule,
    pub plan: &'a SkipPlan,
    pub w_base: f64,
    pub w_skip: f64,
}

struct ChunkOut {
    l0: f64,
    lskip: f64,
    base: GradBundle,
    skip: Option<GradBundle>,
}

fn chunk_grads<M: Trainable>(
    model: &M,
    obj: &Objective<'_>,
    draw: &StepDraw,
    rows: std::ops::Range<usize>,
    total: f64,
) -> Result<ChunkOut> {
    let x0 = draw.x0.slice_rows(rows.clone());
    let eps = draw.eps.slice_rows(rows.clone());
    let t = &draw.t[rows];

    let xt = q_sample_rows(obj.sched, &x0, t, &eps)?;
    let (pred, cache) = model.forward_cached(&xt, t)?;
    pred.ensure_finite("base-loss prediction")?;
    let mut up = pred.clone();
    let mut l0 = 0.0;
    for (u, e) in up.values_mut().iter_mut().zip(eps.values()) {
        let r = *u - e;
        l0 += r * r;
        *u = 2.0 * r / total;
    }
    let base = model.backward(&cache, &up)?;

    let mut lskip = 0.0;
    let skip = if obj.w_skip != 0.0 {
        let keep: Vec<usize> = (0..t.len()).filter(|&i| obj.plan.contains(t[i])).collect();
        if keep.is_empty() {
            Some(GradBundle::zeros(model.param_count()))
        } else {
            let x0k = x0.select_rows(&keep);
            let epsk = eps.select_rows(&keep);
            let tk: Vec<usize> = keep.iter().map(|&i| t[i] + obj.plan.skip()).collect();
            let xs = q_sample_rows(obj.sched, &x0k, &tk, &epsk)?;
            let (pred, cache) = model.forward_cached(&xs, &tk)?;
            pred.ensure_finite("skip-loss prediction")?;
            let mut up = pred;
            let d = up.dim();
            for (j, &i) in keep.iter().enumerate() {
                let c = obj.plan.coefficient(t[i])?;
                for (u, e) in up.row_mut(j).iter_mut().zip(&epsk.values()[j * d..(j + 1) * d]) {
                    let r = c * *u - e;
                    lskip += r * r;
                    *u = 2.0 * c * r / total;
                }
            }
            Some(model.backward(&cache, &up)?)
        }
    } else {
        None
    };
    Ok(ChunkOut { l0, lskip, base, skip })
}

/// Losses and gradients of `w_base * L0 + w_skip * Lskip` on one draw.
///
/// Work is split into [`CHUNK_ROWS`]-row chunks reduced in chunk order, so
/// the result does not depend on `mode`.
pub fn loss_and_grads<M: Trainable>(
    model: &M,
    obj: &Objective<'_>,
    draw: &StepDraw,
    mode: ExecMode,
) -> Result<StepGrads> {
    let n = draw.x0.n();
    if n == 0 {
        return Err(Error::Usage("empty training batch".into()));
    }
    draw.x0.same_shape(&draw.eps, "training draw")?;
    let total = n as f64;
    let chunks = par::chunk_ranges(n, CHUNK_ROWS);
    let outs = par::try_map(mode, &chunks, |r| chunk_grads(model, obj, draw, r.clone(), total))?;

    let mut base = GradBundle::zeros(model.param_count());
    let mut skip = (obj.w_skip != 0.0).then(|| GradBundle::zeros(model.param_count()));
    let (mut l0, mut lskip) = (0.0, 0.0);
    for o in &outs {
        l0 += o.l0;
        lskip += o.lskip;
        base.add_assign(&o.base);
        if let (Some(acc), Some(g)) = (skip.as_mut(), o.skip.as_ref()) {
            acc.add_assign(g);
        }
    }
    let (l0, lskip) = (l0 / total, lskip / total);
    let mut combined = base.clone();
    combined.scale(obj.w_base);
    if let Some(g) = &skip {
        for (c, s) in combined.values_mut().iter_mut().zip(g.values()) {
            *c += obj.w_skip * s;
        }
    }
    Ok(StepGrads {
        loss: LossBreakdown {
            l0,
            lskip,
            combined: obj.w_base * l0 + obj.w_skip * lskip,
            t: draw.t.clone(),
        },
        base,
        skip,
        combined,
    })
}

/// Objective value only, through plain predictions (no caches).
pub fn objective_value<P: NoisePredictor + ?Sized>(predictor: &P, obj: &Objective<'_>, draw: &StepDraw) -> Result<f64> {
    let l0 = loss_base_rows(predictor, obj.sched, &draw.x0, &draw.t, &draw.eps)?;
    let lskip = if obj.w_skip != 0.0 {
        loss_skip_rows(predictor, obj.sched, obj.plan, &draw.x0, &draw.t, &draw.eps)?
    } else {
        0.0
    };
    Ok(obj.w_base * l0 + obj.w_skip * lskip)
}

/// Window-averaged losses ending at `iteration` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct LossSnapshot {
    pub iteration: usize,
    pub l0: f64,
    pub lskip: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimingStats {
    pub iterations: usize,
    pub total_s: f64,
    pub mean_s: f64,
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
}

impl TimingStats {
    pub fn from_durations(d: &[f64]) -> Self {
        if d.is_empty() {
            return Self::default();
        }
        let mut s = d.to_vec();
        s.sort_by(f64::total_cmp);
        let total: f64 = d.iter().sum();
        Self {
            iterations: d.len(),
            total_s: total,
            mean_s: total / d.len() as f64,
            median_s: s[s.len() / 2],
            min_s: s[0],
            max_s: s[s.len() - 1],
        }
    }
}

/// Everything recorded about one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub iterations_run: usize,
    pub timing: TimingStats,
    pub snapshots: Vec<LossSnapshot>,
    pub data_hash: String,
    pub checkpoint_hash: Option<String>,
    pub version: String,
    pub abort: Option<String>,
}

impl RunManifest {
    pub fn notes() -> &'static [&'static str] {
        &[
            "skip-term network input uses cumulative alpha_bar at t+k",
            "one (x0, t, eps) draw shared by both loss terms",
        ]
    }
}

/// A failed run: the error plus the manifest up to the failing iteration.
#[derive(Debug, Clone)]
pub struct TrainAbort {
    pub error: Error,
    pub manifest: Box<RunManifest>,
}

impl std::fmt::Display for TrainAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training aborted: {}", self.error)
    }
}

impl std::error::Error for TrainAbort {}

struct Streams {
    data: StreamRng,
    time: StreamRng,
    noise: StreamRng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            data: rng::stream(seed, "data"),
            time: rng::stream(seed, "time"),
            noise: rng::stream(seed, "noise"),
        }
    }

    fn draw(&mut self, dataset: &SampleBatch, cfg: &TrainConfig) -> Result<StepDraw> {
        let b = cfg.batch_size;
        let idx: Vec<usize> = (0..b).map(|_| self.data.random_range(0..dataset.n())).collect();
        let x0 = dataset.select_rows(&idx);
        let t = (0..b)
            .map(|_| sample_base_time(&mut self.time, cfg.schedule.steps, cfg.skip, cfg.time_policy))
            .collect::<Result<Vec<_>>>()?;
        let mut eps = SampleBatch::zeros(b, dataset.dim());
        rng::fill_normal(&mut self.noise, eps.values_mut());
        Ok(StepDraw { x0, t, eps })
    }
}

pub fn data_hash(dataset: &SampleBatch) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update((dataset.n() as u64).to_le_bytes());
    h.update((dataset.dim() as u64).to_le_bytes());
    for v in dataset.values() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Trains `model` in place. Deterministic given `config.seed`.
pub fn train_model<M: Trainable>(
    model: &mut M,
    config: &TrainConfig,
    dataset: &SampleBatch,
    mode: ExecMode,
) -> std::result::Result<RunManifest, TrainAbort> {
    let mut manifest = RunManifest {
        config: config.clone(),
        iterations_run: 0,
        timing: TimingStats::default(),
        snapshots: Vec::new(),
        data_hash: data_hash(dataset),
        checkpoint_hash: None,
        version: crate::VERSION.to_string(),
        abort: None,
    };
    let fail = |error: Error, mut manifest: RunManifest| {
        manifest.abort = Some(error.to_string());
        TrainAbort {
            error,
            manifest: Box::new(manifest),
        }
    };
    let setup = (|| -> Result<(NoiseSchedule, SkipPlan, (f64, f64))> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::Usage("training dataset is empty".into()));
        }
        dataset.ensure_finite("training dataset")?;
        if dataset.dim() != model.data_dim() {
            return Err(Error::Shape(format!(
                "dataset dim {} but model dim {}",
                dataset.dim(),
                model.data_dim()
            )));
        }
        let sched = config.schedule.build()?;
        let plan = SkipPlan::new(&sched, config.skip)?.with_cap(config.coeff_cap)?;
        Ok((sched, plan, config.loss_weights()?))
    })();
    let (sched, plan, (w_base, w_skip)) = match setup {
        Ok(v) => v,
        Err(e) => return Err(fail(e, manifest)),
    };
    let obj = Objective {
        sched: &sched,
        plan: &plan,
        w_base,
        w_skip,
    };
    let mut streams = Streams::new(config.seed);
    let mut adam = AdamState::new(model.param_count(), config.adam);
    let mut durations = Vec::with_capacity(config.iterations);
    let mut window = (0.0, 0.0, 0.0, 0usize);

    for it in 0..config.iterations {
        let start = Instant::now();
        let step = (|| -> Result<LossBreakdown> {
            let draw = streams.draw(dataset, config)?;
            let g = loss_and_grads(model, &obj, &draw, mode)?;
            if !g.loss.combined.is_finite() {
                return Err(Error::Numeric(format!("combined loss is {}", g.loss.combined)));
            }
            if g.loss.combined > DIVERGENCE_LIMIT {
                return Err(Error::Divergence {
                    iteration: it + 1,
                    loss: g.loss.combined,
                });
            }
            adam.config.lr = config.lr_schedule.rate(config.adam.lr, it);
            adam_step(model.params_mut(), &g.combined, &mut adam)?;
            Ok(g.loss)
        })();
        durations.push(start.elapsed().as_secs_f64());
        let loss = match step {
            Ok(l) => l,
            Err(e) => {
                manifest.iterations_run = it;
                manifest.timing = TimingStats::from_durations(&durations);
                return Err(fail(e, manifest));
            }
        };
        window.0 += loss.l0;
        window.1 += loss.lskip;
        window.2 += loss.combined;
        window.3 += 1;
        if (it + 1) % config.snapshot_every == 0 || it + 1 == config.iterations {
            let k = window.3 as f64;
            manifest.snapshots.push(LossSnapshot {
                iteration: it + 1,
                l0: window.0 / k,
                lskip: window.1 / k,
                combined: window.2 / k,
            });
            window = (0.0, 0.0, 0.0, 0);
        }
    }
    manifest.iterations_run = config.iterations;
    manifest.timing = TimingStats::from_durations(&durations);
    Ok(manifest)
}

/// Builds the configured model, trains it and packs a checkpoint.
pub fn train(
    config: &TrainConfig,
    dataset: &SampleBatch,
    mode: ExecMode,
) -> std::result::Result<TrainOutcome, TrainAbort> {
    let model = config
        .model
        .build(dataset.dim().max(1), config.schedule.steps, config.seed);
    let mut model = match model {
        Ok(m) => m,
        Err(error) => {
            return Err(TrainAbort {
                manifest: Box::new(RunManifest {
                    config: config.clone(),
                    iterations_run: 0,
                    timing: TimingStats::default(),
                    snapshots: Vec::new(),
                    data_hash: data_hash(dataset),
                    checkpoint_hash: None,
                    version: crate::VERSION.to_string(),
                    abort: Some(error.to_string()),
                }),
                error,
            })
        }
    };
    let mut manifest = train_model(&mut model, config, dataset, mode)?;
    let checkpoint = crate::checkpoint::Checkpoint::from_model(&model, config, &manifest.data_hash);
    manifest.checkpoint_hash = Some(checkpoint.content_hash());
    Ok(TrainOutcome {
        model,
        checkpoint,
        manifest,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub checkpoint: crate::checkpoint::Checkpoint,
    pub manifest: RunManifest,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{FnPredictor, ZeroPredictor};

    fn b(rows: &[&[f64]]) -> SampleBatch {
        SampleBatch::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn q_sample_cases() {
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
        let x0 = b(&[&[1.0, 0.0]]);
        let eps = b(&[&[0.0, 1.0]]);
        assert_eq!(q_sample(&s, &x0, 0, &eps).unwrap(), x0);
        let out = q_sample(&s, &x0, 2, &eps).unwrap();
        assert!((out.row(0)[0] - 0.72f64.sqrt()).abs() < 1e-15);
        assert!((out.row(0)[1] - 0.28f64.sqrt()).abs() < 1e-15);
        let zero = SampleBatch::zeros(1, 2);
        let scaled = q_sample(&s, &x0, 1, &zero).unwrap();
        assert_eq!(scaled.row(0), &[0.9f64.sqrt(), 0.0]);
        assert!(matches!(q_sample(&s, &x0, 1, &SampleBatch::zeros(2, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn base_loss_exact_and_hand_cases() {
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
        let x0 = b(&[&[1.0, 0.0]]);
        let eps = b(&[&[0.3, -0.4]]);
        // a predictor that recovers eps from x_t exactly
        let ab = 0.72f64;
        let oracle = FnPredictor::new(2, move |x: &[f64], _| {
            vec![(x[0] - ab.sqrt()) / (1.0 - ab).sqrt(), x[1] / (1.0 - ab).sqrt()]
        });
        assert!(loss_base(&oracle, &s, &x0, 2, &eps).unwrap() < 1e-28);
        // zero predictor: residual is eps itself
        let l = loss_base(&ZeroPredictor { dim: 2 }, &s, &x0, 2, &eps).unwrap();
        assert!((l - 0.25).abs() < 1e-15);
        assert!(loss_base(&ZeroPredictor { dim: 2 }, &s, &x0, 0, &eps).is_err());
    }

    #[test]
    fn skip_loss_cancellation() {
        let s = NoiseSchedule::from_betas(vec![0.1; 6]).unwrap();
        let plan = SkipPlan::new(&s, 2).unwrap();
        let x0 = b(&[&[0.5, -1.0]]);
        let eps = b(&[&[1.0, 2.0]]);
        let c = plan.coefficient(2).unwrap();
        let ab4 = s.alpha_bar(4).unwrap();
        let x0c = x0.clone();
        // returns eps / c by inverting the noising at level t + k = 4
        let p = FnPredictor::new(2, move |x: &[f64], t| {
            assert_eq!(t, 4);
            x.iter()
                .zip(x0c.row(0))
                .map(|(xi, x0i)| (xi - ab4.sqrt() * x0i) / (1.0 - ab4).sqrt() / c)
                .collect()
        });
        assert!(loss_skip(&p, &s, &plan, &x0, 2, &eps).unwrap() < 1e-24);
        assert!(matches!(
            loss_skip(&ZeroPredictor { dim: 2 }, &s, &plan, &x0, 5, &eps),
            Err(Error::Range(_))
        ));
        let l = loss_skip(&ZeroPredictor { dim: 2 }, &s, &plan, &x0, 2, &eps).unwrap();
        assert!((l - 5.0).abs() < 1e-15);
    }

    #[test]
    fn combined_conventions() {
        use TauConvention::*;
        assert_eq!(combined_loss(2.0, 5.0, 0.0, TauOnSkip).unwrap(), 2.0);
        assert_eq!(combined_loss(2.0, 5.0, 1.0, TauOnSkip).unwrap(), 5.0);
        assert_eq!(combined_loss(2.0, 5.0, 0.0, TauOnBase).unwrap(), 5.0);
        assert_eq!(combined_loss(2.0, 5.0, 0.5, TauOnSkip).unwrap(), 3.5);
        assert_eq!(combined_loss(2.0, 5.0, 0.5, TauOnBase).unwrap(), 3.5);
        let e = combined_loss(1.0, 1.0, 1.2, TauOnSkip).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "train.tau"));
    }

    #[test]
    fn base_time_ranges() {
        let mut r = rng::stream(1, "t");
        for _ in 0..10_000 {
            let t = sample_base_time(&mut r, 1000, 10, TimePolicy::SkipRange).unwrap();
            assert!((2..=990).contains(&t));
        }
        assert!(sample_base_time(&mut r, 11, 10, TimePolicy::SkipRange).is_err());
        let a: Vec<usize> = {
            let mut r = rng::stream(9, "t");
            (0..20).map(|_| sample_base_time(&mut r, 50, 3, TimePolicy::SkipRange).unwrap()).collect()
        };
        let b: Vec<usize> = {
            let mut r = rng::stream(9, "t");
            (0..20).map(|_| sample_base_time(&mut r, 50, 3, TimePolicy::SkipRange).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation_names_keys() {
        let mut c = TrainConfig {
            tau: 1.2,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "train.tau"));
        c.tau = 0.5;
        c.skip = 999;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "train.skip"));
        c.skip = 10;
        c.iterations = 0;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "train.iterations"));
    }
}
