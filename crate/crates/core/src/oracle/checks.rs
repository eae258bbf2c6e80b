//! The invariant suite behind `oracle-check`, and the minimizer-convergence
//! experiment it reports.

use nalgebra::DMatrix;

use super::{
    analytic_eps, chain_vs_marginal, combined_minimizer_scale, cov_rel_error, exact_sampler_marginal, level_scales,
    AnalyticPredictor, GaussianSpec,
};
use crate::batch::SampleBatch;
use crate::difftrain::{self, LrSchedule, TauConvention, TimePolicy, TrainConfig};
use crate::error::Result;
use crate::model::ModelSpec;
use crate::par::ExecMode;
use crate::rng;
use crate::samplers::{ddim_step, predict_x0, SamplerKind};
use crate::schedule::{build_stride, NoiseSchedule, ScheduleParams, SkipPlan};
use crate::smallnet::{AdamConfig, PerStepAffine, Trainable};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn at_most(name: &'static str, measured: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name,
            measured,
            tolerance,
            pass: measured <= tolerance,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {} measured={:.3e} tolerance={:.3e} {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub checks: Vec<CheckResult>,
}

impl OracleReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_text(&self) -> String {
        self.checks.iter().map(|c| c.line() + "\n").collect()
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// Largest relative deviation among `P_k(1) = ab_k` and
/// `P_k(t) P_m(t + k) = P_{k+m}(t)`. With `exhaustive` every valid triple
/// is tried, otherwise widths are drawn from a fixed set.
pub fn schedule_composition_error(sched: &NoiseSchedule, exhaustive: bool) -> Result<f64> {
    let t_max = sched.steps();
    let mut worst: f64 = 0.0;
    for t in 1..=t_max {
        worst = worst.max(rel(sched.skip_product(1, t)?, sched.alpha_bar(t)?));
    }
    let widths: Vec<usize> = if exhaustive {
        (1..=t_max).collect()
    } else {
        [1, 2, 3, 5, 10, 50, 100].into_iter().filter(|&w| w <= t_max).collect()
    };
    for t in 1..=t_max {
        for &k in &widths {
            for &m in &widths {
                if t + k + m - 1 > t_max {
                    continue;
                }
                let lhs = sched.skip_product(t, k)? * sched.skip_product(t + k, m)?;
                worst = worst.max(rel(lhs, sched.skip_product(t, k + m)?));
            }
        }
    }
    Ok(worst)
}

/// Largest relative gap between an `eta = 1` adjacent DDIM step (with zero
/// noise) and the DDPM posterior mean, and between its sigma and the
/// posterior standard deviation. The mean gap is measured per row against
/// `|c0 x0| + |c1 x_t|`.
pub fn ddpm_identity_error(sched: &NoiseSchedule, seed: u64) -> Result<f64> {
    let mut r = rng::stream(seed, "ddpm_identity");
    let mut worst: f64 = 0.0;
    for t in 1..=sched.steps() {
        let mut x = SampleBatch::zeros(4, 2);
        let mut e = SampleBatch::zeros(4, 2);
        rng::fill_normal(&mut r, x.values_mut());
        rng::fill_normal(&mut r, e.values_mut());
        let zero = SampleBatch::zeros(4, 2);
        let step = ddim_step(&x, &e, sched, t, t - 1, 1.0, Some(&zero))?;
        let x0 = predict_x0(&x, &e, sched.alpha_bar(t)?)?;
        let (c0, c1) = sched.posterior_mean_coefs(t)?;
        // per-row error relative to the size of the two posterior terms, so
        // rows whose terms cancel do not inflate the measure
        for i in 0..x.n() {
            let (mut diff, mut t0, mut t1) = (0.0, 0.0, 0.0);
            for ((s, a), b) in step.row(i).iter().zip(x0.row(i)).zip(x.row(i)) {
                diff += (s - (c0 * a + c1 * b)).powi(2);
                t0 += (c0 * a).powi(2);
                t1 += (c1 * b).powi(2);
            }
            worst = worst.max(diff.sqrt() / (t0.sqrt() + t1.sqrt()));
        }
        let sigma = sched.ddim_sigma(t, t - 1, 1.0)?;
        worst = worst.max(rel(sigma, sched.posterior_variance(t)?.sqrt()));
    }
    Ok(worst)
}

/// Reference 2-D Gaussian used by the suite.
pub fn reference_gaussian() -> GaussianSpec {
    GaussianSpec::new(vec![0.5, -0.3], vec![1.0, 0.3, 0.3, 0.5]).expect("valid reference spec")
}

/// Setup of the minimizer-convergence experiment: a per-timestep affine
/// model trained on Gaussian data should land on `gamma_s` times the
/// optimal affine predictor of its training set at every trained level.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaExperiment {
    pub schedule: ScheduleParams,
    pub skip: usize,
    pub tau: f64,
    pub tau_convention: TauConvention,
    pub time_policy: TimePolicy,
    pub data_n: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub lr_decay_scale: f64,
    pub seed: u64,
}

impl Default for GammaExperiment {
    fn default() -> Self {
        Self {
            schedule: ScheduleParams {
                steps: 16,
                beta_start: 0.01,
                beta_end: 0.2,
            },
            skip: 4,
            tau: 0.5,
            tau_convention: TauConvention::TauOnSkip,
            time_policy: TimePolicy::SkipRange,
            data_n: 4096,
            batch_size: 256,
            iterations: 60_000,
            lr: 0.01,
            lr_decay_scale: 50.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GammaFit {
    /// `|theta - theta*| / |theta*|` over all trained levels.
    pub rel_err: f64,
    /// Per trained level: `(s, gamma_s, relative error at s)`.
    pub per_level: Vec<(usize, f64, f64)>,
    pub trained: PerStepAffine,
    pub target: PerStepAffine,
}

pub fn gamma_convergence(exp: &GammaExperiment, mode: ExecMode) -> Result<GammaFit> {
    let data = reference_gaussian().sample(exp.data_n, exp.seed);
    // the best affine predictor of a finite set is the Gaussian formula at
    // the set's own mean and population covariance
    let empirical = GaussianSpec::from_batch(&data)?;
    let cfg = TrainConfig {
        schedule: exp.schedule,
        model: ModelSpec::Affine,
        tau: exp.tau,
        tau_convention: exp.tau_convention,
        skip: exp.skip,
        time_policy: exp.time_policy,
        adam: AdamConfig {
            lr: exp.lr,
            ..AdamConfig::default()
        },
        lr_schedule: LrSchedule::InvSqrt {
            scale: exp.lr_decay_scale,
        },
        batch_size: exp.batch_size,
        iterations: exp.iterations,
        seed: exp.seed,
        snapshot_every: exp.iterations,
        ..TrainConfig::default()
    };
    let sched = exp.schedule.build()?;
    let mut model = PerStepAffine::zeros(2, sched.steps())?;
    difftrain::train_model(&mut model, &cfg, &data, mode).map_err(|a| a.error)?;

    let plan = SkipPlan::new(&sched, exp.skip)?;
    let (w0, w1) = cfg.loss_weights()?;
    let gammas = level_scales(&sched, &plan, w0, w1, exp.time_policy)?;
    let target = AnalyticPredictor::new(&empirical, &sched)?
        .with_scales(gammas.iter().map(|g| g.unwrap_or(0.0)).collect())?
        .to_affine_model()?;
    let block = 6;
    let (mut num, mut den) = (0.0, 0.0);
    let mut per_level = Vec::new();
    for (s, g) in gammas.iter().enumerate().skip(1) {
        let Some(g) = g else { continue };
        let range = (s - 1) * block..s * block;
        let a = &model.params()[range.clone()];
        let b = &target.params()[range];
        let n: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let d: f64 = b.iter().map(|y| y * y).sum();
        per_level.push((s, *g, (n / d).sqrt()));
        num += n;
        den += d;
    }
    Ok(GammaFit {
        rel_err: (num / den).sqrt(),
        per_level,
        trained: model,
        target,
    })
}

/// Grid search for the scale `g` minimizing the empirical combined loss of
/// `g * E[eps | x_s]` on one large draw at level `s`; returns
/// `(argmin, predicted, grid step)`.
pub fn gamma_grid_argmin(
    spec: &GaussianSpec,
    sched: &NoiseSchedule,
    s: usize,
    w0: f64,
    w1: f64,
    c: f64,
    n: usize,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    let x0 = spec.sample(n, seed);
    let mut eps = SampleBatch::zeros(n, spec.dim());
    rng::fill_normal(&mut rng::stream(seed, "noise"), eps.values_mut());
    let xs = difftrain::q_sample(sched, &x0, s, &eps)?;
    let g = analytic_eps(spec, sched, &xs, s)?;
    let (mut eg, mut gg, mut ee) = (0.0, 0.0, 0.0);
    for (e, p) in eps.values().iter().zip(g.values()) {
        eg += e * p;
        gg += p * p;
        ee += e * e;
    }
    let loss = |gamma: f64| {
        let base = ee - 2.0 * gamma * eg + gamma * gamma * gg;
        let skip = ee - 2.0 * c * gamma * eg + c * c * gamma * gamma * gg;
        w0 * base + w1 * skip
    };
    let step = 0.01;
    let mut best = (f64::INFINITY, 0.0);
    for i in 1..=500 {
        let gamma = i as f64 * step;
        let l = loss(gamma);
        if l < best.0 {
            best = (l, gamma);
        }
    }
    Ok((best.1, combined_minimizer_scale(w0, w1, c)?, step))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub chain_samples: usize,
    pub gamma: bool,
    pub gamma_iterations: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            chain_samples: 100_000,
            gamma: true,
            gamma_iterations: GammaExperiment::default().iterations,
            seed: 1234,
        }
    }
}

/// Runs every check against `sched`; the Gaussian sampler checks also use
/// the default 1000-step schedule and the training check its own 16-step one.
pub fn run_suite(sched: &NoiseSchedule, opts: &SuiteOptions, mode: ExecMode) -> Result<OracleReport> {
    let mut checks = Vec::new();

    let comp = schedule_composition_error(sched, sched.steps() <= 64)?;
    checks.push(CheckResult::at_most(
        "schedule_composition",
        comp,
        1e-12,
        format!("T={}", sched.steps()),
    ));

    let mono = sched.alpha_bars().windows(2).all(|w| w[1] < w[0]);
    checks.push(CheckResult {
        name: "alpha_bar_monotone",
        measured: if mono { 0.0 } else { 1.0 },
        tolerance: 0.0,
        pass: mono,
        detail: String::new(),
    });

    checks.push(CheckResult::at_most(
        "ddpm_posterior_identity",
        ddpm_identity_error(sched, opts.seed)?,
        1e-12,
        "eta=1 adjacent steps".into(),
    ));

    let chain = chain_vs_marginal(sched, sched.steps(), opts.chain_samples, 0.0, opts.seed, mode)?;
    let z = chain.mean_z.abs().max(chain.var_z.abs());
    checks.push(CheckResult::at_most(
        "forward_chain_moments",
        z,
        3.0,
        format!(
            "t={} n={} mean_z={:.3} var_z={:.3}",
            chain.t, chain.n, chain.mean_z, chain.var_z
        ),
    ));
    checks.push(CheckResult::at_most(
        "forward_scale_identity",
        chain.scale_rel_err,
        1e-12,
        String::new(),
    ));

    let default_sched = ScheduleParams::default().build()?;
    let ident = AnalyticPredictor::new(&GaussianSpec::standard(2), &default_sched)?;
    let full = build_stride(default_sched.steps(), default_sched.steps())?;
    let m = exact_sampler_marginal(&ident, &default_sched, &full, SamplerKind::Ddim)?;
    checks.push(CheckResult::at_most(
        "sampler_marginal_identity",
        cov_rel_error(&m.cov, &DMatrix::identity(2, 2)),
        0.01,
        "full stride, standard normal data".into(),
    ));

    let spec = reference_gaussian();
    let opt = AnalyticPredictor::new(&spec, &default_sched)?;
    let mut errs = Vec::new();
    for n in [10, 20, 50, 100] {
        let st = build_stride(default_sched.steps(), n)?;
        let m = exact_sampler_marginal(&opt, &default_sched, &st, SamplerKind::Ddim)?;
        errs.push(cov_rel_error(&m.cov, spec.covariance()));
    }
    let worst_rise = errs.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    checks.push(CheckResult::at_most(
        "stride_refinement",
        worst_rise.max(0.0),
        0.0,
        format!(
            "cov errors at 10/20/50/100 steps: {}",
            errs.iter().map(|e| format!("{e:.4e}")).collect::<Vec<_>>().join("/")
        ),
    ));

    let mut worst_cells: f64 = 0.0;
    for (i, (tau, c)) in [(0.5, 0.3), (0.5, 2.0), (0.2, 1.7), (0.8, 0.6)].into_iter().enumerate() {
        let (argmin, want, step) =
            gamma_grid_argmin(&spec, &default_sched, 400, 1.0 - tau, tau, c, 100_000, opts.seed + i as u64)?;
        worst_cells = worst_cells.max((argmin - want).abs() / step);
    }
    checks.push(CheckResult::at_most(
        "gamma_argmin",
        worst_cells,
        1.0,
        "grid cells between empirical argmin and closed form".into(),
    ));

    if opts.gamma {
        for conv in [TauConvention::TauOnSkip, TauConvention::TauOnBase] {
            let exp = GammaExperiment {
                tau_convention: conv,
                iterations: opts.gamma_iterations,
                ..GammaExperiment::default()
            };
            let fit = gamma_convergence(&exp, mode)?;
            checks.push(CheckResult::at_most(
                "gamma_convergence",
                fit.rel_err,
                0.02,
                format!("T=16 k=4 tau=0.5 convention={}", conv.as_str()),
            ));
        }
    }
    Ok(OracleReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composition_exact_on_small_schedules() {
        let s = ScheduleParams {
            steps: 20,
            beta_start: 1e-3,
            beta_end: 0.3,
        }
        .build()
        .unwrap();
        assert!(schedule_composition_error(&s, true).unwrap() < 1e-12);
        assert!(ddpm_identity_error(&s, 0).unwrap() < 1e-12);
    }

    #[test]
    fn corrupted_schedule_fails_composition_by_name() {
        let s = ScheduleParams {
            steps: 20,
            beta_start: 1e-3,
            beta_end: 0.3,
        }
        .build()
        .unwrap()
        .with_corrupted_alpha_bar(7, 0.5);
        let opts = SuiteOptions {
            chain_samples: 2000,
            gamma: false,
            ..SuiteOptions::default()
        };
        let r = run_suite(&s, &opts, ExecMode::Serial).unwrap();
        let failed: Vec<_> = r.checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
        assert!(failed.contains(&"schedule_composition"), "{failed:?}");
        assert!(r.to_text().contains("FAIL schedule_composition"));
    }
}
