//! Closed-form ground truth for Gaussian data.
//!
//! For `x0 ~ N(mu, S)` the forward marginal is jointly Gaussian with the
//! noise, which gives
//!
//! `E[eps | x_t] = sqrt(1 - ab) (ab S + (1 - ab) I)^-1 (x_t - sqrt(ab) mu)`
//!
//! and, for a deterministic sampler driven by any affine predictor, an
//! output law `N(m, M M^T)` obtained by composing the per-step affine maps.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub mod checks;

use crate::batch::SampleBatch;
use crate::difftrain::TimePolicy;
use crate::error::{Error, Result};
use crate::par::{self, ExecMode};
use crate::predictor::{check_inputs, NoisePredictor};
use crate::rng;
use crate::samplers::SamplerKind;
use crate::schedule::{NoiseSchedule, SkipPlan, StrideSchedule};
use crate::smallnet::PerStepAffine;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
}

impl GaussianSpec {
    /// `sigma` is row-major `d x d`; must be symmetric positive definite.
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let d = mu.len();
        if d == 0 || sigma.len() != d * d {
            return Err(Error::Shape(format!("mean of length {d} with {} covariance entries", sigma.len())));
        }
        let sigma = DMatrix::from_row_slice(d, d, &sigma);
        let scale = sigma.amax().max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Domain("covariance is not symmetric".into()));
                }
            }
        }
        let eig = SymmetricEigen::new(sigma.clone());
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Domain("covariance is not positive definite".into()));
        }
        Ok(Self {
            mu: DVector::from_vec(mu),
            sigma,
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mu: DVector::zeros(dim),
            sigma: DMatrix::identity(dim, dim),
        }
    }

    /// Empirical mean and population (`1/n`) covariance of `batch`.
    pub fn from_batch(batch: &SampleBatch) -> Result<Self> {
        if batch.n() < 2 {
            return Err(Error::Usage("need at least two points".into()));
        }
        Self::new(batch.mean(), batch.covariance())
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// `n` draws via the Cholesky factor, from the `gaussian` stream.
    pub fn sample(&self, n: usize, seed: u64) -> SampleBatch {
        let l = self.sigma.clone().cholesky().expect("validated SPD").l();
        let d = self.dim();
        let mut r = rng::stream(seed, "gaussian");
        let mut out = SampleBatch::zeros(n, d);
        let mut z = DVector::zeros(d);
        for i in 0..n {
            rng::fill_normal(&mut r, z.as_mut_slice());
            let x = &self.mu + &l * &z;
            out.row_mut(i).copy_from_slice(x.as_slice());
        }
        out
    }
}

/// `(A_t, b_t)` with `E[eps | x_t] = A_t x_t + b_t`.
pub fn analytic_map(spec: &GaussianSpec, sched: &NoiseSchedule, t: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if t == 0 {
        return Err(Error::Index {
            index: 0,
            lo: 1,
            hi: sched.steps(),
        });
    }
    let ab = sched.alpha_bar(t)?;
    let eig = SymmetricEigen::new(spec.sigma.clone());
    let inv_diag = eig.eigenvalues.map(|l| 1.0 / (ab * l + (1.0 - ab)));
    if inv_diag.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("singular marginal covariance".into()));
    }
    let v = &eig.eigenvectors;
    let a = v * DMatrix::from_diagonal(&inv_diag) * v.transpose() * (1.0 - ab).sqrt();
    let b = -(&a * &spec.mu) * ab.sqrt();
    Ok((a, b))
}

pub fn analytic_eps(spec: &GaussianSpec, sched: &NoiseSchedule, x: &SampleBatch, t: usize) -> Result<SampleBatch> {
    check_inputs(spec.dim(), x, &vec![t; x.n()])?;
    let (a, b) = analytic_map(spec, sched, t)?;
    Ok(apply_affine(&a, &b, x))
}

fn apply_affine(a: &DMatrix<f64>, b: &DVector<f64>, x: &SampleBatch) -> SampleBatch {
    let d = b.len();
    let mut out = SampleBatch::zeros(x.n(), d);
    for i in 0..x.n() {
        let xr = x.row(i);
        let o = out.row_mut(i);
        for r in 0..d {
            o[r] = b[r] + (0..d).map(|c| a[(r, c)] * xr[c]).sum::<f64>();
        }
    }
    out
}

/// Per-step affine noise predictor, at most one map per timestep.
pub trait AffineNoiseMap {
    fn map_dim(&self) -> usize;
    fn affine_map(&self, t: usize) -> Result<(DMatrix<f64>, DVector<f64>)>;
}

/// The optimal predictor for a Gaussian, optionally scaled per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticPredictor {
    maps: Vec<(DMatrix<f64>, DVector<f64>)>,
    gamma: Option<Vec<f64>>,
}

impl AnalyticPredictor {
    pub fn new(spec: &GaussianSpec, sched: &NoiseSchedule) -> Result<Self> {
        let maps = (1..=sched.steps())
            .map(|t| analytic_map(spec, sched, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { maps, gamma: None })
    }

    /// Multiplies the map at `t` by `gamma[t]` (`gamma[0]` is unused).
    pub fn with_scales(mut self, gamma: Vec<f64>) -> Result<Self> {
        if gamma.len() != self.maps.len() + 1 {
            return Err(Error::Shape(format!(
                "{} scales for {} timesteps (expected T + 1 entries)",
                gamma.len(),
                self.maps.len()
            )));
        }
        self.gamma = Some(gamma);
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        self.maps.len()
    }

    /// Same maps as a trainable-model parameter vector.
    pub fn to_affine_model(&self) -> Result<PerStepAffine> {
        let d = self.map_dim();
        let mut m = PerStepAffine::zeros(d, self.steps())?;
        for t in 1..=self.steps() {
            let (a, b) = self.affine_map(t)?;
            let rows: Vec<f64> = (0..d).flat_map(|r| (0..d).map(move |c| (r, c))).map(|(r, c)| a[(r, c)]).collect();
            m.set_map(t, &rows, b.as_slice())?;
        }
        Ok(m)
    }
}

impl AffineNoiseMap for AnalyticPredictor {
    fn map_dim(&self) -> usize {
        self.maps.first().map_or(0, |m| m.1.len())
    }

    fn affine_map(&self, t: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if t == 0 || t > self.maps.len() {
            return Err(Error::Index {
                index: t,
                lo: 1,
                hi: self.maps.len(),
            });
        }
        let (a, b) = &self.maps[t - 1];
        let g = self.gamma.as_ref().map_or(1.0, |g| g[t]);
        Ok((a * g, b * g))
    }
}

impl AffineNoiseMap for PerStepAffine {
    fn map_dim(&self) -> usize {
        self.data_dim()
    }

    fn affine_map(&self, t: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let (a, b) = self.map(t)?;
        let d = self.data_dim();
        Ok((DMatrix::from_row_slice(d, d, a), DVector::from_column_slice(b)))
    }
}

impl NoisePredictor for AnalyticPredictor {
    fn data_dim(&self) -> usize {
        self.map_dim()
    }

    fn predict(&self, x: &SampleBatch, t: &[usize]) -> Result<SampleBatch> {
        check_inputs(self.map_dim(), x, t)?;
        let mut out = SampleBatch::zeros(x.n(), x.dim());
        let mut i = 0;
        // rows sharing a timestep are mapped together
        while i < t.len() {
            let mut j = i + 1;
            while j < t.len() && t[j] == t[i] {
                j += 1;
            }
            let (a, b) = self.affine_map(t[i])?;
            let y = apply_affine(&a, &b, &x.slice_rows(i..j));
            out.values_mut()[i * x.dim()..j * x.dim()].copy_from_slice(y.values());
            i = j;
        }
        Ok(out)
    }
}

/// Minimizer scale of `w0 E|eps - f|^2 + w1 E|eps - c f|^2` relative to
/// `E[eps | x]`: `(w0 + w1 c) / (w0 + w1 c^2)`.
pub fn combined_minimizer_scale(w0: f64, w1: f64, c: f64) -> Result<f64> {
    if !(w0 >= 0.0 && w1 >= 0.0) || w0 + w1 == 0.0 || !(w0 + w1).is_finite() {
        return Err(Error::config("weights", format!("need w0, w1 >= 0, not both zero; got {w0}, {w1}")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::config("coefficient", format!("must be positive and finite, got {c}")));
    }
    Ok((w0 + w1 * c) / (w0 + w1 * c * c))
}

/// Per-level minimizer scale under the training time policy, indexed by
/// network-input level `s` in `0..=T`. `None` marks levels neither term
/// ever trains.
///
/// At level `s` the base term weighs in with `w0 * P(t = s)` and the skip
/// term with `w1 * P(t = s - k)` and coefficient `c_{s-k}`.
pub fn level_scales(
    sched: &NoiseSchedule,
    plan: &SkipPlan,
    w0: f64,
    w1: f64,
    policy: TimePolicy,
) -> Result<Vec<Option<f64>>> {
    let t_max = sched.steps();
    let k = plan.skip();
    let p_base = |t: usize| -> f64 {
        match policy {
            TimePolicy::SkipRange if plan.contains(t) => 1.0 / (t_max - k - 1) as f64,
            TimePolicy::FullRange if (1..=t_max).contains(&t) => 1.0 / t_max as f64,
            _ => 0.0,
        }
    };
    let mut out = vec![None];
    for s in 1..=t_max {
        let a = w0 * p_base(s);
        let (b, c) = if s > k && plan.contains(s - k) {
            (w1 * p_base(s - k), plan.coefficient(s - k)?)
        } else {
            (0.0, 1.0)
        };
        out.push(if a + b > 0.0 {
            Some(combined_minimizer_scale(a, b, c)?)
        } else {
            None
        });
    }
    Ok(out)
}

/// Law of the deterministic sampler's output, `N(mean, cov)`, when started
/// from `x_T ~ N(0, I)` and driven by an affine predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerMarginal {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Composed linear part: output = `linear * z + mean`.
    pub linear: DMatrix<f64>,
}

pub fn exact_sampler_marginal<P: AffineNoiseMap + ?Sized>(
    predictor: &P,
    sched: &NoiseSchedule,
    stride: &StrideSchedule,
    kind: SamplerKind,
) -> Result<SamplerMarginal> {
    let d = predictor.map_dim();
    let mut m_lin = DMatrix::<f64>::identity(d, d);
    let mut m_off = DVector::<f64>::zeros(d);
    let mut hist: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::new();
    for (i, (from, to)) in stride.transitions().into_iter().enumerate() {
        let (a, b) = predictor.affine_map(from)?;
        let e_lin = &a * &m_lin;
        let e_off = &a * &m_off + b;
        let (u_lin, u_off) = if kind == SamplerKind::Pndm && i >= 3 {
            let [h3, h2, h1] = [&hist[i - 3], &hist[i - 2], &hist[i - 1]];
            (
                (&e_lin * 55.0 - &h1.0 * 59.0 + &h2.0 * 37.0 - &h3.0 * 9.0) / 24.0,
                (&e_off * 55.0 - &h1.1 * 59.0 + &h2.1 * 37.0 - &h3.1 * 9.0) / 24.0,
            )
        } else {
            (e_lin.clone(), e_off.clone())
        };
        hist.push((e_lin, e_off));
        let ab_from = sched.alpha_bar(from)?;
        let ab_to = sched.alpha_bar(to)?;
        let p = (ab_to / ab_from).sqrt();
        let q = (1.0 - ab_to).sqrt() - p * (1.0 - ab_from).sqrt();
        m_lin = &m_lin * p + u_lin * q;
        m_off = &m_off * p + u_off * q;
    }
    Ok(SamplerMarginal {
        cov: &m_lin * m_lin.transpose(),
        mean: m_off,
        linear: m_lin,
    })
}

/// `|C - S|_F / |S|_F`.
pub fn cov_rel_error(cov: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
    (cov - target).norm() / target.norm()
}

/// Largest absolute z-score of the sample mean and covariance entries of
/// `samples` against `N(mean, cov)`, using the Gaussian standard errors
/// `sqrt(C_ii / n)` and `sqrt((C_ii C_jj + C_ij^2) / n)`.
pub fn moment_zscore(samples: &SampleBatch, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = samples.n() as f64;
    let d = samples.dim();
    let sm = samples.mean();
    let sc = samples.covariance();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        worst = worst.max((sm[i] - mean[i]).abs() / (cov[(i, i)] / n).sqrt());
        for j in 0..=i {
            let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)] * cov[(i, j)]) / n).sqrt();
            worst = worst.max((sc[i * d + j] - cov[(i, j)]).abs() / se);
        }
    }
    worst
}

/// Iterated one-step noising against the closed-form marginal, in 1-D.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainReport {
    pub t: usize,
    pub n: usize,
    pub x0: f64,
    pub mean_chain: f64,
    pub var_chain: f64,
    pub mean_closed: f64,
    pub var_closed: f64,
    pub mean_z: f64,
    pub var_z: f64,
    /// `prod sqrt(alpha_s)` over `s = 1..=t`.
    pub scale_product: f64,
    pub scale_rel_err: f64,
}

impl ChainReport {
    pub fn passes(&self, sigmas: f64, scale_tol: f64) -> bool {
        self.mean_z.abs() <= sigmas && self.var_z.abs() <= sigmas && self.scale_rel_err <= scale_tol
    }
}

const CHAIN_CHUNK: usize = 1024;

pub fn chain_vs_marginal(
    sched: &NoiseSchedule,
    t: usize,
    n_mc: usize,
    x0: f64,
    seed: u64,
    mode: ExecMode,
) -> Result<ChainReport> {
    if t == 0 || t > sched.steps() {
        return Err(Error::Index {
            index: t,
            lo: 1,
            hi: sched.steps(),
        });
    }
    if n_mc < 2 {
        return Err(Error::Usage("need at least two chains".into()));
    }
    let coefs: Vec<(f64, f64)> = (1..=t)
        .map(|s| Ok((sched.alpha(s)?.sqrt(), sched.beta(s)?.sqrt())))
        .collect::<Result<_>>()?;
    let chunks = par::chunk_ranges(n_mc, CHAIN_CHUNK);
    let sums = par::map(mode, &chunks, |r| {
        let mut g = rng::substream(seed, "chain", r.start as u64);
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in r.clone() {
            let mut x = x0;
            for &(a, b) in &coefs {
                x = a * x + b * rng::normal(&mut g);
            }
            s1 += x;
            s2 += x * x;
        }
        (s1, s2)
    });
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    let n = n_mc as f64;
    let mean = s1 / n;
    let var = (s2 - n * mean * mean) / (n - 1.0);
    let ab = sched.alpha_bar(t)?;
    let (mc, vc) = (ab.sqrt() * x0, 1.0 - ab);
    let scale_product = coefs.iter().map(|c| c.0).product::<f64>();
    Ok(ChainReport {
        t,
        n: n_mc,
        x0,
        mean_chain: mean,
        var_chain: var,
        mean_closed: mc,
        var_closed: vc,
        mean_z: (mean - mc) / (vc / n).sqrt(),
        var_z: (var - vc) / (vc * (2.0 / (n - 1.0)).sqrt()),
        scale_product,
        scale_rel_err: (scale_product - ab.sqrt()).abs() / ab.sqrt(),
    })
}
