//! Noise schedules and every coefficient derived from them.
//!
//! Timesteps are 1-based (`1..=T`); index 0 denotes clean data with
//! `alpha_bar(0) = 1`. All products are accumulated in ascending index order.

use crate::error::{Error, Result};

/// Linear-beta schedule parameters, as stored in configs and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        build_linear_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// `alpha_bars[t]` for `t in 0..=T`.
    alpha_bars: Vec<f64>,
}

pub fn build_linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::config("schedule.T", "must be at least 1"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::config(
            "schedule.beta_start",
            format!("need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"),
        ));
    }
    let betas = if steps == 1 {
        vec![beta_start]
    } else {
        let denom = (steps - 1) as f64;
        (0..steps)
            .map(|i| {
                let f = i as f64 / denom;
                beta_start * (1.0 - f) + beta_end * f
            })
            .collect()
    };
    NoiseSchedule::from_betas(betas)
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::config("schedule.T", "must be at least 1"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::config("schedule.betas", format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Replaces one cumulative value without re-deriving the rest. Only
    /// meant for exercising invariant checks against a broken schedule.
    #[doc(hidden)]
    pub fn with_corrupted_alpha_bar(mut self, t: usize, value: f64) -> Self {
        self.alpha_bars[t] = value;
        self
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Cumulative products, indexed `0..=T`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Index {
                index: t,
                lo: 1,
                hi: self.steps(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.betas[t - 1])
    }

    /// Plain per-step `alpha_t = 1 - beta_t`.
    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.alphas[t - 1])
    }

    /// Cumulative `alpha_bar_t`, with `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars.get(t).copied().ok_or(Error::Index {
            index: t,
            lo: 0,
            hi: self.steps(),
        })
    }

    /// Product of the `k` consecutive alphas `alpha_t .. alpha_{t+k-1}`.
    pub fn skip_product(&self, t: usize, k: usize) -> Result<f64> {
        if t == 0 || k == 0 || t + k - 1 > self.steps() {
            return Err(Error::Range(format!(
                "skip window [{t}, {}] not inside [1, {}]",
                (t + k).saturating_sub(1),
                self.steps()
            )));
        }
        Ok(self.alphas[t - 1..t - 1 + k].iter().product())
    }

    /// `sqrt((1 - P) / P)` with `P = skip_product(t - 1, k)`.
    pub fn skip_coefficient(&self, t: usize, k: usize) -> Result<f64> {
        if t < 2 {
            return Err(Error::Range(format!("skip coefficient needs t >= 2, got {t}")));
        }
        let p = self.skip_product(t - 1, k)?;
        Ok(((1.0 - p) / p).sqrt())
    }

    /// DDIM noise scale for the transition `t_from -> t_to`.
    pub fn ddim_sigma(&self, t_from: usize, t_to: usize, eta: f64) -> Result<f64> {
        if t_to >= t_from {
            return Err(Error::Range(format!(
                "ddim transition must decrease time, got {t_from} -> {t_to}"
            )));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::config("eta", format!("must lie in [0, 1], got {eta}")));
        }
        let ab_from = self.alpha_bar(t_from)?;
        let ab_to = self.alpha_bar(t_to)?;
        if eta == 0.0 {
            return Ok(0.0);
        }
        Ok(eta * ((1.0 - ab_to) / (1.0 - ab_from)).sqrt() * (1.0 - ab_from / ab_to).sqrt())
    }

    /// Variance of the DDPM posterior `q(x_{t-1} | x_t, x_0)`.
    pub fn posterior_variance(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        let ab = self.alpha_bars[t];
        let ab_prev = self.alpha_bars[t - 1];
        Ok((1.0 - ab_prev) / (1.0 - ab) * self.betas[t - 1])
    }

    /// Coefficients `(on_x0, on_xt)` of the DDPM posterior mean.
    pub fn posterior_mean_coefs(&self, t: usize) -> Result<(f64, f64)> {
        self.check_step(t)?;
        let ab = self.alpha_bars[t];
        let ab_prev = self.alpha_bars[t - 1];
        let beta = self.betas[t - 1];
        Ok((
            ab_prev.sqrt() * beta / (1.0 - ab),
            self.alphas[t - 1].sqrt() * (1.0 - ab_prev) / (1.0 - ab),
        ))
    }
}

/// Skip width together with its precomputed coefficient table.
///
/// Valid base timesteps are `2..=T-k`: the coefficient window starts at
/// `t - 1` and the skip-term network input sits at `t + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipPlan {
    k: usize,
    lo: usize,
    hi: usize,
    coeffs: Vec<f64>,
    cap: Option<f64>,
}

impl SkipPlan {
    pub fn new(sched: &NoiseSchedule, k: usize) -> Result<Self> {
        let steps = sched.steps();
        if k == 0 || k + 2 > steps {
            return Err(Error::config(
                "train.skip",
                format!("need 1 <= skip <= T - 2 (T = {steps}), got {k}"),
            ));
        }
        let (lo, hi) = (2, steps - k);
        let coeffs = (lo..=hi)
            .map(|t| sched.skip_coefficient(t, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            k,
            lo,
            hi,
            coeffs,
            cap: None,
        })
    }

    /// Clamps every coefficient at `cap`.
    pub fn with_cap(mut self, cap: Option<f64>) -> Result<Self> {
        if let Some(c) = cap {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("train.coeff_cap", format!("must be positive, got {c}")));
            }
        }
        self.cap = cap;
        Ok(self)
    }

    pub fn skip(&self) -> usize {
        self.k
    }

    pub fn base_range(&self) -> std::ops::RangeInclusive<usize> {
        self.lo..=self.hi
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.lo..=self.hi).contains(&t)
    }

    /// Uncapped coefficients for `t in base_range()`.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coefficient(&self, t: usize) -> Result<f64> {
        if !self.contains(t) {
            return Err(Error::Range(format!(
                "base timestep {t} outside skip range [{}, {}]",
                self.lo, self.hi
            )));
        }
        let c = self.coeffs[t - self.lo];
        Ok(match self.cap {
            Some(cap) => c.min(cap),
            None => c,
        })
    }
}

/// Increasing timesteps visited (in reverse) by an accelerated sampler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrideSchedule {
    steps: Vec<usize>,
}

/// `s_i = floor(i * T / n)` for `i = 1..=n`.
pub fn build_stride(total: usize, n: usize) -> Result<StrideSchedule> {
    if n == 0 || n > total {
        return Err(Error::config(
            "steps",
            format!("sampling steps must lie in [1, {total}], got {n}"),
        ));
    }
    Ok(StrideSchedule {
        steps: (1..=n).map(|i| i * total / n).collect(),
    })
}

impl StrideSchedule {
    pub fn from_steps(steps: Vec<usize>, total: usize) -> Result<Self> {
        let ok = !steps.is_empty()
            && steps[0] >= 1
            && *steps.last().unwrap() <= total
            && steps.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::config(
                "steps",
                "stride must be strictly increasing inside [1, T]",
            ));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Descending `(from, to)` pairs ending with the terminal hop to 0.
    pub fn transitions(&self) -> Vec<(usize, usize)> {
        (0..self.steps.len())
            .rev()
            .map(|i| (self.steps[i], if i == 0 { 0 } else { self.steps[i - 1] }))
            .collect()
    }
}
