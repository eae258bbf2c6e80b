use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::par::{self, ExecMode};
use crate::rng;

pub const DEFAULT_PROJECTIONS: usize = 128;

/// One metric evaluation with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    /// Reported value, never negative.
    pub value: f64,
    /// Estimate before flooring at zero, when it can differ from `value`.
    pub raw: Option<f64>,
    pub config: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub sizes: (usize, usize),
    pub extras: Vec<(String, f64)>,
}

impl MetricReport {
    /// `key=value` lines, floats in round-trip precision.
    pub fn to_text(&self) -> String {
        let mut s = format!("metric={}\nvalue={:?}\n", self.metric, self.value);
        if let Some(r) = self.raw {
            s += &format!("raw={r:?}\n");
        }
        for (k, v) in &self.config {
            s += &format!("{k}={v}\n");
        }
        if let Some(seed) = self.seed {
            s += &format!("seed={seed}\n");
        }
        s += &format!("n_a={}\nn_b={}\n", self.sizes.0, self.sizes.1);
        for (k, v) in &self.extras {
            s += &format!("{k}={v:?}\n");
        }
        s
    }
}

/// `n` unit directions in `dim` dimensions from the `projections` stream.
pub fn random_directions(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, "projections");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut v = vec![0.0; dim];
        rng::fill_normal(&mut r, &mut v);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            v.iter_mut().for_each(|x| *x /= norm);
            out.push(v);
        }
    }
    out
}

fn projected_w1(a: &SampleBatch, b: &SampleBatch, dir: &[f64]) -> f64 {
    let proj = |s: &SampleBatch| {
        let mut p: Vec<f64> = s.rows().map(|r| r.iter().zip(dir).map(|(x, u)| x * u).sum()).collect();
        p.sort_by(f64::total_cmp);
        p
    };
    let (pa, pb) = (proj(a), proj(b));
    pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>() / pa.len() as f64
}

fn check_swd_inputs(a: &SampleBatch, b: &SampleBatch) -> Result<()> {
    if a.n() != b.n() || a.n() == 0 {
        return Err(Error::Usage(format!(
            "sliced Wasserstein needs two nonempty batches of equal size, got {} and {}",
            a.n(),
            b.n()
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("dims {} and {}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Mean 1-D W1 distance between sorted projections onto `dirs`.
pub fn sliced_wasserstein_with(a: &SampleBatch, b: &SampleBatch, dirs: &[Vec<f64>], mode: ExecMode) -> Result<f64> {
    check_swd_inputs(a, b)?;
    if dirs.is_empty() {
        return Err(Error::Usage("need at least one projection".into()));
    }
    if dirs.iter().any(|d| d.len() != a.dim()) {
        return Err(Error::Shape("projection direction has wrong dimension".into()));
    }
    let per = par::map(mode, dirs, |d| projected_w1(a, b, d));
    Ok(per.iter().sum::<f64>() / dirs.len() as f64)
}

pub fn sliced_wasserstein(a: &SampleBatch, b: &SampleBatch, n_proj: usize, seed: u64) -> Result<MetricReport> {
    sliced_wasserstein_mode(a, b, n_proj, seed, ExecMode::Serial)
}

pub fn sliced_wasserstein_mode(
    a: &SampleBatch,
    b: &SampleBatch,
    n_proj: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<MetricReport> {
    check_swd_inputs(a, b)?;
    let dirs = random_directions(a.dim(), n_proj, seed);
    let value = sliced_wasserstein_with(a, b, &dirs, mode)?;
    Ok(MetricReport {
        metric: "swd".into(),
        value,
        raw: None,
        config: vec![("projections".into(), n_proj.to_string())],
        seed: Some(seed),
        sizes: (a.n(), b.n()),
        extras: Vec::new(),
    })
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Unbiased MMD^2 with kernel `exp(-|x - y|^2 / (2 h^2))`.
pub fn mmd_rbf(a: &SampleBatch, b: &SampleBatch, bandwidth: f64) -> Result<MetricReport> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::config("bandwidth", format!("must be positive, got {bandwidth}")));
    }
    if a.n() < 2 || b.n() < 2 {
        return Err(Error::Usage("MMD needs at least two points per batch".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("dims {} and {}", a.dim(), b.dim())));
    }
    let g = 1.0 / (2.0 * bandwidth * bandwidth);
    let k = |x: &[f64], y: &[f64]| (-g * sq_dist(x, y)).exp();
    let within = |s: &SampleBatch| {
        let mut acc = 0.0;
        for i in 0..s.n() {
            for j in 0..s.n() {
                if i != j {
                    acc += k(s.row(i), s.row(j));
                }
            }
        }
        acc / (s.n() * (s.n() - 1)) as f64
    };
    let mut cross = 0.0;
    for x in a.rows() {
        for y in b.rows() {
            cross += k(x, y);
        }
    }
    cross /= (a.n() * b.n()) as f64;
    let raw = within(a) + within(b) - 2.0 * cross;
    Ok(MetricReport {
        metric: "mmd".into(),
        value: raw.max(0.0),
        raw: Some(raw),
        config: vec![("bandwidth".into(), format!("{bandwidth:?}"))],
        seed: None,
        sizes: (a.n(), b.n()),
        extras: Vec::new(),
    })
}

/// Mean-difference norm and relative Frobenius error of `b`'s covariance
/// against `a`'s (the reported value).
pub fn moment_report(a: &SampleBatch, b: &SampleBatch) -> Result<MetricReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Usage("moment report needs nonempty batches".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("dims {} and {}", a.dim(), b.dim())));
    }
    let mean_diff = a
        .mean()
        .iter()
        .zip(b.mean())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let (ca, cb) = (a.covariance(), b.covariance());
    let num = ca.iter().zip(&cb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den = ca.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cov_rel = if num == 0.0 { 0.0 } else { num / den };
    Ok(MetricReport {
        metric: "moments".into(),
        value: cov_rel,
        raw: None,
        config: Vec::new(),
        seed: None,
        sizes: (a.n(), b.n()),
        extras: vec![("mean_diff".into(), mean_diff), ("cov_rel_err".into(), cov_rel)],
    })
}
