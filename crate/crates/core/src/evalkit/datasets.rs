use std::f64::consts::PI;

use rand::Rng;

use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetKind {
    /// Isotropic Gaussian components.
    GaussianMixture {
        means: Vec<Vec<f64>>,
        stds: Vec<f64>,
        weights: Vec<f64>,
    },
    /// Points uniform in angle on concentric circles, picked with equal
    /// probability, with radial noise of std `thickness`.
    Rings { radii: Vec<f64>, thickness: f64 },
    /// `(r cos r, r sin r)` with `r = 1 + 2 pi turns u`, `u ~ U(0, 1)`, plus noise.
    SwissRoll { turns: f64, noise: f64 },
    /// Two interleaved half circles plus Gaussian noise.
    TwoMoons { noise: f64 },
}

impl DatasetKind {
    /// `components` equal-weight Gaussians spaced evenly on a circle.
    pub fn circle_mixture(components: usize, radius: f64, std: f64) -> Self {
        let means = (0..components)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / components as f64;
                vec![radius * a.cos(), radius * a.sin()]
            })
            .collect();
        DatasetKind::GaussianMixture {
            means,
            stds: vec![std; components],
            weights: vec![1.0 / components as f64; components],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::GaussianMixture { .. } => "gaussian_mixture",
            DatasetKind::Rings { .. } => "rings",
            DatasetKind::SwissRoll { .. } => "swiss_roll",
            DatasetKind::TwoMoons { .. } => "two_moons",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DatasetKind::GaussianMixture { means, .. } => means.first().map_or(0, Vec::len),
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::circle_mixture(8, 2.0, 0.1),
            n: 10_000,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: &str| Err(Error::config(k, m));
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        match &self.kind {
            DatasetKind::GaussianMixture { means, stds, weights } => {
                if means.is_empty() {
                    return bad("data.components", "need at least one component");
                }
                if stds.len() != means.len() || weights.len() != means.len() {
                    return bad("data.components", "means, stds and weights differ in length");
                }
                let d = means[0].len();
                if d == 0 || means.iter().any(|m| m.len() != d || m.iter().any(|x| !x.is_finite())) {
                    return bad("data.components", "component means must share one nonzero finite dimension");
                }
                if !stds.iter().all(|&s| finite_nonneg(s)) {
                    return bad("data.std", "stds must be finite and nonnegative");
                }
                if !weights.iter().all(|&w| finite_nonneg(w)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return bad("data.weights", "weights must be nonnegative and sum to 1");
                }
            }
            DatasetKind::Rings { radii, thickness } => {
                if radii.is_empty() || !radii.iter().all(|&r| r.is_finite() && r > 0.0) {
                    return bad("data.radii", "need at least one positive radius");
                }
                if !finite_nonneg(*thickness) {
                    return bad("data.thickness", "must be finite and nonnegative");
                }
            }
            DatasetKind::SwissRoll { turns, noise } => {
                if !(turns.is_finite() && *turns > 0.0) {
                    return bad("data.turns", "must be positive");
                }
                if !finite_nonneg(*noise) {
                    return bad("data.noise", "must be finite and nonnegative");
                }
            }
            DatasetKind::TwoMoons { noise } => {
                if !finite_nonneg(*noise) {
                    return bad("data.noise", "must be finite and nonnegative");
                }
            }
        }
        Ok(())
    }
}

fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Draws `spec.n` points; deterministic given `spec.seed`.
pub fn make_dataset(spec: &DatasetSpec) -> Result<SampleBatch> {
    spec.validate()?;
    let d = spec.kind.dim();
    let mut r = rng::stream(spec.seed, "dataset");
    let mut out = SampleBatch::zeros(spec.n, d);
    for i in 0..spec.n {
        let row = out.row_mut(i);
        match &spec.kind {
            DatasetKind::GaussianMixture { means, stds, weights } => {
                let c = pick(weights, r.random::<f64>());
                for (x, m) in row.iter_mut().zip(&means[c]) {
                    *x = m + stds[c] * rng::normal(&mut r);
                }
            }
            DatasetKind::Rings { radii, thickness } => {
                let ring = r.random_range(0..radii.len());
                let a = 2.0 * PI * r.random::<f64>();
                let rad = radii[ring] + thickness * rng::normal(&mut r);
                row[0] = rad * a.cos();
                row[1] = rad * a.sin();
            }
            DatasetKind::SwissRoll { turns, noise } => {
                let t = 1.0 + 2.0 * PI * turns * r.random::<f64>();
                row[0] = t * t.cos() + noise * rng::normal(&mut r);
                row[1] = t * t.sin() + noise * rng::normal(&mut r);
            }
            DatasetKind::TwoMoons { noise } => {
                let a = PI * r.random::<f64>();
                let (x, y) = if r.random::<bool>() {
                    (a.cos(), a.sin())
                } else {
                    (1.0 - a.cos(), 0.5 - a.sin())
                };
                row[0] = x + noise * rng::normal(&mut r);
                row[1] = y + noise * rng::normal(&mut r);
            }
        }
    }
    Ok(out)
}
