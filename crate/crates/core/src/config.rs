//! Flat `key = value` run configuration.
//!
//! `#` starts a comment. Keys carry a section prefix (`schedule.`, `model.`,
//! `net.`, `train.`, `data.`). Keys under `manifest.` are ignored so a run
//! manifest can be fed back in as a config.

use std::collections::BTreeSet;

use crate::difftrain::{LrSchedule, RunManifest, TauConvention, TimePolicy, TrainConfig};
use crate::error::{Error, Result};
use crate::evalkit::{DatasetKind, DatasetSpec};
use crate::model::ModelSpec;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DatasetSpec,
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(key, format!("cannot parse {v:?}")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn fmt_list<T: std::fmt::Debug>(v: &[T]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

#[derive(Default)]
struct DataKeys {
    kind: Option<String>,
    components: Option<usize>,
    radius: Option<f64>,
    std: Option<f64>,
    means: Option<Vec<Vec<f64>>>,
    stds: Option<Vec<f64>>,
    weights: Option<Vec<f64>>,
    radii: Option<Vec<f64>>,
    thickness: Option<f64>,
    turns: Option<f64>,
    noise: Option<f64>,
}

impl DataKeys {
    fn build(self) -> Result<DatasetKind> {
        let kind = self.kind.as_deref().unwrap_or("gaussian_mixture");
        Ok(match kind {
            "gaussian_mixture" => {
                if let Some(means) = self.means {
                    let k = means.len();
                    DatasetKind::GaussianMixture {
                        stds: self.stds.unwrap_or_else(|| vec![self.std.unwrap_or(0.1); k]),
                        weights: self.weights.unwrap_or_else(|| vec![1.0 / k as f64; k]),
                        means,
                    }
                } else {
                    let k = self.components.unwrap_or(8);
                    if k == 0 {
                        return Err(Error::config("data.components", "must be at least 1"));
                    }
                    let mut kind = DatasetKind::circle_mixture(k, self.radius.unwrap_or(2.0), self.std.unwrap_or(0.1));
                    if let DatasetKind::GaussianMixture { stds, weights, .. } = &mut kind {
                        if let Some(s) = self.stds {
                            *stds = s;
                        }
                        if let Some(w) = self.weights {
                            *weights = w;
                        }
                    }
                    kind
                }
            }
            "rings" => DatasetKind::Rings {
                radii: self.radii.unwrap_or_else(|| vec![1.0, 2.0]),
                thickness: self.thickness.unwrap_or(0.05),
            },
            "swiss_roll" => DatasetKind::SwissRoll {
                turns: self.turns.unwrap_or(1.5),
                noise: self.noise.unwrap_or(0.1),
            },
            "two_moons" => DatasetKind::TwoMoons {
                noise: self.noise.unwrap_or(0.05),
            },
            other => {
                return Err(Error::config(
                    "data.kind",
                    format!("unknown dataset {other:?}; expected gaussian_mixture, rings, swiss_roll or two_moons"),
                ))
            }
        })
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let t = &mut cfg.train;
        let mut data = DataKeys::default();
        let mut seen = BTreeSet::new();
        let mut lr_decay = "constant".to_string();
        let mut lr_decay_steps = 1000.0;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i as u64 + 1,
                    column: 1,
                    msg: format!("expected `key = value`, found {line:?}"),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if k.starts_with("manifest.") {
                continue;
            }
            if !seen.insert(k.to_string()) {
                return Err(Error::config(k, format!("given twice (line {})", i + 1)));
            }
            match k {
                "schedule.T" => t.schedule.steps = num(k, v)?,
                "schedule.beta_start" => t.schedule.beta_start = num(k, v)?,
                "schedule.beta_end" => t.schedule.beta_end = num(k, v)?,
                "model.kind" => match v {
                    "mlp" => {
                        if !matches!(t.model, ModelSpec::Mlp { .. }) {
                            t.model = ModelSpec::default();
                        }
                    }
                    "affine" => t.model = ModelSpec::Affine,
                    _ => return Err(Error::config(k, format!("unknown model kind {v:?}; expected mlp or affine"))),
                },
                "net.hidden" | "net.time_embed_dim" => {
                    if let ModelSpec::Mlp {
                        hidden,
                        time_embed_dim,
                    } = &mut t.model
                    {
                        if k == "net.hidden" {
                            *hidden = list(k, v)?;
                        } else {
                            *time_embed_dim = num(k, v)?;
                        }
                    }
                }
                "train.tau" => t.tau = num(k, v)?,
                "train.tau_convention" => {
                    t.tau_convention = TauConvention::parse(v)
                        .ok_or_else(|| Error::config(k, format!("expected skip or base, got {v:?}")))?
                }
                "train.skip" => t.skip = num(k, v)?,
                "train.lr" => t.adam.lr = num(k, v)?,
                "train.lr_decay" => lr_decay = v.to_string(),
                "train.lr_decay_steps" => lr_decay_steps = num(k, v)?,
                "train.adam_beta1" => t.adam.beta1 = num(k, v)?,
                "train.adam_beta2" => t.adam.beta2 = num(k, v)?,
                "train.adam_eps" => t.adam.eps = num(k, v)?,
                "train.batch_size" => t.batch_size = num(k, v)?,
                "train.iterations" => t.iterations = num(k, v)?,
                "train.seed" => t.seed = num(k, v)?,
                "train.snapshot_every" => t.snapshot_every = num(k, v)?,
                "train.time_policy" => {
                    t.time_policy = TimePolicy::parse(v)
                        .ok_or_else(|| Error::config(k, format!("expected skip_range or full_range, got {v:?}")))?
                }
                "train.coeff_cap" => t.coeff_cap = if v == "none" { None } else { Some(num(k, v)?) },
                "data.kind" => data.kind = Some(v.to_string()),
                "data.n" => cfg.data.n = num(k, v)?,
                "data.seed" => cfg.data.seed = num(k, v)?,
                "data.components" => data.components = Some(num(k, v)?),
                "data.radius" => data.radius = Some(num(k, v)?),
                "data.std" => data.std = Some(num(k, v)?),
                "data.means" => {
                    data.means = Some(v.split(';').map(|p| list(k, p.trim())).collect::<Result<_>>()?)
                }
                "data.stds" => data.stds = Some(list(k, v)?),
                "data.weights" => data.weights = Some(list(k, v)?),
                "data.radii" => data.radii = Some(list(k, v)?),
                "data.thickness" => data.thickness = Some(num(k, v)?),
                "data.turns" => data.turns = Some(num(k, v)?),
                "data.noise" => data.noise = Some(num(k, v)?),
                _ => return Err(Error::config(k, "unknown key")),
            }
        }
        if matches!(cfg.train.model, ModelSpec::Affine)
            && (seen.contains("net.hidden") || seen.contains("net.time_embed_dim"))
        {
            return Err(Error::config("net.hidden", "net.* keys apply only to model.kind = mlp"));
        }
        cfg.train.lr_schedule = match lr_decay.as_str() {
            "constant" => LrSchedule::Constant,
            "inv_sqrt" => LrSchedule::InvSqrt { scale: lr_decay_steps },
            other => {
                return Err(Error::config(
                    "train.lr_decay",
                    format!("expected constant or inv_sqrt, got {other:?}"),
                ))
            }
        };
        cfg.data.kind = data.build()?;
        cfg.train.validate()?;
        cfg.data.validate()?;
        Ok(cfg)
    }

    /// Every setting, in a form [`RunConfig::parse`] reads back identically.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut lines: Vec<(String, String)> = vec![
            ("schedule.T".into(), t.schedule.steps.to_string()),
            ("schedule.beta_start".into(), format!("{:?}", t.schedule.beta_start)),
            ("schedule.beta_end".into(), format!("{:?}", t.schedule.beta_end)),
            ("model.kind".into(), t.model.kind().into()),
        ];
        if let ModelSpec::Mlp {
            hidden,
            time_embed_dim,
        } = &t.model
        {
            lines.push(("net.hidden".into(), fmt_list(hidden)));
            lines.push(("net.time_embed_dim".into(), time_embed_dim.to_string()));
        }
        let (decay, steps) = match t.lr_schedule {
            LrSchedule::Constant => ("constant", None),
            LrSchedule::InvSqrt { scale } => ("inv_sqrt", Some(scale)),
        };
        lines.extend([
            ("train.tau".into(), format!("{:?}", t.tau)),
            ("train.tau_convention".into(), t.tau_convention.as_str().into()),
            ("train.skip".into(), t.skip.to_string()),
            ("train.time_policy".into(), t.time_policy.as_str().into()),
            (
                "train.coeff_cap".into(),
                t.coeff_cap.map_or("none".into(), |c| format!("{c:?}")),
            ),
            ("train.lr".into(), format!("{:?}", t.adam.lr)),
            ("train.lr_decay".into(), decay.into()),
        ]);
        if let Some(s) = steps {
            lines.push(("train.lr_decay_steps".into(), format!("{s:?}")));
        }
        lines.extend([
            ("train.adam_beta1".into(), format!("{:?}", t.adam.beta1)),
            ("train.adam_beta2".into(), format!("{:?}", t.adam.beta2)),
            ("train.adam_eps".into(), format!("{:?}", t.adam.eps)),
            ("train.batch_size".into(), t.batch_size.to_string()),
            ("train.iterations".into(), t.iterations.to_string()),
            ("train.seed".into(), t.seed.to_string()),
            ("train.snapshot_every".into(), t.snapshot_every.to_string()),
            ("data.kind".into(), self.data.kind.name().into()),
            ("data.n".into(), self.data.n.to_string()),
            ("data.seed".into(), self.data.seed.to_string()),
        ]);
        match &self.data.kind {
            DatasetKind::GaussianMixture { means, stds, weights } => {
                let m = means.iter().map(|p| fmt_list(p)).collect::<Vec<_>>().join(";");
                lines.push(("data.means".into(), m));
                lines.push(("data.stds".into(), fmt_list(stds)));
                lines.push(("data.weights".into(), fmt_list(weights)));
            }
            DatasetKind::Rings { radii, thickness } => {
                lines.push(("data.radii".into(), fmt_list(radii)));
                lines.push(("data.thickness".into(), format!("{thickness:?}")));
            }
            DatasetKind::SwissRoll { turns, noise } => {
                lines.push(("data.turns".into(), format!("{turns:?}")));
                lines.push(("data.noise".into(), format!("{noise:?}")));
            }
            DatasetKind::TwoMoons { noise } => lines.push(("data.noise".into(), format!("{noise:?}"))),
        }
        lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// The config echo followed by `manifest.*` lines describing the run.
pub fn manifest_text(cfg: &RunConfig, m: &RunManifest) -> String {
    let mut s = cfg.to_text();
    let mut put = |k: &str, v: String| s += &format!("manifest.{k}={v}\n");
    put("version", m.version.clone());
    put("seed", m.config.seed.to_string());
    put("iterations_run", m.iterations_run.to_string());
    put("data_hash", m.data_hash.clone());
    put("checkpoint_hash", m.checkpoint_hash.clone().unwrap_or_else(|| "none".into()));
    put("abort", m.abort.clone().unwrap_or_else(|| "none".into()));
    put("timing.total_s", format!("{:.6}", m.timing.total_s));
    put("timing.mean_s", format!("{:.9}", m.timing.mean_s));
    put("timing.median_s", format!("{:.9}", m.timing.median_s));
    put("timing.min_s", format!("{:.9}", m.timing.min_s));
    put("timing.max_s", format!("{:.9}", m.timing.max_s));
    for (i, note) in RunManifest::notes().iter().enumerate() {
        put(&format!("note.{i}"), note.to_string());
    }
    for snap in &m.snapshots {
        put(
            &format!("loss.{}", snap.iteration),
            format!("{:?},{:?},{:?}", snap.l0, snap.lskip, snap.combined),
        );
    }
    s
}

/// `iter,l0,lskip,combined` rows for the loss log.
pub fn loss_curve_csv(m: &RunManifest) -> String {
    let mut s = String::from("iter,l0,lskip,combined\n");
    for snap in &m.snapshots {
        s += &format!("{},{:?},{:?},{:?}\n", snap.iteration, snap.l0, snap.lskip, snap.combined);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn parses_sections_and_comments() {
        let text = "# toy run\nschedule.T = 100\nschedule.beta_start=0.001 # low\nschedule.beta_end=0.2\n\
                    train.tau=0.3\ntrain.tau_convention=base\ntrain.skip=10\nnet.hidden=64,32\n\
                    train.lr_decay=inv_sqrt\ntrain.lr_decay_steps=500\ntrain.coeff_cap=5\n\
                    data.kind=rings\ndata.radii=1,3\nmanifest.version=whatever\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.train.schedule.steps, 100);
        assert_eq!(c.train.tau_convention, TauConvention::TauOnBase);
        assert_eq!(c.train.coeff_cap, Some(5.0));
        assert_eq!(c.train.lr_schedule, LrSchedule::InvSqrt { scale: 500.0 });
        assert!(matches!(&c.train.model, ModelSpec::Mlp { hidden, .. } if hidden == &[64, 32]));
        assert!(matches!(&c.data.kind, DatasetKind::Rings { radii, .. } if radii == &[1.0, 3.0]));
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors_name_keys() {
        let e = RunConfig::parse("train.tau=1.2\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "train.tau"), "{e}");
        let e = RunConfig::parse("train.bogus=1\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "train.bogus"));
        let e = RunConfig::parse("a\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = RunConfig::parse("train.skip=3\ntrain.skip=4\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "train.skip"));
        let e = RunConfig::parse("train.seed=abc\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "train.seed"));
    }
}
