//! Binary checkpoint format.
//!
//! Layout: the 4-byte magic `S2DM`, a little-endian `u32` format version, a
//! little-endian `u32` header length, the header as `key=value` lines in a
//! fixed order, then the parameters as little-endian `f64` in model order.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::difftrain::{TauConvention, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::smallnet::{Trainable, ACTIVATION};

pub const MAGIC: &[u8; 4] = b"S2DM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub model: ModelSpec,
    pub data_dim: usize,
    pub schedule: ScheduleParams,
    pub tau: f64,
    pub tau_convention: TauConvention,
    pub skip: usize,
    pub seed: u64,
    pub iterations: usize,
    /// SHA-256 of the training data.
    pub data_hash: String,
    pub param_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl CheckpointHeader {
    fn to_text(&self) -> String {
        let (hidden, embed) = match &self.model {
            ModelSpec::Mlp {
                hidden,
                time_embed_dim,
            } => (join(hidden), time_embed_dim.to_string()),
            ModelSpec::Affine => (String::new(), "0".into()),
        };
        let activation = match self.model {
            ModelSpec::Mlp { .. } => ACTIVATION,
            ModelSpec::Affine => "none",
        };
        let lines = [
            ("model.kind", self.model.kind().to_string()),
            ("model.data_dim", self.data_dim.to_string()),
            ("net.hidden", hidden),
            ("net.time_embed_dim", embed),
            ("net.activation", activation.to_string()),
            ("schedule.T", self.schedule.steps.to_string()),
            ("schedule.beta_start", format!("{:?}", self.schedule.beta_start)),
            ("schedule.beta_end", format!("{:?}", self.schedule.beta_end)),
            ("train.tau", format!("{:?}", self.tau)),
            ("train.tau_convention", self.tau_convention.as_str().to_string()),
            ("train.skip", self.skip.to_string()),
            ("train.seed", self.seed.to_string()),
            ("train.iterations", self.iterations.to_string()),
            ("data.hash", self.data_hash.clone()),
            ("params.count", self.param_count.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn parse(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i as u64 + 1,
                column: 1,
                msg: format!("checkpoint header line without `=`: {line:?}"),
            })?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<&str> {
            map.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::config(k, "missing from checkpoint header"))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::config(k, format!("bad value {v:?} in checkpoint header")))
        }
        let model = match get("model.kind")? {
            "mlp" => {
                let h = get("net.hidden")?;
                let hidden = if h.is_empty() {
                    Vec::new()
                } else {
                    h.split(',').map(|x| num("net.hidden", x)).collect::<Result<Vec<usize>>>()?
                };
                let act = get("net.activation")?;
                if act != ACTIVATION {
                    return Err(Error::config("net.activation", format!("unsupported activation {act:?}")));
                }
                ModelSpec::Mlp {
                    hidden,
                    time_embed_dim: num("net.time_embed_dim", get("net.time_embed_dim")?)?,
                }
            }
            "affine" => ModelSpec::Affine,
            other => return Err(Error::config("model.kind", format!("unknown model kind {other:?}"))),
        };
        let conv = get("train.tau_convention")?;
        Ok(Self {
            model,
            data_dim: num("model.data_dim", get("model.data_dim")?)?,
            schedule: ScheduleParams {
                steps: num("schedule.T", get("schedule.T")?)?,
                beta_start: num("schedule.beta_start", get("schedule.beta_start")?)?,
                beta_end: num("schedule.beta_end", get("schedule.beta_end")?)?,
            },
            tau: num("train.tau", get("train.tau")?)?,
            tau_convention: TauConvention::parse(conv)
                .ok_or_else(|| Error::config("train.tau_convention", format!("unknown value {conv:?}")))?,
            skip: num("train.skip", get("train.skip")?)?,
            seed: num("train.seed", get("train.seed")?)?,
            iterations: num("train.iterations", get("train.iterations")?)?,
            data_hash: get("data.hash")?.to_string(),
            param_count: num("params.count", get("params.count")?)?,
        })
    }
}

impl Checkpoint {
    pub fn from_model(model: &Model, config: &TrainConfig, data_hash: &str) -> Self {
        use crate::predictor::NoisePredictor;
        Self {
            header: CheckpointHeader {
                model: model.spec(),
                data_dim: model.data_dim(),
                schedule: config.schedule,
                tau: config.tau,
                tau_convention: config.tau_convention,
                skip: config.skip,
                seed: config.seed,
                iterations: config.iterations,
                data_hash: data_hash.to_string(),
                param_count: model.param_count(),
            },
            params: model.params().to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header.to_text();
        let mut out = Vec::with_capacity(12 + header.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = || Error::Parse {
            line: 0,
            column: 0,
            msg: "checkpoint truncated".into(),
        };
        if bytes.len() < 12 {
            return Err(short());
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Parse {
                line: 0,
                column: 0,
                msg: "not a checkpoint (bad magic)".into(),
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(short)?;
        let text = std::str::from_utf8(body).map_err(|_| Error::Parse {
            line: 0,
            column: 0,
            msg: "checkpoint header is not UTF-8".into(),
        })?;
        let header = CheckpointHeader::parse(text)?;
        let payload = &bytes[12 + hlen..];
        if payload.len() != 8 * header.param_count {
            return Err(Error::Shape(format!(
                "checkpoint payload holds {} bytes, header declares {} parameters",
                payload.len(),
                header.param_count
            )));
        }
        let params = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let ck = Self { header, params };
        ck.model()?;
        Ok(ck)
    }

    /// Lowercase hex SHA-256 of [`Checkpoint::to_bytes`].
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsio::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn model(&self) -> Result<Model> {
        self.header
            .model
            .with_params(self.header.data_dim, self.header.schedule.steps, self.params.clone())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        self.header.schedule.build()
    }
}
