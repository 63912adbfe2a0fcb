use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::model::{net_dims, CoDiModel};
use crate::data::{hex, SchemaSpec, TableSchema};
use crate::nn::{DiffusionNet, NetDims, OptimizerState, Param};
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "codi-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NetRecord {
    dims: NetDims,
    params: Vec<Param>,
    optimizer: OptimizerState,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    schema_hash: String,
    schema: SchemaSpec,
    config: TrainConfig,
    schedule: NoiseSchedule,
    step: u64,
    epoch: u64,
    net_c: Option<NetRecord>,
    net_d: Option<NetRecord>,
}

#[derive(Serialize)]
struct Architecture<'a> {
    schema: &'a TableSchema,
    hidden: [usize; 3],
    emb_dim: usize,
    timesteps: usize,
    beta_start: f64,
    beta_end: f64,
}

/// Hash of the schema together with everything that fixes parameter shapes and
/// the noise schedule.
pub fn architecture_hash(schema: &TableSchema, config: &TrainConfig) -> String {
    let arch = Architecture {
        schema,
        hidden: config.hidden,
        emb_dim: config.emb_dim,
        timesteps: config.timesteps,
        beta_start: config.beta_start,
        beta_end: config.beta_end,
    };
    let json = serde_json::to_string(&arch).expect("architecture serializes");
    hex(&Sha256::digest(json.as_bytes()))
}

fn record(net: &Option<DiffusionNet>, opt: &Option<OptimizerState>) -> Option<NetRecord> {
    match (net, opt) {
        (Some(n), Some(o)) => Some(NetRecord {
            dims: n.dims().clone(),
            params: n.params().to_vec(),
            optimizer: o.clone(),
        }),
        _ => None,
    }
}

fn restore(
    which: &str,
    rec: Option<NetRecord>,
    expected: Option<NetDims>,
) -> Result<(Option<DiffusionNet>, Option<OptimizerState>)> {
    match (rec, expected) {
        (None, None) => Ok((None, None)),
        (Some(r), Some(dims)) => {
            if r.dims != dims {
                return Err(Error::Checkpoint(format!(
                    "{which} dimensions do not match the stored schema"
                )));
            }
            let net = DiffusionNet::from_params(dims, r.params)?;
            r.optimizer.validate_for(&net)?;
            Ok((Some(net), Some(r.optimizer)))
        }
        (Some(_), None) => Err(Error::Checkpoint(format!(
            "unexpected {which} for this schema"
        ))),
        (None, Some(_)) => Err(Error::Checkpoint(format!("{which} missing"))),
    }
}

impl CoDiModel {
    pub fn architecture_hash(&self) -> String {
        architecture_hash(&self.schema, &self.config)
    }

    /// Writes the model, optimizer state and counters as JSON. The file is
    /// written next to `path` and renamed into place.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            schema_hash: self.architecture_hash(),
            schema: self.schema.to_spec(),
            config: self.config.clone(),
            schedule: self.schedule.clone(),
            step: self.step,
            epoch: self.epoch,
            net_c: record(&self.net_c, &self.opt_c),
            net_d: record(&self.net_d, &self.opt_d),
        };
        let json = serde_json::to_vec(&file)?;
        let name = path
            .file_name()
            .ok_or_else(|| Error::Checkpoint(format!("{} is not a file path", path.display())))?;
        let tmp = path.with_file_name(format!(
            ".{}.tmp{}",
            name.to_string_lossy(),
            std::process::id()
        ));
        let write = || -> std::io::Result<()> {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&json)?;
            f.sync_all()?;
            std::fs::rename(&tmp, path)
        };
        write().map_err(|e| {
            let _ = std::fs::remove_file(&tmp);
            Error::io(path, e)
        })
    }

    /// Reads a checkpoint and checks it is internally consistent.
    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }

    /// Reads a checkpoint that must have been trained for `schema` with the
    /// architecture of `config`.
    pub fn load_checkpoint_for(
        path: &Path,
        schema: &TableSchema,
        config: &TrainConfig,
    ) -> Result<Self> {
        let model = Self::load_checkpoint(path)?;
        let expected = architecture_hash(schema, config);
        let found = model.architecture_hash();
        if found != expected {
            return Err(Error::SchemaHash { found, expected });
        }
        Ok(model)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_slice(bytes)?;
        if value.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let file: CheckpointFile = serde_json::from_value(value)?;
        let schema = file.schema.resolve_pinned()?;
        let config = file.config;
        config.validate()?;
        let expected = architecture_hash(&schema, &config);
        if file.schema_hash != expected {
            return Err(Error::SchemaHash {
                found: file.schema_hash,
                expected,
            });
        }
        file.schedule.validate()?;
        if file.schedule != config.schedule()? {
            return Err(Error::Checkpoint(
                "stored schedule disagrees with its config".into(),
            ));
        }
        let (dc, dd) = net_dims(&schema, &config);
        let (net_c, opt_c) = restore("net_c", file.net_c, dc)?;
        let (net_d, opt_d) = restore("net_d", file.net_d, dd)?;
        Ok(Self {
            net_c,
            net_d,
            opt_c,
            opt_d,
            schedule: file.schedule,
            schema,
            config,
            step: file.step,
            epoch: file.epoch,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode, generate_toy};
    use crate::rng::{stream_rng, Stream};

    fn model() -> (CoDiModel, crate::data::EncodedBatch) {
        let (schema, table) = generate_toy(32, &mut stream_rng(1, Stream::Toy, 0)).unwrap();
        let cfg = TrainConfig {
            hidden: [4, 8, 8],
            emb_dim: 4,
            batch_size: 8,
            timesteps: 5,
            ..Default::default()
        };
        let data = encode(&table, &schema).unwrap();
        (CoDiModel::new(schema, cfg).unwrap(), data)
    }

    #[test]
    fn round_trip_preserves_sampling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let (mut m, data) = model();
        m.fit(&data, 1, |_| {}).unwrap();
        m.save_checkpoint(&path).unwrap();
        let back = CoDiModel::load_checkpoint(&path).unwrap();
        assert_eq!(back.step(), m.step());
        assert_eq!(back.sample(30, 9).unwrap(), m.sample(30, 9).unwrap());
        assert_eq!(back.net_c().unwrap(), m.net_c().unwrap());
        assert_eq!(back.opt_d, m.opt_d);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let (m, _) = model();
        m.save_checkpoint(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(CoDiModel::load_checkpoint(&path).is_err());
    }

    #[test]
    fn wrong_architecture_is_a_hash_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let (m, _) = model();
        m.save_checkpoint(&path).unwrap();
        let mut other = m.config().clone();
        other.hidden = [8, 8, 8];
        let err = CoDiModel::load_checkpoint_for(&path, m.schema(), &other).unwrap_err();
        assert!(matches!(err, Error::SchemaHash { .. }), "{err}");
        assert!(CoDiModel::load_checkpoint_for(&path, m.schema(), m.config()).is_ok());
    }

    #[test]
    fn version_mismatch_is_reported() {
        let (m, _) = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save_checkpoint(&path).unwrap();
        let mut v: serde_json::Value =
            serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        v["version"] = 99.into();
        let err = CoDiModel::from_checkpoint_bytes(&serde_json::to_vec(&v).unwrap()).unwrap_err();
        assert!(matches!(err, Error::CheckpointVersion { found: 99, .. }));
    }
}
