//! Versioned checkpoint container: magic, little-endian header length, JSON
//! header, then a flat little-endian f32 payload indexed by the header.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::EpochRecord;
use crate::error::{Error, Result};
use crate::model::{BandSpec, Banquet, ModelConfig, ModelMode, ParamGroup};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"BANQCKPT";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Banquet,
    pub optimizer: Option<Adam>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub config_hash: String,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Section {
    Param,
    AdamM,
    AdamV,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    section: Section,
    shape: Vec<usize>,
    group: ParamGroup,
    trainable: bool,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    model: ModelConfig,
    mode: ModelMode,
    bands: BandSpec,
    config_hash: String,
    epoch: usize,
    history: Vec<EpochRecord>,
    optimizer: Option<OptimizerHeader>,
    tensors: Vec<TensorEntry>,
    payload_len: usize,
}

fn push_tensor(t: &Tensor, payload: &mut Vec<f32>) -> Result<usize> {
    let offset = payload.len();
    payload.extend(t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?);
    Ok(offset)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.params();
        let mut payload = Vec::new();
        let mut tensors = Vec::new();
        for p in params.iter() {
            let t = p.var.as_tensor();
            tensors.push(TensorEntry {
                name: p.name.clone(),
                section: Section::Param,
                shape: t.dims().to_vec(),
                group: p.group,
                trainable: p.trainable,
                offset: push_tensor(t, &mut payload)?,
            });
            if let Some((m, v)) = self.optimizer.as_ref().and_then(|o| o.moments.get(&p.name)) {
                for (section, t) in [(Section::AdamM, m), (Section::AdamV, v)] {
                    tensors.push(TensorEntry {
                        name: p.name.clone(),
                        section,
                        shape: t.dims().to_vec(),
                        group: p.group,
                        trainable: p.trainable,
                        offset: push_tensor(t, &mut payload)?,
                    });
                }
            }
        }
        let header = Header {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            model: self.model.config().clone(),
            mode: self.model.mode().clone(),
            bands: self.model.bands().clone(),
            config_hash: self.config_hash.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                config: o.config,
                step: o.step,
            }),
            tensors,
            payload_len: payload.len(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + header.len() + 4 * payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_bytes = bytes
            .get(16..16 + header_len)
            .ok_or_else(|| corrupt("truncated header"))?;
        let raw: serde_json::Value = serde_json::from_slice(header_bytes)?;
        let found = raw
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| corrupt("header has no schema version"))? as u32;
        if found != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found,
                expected: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        let header: Header = serde_json::from_value(raw)?;
        let body = &bytes[16 + header_len..];
        if body.len() != 4 * header.payload_len {
            return Err(corrupt("payload length does not match header"));
        }
        let payload: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let mut model = Banquet::build(header.model, header.bands, header.mode, 0, DType::F32)?;
        let expected: BTreeSet<String> = model.params().iter().map(|p| p.name.clone()).collect();
        let mut seen = BTreeSet::new();
        let mut optimizer = header.optimizer.map(|o| {
            let mut adam = Adam::new(o.config);
            adam.step = o.step;
            adam
        });
        let mut pending_m = std::collections::BTreeMap::new();
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            let values = payload
                .get(entry.offset..entry.offset + n)
                .ok_or_else(|| corrupt("tensor extends past payload"))?
                .to_vec();
            let t = Tensor::from_vec(values, entry.shape.as_slice(), &Device::Cpu)?;
            match entry.section {
                Section::Param => {
                    model.params().assign(&entry.name, &t)?;
                    model.params_mut().set_param_trainable(&entry.name, entry.trainable)?;
                    seen.insert(entry.name.clone());
                }
                Section::AdamM => {
                    pending_m.insert(entry.name.clone(), t);
                }
                Section::AdamV => {
                    let adam = optimizer
                        .as_mut()
                        .ok_or_else(|| corrupt("optimizer moments without optimizer header"))?;
                    let m = pending_m
                        .remove(&entry.name)
                        .ok_or_else(|| corrupt("second moment without first"))?;
                    adam.moments.insert(entry.name.clone(), (m, t));
                }
            }
        }
        if seen != expected {
            let missing: Vec<_> = expected.difference(&seen).take(5).collect();
            return Err(Error::Checkpoint(format!(
                "parameter set does not match the model structure (missing e.g. {missing:?})"
            )));
        }
        Ok(Self {
            model,
            optimizer,
            epoch: header.epoch,
            config_hash: header.config_hash,
            history: header.history,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let bytes = self.to_bytes()?;
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Copy every encoder tensor of `from` into `to` by name.
pub fn transfer_encoder(from: &Banquet, to: &mut Banquet) -> Result<usize> {
    let mut copied = 0;
    for p in from.params().iter().filter(|p| p.group.is_encoder()) {
        to.params().assign(&p.name, p.var.as_tensor())?;
        copied += 1;
    }
    let expected = to.params().iter().filter(|p| p.group.is_encoder()).count();
    if copied != expected {
        return Err(Error::Checkpoint(format!(
            "encoder transfer copied {copied} tensors but the target has {expected}"
        )));
    }
    Ok(copied)
}
