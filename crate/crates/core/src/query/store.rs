use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::{embed_query, EmbedderBackend, RawQueryFeatures};
use crate::data::QueryIndex;
use crate::dsp::load_audio;
use crate::error::{Error, Result};

pub const EMBEDDING_SCHEMA_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"BANQEMB\0";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordHeader {
    schema_version: u32,
    backend_id: String,
    song_id: String,
    stem: String,
    dim: usize,
    frames: usize,
    sha256: String,
}

/// On-disk cache of raw query features, one file per (backend, song, stem).
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    root: PathBuf,
}

fn payload_bytes(series: &Array2<f32>) -> Vec<u8> {
    series.iter().flat_map(|v| v.to_le_bytes()).collect()
}

impl EmbeddingStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, backend: &str, song: &str, stem: &str) -> PathBuf {
        self.root.join(backend).join(song).join(format!("{stem}.emb"))
    }

    pub fn contains(&self, backend: &str, song: &str, stem: &str) -> bool {
        self.path(backend, song, stem).is_file()
    }

    pub fn put(&self, song: &str, stem: &str, features: &RawQueryFeatures) -> Result<()> {
        let path = self.path(&features.backend_id, song, stem);
        let payload = payload_bytes(&features.series);
        let header = RecordHeader {
            schema_version: EMBEDDING_SCHEMA_VERSION,
            backend_id: features.backend_id.clone(),
            song_id: song.to_string(),
            stem: stem.to_string(),
            dim: features.dim(),
            frames: features.frames(),
            sha256: hex::encode(Sha256::digest(&payload)),
        };
        let header = serde_json::to_vec(&header)?;
        let dir = path.parent().expect("record path has a parent");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = path.with_extension("emb.tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut bytes = Vec::with_capacity(16 + header.len() + payload.len());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&header);
        bytes.extend_from_slice(&payload);
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn get(&self, backend: &str, song: &str, stem: &str) -> Result<RawQueryFeatures> {
        let path = self.path(backend, song, stem);
        if !path.is_file() {
            return Err(Error::EmbeddingNotFound {
                song: song.to_string(),
                stem: stem.to_string(),
                backend: backend.to_string(),
            });
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let corrupt = |detail: &str| Error::CorruptEntry {
            key: format!("{backend}/{song}/{stem}"),
            detail: detail.to_string(),
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let hbytes = bytes.get(16..16 + hlen).ok_or_else(|| corrupt("truncated header"))?;
        let header: RecordHeader =
            serde_json::from_slice(hbytes).map_err(|e| corrupt(&format!("header: {e}")))?;
        if header.schema_version != EMBEDDING_SCHEMA_VERSION {
            return Err(corrupt(&format!("schema version {}", header.schema_version)));
        }
        if header.backend_id != backend || header.song_id != song || header.stem != stem {
            return Err(corrupt("header key does not match file location"));
        }
        let payload = &bytes[16 + hlen..];
        if payload.len() != 4 * header.dim * header.frames {
            return Err(corrupt("payload length does not match header"));
        }
        if hex::encode(Sha256::digest(payload)) != header.sha256 {
            return Err(corrupt("checksum mismatch"));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let series = Array2::from_shape_vec((header.frames, header.dim), values)
            .map_err(|e| corrupt(&e.to_string()))?;
        Ok(RawQueryFeatures {
            series,
            backend_id: header.backend_id,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheSummary {
    pub computed: usize,
    pub skipped: usize,
}

/// Embed every indexed query not yet in the store. Existing entries are
/// validated, never recomputed.
pub fn cache_embeddings(
    index: &QueryIndex,
    backend: &dyn EmbedderBackend,
    store: &EmbeddingStore,
) -> Result<CacheSummary> {
    let mut summary = CacheSummary {
        computed: 0,
        skipped: 0,
    };
    for e in &index.entries {
        if store.contains(backend.id(), &e.song_id, &e.label) {
            store.get(backend.id(), &e.song_id, &e.label)?;
            summary.skipped += 1;
            continue;
        }
        let features = embed_query(&load_audio(&e.path)?, backend)?;
        store.put(&e.song_id, &e.label, &features)?;
        summary.computed += 1;
    }
    Ok(summary)
}

/// Time-pooled query features held in memory, keyed by (song, label).
#[derive(Debug, Clone, Default)]
pub struct QueryBank {
    pub backend_id: String,
    pooled: BTreeMap<(String, String), Vec<f32>>,
}

impl QueryBank {
    pub fn new(backend_id: impl Into<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
            pooled: BTreeMap::new(),
        }
    }

    /// Load the pooled features of every indexed entry from the store.
    pub fn load(store: &EmbeddingStore, backend_id: &str, index: &QueryIndex) -> Result<Self> {
        let mut bank = Self::new(backend_id);
        for e in &index.entries {
            let raw = store.get(backend_id, &e.song_id, &e.label)?;
            bank.insert(&e.song_id, &e.label, raw.pooled());
        }
        Ok(bank)
    }

    pub fn insert(&mut self, song: &str, label: &str, pooled: Vec<f32>) {
        self.pooled.insert((song.to_string(), label.to_string()), pooled);
    }

    pub fn get(&self, song: &str, label: &str) -> Result<&[f32]> {
        self.pooled
            .get(&(song.to_string(), label.to_string()))
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::EmbeddingNotFound {
                song: song.to_string(),
                stem: label.to_string(),
                backend: self.backend_id.clone(),
            })
    }

    pub fn contains(&self, song: &str, label: &str) -> bool {
        self.pooled.contains_key(&(song.to_string(), label.to_string()))
    }

    pub fn len(&self) -> usize {
        self.pooled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pooled.is_empty()
    }
}
