use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{write_json, Manifest};
use super::onset::extract_query;
use super::sampling::AudioBank;
use crate::dsp::{load_audio, save_audio, AudioClip};
use crate::error::{Error, Result};

pub const QUERY_INDEX_SCHEMA_VERSION: u32 = 1;
pub const QUERY_WINDOW_SECS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryIndexEntry {
    pub song_id: String,
    pub label: String,
    pub path: PathBuf,
    pub onset_score: f64,
    pub offset: usize,
    pub padded: bool,
}

/// Map from (song, label) to an extracted query excerpt on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryIndex {
    pub schema_version: u32,
    pub window_secs: f64,
    pub entries: Vec<QueryIndexEntry>,
}

impl QueryIndex {
    pub fn get(&self, song_id: &str, label: &str) -> Option<&QueryIndexEntry> {
        self.entries
            .iter()
            .find(|e| e.song_id == song_id && e.label == label)
    }

    pub fn load_clip(&self, song_id: &str, label: &str) -> Result<AudioClip> {
        let e = self.get(song_id, label).ok_or_else(|| {
            Error::InvalidArgument(format!("no extracted query for {song_id}/{label}"))
        })?;
        load_audio(&e.path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let idx: QueryIndex = serde_json::from_str(&text)?;
        if idx.schema_version != QUERY_INDEX_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: idx.schema_version,
                expected: QUERY_INDEX_SCHEMA_VERSION,
            });
        }
        Ok(idx)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

/// Extract the strongest-onset excerpt for every label (fine and coarse)
/// present in every song, writing `out_dir/<song>/<label>.wav`.
pub fn extract_all_queries(manifest: &Manifest, out_dir: impl AsRef<Path>, window_secs: f64) -> Result<QueryIndex> {
    let out_dir = out_dir.as_ref();
    let mut entries = Vec::new();
    for song in &manifest.songs {
        let rate = song
            .stems
            .first()
            .map(|s| load_audio(&s.path).map(|c| (c.sample_rate(), c.channels())))
            .transpose()?;
        let Some((rate, channels)) = rate else { continue };
        let bank = AudioBank::load(manifest, [song.song_id.as_str()], rate, channels)?;
        let audio = bank.song(&song.song_id).expect("just loaded");
        for label in song.labels() {
            let (clip, window) = extract_query(&audio.target(&label), window_secs)?;
            let path = out_dir.join(&song.song_id).join(format!("{label}.wav"));
            save_audio(&path, &clip)?;
            entries.push(QueryIndexEntry {
                song_id: song.song_id.clone(),
                label,
                path,
                onset_score: window.onset_score,
                offset: window.offset,
                padded: window.padded,
            });
        }
    }
    Ok(QueryIndex {
        schema_version: QUERY_INDEX_SCHEMA_VERSION,
        window_secs,
        entries,
    })
}
