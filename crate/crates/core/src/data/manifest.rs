use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::taxonomy::{coarse_of, matches};
use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const METADATA_FILE: &str = "metadata.json";

/// Per-song metadata file as laid out on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SongMetadata {
    pub song_id: String,
    pub artist: String,
    pub genre: String,
    pub stems: Vec<StemMetadata>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemMetadata {
    pub stem_id: String,
    pub label: String,
    /// Path relative to the song directory.
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemRecord {
    pub stem_id: String,
    pub fine_label: String,
    pub coarse_label: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongRecord {
    pub song_id: String,
    pub artist: String,
    pub genre: String,
    pub path: PathBuf,
    pub stems: Vec<StemRecord>,
}

impl SongRecord {
    /// Stems contributing to `label` (a fine label or coarse class).
    pub fn stems_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a StemRecord> + 'a {
        self.stems.iter().filter(move |s| matches(label, &s.fine_label))
    }

    pub fn has(&self, label: &str) -> bool {
        self.stems_for(label).next().is_some()
    }

    /// Every fine label and coarse class present in the song.
    pub fn labels(&self) -> BTreeSet<String> {
        self.stems
            .iter()
            .flat_map(|s| [s.fine_label.clone(), s.coarse_label.clone()])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub songs: Vec<SongRecord>,
    /// Audio files found on disk that no metadata file references.
    pub orphans: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn song(&self, song_id: &str) -> Option<&SongRecord> {
        self.songs.iter().find(|s| s.song_id == song_id)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: m.schema_version,
                expected: MANIFEST_SCHEMA_VERSION,
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn is_wav(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn wav_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            wav_files(&p, out)?;
        } else if is_wav(&p) {
            out.push(p);
        }
    }
    Ok(())
}

/// Scan `root/<song>/metadata.json` directories into a manifest ordered by song id.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<Manifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::NotFound(root.to_path_buf()));
    }
    let mut songs = Vec::new();
    let mut orphans = Vec::new();
    let mut warnings = Vec::new();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let meta_path = dir.join(METADATA_FILE);
        let mut audio = Vec::new();
        wav_files(&dir, &mut audio)?;
        if !meta_path.is_file() {
            if !audio.is_empty() {
                warnings.push(format!("{} has audio but no metadata", dir.display()));
            }
            orphans.extend(audio);
            continue;
        }
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: SongMetadata = serde_json::from_str(&text).map_err(|e| Error::Metadata {
            path: meta_path.clone(),
            detail: e.to_string(),
        })?;
        let mut stems = Vec::with_capacity(meta.stems.len());
        let mut ids = BTreeSet::new();
        for s in &meta.stems {
            let coarse = coarse_of(&s.label)?;
            if !ids.insert(s.stem_id.clone()) {
                return Err(Error::Metadata {
                    path: meta_path.clone(),
                    detail: format!("duplicate stem id `{}`", s.stem_id),
                });
            }
            let path = dir.join(&s.file);
            if !path.is_file() {
                return Err(Error::Metadata {
                    path: meta_path.clone(),
                    detail: format!("stem file {} does not exist", path.display()),
                });
            }
            stems.push(StemRecord {
                stem_id: s.stem_id.clone(),
                fine_label: s.label.clone(),
                coarse_label: coarse.to_string(),
                path,
            });
        }
        let referenced: BTreeSet<PathBuf> = stems.iter().map(|s| s.path.clone()).collect();
        let mixture = dir.join(super::synth::MIXTURE_FILE);
        orphans.extend(
            audio
                .into_iter()
                .filter(|p| !referenced.contains(p) && *p != mixture),
        );
        songs.push(SongRecord {
            song_id: meta.song_id,
            artist: meta.artist,
            genre: meta.genre,
            path: dir,
            stems,
        });
    }
    songs.sort_by(|a, b| a.song_id.cmp(&b.song_id));
    if let Some(w) = songs.windows(2).find(|w| w[0].song_id == w[1].song_id) {
        return Err(Error::Config(format!("duplicate song id `{}`", w[0].song_id)));
    }
    if songs.is_empty() {
        warnings.push(format!("no songs found under {}", root.display()));
        tracing::warn!(root = %root.display(), "dataset is empty");
    }
    Ok(Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        songs,
        orphans,
        warnings,
    })
}
