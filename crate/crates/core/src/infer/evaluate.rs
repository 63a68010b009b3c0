use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::query_select::{select_query, QueryMode, QueryTier};
use super::separate::{separate_track, InferenceConfig};
use crate::data::taxonomy::{coarse_of, is_coarse};
use crate::data::{AudioBank, Manifest, SongAudio, StemRoster};
use crate::dsp::{rms_dbfs, AudioClip};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, snr, Exclusion, MetricEntry, MetricReport};
use crate::model::Banquet;
use crate::query::QueryBank;

/// Produces a full-track estimate of one stem.
pub trait StemEstimator {
    fn estimate(&self, song: &SongAudio, mixture: &AudioClip, stem: &str, query: &[f32]) -> Result<AudioClip>;
}

pub struct ModelEstimator<'a> {
    pub model: &'a Banquet,
    pub inference: InferenceConfig,
}

impl StemEstimator for ModelEstimator<'_> {
    fn estimate(&self, _song: &SongAudio, mixture: &AudioClip, _stem: &str, query: &[f32]) -> Result<AudioClip> {
        separate_track(self.model, mixture, query, &self.inference)
    }
}

/// Returns the ground-truth stem.
pub struct OracleEstimator;

impl StemEstimator for OracleEstimator {
    fn estimate(&self, song: &SongAudio, _mixture: &AudioClip, stem: &str, _query: &[f32]) -> Result<AudioClip> {
        Ok(song.target(stem))
    }
}

/// Returns silence.
pub struct ZeroEstimator;

impl StemEstimator for ZeroEstimator {
    fn estimate(&self, _song: &SongAudio, mixture: &AudioClip, _stem: &str, _query: &[f32]) -> Result<AudioClip> {
        Ok(AudioClip::zeros(mixture.channels(), mixture.len(), mixture.sample_rate()))
    }
}

pub struct EvalSetup<'a> {
    pub manifest: &'a Manifest,
    pub audio: &'a AudioBank,
    pub queries: &'a QueryBank,
    /// Songs to separate.
    pub songs: Vec<String>,
    /// Songs different-song queries may come from.
    pub query_pool: Vec<String>,
    pub roster: StemRoster,
    pub mode: QueryMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub song: String,
    pub stem: String,
    pub query_song: String,
    pub tier: QueryTier,
}

/// Output level of one estimate, for collapse detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemLevel {
    pub song: String,
    pub stem: String,
    pub dbfs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub fine: MetricReport,
    pub coarse: MetricReport,
    pub queries: Vec<QueryRecord>,
    pub levels: Vec<StemLevel>,
}

fn coarse_class(label: &str) -> Result<String> {
    if is_coarse(label) {
        Ok(label.to_string())
    } else {
        Ok(coarse_of(label)?.to_string())
    }
}

/// Separate every roster stem of every song and score against ground truth.
/// Coarse scores sum the fine estimates of each coarse class and compare to
/// the full coarse reference, including stems outside the roster.
pub fn evaluate(setup: &EvalSetup<'_>, estimator: &dyn StemEstimator) -> Result<Evaluation> {
    setup.roster.validate()?;
    let mode = setup.mode.as_str().to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let mut fine = Vec::new();
    let mut fine_skips = Vec::new();
    let mut coarse = Vec::new();
    let mut queries = Vec::new();
    let mut levels = Vec::new();
    for song_id in &setup.songs {
        let record = setup
            .manifest
            .song(song_id)
            .ok_or_else(|| Error::InvalidArgument(format!("song `{song_id}` is not in the manifest")))?;
        let song = setup
            .audio
            .song(song_id)
            .ok_or_else(|| Error::InvalidArgument(format!("song `{song_id}` has no loaded audio")))?;
        let mixture = song.mixture();
        let mut by_coarse: BTreeMap<String, AudioClip> = BTreeMap::new();
        for stem in &setup.roster.labels {
            let skip = |reason: &str| Exclusion {
                song: song_id.clone(),
                stem: stem.clone(),
                reason: reason.to_string(),
            };
            if !record.has(stem) {
                fine_skips.push(skip("stem absent from song"));
                continue;
            }
            let Some(sel) = select_query(setup.manifest, &setup.query_pool, song_id, stem, setup.mode, &mut rng)
            else {
                fine_skips.push(skip("no eligible query song"));
                continue;
            };
            let query = setup.queries.get(&sel.song_id, &sel.label)?;
            let estimate = estimator.estimate(song, &mixture, stem, query)?;
            fine.push(MetricEntry {
                song: song_id.clone(),
                stem: stem.clone(),
                query_mode: mode.clone(),
                snr: snr(&estimate, &song.target(stem))?,
            });
            levels.push(StemLevel {
                song: song_id.clone(),
                stem: stem.clone(),
                dbfs: rms_dbfs(&estimate)?.value(),
            });
            queries.push(QueryRecord {
                song: song_id.clone(),
                stem: stem.clone(),
                query_song: sel.song_id,
                tier: sel.tier,
            });
            match by_coarse.get_mut(&coarse_class(stem)?) {
                Some(acc) => acc.add_assign(&estimate)?,
                None => {
                    by_coarse.insert(coarse_class(stem)?, estimate);
                }
            }
        }
        for (class, estimate) in by_coarse {
            coarse.push(MetricEntry {
                song: song_id.clone(),
                snr: snr(&estimate, &song.target(&class))?,
                stem: class,
                query_mode: mode.clone(),
            });
        }
    }
    Ok(Evaluation {
        fine: aggregate(fine, fine_skips),
        coarse: aggregate(coarse, Vec::new()),
        queries,
        levels,
    })
}
