use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::manifest::{Manifest, StemRecord};
use super::taxonomy::StemRoster;
use crate::dsp::{load_audio, resample, rms_dbfs, AudioClip, Dbfs};
use crate::error::{Error, Result};

/// Stem audio of one song, conformed to a common rate, channel count and length.
#[derive(Debug, Clone)]
pub struct SongAudio {
    pub song_id: String,
    pub stems: Vec<(StemRecord, AudioClip)>,
}

impl SongAudio {
    pub fn len(&self) -> usize {
        self.stems.first().map_or(0, |(_, c)| c.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sum of stems contributing to `label`, or silence when none do.
    pub fn target(&self, label: &str) -> AudioClip {
        self.sum_where(|s| super::taxonomy::matches(label, &s.fine_label))
    }

    pub fn mixture(&self) -> AudioClip {
        self.sum_where(|_| true)
    }

    pub fn sum_where(&self, keep: impl Fn(&StemRecord) -> bool) -> AudioClip {
        let (c, sr) = self
            .stems
            .first()
            .map_or((1, 44100), |(_, a)| (a.channels(), a.sample_rate()));
        let mut out = AudioClip::zeros(c, self.len(), sr);
        for (rec, clip) in &self.stems {
            if keep(rec) {
                out.add_assign(clip).expect("stems are conformed on load");
            }
        }
        out
    }
}

/// Resample to `sample_rate` and duplicate a mono clip up to `channels`.
pub fn conform(clip: AudioClip, sample_rate: u32, channels: usize) -> Result<AudioClip> {
    let clip = resample(&clip, sample_rate)?;
    match (clip.channels(), channels) {
        (a, b) if a == b => Ok(clip),
        (1, b) => {
            let x = clip.channel(0).to_vec();
            AudioClip::from_channels(vec![x; b], sample_rate)
        }
        (a, b) => Err(Error::shape(format!("cannot conform {a} channels to {b}"))),
    }
}

/// In-memory stem audio for a set of songs.
#[derive(Debug, Clone, Default)]
pub struct AudioBank {
    songs: BTreeMap<String, SongAudio>,
}

impl AudioBank {
    pub fn load<'a>(
        manifest: &Manifest,
        song_ids: impl IntoIterator<Item = &'a str>,
        sample_rate: u32,
        channels: usize,
    ) -> Result<Self> {
        let mut songs = BTreeMap::new();
        for id in song_ids {
            let rec = manifest
                .song(id)
                .ok_or_else(|| Error::InvalidArgument(format!("song `{id}` is not in the manifest")))?;
            let mut stems = Vec::with_capacity(rec.stems.len());
            for s in &rec.stems {
                stems.push((s.clone(), conform(load_audio(&s.path)?, sample_rate, channels)?));
            }
            let len = stems.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
            for (_, c) in stems.iter_mut() {
                if c.len() != len {
                    *c = c.with_len(len);
                }
            }
            songs.insert(
                id.to_string(),
                SongAudio {
                    song_id: id.to_string(),
                    stems,
                },
            );
        }
        Ok(Self { songs })
    }

    pub fn from_songs(songs: impl IntoIterator<Item = SongAudio>) -> Self {
        Self {
            songs: songs.into_iter().map(|s| (s.song_id.clone(), s)).collect(),
        }
    }

    pub fn song(&self, id: &str) -> Option<&SongAudio> {
        self.songs.get(id)
    }

    pub fn songs(&self) -> impl Iterator<Item = &SongAudio> {
        self.songs.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Uniform song, then uniform roster stem present in it.
    #[default]
    Default,
    /// Uniform roster stem, then uniform song containing it.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmsLadder {
    /// `(trials, threshold dBFS)` tiers tried in order; the next chunk after
    /// the last tier is accepted unconditionally.
    pub tiers: Vec<(usize, f64)>,
}

impl Default for RmsLadder {
    fn default() -> Self {
        Self {
            tiers: vec![(10, -36.0), (10, -48.0)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmsTier {
    /// Accepted in ladder tier `n` (1-based).
    Tier(usize),
    Forced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkChoice {
    pub offset: usize,
    /// Chunks rejected before this one.
    pub retries: usize,
    pub tier: RmsTier,
    /// RMS of the (pre-augmentation) target chunk; `None` when silent.
    pub target_dbfs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRef {
    pub song_id: String,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub mixture: AudioClip,
    pub target: AudioClip,
    pub label: String,
    pub query: QueryRef,
    pub song_id: String,
    pub chunk: ChunkChoice,
}

/// Chunk length, RMS retry ladder and augmentation shared by the samplers.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkPolicy {
    pub chunk_len: usize,
    pub ladder: RmsLadder,
    pub augment: AugmentConfig,
}

impl ChunkPolicy {
    pub fn new(chunk_len: usize) -> Self {
        Self {
            chunk_len,
            ladder: RmsLadder::default(),
            augment: AugmentConfig::default(),
        }
    }

    /// Random chunk offsets with the RMS retry ladder applied to `signal`.
    pub fn choose_chunk(&self, signal: &AudioClip, rng: &mut ChaCha8Rng) -> Result<ChunkChoice> {
        let max_offset = signal.len().saturating_sub(self.chunk_len);
        let mut retries = 0;
        let draw = |rng: &mut ChaCha8Rng| -> Result<(usize, Dbfs)> {
            let offset = rng.random_range(0..=max_offset);
            Ok((offset, rms_dbfs(&signal.segment(offset, self.chunk_len))?))
        };
        for (tier, &(trials, threshold)) in self.ladder.tiers.iter().enumerate() {
            for _ in 0..trials {
                let (offset, level) = draw(rng)?;
                if level.is_at_least(threshold) {
                    return Ok(ChunkChoice {
                        offset,
                        retries,
                        tier: RmsTier::Tier(tier + 1),
                        target_dbfs: level.value(),
                    });
                }
                retries += 1;
            }
        }
        let (offset, level) = draw(rng)?;
        Ok(ChunkChoice {
            offset,
            retries,
            tier: RmsTier::Forced,
            target_dbfs: level.value(),
        })
    }

    /// Every stem of `song` cut at `offset`, augmented independently.
    pub fn chunk_stems(&self, song: &SongAudio, offset: usize, rng: &mut ChaCha8Rng) -> Vec<AudioClip> {
        let mut stems: Vec<AudioClip> = song
            .stems
            .iter()
            .map(|(_, c)| c.segment(offset, self.chunk_len))
            .collect();
        augment(&mut stems, &self.augment, rng);
        stems
    }
}

/// Draws mixture/target/query triples from training songs.
#[derive(Debug, Clone)]
pub struct PairSampler<'a> {
    bank: &'a AudioBank,
    songs: Vec<String>,
    roster: StemRoster,
    /// Training songs containing each roster label.
    support: BTreeMap<String, Vec<String>>,
    /// Roster labels present in each training song.
    present: BTreeMap<String, Vec<String>>,
    pub strategy: SamplingStrategy,
    pub chunk: ChunkPolicy,
}

impl<'a> PairSampler<'a> {
    pub fn new(
        bank: &'a AudioBank,
        manifest: &Manifest,
        songs: &[String],
        roster: &StemRoster,
        chunk_len: usize,
    ) -> Result<Self> {
        roster.validate()?;
        let mut support: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut present: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for id in songs {
            let rec = manifest
                .song(id)
                .ok_or_else(|| Error::InvalidArgument(format!("song `{id}` is not in the manifest")))?;
            if bank.song(id).is_none() {
                return Err(Error::InvalidArgument(format!("song `{id}` has no loaded audio")));
            }
            for label in &roster.labels {
                if rec.has(label) {
                    support.entry(label.clone()).or_default().push(id.clone());
                    present.entry(id.clone()).or_default().push(label.clone());
                }
            }
        }
        let missing: Vec<&String> = roster
            .labels
            .iter()
            .filter(|l| !support.contains_key(*l))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "roster `{}` stems {missing:?} have no training songs",
                roster.name
            )));
        }
        Ok(Self {
            bank,
            songs: present.keys().cloned().collect(),
            roster: roster.clone(),
            support,
            present,
            strategy: SamplingStrategy::Default,
            chunk: ChunkPolicy::new(chunk_len),
        })
    }

    pub fn roster(&self) -> &StemRoster {
        &self.roster
    }

    /// Songs in the training pool that contain `label`.
    pub fn support(&self, label: &str) -> &[String] {
        self.support.get(label).map_or(&[], |v| v.as_slice())
    }

    /// Choose `(song, label)` according to the strategy.
    pub fn draw_target(&self, rng: &mut ChaCha8Rng) -> (String, String) {
        match self.strategy {
            SamplingStrategy::Default => {
                let song = self.songs.choose(rng).expect("validated non-empty");
                let label = self.present[song].choose(rng).expect("validated non-empty");
                (song.clone(), label.clone())
            }
            SamplingStrategy::Balanced => {
                let label = self.roster.labels.choose(rng).expect("validated non-empty");
                let song = self.support[label].choose(rng).expect("validated non-empty");
                (song.clone(), label.clone())
            }
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<TrainingExample> {
        let (song_id, label) = self.draw_target(rng);
        let song = self.bank.song(&song_id).expect("validated on construction");
        let chunk = self.chunk.choose_chunk(&song.target(&label), rng)?;
        let stems = self.chunk.chunk_stems(song, chunk.offset, rng);
        let first = &stems[0];
        let mut mixture = AudioClip::zeros(first.channels(), self.chunk.chunk_len, first.sample_rate());
        let mut target = mixture.clone();
        for ((rec, _), clip) in song.stems.iter().zip(&stems) {
            mixture.add_assign(clip)?;
            if super::taxonomy::matches(&label, &rec.fine_label) {
                target.add_assign(clip)?;
            }
        }
        let query_song = self.support[&label].choose(rng).expect("validated non-empty").clone();
        Ok(TrainingExample {
            mixture,
            target,
            query: QueryRef {
                song_id: query_song,
                label: label.clone(),
            },
            label,
            song_id,
            chunk,
        })
    }
}
