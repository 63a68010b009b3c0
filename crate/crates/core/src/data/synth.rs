//! Synthetic multitrack toy dataset: additive stems with label-specific
//! oscillator timbres and note envelopes.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{write_json, SongMetadata, StemMetadata, METADATA_FILE};
use super::taxonomy::{coarse_of, fine_labels};
use crate::dsp::{save_audio, AudioClip};
use crate::error::{Error, Result};

pub const MIXTURE_FILE: &str = "mixture.wav";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub songs: usize,
    pub duration_secs: f64,
    pub sample_rate: u32,
    pub channels: usize,
    pub genres: Vec<String>,
    pub artists: usize,
    /// Fine labels stems are drawn from.
    pub labels: Vec<String>,
    pub min_stems: usize,
    pub max_stems: usize,
    /// Stem RMS level before mixing.
    pub stem_dbfs: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            songs: 10,
            duration_secs: 12.0,
            sample_rate: 44100,
            channels: 2,
            genres: vec!["rock".into(), "pop".into()],
            artists: 5,
            labels: PALETTE.iter().map(|v| v.0.to_string()).collect(),
            min_stems: 3,
            max_stems: 5,
            stem_dbfs: -20.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Timbre {
    /// Harmonic tone: fundamental, harmonic count.
    Tonal(f64, usize),
    /// Band of random sinusoids between `lo` and `hi` Hz.
    Noise(f64, f64),
}

/// Toy palette; spectral centroids sit at least 2.2x apart.
const PALETTE: &[(&str, Timbre)] = &[
    ("bass_guitar", Timbre::Tonal(82.0, 4)),
    ("lead_male_singer", Timbre::Tonal(196.0, 4)),
    ("lead_female_singer", Timbre::Tonal(523.0, 4)),
    ("clean_electric_guitar", Timbre::Tonal(1300.0, 3)),
    ("full_acoustic_drumkit", Timbre::Noise(4000.0, 5200.0)),
    ("fx", Timbre::Noise(9500.0, 12000.0)),
];

fn timbre(label: &str) -> Result<Timbre> {
    coarse_of(label)?;
    if let Some((_, t)) = PALETTE.iter().find(|(l, _)| *l == label) {
        return Ok(*t);
    }
    let index = fine_labels().position(|l| l == label).unwrap_or(0);
    Ok(Timbre::Tonal(60.0 * 2f64.powf(index as f64 * 0.15), 5))
}

const SCALE: [f64; 5] = [-3.0, -1.0, 0.0, 2.0, 4.0];

/// One mono stem: notes with attack/decay envelopes separated by rests.
fn render_stem(t: Timbre, len: usize, sr: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr_f = sr as f64;
    let mut x = vec![0.0f64; len];
    let percussive = matches!(t, Timbre::Noise(..));
    let partials: Vec<(f64, f64)> = match t {
        Timbre::Noise(lo, hi) => (0..48)
            .map(|_| (rng.random_range(lo..hi), rng.random_range(0.0..2.0 * PI)))
            .collect(),
        Timbre::Tonal(..) => Vec::new(),
    };
    let mut pos = (rng.random_range(0.0..0.3) * sr_f) as usize;
    while pos < len {
        let dur = if percussive {
            rng.random_range(0.08..0.2)
        } else {
            rng.random_range(0.2..0.7)
        };
        let n = ((dur * sr_f) as usize).min(len - pos);
        let attack = (0.01 * sr_f) as usize;
        let decay_rate = if percussive { 25.0 } else { 3.0 };
        let amp = rng.random_range(0.6..1.0);
        match t {
            Timbre::Tonal(f0, harmonics) => {
                let f = f0 * 2f64.powf(SCALE[rng.random_range(0..SCALE.len())] / 12.0);
                let phase = rng.random_range(0.0..2.0 * PI);
                for i in 0..n {
                    let time = i as f64 / sr_f;
                    let env = (i as f64 / attack as f64).min(1.0) * (-decay_rate * time).exp();
                    let mut v = 0.0;
                    for k in 1..=harmonics {
                        let fk = f * k as f64;
                        if fk < sr_f / 2.0 {
                            v += (2.0 * PI * fk * time + phase * k as f64).sin() / (k * k) as f64;
                        }
                    }
                    x[pos + i] += amp * env * v;
                }
            }
            Timbre::Noise(..) => {
                for i in 0..n {
                    let time = (pos + i) as f64 / sr_f;
                    let local = i as f64 / sr_f;
                    let env = (i as f64 / attack as f64).min(1.0) * (-decay_rate * local).exp();
                    let v: f64 = partials
                        .iter()
                        .filter(|(f, _)| *f < sr_f / 2.0)
                        .map(|(f, p)| (2.0 * PI * f * time + p).sin())
                        .sum();
                    x[pos + i] += amp * env * v / (partials.len() as f64).sqrt();
                }
            }
        }
        let rest = if percussive {
            rng.random_range(0.1..0.5)
        } else {
            rng.random_range(0.05..0.8)
        };
        pos += n + (rest * sr_f) as usize;
        // occasional long pause so activity varies across the song
        if rng.random_bool(0.08) {
            pos += (rng.random_range(1.0..3.0) * sr_f) as usize;
        }
    }
    x
}

/// Render a stem for `label` as a clip with the requested channel count and RMS level.
pub fn synth_stem(
    label: &str,
    len: usize,
    sample_rate: u32,
    channels: usize,
    dbfs: f64,
    rng: &mut ChaCha8Rng,
) -> Result<AudioClip> {
    let mono = render_stem(timbre(label)?, len, sample_rate, rng);
    let rms = (mono.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    let gain = if rms > 0.0 { 10f64.powf(dbfs / 20.0) / rms } else { 0.0 };
    let pan: f64 = rng.random_range(0.25..0.75);
    let data = (0..channels)
        .map(|c| {
            let g = if channels == 2 {
                let p = if c == 0 { 1.0 - pan } else { pan };
                (2.0 * p).sqrt()
            } else {
                1.0
            };
            mono.iter().map(|v| (v * gain * g) as f32).collect()
        })
        .collect();
    AudioClip::from_channels(data, sample_rate)
}

/// Write `cfg.songs` songs under `root`, each with per-stem WAVs, a mixture
/// that is the exact sum of its stems, and a metadata file.
pub fn synth_toy_dataset(cfg: &SynthConfig, seed: u64, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    if cfg.labels.is_empty() || cfg.genres.is_empty() || cfg.artists == 0 || cfg.channels == 0 {
        return Err(Error::Config("synth config needs labels, genres, artists and channels".into()));
    }
    if cfg.min_stems == 0 || cfg.min_stems > cfg.max_stems || cfg.max_stems > cfg.labels.len() {
        return Err(Error::Config(format!(
            "stems per song must satisfy 1 <= {} <= {} <= {}",
            cfg.min_stems,
            cfg.max_stems,
            cfg.labels.len()
        )));
    }
    for l in &cfg.labels {
        coarse_of(l)?;
    }
    let len = (cfg.duration_secs * cfg.sample_rate as f64).round() as usize;
    for i in 0..cfg.songs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(i as u64));
        let song_id = format!("song_{i:03}");
        let dir = root.join(&song_id);
        let n_stems = rng.random_range(cfg.min_stems..=cfg.max_stems);
        let mut labels = cfg.labels.clone();
        labels.shuffle(&mut rng);
        labels.truncate(n_stems);
        labels.sort();
        let mut stems = Vec::new();
        let mut clips = Vec::new();
        for label in &labels {
            let clip = synth_stem(label, len, cfg.sample_rate, cfg.channels, cfg.stem_dbfs, &mut rng)?;
            let file = Path::new("stems").join(format!("{label}.wav"));
            save_audio(dir.join(&file), &clip)?;
            stems.push(StemMetadata {
                stem_id: label.clone(),
                label: label.clone(),
                file,
            });
            clips.push(clip);
        }
        save_audio(dir.join(MIXTURE_FILE), &AudioClip::sum(&clips)?)?;
        let meta = SongMetadata {
            song_id,
            artist: format!("artist_{:02}", rng.random_range(0..cfg.artists)),
            genre: cfg.genres[i % cfg.genres.len()].clone(),
            stems,
        };
        write_json(&dir.join(METADATA_FILE), &meta)?;
    }
    Ok(())
}
