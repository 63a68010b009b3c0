//! Overlapping subband layouts over STFT bins, with the per-band weights
//! used to blend band masks back into a full-band mask.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{hz_to_mel, mel_to_hz};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BandScheme {
    /// Mel-spaced band centres from 0 Hz to Nyquist; every band spans from its
    /// lower neighbour's centre to its upper neighbour's centre.
    Musical { sample_rate: u32 },
    /// Equal-width partition with one bin of overlap on each side.
    UniformOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandWeighting {
    #[default]
    RaisedCosine,
    Rectangular,
}

/// Inclusive bin range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub start: usize,
    pub end: usize,
}

impl Band {
    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn contains(&self, bin: usize) -> bool {
        (self.start..=self.end).contains(&bin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub bins: usize,
    pub bands: Vec<Band>,
    /// `weights[b][j]` is the blending weight of bin `bands[b].start + j`.
    pub weights: Vec<Vec<f32>>,
}

pub fn make_band_spec(
    bins: usize,
    n_bands: usize,
    scheme: BandScheme,
    weighting: BandWeighting,
) -> Result<BandSpec> {
    if n_bands == 0 {
        return Err(Error::InvalidArgument("need at least one band".into()));
    }
    if n_bands > bins {
        return Err(Error::InvalidArgument(format!(
            "{n_bands} bands do not fit in {bins} bins"
        )));
    }
    let bands = match scheme {
        BandScheme::UniformOverlap => uniform_bands(bins, n_bands),
        BandScheme::Musical { sample_rate } => musical_bands(bins, n_bands, sample_rate),
    };
    let weights = bands
        .iter()
        .map(|band| band_weights(band.width(), weighting))
        .collect();
    let spec = BandSpec {
        bins,
        bands,
        weights,
    };
    spec.validate()?;
    Ok(spec)
}

fn uniform_bands(bins: usize, n_bands: usize) -> Vec<Band> {
    let edge = |b: usize| (b * bins + n_bands / 2) / n_bands;
    (0..n_bands)
        .map(|b| {
            let (lo, hi) = (edge(b), edge(b + 1) - 1);
            Band {
                start: lo.saturating_sub(1),
                end: (hi + 1).min(bins - 1),
            }
        })
        .collect()
}

fn musical_bands(bins: usize, n_bands: usize, sample_rate: u32) -> Vec<Band> {
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let last = (bins - 1) as f64;
    let centre = |i: usize| mel_to_hz(top * i as f64 / (n_bands + 1) as f64) / nyquist * last;
    (0..n_bands)
        .map(|b| {
            let start = centre(b).floor() as usize;
            let end = (centre(b + 2).ceil() as usize).min(bins - 1);
            Band {
                start: start.min(end.saturating_sub(1)),
                end: end.max(1).min(bins - 1),
            }
        })
        .collect()
}

fn band_weights(width: usize, weighting: BandWeighting) -> Vec<f32> {
    match weighting {
        BandWeighting::Rectangular => vec![1.0; width],
        BandWeighting::RaisedCosine => (0..width)
            .map(|j| {
                let x = std::f64::consts::PI * (j + 1) as f64 / (width + 1) as f64;
                x.sin().powi(2) as f32
            })
            .collect(),
    }
}

impl BandSpec {
    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.bands.iter().map(Band::width).collect()
    }

    pub fn total_width(&self) -> usize {
        self.bands.iter().map(Band::width).sum()
    }

    /// Full weight `W[b, f]`, zero outside the band.
    pub fn weight(&self, band: usize, bin: usize) -> f32 {
        let b = &self.bands[band];
        if b.contains(bin) {
            self.weights[band][bin - b.start]
        } else {
            0.0
        }
    }

    /// Column sums `sum_b W[b, f]`.
    pub fn weight_totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0f64; self.bins];
        for (band, w) in self.bands.iter().zip(&self.weights) {
            for (j, &v) in w.iter().enumerate() {
                totals[band.start + j] += v as f64;
            }
        }
        totals
    }

    /// Weights divided by their column sums, per band.
    pub fn normalized_weights(&self) -> Vec<Vec<f64>> {
        let totals = self.weight_totals();
        self.bands
            .iter()
            .zip(&self.weights)
            .map(|(band, w)| {
                w.iter()
                    .enumerate()
                    .map(|(j, &v)| v as f64 / totals[band.start + j])
                    .collect()
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::Config("band spec has no bands".into()));
        }
        if self.weights.len() != self.bands.len() {
            return Err(Error::Config("band spec weight rows do not match bands".into()));
        }
        for (i, (band, w)) in self.bands.iter().zip(&self.weights).enumerate() {
            if band.start > band.end || band.end >= self.bins {
                return Err(Error::Config(format!("band {i} has an invalid range")));
            }
            if w.len() != band.width() || w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!(
                    "band {i} weights must be positive on exactly its support"
                )));
            }
        }
        if let Some(f) = self.weight_totals().iter().position(|&t| t <= 0.0) {
            return Err(Error::Config(format!("bin {f} is not covered by any band")));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: BandSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
