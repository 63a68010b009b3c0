use std::cmp::Ordering;
use std::fmt;

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Multichannel waveform, `[channels, samples]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Array2<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Array2<f32>, sample_rate: u32) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "audio clip needs at least one channel".into(),
            ));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "audio clip contains non-finite samples".into(),
            ));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(channels: usize, len: usize, sample_rate: u32) -> Self {
        assert!(channels > 0 && sample_rate > 0);
        Self {
            samples: Array2::zeros((channels, len)),
            sample_rate,
        }
    }

    pub fn from_channels(channels: Vec<Vec<f32>>, sample_rate: u32) -> Result<Self> {
        let c = channels.len();
        let n = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|ch| ch.len() != n) {
            return Err(Error::shape("channels differ in length"));
        }
        let flat: Vec<f32> = channels.into_iter().flatten().collect();
        let samples =
            Array2::from_shape_vec((c, n), flat).map_err(|e| Error::shape(e.to_string()))?;
        Self::new(samples, sample_rate)
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn samples(&self) -> ArrayView2<'_, f32> {
        self.samples.view()
    }

    pub fn samples_mut(&mut self) -> &mut Array2<f32> {
        &mut self.samples
    }

    pub fn into_samples(self) -> Array2<f32> {
        self.samples
    }

    pub fn channel(&self, c: usize) -> ndarray::ArrayView1<'_, f32> {
        self.samples.row(c)
    }

    /// Copy of `len` samples starting at `offset`; positions past the end are zero.
    pub fn segment(&self, offset: usize, len: usize) -> AudioClip {
        let mut out = Array2::zeros((self.channels(), len));
        if offset < self.len() {
            let end = (offset + len).min(self.len());
            out.slice_mut(s![.., ..end - offset])
                .assign(&self.samples.slice(s![.., offset..end]));
        }
        AudioClip {
            samples: out,
            sample_rate: self.sample_rate,
        }
    }

    /// Truncate or zero-pad to exactly `len` samples.
    pub fn with_len(&self, len: usize) -> AudioClip {
        self.segment(0, len)
    }

    pub fn scaled(&self, gain: f32) -> AudioClip {
        AudioClip {
            samples: &self.samples * gain,
            sample_rate: self.sample_rate,
        }
    }

    /// Sample-wise sum of clips with identical shape and rate.
    pub fn sum<'a>(clips: impl IntoIterator<Item = &'a AudioClip>) -> Result<AudioClip> {
        let mut iter = clips.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::Empty("cannot sum an empty list of clips".into()))?;
        let mut acc = first.clone();
        for clip in iter {
            acc.add_assign(clip)?;
        }
        Ok(acc)
    }

    pub fn add_assign(&mut self, other: &AudioClip) -> Result<()> {
        self.check_compatible(other)?;
        self.samples += &other.samples;
        Ok(())
    }

    pub fn check_compatible(&self, other: &AudioClip) -> Result<()> {
        if self.samples.dim() != other.samples.dim() {
            return Err(Error::shape(format!(
                "clip shapes differ: {:?} vs {:?}",
                self.samples.dim(),
                other.samples.dim()
            )));
        }
        if self.sample_rate != other.sample_rate {
            return Err(Error::shape(format!(
                "sample rates differ: {} vs {}",
                self.sample_rate, other.sample_rate
            )));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Average all channels into one.
pub fn downmix_mono(clip: &AudioClip) -> AudioClip {
    let mono = clip
        .samples
        .mean_axis(Axis(0))
        .expect("clip has at least one channel");
    AudioClip {
        samples: mono.insert_axis(Axis(0)),
        sample_rate: clip.sample_rate,
    }
}

/// RMS level in dB relative to full scale. Silence sorts below every finite level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dbfs {
    Silent,
    Level(f64),
}

impl Dbfs {
    pub fn value(self) -> Option<f64> {
        match self {
            Dbfs::Silent => None,
            Dbfs::Level(v) => Some(v),
        }
    }

    pub fn is_at_least(self, threshold_db: f64) -> bool {
        matches!(self, Dbfs::Level(v) if v >= threshold_db)
    }

    pub fn is_below(self, threshold_db: f64) -> bool {
        !self.is_at_least(threshold_db)
    }
}

impl PartialOrd for Dbfs {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Dbfs::Silent, Dbfs::Silent) => Some(Ordering::Equal),
            (Dbfs::Silent, Dbfs::Level(_)) => Some(Ordering::Less),
            (Dbfs::Level(_), Dbfs::Silent) => Some(Ordering::Greater),
            (Dbfs::Level(a), Dbfs::Level(b)) => a.partial_cmp(b),
        }
    }
}

impl fmt::Display for Dbfs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dbfs::Silent => write!(f, "silent"),
            Dbfs::Level(v) => write!(f, "{v:.2} dBFS"),
        }
    }
}

pub fn rms_dbfs(clip: &AudioClip) -> Result<Dbfs> {
    rms_dbfs_samples(clip.samples.view())
}

pub(crate) fn rms_dbfs_samples(samples: ArrayView2<'_, f32>) -> Result<Dbfs> {
    if samples.is_empty() {
        return Err(Error::Empty("rms of an empty clip".into()));
    }
    let sum_sq: f64 = samples.iter().map(|&v| (v as f64) * (v as f64)).sum();
    let mean_sq = sum_sq / samples.len() as f64;
    if mean_sq == 0.0 {
        return Ok(Dbfs::Silent);
    }
    Ok(Dbfs::Level(10.0 * mean_sq.log10()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn downmix_mean_cases() {
        let v = vec![0.1f32, -0.3, 0.7];
        let clip = AudioClip::from_channels(vec![v.clone(), v.clone()], 8000).unwrap();
        assert_eq!(downmix_mono(&clip).channel(0).to_vec(), v);

        let neg: Vec<f32> = v.iter().map(|x| -x).collect();
        let clip = AudioClip::from_channels(vec![v.clone(), neg], 8000).unwrap();
        assert!(downmix_mono(&clip).channel(0).iter().all(|&x| x == 0.0));

        let clip = AudioClip::new(array![[0.2f32, 0.2], [0.6, 0.6]], 8000).unwrap();
        for &x in downmix_mono(&clip).channel(0) {
            assert!((x - 0.4).abs() < 1e-7);
        }
    }

    #[test]
    fn rms_reference_levels() {
        let n = 48000;
        let sine: Vec<f32> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 48000.0).sin() as f32)
            .collect();
        let clip = AudioClip::from_channels(vec![sine], 48000).unwrap();
        let db = rms_dbfs(&clip).unwrap().value().unwrap();
        assert!((db + 3.0103).abs() < 0.01, "{db}");

        let dc = AudioClip::new(Array2::ones((2, 100)), 8000).unwrap();
        assert!(rms_dbfs(&dc).unwrap().value().unwrap().abs() < 1e-12);

        let silent = AudioClip::zeros(2, 100, 8000);
        let level = rms_dbfs(&silent).unwrap();
        assert_eq!(level, Dbfs::Silent);
        assert!(level < Dbfs::Level(-1000.0));
        assert!(level.is_below(-300.0));
    }

    #[test]
    fn rms_of_empty_clip_is_an_error() {
        let clip = AudioClip::zeros(1, 0, 8000);
        assert!(matches!(rms_dbfs(&clip), Err(Error::Empty(_))));
    }

    #[test]
    fn rejects_non_finite() {
        let err = AudioClip::new(array![[0.0f32, f32::NAN]], 8000);
        assert!(err.is_err());
    }

    #[test]
    fn segment_pads_past_end() {
        let clip = AudioClip::new(array![[1.0f32, 2.0, 3.0]], 8000).unwrap();
        let seg = clip.segment(2, 3);
        assert_eq!(seg.channel(0).to_vec(), vec![3.0, 0.0, 0.0]);
    }
}
