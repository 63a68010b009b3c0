//! Spectral-flux onset envelope and the strongest-onset query window search.

use serde::{Deserialize, Serialize};

use crate::dsp::{downmix_mono, mel_power_frames, AudioClip, StftConfig, WindowKind};
use crate::error::{Error, Result};

pub const ONSET_HOP: usize = 512;
const ONSET_FRAME: usize = 2048;
const ONSET_MELS: usize = 128;
const POWER_FLOOR: f32 = 1e-10;

/// Half-wave-rectified first difference of a 128-bin log-mel spectrogram,
/// summed over bins. One value per 512-sample frame; frame 0 is zero.
pub fn onset_strength(clip: &AudioClip) -> Result<Vec<f32>> {
    if clip.is_empty() {
        return Err(Error::Empty("onset strength of an empty clip".into()));
    }
    let mono = downmix_mono(clip);
    let x = mono.channel(0).to_vec();
    let cfg = StftConfig {
        frame_size: ONSET_FRAME,
        hop: ONSET_HOP,
        window: WindowKind::Hann,
        center: true,
    };
    let mut mel = mel_power_frames(&x, clip.sample_rate(), &cfg, ONSET_MELS);
    mel.mapv_inplace(|p| 10.0 * p.max(POWER_FLOOR).log10());
    let frames = mel.nrows();
    let mut env = vec![0.0f32; frames];
    for (t, e) in env.iter_mut().enumerate().skip(1) {
        *e = mel
            .row(t)
            .iter()
            .zip(mel.row(t - 1).iter())
            .map(|(a, b)| (a - b).max(0.0))
            .sum();
    }
    Ok(env)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryWindow {
    /// Start sample of the selected window.
    pub offset: usize,
    /// Mean onset strength over the window's frames.
    pub onset_score: f64,
    /// The source was shorter than the window and was zero-padded.
    pub padded: bool,
}

/// `true` when `candidate` beats `best` by more than rounding noise; ties keep the earlier window.
pub fn improves(candidate: f64, best: f64) -> bool {
    candidate > best + 1e-9 * best.abs().max(1e-300)
}

/// Frames averaged by a window of `window_len` samples.
pub fn window_frames(window_len: usize) -> usize {
    window_len.div_ceil(ONSET_HOP).max(1)
}

/// Slide a `window_len`-sample window over the envelope at a 512-sample hop and
/// return the window with the largest mean onset strength.
pub fn strongest_window(envelope: &[f32], len: usize, window_len: usize) -> QueryWindow {
    let nf = window_frames(window_len);
    if len < window_len {
        let n = nf.min(envelope.len());
        let sum: f64 = envelope[..n].iter().map(|&v| v as f64).sum();
        return QueryWindow {
            offset: 0,
            onset_score: sum / n.max(1) as f64,
            padded: true,
        };
    }
    let mut prefix = Vec::with_capacity(envelope.len() + 1);
    prefix.push(0.0f64);
    for &v in envelope {
        prefix.push(prefix.last().unwrap() + v as f64);
    }
    let last = (len - window_len) / ONSET_HOP;
    let mut best = QueryWindow {
        offset: 0,
        onset_score: f64::NEG_INFINITY,
        padded: false,
    };
    for k in 0..=last {
        let end = (k + nf).min(envelope.len());
        let mean = (prefix[end] - prefix[k]) / (end - k) as f64;
        if k == 0 || improves(mean, best.onset_score) {
            best.offset = k * ONSET_HOP;
            best.onset_score = mean;
        }
    }
    best
}

/// The `window_secs` excerpt of `clip` with the strongest mean onset.
pub fn extract_query(clip: &AudioClip, window_secs: f64) -> Result<(AudioClip, QueryWindow)> {
    let window_len = (window_secs * clip.sample_rate() as f64).round() as usize;
    if window_len == 0 {
        return Err(Error::InvalidArgument("query window must be positive".into()));
    }
    let env = onset_strength(clip)?;
    let w = strongest_window(&env, clip.len(), window_len);
    Ok((clip.segment(w.offset, window_len), w))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SR: u32 = 22050;

    fn clip(x: Vec<f32>) -> AudioClip {
        AudioClip::from_channels(vec![x], SR).unwrap()
    }

    #[test]
    fn silence_gives_zero_envelope() {
        let env = onset_strength(&clip(vec![0.0; 10_000])).unwrap();
        assert!(env.iter().all(|&v| v == 0.0));
        assert_eq!(env.len(), 1 + 10_000 / ONSET_HOP);
    }

    #[test]
    fn impulse_peaks_in_a_frame_covering_it() {
        let n = 6000;
        let mut x = vec![0.0; 12_000];
        x[n] = 1.0;
        let env = onset_strength(&clip(x)).unwrap();
        let peak = env
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let start = (peak * ONSET_HOP) as isize - (ONSET_FRAME / 2) as isize;
        assert!(start <= n as isize && (n as isize) < start + ONSET_FRAME as isize);
    }

    #[test]
    fn click_train_peak_spacing() {
        let len = SR as usize * 4;
        let mut x = vec![0.0f32; len];
        let period = SR as usize / 2;
        for k in 0..8 {
            x[k * period + 300] = 1.0;
        }
        let env = onset_strength(&clip(x)).unwrap();
        // local maxima above half the global max
        let max = env.iter().cloned().fold(0.0f32, f32::max);
        let peaks: Vec<usize> = (1..env.len() - 1)
            .filter(|&t| env[t] >= max * 0.5 && env[t] >= env[t - 1] && env[t] > env[t + 1])
            .collect();
        assert!(peaks.len() >= 7, "{peaks:?}");
        let expected = period as f64 / ONSET_HOP as f64;
        for w in peaks.windows(2) {
            assert!(((w[1] - w[0]) as f64 - expected).abs() <= 1.0, "{peaks:?}");
        }
    }

    #[test]
    fn ties_pick_the_first_window() {
        let w = strongest_window(&[0.0; 100], 100 * ONSET_HOP, 20 * ONSET_HOP);
        assert_eq!(w.offset, 0);
        let w = strongest_window(&[1.0; 100], 100 * ONSET_HOP, 20 * ONSET_HOP);
        assert_eq!(w.offset, 0);
    }

    #[test]
    fn short_stems_are_padded() {
        let c = clip(vec![0.1; 1000]);
        let (audio, w) = extract_query(&c, 1.0).unwrap();
        assert!(w.padded);
        assert_eq!(audio.len(), SR as usize);
    }
}
