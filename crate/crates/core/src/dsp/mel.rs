use ndarray::Array2;
use realfft::num_complex::Complex;

use super::stft::{StftConfig, StftKernel};

/// Triangular mel filterbank on the HTK mel scale, applied to power spectra.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `(first_bin, weights)` per mel band.
    filters: Vec<(usize, Vec<f32>)>,
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, frame_size: usize, n_mels: usize) -> Self {
        let bins = frame_size / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / frame_size as f64;
        let filters = (0..n_mels)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let first = (lo / bin_hz).floor() as usize;
                let last = ((hi / bin_hz).ceil() as usize).min(bins - 1);
                let weights = (first..=last)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f <= mid {
                            (f - lo) / (mid - lo)
                        } else {
                            (hi - f) / (hi - mid)
                        };
                        w.max(0.0) as f32
                    })
                    .collect();
                (first, weights)
            })
            .collect();
        Self { filters }
    }

    pub fn n_mels(&self) -> usize {
        self.filters.len()
    }

    pub fn apply(&self, power: &[f32], out: &mut [f32]) {
        for ((first, weights), o) in self.filters.iter().zip(out.iter_mut()) {
            *o = weights
                .iter()
                .zip(&power[*first..])
                .map(|(w, p)| w * p)
                .sum();
        }
    }
}

/// Mel power spectrogram `[frames, n_mels]` of a mono signal.
pub fn mel_power_frames(x: &[f32], sample_rate: u32, cfg: &StftConfig, n_mels: usize) -> Array2<f32> {
    let kernel = StftKernel::<f32>::new(*cfg);
    let frames = cfg.frames(x.len());
    let bins = cfg.bins();
    let mut spec = vec![Complex::new(0.0f32, 0.0); bins * frames];
    kernel.analyze(x, frames, &mut spec);
    let bank = MelFilterbank::new(sample_rate, cfg.frame_size, n_mels);
    let mut out = Array2::zeros((frames, n_mels));
    let mut power = vec![0.0f32; bins];
    let mut mel = vec![0.0f32; n_mels];
    for t in 0..frames {
        for (f, p) in power.iter_mut().enumerate() {
            *p = spec[f * frames + t].norm_sqr();
        }
        bank.apply(&power, &mut mel);
        out.row_mut(t).assign(&ndarray::ArrayView1::from(&mel));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 100.0, 1000.0, 16000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-6);
        }
    }

    #[test]
    fn filters_respond_to_their_band() {
        let fb = MelFilterbank::new(32000, 1024, 128);
        let mut power = vec![0.0f32; 513];
        power[100] = 1.0;
        let mut out = vec![0.0f32; 128];
        fb.apply(&power, &mut out);
        let active = out.iter().filter(|&&v| v > 0.0).count();
        assert!((1..=2).contains(&active));
    }
}
