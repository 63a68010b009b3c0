//! Band-limited sample-rate conversion with a Kaiser-windowed sinc kernel,
//! evaluated polyphase for rational rate ratios.

use ndarray::Array2;

use super::AudioClip;
use crate::error::{Error, Result};

/// Zero crossings of the low-pass kernel on each side of its centre.
const ZERO_CROSSINGS: f64 = 48.0;
/// Cutoff as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.95;
const KAISER_BETA: f64 = 9.0;
/// Above this many phases the kernel is evaluated per output sample instead of tabulated.
const MAX_TABLE_PHASES: u64 = 8192;

pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument("target sample rate must be positive".into()));
    }
    let source_rate = clip.sample_rate();
    if source_rate == target_rate {
        return Ok(clip.clone());
    }
    let g = gcd(source_rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = source_rate as u64 / g;
    let n_in = clip.len() as u64;
    let n_out = ((n_in * target_rate as u64 + source_rate as u64 / 2) / source_rate as u64) as usize;

    let kernel = Kernel::new(up, down);
    let mut out = Array2::zeros((clip.channels(), n_out));
    let table = (up <= MAX_TABLE_PHASES).then(|| kernel.table());
    for c in 0..clip.channels() {
        let x = clip.channel(c);
        let x = x.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| x.to_vec());
        for n in 0..n_out {
            let pos = n as u64 * down;
            let base = (pos / up) as i64;
            let phase = pos % up;
            let mut acc = 0.0f64;
            let first = base - kernel.half_taps as i64 + 1;
            match &table {
                Some(table) => {
                    let row = &table[phase as usize * kernel.taps()..][..kernel.taps()];
                    for (j, &h) in row.iter().enumerate() {
                        let k = first + j as i64;
                        if k >= 0 && (k as usize) < x.len() {
                            acc += h * x[k as usize] as f64;
                        }
                    }
                }
                None => {
                    for j in 0..kernel.taps() {
                        let k = first + j as i64;
                        if k >= 0 && (k as usize) < x.len() {
                            let offset = phase as f64 / up as f64 + (base - k) as f64;
                            acc += kernel.eval(offset) * x[k as usize] as f64;
                        }
                    }
                }
            }
            out[[c, n]] = acc as f32;
        }
    }
    AudioClip::new(out, target_rate)
}

struct Kernel {
    up: u64,
    /// Cutoff in cycles per source sample, times two (1.0 = source Nyquist).
    cutoff: f64,
    half_width: f64,
    half_taps: usize,
}

impl Kernel {
    fn new(up: u64, down: u64) -> Self {
        let cutoff = ROLLOFF * (up as f64 / down as f64).min(1.0);
        let half_width = ZERO_CROSSINGS / cutoff;
        Self {
            up,
            cutoff,
            half_width,
            half_taps: half_width.ceil() as usize + 1,
        }
    }

    fn taps(&self) -> usize {
        2 * self.half_taps
    }

    /// Kernel value at `offset` source samples from the interpolation point.
    fn eval(&self, offset: f64) -> f64 {
        let u = offset / self.half_width;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let arg = self.cutoff * offset;
        let sinc = if arg.abs() < 1e-12 {
            1.0
        } else {
            (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
        };
        let window = bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / bessel_i0(KAISER_BETA);
        self.cutoff * sinc * window
    }

    fn table(&self) -> Vec<f64> {
        let taps = self.taps();
        let mut table = Vec::with_capacity(self.up as usize * taps);
        for phase in 0..self.up {
            let frac = phase as f64 / self.up as f64;
            for j in 0..taps {
                // tap j multiplies x[base - half_taps + 1 + j]
                let offset = frac + self.half_taps as f64 - 1.0 - j as f64;
                table.push(self.eval(offset));
            }
        }
        table
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64).powi(2);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freqs: &[f64], rate: u32, len: usize) -> AudioClip {
        let x = (0..len)
            .map(|i| {
                let t = i as f64 / rate as f64;
                (freqs.iter().map(|f| (2.0 * PI * f * t).sin()).sum::<f64>() / freqs.len() as f64)
                    as f32
            })
            .collect();
        AudioClip::from_channels(vec![x], rate).unwrap()
    }

    /// Index of the largest-magnitude DFT bin, computed directly.
    fn dft_peak(x: &[f32]) -> usize {
        let n = x.len();
        (0..n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for (i, &v) in x.iter().enumerate() {
                    let ph = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += v as f64 * ph.cos();
                    im += v as f64 * ph.sin();
                }
                (k, re * re + im * im)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    }

    #[test]
    fn identity_when_rates_match() {
        let clip = tone(&[440.0], 44100, 1000);
        assert_eq!(resample(&clip, 44100).unwrap(), clip);
    }

    #[test]
    fn output_length_formula() {
        let clip = AudioClip::zeros(2, 44100, 44100);
        assert_eq!(resample(&clip, 32000).unwrap().len(), 32000);
        let clip = AudioClip::zeros(1, 441_000, 44100);
        assert_eq!(resample(&clip, 32000).unwrap().len(), 320_000);
        let clip = AudioClip::zeros(1, 1001, 44100);
        assert_eq!(resample(&clip, 32000).unwrap().len(), 726); // 726.35
    }

    #[test]
    fn sine_frequency_preserved() {
        let clip = tone(&[1000.0], 44100, 4410);
        let out = resample(&clip, 32000).unwrap();
        let x = out.channel(0).to_vec();
        let peak = dft_peak(&x);
        let bin_hz = 32000.0 / x.len() as f64;
        assert!((peak as f64 * bin_hz - 1000.0).abs() <= bin_hz, "peak at bin {peak}");
    }

    #[test]
    fn round_trip_band_limited_signal() {
        let len = 44100;
        let clip = tone(&[220.0, 1375.0, 4400.0, 9100.0, 13_500.0], 44100, len);
        let down = resample(&clip, 32000).unwrap();
        let back = resample(&down, 44100).unwrap();
        assert_eq!(back.len(), len);
        // ignore the kernel's edge transient
        let edge = 400;
        let (mut err, mut sig) = (0.0f64, 0.0f64);
        for i in edge..len - edge {
            let a = clip.channel(0)[i] as f64;
            let b = back.channel(0)[i] as f64;
            err += (a - b).powi(2);
            sig += a * a;
        }
        let db = 10.0 * (err / sig).log10();
        assert!(db < -40.0, "round trip error {db:.1} dB");
    }

    #[test]
    fn unusual_ratio_uses_direct_kernel() {
        let clip = tone(&[300.0], 44100, 2000);
        let out = resample(&clip, 44099).unwrap();
        assert_eq!(out.len(), 2000);
        let mid = 1000;
        assert!((out.channel(0)[mid] - clip.channel(0)[mid]).abs() < 0.02);
    }
}
