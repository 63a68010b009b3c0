use std::sync::Arc;

use ndarray::Array3;
use num_traits::Float;
use realfft::num_complex::Complex;
use realfft::{ComplexToReal, FftNum, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use super::{AudioClip, WindowKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub frame_size: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: WindowKind,
    /// Pad `frame_size / 2` zeros on both sides so frame `t` is centred on sample `t * hop`.
    #[serde(default = "default_center")]
    pub center: bool,
}

fn default_center() -> bool {
    true
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_size: 2048,
            hop: 512,
            window: WindowKind::Hann,
            center: true,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_size == 0 || !self.frame_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "stft frame size must be even and positive, got {}",
                self.frame_size
            )));
        }
        if self.hop == 0 || self.hop > self.frame_size {
            return Err(Error::Config(format!(
                "stft hop must be in 1..={}, got {}",
                self.frame_size, self.hop
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    fn pad(&self) -> usize {
        if self.center {
            self.frame_size / 2
        } else {
            0
        }
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frames(&self, len: usize) -> usize {
        if self.center {
            1 + len / self.hop
        } else if len <= self.frame_size {
            1
        } else {
            1 + (len - self.frame_size).div_ceil(self.hop)
        }
    }
}

/// Complex spectrogram `[channels, bins, frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Array3<Complex<f32>>,
    pub config: StftConfig,
    pub sample_rate: u32,
    pub origin_length: usize,
}

impl Spectrogram {
    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn bins(&self) -> usize {
        self.data.dim().1
    }

    pub fn frames(&self) -> usize {
        self.data.dim().2
    }

    pub fn check_consistent(&self) -> Result<()> {
        if self.bins() != self.config.bins() {
            return Err(Error::shape(format!(
                "spectrogram has {} bins but its config implies {}",
                self.bins(),
                self.config.bins()
            )));
        }
        Ok(())
    }
}

/// Frame analysis and weighted overlap-add synthesis shared by the host DSP path
/// and the differentiable synthesis op.
pub(crate) struct StftKernel<T: FftNum> {
    cfg: StftConfig,
    window: Vec<T>,
    forward: Arc<dyn RealToComplex<T>>,
    inverse: Arc<dyn ComplexToReal<T>>,
}

impl<T: FftNum + Float> StftKernel<T> {
    pub fn new(cfg: StftConfig) -> Self {
        let mut planner = RealFftPlanner::<T>::new();
        let window = cfg
            .window
            .periodic(cfg.frame_size)
            .into_iter()
            .map(|v| T::from(v).unwrap())
            .collect();
        Self {
            cfg,
            window,
            forward: planner.plan_fft_forward(cfg.frame_size),
            inverse: planner.plan_fft_inverse(cfg.frame_size),
        }
    }

    /// Analyze one channel into `out[f * frames + t]`.
    pub fn analyze(&self, x: &[T], frames: usize, out: &mut [Complex<T>]) {
        let n = self.cfg.frame_size;
        let bins = self.cfg.bins();
        let pad = self.cfg.pad() as isize;
        let mut buf = self.forward.make_input_vec();
        let mut spec = self.forward.make_output_vec();
        for t in 0..frames {
            let start = (t * self.cfg.hop) as isize - pad;
            for (m, slot) in buf.iter_mut().enumerate() {
                let idx = start + m as isize;
                *slot = if idx >= 0 && (idx as usize) < x.len() {
                    x[idx as usize] * self.window[m]
                } else {
                    T::zero()
                };
            }
            self.forward
                .process(&mut buf, &mut spec)
                .expect("buffer sizes come from the plan");
            for f in 0..bins {
                out[f * frames + t] = spec[f];
            }
            debug_assert_eq!(n, buf.len());
        }
    }

    /// Inverse of `analyze`: window-squared-normalized overlap-add of the
    /// inverse FFT of every frame, cropped to `length` samples.
    pub fn synthesize(&self, re: &[T], im: &[T], frames: usize, length: usize, out: &mut [T]) {
        let n = self.cfg.frame_size;
        let bins = self.cfg.bins();
        let pad = self.cfg.pad();
        let padded = (frames - 1) * self.cfg.hop + n;
        let mut acc = vec![T::zero(); padded];
        let mut spec = self.inverse.make_input_vec();
        let mut buf = self.inverse.make_output_vec();
        let scale = T::one() / T::from(n).unwrap();
        for t in 0..frames {
            for f in 0..bins {
                spec[f] = Complex::new(re[f * frames + t], im[f * frames + t]);
            }
            spec[0].im = T::zero();
            spec[bins - 1].im = T::zero();
            self.inverse
                .process(&mut spec, &mut buf)
                .expect("buffer sizes come from the plan");
            let base = t * self.cfg.hop;
            for m in 0..n {
                acc[base + m] = acc[base + m] + buf[m] * scale * self.window[m];
            }
        }
        let norm = self.window_energy(frames);
        for (i, o) in out.iter_mut().enumerate().take(length) {
            let p = i + pad;
            *o = if p < padded && norm[p] > T::from(1e-10).unwrap() {
                acc[p] / norm[p]
            } else {
                T::zero()
            };
        }
    }

    /// Adjoint of `synthesize` with respect to the real and imaginary parts.
    pub fn synthesize_adjoint(
        &self,
        grad: &[T],
        frames: usize,
        length: usize,
        re_out: &mut [T],
        im_out: &mut [T],
    ) {
        let n = self.cfg.frame_size;
        let bins = self.cfg.bins();
        let pad = self.cfg.pad();
        let padded = (frames - 1) * self.cfg.hop + n;
        let norm = self.window_energy(frames);
        let eps = T::from(1e-10).unwrap();
        let mut g_pad = vec![T::zero(); padded];
        for (i, &g) in grad.iter().enumerate().take(length) {
            let p = i + pad;
            if p < padded && norm[p] > eps {
                g_pad[p] = g / norm[p];
            }
        }
        let mut buf = self.forward.make_input_vec();
        let mut spec = self.forward.make_output_vec();
        let inv_n = T::one() / T::from(n).unwrap();
        let two = T::from(2.0).unwrap();
        for t in 0..frames {
            let base = t * self.cfg.hop;
            for m in 0..n {
                buf[m] = g_pad[base + m] * self.window[m];
            }
            self.forward
                .process(&mut buf, &mut spec)
                .expect("buffer sizes come from the plan");
            for f in 0..bins {
                let edge = f == 0 || f == bins - 1;
                let c = if edge { inv_n } else { two * inv_n };
                re_out[f * frames + t] = spec[f].re * c;
                im_out[f * frames + t] = if edge { T::zero() } else { spec[f].im * c };
            }
        }
    }

    fn window_energy(&self, frames: usize) -> Vec<T> {
        let n = self.cfg.frame_size;
        let padded = (frames - 1) * self.cfg.hop + n;
        let mut norm = vec![T::zero(); padded];
        for t in 0..frames {
            let base = t * self.cfg.hop;
            for m in 0..n {
                norm[base + m] = norm[base + m] + self.window[m] * self.window[m];
            }
        }
        norm
    }
}

pub fn stft(clip: &AudioClip, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if clip.is_empty() {
        return Err(Error::Empty("stft of an empty clip".into()));
    }
    let kernel = StftKernel::<f32>::new(*cfg);
    let frames = cfg.frames(clip.len());
    let bins = cfg.bins();
    let mut data = Array3::zeros((clip.channels(), bins, frames));
    for c in 0..clip.channels() {
        let x = clip.channel(c).to_vec();
        let mut out = vec![Complex::new(0.0, 0.0); bins * frames];
        kernel.analyze(&x, frames, &mut out);
        for f in 0..bins {
            for t in 0..frames {
                data[[c, f, t]] = out[f * frames + t];
            }
        }
    }
    Ok(Spectrogram {
        data,
        config: *cfg,
        sample_rate: clip.sample_rate(),
        origin_length: clip.len(),
    })
}

pub fn istft(spec: &Spectrogram, length: usize) -> Result<AudioClip> {
    spec.config.validate()?;
    spec.check_consistent()?;
    let (channels, bins, frames) = spec.data.dim();
    if frames == 0 {
        return Err(Error::shape("spectrogram has no frames"));
    }
    let kernel = StftKernel::<f32>::new(spec.config);
    let mut out = Vec::with_capacity(channels);
    for c in 0..channels {
        let mut re = vec![0.0f32; bins * frames];
        let mut im = vec![0.0f32; bins * frames];
        for f in 0..bins {
            for t in 0..frames {
                let v = spec.data[[c, f, t]];
                re[f * frames + t] = v.re;
                im[f * frames + t] = v.im;
            }
        }
        let mut y = vec![0.0f32; length];
        kernel.synthesize(&re, &im, frames, length, &mut y);
        out.push(y);
    }
    AudioClip::from_channels(out, spec.sample_rate)
}
