use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::AudioClip;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Maximum absolute gain in dB, drawn uniformly per stem.
    pub gain_db: f64,
    /// Circular time shift within the chunk.
    pub time_shift: bool,
    pub polarity: bool,
    pub channel_swap: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            gain_db: 6.0,
            time_shift: true,
            polarity: true,
            channel_swap: true,
        }
    }
}

/// Draw of every random choice for one stem, kept so callers can audit it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StemAugmentation {
    pub gain_db: f64,
    pub shift: usize,
    pub invert: bool,
    pub swap: bool,
}

impl StemAugmentation {
    pub const IDENTITY: Self = Self {
        gain_db: 0.0,
        shift: 0,
        invert: false,
        swap: false,
    };

    pub fn draw(cfg: &AugmentConfig, len: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            gain_db: if cfg.gain_db > 0.0 {
                rng.random_range(-cfg.gain_db..=cfg.gain_db)
            } else {
                0.0
            },
            shift: if cfg.time_shift && len > 0 {
                rng.random_range(0..len)
            } else {
                0
            },
            invert: cfg.polarity && rng.random_bool(0.5),
            swap: cfg.channel_swap && rng.random_bool(0.5),
        }
    }

    pub fn apply(&self, clip: &AudioClip) -> AudioClip {
        let gain = 10f64.powf(self.gain_db / 20.0) as f32 * if self.invert { -1.0 } else { 1.0 };
        let channels = clip.channels();
        let len = clip.len();
        let mut out = clip.clone();
        let src = clip.samples();
        let dst = out.samples_mut();
        for c in 0..channels {
            let from = if self.swap && channels == 2 { 1 - c } else { c };
            for i in 0..len {
                let j = (i + len - self.shift % len.max(1)) % len.max(1);
                dst[[c, i]] = src[[from, j]] * gain;
            }
        }
        out
    }
}

/// Augment each stem independently; returns the draws in stem order.
pub fn augment(stems: &mut [AudioClip], cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Vec<StemAugmentation> {
    if !cfg.enabled {
        return vec![StemAugmentation::IDENTITY; stems.len()];
    }
    stems
        .iter_mut()
        .map(|s| {
            let a = StemAugmentation::draw(cfg, s.len(), rng);
            *s = a.apply(s);
            a
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::rms_dbfs;
    use rand::SeedableRng;

    fn stereo() -> AudioClip {
        AudioClip::from_channels(vec![vec![0.1, 0.2, 0.3, 0.4], vec![-0.5, 0.6, -0.7, 0.8]], 8000)
            .unwrap()
    }

    #[test]
    fn disabled_is_identity() {
        let mut stems = vec![stereo()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        augment(&mut stems, &AugmentConfig::default(), &mut rng);
        assert_eq!(stems[0], stereo());
    }

    #[test]
    fn gain_changes_level_in_db() {
        let clip = stereo().scaled(0.1);
        let a = StemAugmentation {
            gain_db: 6.0,
            ..StemAugmentation::IDENTITY
        };
        let before = rms_dbfs(&clip).unwrap().value().unwrap();
        let after = rms_dbfs(&a.apply(&clip)).unwrap().value().unwrap();
        assert!((after - before - 6.0).abs() < 0.01);
    }

    #[test]
    fn polarity_and_swap_are_involutions() {
        let a = StemAugmentation {
            invert: true,
            swap: true,
            ..StemAugmentation::IDENTITY
        };
        assert_eq!(a.apply(&a.apply(&stereo())), stereo());
    }

    #[test]
    fn shift_is_circular() {
        let a = StemAugmentation {
            shift: 1,
            ..StemAugmentation::IDENTITY
        };
        let out = a.apply(&stereo());
        assert_eq!(out.channel(0).to_vec(), vec![0.4, 0.1, 0.2, 0.3]);
    }

    #[test]
    fn draws_stay_in_range() {
        let cfg = AugmentConfig {
            enabled: true,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let a = StemAugmentation::draw(&cfg, 100, &mut rng);
            assert!(a.gain_db.abs() <= 6.0 && a.shift < 100);
        }
    }
}
