use ndarray::Array2;

use super::{AudioClip, WindowKind};
use crate::error::{Error, Result};

/// Reassemble equally sized chunks placed `hop` samples apart. Every output
/// sample is the window-weighted mean of the chunks covering it.
pub fn overlap_add_chunks(chunks: &[AudioClip], hop: usize, window: WindowKind) -> Result<AudioClip> {
    let first = chunks
        .first()
        .ok_or_else(|| Error::Empty("overlap-add needs at least one chunk".into()))?;
    let (channels, len, rate) = (first.channels(), first.len(), first.sample_rate());
    if hop == 0 || hop > len {
        return Err(Error::InvalidArgument(format!(
            "overlap-add hop {hop} must be in 1..={len}"
        )));
    }
    for chunk in chunks {
        first.check_compatible(chunk)?;
    }
    let total = hop * (chunks.len() - 1) + len;
    let taper = window.taper(len);
    let mut acc = Array2::<f64>::zeros((channels, total));
    let mut weight = vec![0.0f64; total];
    for (i, chunk) in chunks.iter().enumerate() {
        let base = i * hop;
        let samples = chunk.samples();
        for (m, &w) in taper.iter().enumerate() {
            weight[base + m] += w;
            for c in 0..channels {
                acc[[c, base + m]] += w * samples[[c, m]] as f64;
            }
        }
    }
    let out = Array2::from_shape_fn((channels, total), |(c, n)| (acc[[c, n]] / weight[n]) as f32);
    AudioClip::new(out, rate)
}
