use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::dsp::{overlap_add_chunks, AudioClip, WindowKind};
use crate::error::{Error, Result};
use crate::model::Banquet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub segment_secs: f64,
    pub hop_secs: f64,
    pub window: WindowKind,
    /// Segments per forward call.
    pub batch: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            segment_secs: 6.0,
            hop_secs: 0.5,
            window: WindowKind::Hann,
            batch: 4,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.segment_secs > 0.0 && self.hop_secs > 0.0 && self.hop_secs <= self.segment_secs) {
            return Err(Error::Config(format!(
                "inference needs 0 < hop ({}) <= segment ({})",
                self.hop_secs, self.segment_secs
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("inference batch must be positive".into()));
        }
        Ok(())
    }
}

/// `(segment_len, hop, count)` in samples covering `len` samples at `rate`.
pub fn segment_layout(cfg: &InferenceConfig, len: usize, rate: u32) -> (usize, usize, usize) {
    let seg = (cfg.segment_secs * rate as f64).round() as usize;
    let hop = ((cfg.hop_secs * rate as f64).round() as usize).clamp(1, seg);
    let count = if len <= seg {
        1
    } else {
        1 + (len - seg).div_ceil(hop)
    };
    (seg, hop, count)
}

/// Separate a full track with one query: zero-padded fixed-length segments,
/// reassembled by windowed overlap-add and trimmed to the input length.
pub fn separate_track(
    model: &Banquet,
    mixture: &AudioClip,
    query: &[f32],
    cfg: &InferenceConfig,
) -> Result<AudioClip> {
    cfg.validate()?;
    let rate = model.config().sample_rate;
    if mixture.sample_rate() != rate || mixture.channels() != model.config().channels {
        return Err(Error::InvalidArgument(format!(
            "mixture is {} ch at {} Hz; the model expects {} ch at {rate} Hz",
            mixture.channels(),
            mixture.sample_rate(),
            model.config().channels
        )));
    }
    if mixture.is_empty() {
        return Err(Error::Empty("mixture".into()));
    }
    let (seg, hop, count) = segment_layout(cfg, mixture.len(), rate);
    let channels = mixture.channels();
    let q = candle_core::Tensor::from_vec(query.to_vec(), (1, query.len()), model.params().device())?
        .to_dtype(model.dtype())?;
    let z = model.project_query(&q)?;
    let mut chunks = Vec::with_capacity(count);
    let starts: Vec<usize> = (0..count).map(|i| i * hop).collect();
    for batch in starts.chunks(cfg.batch) {
        let n = batch.len();
        let mut values = Vec::with_capacity(n * channels * seg);
        for &s in batch {
            values.extend(mixture.segment(s, seg).samples().iter().copied());
        }
        let x = model.batch_tensor(values, n, seg)?;
        let zb = z.broadcast_as((n, z.dim(1)?))?.contiguous()?;
        let out = model.forward_embedded(&x, &zb)?.wave.to_dtype(DType::F32)?;
        let flat = out.flatten_all()?.to_vec1::<f32>()?;
        for i in 0..n {
            let data = flat[i * channels * seg..(i + 1) * channels * seg]
                .chunks(seg)
                .map(|c| c.to_vec())
                .collect();
            chunks.push(AudioClip::from_channels(data, rate)?);
        }
    }
    let full = overlap_add_chunks(&chunks, hop, cfg.window)?;
    Ok(full.segment(0, mixture.len()))
}
