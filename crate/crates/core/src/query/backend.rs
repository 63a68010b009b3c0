use std::path::PathBuf;
use std::sync::OnceLock;

use candle_core::Tensor;
use nalgebra::DMatrix;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{downmix_mono, mel_power_frames, resample, AudioClip, StftConfig, WindowKind};
use crate::error::{Error, Result};
use crate::model::Banquet;

pub const QUERY_FEATURE_DIM: usize = 784;
pub const MIN_QUERY_SECS: f64 = 1.0;

/// Per-frame backend features `[frames, dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawQueryFeatures {
    pub series: Array2<f32>,
    pub backend_id: String,
}

impl RawQueryFeatures {
    pub fn frames(&self) -> usize {
        self.series.nrows()
    }

    pub fn dim(&self) -> usize {
        self.series.ncols()
    }

    /// Mean over frames, accumulated in f64.
    pub fn pooled(&self) -> Vec<f32> {
        let n = self.frames().max(1) as f64;
        self.series
            .columns()
            .into_iter()
            .map(|col| (col.iter().map(|&v| v as f64).sum::<f64>() / n) as f32)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEmbedding {
    pub z: Vec<f32>,
    pub song_id: String,
    pub stem: String,
    pub backend_id: String,
}

/// A frozen feature extractor for query audio.
pub trait EmbedderBackend: Send + Sync {
    fn id(&self) -> &str;
    fn sample_rate(&self) -> u32;
    fn dim(&self) -> usize;
    /// Features of a clip already prepared by [`prepare_query`].
    fn embed(&self, clip: &AudioClip) -> Result<RawQueryFeatures>;
}

/// Offline stand-in: log-mel frame energies at 32 kHz tiled to 784 dims and
/// mixed by a fixed orthogonal matrix.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

const MOCK_RATE: u32 = 32_000;
const MOCK_MELS: usize = 128;
const MOCK_STFT: StftConfig = StftConfig {
    frame_size: 1024,
    hop: 320,
    window: WindowKind::Hann,
    center: true,
};

fn mixing_matrix() -> &'static DMatrix<f32> {
    static Q: OnceLock<DMatrix<f32>> = OnceLock::new();
    Q.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = QUERY_FEATURE_DIM;
        let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let qr = a.qr();
        let (mut q, r) = (qr.q(), qr.r());
        for j in 0..n {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        q.map(|v| v as f32)
    })
}

impl EmbedderBackend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn sample_rate(&self) -> u32 {
        MOCK_RATE
    }

    fn dim(&self) -> usize {
        QUERY_FEATURE_DIM
    }

    fn embed(&self, clip: &AudioClip) -> Result<RawQueryFeatures> {
        if clip.channels() != 1 || clip.sample_rate() != MOCK_RATE {
            return Err(Error::InvalidArgument(format!(
                "mock backend expects mono {MOCK_RATE} Hz audio, got {} channels at {} Hz",
                clip.channels(),
                clip.sample_rate()
            )));
        }
        let x = clip.channel(0).to_vec();
        let mel = mel_power_frames(&x, MOCK_RATE, &MOCK_STFT, MOCK_MELS);
        let frames = mel.nrows();
        let tiled = DMatrix::<f32>::from_fn(frames, QUERY_FEATURE_DIM, |t, k| {
            mel[[t, k % MOCK_MELS]].ln_1p()
        });
        let mixed = tiled * mixing_matrix().transpose();
        let series = Array2::from_shape_fn((frames, QUERY_FEATURE_DIM), |(t, k)| mixed[(t, k)]);
        Ok(RawQueryFeatures {
            series,
            backend_id: self.id().to_string(),
        })
    }
}

/// Adapter slot for an externally provided pretrained tagger. No inference
/// runtime for it ships with this crate, so embedding always fails with
/// [`Error::BackendUnavailable`].
#[derive(Debug, Clone)]
pub struct ExternalBackend {
    pub name: String,
    pub weights: Option<PathBuf>,
}

impl ExternalBackend {
    fn unavailable(&self) -> Error {
        let detail = match &self.weights {
            None => "no weights path configured".to_string(),
            Some(p) if !p.exists() => format!("weights not found at {}", p.display()),
            Some(p) => format!("no runtime is available to execute {}", p.display()),
        };
        Error::BackendUnavailable {
            backend: self.name.clone(),
            detail,
        }
    }
}

impl EmbedderBackend for ExternalBackend {
    fn id(&self) -> &str {
        &self.name
    }

    fn sample_rate(&self) -> u32 {
        32_000
    }

    fn dim(&self) -> usize {
        QUERY_FEATURE_DIM
    }

    fn embed(&self, _clip: &AudioClip) -> Result<RawQueryFeatures> {
        Err(self.unavailable())
    }
}

/// `mock` or the name of an external backend (which fails fast when unusable).
pub fn backend_from_name(name: &str, weights: Option<PathBuf>) -> Result<Box<dyn EmbedderBackend>> {
    match name {
        "mock" => Ok(Box::new(MockBackend)),
        other => {
            let ext = ExternalBackend {
                name: other.to_string(),
                weights,
            };
            Err(ext.unavailable())
        }
    }
}

/// Downmix to mono and resample to the backend rate.
pub fn prepare_query(clip: &AudioClip, backend: &dyn EmbedderBackend) -> Result<AudioClip> {
    if clip.is_empty() {
        return Err(Error::Empty("query clip".into()));
    }
    if clip.duration_secs() < MIN_QUERY_SECS {
        return Err(Error::InvalidArgument(format!(
            "query is {:.2} s long; at least {MIN_QUERY_SECS} s is required",
            clip.duration_secs()
        )));
    }
    let mono = if clip.channels() == 1 {
        clip.clone()
    } else {
        downmix_mono(clip)
    };
    resample(&mono, backend.sample_rate())
}

/// Prepare and embed a query clip.
pub fn embed_query(clip: &AudioClip, backend: &dyn EmbedderBackend) -> Result<RawQueryFeatures> {
    let features = backend.embed(&prepare_query(clip, backend)?)?;
    if features.series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "backend `{}` produced non-finite features",
            backend.id()
        )));
    }
    Ok(features)
}

/// Time-pool raw features and apply the model's query projection.
pub fn pool_project(
    raw: &RawQueryFeatures,
    model: &Banquet,
    song_id: &str,
    stem: &str,
) -> Result<QueryEmbedding> {
    if raw.frames() == 0 {
        return Err(Error::Empty("query feature series has no frames".into()));
    }
    let pooled = raw.pooled();
    let dim = pooled.len();
    let t = Tensor::from_vec(pooled, (1, dim), model.params().device())?.to_dtype(model.dtype())?;
    let z = model
        .project_query(&t)?
        .to_dtype(candle_core::DType::F32)?
        .flatten_all()?
        .to_vec1::<f32>()?;
    Ok(QueryEmbedding {
        z,
        song_id: song_id.to_string(),
        stem: stem.to_string(),
        backend_id: raw.backend_id.clone(),
    })
}
