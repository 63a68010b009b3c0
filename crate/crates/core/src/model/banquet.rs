use std::path::PathBuf;
use std::sync::Arc;

use candle_core::{DType, Device, Tensor, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bands::{make_band_spec, BandScheme, BandSpec, BandWeighting};
use super::layers::{add_layer_norm, add_linear, apply_layer_norm, apply_linear, MaskHead, RnnUnit};
use super::ops::{analysis, band_overlap_add, synthesize, BandOlaLayout};
use super::params::{Init, ParamGroup, ParamStore};
use crate::dsp::StftConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandLayout {
    #[default]
    Musical,
    UniformOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandsConfig {
    pub count: usize,
    #[serde(default)]
    pub layout: BandLayout,
    #[serde(default)]
    pub weighting: BandWeighting,
    /// Explicit band table; overrides `count` and `layout` when set.
    #[serde(default)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub sample_rate: u32,
    pub channels: usize,
    pub stft: StftConfig,
    pub bands: BandsConfig,
    pub embed_dim: usize,
    pub tf_pairs: usize,
    pub rnn_hidden: usize,
    pub decoder_hidden: usize,
    pub query_dim: usize,
    pub film_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 44100,
            channels: 2,
            stft: StftConfig::default(),
            bands: BandsConfig {
                count: 64,
                layout: BandLayout::Musical,
                weighting: BandWeighting::RaisedCosine,
                table: None,
            },
            embed_dim: 128,
            tf_pairs: 8,
            rnn_hidden: 256,
            decoder_hidden: 512,
            query_dim: 784,
            film_hidden: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        let positive = [
            ("sample_rate", self.sample_rate as usize),
            ("channels", self.channels),
            ("bands.count", self.bands.count),
            ("embed_dim", self.embed_dim),
            ("rnn_hidden", self.rnn_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("query_dim", self.query_dim),
            ("film_hidden", self.film_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn band_spec(&self) -> Result<BandSpec> {
        let spec = match &self.bands.table {
            Some(path) => BandSpec::load(path)?,
            None => {
                let scheme = match self.bands.layout {
                    BandLayout::Musical => BandScheme::Musical {
                        sample_rate: self.sample_rate,
                    },
                    BandLayout::UniformOverlap => BandScheme::UniformOverlap,
                };
                make_band_spec(self.stft.bins(), self.bands.count, scheme, self.bands.weighting)?
            }
        };
        if spec.bins != self.stft.bins() {
            return Err(Error::Config(format!(
                "band table covers {} bins but the STFT has {}",
                spec.bins,
                self.stft.bins()
            )));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelMode {
    /// Query-conditioned separation with one shared decoder.
    Query,
    /// Encoder pretraining with one decoder head per named stem and no query path.
    Pretrain { stems: Vec<String> },
}

impl ModelMode {
    pub fn vdbo() -> Self {
        Self::Pretrain {
            stems: ["vocals", "drums", "bass", "other"].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingRole {
    Bands,
    Mixture,
    Conditioned,
}

/// Band-time embedding stored as `[N, B, T, D]`.
#[derive(Debug, Clone)]
pub struct TfEmbedding {
    pub values: Tensor,
    pub role: EmbeddingRole,
}

/// Per-item FiLM modulation, each `[N, D]`.
#[derive(Debug, Clone)]
pub struct FilmParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// Masked spectrogram (`[N, C, F, T]` real and imaginary parts) and its waveform `[N, C, len]`.
#[derive(Debug, Clone)]
pub struct Separation {
    pub wave: Tensor,
    pub re: Tensor,
    pub im: Tensor,
}

pub fn film_adapt(u: &TfEmbedding, film: &FilmParams) -> Result<TfEmbedding> {
    let (n, d) = film.gamma.dims2()?;
    let gamma = film.gamma.reshape((n, 1, 1, d))?;
    let beta = film.beta.reshape((n, 1, 1, d))?;
    Ok(TfEmbedding {
        values: u.values.broadcast_mul(&gamma)?.broadcast_add(&beta)?,
        role: EmbeddingRole::Conditioned,
    })
}

/// Blend per-band masks into a full-band `[N, 2, C, F, T]` mask.
///
/// `features` is `[N, T, K]` with bands concatenated in order, each band laid
/// out as `[channel][bin][re, im]` over its `2 * channels * width` values.
pub fn assemble_band_masks(spec: &BandSpec, channels: usize, features: &Tensor) -> Result<Tensor> {
    spec.validate()?;
    let layout = Arc::new(BandOlaLayout::new(spec, channels));
    Ok(band_overlap_add(features, &layout)?)
}

/// Elementwise complex product of `X` with a `[N, 2, C, F, T]` mask.
pub fn apply_mask(x_re: &Tensor, x_im: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
    let m_re = mask.narrow(1, 0, 1)?.squeeze(1)?;
    let m_im = mask.narrow(1, 1, 1)?.squeeze(1)?;
    if m_re.dims() != x_re.dims() {
        return Err(Error::shape(format!(
            "mask shape {:?} does not match spectrogram {:?}",
            m_re.dims(),
            x_re.dims()
        )));
    }
    let re = ((x_re * &m_re)? - (x_im * &m_im)?)?;
    let im = ((x_re * &m_im)? + (x_im * &m_re)?)?;
    Ok((re, im))
}

#[derive(Debug, Clone)]
pub struct Banquet {
    config: ModelConfig,
    bands: BandSpec,
    ola: Arc<BandOlaLayout>,
    params: ParamStore,
    mode: ModelMode,
    mask_bypass: bool,
}

impl Banquet {
    pub fn new(config: ModelConfig, mode: ModelMode, seed: u64) -> Result<Self> {
        Self::with_dtype(config, mode, seed, DType::F32)
    }

    pub fn with_dtype(config: ModelConfig, mode: ModelMode, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let bands = config.band_spec()?;
        Self::build(config, bands, mode, seed, dtype)
    }

    /// Build with an explicit band table, ignoring `config.bands`.
    pub fn build(
        config: ModelConfig,
        bands: BandSpec,
        mode: ModelMode,
        seed: u64,
        dtype: DType,
    ) -> Result<Self> {
        config.validate()?;
        bands.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new(dtype, Device::Cpu);
        let (c, d) = (config.channels, config.embed_dim);

        for (b, band) in bands.bands.iter().enumerate() {
            let k = 2 * c * band.width();
            let g = ParamGroup::BandProjection;
            add_layer_norm(&mut params, &format!("band_proj.{b}.norm"), k, g, &mut rng)?;
            add_linear(&mut params, &format!("band_proj.{b}.fc"), k, d, true, g, &mut rng)?;
        }
        for unit in rnn_units(&config) {
            unit.register(&mut params, &mut rng)?;
        }
        let outputs: Vec<usize> = bands.widths().iter().map(|w| 2 * c * w).collect();
        match &mode {
            ModelMode::Query => {
                params.add(
                    "query_proj.weight",
                    &[d, config.query_dim],
                    ParamGroup::QueryProjection,
                    Init::Uniform(1.0 / (config.query_dim as f64).sqrt()),
                    &mut rng,
                )?;
                let g = ParamGroup::Film;
                add_linear(&mut params, "film.hidden", d, config.film_hidden, true, g, &mut rng)?;
                params.add("film.out.weight", &[2 * d, config.film_hidden], g, Init::Zeros, &mut rng)?;
                params.add("film.out.bias", &[2 * d], g, Init::Zeros, &mut rng)?;
                let identity: Vec<f64> = (0..2 * d).map(|i| if i < d { 1.0 } else { 0.0 }).collect();
                params.assign("film.out.bias", &Tensor::from_vec(identity, 2 * d, &Device::Cpu)?)?;
                decoder_head(&config, "decoder", ParamGroup::Decoder).register(
                    &mut params,
                    &outputs,
                    &mut rng,
                )?;
            }
            ModelMode::Pretrain { stems } => {
                if stems.is_empty() {
                    return Err(Error::Config("pretraining needs at least one stem head".into()));
                }
                for stem in stems {
                    decoder_head(&config, &format!("head.{stem}"), ParamGroup::PretrainHead)
                        .register(&mut params, &outputs, &mut rng)?;
                }
            }
        }
        let ola = Arc::new(BandOlaLayout::new(&bands, c));
        Ok(Self {
            config,
            bands,
            ola,
            params,
            mode,
            mask_bypass: false,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn bands(&self) -> &BandSpec {
        &self.bands
    }

    pub fn mode(&self) -> &ModelMode {
        &self.mode
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    /// Replace the decoder with an all-ones mask. Test hook for the DSP chain.
    pub fn set_mask_bypass(&mut self, bypass: bool) {
        self.mask_bypass = bypass;
    }

    pub fn set_frozen_encoder(&mut self, frozen: bool) {
        for g in ParamGroup::ENCODER {
            self.params.set_trainable(g, !frozen);
        }
    }

    pub fn count_parameters(&self, only_trainable: bool) -> usize {
        self.params.count(only_trainable)
    }

    fn tensor(&self, values: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::from_vec(values, shape, self.params.device())?.to_dtype(self.dtype())?)
    }

    /// `[N, C, len]` tensor in the model dtype from host samples.
    pub fn batch_tensor(&self, values: Vec<f32>, batch: usize, len: usize) -> Result<Tensor> {
        self.tensor(values, &[batch, self.config.channels, len])
    }

    /// Real and imaginary STFT parts of `[N, C, len]` waveforms.
    pub fn analyze(&self, wave: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok(analysis(wave, self.config.stft)?)
    }

    pub fn encode_bands(&self, x_re: &Tensor, x_im: &Tensor) -> Result<TfEmbedding> {
        let (n, c, f, t) = x_re.dims4()?;
        if c != self.config.channels || f != self.bands.bins {
            return Err(Error::shape(format!(
                "spectrogram [{n}, {c}, {f}, {t}] does not match {} channels x {} bins",
                self.config.channels, self.bands.bins
            )));
        }
        // [N, T, C, F, 2]
        let x = Tensor::stack(&[x_re, x_im], 4)?.permute((0, 3, 1, 2, 4))?;
        let mut out = Vec::with_capacity(self.bands.n_bands());
        for (b, band) in self.bands.bands.iter().enumerate() {
            let xb = x
                .narrow(3, band.start, band.width())?
                .contiguous()?
                .reshape((n, t, 2 * c * band.width()))?;
            let y = apply_layer_norm(&self.params, &format!("band_proj.{b}.norm"), &xb)?;
            out.push(apply_linear(&self.params, &format!("band_proj.{b}.fc"), &y)?);
        }
        Ok(TfEmbedding {
            values: Tensor::stack(&out, 1)?,
            role: EmbeddingRole::Bands,
        })
    }

    pub fn tf_model(&self, v: &TfEmbedding) -> Result<TfEmbedding> {
        let (n, b, t, d) = v.values.dims4()?;
        let mut x = v.values.clone();
        for (i, unit) in rnn_units(&self.config).iter().enumerate() {
            x = if i % 2 == 0 {
                unit.forward(&self.params, &x.reshape((n * b, t, d))?)?
                    .reshape((n, b, t, d))?
            } else {
                let xt = x.permute((0, 2, 1, 3))?.contiguous()?.reshape((n * t, b, d))?;
                unit.forward(&self.params, &xt)?
                    .reshape((n, t, b, d))?
                    .permute((0, 2, 1, 3))?
                    .contiguous()?
            };
        }
        Ok(TfEmbedding {
            values: x,
            role: EmbeddingRole::Mixture,
        })
    }

    /// Learned down-projection of time-pooled query features `[N, D̃]` to `[N, D]`.
    pub fn project_query(&self, pooled: &Tensor) -> Result<Tensor> {
        self.require_query_mode()?;
        let (_, dq) = pooled.dims2()?;
        if dq != self.config.query_dim {
            return Err(Error::shape(format!(
                "query features have {dq} dims, expected {}",
                self.config.query_dim
            )));
        }
        apply_linear(&self.params, "query_proj", pooled)
    }

    pub fn film_condition(&self, z: &Tensor) -> Result<FilmParams> {
        self.require_query_mode()?;
        let (_, d) = z.dims2()?;
        if d != self.config.embed_dim {
            return Err(Error::shape(format!(
                "query embedding has {d} dims, expected {}",
                self.config.embed_dim
            )));
        }
        let h = apply_linear(&self.params, "film.hidden", z)?.relu()?;
        let gb = apply_linear(&self.params, "film.out", &h)?;
        Ok(FilmParams {
            gamma: gb.narrow(D::Minus1, 0, d)?,
            beta: gb.narrow(D::Minus1, d, d)?,
        })
    }

    /// Full-band complex mask `[N, 2, C, F, T]` from a conditioned embedding.
    /// `head` selects a pretraining decoder; `None` uses the shared decoder.
    pub fn mask_decode(&self, l: &TfEmbedding, head: Option<&str>) -> Result<Tensor> {
        let prefix = match head {
            Some(stem) => format!("head.{stem}"),
            None => "decoder".to_string(),
        };
        let group = if head.is_some() {
            ParamGroup::PretrainHead
        } else {
            ParamGroup::Decoder
        };
        let features = decoder_head(&self.config, &prefix, group).forward(
            &self.params,
            &l.values,
            self.bands.n_bands(),
        )?;
        Ok(band_overlap_add(&features, &self.ola)?)
    }

    fn unit_mask(&self, x_re: &Tensor) -> Result<Tensor> {
        let (n, c, f, t) = x_re.dims4()?;
        let ones = Tensor::ones((n, 1, c, f, t), self.dtype(), self.params.device())?;
        Ok(Tensor::cat(&[&ones, &ones.zeros_like()?], 1)?)
    }

    fn finish(&self, x_re: &Tensor, x_im: &Tensor, mask: &Tensor, len: usize) -> Result<Separation> {
        let (re, im) = apply_mask(x_re, x_im, mask)?;
        let wave = synthesize(&re, &im, self.config.stft, len)?;
        Ok(Separation { wave, re, im })
    }

    /// Separate `[N, C, len]` mixtures given pooled query features `[N, D̃]`.
    pub fn forward(&self, mixture: &Tensor, query: &Tensor) -> Result<Separation> {
        let z = self.project_query(query)?;
        self.forward_embedded(mixture, &z)
    }

    /// Separate given already projected query embeddings `[N, D]`.
    pub fn forward_embedded(&self, mixture: &Tensor, z: &Tensor) -> Result<Separation> {
        self.require_query_mode()?;
        let len = mixture.dim(2)?;
        let (x_re, x_im) = self.analyze(mixture)?;
        if self.mask_bypass {
            let mask = self.unit_mask(&x_re)?;
            return self.finish(&x_re, &x_im, &mask, len);
        }
        let v = self.encode_bands(&x_re, &x_im)?;
        let u = self.tf_model(&v)?;
        let l = film_adapt(&u, &self.film_condition(z)?)?;
        let mask = self.mask_decode(&l, None)?;
        self.finish(&x_re, &x_im, &mask, len)
    }

    /// One separation per pretraining head, sharing the encoder pass.
    pub fn multi_decode(&self, mixture: &Tensor) -> Result<Vec<Separation>> {
        let ModelMode::Pretrain { stems } = &self.mode else {
            return Err(Error::InvalidArgument("multi_decode needs a pretraining model".into()));
        };
        let len = mixture.dim(2)?;
        let (x_re, x_im) = self.analyze(mixture)?;
        let u = self.tf_model(&self.encode_bands(&x_re, &x_im)?)?;
        stems
            .iter()
            .map(|stem| {
                let mask = self.mask_decode(&u, Some(stem))?;
                self.finish(&x_re, &x_im, &mask, len)
            })
            .collect()
    }

    fn require_query_mode(&self) -> Result<()> {
        match self.mode {
            ModelMode::Query => Ok(()),
            ModelMode::Pretrain { .. } => Err(Error::InvalidArgument(
                "query conditioning is unavailable on a pretraining model".into(),
            )),
        }
    }
}

fn rnn_units(config: &ModelConfig) -> Vec<RnnUnit> {
    (0..config.tf_pairs)
        .flat_map(|p| {
            ["time", "band"].map(|axis| RnnUnit {
                prefix: format!("tf.{p}.{axis}"),
                dim: config.embed_dim,
                hidden: config.rnn_hidden,
            })
        })
        .collect()
}

fn decoder_head(config: &ModelConfig, prefix: &str, group: ParamGroup) -> MaskHead {
    MaskHead {
        prefix: prefix.to_string(),
        dim: config.embed_dim,
        hidden: config.decoder_hidden,
        group,
    }
}
