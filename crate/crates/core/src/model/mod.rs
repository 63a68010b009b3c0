//! The separation network: band-split encoder, time/band recurrent model,
//! FiLM query conditioning and a per-band complex mask decoder.

mod banquet;
mod bands;
mod layers;
mod ops;
mod params;

pub use banquet::{
    apply_mask, assemble_band_masks, film_adapt, BandLayout, BandsConfig, Banquet, EmbeddingRole, FilmParams,
    ModelConfig, ModelMode, Separation, TfEmbedding,
};
pub use bands::{make_band_spec, Band, BandScheme, BandSpec, BandWeighting};
pub use params::{Init, Param, ParamGroup, ParamStore};
