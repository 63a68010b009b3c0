//! Query conditioning: a frozen feature backend, time pooling, and the
//! learned projection into the separator's embedding space.

mod backend;
mod store;

pub use backend::{
    backend_from_name, embed_query, pool_project, prepare_query, EmbedderBackend, ExternalBackend,
    MockBackend, QueryEmbedding, RawQueryFeatures, MIN_QUERY_SECS, QUERY_FEATURE_DIM,
};
pub use store::{cache_embeddings, CacheSummary, EmbeddingStore, QueryBank, EMBEDDING_SCHEMA_VERSION};
