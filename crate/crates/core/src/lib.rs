//! Image-to-prompt embedding prediction by nearest-neighbor retrieval.
//!
//! An image's CLIP embedding is matched against the CLIP text embeddings of a
//! prompt corpus. The sentence embeddings of the top-k prompts are averaged
//! and optionally fused with the sentence embedding of a generated caption.
//!
//! - [`embedding`]: validated vector/matrix types and numeric primitives
//! - [`store`]: binary embedding files, prompt lines and corpus manifests
//! - [`index`]: exact top-k cosine search
//! - [`builder`]: offline corpus filtering and construction
//! - [`predictor`]: KNN pooling and weighted fusion
//! - [`eval`]: cosine evaluation, variant tables, sweeps and synthetic fixtures

pub mod builder;
pub mod embedding;
mod error;
pub mod eval;
pub mod exec;
pub mod index;
pub mod predictor;
pub mod store;

pub use embedding::{cosine_similarity, l2_normalize, mean_pool, weighted_fuse, EmbeddingMatrix, EmbeddingVector};
pub use error::{Error, Result};
pub use exec::Execution;
pub use index::{CorpusIndex, Neighbor, QueryResult};
pub use predictor::{predict, predict_batch, predict_knn_component, FusionConfig, Prediction};
pub use store::{load_corpus, read_embeddings, write_embeddings, CorpusBundle, CorpusManifest};
