//! Online prediction: image embedding in, fused prompt embedding out.
//!
//! Retrieval runs in CLIP space, but the retrieved rows are pooled over their
//! paired sentence embeddings so that the KNN component, the caption
//! component and the ground truth all share one space.

use serde::{Deserialize, Serialize};

use crate::embedding::{l2_normalize, mean_of_rows, weighted_fuse, EmbeddingMatrix, EmbeddingVector};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::index::{CorpusIndex, QueryResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub k: usize,
    pub w1: f64,
    pub w2: f64,
    pub normalize_components: bool,
    pub normalize_output: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            k: 100,
            w1: 0.6,
            w2: 0.4,
            normalize_components: true,
            normalize_output: true,
        }
    }
}

impl FusionConfig {
    pub fn with_k(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if !self.w1.is_finite() || !self.w2.is_finite() {
            return Err(Error::InvalidArgument("fusion weights must be finite".into()));
        }
        if self.w1 == 0.0 && self.w2 == 0.0 {
            return Err(Error::InvalidArgument("fusion weights must not both be zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub e_pred: EmbeddingVector,
    /// Mean of the neighbors' sentence embeddings, before any normalization.
    pub e_pred1: EmbeddingVector,
    /// The caption embedding as supplied.
    pub e_pred2: Option<EmbeddingVector>,
    pub neighbors: QueryResult,
}

/// Searches `k` neighbors and averages their sentence embeddings.
pub fn predict_knn_component(
    index: &CorpusIndex,
    image_emb: &EmbeddingVector,
    k: usize,
) -> Result<(EmbeddingVector, QueryResult)> {
    let neighbors = index.search(image_emb, k)?;
    let pooled = pool_neighbors(index, &neighbors, neighbors.len())?;
    Ok((pooled, neighbors))
}

/// Mean of the sentence rows for the first `k` neighbors.
pub(crate) fn pool_neighbors(index: &CorpusIndex, neighbors: &QueryResult, k: usize) -> Result<EmbeddingVector> {
    mean_of_rows(
        index.sentence_embeddings(),
        neighbors.neighbors.iter().take(k).map(|n| n.row),
    )
}

/// Combines the KNN component with an optional caption component.
pub(crate) fn fuse_components(
    e_pred1: &EmbeddingVector,
    caption: Option<&EmbeddingVector>,
    cfg: &FusionConfig,
) -> Result<EmbeddingVector> {
    let knn = if cfg.normalize_components {
        l2_normalize(e_pred1)?
    } else {
        e_pred1.clone()
    };
    let fused = match caption {
        None => knn,
        Some(c) => {
            if c.dim() != e_pred1.dim() {
                return Err(Error::DimMismatch {
                    expected: e_pred1.dim(),
                    actual: c.dim(),
                });
            }
            let c = if cfg.normalize_components {
                l2_normalize(c)?
            } else {
                c.clone()
            };
            weighted_fuse(&knn, &c, cfg.w1, cfg.w2)?
        }
    };
    if cfg.normalize_output {
        l2_normalize(&fused)
    } else {
        Ok(fused)
    }
}

pub fn predict(
    index: &CorpusIndex,
    image_emb: &EmbeddingVector,
    caption_sent_emb: Option<&EmbeddingVector>,
    cfg: &FusionConfig,
) -> Result<Prediction> {
    cfg.validate()?;
    if let Some(c) = caption_sent_emb {
        if c.dim() != index.sent_dim() {
            return Err(Error::DimMismatch {
                expected: index.sent_dim(),
                actual: c.dim(),
            });
        }
    }
    let (e_pred1, neighbors) = predict_knn_component(index, image_emb, cfg.k)?;
    let e_pred = fuse_components(&e_pred1, caption_sent_emb, cfg)?;
    Ok(Prediction {
        e_pred,
        e_pred1,
        e_pred2: caption_sent_emb.cloned(),
        neighbors,
    })
}

pub fn predict_batch(
    index: &CorpusIndex,
    image_embs: &EmbeddingMatrix,
    caption_sent_embs: Option<&EmbeddingMatrix>,
    cfg: &FusionConfig,
) -> Result<Vec<Prediction>> {
    predict_batch_with(index, image_embs, caption_sent_embs, cfg, Execution::default())
}

/// Predicts every row; errors carry the row index. Shape problems are
/// reported before any search runs.
pub fn predict_batch_with(
    index: &CorpusIndex,
    image_embs: &EmbeddingMatrix,
    caption_sent_embs: Option<&EmbeddingMatrix>,
    cfg: &FusionConfig,
    exec: Execution,
) -> Result<Vec<Prediction>> {
    cfg.validate()?;
    if image_embs.dim() != index.clip_dim() {
        return Err(Error::DimMismatch {
            expected: index.clip_dim(),
            actual: image_embs.dim(),
        });
    }
    if let Some(c) = caption_sent_embs {
        if c.rows() != image_embs.rows() {
            return Err(Error::RowCountMismatch {
                left: image_embs.rows(),
                right: c.rows(),
            });
        }
        if c.dim() != index.sent_dim() {
            return Err(Error::DimMismatch {
                expected: index.sent_dim(),
                actual: c.dim(),
            });
        }
    }
    exec.try_map_range(image_embs.rows(), |i| {
        let caption = caption_sent_embs.map(|c| c.row_vector(i));
        predict(index, &image_embs.row_vector(i), caption.as_ref(), cfg).map_err(|e| e.in_row(i))
    })
}

/// Stacks the fused predictions into one matrix.
pub fn stack_predictions(preds: &[Prediction], dim: usize) -> Result<EmbeddingMatrix> {
    let vs: Vec<EmbeddingVector> = preds.iter().map(|p| p.e_pred.clone()).collect();
    EmbeddingMatrix::from_vectors(dim, &vs)
}
