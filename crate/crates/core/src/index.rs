//! Exact top-k cosine search over the corpus CLIP embeddings.
//!
//! Rows are normalized once at build time and the query once per search, so
//! each score is a single dot product. Selection keeps a bounded heap, but
//! the result is always the full-sort order: score descending, ties broken
//! by ascending row.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::time::SystemTime;

use crate::embedding::{clamp_unit, dot, l2_normalize, norm, EmbeddingMatrix, EmbeddingVector};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::store::CorpusBundle;

/// Rows scanned per parallel chunk when a single query is split up.
const SCAN_CHUNK_ROWS: usize = 16 * 1024;

/// Accepted deviation from unit norm for corpora marked as pre-normalized.
const PRENORMALIZED_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub row: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub neighbors: Vec<Neighbor>,
    /// The `k` the caller asked for, which may exceed `neighbors.len()`.
    pub requested_k: usize,
}

impl QueryResult {
    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.neighbors.iter().map(|n| n.row)
    }

    pub fn was_clamped(&self) -> bool {
        self.requested_k > self.neighbors.len()
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

/// Total order on candidates: higher score is better, then lower row.
#[derive(Debug, Clone, Copy)]
struct Candidate(Neighbor);

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .score
            .total_cmp(&other.0.score)
            .then_with(|| other.0.row.cmp(&self.0.row))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

/// Immutable searchable corpus.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    clip: EmbeddingMatrix,
    sent: EmbeddingMatrix,
    prompts: Vec<String>,
    build_time: SystemTime,
}

impl CorpusIndex {
    pub fn build(bundle: CorpusBundle) -> Result<Self> {
        let prompts = bundle.prompts.into_iter().map(|p| p.prompt).collect();
        Self::from_parts(bundle.clip, bundle.sent, prompts, bundle.manifest.normalized)
    }

    /// Builds from raw matrices. When `prenormalized` is set each row is
    /// checked to be unit length before being renormalized in place.
    pub fn from_parts(
        clip: EmbeddingMatrix,
        sent: EmbeddingMatrix,
        prompts: Vec<String>,
        prenormalized: bool,
    ) -> Result<Self> {
        if clip.rows() == 0 {
            return Err(Error::EmptyMatrix);
        }
        if clip.rows() != sent.rows() {
            return Err(Error::RowCountMismatch {
                left: clip.rows(),
                right: sent.rows(),
            });
        }
        if clip.rows() != prompts.len() {
            return Err(Error::RowCountMismatch {
                left: clip.rows(),
                right: prompts.len(),
            });
        }
        if prenormalized {
            for (row, r) in clip.iter_rows().enumerate() {
                let n = norm(r);
                if n == 0.0 {
                    return Err(Error::ZeroVector { row: Some(row) });
                }
                if (n - 1.0).abs() > PRENORMALIZED_TOLERANCE {
                    return Err(Error::NotNormalized { row, norm: n });
                }
            }
        }
        let clip = clip.normalized_rows()?;
        Ok(Self {
            clip,
            sent,
            prompts,
            build_time: SystemTime::now(),
        })
    }

    pub fn len(&self) -> usize {
        self.clip.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.clip.rows() == 0
    }

    pub fn clip_dim(&self) -> usize {
        self.clip.dim()
    }

    pub fn sent_dim(&self) -> usize {
        self.sent.dim()
    }

    /// Unit-normalized CLIP rows, in corpus order.
    pub fn clip_normalized(&self) -> &EmbeddingMatrix {
        &self.clip
    }

    pub fn sentence_embeddings(&self) -> &EmbeddingMatrix {
        &self.sent
    }

    pub fn prompt(&self, row: usize) -> &str {
        &self.prompts[row]
    }

    pub fn build_time(&self) -> SystemTime {
        self.build_time
    }

    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<QueryResult> {
        self.search_with(query, k, Execution::Sequential)
    }

    /// Like [`CorpusIndex::search`]; `exec` decides whether the corpus scan
    /// of this one query is split across threads.
    pub fn search_with(&self, query: &EmbeddingVector, k: usize, exec: Execution) -> Result<QueryResult> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if query.dim() != self.clip_dim() {
            return Err(Error::DimMismatch {
                expected: self.clip_dim(),
                actual: query.dim(),
            });
        }
        let q = l2_normalize(query)?;
        let n = self.len();
        let take = k.min(n);
        if k > n {
            log::warn!("k = {k} exceeds corpus size {n}; returning {n} neighbors");
        }

        let neighbors = if exec.is_parallel() && n > SCAN_CHUNK_ROWS {
            let chunks = n.div_ceil(SCAN_CHUNK_ROWS);
            let partial = exec.map_range(chunks, |c| {
                let start = c * SCAN_CHUNK_ROWS;
                let end = (start + SCAN_CHUNK_ROWS).min(n);
                self.scan(q.as_slice(), start..end, take)
            });
            merge_top(partial.into_iter().flatten(), take)
        } else {
            self.scan(q.as_slice(), 0..n, take)
        };

        Ok(QueryResult {
            neighbors,
            requested_k: k,
        })
    }

    fn scan(&self, q: &[f32], rows: std::ops::Range<usize>, take: usize) -> Vec<Neighbor> {
        merge_top(
            rows.map(|row| Neighbor {
                row,
                score: clamp_unit(dot(q, self.clip.row(row))),
            }),
            take,
        )
    }

    pub fn search_batch(&self, queries: &EmbeddingMatrix, k: usize) -> Result<Vec<QueryResult>> {
        self.search_batch_with(queries, k, Execution::default())
    }

    /// Searches every query row. Errors carry the offending query index.
    pub fn search_batch_with(&self, queries: &EmbeddingMatrix, k: usize, exec: Execution) -> Result<Vec<QueryResult>> {
        if queries.dim() != self.clip_dim() {
            return Err(Error::DimMismatch {
                expected: self.clip_dim(),
                actual: queries.dim(),
            });
        }
        exec.try_map_range(queries.rows(), |i| {
            self.search(&queries.row_vector(i), k).map_err(|e| e.in_row(i))
        })
    }
}

/// Selects the best `take` candidates in full-sort order.
fn merge_top<I: IntoIterator<Item = Neighbor>>(items: I, take: usize) -> Vec<Neighbor> {
    let mut heap: BinaryHeap<Reverse<Candidate>> = BinaryHeap::with_capacity(take + 1);
    for n in items {
        let c = Candidate(n);
        if heap.len() < take {
            heap.push(Reverse(c));
        } else if let Some(worst) = heap.peek() {
            if c > worst.0 {
                heap.pop();
                heap.push(Reverse(c));
            }
        }
    }
    heap.into_sorted_vec().into_iter().map(|Reverse(c)| c.0).collect()
}
