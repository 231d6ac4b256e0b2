//! Cosine-similarity evaluation of predictions against ground truth, variant
//! comparison tables and (k, w1) grid sweeps.

mod fixture;

pub use fixture::{
    make_fixture, noisy_captions, random_unit_rows, FixturePaths, SyntheticFixture, SyntheticFixtureSpec,
    GROUND_TRUTH_FILE, LABELS_FILE, QUERIES_FILE,
};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_slices, l2_normalize, EmbeddingMatrix, EmbeddingVector};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::index::CorpusIndex;
use crate::predictor::{fuse_components, pool_neighbors, FusionConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub variant_name: String,
    pub n: usize,
    pub mean_similarity: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl EvalSummary {
    fn from_records(name: &str, records: &[EvalRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        let n = records.len() as f64;
        let (sum, min, max) = records
            .iter()
            .fold((0.0f64, f64::INFINITY, f64::NEG_INFINITY), |(s, lo, hi), r| {
                (s + r.similarity, lo.min(r.similarity), hi.max(r.similarity))
            });
        let mean = sum / n;
        let var = records.iter().map(|r| (r.similarity - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            variant_name: name.to_string(),
            n: records.len(),
            // Rounding can push the mean of identical values a hair outside [min, max].
            mean_similarity: mean.clamp(min, max),
            std: var.sqrt(),
            min,
            max,
        })
    }
}

pub fn evaluate(
    predictions: &EmbeddingMatrix,
    ground_truth: &EmbeddingMatrix,
) -> Result<(Vec<EvalRecord>, EvalSummary)> {
    evaluate_with(predictions, ground_truth, Execution::default())
}

/// Per-row cosine similarity plus summary statistics. Rows are scored in
/// parallel but reduced in row order, so the summary is deterministic.
pub fn evaluate_with(
    predictions: &EmbeddingMatrix,
    ground_truth: &EmbeddingMatrix,
    exec: Execution,
) -> Result<(Vec<EvalRecord>, EvalSummary)> {
    if predictions.rows() != ground_truth.rows() {
        return Err(Error::RowCountMismatch {
            left: predictions.rows(),
            right: ground_truth.rows(),
        });
    }
    if predictions.dim() != ground_truth.dim() {
        return Err(Error::DimMismatch {
            expected: ground_truth.dim(),
            actual: predictions.dim(),
        });
    }
    let records = exec.try_map_range(predictions.rows(), |i| {
        cosine_slices(predictions.row(i), ground_truth.row(i))
            .map(|similarity| EvalRecord {
                query_id: i,
                similarity,
            })
            .map_err(|e| match e {
                Error::ZeroVector { .. } => Error::ZeroVector { row: Some(i) },
                e => e,
            })
    })?;
    let summary = EvalSummary::from_records("", &records)?;
    Ok((records, summary))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariantKind {
    /// Caption embedding alone.
    CaptionOnly,
    /// Mean of the k nearest neighbors' sentence embeddings.
    Knn { k: usize },
    /// KNN component fused with the caption using the base weights.
    Fused { k: usize },
}

impl VariantKind {
    fn k(self) -> Option<usize> {
        match self {
            VariantKind::CaptionOnly => None,
            VariantKind::Knn { k } | VariantKind::Fused { k } => Some(k),
        }
    }

    fn needs_captions(self) -> bool {
        !matches!(self, VariantKind::Knn { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub kind: VariantKind,
}

impl Variant {
    pub fn caption_only() -> Self {
        Self {
            name: "clip".into(),
            kind: VariantKind::CaptionOnly,
        }
    }

    pub fn knn(k: usize) -> Self {
        Self {
            name: format!("knn@{k}"),
            kind: VariantKind::Knn { k },
        }
    }

    pub fn fused(k: usize) -> Self {
        Self {
            name: format!("fused@{k}"),
            kind: VariantKind::Fused { k },
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    /// Accepts `clip`, `knn@K` and `fused@K`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "clip" || s == "caption" {
            return Ok(Variant::caption_only());
        }
        let bad = || Error::InvalidArgument(format!("unknown variant {s:?}; expected clip, knn@K or fused@K"));
        let (kind, k) = s.split_once('@').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        match kind {
            "knn" => Ok(Variant::knn(k)),
            "fused" => Ok(Variant::fused(k)),
            _ => Err(bad()),
        }
    }
}

/// Inputs shared by every evaluated variant.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub index: &'a CorpusIndex,
    pub queries: &'a EmbeddingMatrix,
    pub ground_truth: &'a EmbeddingMatrix,
    pub captions: Option<&'a EmbeddingMatrix>,
}

impl EvalSet<'_> {
    fn check(&self) -> Result<()> {
        if self.queries.rows() != self.ground_truth.rows() {
            return Err(Error::RowCountMismatch {
                left: self.queries.rows(),
                right: self.ground_truth.rows(),
            });
        }
        if self.queries.dim() != self.index.clip_dim() {
            return Err(Error::DimMismatch {
                expected: self.index.clip_dim(),
                actual: self.queries.dim(),
            });
        }
        if self.ground_truth.dim() != self.index.sent_dim() {
            return Err(Error::DimMismatch {
                expected: self.index.sent_dim(),
                actual: self.ground_truth.dim(),
            });
        }
        if let Some(c) = self.captions {
            if c.rows() != self.queries.rows() {
                return Err(Error::RowCountMismatch {
                    left: self.queries.rows(),
                    right: c.rows(),
                });
            }
            if c.dim() != self.index.sent_dim() {
                return Err(Error::DimMismatch {
                    expected: self.index.sent_dim(),
                    actual: c.dim(),
                });
            }
        }
        Ok(())
    }
}

struct Job {
    name: String,
    kind: VariantKind,
    cfg: FusionConfig,
}

/// Evaluates each job over the same queries. Neighbors are searched once at
/// the largest k and reused as prefixes, which matches per-k searches because
/// results at k are a prefix of results at k + 1.
fn run_jobs(set: &EvalSet<'_>, jobs: &[Job], exec: Execution) -> Result<Vec<EvalSummary>> {
    set.check()?;
    for j in jobs {
        j.cfg.validate()?;
        if j.kind.needs_captions() && set.captions.is_none() {
            return Err(Error::MissingCaptions(j.name.clone()));
        }
    }
    let k_max = jobs.iter().filter_map(|j| j.kind.k()).max();
    let neighbors = match k_max {
        Some(k) => set.index.search_batch_with(set.queries, k, exec)?,
        None => Vec::new(),
    };

    let dim = set.index.sent_dim();
    jobs.iter()
        .map(|job| {
            let preds = exec.try_map_range(set.queries.rows(), |i| {
                let caption = set.captions.map(|c| c.row_vector(i));
                let e = match job.kind {
                    VariantKind::CaptionOnly => {
                        let c = caption.expect("checked above");
                        if job.cfg.normalize_output {
                            l2_normalize(&c)?
                        } else {
                            c
                        }
                    }
                    VariantKind::Knn { k } => {
                        let e1 = pool_neighbors(set.index, &neighbors[i], k)?;
                        fuse_components(&e1, None, &job.cfg)?
                    }
                    VariantKind::Fused { k } => {
                        let e1 = pool_neighbors(set.index, &neighbors[i], k)?;
                        fuse_components(&e1, caption.as_ref(), &job.cfg)?
                    }
                };
                Ok::<EmbeddingVector, Error>(e)
            })?;
            let preds = EmbeddingMatrix::from_vectors(dim, &preds)?;
            let (_, mut summary) = evaluate_with(&preds, set.ground_truth, exec)?;
            summary.variant_name = job.name.clone();
            Ok(summary)
        })
        .collect()
}

pub fn compare_variants(set: &EvalSet<'_>, variants: &[Variant], base: &FusionConfig) -> Result<Vec<EvalSummary>> {
    compare_variants_with(set, variants, base, Execution::default())
}

/// One summary per variant, in the order given.
pub fn compare_variants_with(
    set: &EvalSet<'_>,
    variants: &[Variant],
    base: &FusionConfig,
    exec: Execution,
) -> Result<Vec<EvalSummary>> {
    let jobs: Vec<Job> = variants
        .iter()
        .map(|v| Job {
            name: v.name.clone(),
            kind: v.kind,
            cfg: FusionConfig {
                k: v.kind.k().unwrap_or(base.k),
                ..base.clone()
            },
        })
        .collect();
    run_jobs(set, &jobs, exec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k: usize,
    pub w1: f64,
    pub w2: f64,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    /// Index into `cells` of the highest mean similarity; the first wins ties.
    pub best: usize,
}

impl SweepResult {
    pub fn best_cell(&self) -> &SweepCell {
        &self.cells[self.best]
    }
}

/// Evaluates the full `k_values x w1_values` grid with `w2 = 1 - w1`.
/// Cells are fused predictions when captions are supplied, plain KNN
/// otherwise.
pub fn sweep(set: &EvalSet<'_>, k_values: &[usize], w1_values: &[f64], base: &FusionConfig) -> Result<SweepResult> {
    if k_values.is_empty() || w1_values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one k and one w1".into()));
    }
    let mut jobs = Vec::with_capacity(k_values.len() * w1_values.len());
    for &k in k_values {
        for &w1 in w1_values {
            let cfg = FusionConfig {
                k,
                w1,
                w2: 1.0 - w1,
                ..base.clone()
            };
            let kind = if set.captions.is_some() {
                VariantKind::Fused { k }
            } else {
                VariantKind::Knn { k }
            };
            jobs.push(Job {
                name: format!("k={k} w1={w1}"),
                kind,
                cfg,
            });
        }
    }
    let summaries = run_jobs(set, &jobs, Execution::default())?;
    let cells: Vec<SweepCell> = jobs
        .iter()
        .zip(summaries)
        .map(|(j, summary)| SweepCell {
            k: j.cfg.k,
            w1: j.cfg.w1,
            w2: j.cfg.w2,
            summary,
        })
        .collect();
    let mut best = 0;
    for (i, c) in cells.iter().enumerate() {
        if c.summary.mean_similarity > cells[best].summary.mean_similarity {
            best = i;
        }
    }
    Ok(SweepResult { cells, best })
}

/// Aligned plain-text table. `delta` is each row's mean minus the first row's.
pub fn render_table(rows: &[EvalSummary]) -> String {
    let width = rows
        .iter()
        .map(|r| r.variant_name.len())
        .chain(std::iter::once("variant".len()))
        .max()
        .unwrap_or(7);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>6}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}",
        "variant", "n", "mean", "std", "min", "max", "delta"
    );
    let base = rows.first().map(|r| r.mean_similarity).unwrap_or(0.0);
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>+8.4}",
            r.variant_name,
            r.n,
            r.mean_similarity,
            r.std,
            r.min,
            r.max,
            r.mean_similarity - base
        );
    }
    out
}
