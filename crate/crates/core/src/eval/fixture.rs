//! Seeded synthetic corpora with known cluster structure.
//!
//! Cluster centers are random unit vectors in CLIP space. Each prompt is its
//! center plus isotropic Gaussian noise with per-component standard deviation
//! `noise_sigma`. Sentence embeddings are a fixed random map with orthonormal
//! rows (or columns) from CLIP space into sentence space, renormalized.
//! Queries are fresh noisy copies of centers and their ground truth is the
//! mapped clean center.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMatrix, EmbeddingVector};
use crate::error::{Error, Result};
use crate::index::CorpusIndex;
use crate::store::{self, write_embeddings_file, CorpusBundle, CorpusManifest, MANIFEST_FILE};

pub const QUERIES_FILE: &str = "queries.emb";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.emb";
pub const LABELS_FILE: &str = "fixture.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFixtureSpec {
    pub n_clusters: usize,
    pub prompts_per_cluster: usize,
    pub n_queries: usize,
    pub clip_dim: usize,
    pub sent_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticFixtureSpec {
    /// The clustered fixture the retrieval-ordering checks are pinned to.
    pub fn reference() -> Self {
        Self {
            n_clusters: 32,
            prompts_per_cluster: 64,
            n_queries: 500,
            clip_dim: 64,
            sent_dim: 32,
            noise_sigma: 0.35,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_clusters", self.n_clusters),
            ("prompts_per_cluster", self.prompts_per_cluster),
            ("n_queries", self.n_queries),
            ("clip_dim", self.clip_dim),
            ("sent_dim", self.sent_dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise_sigma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFixture {
    pub spec: SyntheticFixtureSpec,
    pub clip: EmbeddingMatrix,
    pub sent: EmbeddingMatrix,
    pub prompts: Vec<String>,
    pub prompt_clusters: Vec<usize>,
    pub queries: EmbeddingMatrix,
    pub query_clusters: Vec<usize>,
    pub ground_truth: EmbeddingMatrix,
}

#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub manifest: PathBuf,
    pub queries: PathBuf,
    pub ground_truth: PathBuf,
    pub labels: PathBuf,
}

#[derive(Serialize)]
struct Labels<'a> {
    spec: &'a SyntheticFixtureSpec,
    query_clusters: &'a [usize],
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Gram-Schmidt over `count` random vectors of length `len`.
fn orthonormal_set(rng: &mut ChaCha8Rng, count: usize, len: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian(rng, len);
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// Linear map CLIP → sentence space, stored row-major `sent_dim x clip_dim`.
struct SpaceMap {
    clip_dim: usize,
    sent_dim: usize,
    weights: Vec<f64>,
}

impl SpaceMap {
    fn random(rng: &mut ChaCha8Rng, clip_dim: usize, sent_dim: usize) -> Self {
        let mut weights = vec![0.0; sent_dim * clip_dim];
        if sent_dim <= clip_dim {
            for (r, row) in orthonormal_set(rng, sent_dim, clip_dim).into_iter().enumerate() {
                weights[r * clip_dim..(r + 1) * clip_dim].copy_from_slice(&row);
            }
        } else {
            for (c, col) in orthonormal_set(rng, clip_dim, sent_dim).into_iter().enumerate() {
                for (r, x) in col.into_iter().enumerate() {
                    weights[r * clip_dim + c] = x;
                }
            }
        }
        Self {
            clip_dim,
            sent_dim,
            weights,
        }
    }

    fn apply_unit(&self, x: &[f64]) -> Result<Vec<f32>> {
        let y: Vec<f64> = (0..self.sent_dim)
            .map(|r| {
                self.weights[r * self.clip_dim..(r + 1) * self.clip_dim]
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum()
            })
            .collect();
        let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::ZeroVector { row: None });
        }
        Ok(y.into_iter().map(|v| (v / n) as f32).collect())
    }
}

pub fn make_fixture(spec: &SyntheticFixtureSpec) -> Result<SyntheticFixture> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.clip_dim;

    let centers: Vec<Vec<f64>> = (0..spec.n_clusters).map(|_| unit(gaussian(&mut rng, d))).collect();
    let map = SpaceMap::random(&mut rng, d, spec.sent_dim);

    let noisy = |rng: &mut ChaCha8Rng, c: &[f64]| -> Vec<f64> {
        c.iter()
            .map(|&x| x + spec.noise_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };

    let n = spec.n_clusters * spec.prompts_per_cluster;
    let mut clip = Vec::with_capacity(n * d);
    let mut sent = Vec::with_capacity(n * spec.sent_dim);
    let mut prompts = Vec::with_capacity(n);
    let mut prompt_clusters = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for j in 0..spec.prompts_per_cluster {
            let x = noisy(&mut rng, center);
            sent.extend(map.apply_unit(&x)?);
            clip.extend(x.iter().map(|&v| v as f32));
            prompts.push(format!("cluster-{c}-prompt-{j}"));
            prompt_clusters.push(c);
        }
    }

    let mut queries = Vec::with_capacity(spec.n_queries * d);
    let mut ground_truth = Vec::with_capacity(spec.n_queries * spec.sent_dim);
    let mut query_clusters = Vec::with_capacity(spec.n_queries);
    for _ in 0..spec.n_queries {
        let c = rng.random_range(0..spec.n_clusters);
        let x = noisy(&mut rng, &centers[c]);
        queries.extend(x.iter().map(|&v| v as f32));
        ground_truth.extend(map.apply_unit(&centers[c])?);
        query_clusters.push(c);
    }

    Ok(SyntheticFixture {
        spec: spec.clone(),
        clip: EmbeddingMatrix::new(n, d, clip)?,
        sent: EmbeddingMatrix::new(n, spec.sent_dim, sent)?,
        prompts,
        prompt_clusters,
        queries: EmbeddingMatrix::new(spec.n_queries, d, queries)?,
        query_clusters,
        ground_truth: EmbeddingMatrix::new(spec.n_queries, spec.sent_dim, ground_truth)?,
    })
}

impl SyntheticFixture {
    pub fn index(&self) -> Result<CorpusIndex> {
        CorpusIndex::from_parts(self.clip.clone(), self.sent.clone(), self.prompts.clone(), false)
    }

    pub fn bundle(&self) -> CorpusBundle {
        CorpusBundle {
            manifest: self.manifest(),
            clip: self.clip.clone(),
            sent: self.sent.clone(),
            prompts: self
                .prompts
                .iter()
                .enumerate()
                .map(|(row, p)| store::PromptRecord {
                    row,
                    id: row as i64,
                    prompt: p.clone(),
                })
                .collect(),
        }
    }

    fn provenance(&self) -> String {
        let s = &self.spec;
        format!(
            "synthetic fixture: n_clusters={} prompts_per_cluster={} n_queries={} clip_dim={} sent_dim={} noise_sigma={} seed={}",
            s.n_clusters, s.prompts_per_cluster, s.n_queries, s.clip_dim, s.sent_dim, s.noise_sigma, s.seed
        )
    }

    fn manifest(&self) -> CorpusManifest {
        CorpusManifest {
            schema_version: store::MANIFEST_SCHEMA_VERSION,
            clip_embeddings: store::CLIP_FILE.into(),
            sent_embeddings: store::SENT_FILE.into(),
            prompts: store::PROMPTS_FILE.into(),
            clip_dim: self.clip.dim(),
            sent_dim: self.sent.dim(),
            count: self.clip.rows(),
            normalized: false,
            provenance: self.provenance(),
        }
    }

    /// Writes corpus, queries, ground truth and cluster labels into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<FixturePaths> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        store::write_corpus(
            dir,
            &self.clip,
            &self.sent,
            self.prompts.iter().enumerate().map(|(i, p)| (i as i64, p.as_str())),
            false,
            &self.provenance(),
        )?;
        let paths = FixturePaths {
            manifest: dir.join(MANIFEST_FILE),
            queries: dir.join(QUERIES_FILE),
            ground_truth: dir.join(GROUND_TRUTH_FILE),
            labels: dir.join(LABELS_FILE),
        };
        write_embeddings_file(&self.queries, &paths.queries)?;
        write_embeddings_file(&self.ground_truth, &paths.ground_truth)?;
        let mut labels = serde_json::to_string_pretty(&Labels {
            spec: &self.spec,
            query_clusters: &self.query_clusters,
        })?;
        labels.push('\n');
        std::fs::write(&paths.labels, labels)?;
        Ok(paths)
    }

    /// Share of queries whose nearest corpus row belongs to the query's cluster.
    pub fn neighborhood_fidelity(&self, index: &CorpusIndex) -> Result<f64> {
        let hits = index.search_batch(&self.queries, 1)?;
        let own = hits
            .iter()
            .zip(&self.query_clusters)
            .filter(|(r, &c)| self.prompt_clusters[r.neighbors[0].row] == c)
            .count();
        Ok(own as f64 / self.queries.rows() as f64)
    }
}

/// `n` seeded random unit vectors: an uninformative caption stand-in.
pub fn random_unit_rows(n: usize, dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        data.extend(unit(gaussian(&mut rng, dim)).into_iter().map(|v| v as f32));
    }
    EmbeddingMatrix::new(n, dim, data)
}

/// Captions that point at the ground truth up to Gaussian noise of
/// per-component scale `noise_sigma`, renormalized.
pub fn noisy_captions(ground_truth: &EmbeddingMatrix, noise_sigma: f64, seed: u64) -> Result<EmbeddingMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(ground_truth.rows());
    for row in ground_truth.iter_rows() {
        let v: Vec<f64> = row
            .iter()
            .map(|&x| x as f64 + noise_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        rows.push(EmbeddingVector::from_f64(&unit(v))?);
    }
    EmbeddingMatrix::from_vectors(ground_truth.dim(), &rows)
}
