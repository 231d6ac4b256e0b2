//! Offline corpus construction: cleaning, vocabulary filtering and
//! near-duplicate removal, then an aligned write of the surviving rows.
//!
//! Stages run in the order clean → vocabulary → dedup. Every stage keeps the
//! relative order of the rows it lets through.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embedding::{clamp_unit, dot, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::store::{self, CorpusManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabMode {
    Off,
    ExactMatch,
    EmbeddingSimilarity,
}

impl VocabMode {
    fn name(self) -> &'static str {
        match self {
            VocabMode::Off => "off",
            VocabMode::ExactMatch => "exact_match",
            VocabMode::EmbeddingSimilarity => "embedding_similarity",
        }
    }
}

impl std::str::FromStr for VocabMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(VocabMode::Off),
            "exact_match" | "exact-match" => Ok(VocabMode::ExactMatch),
            "embedding_similarity" | "embedding-similarity" => Ok(VocabMode::EmbeddingSimilarity),
            other => Err(Error::InvalidArgument(format!("unknown vocabulary mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Rows whose cosine to an earlier kept row reaches this are dropped.
    pub dedup_threshold: f64,
    /// Terms whose best vocabulary cosine falls below this are dropped.
    pub vocab_threshold: f64,
    pub vocab_mode: VocabMode,
    pub min_prompt_chars: usize,
    /// Minimum share of alphabetic characters that must be ASCII letters.
    pub min_ascii_alpha_ratio: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            dedup_threshold: 0.9,
            vocab_threshold: 0.6,
            vocab_mode: VocabMode::Off,
            min_prompt_chars: 1,
            min_ascii_alpha_ratio: 0.9,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dedup_threshold", self.dedup_threshold),
            ("vocab_threshold", self.vocab_threshold),
            ("min_ascii_alpha_ratio", self.min_ascii_alpha_ratio),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// A raw input prompt. `row` is its position in the raw input, which is also
/// its row in the raw embedding matrices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPrompt {
    pub row: usize,
    pub id: i64,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub clean_ms: f64,
    pub vocab_ms: f64,
    pub dedup_ms: f64,
    pub write_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub input_count: usize,
    pub kept_count: usize,
    pub dropped_dedup: usize,
    pub dropped_vocab: usize,
    pub dropped_malformed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

impl BuildReport {
    pub fn is_balanced(&self) -> bool {
        self.input_count == self.kept_count + self.dropped_dedup + self.dropped_vocab + self.dropped_malformed
    }
}

/// Reads raw prompts leniently: unparseable lines become `None` so they can be
/// counted without breaking row alignment with the embedding files.
pub fn read_raw_prompts(path: impl AsRef<Path>) -> Result<Vec<Option<RawPrompt>>> {
    #[derive(Deserialize)]
    struct Line {
        id: i64,
        prompt: String,
    }
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (row, line) in reader.lines().enumerate() {
        let line = line?;
        match serde_json::from_str::<Line>(&line) {
            Ok(l) => out.push(Some(RawPrompt {
                row,
                id: l.id,
                text: l.prompt,
            })),
            Err(e) => {
                log::debug!("{}:{}: skipping malformed line: {e}", path.display(), row + 1);
                out.push(None);
            }
        }
    }
    Ok(out)
}

fn passes_cleaning(text: &str, cfg: &FilterConfig) -> bool {
    let t = text.trim();
    if t.is_empty() || t.chars().count() < cfg.min_prompt_chars {
        return false;
    }
    if t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("null") {
        return false;
    }
    let (alpha, ascii) = t
        .chars()
        .filter(|c| c.is_alphabetic())
        .fold((0usize, 0usize), |(a, s), c| {
            (a + 1, s + c.is_ascii_alphabetic() as usize)
        });
    alpha > 0 && ascii as f64 >= cfg.min_ascii_alpha_ratio * alpha as f64
}

/// Drops empty, `NaN`/`null` and mostly non-ASCII-letter prompts.
/// Returns survivors in input order and the number dropped.
pub fn clean_prompts<I>(raw: I, cfg: &FilterConfig) -> (Vec<RawPrompt>, usize)
where
    I: IntoIterator<Item = RawPrompt>,
{
    let mut dropped = 0;
    let kept = raw
        .into_iter()
        .filter(|p| {
            let ok = passes_cleaning(&p.text, cfg);
            dropped += !ok as usize;
            ok
        })
        .collect();
    (kept, dropped)
}

/// Reference vocabulary for the term filter.
#[derive(Debug, Clone)]
pub enum Vocabulary {
    /// Case-folded term list for exact matching.
    Terms(HashSet<String>),
    /// Per-term embeddings scored against vocabulary embeddings.
    Embeddings {
        term_rows: HashMap<String, usize>,
        terms: EmbeddingMatrix,
        vocab: EmbeddingMatrix,
    },
}

impl Vocabulary {
    pub fn from_terms<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Vocabulary::Terms(
            terms
                .into_iter()
                .map(|t| t.as_ref().trim().to_lowercase())
                .filter(|t| !t.is_empty())
                .collect(),
        )
    }

    /// Reads a plain-text vocabulary, one term per line.
    pub fn read_terms(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_terms(text.lines()))
    }

    /// `term_names[i]` is the term whose embedding is row `i` of `terms`.
    pub fn from_embeddings(term_names: &[String], terms: EmbeddingMatrix, vocab: EmbeddingMatrix) -> Result<Self> {
        if term_names.len() != terms.rows() {
            return Err(Error::RowCountMismatch {
                left: term_names.len(),
                right: terms.rows(),
            });
        }
        if terms.dim() != vocab.dim() {
            return Err(Error::DimMismatch {
                expected: vocab.dim(),
                actual: terms.dim(),
            });
        }
        let term_rows = term_names
            .iter()
            .enumerate()
            .map(|(i, t)| (t.trim().to_lowercase(), i))
            .collect();
        Ok(Vocabulary::Embeddings {
            term_rows,
            terms: terms.normalized_rows()?,
            vocab: vocab.normalized_rows()?,
        })
    }
}

struct TermJudge<'a> {
    vocab: &'a Vocabulary,
    mode: VocabMode,
    threshold: f64,
    cache: HashMap<String, bool>,
}

impl TermJudge<'_> {
    fn keep(&mut self, term: &str) -> bool {
        let key = term.to_lowercase();
        if let Some(&k) = self.cache.get(&key) {
            return k;
        }
        let keep = match (self.mode, self.vocab) {
            (VocabMode::ExactMatch, Vocabulary::Terms(set)) => set.contains(&key),
            (
                VocabMode::EmbeddingSimilarity,
                Vocabulary::Embeddings {
                    term_rows,
                    terms,
                    vocab,
                },
            ) => match term_rows.get(&key) {
                // A term without an embedding has no evidence of similarity.
                None => false,
                Some(&r) => {
                    let t = terms.row(r);
                    vocab.iter_rows().any(|v| clamp_unit(dot(t, v)) >= self.threshold)
                }
            },
            _ => unreachable!("mode and vocabulary kind checked by caller"),
        };
        self.cache.insert(key, keep);
        keep
    }
}

/// Drops out-of-vocabulary whitespace-separated terms, then drops prompts
/// left with no terms. Returns survivors and the number of prompts dropped.
pub fn vocab_filter(
    prompts: Vec<RawPrompt>,
    vocab: Option<&Vocabulary>,
    cfg: &FilterConfig,
) -> Result<(Vec<RawPrompt>, usize)> {
    let vocab = match (cfg.vocab_mode, vocab) {
        (VocabMode::Off, _) => return Ok((prompts, 0)),
        (VocabMode::ExactMatch, Some(v @ Vocabulary::Terms(_))) => v,
        (VocabMode::EmbeddingSimilarity, Some(v @ Vocabulary::Embeddings { .. })) => v,
        (mode, _) => return Err(Error::MissingVocabulary(mode.name())),
    };
    let mut judge = TermJudge {
        vocab,
        mode: cfg.vocab_mode,
        threshold: cfg.vocab_threshold,
        cache: HashMap::new(),
    };
    let before = prompts.len();
    let kept: Vec<RawPrompt> = prompts
        .into_iter()
        .filter_map(|mut p| {
            let terms: Vec<&str> = p.text.split_whitespace().filter(|t| judge.keep(t)).collect();
            if terms.is_empty() {
                return None;
            }
            p.text = terms.join(" ");
            Some(p)
        })
        .collect();
    let dropped = before - kept.len();
    Ok((kept, dropped))
}

/// Greedy near-duplicate removal in row order: a row is kept iff its cosine
/// to every previously kept row is below `threshold`. Returns kept rows,
/// ascending.
pub fn dedup_by_similarity(embeddings: &EmbeddingMatrix, threshold: f64) -> Result<Vec<usize>> {
    dedup_by_similarity_with(embeddings, threshold, Execution::default())
}

pub fn dedup_by_similarity_with(embeddings: &EmbeddingMatrix, threshold: f64, exec: Execution) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "dedup threshold must be in [0, 1], got {threshold}"
        )));
    }
    let unit = embeddings.normalized_rows()?;
    let dim = unit.dim();
    let mut kept = Vec::new();
    let mut kept_data: Vec<f32> = Vec::new();
    for (i, row) in unit.iter_rows().enumerate() {
        let kept_rows = &kept_data;
        let duplicate = exec.any_in_range(kept.len(), |j| {
            clamp_unit(dot(row, &kept_rows[j * dim..(j + 1) * dim])) >= threshold
        });
        if !duplicate {
            kept.push(i);
            kept_data.extend_from_slice(row);
        }
    }
    Ok(kept)
}

/// Result of running every filter stage, before anything is written.
#[derive(Debug, Clone)]
pub struct CorpusPlan {
    pub kept: Vec<RawPrompt>,
    pub report: BuildReport,
}

/// Runs clean → vocabulary → dedup over row-aligned raw inputs.
/// `None` entries are malformed input lines.
pub fn plan_corpus(
    raw: Vec<Option<RawPrompt>>,
    sent: &EmbeddingMatrix,
    vocab: Option<&Vocabulary>,
    cfg: &FilterConfig,
) -> Result<CorpusPlan> {
    cfg.validate()?;
    if raw.len() != sent.rows() {
        return Err(Error::RowCountMismatch {
            left: raw.len(),
            right: sent.rows(),
        });
    }
    let input_count = raw.len();
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let parsed: Vec<RawPrompt> = raw.into_iter().flatten().collect();
    let unparsed = input_count - parsed.len();
    let (cleaned, dropped_clean) = clean_prompts(parsed, cfg);
    timings.clean_ms = ms(t);

    let t = Instant::now();
    let (filtered, dropped_vocab) = vocab_filter(cleaned, vocab, cfg)?;
    timings.vocab_ms = ms(t);

    let t = Instant::now();
    let rows: Vec<usize> = filtered.iter().map(|p| p.row).collect();
    let survivors = sent.select_rows(&rows);
    let keep = dedup_by_similarity(&survivors, cfg.dedup_threshold).map_err(|e| match e {
        Error::ZeroVector { row: Some(r) } => Error::ZeroVector { row: Some(rows[r]) },
        e => e,
    })?;
    let dropped_dedup = filtered.len() - keep.len();
    let mut keep_iter = keep.into_iter().peekable();
    let kept: Vec<RawPrompt> = filtered
        .into_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            if keep_iter.peek() == Some(&i) {
                keep_iter.next();
                Some(p)
            } else {
                None
            }
        })
        .collect();
    timings.dedup_ms = ms(t);

    let report = BuildReport {
        input_count,
        kept_count: kept.len(),
        dropped_dedup,
        dropped_vocab,
        dropped_malformed: unparsed + dropped_clean,
        timings: Some(timings),
    };
    debug_assert!(report.is_balanced());
    Ok(CorpusPlan { kept, report })
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Filters the raw inputs and writes the surviving rows as a corpus in
/// `out_dir`. `out_dir` must be absent or empty. Files are staged in a
/// sibling directory and moved into place only when every write succeeded.
pub fn build_corpus(
    raw: Vec<Option<RawPrompt>>,
    clip: &EmbeddingMatrix,
    sent: &EmbeddingMatrix,
    vocab: Option<&Vocabulary>,
    cfg: &FilterConfig,
    out_dir: impl AsRef<Path>,
) -> Result<(CorpusManifest, BuildReport)> {
    let out_dir = out_dir.as_ref();
    if clip.rows() != raw.len() {
        return Err(Error::RowCountMismatch {
            left: raw.len(),
            right: clip.rows(),
        });
    }
    if out_dir.exists() && std::fs::read_dir(out_dir)?.next().is_some() {
        return Err(Error::InvalidArgument(format!(
            "output directory {} is not empty",
            out_dir.display()
        )));
    }
    let CorpusPlan { kept, mut report } = plan_corpus(raw, sent, vocab, cfg)?;

    let t = Instant::now();
    let rows: Vec<usize> = kept.iter().map(|p| p.row).collect();
    let provenance = format!(
        "promptknn build: input_count={} dedup_threshold={} vocab_mode={} vocab_threshold={}",
        report.input_count,
        cfg.dedup_threshold,
        cfg.vocab_mode.name(),
        cfg.vocab_threshold
    );
    let staging = staging_dir(out_dir);
    if staging.exists() {
        std::fs::remove_dir_all(&staging)?;
    }
    std::fs::create_dir_all(&staging)?;
    let written = store::write_corpus(
        &staging,
        &clip.select_rows(&rows),
        &sent.select_rows(&rows),
        kept.iter().map(|p| (p.id, p.text.as_str())),
        false,
        &provenance,
    )
    .and_then(|m| {
        if out_dir.exists() {
            std::fs::remove_dir(out_dir)?;
        }
        std::fs::rename(&staging, out_dir)?;
        Ok(m)
    });
    let manifest = match written {
        Ok(m) => m,
        Err(e) => {
            let _ = std::fs::remove_dir_all(&staging);
            return Err(e);
        }
    };
    if let Some(t_) = report.timings.as_mut() {
        t_.write_ms = ms(t);
    }
    Ok((manifest, report))
}

fn staging_dir(out_dir: &Path) -> PathBuf {
    let name = out_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    out_dir.with_file_name(format!(".{name}.partial"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(texts: &[&str]) -> Vec<RawPrompt> {
        texts
            .iter()
            .enumerate()
            .map(|(row, t)| RawPrompt {
                row,
                id: row as i64,
                text: t.to_string(),
            })
            .collect()
    }

    fn texts(p: &[RawPrompt]) -> Vec<&str> {
        p.iter().map(|p| p.text.as_str()).collect()
    }

    #[test]
    fn cleaning_examples() {
        let cfg = FilterConfig::default();
        let (kept, dropped) = clean_prompts(
            raw(&[
                "",
                "   ",
                "NaN",
                "nan",
                "null",
                "an astronaut standing on an engaging white rose",
                "\u{732b}\u{306e}\u{5199}\u{771f}",
                "12345",
                "caf\u{e9} at night, oil painting",
            ]),
            &cfg,
        );
        assert_eq!(
            texts(&kept),
            vec![
                "an astronaut standing on an engaging white rose",
                "caf\u{e9} at night, oil painting"
            ]
        );
        assert_eq!(dropped, 7);
        assert_eq!(kept[0].row, 5);
    }

    #[test]
    fn cleaning_ratio_and_length_configurable() {
        let cfg = FilterConfig {
            min_ascii_alpha_ratio: 0.0,
            min_prompt_chars: 4,
            ..FilterConfig::default()
        };
        let (kept, _) = clean_prompts(raw(&["abc", "\u{732b}\u{306e}\u{5199}\u{771f}"]), &cfg);
        assert_eq!(texts(&kept), vec!["\u{732b}\u{306e}\u{5199}\u{771f}"]);
    }

    #[test]
    fn vocab_off_is_identity() {
        let input = raw(&["cat xqzt dog", "anything"]);
        let (out, dropped) = vocab_filter(input.clone(), None, &FilterConfig::default()).unwrap();
        assert_eq!(out, input);
        assert_eq!(dropped, 0);
    }

    #[test]
    fn vocab_exact_match() {
        let cfg = FilterConfig {
            vocab_mode: VocabMode::ExactMatch,
            ..FilterConfig::default()
        };
        let vocab = Vocabulary::from_terms(["cat", "Dog"]);
        let (out, dropped) = vocab_filter(raw(&["cat xqzt dog", "xqzt", "CAT"]), Some(&vocab), &cfg).unwrap();
        assert_eq!(texts(&out), vec!["cat dog", "CAT"]);
        assert_eq!(dropped, 1);
        assert_eq!(out[1].row, 2);
    }

    #[test]
    fn vocab_missing_inputs() {
        let cfg = FilterConfig {
            vocab_mode: VocabMode::ExactMatch,
            ..FilterConfig::default()
        };
        assert!(matches!(
            vocab_filter(raw(&["a"]), None, &cfg),
            Err(Error::MissingVocabulary("exact_match"))
        ));
        let cfg = FilterConfig {
            vocab_mode: VocabMode::EmbeddingSimilarity,
            ..FilterConfig::default()
        };
        let terms = Vocabulary::from_terms(["a"]);
        assert!(matches!(
            vocab_filter(raw(&["a"]), Some(&terms), &cfg),
            Err(Error::MissingVocabulary("embedding_similarity"))
        ));
    }

    #[test]
    fn vocab_embedding_similarity() {
        let cfg = FilterConfig {
            vocab_mode: VocabMode::EmbeddingSimilarity,
            ..FilterConfig::default()
        };
        let names: Vec<String> = ["cat", "blorp", "kitten"].iter().map(|s| s.to_string()).collect();
        // cat is a vocabulary row, blorp is orthogonal, kitten sits at cos 0.8.
        let terms = EmbeddingMatrix::from_rows(2, &[[1.0f32, 0.0], [0.0, 1.0], [0.8, 0.6]]).unwrap();
        let vocab_rows = EmbeddingMatrix::from_rows(2, &[[1.0f32, 0.0]]).unwrap();
        let vocab = Vocabulary::from_embeddings(&names, terms, vocab_rows).unwrap();
        let (out, dropped) = vocab_filter(raw(&["cat blorp kitten unknown", "blorp"]), Some(&vocab), &cfg).unwrap();
        assert_eq!(texts(&out), vec!["cat kitten"]);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn dedup_exact_duplicate() {
        let m = EmbeddingMatrix::from_rows(3, &[[1.0f32, 2.0, 3.0], [1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(dedup_by_similarity(&m, 0.9).unwrap(), vec![0]);
    }

    #[test]
    fn dedup_orthogonal_keeps_all() {
        let n = 12;
        let data: Vec<f32> = (0..n * n).map(|i| if i / n == i % n { 1.0 } else { 0.0 }).collect();
        let m = EmbeddingMatrix::new(n, n, data).unwrap();
        assert_eq!(dedup_by_similarity(&m, 0.9).unwrap(), (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn dedup_is_greedy_in_order() {
        // Row 1 is close to rows 0 and 2, which are far from each other.
        let a = 0.0f64;
        let b = 20f64.to_radians();
        let c = 40f64.to_radians();
        let rows = [a, b, c].map(|t| [t.cos() as f32, t.sin() as f32]);
        let m = EmbeddingMatrix::from_rows(2, &rows).unwrap();
        let thr = 30f64.to_radians().cos();
        assert_eq!(dedup_by_similarity(&m, thr).unwrap(), vec![0, 2]);
    }

    #[test]
    fn dedup_zero_row() {
        let m = EmbeddingMatrix::from_rows(2, &[[1.0f32, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(
            dedup_by_similarity(&m, 0.9),
            Err(Error::ZeroVector { row: Some(1) })
        ));
        assert!(dedup_by_similarity(&m, 1.5).is_err());
    }

    fn basis(n: usize, dim: usize) -> EmbeddingMatrix {
        let data = (0..n * dim)
            .map(|i| if i / dim == i % dim { 1.0 } else { 0.0 })
            .collect();
        EmbeddingMatrix::new(n, dim, data).unwrap()
    }

    #[test]
    fn build_without_drops() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("corpus");
        let m = basis(5, 5);
        let input: Vec<Option<RawPrompt>> = raw(&["a red fox", "blue sky", "green hill", "old car", "tall tree"])
            .into_iter()
            .map(Some)
            .collect();
        let (manifest, report) = build_corpus(input, &m, &m, None, &FilterConfig::default(), &out).unwrap();
        assert_eq!(manifest.count, 5);
        assert_eq!(
            (report.dropped_dedup, report.dropped_vocab, report.dropped_malformed),
            (0, 0, 0)
        );
        let bundle = store::load_corpus(out.join(store::MANIFEST_FILE)).unwrap();
        assert_eq!(bundle.len(), 5);
        assert!(!dir.path().join(".corpus.partial").exists());
    }

    #[test]
    fn build_with_duplicate_and_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("corpus");
        let mut rows: Vec<Vec<f32>> = (0..4).map(|i| basis(4, 4).row(i).to_vec()).collect();
        rows.push(rows[2].clone());
        rows.push(vec![0.0, 0.0, 0.0, 1.0]);
        let m = EmbeddingMatrix::from_rows(4, &rows).unwrap();
        let mut input: Vec<Option<RawPrompt>> = raw(&["a", "b", "c", "d", "c again", "x"])
            .into_iter()
            .map(Some)
            .collect();
        input[5] = None;
        let (manifest, report) = build_corpus(input, &m, &m, None, &FilterConfig::default(), &out).unwrap();
        assert_eq!(report.input_count, 6);
        assert_eq!(report.kept_count, 4);
        assert_eq!(report.dropped_dedup, 1);
        assert_eq!(report.dropped_malformed, 1);
        assert!(report.is_balanced());
        let bundle = store::load_corpus(out.join(store::MANIFEST_FILE)).unwrap();
        assert_eq!(manifest.count, 4);
        assert_eq!(
            bundle.prompts.iter().map(|p| p.id).collect::<Vec<_>>(),
            vec![0, 1, 2, 3]
        );
    }

    #[test]
    fn build_rejects_non_empty_output_and_leaves_nothing_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("corpus");
        std::fs::create_dir(&out).unwrap();
        std::fs::write(out.join("keep.txt"), "x").unwrap();
        let m = basis(1, 2);
        let r = build_corpus(
            raw(&["a"]).into_iter().map(Some).collect(),
            &m,
            &m,
            None,
            &FilterConfig::default(),
            &out,
        );
        assert!(r.is_err());
        assert!(out.join("keep.txt").exists());

        let out2 = dir.path().join("corpus2");
        let zero = EmbeddingMatrix::new(1, 2, vec![0.0, 0.0]).unwrap();
        let r = build_corpus(
            raw(&["a"]).into_iter().map(Some).collect(),
            &m,
            &zero,
            None,
            &FilterConfig::default(),
            &out2,
        );
        assert!(matches!(r, Err(Error::ZeroVector { row: Some(0) })));
        assert!(!out2.exists());
        assert!(!dir.path().join(".corpus2.partial").exists());
    }

    #[test]
    fn report_serializes_without_timings_when_stripped() {
        let r = BuildReport {
            input_count: 3,
            kept_count: 3,
            ..BuildReport::default()
        };
        let s = serde_json::to_string(&r).unwrap();
        assert!(!s.contains("timings"));
    }
}
