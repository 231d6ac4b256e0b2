//! On-disk corpus: embedding matrices, prompt lines and the manifest binding them.
//!
//! Embedding files are a fixed 36 byte header followed by row-major
//! little-endian `f32` values:
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 8    | magic `PKNNEMB1`               |
//! | 8      | 4    | dim, `u32` LE                  |
//! | 12     | 8    | rows, `u64` LE                 |
//! | 20     | 1    | dtype code (1 = `f32` LE)      |
//! | 21     | 15   | reserved, zero                 |

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PKNNEMB1";
pub const HEADER_LEN: usize = 36;
pub const DTYPE_F32_LE: u8 = 1;
pub const DEFAULT_MAX_PAYLOAD_BYTES: u64 = 8 << 30;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub const CLIP_FILE: &str = "clip.emb";
pub const SENT_FILE: &str = "sent.emb";
pub const PROMPTS_FILE: &str = "prompts.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingFileHeader {
    pub dim: u32,
    pub rows: u64,
    pub dtype_code: u8,
}

impl EmbeddingFileHeader {
    pub fn for_matrix(m: &EmbeddingMatrix) -> Self {
        Self {
            dim: m.dim() as u32,
            rows: m.rows() as u64,
            dtype_code: DTYPE_F32_LE,
        }
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut buf = [0u8; HEADER_LEN];
        buf[0..8].copy_from_slice(MAGIC);
        buf[8..12].copy_from_slice(&self.dim.to_le_bytes());
        buf[12..20].copy_from_slice(&self.rows.to_le_bytes());
        buf[20] = self.dtype_code;
        buf
    }

    /// Parses and validates a header. `path` is used for error messages only.
    pub fn decode(buf: &[u8; HEADER_LEN], path: &Path) -> Result<Self> {
        if &buf[0..8] != MAGIC {
            return Err(Error::BadMagic { path: path.into() });
        }
        let dtype_code = buf[20];
        if dtype_code != DTYPE_F32_LE {
            return Err(Error::BadDtype {
                path: path.into(),
                code: dtype_code,
            });
        }
        if buf[21..].iter().any(|&b| b != 0) {
            return Err(Error::BadReserved { path: path.into() });
        }
        let dim = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        let rows = u64::from_le_bytes(buf[12..20].try_into().unwrap());
        if dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "{}: header declares dim 0",
                path.display()
            )));
        }
        Ok(Self { dim, rows, dtype_code })
    }

    /// Payload size in bytes, or `None` on overflow.
    pub fn payload_len(&self) -> Option<u64> {
        self.rows.checked_mul(self.dim as u64)?.checked_mul(4)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReadOptions {
    /// Largest payload a header may promise before the file is rejected.
    pub max_payload_bytes: u64,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self {
            max_payload_bytes: DEFAULT_MAX_PAYLOAD_BYTES,
        }
    }
}

/// Writes header and payload. Returns the number of bytes written.
pub fn write_embeddings<W: Write>(m: &EmbeddingMatrix, mut out: W) -> std::io::Result<u64> {
    out.write_all(&EmbeddingFileHeader::for_matrix(m).encode())?;
    for v in m.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(HEADER_LEN as u64 + m.as_slice().len() as u64 * 4)
}

pub fn write_embeddings_file(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<u64> {
    let file = File::create(path.as_ref())?;
    Ok(write_embeddings(m, BufWriter::new(file))?)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    read_embeddings_with(path, &ReadOptions::default())
}

pub fn read_embeddings_with(path: impl AsRef<Path>, opts: &ReadOptions) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let actual_len = file.metadata()?.len();
    read_embeddings_from(BufReader::new(file), actual_len, path, opts)
}

/// Decodes an in-memory embedding file.
pub fn decode_embeddings(bytes: &[u8], opts: &ReadOptions) -> Result<EmbeddingMatrix> {
    read_embeddings_from(bytes, bytes.len() as u64, Path::new("<memory>"), opts)
}

fn read_embeddings_from<R: Read>(
    mut src: R,
    actual_len: u64,
    path: &Path,
    opts: &ReadOptions,
) -> Result<EmbeddingMatrix> {
    if actual_len < HEADER_LEN as u64 {
        return Err(Error::TruncatedFile {
            path: path.into(),
            expected: HEADER_LEN as u64,
            actual: actual_len,
        });
    }
    let mut hbuf = [0u8; HEADER_LEN];
    src.read_exact(&mut hbuf)?;
    let header = EmbeddingFileHeader::decode(&hbuf, path)?;

    let payload = header.payload_len().unwrap_or(u64::MAX);
    if payload > opts.max_payload_bytes {
        return Err(Error::HeaderTooLarge {
            path: path.into(),
            requested: payload,
            cap: opts.max_payload_bytes,
        });
    }
    let expected = HEADER_LEN as u64 + payload;
    if actual_len != expected {
        return Err(Error::TruncatedFile {
            path: path.into(),
            expected,
            actual: actual_len,
        });
    }

    let mut raw = vec![0u8; payload as usize];
    src.read_exact(&mut raw)?;
    let dim = header.dim as usize;
    let mut data = Vec::with_capacity(raw.len() / 4);
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinitePayload {
                path: path.into(),
                row: i / dim,
                col: i % dim,
            });
        }
        data.push(v);
    }
    EmbeddingMatrix::new(header.rows as usize, dim, data)
}

/// Reads only the header, after checking the file length agrees with it.
pub fn read_header(path: impl AsRef<Path>) -> Result<EmbeddingFileHeader> {
    let path = path.as_ref();
    let mut file = File::open(path)?;
    let actual = file.metadata()?.len();
    if actual < HEADER_LEN as u64 {
        return Err(Error::TruncatedFile {
            path: path.into(),
            expected: HEADER_LEN as u64,
            actual,
        });
    }
    let mut hbuf = [0u8; HEADER_LEN];
    file.read_exact(&mut hbuf)?;
    EmbeddingFileHeader::decode(&hbuf, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub clip_embeddings: String,
    pub sent_embeddings: String,
    pub prompts: String,
    pub clip_dim: usize,
    pub sent_dim: usize,
    pub count: usize,
    pub normalized: bool,
    pub provenance: String,
}

impl CorpusManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let manifest: CorpusManifest = serde_json::from_str(&text).map_err(|e| Error::BadManifest {
            path: path.into(),
            message: e.to_string(),
        })?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::BadManifest {
                path: path.into(),
                message: format!("unsupported schema_version {}", manifest.schema_version),
            });
        }
        Ok(manifest)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// One corpus prompt. Its embeddings live at the same row of the matrix files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRecord {
    pub row: usize,
    pub id: i64,
    pub prompt: String,
}

#[derive(Serialize, Deserialize)]
struct PromptLine<'a> {
    id: i64,
    #[serde(borrow)]
    prompt: std::borrow::Cow<'a, str>,
}

/// Reads a prompts JSON-Lines file. Every line must be an object with an
/// integer `id` and a non-blank `prompt`; other fields are ignored.
pub fn read_prompts(path: impl AsRef<Path>) -> Result<Vec<PromptRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let malformed = |message: String| Error::MalformedJsonLine {
            path: path.into(),
            line: i + 1,
            message,
        };
        if line.trim().is_empty() {
            return Err(malformed("blank line".into()));
        }
        let parsed: PromptLine = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if parsed.prompt.trim().is_empty() {
            return Err(malformed("empty prompt".into()));
        }
        out.push(PromptRecord {
            row: i,
            id: parsed.id,
            prompt: parsed.prompt.into_owned(),
        });
    }
    Ok(out)
}

pub fn write_prompts<'a, I>(path: impl AsRef<Path>, prompts: I) -> Result<()>
where
    I: IntoIterator<Item = (i64, &'a str)>,
{
    let mut out = BufWriter::new(File::create(path)?);
    for (id, prompt) in prompts {
        let line = PromptLine {
            id,
            prompt: prompt.into(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Everything a manifest points at, loaded and cross-checked.
#[derive(Debug, Clone)]
pub struct CorpusBundle {
    pub manifest: CorpusManifest,
    pub clip: EmbeddingMatrix,
    pub sent: EmbeddingMatrix,
    pub prompts: Vec<PromptRecord>,
}

impl CorpusBundle {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

fn resolve(manifest_path: &Path, rel: &str) -> PathBuf {
    manifest_path.parent().unwrap_or_else(|| Path::new(".")).join(rel)
}

pub fn load_corpus(manifest_path: impl AsRef<Path>) -> Result<CorpusBundle> {
    load_corpus_with(manifest_path, &ReadOptions::default())
}

pub fn load_corpus_with(manifest_path: impl AsRef<Path>, opts: &ReadOptions) -> Result<CorpusBundle> {
    let manifest_path = manifest_path.as_ref();
    let manifest = CorpusManifest::read(manifest_path)?;

    let clip_path = resolve(manifest_path, &manifest.clip_embeddings);
    let sent_path = resolve(manifest_path, &manifest.sent_embeddings);
    let prompts_path = resolve(manifest_path, &manifest.prompts);

    // Headers first so a count or dim disagreement never costs a payload read.
    for (path, dim) in [(&clip_path, manifest.clip_dim), (&sent_path, manifest.sent_dim)] {
        let h = read_header(path)?;
        if h.rows != manifest.count as u64 {
            return Err(Error::CountMismatch {
                path: path.clone(),
                expected: manifest.count,
                actual: h.rows as usize,
            });
        }
        if h.dim as usize != dim {
            return Err(Error::FileDimMismatch {
                path: path.clone(),
                expected: dim,
                actual: h.dim as usize,
            });
        }
    }

    let prompts = read_prompts(&prompts_path)?;
    if prompts.len() != manifest.count {
        return Err(Error::CountMismatch {
            path: prompts_path,
            expected: manifest.count,
            actual: prompts.len(),
        });
    }
    let clip = read_embeddings_with(&clip_path, opts)?;
    let sent = read_embeddings_with(&sent_path, opts)?;

    Ok(CorpusBundle {
        manifest,
        clip,
        sent,
        prompts,
    })
}

/// Writes the three data files and the manifest into `dir` using the
/// default file names. Returns the manifest that was written.
pub fn write_corpus<'a, I>(
    dir: impl AsRef<Path>,
    clip: &EmbeddingMatrix,
    sent: &EmbeddingMatrix,
    prompts: I,
    normalized: bool,
    provenance: &str,
) -> Result<CorpusManifest>
where
    I: IntoIterator<Item = (i64, &'a str)>,
{
    let dir = dir.as_ref();
    if clip.rows() != sent.rows() {
        return Err(Error::RowCountMismatch {
            left: clip.rows(),
            right: sent.rows(),
        });
    }
    let prompts: Vec<(i64, &str)> = prompts.into_iter().collect();
    if prompts.len() != clip.rows() {
        return Err(Error::RowCountMismatch {
            left: clip.rows(),
            right: prompts.len(),
        });
    }
    write_embeddings_file(clip, dir.join(CLIP_FILE))?;
    write_embeddings_file(sent, dir.join(SENT_FILE))?;
    write_prompts(dir.join(PROMPTS_FILE), prompts.iter().copied())?;
    let manifest = CorpusManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        clip_embeddings: CLIP_FILE.into(),
        sent_embeddings: SENT_FILE.into(),
        prompts: PROMPTS_FILE.into(),
        clip_dim: clip.dim(),
        sent_dim: sent.dim(),
        count: clip.rows(),
        normalized,
        provenance: provenance.into(),
    };
    manifest.write(dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
