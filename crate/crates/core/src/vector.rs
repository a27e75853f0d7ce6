//! Segment embeddings in a flat, memory-mappable store with optional 8-bit
//! scalar quantization.
//!
//! Layout under `<index>/vec/`:
//!
//! * `meta`  – magic, version, dim, row count, metric, quantization flag and
//!   the per-dimension `lo`/`hi` bounds when quantized,
//! * `codes` – row-major values with no header: `dim` bytes per row when
//!   quantized, `4 * dim` little-endian `f32` bytes otherwise,
//! * `idmap` – `(doc_id, seg_index)` per row.

use std::cmp::Ordering;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, Embedder};
use crate::binio::{read_header, read_str, write_header, write_str};
use crate::segment::Segment;

pub const VEC_DIR: &str = "vec";
const FORMAT_VERSION: u32 = 1;
const META_MAGIC: &[u8; 4] = b"CQVM";
const IDMAP_MAGIC: &[u8; 4] = b"CQVI";
const METRIC_DOT: u8 = 0;

#[derive(Debug, thiserror::Error)]
pub enum VectorError {
    #[error("embedding dimension {got} does not match index dimension {expected} (segment {doc_id}#{seg_index})")]
    DimMismatch {
        expected: usize,
        got: usize,
        doc_id: String,
        seg_index: u32,
    },
    #[error("query dimension {got} does not match index dimension {expected}")]
    QueryDim { expected: usize, got: usize },
    #[error("non-finite value at dimension {0}")]
    NonFinite(usize),
    #[error("quantization params cover {params} dimensions, vector has {vector}")]
    ParamsDim { params: usize, vector: usize },
    #[error("cannot build a vector index with no rows")]
    Empty,
    #[error("embedding segment {doc_id}#{seg_index}: {source}")]
    Embed {
        doc_id: String,
        seg_index: u32,
        #[source]
        source: BackendError,
    },
    #[error("vector index io at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("corrupt vector index: {0}")]
    Corrupt(String),
}

/// Dense 32-bit embedding. All values are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self, VectorError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Dot product accumulated in `f64`, dimension by dimension.
    pub fn dot(&self, other: &[f32]) -> f64 {
        self.0
            .iter()
            .zip(other)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }
}

impl TryFrom<Vec<f32>> for Embedding {
    type Error = VectorError;

    fn try_from(v: Vec<f32>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<Embedding> for Vec<f32> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

/// Per-dimension affine bounds for 8-bit codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationParams {
    pub lo: Vec<f32>,
    pub hi: Vec<f32>,
}

impl QuantizationParams {
    /// Min/max over all rows, per dimension.
    pub fn fit<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f32]>) -> Self {
        let mut lo = vec![f32::INFINITY; dim];
        let mut hi = vec![f32::NEG_INFINITY; dim];
        let mut any = false;
        for row in rows {
            any = true;
            for (i, &v) in row.iter().enumerate() {
                lo[i] = lo[i].min(v);
                hi[i] = hi[i].max(v);
            }
        }
        if !any {
            lo.fill(0.0);
            hi.fill(0.0);
        }
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Width of one code step in dimension `i`.
    pub fn step(&self, i: usize) -> f64 {
        (self.hi[i] as f64 - self.lo[i] as f64) / 255.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedVector(pub Vec<u8>);

/// `code = clamp(round((v - lo) / (hi - lo) · 255), 0, 255)`, rounding half
/// away from zero; a degenerate dimension (`hi == lo`) encodes as 0.
pub fn quantize_vector(v: &[f32], p: &QuantizationParams) -> Result<QuantizedVector, VectorError> {
    if p.dim() < v.len() {
        return Err(VectorError::ParamsDim {
            params: p.dim(),
            vector: v.len(),
        });
    }
    let mut codes = Vec::with_capacity(v.len());
    for (i, &x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(VectorError::NonFinite(i));
        }
        codes.push(quantize_scalar(x, p.lo[i], p.hi[i]));
    }
    Ok(QuantizedVector(codes))
}

fn quantize_scalar(x: f32, lo: f32, hi: f32) -> u8 {
    let (x, lo, hi) = (x as f64, lo as f64, hi as f64);
    if hi <= lo {
        return 0;
    }
    ((x - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn dequantize_vector(q: &QuantizedVector, p: &QuantizationParams) -> Vec<f32> {
    q.0.iter()
        .enumerate()
        .map(|(i, &c)| (p.lo[i] as f64 + c as f64 * p.step(i)) as f32)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticHit {
    pub doc_id: String,
    pub seg_index: u32,
    pub raw_score: f64,
}

/// One row handed to [`VectorIndex::build`].
#[derive(Debug, Clone)]
pub struct VectorRow {
    pub doc_id: String,
    pub seg_index: u32,
    pub embedding: Embedding,
}

enum Storage {
    #[cfg(not(target_arch = "wasm32"))]
    Mapped(memmap2::Mmap),
    Owned(Vec<u8>),
}

impl Storage {
    fn bytes(&self) -> &[u8] {
        match self {
            #[cfg(not(target_arch = "wasm32"))]
            Storage::Mapped(m) => m,
            Storage::Owned(v) => v,
        }
    }
}

impl std::fmt::Debug for Storage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            #[cfg(not(target_arch = "wasm32"))]
            Storage::Mapped(m) => write!(f, "Mapped({} bytes)", m.len()),
            Storage::Owned(v) => write!(f, "Owned({} bytes)", v.len()),
        }
    }
}

/// Exhaustive dot-product index over segment rows.
///
/// Queries stay in full precision; quantized rows are compared through
/// their dequantized values.
#[derive(Debug)]
pub struct VectorIndex {
    dim: usize,
    quantization: Option<QuantizationParams>,
    ids: Vec<(String, u32)>,
    store: Storage,
}

impl VectorIndex {
    /// Builds an in-memory index. Rows keep their input order.
    pub fn build(rows: Vec<VectorRow>, quantize: bool) -> Result<Self, VectorError> {
        let Some(first) = rows.first() else {
            return Err(VectorError::Empty);
        };
        let dim = first.embedding.dim();
        for r in &rows {
            if r.embedding.dim() != dim {
                return Err(VectorError::DimMismatch {
                    expected: dim,
                    got: r.embedding.dim(),
                    doc_id: r.doc_id.clone(),
                    seg_index: r.seg_index,
                });
            }
        }
        let quantization =
            quantize.then(|| QuantizationParams::fit(dim, rows.iter().map(|r| r.embedding.values())));
        let row_bytes = if quantize { dim } else { 4 * dim };
        let mut codes = Vec::with_capacity(rows.len() * row_bytes);
        for r in &rows {
            match &quantization {
                Some(p) => codes.extend(quantize_vector(r.embedding.values(), p)?.0),
                None => {
                    for v in r.embedding.values() {
                        codes.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        let ids = rows.into_iter().map(|r| (r.doc_id, r.seg_index)).collect();
        Ok(Self {
            dim,
            quantization,
            ids,
            store: Storage::Owned(codes),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn quantization(&self) -> Option<&QuantizationParams> {
        self.quantization.as_ref()
    }

    /// Size of the stored value region in bytes.
    pub fn value_region_bytes(&self) -> usize {
        self.store.bytes().len()
    }

    /// True when the value region is served from a file mapping rather
    /// than process memory.
    pub fn is_memory_mapped(&self) -> bool {
        match self.store {
            #[cfg(not(target_arch = "wasm32"))]
            Storage::Mapped(_) => true,
            Storage::Owned(_) => false,
        }
    }

    pub fn row_id(&self, row: usize) -> (&str, u32) {
        let (d, s) = &self.ids[row];
        (d, *s)
    }

    /// The stored (dequantized when applicable) vector of one row.
    pub fn row_vector(&self, row: usize) -> Vec<f32> {
        let bytes = self.store.bytes();
        match &self.quantization {
            Some(p) => {
                let codes = &bytes[row * self.dim..(row + 1) * self.dim];
                dequantize_vector(&QuantizedVector(codes.to_vec()), p)
            }
            None => bytes[row * 4 * self.dim..(row + 1) * 4 * self.dim]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        }
    }

    fn scores(&self, query: &[f32]) -> Vec<f64> {
        let bytes = self.store.bytes();
        match &self.quantization {
            Some(p) => {
                // q·(lo + c·step) = q·lo + Σ (q_i·step_i)·c_i
                let base: f64 = query
                    .iter()
                    .zip(&p.lo)
                    .map(|(&q, &lo)| q as f64 * lo as f64)
                    .sum();
                let weights: Vec<f64> = query
                    .iter()
                    .enumerate()
                    .map(|(i, &q)| q as f64 * p.step(i))
                    .collect();
                bytes
                    .chunks_exact(self.dim)
                    .map(|row| {
                        base + row
                            .iter()
                            .zip(&weights)
                            .map(|(&c, &w)| c as f64 * w)
                            .sum::<f64>()
                    })
                    .collect()
            }
            None => bytes
                .chunks_exact(4 * self.dim)
                .map(|row| {
                    row.chunks_exact(4)
                        .zip(query)
                        .map(|(c, &q)| {
                            q as f64 * f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64
                        })
                        .sum()
                })
                .collect(),
        }
    }

    fn hit_order(&self, a: &(f64, usize), b: &(f64, usize)) -> Ordering {
        b.0.total_cmp(&a.0)
            .then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
    }

    /// Top `k` rows by dot product with `query`; ties by `(doc_id, seg_index)`.
    pub fn search(&self, query: &Embedding, k: usize) -> Result<Vec<SemanticHit>, VectorError> {
        if query.dim() != self.dim {
            return Err(VectorError::QueryDim {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let mut scored: Vec<(f64, usize)> = self
            .scores(query.values())
            .into_iter()
            .enumerate()
            .map(|(row, s)| (s, row))
            .collect();
        let k = k.min(scored.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, |a, b| self.hit_order(a, b));
            scored.truncate(k);
        }
        scored.sort_by(|a, b| self.hit_order(a, b));
        Ok(scored
            .into_iter()
            .map(|(raw_score, row)| {
                let (doc_id, seg_index) = &self.ids[row];
                SemanticHit {
                    doc_id: doc_id.clone(),
                    seg_index: *seg_index,
                    raw_score,
                }
            })
            .collect())
    }

    /// Writes `meta`, `codes` and `idmap` under `dir/vec/`.
    pub fn write(&self, dir: &Path) -> Result<(), VectorError> {
        let vec_dir = dir.join(VEC_DIR);
        fs::create_dir_all(&vec_dir).map_err(io_at(&vec_dir))?;

        let meta = vec_dir.join("meta");
        write_with(&meta, |w| {
            write_header(w, META_MAGIC, FORMAT_VERSION)?;
            w.write_u32::<LittleEndian>(self.dim as u32)?;
            w.write_u64::<LittleEndian>(self.ids.len() as u64)?;
            w.write_u8(METRIC_DOT)?;
            match &self.quantization {
                Some(p) => {
                    w.write_u8(1)?;
                    for &v in p.lo.iter().chain(&p.hi) {
                        w.write_f32::<LittleEndian>(v)?;
                    }
                }
                None => w.write_u8(0)?,
            }
            Ok(())
        })?;
        let codes = vec_dir.join("codes");
        write_with(&codes, |w| w.write_all(self.store.bytes()))?;
        let idmap = vec_dir.join("idmap");
        write_with(&idmap, |w| {
            write_header(w, IDMAP_MAGIC, FORMAT_VERSION)?;
            w.write_u64::<LittleEndian>(self.ids.len() as u64)?;
            for (doc_id, seg) in &self.ids {
                write_str(w, doc_id)?;
                w.write_u32::<LittleEndian>(*seg)?;
            }
            Ok(())
        })
    }

    /// Opens an index with the value region memory-mapped (read into memory
    /// on wasm, which has no mappings).
    pub fn open(dir: &Path) -> Result<Self, VectorError> {
        let vec_dir = dir.join(VEC_DIR);
        let meta = vec_dir.join("meta");
        let mut r = BufReader::new(File::open(&meta).map_err(io_at(&meta))?);
        let (dim, count, quantization) = (|| -> io::Result<_> {
            read_header(&mut r, META_MAGIC, FORMAT_VERSION)?;
            let dim = r.read_u32::<LittleEndian>()? as usize;
            let count = r.read_u64::<LittleEndian>()? as usize;
            let metric = r.read_u8()?;
            if metric != METRIC_DOT {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("unknown metric {metric}"),
                ));
            }
            let quantization = match r.read_u8()? {
                0 => None,
                _ => {
                    let mut read_n = || (0..dim).map(|_| r.read_f32::<LittleEndian>()).collect::<io::Result<Vec<_>>>();
                    let lo = read_n()?;
                    let hi = read_n()?;
                    Some(QuantizationParams { lo, hi })
                }
            };
            Ok((dim, count, quantization))
        })()
        .map_err(io_at(&meta))?;

        let idmap = vec_dir.join("idmap");
        let mut r = BufReader::new(File::open(&idmap).map_err(io_at(&idmap))?);
        let ids = (|| -> io::Result<Vec<(String, u32)>> {
            read_header(&mut r, IDMAP_MAGIC, FORMAT_VERSION)?;
            let n = r.read_u64::<LittleEndian>()? as usize;
            (0..n)
                .map(|_| Ok((read_str(&mut r)?, r.read_u32::<LittleEndian>()?)))
                .collect()
        })()
        .map_err(io_at(&idmap))?;

        let codes = vec_dir.join("codes");
        #[cfg(not(target_arch = "wasm32"))]
        let store = {
            let file = File::open(&codes).map_err(io_at(&codes))?;
            // SAFETY: the index directory is immutable after build; readers
            // never write through the mapping.
            Storage::Mapped(unsafe { memmap2::Mmap::map(&file) }.map_err(io_at(&codes))?)
        };
        #[cfg(target_arch = "wasm32")]
        let store = Storage::Owned(fs::read(&codes).map_err(io_at(&codes))?);
        let region = store.bytes().len();

        let row_bytes = if quantization.is_some() { dim } else { 4 * dim };
        if ids.len() != count || region != count * row_bytes || dim == 0 {
            return Err(VectorError::Corrupt(format!(
                "meta says {count} rows of dim {dim}, idmap has {} rows, codes has {} bytes",
                ids.len(),
                region
            )));
        }
        Ok(Self {
            dim,
            quantization,
            ids,
            store,
        })
    }
}

/// Embeds every segment and builds an index over them.
pub fn build_vector(
    segments: &[Segment],
    embedder: &dyn Embedder,
    quantize: bool,
) -> Result<VectorIndex, VectorError> {
    let embed_one = |s: &Segment| -> Result<VectorRow, VectorError> {
        let embedding = embedder.embed(&s.text).map_err(|source| VectorError::Embed {
            doc_id: s.doc_id.clone(),
            seg_index: s.seg_index,
            source,
        })?;
        Ok(VectorRow {
            doc_id: s.doc_id.clone(),
            seg_index: s.seg_index,
            embedding,
        })
    };
    #[cfg(feature = "parallel")]
    let rows = {
        use rayon::prelude::*;
        segments.par_iter().map(embed_one).collect::<Result<Vec<_>, _>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let rows = segments.iter().map(embed_one).collect::<Result<Vec<_>, _>>()?;
    VectorIndex::build(rows, quantize)
}

fn io_at(path: &Path) -> impl Fn(io::Error) -> VectorError {
    let path = path.display().to_string();
    move |source| VectorError::Io {
        path: path.clone(),
        source,
    }
}

fn write_with(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> Result<(), VectorError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_at(path))?);
    body(&mut w).map_err(io_at(path))?;
    w.flush().map_err(io_at(path))
}
