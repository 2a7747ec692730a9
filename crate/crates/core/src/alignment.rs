//! Prompt–image alignment in a shared embedding space.
//!
//! Embeddings arrive in `EMB1` files:
//! `b"EMB1"` | header length `u32` LE | UTF-8 JSON header
//! `{"dim", "count", "ids", "kind"}` | count×dim `f32` LE, row-major.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{CategoryLabel, LabelSet};

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
pub const DEFAULT_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Image,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f32>,
    kind: EmbeddingKind,
}

#[derive(Serialize, Deserialize)]
struct Emb1Header {
    dim: usize,
    count: usize,
    ids: Vec<String>,
    kind: EmbeddingKind,
}

impl EmbeddingSet {
    pub fn new(dim: usize, ids: Vec<String>, vectors: Vec<f32>, kind: EmbeddingKind) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("embedding dim must be >= 1".into()));
        }
        if vectors.len() != dim * ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} rows of dim {dim}",
                vectors.len(),
                ids.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Duplicate(id.clone()));
            }
        }
        for (row, v) in vectors.chunks_exact(dim).enumerate() {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { index: row * dim + i });
            }
            if norm(v) == 0.0 {
                return Err(Error::ZeroNorm {
                    row,
                    id: ids[row].clone(),
                });
            }
        }
        Ok(Self {
            dim,
            ids,
            vectors,
            kind,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows picked by id, in the order given.
    pub fn select(&self, ids: &[&str]) -> Result<Self> {
        let index: HashMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut vectors = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let &i = index
                .get(id)
                .ok_or_else(|| Error::Config(format!("embedding id `{id}` not found")))?;
            vectors.extend_from_slice(self.row(i));
        }
        Self::new(
            self.dim,
            ids.iter().map(|s| s.to_string()).collect(),
            vectors,
            self.kind,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Emb1Header {
            dim: self.dim,
            count: self.count(),
            ids: self.ids.clone(),
            kind: self.kind,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(8 + header.len() + self.vectors.len() * 4);
        out.extend_from_slice(EMB1_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let malformed = |detail: &str| Error::MalformedHeader {
            what: "EMB1".into(),
            detail: detail.into(),
        };
        if bytes.len() < 8 || &bytes[..4] != EMB1_MAGIC {
            return Err(malformed("missing magic"));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header_bytes = bytes
            .get(8..8 + hlen)
            .ok_or_else(|| malformed("header length exceeds file"))?;
        let header: Emb1Header =
            serde_json::from_slice(header_bytes).map_err(|e| Error::json("EMB1 header", e))?;
        if header.ids.len() != header.count {
            return Err(malformed("count disagrees with ids"));
        }
        let payload = &bytes[8 + hlen..];
        let expected = header.count * header.dim * 4;
        if payload.len() != expected {
            return Err(Error::PayloadSize {
                expected,
                found: payload.len(),
            });
        }
        let vectors = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(header.dim, header.ids, vectors, header.kind)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt()
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    (dot / (norm(a) * norm(b))).clamp(-1.0, 1.0)
}

/// Dense row-major score matrix; rows are images, columns captions.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("similarity matrix must be square".into()));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Square submatrix over `indices` (rows and columns alike).
    pub fn select(&self, indices: &[usize]) -> Self {
        let data = indices
            .iter()
            .flat_map(|&i| indices.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        Self {
            n: indices.len(),
            data,
        }
    }
}

/// `S_ij = <img_i, txt_j> / (|img_i| |txt_j|)`.
pub fn cosine_matrix(img: &EmbeddingSet, txt: &EmbeddingSet) -> Result<SimilarityMatrix> {
    if img.count() != txt.count() || img.dim() != txt.dim() {
        return Err(Error::DimensionMismatch(format!(
            "image set {}x{} vs text set {}x{}",
            img.count(),
            img.dim(),
            txt.count(),
            txt.dim()
        )));
    }
    let n = img.count();
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            data.push(cosine(img.row(i), txt.row(j)));
        }
    }
    Ok(SimilarityMatrix { n, data })
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(s: &SimilarityMatrix) -> SimilarityMatrix {
    let mut data = Vec::with_capacity(s.data.len());
    for i in 0..s.n {
        let row = s.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        data.extend(exps.into_iter().map(|e| e / total));
    }
    SimilarityMatrix { n: s.n, data }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankStats {
    pub mean: f64,
    pub median: f64,
    pub variance: f64,
    pub variance_about_median: f64,
    pub n_items: usize,
    pub batch_size: usize,
    pub n_batches: usize,
}

/// Rank of each item's own caption within its batch: `1 + #{j : S_ij > S_ii}`.
/// Items are batched consecutively; a final batch of one item is dropped.
pub fn batch_ranks(s: &SimilarityMatrix, batch_size: usize) -> Result<Vec<usize>> {
    if batch_size < 2 {
        return Err(Error::InvalidParameter(format!(
            "batch size must be >= 2, got {batch_size}"
        )));
    }
    if s.n < 2 {
        return Err(Error::Empty(format!("need >= 2 items to rank, got {}", s.n)));
    }
    let mut ranks = Vec::with_capacity(s.n);
    for start in (0..s.n).step_by(batch_size) {
        let end = (start + batch_size).min(s.n);
        if end - start < 2 {
            break;
        }
        for i in start..end {
            let own = s.get(i, i);
            let better = (start..end).filter(|&j| j != i && s.get(i, j) > own).count();
            ranks.push(1 + better);
        }
    }
    Ok(ranks)
}

pub fn summarize_ranks(ranks: &[usize], batch_size: usize) -> RankStats {
    let n = ranks.len();
    let nf = n as f64;
    let mean = ranks.iter().sum::<usize>() as f64 / nf;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    let spread = |c: f64| ranks.iter().map(|&r| (r as f64 - c).powi(2)).sum::<f64>() / nf;
    RankStats {
        mean,
        median,
        variance: spread(mean),
        variance_about_median: spread(median),
        n_items: n,
        batch_size,
        n_batches: n.div_ceil(batch_size),
    }
}

/// Same ranks as `batch_ranks(&cosine_matrix(img, txt)?, batch_size)`, built
/// one batch at a time instead of materializing the full matrix.
pub fn embedding_ranks(img: &EmbeddingSet, txt: &EmbeddingSet, batch_size: usize) -> Result<Vec<usize>> {
    if img.count() != txt.count() || img.dim() != txt.dim() {
        return Err(Error::DimensionMismatch(format!(
            "image set {}x{} vs text set {}x{}",
            img.count(),
            img.dim(),
            txt.count(),
            txt.dim()
        )));
    }
    if batch_size < 2 {
        return Err(Error::InvalidParameter(format!(
            "batch size must be >= 2, got {batch_size}"
        )));
    }
    if img.count() < 2 {
        return Err(Error::Empty(format!("need >= 2 items to rank, got {}", img.count())));
    }
    let mut ranks = Vec::with_capacity(img.count());
    for start in (0..img.count()).step_by(batch_size) {
        let end = (start + batch_size).min(img.count());
        if end - start < 2 {
            break;
        }
        for i in start..end {
            let own = cosine(img.row(i), txt.row(i));
            let better = (start..end)
                .filter(|&j| j != i && cosine(img.row(i), txt.row(j)) > own)
                .count();
            ranks.push(1 + better);
        }
    }
    Ok(ranks)
}

pub fn rank_stats(s: &SimilarityMatrix, batch_size: usize) -> Result<RankStats> {
    let ranks = batch_ranks(s, batch_size)?;
    Ok(summarize_ranks(&ranks, batch_size))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCosine {
    pub label: CategoryLabel,
    /// `None` when no pair carries this label.
    pub mean: Option<f64>,
    pub n: usize,
}

/// Cosine of each image with its own caption.
pub fn paired_cosines(img: &EmbeddingSet, txt: &EmbeddingSet) -> Result<Vec<f64>> {
    if img.count() != txt.count() || img.dim() != txt.dim() {
        return Err(Error::DimensionMismatch(format!(
            "image set {}x{} vs text set {}x{}",
            img.count(),
            img.dim(),
            txt.count(),
            txt.dim()
        )));
    }
    Ok((0..img.count())
        .map(|i| cosine(img.row(i), txt.row(i)))
        .collect())
}

/// Mean paired cosine per label, in `label_set` order.
pub fn per_label_cosine(
    img: &EmbeddingSet,
    txt: &EmbeddingSet,
    labels: &[Option<CategoryLabel>],
    label_set: &LabelSet,
) -> Result<Vec<LabelCosine>> {
    let cos = paired_cosines(img, txt)?;
    if labels.len() != cos.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} pairs",
            labels.len(),
            cos.len()
        )));
    }
    let mut buckets: BTreeMap<&CategoryLabel, Vec<f64>> = BTreeMap::new();
    for (l, c) in labels.iter().zip(&cos) {
        if let Some(l) = l {
            buckets.entry(l).or_default().push(*c);
        }
    }
    Ok(label_set
        .labels()
        .map(|label| {
            let vals = buckets.get(&label).map(Vec::as_slice).unwrap_or(&[]);
            LabelCosine {
                mean: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
                n: vals.len(),
                label,
            }
        })
        .collect())
}
