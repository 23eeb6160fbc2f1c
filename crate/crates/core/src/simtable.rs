//! Item embeddings and the sparse per-item similarity distributions built
//! from them.
//!
//! Embedding file (little-endian):
//!
//! ```text
//! magic   "SIMREC-EMB\x01"
//! u32     item count, u32 dim
//! items x u32 id byte length, UTF-8 external item id, dim x f32
//! ```
//!
//! A TSV form `item_id<TAB>v1,v2,...` is accepted as well.
//!
//! Similarity table file (little-endian):
//!
//! ```text
//! magic   "SIMREC-SIM\x01"
//! u32     top_k, f64 threshold, f64 temperature, u8 include_self
//! u32     item count |V|
//! |V| x   u32 entry count, entries x (u32 item index, f32 probability)
//! ```
//!
//! Rows are stored for items 1..=|V| in order. Probabilities are
//! renormalised in f64 on load, so a loaded row sums to one at f64
//! precision while the stored values round-trip to within f32 precision.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8] = b"SIMREC-EMB\x01";
pub const SIMILARITY_MAGIC: &[u8] = b"SIMREC-SIM\x01";

/// One dense vector per item, indexed by internal item index.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    // vectors[k] belongs to item k + 1
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingSet {
    pub fn new(dim: usize, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidEmbedding("dimension must be positive".into()));
        }
        for (k, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::InvalidEmbedding(format!(
                    "item {} has {} components, expected {dim}",
                    k + 1,
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidEmbedding(format!("item {} is not finite", k + 1)));
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(Error::InvalidEmbedding(format!("item {} is a zero vector", k + 1)));
            }
        }
        Ok(EmbeddingSet { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, item: u32) -> &[f64] {
        &self.vectors[item as usize - 1]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// Writes the binary container, labelling vector `k` with `ids[k]`.
    pub fn write<W: Write>(&self, ids: &[String], w: &mut W) -> Result<()> {
        if ids.len() != self.vectors.len() {
            return Err(Error::format("id list does not match embedding count"));
        }
        binio::write_magic(w, EMBEDDING_MAGIC)?;
        binio::write_len(w, self.vectors.len())?;
        binio::write_len(w, self.dim)?;
        for (id, v) in ids.iter().zip(&self.vectors) {
            binio::write_str(w, id)?;
            for &x in v {
                binio::write_f32(w, x as f32)?;
            }
        }
        Ok(())
    }
}

/// Embeddings keyed by external item id, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub entries: Vec<(String, Vec<f64>)>,
}

impl EmbeddingFile {
    /// Reads either the binary container or the TSV form.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(EMBEDDING_MAGIC) {
            Self::parse_binary(&mut &bytes[..])
        } else {
            Self::parse_tsv(bytes)
        }
    }

    fn parse_binary<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_magic(r, EMBEDDING_MAGIC)?;
        let count = binio::read_u32(r)? as usize;
        let dim = binio::read_u32(r)? as usize;
        if dim == 0 {
            return Err(Error::format("embedding dimension is zero"));
        }
        let mut entries = Vec::with_capacity(count);
        for k in 0..count {
            let id = binio::read_str(r)?;
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                v.push(binio::read_f32(r).map_err(|_| {
                    Error::format(format!("payload of entry {k} shorter than dim {dim}"))
                })? as f64);
            }
            entries.push((id, v));
        }
        binio::expect_eof(r)
            .map_err(|_| Error::format("payload longer than header count x dim"))?;
        Ok(EmbeddingFile { dim, entries })
    }

    fn parse_tsv(bytes: &[u8]) -> Result<Self> {
        let mut entries = Vec::new();
        let mut dim = None;
        for (i, line) in bytes.lines().enumerate() {
            let line = line?;
            let parse_err = |message: String| Error::Parse { line: i + 1, message };
            let (id, values) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected item_id<TAB>values".into()))?;
            let v = values
                .trim_end()
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(format!("bad component: {e}")))?;
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(parse_err(format!("{} components, expected {d}", v.len())))
                }
                _ => {}
            }
            entries.push((id.to_string(), v));
        }
        let dim = dim.ok_or_else(|| Error::format("empty embedding file"))?;
        Ok(EmbeddingFile { dim, entries })
    }
}

/// Maps file embeddings onto the corpus vocabulary.
pub fn load_embeddings(file: &EmbeddingFile, corpus: &Corpus) -> Result<EmbeddingSet> {
    let by_id: HashMap<&str, &Vec<f64>> =
        file.entries.iter().map(|(id, v)| (id.as_str(), v)).collect();
    let mut missing = Vec::new();
    let mut vectors = Vec::with_capacity(corpus.item_count());
    for id in corpus.item_ids() {
        match by_id.get(id.as_str()) {
            Some(v) => vectors.push((*v).clone()),
            None => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() {
        let total = missing.len();
        missing.truncate(20);
        return Err(Error::MissingItems { total, shown: missing });
    }
    EmbeddingSet::new(file.dim, vectors)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over the little-endian seed bytes followed by `bytes`.
pub fn keyed_fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    seed.to_le_bytes()
        .iter()
        .chain(bytes)
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Hashed character-trigram embedding of one title.
///
/// The title is lowercased and wrapped in one space on each side; every
/// window of three characters is hashed with [`keyed_fnv1a`] into bucket
/// `hash % dim`, and the bucket counts are L2-normalised.
pub fn hashed_trigram_vector(title: &str, dim: usize, seed: u64) -> Option<Vec<f64>> {
    let padded: Vec<char> = format!(" {} ", title.to_lowercase()).chars().collect();
    let mut v = vec![0.0f64; dim];
    let mut buf = [0u8; 12];
    for w in padded.windows(3) {
        let mut n = 0;
        for c in w {
            n += c.encode_utf8(&mut buf[n..]).len();
        }
        let bucket = keyed_fnv1a(seed, &buf[..n]) % dim as u64;
        v[bucket as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

/// Deterministic offline stand-in for a text-embedding model.
pub fn embed_titles_hashed(corpus: &Corpus, dim: usize, seed: u64) -> Result<EmbeddingSet> {
    if dim < 8 {
        return Err(Error::config("hashed embedding dimension must be at least 8"));
    }
    let vectors = (1..=corpus.item_count() as u32)
        .map(|item| {
            let title = corpus.title(item).unwrap_or("");
            if title.is_empty() {
                return Err(Error::InvalidEmbedding(format!(
                    "item {:?} has no title",
                    corpus.item_id(item)
                )));
            }
            hashed_trigram_vector(title, dim, seed).ok_or_else(|| {
                Error::InvalidEmbedding(format!("title of {:?} yields no trigrams", corpus.item_id(item)))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::new(dim, vectors)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub top_k: usize,
    /// Minimum raw cosine for an entry to survive.
    pub threshold: f64,
    /// Softmax temperature applied to the surviving cosines.
    pub temperature: f64,
    #[serde(default)]
    pub include_self: bool,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            top_k: 1000,
            threshold: 0.5,
            temperature: 1.0,
            include_self: false,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::config("top_k must be at least 1"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::config("temperature must be positive"));
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("threshold must lie in [-1, 1]"));
        }
        Ok(())
    }
}

/// Sparse target distributions: row `i` holds `(j, p_j)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTable {
    config: SimilarityConfig,
    // rows[0] is the padding row and always empty
    rows: Vec<Vec<(u32, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub items: usize,
    pub entries: usize,
    pub empty_rows: usize,
    /// First few items whose row ended up empty.
    pub empty_examples: Vec<u32>,
}

impl SimilarityTable {
    pub fn from_rows(config: SimilarityConfig, rows: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        let n = rows.len();
        let mut all = Vec::with_capacity(n + 1);
        all.push(Vec::new());
        for (k, row) in rows.into_iter().enumerate() {
            if let Some(&(bad, _)) = row.iter().find(|&&(j, _)| j == 0 || j as usize > n) {
                return Err(Error::IndexOutOfRange { index: bad, vocab: n });
            }
            if row.len() > config.top_k {
                return Err(Error::format(format!("row {} exceeds top_k", k + 1)));
            }
            all.push(row);
        }
        Ok(SimilarityTable { config, rows: all })
    }

    pub fn config(&self) -> &SimilarityConfig {
        &self.config
    }

    pub fn item_count(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn row(&self, item: u32) -> &[(u32, f64)] {
        &self.rows[item as usize]
    }

    pub fn report(&self) -> BuildReport {
        let empty: Vec<u32> = (1..self.rows.len())
            .filter(|&i| self.rows[i].is_empty())
            .map(|i| i as u32)
            .collect();
        BuildReport {
            items: self.item_count(),
            entries: self.rows.iter().map(Vec::len).sum(),
            empty_rows: empty.len(),
            empty_examples: empty.into_iter().take(20).collect(),
        }
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_magic(w, SIMILARITY_MAGIC)?;
        binio::write_len(w, self.config.top_k)?;
        binio::write_f64(w, self.config.threshold)?;
        binio::write_f64(w, self.config.temperature)?;
        binio::write_u8(w, self.config.include_self as u8)?;
        binio::write_len(w, self.item_count())?;
        for row in &self.rows[1..] {
            binio::write_len(w, row.len())?;
            for &(j, p) in row {
                binio::write_u32(w, j)?;
                binio::write_f32(w, p as f32)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_magic(r, SIMILARITY_MAGIC)?;
        let config = SimilarityConfig {
            top_k: binio::read_u32(r)? as usize,
            threshold: binio::read_f64(r)?,
            temperature: binio::read_f64(r)?,
            include_self: binio::read_u8(r)? != 0,
        };
        config.validate()?;
        let n = binio::read_u32(r)? as usize;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let len = binio::read_u32(r)? as usize;
            let mut row = Vec::with_capacity(len);
            for _ in 0..len {
                let j = binio::read_u32(r)?;
                let p = binio::read_f32(r)? as f64;
                if !(p > 0.0 && p.is_finite()) {
                    return Err(Error::format("non-positive probability in similarity row"));
                }
                row.push((j, p));
            }
            let total: f64 = row.iter().map(|e| e.1).sum();
            row.iter_mut().for_each(|e| e.1 /= total);
            rows.push(row);
        }
        binio::expect_eof(r)?;
        Self::from_rows(config, rows)
    }
}

/// Cosine with an exact 1.0 for identical vectors: sqrt(fl(x*x)) == x in
/// binary floating point.
fn cosine(a: &[f64], b: &[f64], sq_a: f64, sq_b: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (sq_a * sq_b).sqrt()).clamp(-1.0, 1.0)
}

/// Orders candidates by descending cosine, lower index first on ties.
fn by_similarity(a: &(f64, u32), b: &(f64, u32)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

fn build_row(emb: &EmbeddingSet, sq: &[f64], cfg: &SimilarityConfig, item: usize) -> Vec<(u32, f64)> {
    let vi = &emb.vectors[item];
    let mut cands: Vec<(f64, u32)> = emb
        .vectors
        .iter()
        .enumerate()
        .filter(|&(j, _)| cfg.include_self || j != item)
        .map(|(j, vj)| (cosine(vi, vj, sq[item], sq[j]), j as u32 + 1))
        .collect();
    if cands.len() > cfg.top_k {
        cands.select_nth_unstable_by(cfg.top_k - 1, by_similarity);
        cands.truncate(cfg.top_k);
    }
    cands.retain(|&(c, _)| c >= cfg.threshold);
    cands.sort_by(by_similarity);
    if cands.is_empty() {
        return Vec::new();
    }
    let max = cands[0].0 / cfg.temperature;
    let weights: Vec<f64> = cands
        .iter()
        .map(|&(c, _)| (c / cfg.temperature - max).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    cands
        .iter()
        .zip(weights)
        .map(|(&(_, j), w)| (j, w / total))
        .collect()
}

/// Top-K, thresholded, temperature-softmaxed cosine similarity rows.
pub fn build_similarity_table(emb: &EmbeddingSet, cfg: &SimilarityConfig) -> Result<SimilarityTable> {
    cfg.validate()?;
    if emb.is_empty() {
        return Err(Error::InvalidEmbedding("empty embedding set".into()));
    }
    let sq: Vec<f64> = emb
        .vectors
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum())
        .collect();
    let rows: Vec<Vec<(u32, f64)>> = (0..emb.len())
        .into_par_iter()
        .map(|i| build_row(emb, &sq, cfg, i))
        .collect();
    SimilarityTable::from_rows(*cfg, rows)
}
