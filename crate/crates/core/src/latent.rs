//! Per-input latent vectors: SAE codes of every token, sum-pooled, then
//! passed through a sublinear power transform.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt};
use serde::{Deserialize, Serialize};

use crate::activation_io::DumpRecord;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::TokenMatrix;
use crate::sae::{SaeModel, SparseCode};

/// Sparse nonnegative vector over the latent vocabulary, keyed by the
/// document or query it represents.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    owner_id: String,
    entries: Vec<(u32, f32)>,
}

impl SparseVector {
    /// Entries must have strictly increasing feature ids and finite weights
    /// greater than zero.
    pub fn new(owner_id: impl Into<String>, entries: Vec<(u32, f32)>) -> Result<Self> {
        for pair in entries.windows(2) {
            if pair[0].0 >= pair[1].0 {
                return Err(Error::InvalidShape(format!(
                    "feature ids not strictly increasing at {}",
                    pair[1].0
                )));
            }
        }
        if entries.iter().any(|e| !(e.1 > 0.0) || !e.1.is_finite()) {
            return Err(Error::InvalidShape(
                "weights must be finite and positive".into(),
            ));
        }
        Ok(Self {
            owner_id: owner_id.into(),
            entries,
        })
    }

    pub fn from_code(owner_id: impl Into<String>, code: SparseCode) -> Self {
        Self {
            owner_id: owner_id.into(),
            entries: code.0,
        }
    }

    pub fn owner_id(&self) -> &str {
        &self.owner_id
    }

    pub fn entries(&self) -> &[(u32, f32)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn weight(&self, feature: u32) -> Option<f32> {
        self.entries
            .binary_search_by_key(&feature, |e| e.0)
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn max_feature(&self) -> Option<u32> {
        self.entries.last().map(|e| e.0)
    }

    /// Total weight Σ_j w_j, accumulated in f64 in ascending feature order.
    pub fn mass(&self) -> f64 {
        self.entries.iter().map(|e| e.1 as f64).sum()
    }
}

/// Elementwise `u ↦ u^alpha`, `alpha ∈ (0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiTransform {
    alpha: f64,
}

impl PhiTransform {
    pub fn power(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidPhi(alpha));
        }
        Ok(Self { alpha })
    }

    pub fn sqrt() -> Self {
        Self { alpha: 0.5 }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn apply(&self, u: f32) -> f32 {
        if self.alpha == 1.0 {
            u
        } else {
            (u as f64).powf(self.alpha) as f32
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Sum,
    Max,
}

fn gather(codes: &[SparseCode]) -> Result<Vec<(u32, f32)>> {
    if codes.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut all: Vec<(u32, f32)> = codes.iter().flat_map(|c| c.0.iter().copied()).collect();
    if all.iter().any(|e| !(e.1 >= 0.0) || !e.1.is_finite()) {
        return Err(Error::InvalidShape(
            "codes must be finite and nonnegative".into(),
        ));
    }
    // Canonical order: the pooled result does not depend on token order.
    all.sort_unstable_by_key(|&(j, v)| (j, v.to_bits()));
    Ok(all)
}

/// `w̃_j = Σ_i z_ij`. Contributions to each feature are added in ascending
/// value order in f64, which makes the sum independent of token order.
pub fn pool_sum(codes: &[SparseCode]) -> Result<SparseCode> {
    let all = gather(codes)?;
    let mut out: Vec<(u32, f32)> = Vec::new();
    let mut i = 0;
    while i < all.len() {
        let j = all[i].0;
        let mut acc = 0.0f64;
        while i < all.len() && all[i].0 == j {
            acc += all[i].1 as f64;
            i += 1;
        }
        if acc > 0.0 {
            out.push((j, acc as f32));
        }
    }
    Ok(SparseCode(out))
}

/// `w̃_j = max_i z_ij`
pub fn pool_max(codes: &[SparseCode]) -> Result<SparseCode> {
    let all = gather(codes)?;
    let mut out: Vec<(u32, f32)> = Vec::new();
    for (j, v) in all {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 = last.1.max(v),
            _ if v > 0.0 => out.push((j, v)),
            _ => {}
        }
    }
    Ok(SparseCode(out))
}

pub fn pool(codes: &[SparseCode], pooling: Pooling) -> Result<SparseCode> {
    match pooling {
        Pooling::Sum => pool_sum(codes),
        Pooling::Max => pool_max(codes),
    }
}

/// `w_j = φ(w̃_j)`; the support is unchanged.
pub fn apply_phi(pooled: &SparseCode, phi: PhiTransform) -> Result<SparseCode> {
    if pooled.0.iter().any(|e| !(e.1 >= 0.0)) {
        return Err(Error::InvalidShape(
            "pooled weights must be nonnegative".into(),
        ));
    }
    Ok(SparseCode(
        pooled
            .0
            .iter()
            .map(|&(j, v)| (j, phi.apply(v)))
            .filter(|e| e.1 > 0.0)
            .collect(),
    ))
}

/// Raw pooled vector `w̃` of one input, before φ.
pub fn pool_input(model: &SaeModel, tokens: &TokenMatrix, pooling: Pooling) -> Result<SparseCode> {
    if tokens.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    let codes = model.encode_rows(tokens, Execution::Sequential)?;
    pool(&codes, pooling)
}

/// Sparse latent vector of a document or query: `φ(Σ_i encode(h_i))`.
pub fn encode_input(
    model: &SaeModel,
    owner_id: &str,
    tokens: &TokenMatrix,
    phi: PhiTransform,
) -> Result<SparseVector> {
    let pooled = pool_input(model, tokens, Pooling::Sum)?;
    Ok(SparseVector::from_code(owner_id, apply_phi(&pooled, phi)?))
}

/// Pools every record, one work item per record.
pub fn pool_corpus(
    model: &SaeModel,
    records: &[DumpRecord],
    pooling: Pooling,
    exec: Execution,
) -> Result<Vec<SparseVector>> {
    exec.map(records, |(id, tokens)| {
        pool_input(model, tokens, pooling).map(|code| SparseVector::from_code(id.clone(), code))
    })
    .into_iter()
    .collect()
}

/// Applies φ to already pooled vectors.
pub fn transform_corpus(pooled: &[SparseVector], phi: PhiTransform) -> Vec<SparseVector> {
    pooled
        .iter()
        .map(|v| SparseVector {
            owner_id: v.owner_id.clone(),
            entries: v
                .entries
                .iter()
                .map(|&(j, w)| (j, phi.apply(w)))
                .filter(|e| e.1 > 0.0)
                .collect(),
        })
        .collect()
}

pub fn encode_corpus(
    model: &SaeModel,
    records: &[DumpRecord],
    phi: PhiTransform,
    pooling: Pooling,
    exec: Execution,
) -> Result<Vec<SparseVector>> {
    let pooled = pool_corpus(model, records, pooling, exec)?;
    Ok(transform_corpus(&pooled, phi))
}

pub const VECTORS_MAGIC: &[u8; 4] = b"LTSV";
pub const VECTORS_VERSION: u32 = 1;

/// Writes an LTSV file:
///
/// ```text
/// "LTSV" version:u32 m:u32
/// record := id_len:u32 id nnz:u32 (feature:u32 weight:f32) × nnz
/// ```
pub fn write_vectors(path: impl AsRef<Path>, m: usize, vectors: &[SparseVector]) -> Result<usize> {
    let mut seen = HashSet::with_capacity(vectors.len());
    for v in vectors {
        if !seen.insert(v.owner_id()) {
            return Err(Error::DuplicateDocument(v.owner_id.clone()));
        }
        if let Some(f) = v.max_feature() {
            if f as usize >= m {
                return Err(Error::InvalidFeature { feature: f, m });
            }
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(VECTORS_MAGIC)?;
    out.write_all(&VECTORS_VERSION.to_le_bytes())?;
    out.write_all(&(m as u32).to_le_bytes())?;
    for v in vectors {
        out.write_all(&(v.owner_id.len() as u32).to_le_bytes())?;
        out.write_all(v.owner_id.as_bytes())?;
        out.write_all(&(v.entries.len() as u32).to_le_bytes())?;
        for &(j, w) in &v.entries {
            out.write_all(&j.to_le_bytes())?;
            out.write_all(&w.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(vectors.len())
}

/// Streaming LTSV reader.
pub struct VectorReader<R: Read> {
    input: BufReader<R>,
    m: usize,
    done: bool,
}

impl VectorReader<File> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(File::open(path)?)
    }
}

impl<R: Read> VectorReader<R> {
    pub fn new(inner: R) -> Result<Self> {
        let mut input = BufReader::new(inner);
        let short = |_| Error::FormatError("file shorter than LTSV header".into());
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(short)?;
        if &magic != VECTORS_MAGIC {
            return Err(Error::FormatError("bad magic, expected LTSV".into()));
        }
        let version = input.read_u32::<LittleEndian>().map_err(short)?;
        if version != VECTORS_VERSION {
            return Err(Error::FormatError(format!(
                "unsupported LTSV version {version}"
            )));
        }
        let m = input.read_u32::<LittleEndian>().map_err(short)? as usize;
        Ok(Self {
            input,
            m,
            done: false,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    fn read_one(&mut self) -> Result<Option<SparseVector>> {
        if self.input.fill_buf()?.is_empty() {
            return Ok(None);
        }
        let trunc = |_| Error::FormatError("truncated LTSV record".into());
        let id_len = self.input.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        if id_len > 1 << 20 {
            return Err(Error::FormatError(format!(
                "implausible id length {id_len}"
            )));
        }
        let mut id = vec![0u8; id_len];
        self.input.read_exact(&mut id).map_err(trunc)?;
        let id = String::from_utf8(id).map_err(|_| Error::FormatError("non-UTF-8 id".into()))?;
        let nnz = self.input.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let mut entries = Vec::with_capacity(nnz.min(1 << 16));
        for _ in 0..nnz {
            let j = self.input.read_u32::<LittleEndian>().map_err(trunc)?;
            let w = self.input.read_f32::<LittleEndian>().map_err(trunc)?;
            if j as usize >= self.m {
                return Err(Error::InvalidFeature {
                    feature: j,
                    m: self.m,
                });
            }
            entries.push((j, w));
        }
        SparseVector::new(id, entries)
            .map(Some)
            .map_err(|e| Error::FormatError(e.to_string()))
    }
}

impl<R: Read> Iterator for VectorReader<R> {
    type Item = Result<SparseVector>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = self.read_one().transpose();
        if !matches!(item, Some(Ok(_))) {
            self.done = true;
        }
        item
    }
}

/// Reads a whole LTSV file, returning the vocabulary size and the vectors.
pub fn read_vectors(path: impl AsRef<Path>) -> Result<(usize, Vec<SparseVector>)> {
    let reader = VectorReader::open(path)?;
    let m = reader.m();
    let vectors = reader.collect::<Result<Vec<_>>>()?;
    Ok((m, vectors))
}
