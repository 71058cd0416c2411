//! Inverted index over the latent vocabulary, with the collection
//! statistics BM25 needs.
//!
//! Document length is the total weight of the document's vector,
//! `|D| = Σ_j w_j(D)`.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posting {
    pub doc: u32,
    pub weight: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocEntry {
    pub id: String,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    m: usize,
    postings: Vec<Vec<Posting>>,
    docs: Vec<DocEntry>,
    avgdl: f64,
    pruned: Vec<u32>,
    metadata: BTreeMap<String, String>,
}

/// Statistic used to rank features for pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureStatistic {
    /// n(j), the number of documents with `w_j(D) > 0`.
    #[default]
    DocFreq,
    /// Σ_D w_j(D)
    TotalMass,
}

/// Natural-log BM25 IDF, `ln((N - n + 0.5) / (n + 0.5))`. Negative when a
/// feature occurs in more than half of the documents.
pub fn idf_value(n_docs: usize, doc_freq: usize) -> f64 {
    let (n, df) = (n_docs as f64, doc_freq as f64);
    ((n - df + 0.5) / (df + 0.5)).ln()
}

fn mean_length(docs: &[DocEntry]) -> f64 {
    if docs.is_empty() {
        return 0.0;
    }
    docs.iter().map(|d| d.length).sum::<f64>() / docs.len() as f64
}

/// Builds the index; document ordinals follow input order.
pub fn build_index(vectors: &[SparseVector], m: usize) -> Result<InvertedIndex> {
    if vectors.is_empty() {
        return Err(Error::EmptyInput);
    }
    if vectors.len() > u32::MAX as usize {
        return Err(Error::InvalidShape(
            "too many documents for u32 ordinals".into(),
        ));
    }
    let mut seen = HashSet::with_capacity(vectors.len());
    for v in vectors {
        if !seen.insert(v.owner_id()) {
            return Err(Error::DuplicateDocument(v.owner_id().to_owned()));
        }
        if let Some(f) = v.max_feature() {
            if f as usize >= m {
                return Err(Error::InvalidFeature { feature: f, m });
            }
        }
    }
    let mut postings = vec![Vec::new(); m];
    let mut docs = Vec::with_capacity(vectors.len());
    for (ordinal, v) in vectors.iter().enumerate() {
        for &(j, weight) in v.entries() {
            postings[j as usize].push(Posting {
                doc: ordinal as u32,
                weight,
            });
        }
        docs.push(DocEntry {
            id: v.owner_id().to_owned(),
            length: v.mass(),
        });
    }
    let avgdl = mean_length(&docs);
    Ok(InvertedIndex {
        m,
        postings,
        docs,
        avgdl,
        pruned: Vec::new(),
        metadata: BTreeMap::new(),
    })
}

impl InvertedIndex {
    pub fn m(&self) -> usize {
        self.m
    }

    /// N
    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn docs(&self) -> &[DocEntry] {
        &self.docs
    }

    pub fn doc(&self, ordinal: usize) -> Result<&DocEntry> {
        self.docs.get(ordinal).ok_or(Error::InvalidDocument {
            ordinal,
            n: self.docs.len(),
        })
    }

    pub fn postings(&self, feature: u32) -> Result<&[Posting]> {
        self.postings
            .get(feature as usize)
            .map(Vec::as_slice)
            .ok_or(Error::InvalidFeature { feature, m: self.m })
    }

    /// n(j)
    pub fn doc_freq(&self, feature: u32) -> Result<usize> {
        self.postings(feature).map(<[Posting]>::len)
    }

    pub fn doc_freqs(&self) -> Vec<usize> {
        self.postings.iter().map(Vec::len).collect()
    }

    pub fn total_postings(&self) -> usize {
        self.postings.iter().map(Vec::len).sum()
    }

    pub fn idf(&self, feature: u32) -> Result<f64> {
        Ok(idf_value(self.n_docs(), self.doc_freq(feature)?))
    }

    /// Σ_D w_j(D), in ordinal order.
    pub fn total_mass(&self, feature: u32) -> Result<f64> {
        Ok(self
            .postings(feature)?
            .iter()
            .map(|p| p.weight as f64)
            .sum())
    }

    /// Features removed by pruning, ascending.
    pub fn pruned_features(&self) -> &[u32] {
        &self.pruned
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn statistic(&self, feature: u32, statistic: FeatureStatistic) -> Result<f64> {
        match statistic {
            FeatureStatistic::DocFreq => self.doc_freq(feature).map(|n| n as f64),
            FeatureStatistic::TotalMass => self.total_mass(feature),
        }
    }

    /// Weight of `feature` in document `ordinal`, 0 when absent.
    pub fn weight(&self, feature: u32, ordinal: u32) -> Result<f32> {
        let list = self.postings(feature)?;
        Ok(list
            .binary_search_by_key(&ordinal, |p| p.doc)
            .map_or(0.0, |i| list[i].weight))
    }

    /// Rebuilds every document vector from the postings.
    pub fn to_vectors(&self) -> Vec<SparseVector> {
        let mut entries: Vec<Vec<(u32, f32)>> = vec![Vec::new(); self.docs.len()];
        for (j, list) in self.postings.iter().enumerate() {
            for p in list {
                entries[p.doc as usize].push((j as u32, p.weight));
            }
        }
        self.docs
            .iter()
            .zip(entries)
            .map(|(doc, e)| {
                SparseVector::new(doc.id.clone(), e).expect("postings hold valid weights")
            })
            .collect()
    }
}

/// Number of features removed at pruning fraction `p` over `m` features:
/// `⌊p·m⌋` (327 of 32,768 at 1%).
pub fn prune_count(m: usize, fraction: f64) -> usize {
    // tolerance absorbs representation error such as 0.29 * 100 = 28.999…
    ((fraction * m as f64) + 1e-9).floor() as usize
}

/// Removes the postings of the most prevalent features and recomputes the
/// document lengths and average length over the surviving features.
pub fn prune_top(
    index: &InvertedIndex,
    fraction: f64,
    statistic: FeatureStatistic,
) -> Result<InvertedIndex> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidFraction(fraction));
    }
    let count = prune_count(index.m, fraction);
    let mut out = index.clone();
    if count == 0 {
        return Ok(out);
    }
    let stats: Vec<f64> = (0..index.m as u32)
        .map(|j| index.statistic(j, statistic))
        .collect::<Result<_>>()?;
    let mut order: Vec<u32> = (0..index.m as u32).collect();
    order.sort_by(|&a, &b| {
        stats[b as usize]
            .total_cmp(&stats[a as usize])
            .then(a.cmp(&b))
    });
    for &j in &order[..count] {
        out.postings[j as usize] = Vec::new();
        out.pruned.push(j);
    }
    out.pruned.sort_unstable();

    let mut lengths = vec![0.0f64; out.docs.len()];
    for list in &out.postings {
        for p in list {
            lengths[p.doc as usize] += p.weight as f64;
        }
    }
    for (doc, len) in out.docs.iter_mut().zip(lengths) {
        doc.length = len;
    }
    out.avgdl = mean_length(&out.docs);
    Ok(out)
}

pub const INDEX_FORMAT: &str = "latent-terms-index";
pub const INDEX_VERSION: u32 = 1;
const POSTINGS_MAGIC: &[u8; 4] = b"LTIP";
const DOCS_MAGIC: &[u8; 4] = b"LTID";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const POSTINGS_FILE: &str = "postings.bin";
pub const DOCS_FILE: &str = "docs.bin";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    m: usize,
    n_docs: usize,
    avgdl: f64,
    total_postings: usize,
    #[serde(default)]
    pruned_features: Vec<u32>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

/// Writes `manifest.toml`, `postings.bin` and `docs.bin` into `dir`.
pub fn save_index(index: &InvertedIndex, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format: INDEX_FORMAT.into(),
        version: INDEX_VERSION,
        m: index.m,
        n_docs: index.n_docs(),
        avgdl: index.avgdl,
        total_postings: index.total_postings(),
        pruned_features: index.pruned.clone(),
        metadata: index.metadata.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::FormatError(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), text)?;

    let mut out = BufWriter::new(File::create(dir.join(POSTINGS_FILE))?);
    out.write_all(POSTINGS_MAGIC)?;
    out.write_all(&INDEX_VERSION.to_le_bytes())?;
    out.write_all(&(index.m as u32).to_le_bytes())?;
    for list in &index.postings {
        out.write_all(&(list.len() as u32).to_le_bytes())?;
        for p in list {
            out.write_all(&p.doc.to_le_bytes())?;
            out.write_all(&p.weight.to_le_bytes())?;
        }
    }
    out.flush()?;

    let mut out = BufWriter::new(File::create(dir.join(DOCS_FILE))?);
    out.write_all(DOCS_MAGIC)?;
    out.write_all(&INDEX_VERSION.to_le_bytes())?;
    out.write_all(&(index.n_docs() as u32).to_le_bytes())?;
    for doc in &index.docs {
        out.write_all(&(doc.id.len() as u32).to_le_bytes())?;
        out.write_all(doc.id.as_bytes())?;
        out.write_all(&doc.length.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn bin_header(input: &mut impl Read, magic: &[u8; 4], what: &str) -> Result<u32> {
    let err = |_| Error::FormatError(format!("{what}: truncated header"));
    let mut got = [0u8; 4];
    input.read_exact(&mut got).map_err(err)?;
    if &got != magic {
        return Err(Error::FormatError(format!("{what}: bad magic")));
    }
    let version = input.read_u32::<LittleEndian>().map_err(err)?;
    if version != INDEX_VERSION {
        return Err(Error::FormatError(format!(
            "{what}: unsupported version {version}"
        )));
    }
    input.read_u32::<LittleEndian>().map_err(err)
}

pub fn load_index(dir: impl AsRef<Path>) -> Result<InvertedIndex> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::MissingIndex(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::FormatError(format!("manifest: {e}")))?;
    if manifest.format != INDEX_FORMAT || manifest.version != INDEX_VERSION {
        return Err(Error::FormatError(format!(
            "manifest declares {} v{}, expected {INDEX_FORMAT} v{INDEX_VERSION}",
            manifest.format, manifest.version
        )));
    }
    let corrupt = |what: &str| Error::FormatError(format!("index: {what}"));

    let mut input = BufReader::new(File::open(dir.join(POSTINGS_FILE))?);
    let m = bin_header(&mut input, POSTINGS_MAGIC, "postings")? as usize;
    if m != manifest.m {
        return Err(corrupt("vocabulary size disagrees with manifest"));
    }
    let n = manifest.n_docs;
    let mut postings = Vec::with_capacity(m);
    for _ in 0..m {
        let len = input
            .read_u32::<LittleEndian>()
            .map_err(|_| corrupt("truncated postings"))? as usize;
        if len > n {
            return Err(corrupt("posting list longer than collection"));
        }
        let mut list = Vec::with_capacity(len);
        for _ in 0..len {
            let doc = input
                .read_u32::<LittleEndian>()
                .map_err(|_| corrupt("truncated postings"))?;
            let weight = input
                .read_f32::<LittleEndian>()
                .map_err(|_| corrupt("truncated postings"))?;
            if doc as usize >= n || list.last().is_some_and(|p: &Posting| p.doc >= doc) {
                return Err(corrupt("posting ordinals out of order or range"));
            }
            list.push(Posting { doc, weight });
        }
        postings.push(list);
    }

    let mut input = BufReader::new(File::open(dir.join(DOCS_FILE))?);
    let n_docs = bin_header(&mut input, DOCS_MAGIC, "docs")? as usize;
    if n_docs != n {
        return Err(corrupt("document count disagrees with manifest"));
    }
    let mut docs = Vec::with_capacity(n);
    for _ in 0..n {
        let len = input
            .read_u32::<LittleEndian>()
            .map_err(|_| corrupt("truncated doc table"))? as usize;
        if len > 1 << 20 {
            return Err(corrupt("implausible id length"));
        }
        let mut id = vec![0u8; len];
        input
            .read_exact(&mut id)
            .map_err(|_| corrupt("truncated doc table"))?;
        let id = String::from_utf8(id).map_err(|_| corrupt("non-UTF-8 doc id"))?;
        let length = input
            .read_f64::<LittleEndian>()
            .map_err(|_| corrupt("truncated doc table"))?;
        docs.push(DocEntry { id, length });
    }
    let index = InvertedIndex {
        m,
        avgdl: mean_length(&docs),
        postings,
        docs,
        pruned: manifest.pruned_features,
        metadata: manifest.metadata,
    };
    if index.total_postings() != manifest.total_postings {
        return Err(corrupt("posting count disagrees with manifest"));
    }
    Ok(index)
}
