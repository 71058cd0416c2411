//! Exact top-n retrieval over an [`InvertedIndex`]: BM25 with real-valued
//! query weights, plain dot product, and a brute-force reference scorer that
//! works straight from the document vectors.
//!
//! For a query `q` and document `D` the BM25 score is
//!
//! ```text
//! Σ_{j ∈ supp(q)} w_j(q) · IDF(j) · w_j(D)(k1 + 1) / (w_j(D) + k1·K_D)
//! K_D = 1 − b + b·|D| / avgdl
//! ```
//!
//! Only documents sharing at least one feature with the query are ranked.
//! Scores accumulate in f64, one query feature at a time in ascending
//! feature order. Equal scores rank by ascending document id.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::index::{idf_value, InvertedIndex};
use crate::latent::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    /// Lower bound applied to every IDF value; `None` keeps negative IDF.
    pub idf_floor: Option<f64>,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: 8.0,
            b: 0.7,
            idf_floor: None,
        }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self> {
        let p = Self {
            k1,
            b,
            idf_floor: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0) || !self.k1.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "k1 = {} must be >= 0",
                self.k1
            )));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidConfig(format!(
                "b = {} must lie in [0, 1]",
                self.b
            )));
        }
        Ok(())
    }

    fn idf(&self, n_docs: usize, doc_freq: usize) -> f64 {
        let idf = idf_value(n_docs, doc_freq);
        match self.idf_floor {
            Some(floor) => idf.max(floor),
            None => idf,
        }
    }

    /// `K_D`
    pub fn length_norm(&self, length: f64, avgdl: f64) -> f64 {
        let ratio = if avgdl > 0.0 { length / avgdl } else { 1.0 };
        1.0 - self.b + self.b * ratio
    }

    /// One summand of the score.
    pub fn term(&self, query_weight: f64, idf: f64, doc_weight: f64, length_norm: f64) -> f64 {
        query_weight * idf * (doc_weight * (self.k1 + 1.0)) / (doc_weight + self.k1 * length_norm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scoring {
    Bm25(Bm25Params),
    Dot,
}

impl Scoring {
    pub fn name(&self) -> &'static str {
        match self {
            Scoring::Bm25(_) => "bm25",
            Scoring::Dot => "dot",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    pub query_id: String,
    pub hits: Vec<Hit>,
    /// Set when the query had no features, in which case `hits` is empty.
    pub empty_query: bool,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

/// Heap entry ordered so that the worst candidate is the maximum.
struct Candidate<'a> {
    score: f64,
    id: &'a str,
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.id.cmp(other.id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

struct TopN<'a> {
    n: usize,
    heap: BinaryHeap<Candidate<'a>>,
}

impl<'a> TopN<'a> {
    fn new(n: usize) -> Self {
        Self {
            n,
            heap: BinaryHeap::with_capacity(n + 1),
        }
    }

    fn push(&mut self, score: f64, id: &'a str) {
        self.heap.push(Candidate { score, id });
        if self.heap.len() > self.n {
            self.heap.pop();
        }
    }

    fn finish(self, query_id: &str) -> RankedList {
        RankedList {
            query_id: query_id.to_owned(),
            hits: self
                .heap
                .into_sorted_vec()
                .into_iter()
                .map(|c| Hit {
                    doc_id: c.id.to_owned(),
                    score: c.score,
                })
                .collect(),
            empty_query: false,
        }
    }
}

fn check_query(index: &InvertedIndex, q: &SparseVector) -> Result<()> {
    match q.max_feature() {
        Some(f) if f as usize >= index.m() => Err(Error::InvalidFeature {
            feature: f,
            m: index.m(),
        }),
        _ => Ok(()),
    }
}

/// BM25 score of one document.
pub fn bm25_score(
    index: &InvertedIndex,
    q: &SparseVector,
    ordinal: usize,
    params: &Bm25Params,
) -> Result<f64> {
    params.validate()?;
    check_query(index, q)?;
    let doc = index.doc(ordinal)?;
    let norm = params.length_norm(doc.length, index.avgdl());
    let mut score = 0.0f64;
    for &(j, wq) in q.entries() {
        let wd = index.weight(j, ordinal as u32)?;
        if wd > 0.0 {
            let idf = params.idf(index.n_docs(), index.doc_freq(j)?);
            score += params.term(wq as f64, idf, wd as f64, norm);
        }
    }
    Ok(score)
}

/// Document-at-a-time traversal of the query's posting lists. `contribution`
/// receives the query entry position and the document's weight and
/// ordinal.
fn traverse<F>(
    index: &InvertedIndex,
    q: &SparseVector,
    top_n: usize,
    contribution: F,
) -> Result<RankedList>
where
    F: Fn(usize, f64, u32) -> f64,
{
    if top_n == 0 {
        return Err(Error::InvalidConfig("top_n must be at least 1".into()));
    }
    check_query(index, q)?;
    if q.is_empty() {
        return Ok(RankedList {
            query_id: q.owner_id().to_owned(),
            hits: Vec::new(),
            empty_query: true,
        });
    }
    let lists: Vec<_> = q
        .entries()
        .iter()
        .map(|&(j, _)| index.postings(j))
        .collect::<Result<_>>()?;
    let mut cursors = vec![0usize; lists.len()];
    // (ordinal, query position), smallest first
    let mut frontier: BinaryHeap<std::cmp::Reverse<(u32, usize)>> = lists
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(t, l)| std::cmp::Reverse((l[0].doc, t)))
        .collect();
    let docs = index.docs();
    let mut top = TopN::new(top_n);
    while let Some(&std::cmp::Reverse((doc, _))) = frontier.peek() {
        let mut score = 0.0f64;
        while let Some(&std::cmp::Reverse((d, t))) = frontier.peek() {
            if d != doc {
                break;
            }
            frontier.pop();
            let posting = lists[t][cursors[t]];
            score += contribution(t, posting.weight as f64, doc);
            cursors[t] += 1;
            if let Some(next) = lists[t].get(cursors[t]) {
                frontier.push(std::cmp::Reverse((next.doc, t)));
            }
        }
        top.push(score, &docs[doc as usize].id);
    }
    Ok(top.finish(q.owner_id()))
}

pub fn search_bm25(
    index: &InvertedIndex,
    q: &SparseVector,
    params: &Bm25Params,
    top_n: usize,
) -> Result<RankedList> {
    params.validate()?;
    check_query(index, q)?;
    let factors: Vec<f64> = q
        .entries()
        .iter()
        .map(|&(j, wq)| Ok(wq as f64 * params.idf(index.n_docs(), index.doc_freq(j)?)))
        .collect::<Result<_>>()?;
    let norms: Vec<f64> = index
        .docs()
        .iter()
        .map(|d| params.length_norm(d.length, index.avgdl()))
        .collect();
    let k1 = params.k1;
    traverse(index, q, top_n, |t, wd, doc| {
        factors[t] * (wd * (k1 + 1.0)) / (wd + k1 * norms[doc as usize])
    })
}

pub fn search_dot(index: &InvertedIndex, q: &SparseVector, top_n: usize) -> Result<RankedList> {
    let weights: Vec<f64> = q.entries().iter().map(|e| e.1 as f64).collect();
    traverse(index, q, top_n, |t, wd, _| weights[t] * wd)
}

pub fn search(
    index: &InvertedIndex,
    q: &SparseVector,
    scoring: &Scoring,
    top_n: usize,
) -> Result<RankedList> {
    match scoring {
        Scoring::Bm25(params) => search_bm25(index, q, params, top_n),
        Scoring::Dot => search_dot(index, q, top_n),
    }
}

/// Runs every query, one work item per query.
pub fn search_batch(
    index: &InvertedIndex,
    queries: &[SparseVector],
    scoring: &Scoring,
    top_n: usize,
    exec: Execution,
) -> Result<Vec<RankedList>> {
    exec.map(queries, |q| search(index, q, scoring, top_n))
        .into_iter()
        .collect()
}

/// Reference scorer: recomputes collection statistics from the raw vectors
/// and scores every document directly. Meant for verification only.
pub fn brute_force_search(
    vectors: &[SparseVector],
    q: &SparseVector,
    scoring: &Scoring,
    top_n: usize,
) -> Result<RankedList> {
    if top_n == 0 {
        return Err(Error::InvalidConfig("top_n must be at least 1".into()));
    }
    if q.is_empty() {
        return Ok(RankedList {
            query_id: q.owner_id().to_owned(),
            hits: Vec::new(),
            empty_query: true,
        });
    }
    let n = vectors.len();
    let mut doc_freq: HashMap<u32, usize> = HashMap::new();
    let mut total_len = 0.0f64;
    let lengths: Vec<f64> = vectors
        .iter()
        .map(|v| {
            for &(j, _) in v.entries() {
                *doc_freq.entry(j).or_default() += 1;
            }
            let len: f64 = v.entries().iter().map(|e| e.1 as f64).sum();
            total_len += len;
            len
        })
        .collect();
    let avgdl = if n > 0 { total_len / n as f64 } else { 0.0 };

    let mut scored: Vec<(f64, &str)> = Vec::new();
    for (v, &len) in vectors.iter().zip(&lengths) {
        let mut score = 0.0f64;
        let mut matched = false;
        for &(j, wq) in q.entries() {
            let Some(wd) = v.weight(j) else { continue };
            matched = true;
            let (wq, wd) = (wq as f64, wd as f64);
            score += match scoring {
                Scoring::Dot => wq * wd,
                Scoring::Bm25(p) => {
                    let df = doc_freq[&j] as f64;
                    let mut idf = ((n as f64 - df + 0.5) / (df + 0.5)).ln();
                    if let Some(floor) = p.idf_floor {
                        idf = idf.max(floor);
                    }
                    let ratio = if avgdl > 0.0 { len / avgdl } else { 1.0 };
                    let norm = 1.0 - p.b + p.b * ratio;
                    wq * idf * (wd * (p.k1 + 1.0)) / (wd + p.k1 * norm)
                }
            };
        }
        if matched {
            scored.push((score, v.owner_id()));
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.truncate(top_n);
    Ok(RankedList {
        query_id: q.owner_id().to_owned(),
        hits: scored
            .into_iter()
            .map(|(score, id)| Hit {
                doc_id: id.to_owned(),
                score,
            })
            .collect(),
        empty_query: false,
    })
}
