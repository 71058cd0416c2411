//! Relevance judgments, TREC run files, rank-cutoff metrics and grid tuning.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::index::build_index;
use crate::latent::{transform_corpus, PhiTransform, SparseVector};
use crate::scorer::{search_batch, Bm25Params, Hit, RankedList, Scoring};

/// Graded judgments keyed by query then document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QrelSet {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl QrelSet {
    pub fn insert(&mut self, query: &str, doc: &str, relevance: u32) -> bool {
        self.judgments
            .entry(query.to_owned())
            .or_default()
            .insert(doc.to_owned(), relevance)
            .is_none()
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn relevance(&self, query: &str, doc: &str) -> u32 {
        self.judgments
            .get(query)
            .and_then(|docs| docs.get(doc))
            .copied()
            .unwrap_or(0)
    }

    pub fn query(&self, query: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query)
    }

    /// Queries with at least one document of positive relevance.
    pub fn judged_queries(&self) -> impl Iterator<Item = &str> {
        self.judgments
            .iter()
            .filter(|(_, docs)| docs.values().any(|&r| r > 0))
            .map(|(q, _)| q.as_str())
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::ParseError {
        line,
        message: message.into(),
    }
}

/// Parses qrels. Accepts the tab-separated `query-id corpus-id score` layout
/// (optional header) and four-column TREC qrels `qid iter docid rel`.
pub fn parse_qrels(text: &str) -> Result<QrelSet> {
    let mut qrels = QrelSet::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 && fields.first() == Some(&"query-id") {
            continue;
        }
        let (q, d, rel) = match fields.as_slice() {
            [q, d, rel] => (*q, *d, *rel),
            [q, _, d, rel] => (*q, *d, *rel),
            _ => {
                return Err(parse_err(
                    line_no,
                    format!("expected 3 or 4 fields, found {}", fields.len()),
                ))
            }
        };
        let rel: i64 = rel
            .parse()
            .map_err(|_| parse_err(line_no, format!("relevance `{rel}` is not an integer")))?;
        let rel = u32::try_from(rel)
            .map_err(|_| parse_err(line_no, format!("relevance {rel} is negative or too large")))?;
        if !qrels.insert(q, d, rel) {
            return Err(parse_err(
                line_no,
                format!("duplicate judgment for ({q}, {d})"),
            ));
        }
    }
    Ok(qrels)
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<QrelSet> {
    parse_qrels(&fs::read_to_string(path)?)
}

/// Ranked results per query, best first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    pub tag: String,
    queries: BTreeMap<String, Vec<Hit>>,
}

pub const DEFAULT_RUN_TAG: &str = "latent-terms";

impl Run {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            queries: BTreeMap::new(),
        }
    }

    pub fn from_lists(lists: &[RankedList], tag: impl Into<String>) -> Self {
        let mut run = Self::new(tag);
        for list in lists {
            run.queries.insert(list.query_id.clone(), list.hits.clone());
        }
        run
    }

    pub fn insert(&mut self, query: impl Into<String>, hits: Vec<Hit>) {
        self.queries.insert(query.into(), hits);
    }

    pub fn hits(&self, query: &str) -> Option<&[Hit]> {
        self.queries.get(query).map(Vec::as_slice)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Keeps at most `depth` results per query.
    pub fn truncated(&self, depth: usize) -> Run {
        Run {
            tag: self.tag.clone(),
            queries: self
                .queries
                .iter()
                .map(|(q, hits)| (q.clone(), hits.iter().take(depth).cloned().collect()))
                .collect(),
        }
    }
}

/// TREC run lines `qid Q0 docid rank score tag`, queries in id order.
pub fn format_run(run: &Run) -> String {
    let mut out = String::new();
    for (q, hits) in &run.queries {
        for (rank, hit) in hits.iter().enumerate() {
            let _ = writeln!(
                out,
                "{q} Q0 {} {} {} {}",
                hit.doc_id,
                rank + 1,
                hit.score,
                run.tag
            );
        }
    }
    out
}

pub fn write_run(run: &Run, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_run(run))?;
    Ok(())
}

/// Parses a TREC run. Results of each query are ordered by the rank column.
pub fn parse_run(text: &str) -> Result<Run> {
    let mut ranked: BTreeMap<String, Vec<(u64, Hit)>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    let mut tag: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [q, _, d, rank, score, run_tag] = fields.as_slice() else {
            return Err(parse_err(
                line_no,
                format!("expected 6 fields, found {}", fields.len()),
            ));
        };
        let rank: u64 = rank
            .parse()
            .map_err(|_| parse_err(line_no, format!("rank `{rank}` is not an integer")))?;
        let score: f64 = score
            .parse()
            .map_err(|_| parse_err(line_no, format!("score `{score}` is not a number")))?;
        if !seen.insert((q.to_string(), d.to_string())) {
            return Err(parse_err(line_no, format!("duplicate result ({q}, {d})")));
        }
        tag.get_or_insert_with(|| run_tag.to_string());
        ranked.entry(q.to_string()).or_default().push((
            rank,
            Hit {
                doc_id: d.to_string(),
                score,
            },
        ));
    }
    let queries = ranked
        .into_iter()
        .map(|(q, mut hits)| {
            hits.sort_by_key(|h| h.0);
            (q, hits.into_iter().map(|h| h.1).collect())
        })
        .collect();
    Ok(Run {
        tag: tag.unwrap_or_else(|| DEFAULT_RUN_TAG.to_owned()),
        queries,
    })
}

pub fn load_run(path: impl AsRef<Path>) -> Result<Run> {
    parse_run(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ndcg,
    Recall,
    Mrr,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Ndcg => "ndcg",
            Metric::Recall => "recall",
            Metric::Mrr => "mrr",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ndcg" => Ok(Metric::Ndcg),
            "recall" => Ok(Metric::Recall),
            "mrr" => Ok(Metric::Mrr),
            other => Err(Error::InvalidConfig(format!("unknown metric `{other}`"))),
        }
    }
}

/// How queries outside `run ∩ judged` enter the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingQueries {
    /// Averaged over queries that are both in the run and judged.
    #[default]
    Exclude,
    /// Every query in the run or judged counts; the others score 0.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: Metric,
    pub k: usize,
    pub mean: f64,
    pub per_query: BTreeMap<String, f64>,
}

fn query_value(metric: Metric, hits: &[Hit], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    let top = &hits[..hits.len().min(k)];
    match metric {
        Metric::Ndcg => {
            let gain = |rel: u32| 2f64.powi(rel as i32) - 1.0;
            let discount = |rank: usize| (rank as f64 + 1.0).log2();
            let dcg: f64 = top
                .iter()
                .enumerate()
                .map(|(i, h)| gain(judged.get(&h.doc_id).copied().unwrap_or(0)) / discount(i + 1))
                .sum();
            let mut ideal: Vec<u32> = judged.values().copied().filter(|&r| r > 0).collect();
            ideal.sort_unstable_by(|a, b| b.cmp(a));
            let idcg: f64 = ideal
                .iter()
                .take(k)
                .enumerate()
                .map(|(i, &r)| gain(r) / discount(i + 1))
                .sum();
            if idcg > 0.0 {
                dcg / idcg
            } else {
                0.0
            }
        }
        Metric::Recall => {
            let relevant = judged.values().filter(|&&r| r > 0).count();
            let found = top
                .iter()
                .filter(|h| judged.get(&h.doc_id).is_some_and(|&r| r > 0))
                .count();
            found as f64 / relevant as f64
        }
        Metric::Mrr => top
            .iter()
            .position(|h| judged.get(&h.doc_id).is_some_and(|&r| r > 0))
            .map_or(0.0, |i| 1.0 / (i as f64 + 1.0)),
    }
}

pub fn evaluate(
    run: &Run,
    qrels: &QrelSet,
    metric: Metric,
    k: usize,
    missing: MissingQueries,
) -> Result<MetricReport> {
    if k == 0 {
        return Err(Error::InvalidConfig("cutoff k must be at least 1".into()));
    }
    let judged: BTreeSet<&str> = qrels.judged_queries().collect();
    let mut per_query = BTreeMap::new();
    for q in &judged {
        if let Some(hits) = run.hits(q) {
            let docs = qrels.query(q).expect("judged query has judgments");
            per_query.insert(q.to_string(), query_value(metric, hits, docs, k));
        }
    }
    if missing == MissingQueries::Zero {
        for q in judged.iter().copied().chain(run.query_ids()) {
            per_query.entry(q.to_string()).or_insert(0.0);
        }
    }
    if per_query.is_empty() {
        return Err(Error::NoJudgedQueries);
    }
    let mean = per_query.values().sum::<f64>() / per_query.len() as f64;
    Ok(MetricReport {
        metric,
        k,
        mean,
        per_query,
    })
}

pub fn ndcg_at_k(run: &Run, qrels: &QrelSet, k: usize) -> Result<f64> {
    evaluate(run, qrels, Metric::Ndcg, k, MissingQueries::Exclude).map(|r| r.mean)
}

pub fn recall_at_k(run: &Run, qrels: &QrelSet, k: usize) -> Result<f64> {
    evaluate(run, qrels, Metric::Recall, k, MissingQueries::Exclude).map(|r| r.mean)
}

pub fn mrr_at_k(run: &Run, qrels: &QrelSet, k: usize) -> Result<f64> {
    evaluate(run, qrels, Metric::Mrr, k, MissingQueries::Exclude).map(|r| r.mean)
}

/// Candidate values for grid search. `alpha` in a grid file sets both
/// `alpha_doc` and `alpha_query`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneGrid {
    pub k1: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(default)]
    pub alpha_doc: Vec<f64>,
    #[serde(default)]
    pub alpha_query: Vec<f64>,
    #[serde(default, skip_serializing)]
    pub alpha: Vec<f64>,
}

impl Default for TuneGrid {
    fn default() -> Self {
        Self {
            k1: vec![8.0],
            b: vec![0.7],
            alpha_doc: vec![0.5],
            alpha_query: vec![0.5],
            alpha: Vec::new(),
        }
    }
}

impl TuneGrid {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut grid: TuneGrid =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("grid: {e}")))?;
        if !grid.alpha.is_empty() {
            if grid.alpha_doc.is_empty() {
                grid.alpha_doc = grid.alpha.clone();
            }
            if grid.alpha_query.is_empty() {
                grid.alpha_query = grid.alpha.clone();
            }
        }
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k1.is_empty()
            || self.b.is_empty()
            || self.alpha_doc.is_empty()
            || self.alpha_query.is_empty()
        {
            return Err(Error::InvalidConfig(
                "every grid axis needs at least one value".into(),
            ));
        }
        for &k1 in &self.k1 {
            for &b in &self.b {
                Bm25Params::new(k1, b)?;
            }
        }
        for &a in self.alpha_doc.iter().chain(&self.alpha_query) {
            PhiTransform::power(a)?;
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.k1.len() * self.b.len() * self.alpha_doc.len() * self.alpha_query.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TuneCell {
    pub k1: f64,
    pub b: f64,
    pub alpha_doc: f64,
    pub alpha_query: f64,
}

impl TuneCell {
    fn preference(&self, other: &TuneCell) -> std::cmp::Ordering {
        let dist = |c: &TuneCell| (c.alpha_doc - 0.5).abs() + (c.alpha_query - 0.5).abs();
        self.k1
            .total_cmp(&other.k1)
            .then(self.b.total_cmp(&other.b))
            .then(dist(self).total_cmp(&dist(other)))
            .then(self.alpha_doc.total_cmp(&other.alpha_doc))
            .then(self.alpha_query.total_cmp(&other.alpha_query))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TuneRow {
    pub cell: TuneCell,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneResult {
    pub metric: Metric,
    pub k: usize,
    pub best: TuneCell,
    pub best_value: f64,
    pub table: Vec<TuneRow>,
    pub caveat: &'static str,
}

pub const TUNING_CAVEAT: &str = "parameters were selected on the same queries they are scored on";

/// Options shared by every grid cell.
#[derive(Debug, Clone, Copy)]
pub struct TuneOptions {
    pub metric: Metric,
    pub k: usize,
    /// Retrieval depth per query.
    pub top_n: usize,
    pub missing: MissingQueries,
    pub exec: Execution,
}

/// Evaluates every `(k1, b, α_doc, α_query)` cell. `docs` and `queries` are
/// raw pooled vectors (before φ); the document index is rebuilt once per
/// `α_doc`.
pub fn tune_grid(
    docs: &[SparseVector],
    m: usize,
    queries: &[SparseVector],
    qrels: &QrelSet,
    grid: &TuneGrid,
    options: TuneOptions,
) -> Result<TuneResult> {
    grid.validate()?;
    let mut table = Vec::with_capacity(grid.cells());
    for &alpha_doc in &grid.alpha_doc {
        let index = build_index(&transform_corpus(docs, PhiTransform::power(alpha_doc)?), m)?;
        for &alpha_query in &grid.alpha_query {
            let qs = transform_corpus(queries, PhiTransform::power(alpha_query)?);
            for &k1 in &grid.k1 {
                for &b in &grid.b {
                    let scoring = Scoring::Bm25(Bm25Params::new(k1, b)?);
                    let lists = search_batch(&index, &qs, &scoring, options.top_n, options.exec)?;
                    let run = Run::from_lists(&lists, DEFAULT_RUN_TAG);
                    let value =
                        evaluate(&run, qrels, options.metric, options.k, options.missing)?.mean;
                    table.push(TuneRow {
                        cell: TuneCell {
                            k1,
                            b,
                            alpha_doc,
                            alpha_query,
                        },
                        value,
                    });
                }
            }
        }
    }
    let best = *table
        .iter()
        .min_by(|x, y| {
            y.value
                .total_cmp(&x.value)
                .then_with(|| x.cell.preference(&y.cell))
        })
        .expect("validated grid is nonempty");
    Ok(TuneResult {
        metric: options.metric,
        k: options.k,
        best: best.cell,
        best_value: best.value,
        table,
        caveat: TUNING_CAVEAT,
    })
}
