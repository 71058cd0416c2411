#![allow(dead_code)]

pub mod fixtures;
pub mod grad;

use std::collections::{BTreeMap, BTreeSet};

use latent_terms::latent::SparseVector;
use latent_terms::scorer::{Bm25Params, RankedList};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

/// Random sparse vectors with around `nnz` distinct features each.
pub fn random_vectors<R: Rng>(
    rng: &mut R,
    prefix: &str,
    n: usize,
    m: usize,
    nnz: usize,
) -> Vec<SparseVector> {
    (0..n)
        .map(|i| {
            let target = rng.random_range(nnz / 2 + 1..=nnz + nnz / 2);
            let mut ids = BTreeSet::new();
            while ids.len() < target.min(m) {
                ids.insert(rng.random_range(0..m as u32));
            }
            let entries = ids
                .into_iter()
                .map(|j| (j, rng.random_range(0.05f32..4.0)))
                .collect();
            SparseVector::new(format!("{prefix}{i:04}"), entries).unwrap()
        })
        .collect()
}

/// Dense copy of the vectors, one row per document.
pub fn densify(vectors: &[SparseVector], m: usize) -> Vec<Vec<f64>> {
    vectors
        .iter()
        .map(|v| {
            let mut row = vec![0.0; m];
            for &(j, w) in v.entries() {
                row[j as usize] = w as f64;
            }
            row
        })
        .collect()
}

/// BM25 over a dense document matrix, written out term by term.
pub fn dense_bm25(docs: &[Vec<f64>], q: &[f64], params: &Bm25Params) -> Vec<f64> {
    let n = docs.len() as f64;
    let m = q.len();
    let lengths: Vec<f64> = docs.iter().map(|r| r.iter().sum()).collect();
    let avgdl = lengths.iter().sum::<f64>() / n;
    let df: Vec<f64> = (0..m)
        .map(|j| docs.iter().filter(|r| r[j] > 0.0).count() as f64)
        .collect();
    docs.iter()
        .zip(&lengths)
        .map(|(row, len)| {
            let k = 1.0 - params.b + params.b * len / avgdl;
            (0..m)
                .filter(|&j| q[j] > 0.0 && row[j] > 0.0)
                .map(|j| {
                    let idf = ((n - df[j] + 0.5) / (df[j] + 0.5)).ln();
                    let idf = params.idf_floor.map_or(idf, |f| idf.max(f));
                    q[j] * idf * row[j] * (params.k1 + 1.0) / (row[j] + params.k1 * k)
                })
                .sum()
        })
        .collect()
}

pub fn dense_dot(docs: &[Vec<f64>], q: &[f64]) -> Vec<f64> {
    docs.iter()
        .map(|row| row.iter().zip(q).map(|(a, b)| a * b).sum())
        .collect()
}

/// Checks a ranked list against dense scores: every listed score within
/// `tol`, and no unlisted matching document outscoring the last hit.
pub fn agrees_with_dense(
    list: &RankedList,
    ids: &[&str],
    dense: &[f64],
    matches: &[bool],
    top_n: usize,
    tol: f64,
) -> bool {
    let mut expected: Vec<(f64, &str)> = dense
        .iter()
        .zip(ids)
        .zip(matches)
        .filter(|(_, &hit)| hit)
        .map(|((&s, &id), _)| (s, id))
        .collect();
    expected.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    expected.truncate(top_n);
    if expected.len() != list.hits.len() {
        return false;
    }
    list.hits.iter().zip(&expected).all(|(h, e)| {
        let pos = ids.iter().position(|id| *id == h.doc_id).unwrap();
        (h.score - dense[pos]).abs() <= tol && (h.score - e.0).abs() <= tol
    })
}

pub fn matches(docs: &[Vec<f64>], q: &[f64]) -> Vec<bool> {
    docs.iter()
        .map(|r| r.iter().zip(q).any(|(a, b)| *a > 0.0 && *b > 0.0))
        .collect()
}

/// Documents whose features are drawn from a Zipf(1.0) law over `m`
/// features; a feature drawn `c` times carries weight `c`.
pub fn zipf_corpus(seed: u64, n_docs: usize, draws: usize, m: usize) -> Vec<SparseVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let law = Zipf::new(m as f64, 1.0).unwrap();
    (0..n_docs)
        .map(|i| {
            let mut counts: BTreeMap<u32, f32> = BTreeMap::new();
            for _ in 0..draws {
                *counts.entry(law.sample(&mut rng) as u32 - 1).or_default() += 1.0;
            }
            SparseVector::new(format!("z{i}"), counts.into_iter().collect()).unwrap()
        })
        .collect()
}
