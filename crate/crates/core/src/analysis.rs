//! Collection statistics over the latent vocabulary.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::index::{FeatureStatistic, InvertedIndex};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankRow {
    pub rank: usize,
    pub feature_id: u32,
    pub value: f64,
}

/// Features with a positive statistic, largest first. Ties keep the lower
/// feature id first.
pub fn rank_frequency(index: &InvertedIndex, statistic: FeatureStatistic) -> Vec<RankRow> {
    let mut rows: Vec<(u32, f64)> = (0..index.m() as u32)
        .map(|j| (j, index.statistic(j, statistic).expect("feature in range")))
        .filter(|&(_, v)| v > 0.0)
        .collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    rows.into_iter()
        .enumerate()
        .map(|(i, (feature_id, value))| RankRow {
            rank: i + 1,
            feature_id,
            value,
        })
        .collect()
}

pub fn rank_frequency_csv(rows: &[RankRow]) -> String {
    let mut out = String::from("rank,feature_id,value\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.rank, r.feature_id, r.value).expect("write to string");
    }
    out
}

pub fn write_rank_frequency(rows: &[RankRow], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, rank_frequency_csv(rows))?;
    Ok(())
}

/// Least-squares slope of `ln(value)` against `ln(rank)`.
pub fn loglog_slope(rows: &[RankRow]) -> Option<f64> {
    if rows.len() < 2 {
        return None;
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.rank as f64).ln(), r.value.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeatureSummary {
    pub feature_id: u32,
    pub doc_freq: usize,
    pub total_mass: f64,
    pub max_weight: f32,
    pub idf: f64,
}

pub fn feature_summary(index: &InvertedIndex, feature: u32) -> Result<FeatureSummary> {
    if feature as usize >= index.m() {
        return Err(Error::InvalidFeature {
            feature,
            m: index.m(),
        });
    }
    let postings = index.postings(feature)?;
    Ok(FeatureSummary {
        feature_id: feature,
        doc_freq: postings.len(),
        total_mass: index.total_mass(feature)?,
        max_weight: postings.iter().map(|p| p.weight).fold(0.0, f32::max),
        idf: index.idf(feature)?,
    })
}
