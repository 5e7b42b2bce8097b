//! Representation analyses over token embeddings: clustering and its
//! alignment with gold labels, centroid similarity, pre/post fine-tuning
//! shift and a 2-D projection fallback.

mod alignment;
mod kmeans;
mod projection;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bundle::{LabelId, LabelSet};
use crate::error::{Error, Result};
use crate::stats::{cosine, mean, norm};

pub use alignment::{alignment_scores, alignment_scores_raw, AlignmentScores, LabelFamily};
pub use kmeans::{kmeans_cluster, ClusteringResult, KMeansOptions};
pub use projection::{project_fallback, Projection};

/// Mean cosine between each label's tokens and each cluster centroid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentroidSimilarity {
    pub labels: Vec<String>,
    pub k: usize,
    /// `cells[label][cluster]`; `None` for labels with no tokens.
    pub cells: Vec<Vec<Option<f64>>>,
}

pub fn centroid_label_similarity(
    labels: &LabelSet,
    rows: &[&[f32]],
    gold: &[LabelId],
    clustering: &ClusteringResult,
) -> Result<CentroidSimilarity> {
    if rows.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: gold.len(),
        });
    }
    let centroids: Vec<Vec<f32>> = clustering
        .centroids
        .iter()
        .map(|c| c.iter().map(|&v| v as f32).collect())
        .collect();
    let mut sims: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); clustering.k]; labels.len()];
    for (row, g) in rows.iter().zip(gold) {
        for (c, centroid) in centroids.iter().enumerate() {
            sims[g.index()][c].push(cosine(row, centroid).unwrap_or(0.0));
        }
    }
    Ok(CentroidSimilarity {
        labels: labels.labels().to_vec(),
        k: clustering.k,
        cells: sims
            .iter()
            .map(|per| per.iter().map(|v| mean(v)).collect())
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceShift {
    pub surface: String,
    pub count: usize,
    pub mean_similarity: f64,
    /// `1 - mean_similarity`.
    pub shift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    /// Per-token cosine between pre and post vectors; `None` for zero rows.
    pub similarities: Vec<Option<f64>>,
    /// Surfaces ordered by descending shift, then surface. Surfaces with no
    /// measurable shift are left out.
    pub top: Vec<SurfaceShift>,
}

pub fn representation_shift(
    pre: &[&[f32]],
    post: &[&[f32]],
    surfaces: &[&str],
    top_n: usize,
) -> Result<ShiftReport> {
    if pre.len() != post.len() || pre.len() != surfaces.len() {
        return Err(Error::LengthMismatch {
            left: pre.len(),
            right: post.len().min(surfaces.len()),
        });
    }
    let similarities: Vec<Option<f64>> = pre
        .iter()
        .zip(post)
        .map(|(a, b)| cosine(a, b).map(|s| s.clamp(-1.0, 1.0)))
        .collect();
    let mut by_surface: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (s, sim) in surfaces.iter().zip(&similarities) {
        if let Some(v) = sim {
            by_surface.entry(s).or_default().push(*v);
        }
    }
    let mut top: Vec<SurfaceShift> = by_surface
        .into_iter()
        .filter_map(|(surface, v)| {
            let m = mean(&v)?;
            let shift = 1.0 - m;
            (shift > 1e-9).then(|| SurfaceShift {
                surface: surface.to_string(),
                count: v.len(),
                mean_similarity: m,
                shift,
            })
        })
        .collect();
    top.sort_by(|a, b| b.shift.total_cmp(&a.shift).then_with(|| a.surface.cmp(&b.surface)));
    top.truncate(top_n);
    Ok(ShiftReport { similarities, top })
}

/// True when a row has zero norm and cannot take part in cosine measures.
pub fn is_zero_row(row: &[f32]) -> bool {
    norm(row) == 0.0
}
