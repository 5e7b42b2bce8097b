use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bundle::{LabelId, LabelSet, Tag};
use crate::error::{Error, Result};

/// How full tags collapse into reference classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelFamily {
    /// B / I / O.
    Chunk3,
    /// Entity type, or O.
    Type5,
    /// The full tag.
    Tag9,
}

impl LabelFamily {
    pub const ALL: [LabelFamily; 3] = [LabelFamily::Chunk3, LabelFamily::Type5, LabelFamily::Tag9];

    /// Cluster count paired with this family in the headline table.
    pub fn default_k(self) -> usize {
        match self {
            LabelFamily::Chunk3 => 3,
            LabelFamily::Type5 => 4,
            LabelFamily::Tag9 => 9,
        }
    }

    pub fn class_of(self, labels: &LabelSet, id: LabelId) -> usize {
        match (self, labels.tag(id)) {
            (LabelFamily::Tag9, _) => id.index(),
            (LabelFamily::Chunk3, Tag::Outside) => 0,
            (LabelFamily::Chunk3, Tag::Begin(_)) => 1,
            (LabelFamily::Chunk3, Tag::Inside(_)) => 2,
            (LabelFamily::Type5, Tag::Outside) => 0,
            (LabelFamily::Type5, Tag::Begin(t) | Tag::Inside(t)) => t.index() + 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScores {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
    pub family: LabelFamily,
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// (homogeneity, completeness, v-measure) of a clustering against classes.
pub fn alignment_scores_raw(clusters: &[usize], classes: &[usize]) -> (f64, f64, f64) {
    let n = clusters.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut by_cluster: BTreeMap<usize, usize> = BTreeMap::new();
    let mut by_class: BTreeMap<usize, usize> = BTreeMap::new();
    for (&k, &c) in clusters.iter().zip(classes) {
        *joint.entry((k, c)).or_default() += 1;
        *by_cluster.entry(k).or_default() += 1;
        *by_class.entry(c).or_default() += 1;
    }
    let cells: Vec<((usize, usize), usize)> = joint.into_iter().collect();
    let h_c = entropy(by_class.values().copied(), n);
    let h_k = entropy(by_cluster.values().copied(), n);
    // H(C|K) = -Σ n_ck/N ln(n_ck/n_k), and symmetrically
    let h_c_given_k: f64 = cells
        .iter()
        .map(|&((k, _), v)| -(v as f64 / n) * (v as f64 / by_cluster[&k] as f64).ln())
        .sum();
    let h_k_given_c: f64 = cells
        .iter()
        .map(|&((_, c), v)| -(v as f64 / n) * (v as f64 / by_class[&c] as f64).ln())
        .sum();
    let h = if h_c == 0.0 { 1.0 } else { (1.0 - h_c_given_k / h_c).clamp(0.0, 1.0) };
    let c = if h_k == 0.0 { 1.0 } else { (1.0 - h_k_given_c / h_k).clamp(0.0, 1.0) };
    let v = if h + c == 0.0 { 0.0 } else { 2.0 * h * c / (h + c) };
    (h, c, v)
}

pub fn alignment_scores(
    labels: &LabelSet,
    assignments: &[usize],
    gold: &[LabelId],
    family: LabelFamily,
) -> Result<AlignmentScores> {
    if assignments.is_empty() {
        return Err(Error::InvalidInput("alignment of an empty clustering".into()));
    }
    if assignments.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: assignments.len(),
            right: gold.len(),
        });
    }
    let classes: Vec<usize> = gold.iter().map(|&g| family.class_of(labels, g)).collect();
    let (homogeneity, completeness, v_measure) = alignment_scores_raw(assignments, &classes);
    Ok(AlignmentScores {
        homogeneity,
        completeness,
        v_measure,
        family,
    })
}
