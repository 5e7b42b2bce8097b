use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{average_ranks, pearson};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportCorrelation {
    /// Absent when either side has zero variance.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    /// Squared rank difference per class, average ranks for ties.
    pub srd: Vec<f64>,
}

/// Pearson (population moments) and Spearman (Pearson of average ranks)
/// between class support and a per-class metric.
pub fn support_correlation(support: &[f64], metric: &[f64]) -> Result<SupportCorrelation> {
    if support.len() != metric.len() {
        return Err(Error::LengthMismatch {
            left: support.len(),
            right: metric.len(),
        });
    }
    if support.len() < 2 {
        return Err(Error::InvalidInput("correlation needs at least two classes".into()));
    }
    let rs = average_ranks(support);
    let rm = average_ranks(metric);
    Ok(SupportCorrelation {
        pearson: pearson(support, metric),
        spearman: pearson(&rs, &rm),
        srd: rs.iter().zip(&rm).map(|(a, b)| (a - b).powi(2)).collect(),
    })
}
