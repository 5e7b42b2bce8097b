use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::table::{is_categorical, TokenRow};
use super::{AnalysisSession, QueryError, QueryResult};
use crate::behavioural::NUMERIC_METRICS;
use crate::bundle::TokenId;
use crate::stats::{mean, population_std, quantile_sorted};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub value: String,
    pub count: usize,
    pub percent: f64,
}

/// Counts of the chosen categorical (rows) against gold labels (columns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossTab {
    pub values: Vec<String>,
    pub gold: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub max: f64,
}

impl NumericSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(NumericSummary {
            count: v.len(),
            mean: mean(&v)?,
            std: population_std(&v)?,
            min: v[0],
            p25: quantile_sorted(&v, 0.25)?,
            p50: quantile_sorted(&v, 0.5)?,
            p75: quantile_sorted(&v, 0.75)?,
            max: v[v.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub ids: Vec<TokenId>,
    pub size: usize,
    pub categorical: String,
    pub breakdown: Vec<CategoryCount>,
    pub cross_tab: CrossTab,
    /// Per numeric metric; metrics with no values in the selection are absent.
    pub numeric: BTreeMap<String, NumericSummary>,
}

impl AnalysisSession {
    pub fn selection_summary(&self, ids: &[String], categorical: &str) -> QueryResult<SelectionSummary> {
        if !is_categorical(categorical) {
            return Err(QueryError::Unprocessable(format!("unknown categorical `{categorical}`")));
        }
        let rows = self.token_rows()?;
        let by_id: HashMap<TokenId, &TokenRow> = rows.iter().map(|r| (r.metrics.id, r)).collect();
        let mut unique = BTreeSet::new();
        for raw in ids {
            let id: TokenId = raw.parse().map_err(|_| QueryError::Unprocessable(format!("malformed token id `{raw}`")))?;
            if !by_id.contains_key(&id) {
                return Err(QueryError::NotFound(format!("token `{raw}` is not in the token table")));
            }
            unique.insert(id);
        }
        let selected: Vec<&TokenRow> = unique.iter().map(|id| by_id[id]).collect();
        let n = selected.len();

        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut cross: BTreeMap<(String, String), usize> = BTreeMap::new();
        let mut gold_set = BTreeSet::new();
        for r in &selected {
            let v = r.categorical(categorical).expect("categorical checked above");
            *counts.entry(v.clone()).or_default() += 1;
            *cross.entry((v, r.metrics.gold.clone())).or_default() += 1;
            gold_set.insert(r.metrics.gold.clone());
        }
        let breakdown = counts
            .iter()
            .map(|(value, &count)| CategoryCount {
                value: value.clone(),
                count,
                percent: 100.0 * count as f64 / n as f64,
            })
            .collect();
        // gold columns follow the label-set order
        let gold: Vec<String> = self
            .bundle()
            .labels
            .labels()
            .iter()
            .filter(|l| gold_set.contains(*l))
            .cloned()
            .collect();
        let values: Vec<String> = counts.keys().cloned().collect();
        let cross_tab = CrossTab {
            counts: values
                .iter()
                .map(|v| {
                    gold.iter()
                        .map(|g| cross.get(&(v.clone(), g.clone())).copied().unwrap_or(0))
                        .collect()
                })
                .collect(),
            values,
            gold,
        };
        let numeric = NUMERIC_METRICS
            .iter()
            .filter_map(|m| {
                let v: Vec<f64> = selected.iter().filter_map(|r| r.numeric(m)).collect();
                NumericSummary::of(&v).map(|s| (m.to_string(), s))
            })
            .collect();
        Ok(SelectionSummary {
            ids: unique.into_iter().collect(),
            size: n,
            categorical: categorical.to_string(),
            breakdown,
            cross_tab,
            numeric,
        })
    }
}
