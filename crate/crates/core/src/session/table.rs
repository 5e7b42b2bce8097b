use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::AnalysisSession;
use crate::behavioural::{TokenMetrics, TokenTable};
use crate::bundle::{Split, TokenId, VocabLevel};
use crate::eval::Side;
use crate::spans::{find_scheme_violations, DecodeMode};

/// One token-table row: behavioural metrics plus the categorical columns the
/// dashboard filters and colours by.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenRow {
    #[serde(flatten)]
    pub metrics: TokenMetrics,
    pub split: Split,
    /// TP / TN / FP / FN, or `FP+FN` for a wrong entity label.
    pub outcome: String,
    /// Kind of the repair-mode span error covering this token, or `none`.
    pub error_kind: String,
    pub gold_violation: bool,
    pub pred_violation: bool,
    pub oov: bool,
}

/// Categorical columns, in table order.
pub const CATEGORICALS: [&str; 9] = [
    "gold",
    "pred",
    "correct",
    "outcome",
    "error_kind",
    "gold_violation",
    "pred_violation",
    "oov",
    "split",
];

impl TokenRow {
    pub fn categorical(&self, name: &str) -> Option<String> {
        Some(match name {
            "gold" => self.metrics.gold.clone(),
            "pred" => self.metrics.pred.clone(),
            "correct" => self.metrics.correct.to_string(),
            "outcome" => self.outcome.clone(),
            "error_kind" => self.error_kind.clone(),
            "gold_violation" => self.gold_violation.to_string(),
            "pred_violation" => self.pred_violation.to_string(),
            "oov" => self.oov.to_string(),
            "split" => self.split.as_str().to_string(),
            _ => return None,
        })
    }

    /// String-valued columns that are not categoricals.
    pub fn text(&self, name: &str) -> Option<String> {
        match name {
            "id" => Some(self.metrics.id.to_string()),
            "surface" => Some(self.metrics.surface.clone()),
            "core_piece" => Some(self.metrics.core_piece.clone()),
            _ => self.categorical(name),
        }
    }

    pub fn numeric(&self, name: &str) -> Option<f64> {
        self.metrics.numeric(canonical_metric(name))
    }
}

/// Resolves the short aliases accepted by queries.
pub fn canonical_metric(name: &str) -> &str {
    match name {
        "ambiguity" => "word_ambiguity",
        "confidence" => "token_confidence",
        "uncertainty" => "prediction_uncertainty",
        "consistency" => "consistency_ratio",
        other => other,
    }
}

pub fn is_numeric(name: &str) -> bool {
    TokenMetrics::is_numeric(canonical_metric(name))
}

pub fn is_categorical(name: &str) -> bool {
    CATEGORICALS.contains(&name)
}

pub(super) fn build_rows(session: &AnalysisSession, table: &TokenTable) -> Vec<TokenRow> {
    let bundle = session.bundle();
    let labels = &bundle.labels;
    let vocab = session.vocab();
    let outside = labels.outside_label();

    // per-token error kind: a covering FP span wins over a covering FN span
    let mut kinds: HashMap<TokenId, (Side, &'static str)> = HashMap::new();
    if let Ok(entity) = session.entity(DecodeMode::Repair) {
        for r in &entity.errors {
            for w in r.span.start..r.span.end {
                let id = TokenId::new(Split::Test, r.span.sentence, w);
                let e = kinds.entry(id).or_insert((r.side, r.kind.as_str()));
                if r.side == Side::FP && e.0 == Side::FN {
                    *e = (r.side, r.kind.as_str());
                }
            }
        }
    }
    let mut violations: HashMap<TokenId, (bool, bool)> = HashMap::new();
    for s in 0..bundle.sentences(Split::Test).len() {
        let g = labels.tags_of(&bundle.sentence_gold(Split::Test, s));
        let p = labels.tags_of(&bundle.sentence_pred(Split::Test, s));
        for v in find_scheme_violations(&g, s) {
            violations.entry(TokenId::new(Split::Test, s, v.index)).or_default().0 = true;
        }
        for v in find_scheme_violations(&p, s) {
            violations.entry(TokenId::new(Split::Test, s, v.index)).or_default().1 = true;
        }
    }

    table
        .rows
        .iter()
        .map(|m| {
            let outcome = match (m.gold == outside, m.pred == outside, m.correct) {
                (true, _, true) => "TN",
                (false, _, true) => "TP",
                (true, false, false) => "FP",
                (false, true, false) => "FN",
                _ => "FP+FN",
            };
            let (gv, pv) = violations.get(&m.id).copied().unwrap_or_default();
            TokenRow {
                split: m.id.split,
                outcome: outcome.to_string(),
                error_kind: kinds.get(&m.id).map_or("none", |k| k.1).to_string(),
                gold_violation: gv,
                pred_violation: pv,
                oov: vocab.counts(VocabLevel::Word, &m.surface, Split::Train).is_empty(),
                metrics: m.clone(),
            }
        })
        .collect()
}
