//! Token- and entity-level scoring, the span error taxonomy and
//! support-performance correlation.

mod correlation;
mod outcomes;
mod report;
mod taxonomy;

use serde::{Deserialize, Serialize};

pub use correlation::{support_correlation, SupportCorrelation};
pub use outcomes::{
    entity_outcomes, outcome_proportions, token_confusion_matrix, token_outcomes, ClassCounts, ConfusionMatrix,
    Level, OutcomeCounts, OutcomeShares,
};
pub use report::{build_report, Aggregates, ClassMetrics, ClassificationReport, Prf, ReportOptions};
pub use taxonomy::{
    classify_span_errors, entity_confusion_matrix, summarize_errors, ErrorKind, ErrorSummary, Side, SpanErrorJson,
    SpanErrorRecord,
};

use crate::bundle::{ExtractionBundle, LabelId, Split};
use crate::error::Result;
use crate::spans::{decode_labels, DecodeMode, Span};

/// Gold and predicted labels of every scored test token, in id order.
pub fn token_label_pairs(bundle: &ExtractionBundle) -> (Vec<LabelId>, Vec<LabelId>) {
    bundle
        .core_tokens(Split::Test)
        .iter()
        .filter_map(|t| t.predicted_label.map(|p| (t.gold_label, p)))
        .unzip()
}

/// Decoded gold and predicted spans over the whole test split.
pub fn test_spans(bundle: &ExtractionBundle, mode: DecodeMode) -> (Vec<Span>, Vec<Span>) {
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for s in 0..bundle.sentences(Split::Test).len() {
        gold.extend(decode_labels(&bundle.labels, &bundle.sentence_gold(Split::Test, s), mode, s));
        pred.extend(decode_labels(&bundle.labels, &bundle.sentence_pred(Split::Test, s), mode, s));
    }
    (gold, pred)
}

/// Everything `score` reports for one level and mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreOutput {
    pub report: ClassificationReport,
    pub outcomes: OutcomeCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors: Option<ErrorSummary>,
}

pub fn score_bundle(
    bundle: &ExtractionBundle,
    level: Level,
    mode: DecodeMode,
    opts: ReportOptions,
) -> Result<ScoreOutput> {
    let outside = bundle.labels.outside_label();
    match level {
        Level::Token => {
            let (g, p) = token_label_pairs(bundle);
            let outcomes = token_outcomes(&bundle.labels, &g, &p)?;
            Ok(ScoreOutput {
                report: build_report(&outcomes, None, outside, opts),
                outcomes,
                errors: None,
            })
        }
        Level::Entity => {
            let (g, p) = test_spans(bundle, mode);
            let outcomes = entity_outcomes(&bundle.labels, &g, &p);
            let records = classify_span_errors(&g, &p);
            Ok(ScoreOutput {
                report: build_report(&outcomes, Some(mode), outside, opts),
                outcomes,
                errors: Some(summarize_errors(&bundle.labels, &records)),
            })
        }
    }
}
