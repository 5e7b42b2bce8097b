use std::fmt;

use serde::Serialize;

use super::labels::{Split, TokenId};
use super::{AttentionStore, EmbeddingKey, ExtractionBundle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Rule {
    UnknownLabel,
    UnknownId,
    EmptySentence,
    SentenceIndex,
    WordIndex,
    PiecesMissing,
    PiecesDuplicate,
    PieceCount,
    CorePiece,
    CoreTokenCount,
    PredictionDuplicate,
    PredictionMissing,
    ProbLen,
    ProbRange,
    ProbSum,
    ArgmaxMismatch,
    LossNegative,
    EmbeddingDim,
    EmbeddingDuplicate,
    EmbeddingRef,
    NonFinite,
    ProjectionAlign,
    ManifestFlag,
    AttentionShape,
    AttentionRowSum,
    WeightsShape,
}

impl Rule {
    pub fn id(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: Rule,
    pub location: String,
    pub message: String,
}

impl Violation {
    pub fn new(rule: Rule, location: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            rule,
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.rule.id(), self.location, self.message)
    }
}

const PROB_SUM_TOL: f64 = 1e-6;
const ATTENTION_ROW_TOL: f64 = 1e-4;

/// Checks every bundle invariant. An empty result means the bundle is valid.
pub fn validate_bundle(bundle: &ExtractionBundle) -> Vec<Violation> {
    let mut out = bundle.load_issues.clone();
    let labels = &bundle.labels;
    let n_labels = labels.len();

    for split in Split::ALL {
        for (si, s) in bundle.sentences(split).iter().enumerate() {
            let loc = format!("{split}:{si}");
            if s.sentence_index != si || s.split != split {
                out.push(Violation::new(Rule::SentenceIndex, &loc, "sentence index not dense"));
            }
            if s.words.is_empty() {
                out.push(Violation::new(Rule::EmptySentence, &loc, "sentence has no words"));
            }
            for (wi, w) in s.words.iter().enumerate() {
                if w.word_index != wi || w.sentence_index != si || w.split != split {
                    out.push(Violation::new(
                        Rule::WordIndex,
                        format!("{loc}:{wi}"),
                        "word index not dense",
                    ));
                }
                if w.gold_label.index() >= n_labels {
                    out.push(Violation::new(Rule::UnknownLabel, format!("{loc}:{wi}"), "gold label out of range"));
                }
            }
        }

        let expected: usize = bundle
            .sentences(split)
            .iter()
            .map(|s| {
                s.words
                    .iter()
                    .filter(|w| !bundle.is_dropped(&TokenId::new(split, s.sentence_index, w.word_index)))
                    .count()
            })
            .sum();
        let tokens = bundle.core_tokens(split);
        if tokens.len() != expected {
            out.push(Violation::new(
                Rule::CoreTokenCount,
                split.as_str(),
                format!("{} core tokens for {expected} words", tokens.len()),
            ));
        }
        if tokens.windows(2).any(|w| w[0].id >= w[1].id) {
            out.push(Violation::new(Rule::CoreTokenCount, split.as_str(), "core tokens not sorted by id"));
        }

        for t in tokens {
            let loc = t.id.to_string();
            if t.piece_count < 1 {
                out.push(Violation::new(Rule::PieceCount, &loc, "piece_count must be at least 1"));
            }
            if let Some(wp) = bundle.word_pieces(&t.id) {
                if wp.pieces.len() != t.piece_count as usize {
                    out.push(Violation::new(
                        Rule::PieceCount,
                        &loc,
                        format!("piece_count {} but {} pieces", t.piece_count, wp.pieces.len()),
                    ));
                }
                if wp.pieces.first() != Some(&t.core_piece) {
                    out.push(Violation::new(Rule::CorePiece, &loc, "core piece is not the first piece"));
                }
            }
            if let Some(loss) = t.loss {
                if loss.is_nan() || loss < 0.0 {
                    out.push(Violation::new(Rule::LossNegative, &loc, format!("loss {loss}")));
                }
            }
            if let Some(probs) = &t.probabilities {
                check_probabilities(&mut out, &loc, probs, n_labels, t.predicted_label.map(|l| l.index()));
            }
            for (r, key) in [
                (t.embedding_ref, EmbeddingKey::FINETUNED_FINAL),
                (t.pretrained_embedding_ref, EmbeddingKey::PRETRAINED_FINAL),
            ] {
                if let Some(r) = r {
                    let ok = bundle
                        .embedding(key)
                        .is_some_and(|tab| r < tab.matrix.rows() && tab.ids[r] == t.id);
                    if !ok {
                        out.push(Violation::new(Rule::EmbeddingRef, &loc, format!("{key} row {r} does not resolve")));
                    }
                }
            }
        }
    }

    let art = &bundle.manifest.artifacts;
    let has_pred = bundle.has_predictions();
    if art.predictions != has_pred {
        out.push(Violation::new(
            Rule::ManifestFlag,
            "manifest.artifacts.predictions",
            format!("declared {} but bundle has predictions: {has_pred}", art.predictions),
        ));
    }
    if has_pred {
        for t in bundle.core_tokens(Split::Test) {
            if t.predicted_label.is_none() || t.probabilities.is_none() {
                out.push(Violation::new(Rule::PredictionMissing, t.id.to_string(), "test token has no prediction"));
            }
        }
    }
    let pieces_present = bundle.pieces(Split::Train).is_some();
    if art.pieces != pieces_present {
        out.push(Violation::new(
            Rule::ManifestFlag,
            "manifest.artifacts.pieces",
            format!("declared {} but present: {pieces_present}", art.pieces),
        ));
    }

    let declared: Vec<String> = {
        let mut v = art.embeddings.clone();
        v.sort();
        v
    };
    let mut present: Vec<String> = bundle.embeddings.keys().map(|k| k.to_string()).collect();
    present.sort();
    if declared != present {
        out.push(Violation::new(
            Rule::ManifestFlag,
            "manifest.artifacts.embeddings",
            format!("declared {declared:?} but present {present:?}"),
        ));
    }
    for (key, table) in &bundle.embeddings {
        let loc = format!("embeddings.{key}");
        if let Some(dim) = bundle.manifest.embedding_dim {
            if table.matrix.dim() != dim {
                out.push(Violation::new(
                    Rule::EmbeddingDim,
                    &loc,
                    format!("dimension {} but manifest says {dim}", table.matrix.dim()),
                ));
            }
        }
        if table.has_duplicates() {
            out.push(Violation::new(Rule::EmbeddingDuplicate, &loc, "duplicate token ids"));
        }
        if table.matrix.data().iter().any(|v| !v.is_finite()) {
            out.push(Violation::new(Rule::NonFinite, &loc, "non-finite embedding value"));
        }
        for id in &table.ids {
            if bundle.core_token(id).is_none() {
                out.push(Violation::new(Rule::EmbeddingRef, id.to_string(), format!("{key} row for unknown core token")));
            }
        }
    }

    if art.projection != bundle.projection.is_some() {
        out.push(Violation::new(Rule::ManifestFlag, "manifest.artifacts.projection", "flag disagrees with contents"));
    }
    if let Some(points) = &bundle.projection {
        let tokens = bundle.core_tokens(Split::Test);
        let aligned = points.len() == tokens.len() && points.iter().zip(tokens).all(|(p, t)| p.id == t.id);
        if !aligned {
            out.push(Violation::new(
                Rule::ProjectionAlign,
                "projection.test",
                format!("{} rows do not align with {} test core tokens", points.len(), tokens.len()),
            ));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            out.push(Violation::new(Rule::NonFinite, "projection.test", "non-finite coordinate"));
        }
    }

    match (&art.attention, &bundle.attention) {
        (Some(index), Some(store)) => {
            let n_test = bundle.sentences(Split::Test).len();
            for entry in &index.sentences {
                let loc = format!("attention/{}", entry.index);
                if entry.index >= n_test {
                    out.push(Violation::new(Rule::AttentionShape, &loc, "sentence index out of range"));
                    continue;
                }
                let pair = match store {
                    AttentionStore::Memory(m) => m.get(&entry.index).cloned().map(Ok),
                    AttentionStore::Disk(_) => bundle.attention_pair(entry.index).transpose(),
                };
                let (pre, post) = match pair {
                    Some(Ok(p)) => p,
                    Some(Err(e)) => {
                        out.push(Violation::new(Rule::AttentionShape, &loc, e.to_string()));
                        continue;
                    }
                    None => {
                        out.push(Violation::new(Rule::AttentionShape, &loc, "declared dump missing"));
                        continue;
                    }
                };
                for d in [&pre, &post] {
                    if d.layers != index.layers || d.heads != index.heads || d.valid_len != entry.valid_len {
                        out.push(Violation::new(
                            Rule::AttentionShape,
                            &loc,
                            format!("{} dims disagree with manifest", d.state.as_str()),
                        ));
                    }
                    if let Some(bad) = row_sum_violation(d) {
                        out.push(Violation::new(Rule::AttentionRowSum, &loc, bad));
                    }
                }
                if (pre.layers, pre.heads, pre.seq) != (post.layers, post.heads, post.seq) {
                    out.push(Violation::new(Rule::AttentionShape, &loc, "pretrained and fine-tuned shapes differ"));
                }
            }
            if let AttentionStore::Memory(m) = store {
                if m.len() != index.sentences.len() {
                    out.push(Violation::new(Rule::ManifestFlag, "manifest.artifacts.attention", "index and dumps disagree"));
                }
            }
        }
        (None, None) => {}
        _ => out.push(Violation::new(Rule::ManifestFlag, "manifest.artifacts.attention", "flag disagrees with contents")),
    }

    if art.attention_weights != bundle.attention_weights.is_some() {
        out.push(Violation::new(Rule::ManifestFlag, "manifest.artifacts.attention_weights", "flag disagrees with contents"));
    }
    if let Some((pre, post)) = &bundle.attention_weights {
        let same = pre.layers == post.layers
            && pre.heads == post.heads
            && pre.vectors.iter().zip(&post.vectors).all(|(a, b)| a.len() == b.len());
        if !same {
            out.push(Violation::new(Rule::WeightsShape, "attention_weights", "pretrained and fine-tuned blocks differ in shape"));
        }
    }
    out
}

fn check_probabilities(out: &mut Vec<Violation>, loc: &str, probs: &[f64], n_labels: usize, pred: Option<usize>) {
    if probs.len() != n_labels {
        out.push(Violation::new(
            Rule::ProbLen,
            loc,
            format!("{} probabilities for {n_labels} labels", probs.len()),
        ));
        return;
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        out.push(Violation::new(Rule::ProbRange, loc, "probability outside [0, 1]"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        out.push(Violation::new(Rule::ProbSum, loc, format!("probabilities sum to {sum}")));
    }
    let argmax = argmax_lowest(probs);
    if let Some(p) = pred {
        if p != argmax {
            out.push(Violation::new(
                Rule::ArgmaxMismatch,
                loc,
                format!("predicted label {p} but argmax is {argmax}"),
            ));
        }
    }
}

/// Index of the maximum, ties resolved to the lowest index.
pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn row_sum_violation(d: &super::AttentionDump) -> Option<String> {
    for l in 0..d.layers {
        for h in 0..d.heads {
            let slice = d.slice(l, h);
            for r in 0..d.valid_len {
                let row = &slice[r * d.seq..r * d.seq + d.valid_len];
                let sum: f64 = row.iter().map(|&v| v as f64).sum();
                if (sum - 1.0).abs() > ATTENTION_ROW_TOL || row.iter().any(|v| !v.is_finite()) {
                    return Some(format!(
                        "{} layer {l} head {h} row {r} sums to {sum}",
                        d.state.as_str()
                    ));
                }
            }
        }
    }
    None
}
