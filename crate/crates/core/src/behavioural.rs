//! Per-token behavioural metrics: tokenisation rate, ambiguity, consistency,
//! confidence, uncertainty, loss and silhouette, plus per-tag aggregation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{
    CoreTokenRecord, EmbeddingKey, ExtractionBundle, LabelCounts, LabelId, Split, TokenId, VocabLevel,
    VocabularyIndex,
};
use crate::exec::Execution;
use crate::stats::{entropy_of_counts, normalized, population_std};

/// Ambiguity of a surface unseen in training.
pub const OOV_AMBIGUITY: f64 = -1.0;
/// Floor applied to the gold probability before taking its log.
pub const LOSS_EPSILON: f64 = 1e-12;

/// Base-2 entropy of the training label distribution; −1 when unseen.
pub fn ambiguity(train_counts: &LabelCounts) -> f64 {
    if train_counts.is_empty() {
        return OOV_AMBIGUITY;
    }
    entropy_of_counts(train_counts.counts().iter().map(|&c| c as u64), 2.0)
}

/// Ambiguity divided by log2 of the label count; the sentinel passes through.
pub fn normalized_ambiguity(train_counts: &LabelCounts, n_labels: usize) -> f64 {
    let a = ambiguity(train_counts);
    if a == OOV_AMBIGUITY {
        return a;
    }
    if n_labels < 2 {
        return 0.0;
    }
    a / (n_labels as f64).log2()
}

pub fn ambiguity_of(vocab: &VocabularyIndex, level: VocabLevel, surface: &str) -> f64 {
    ambiguity(vocab.counts(level, surface, Split::Train))
}

/// (matching, non-matching) shares of the surface's training occurrences;
/// (0, 0) when unseen.
pub fn consistency(train_counts: &LabelCounts, test_label: LabelId) -> (f64, f64) {
    let total = train_counts.total();
    if total == 0 {
        return (0.0, 0.0);
    }
    let same = train_counts.get(test_label) as f64 / total as f64;
    (same, 1.0 - same)
}

pub fn consistency_of(vocab: &VocabularyIndex, level: VocabLevel, surface: &str, test_label: LabelId) -> (f64, f64) {
    consistency(vocab.counts(level, surface, Split::Train), test_label)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub confidence: f64,
    /// Entropy over the natural log of the label count.
    pub uncertainty: f64,
    /// −ln p_gold in nats.
    pub loss: f64,
    /// The gold probability was below the floor.
    pub loss_clamped: bool,
}

pub fn prediction_metrics(probs: &[f64], gold: LabelId) -> PredictionMetrics {
    let confidence = probs.iter().cloned().fold(0.0, f64::max);
    let h: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    let uncertainty = if probs.len() < 2 {
        0.0
    } else {
        (h / (probs.len() as f64).ln()).clamp(0.0, 1.0)
    };
    let p_gold = probs.get(gold.index()).copied().unwrap_or(0.0);
    let loss_clamped = p_gold < LOSS_EPSILON;
    let loss = -p_gold.max(LOSS_EPSILON).ln();
    PredictionMetrics {
        confidence,
        uncertainty,
        loss: if loss == 0.0 { 0.0 } else { loss },
        loss_clamped,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteOptions {
    /// Reference-set size above which labels are subsampled.
    pub cap: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for SilhouetteOptions {
    fn default() -> Self {
        SilhouetteOptions {
            cap: 50_000,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteResult {
    /// Per input row; `None` when undefined (fewer than two labels).
    pub scores: Vec<Option<f64>>,
    /// False when the reference set was subsampled.
    pub exact: bool,
    pub reference_size: usize,
    pub seed: u64,
    pub undefined: bool,
}

/// Per-point silhouette under cosine distance.
///
/// Mean distances to a label are computed from per-label sums of unit
/// vectors, so the cost is linear in the number of points: the mean cosine
/// similarity of `x` to a set is `x · sum / size`. Zero vectors have
/// similarity 0 to everything. Points whose label has no other member score
/// 0. Above `cap` points the reference set keeps a seeded, label-stratified
/// subsample of about `cap` points; every point is still scored.
pub fn silhouette_scores(rows: &[&[f32]], labels: &[LabelId], opts: SilhouetteOptions) -> SilhouetteResult {
    assert_eq!(rows.len(), labels.len(), "one label per row");
    let n = rows.len();
    let n_classes = labels.iter().map(|l| l.index() + 1).max().unwrap_or(0);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, l) in labels.iter().enumerate() {
        members[l.index()].push(i);
    }
    let present: Vec<usize> = (0..n_classes).filter(|&c| !members[c].is_empty()).collect();
    if present.len() < 2 {
        return SilhouetteResult {
            scores: vec![None; n],
            exact: true,
            reference_size: n,
            seed: opts.seed,
            undefined: true,
        };
    }

    let exact = n <= opts.cap;
    let mut in_ref = vec![true; n];
    if !exact {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        in_ref = vec![false; n];
        for c in &present {
            let mut m = members[*c].clone();
            let take = ((opts.cap as f64 * m.len() as f64 / n as f64).round() as usize).clamp(2.min(m.len()), m.len());
            m.shuffle(&mut rng);
            for &i in &m[..take] {
                in_ref[i] = true;
            }
        }
    }

    let unit: Vec<Vec<f64>> = opts.execution.map_slice(rows, |r| normalized(r));
    let dim = rows.first().map_or(0, |r| r.len());
    let mut sums = vec![vec![0.0f64; dim]; n_classes];
    let mut sizes = vec![0usize; n_classes];
    for i in (0..n).filter(|&i| in_ref[i]) {
        let c = labels[i].index();
        sizes[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(&unit[i]) {
            *s += v;
        }
    }
    let reference_size = sizes.iter().sum();

    let scores = opts.execution.map_range(n, |i| {
        let own = labels[i].index();
        let x = &unit[i];
        let self_sim: f64 = if in_ref[i] { x.iter().map(|v| v * v).sum() } else { 0.0 };
        let own_size = sizes[own] - usize::from(in_ref[i]);
        if own_size == 0 {
            return Some(0.0);
        }
        let dot = |c: usize| sums[c].iter().zip(x).map(|(s, v)| s * v).sum::<f64>();
        let a = 1.0 - (dot(own) - self_sim) / own_size as f64;
        let b = present
            .iter()
            .filter(|&&c| c != own && sizes[c] > 0)
            .map(|&c| 1.0 - dot(c) / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        Some(if m > 0.0 { ((b - a) / m).clamp(-1.0, 1.0) } else { 0.0 })
    });
    SilhouetteResult {
        scores,
        exact,
        reference_size,
        seed: opts.seed,
        undefined: false,
    }
}

/// One row of the token table: a scored test core token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenMetrics {
    pub id: TokenId,
    pub surface: String,
    pub core_piece: String,
    pub gold: String,
    pub pred: String,
    pub correct: bool,
    pub tokenisation_rate: u32,
    pub word_ambiguity: f64,
    pub token_ambiguity: f64,
    pub consistency_ratio: f64,
    pub inconsistency_ratio: f64,
    pub token_consistency_ratio: f64,
    pub token_inconsistency_ratio: f64,
    pub token_confidence: f64,
    pub prediction_uncertainty: f64,
    pub loss: f64,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub loss_clamped: bool,
    pub true_silhouette: Option<f64>,
    pub pred_silhouette: Option<f64>,
}

/// Numeric columns of [`TokenMetrics`], in table order.
pub const NUMERIC_METRICS: [&str; 12] = [
    "tokenisation_rate",
    "word_ambiguity",
    "token_ambiguity",
    "consistency_ratio",
    "inconsistency_ratio",
    "token_consistency_ratio",
    "token_inconsistency_ratio",
    "token_confidence",
    "prediction_uncertainty",
    "loss",
    "true_silhouette",
    "pred_silhouette",
];

impl TokenMetrics {
    /// Value of a numeric column; `None` for unknown names and absent values.
    pub fn numeric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "tokenisation_rate" => self.tokenisation_rate as f64,
            "word_ambiguity" => self.word_ambiguity,
            "token_ambiguity" => self.token_ambiguity,
            "consistency_ratio" => self.consistency_ratio,
            "inconsistency_ratio" => self.inconsistency_ratio,
            "token_consistency_ratio" => self.token_consistency_ratio,
            "token_inconsistency_ratio" => self.token_inconsistency_ratio,
            "token_confidence" | "confidence" => self.token_confidence,
            "prediction_uncertainty" | "uncertainty" => self.prediction_uncertainty,
            "loss" => self.loss,
            "true_silhouette" => return self.true_silhouette,
            "pred_silhouette" => return self.pred_silhouette,
            _ => return None,
        })
    }

    pub fn is_numeric(name: &str) -> bool {
        NUMERIC_METRICS.contains(&name) || matches!(name, "confidence" | "uncertainty")
    }
}

/// Silhouette bookkeeping for a token table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteInfo {
    pub scored: usize,
    pub exact: bool,
    pub reference_size: usize,
    pub cap: usize,
    pub seed: u64,
    pub undefined_true: bool,
    pub undefined_pred: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenTable {
    pub rows: Vec<TokenMetrics>,
    pub silhouette: Option<SilhouetteInfo>,
}

/// Scored test core tokens (those with predictions), in id order.
pub fn scored_tokens(bundle: &ExtractionBundle) -> Vec<&CoreTokenRecord> {
    bundle
        .core_tokens(Split::Test)
        .iter()
        .filter(|t| t.predicted_label.is_some() && t.probabilities.is_some())
        .collect()
}

pub fn token_metrics(bundle: &ExtractionBundle, vocab: &VocabularyIndex, opts: SilhouetteOptions) -> TokenTable {
    let labels = &bundle.labels;
    let scored = scored_tokens(bundle);
    let mut rows: Vec<TokenMetrics> = opts.execution.map_slice(&scored, |t| {
        let pred = t.predicted_label.expect("scored tokens carry predictions");
        let m = prediction_metrics(t.probabilities.as_deref().unwrap_or(&[]), t.gold_label);
        let (cr, ir) = consistency_of(vocab, VocabLevel::Word, &t.surface, t.gold_label);
        let (tcr, tir) = consistency_of(vocab, VocabLevel::CoreToken, &t.core_piece, t.gold_label);
        TokenMetrics {
            id: t.id,
            surface: t.surface.clone(),
            core_piece: t.core_piece.clone(),
            gold: labels.name(t.gold_label).to_string(),
            pred: labels.name(pred).to_string(),
            correct: pred == t.gold_label,
            tokenisation_rate: t.piece_count,
            word_ambiguity: ambiguity_of(vocab, VocabLevel::Word, &t.surface),
            token_ambiguity: ambiguity_of(vocab, VocabLevel::CoreToken, &t.core_piece),
            consistency_ratio: cr,
            inconsistency_ratio: ir,
            token_consistency_ratio: tcr,
            token_inconsistency_ratio: tir,
            token_confidence: m.confidence,
            prediction_uncertainty: m.uncertainty,
            loss: m.loss,
            loss_clamped: m.loss_clamped,
            true_silhouette: None,
            pred_silhouette: None,
        }
    });

    let silhouette = bundle.embedding(EmbeddingKey::FINETUNED_FINAL).map(|table| {
        let with: Vec<usize> = (0..scored.len()).filter(|&i| scored[i].embedding_ref.is_some()).collect();
        let vecs: Vec<&[f32]> = with
            .iter()
            .map(|&i| table.matrix.row(scored[i].embedding_ref.unwrap()))
            .collect();
        let gold: Vec<LabelId> = with.iter().map(|&i| scored[i].gold_label).collect();
        let pred: Vec<LabelId> = with.iter().map(|&i| scored[i].predicted_label.unwrap()).collect();
        let t = silhouette_scores(&vecs, &gold, opts);
        let p = silhouette_scores(&vecs, &pred, opts);
        for (k, &i) in with.iter().enumerate() {
            rows[i].true_silhouette = t.scores[k];
            rows[i].pred_silhouette = p.scores[k];
        }
        SilhouetteInfo {
            scored: with.len(),
            exact: t.exact && p.exact,
            reference_size: t.reference_size,
            cap: opts.cap,
            seed: opts.seed,
            undefined_true: t.undefined,
            undefined_pred: p.undefined,
        }
    });
    TokenTable { rows, silhouette }
}

/// Total pieces over total words for the core tokens of a split.
pub fn dataset_tokenisation_rate(bundle: &ExtractionBundle, split: Split) -> f64 {
    let tokens = bundle.core_tokens(split);
    if tokens.is_empty() {
        return 0.0;
    }
    tokens.iter().map(|t| t.piece_count as f64).sum::<f64>() / tokens.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

fn summary(values: &[f64]) -> Option<Summary> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Summary {
        mean: crate::stats::mean(&v)?,
        std: population_std(&v)?,
        count: v.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correctness {
    All,
    Correct,
    Incorrect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub label: String,
    pub correctness: Correctness,
    pub count: usize,
    pub metrics: BTreeMap<String, Summary>,
    /// Tokens whose ambiguity was the OOV sentinel, per ambiguity column.
    pub oov: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagAggregates {
    pub groups: Vec<GroupStats>,
    pub labels: Vec<String>,
    /// Cell (gold, pred), off-diagonal: summed confidence of tokens with that
    /// gold label predicted as that label.
    pub misclassification_confidence: Vec<Vec<f64>>,
}

const AMBIGUITY_COLUMNS: [&str; 2] = ["word_ambiguity", "token_ambiguity"];

/// Per gold label: means and population stddevs of every numeric metric,
/// for all tokens and, when `split_correctness`, for correct and incorrect
/// tokens separately. Empty groups are omitted.
pub fn aggregate_by_tag(rows: &[TokenMetrics], label_names: &[String], split_correctness: bool) -> TagAggregates {
    let index = |name: &str| label_names.iter().position(|l| l == name);
    let mut groups = Vec::new();
    let kinds: &[Correctness] = if split_correctness {
        &[Correctness::All, Correctness::Correct, Correctness::Incorrect]
    } else {
        &[Correctness::All]
    };
    for label in label_names {
        for &kind in kinds {
            let members: Vec<&TokenMetrics> = rows
                .iter()
                .filter(|r| &r.gold == label)
                .filter(|r| match kind {
                    Correctness::All => true,
                    Correctness::Correct => r.correct,
                    Correctness::Incorrect => !r.correct,
                })
                .collect();
            if members.is_empty() {
                continue;
            }
            let mut metrics = BTreeMap::new();
            let mut oov = BTreeMap::new();
            for name in NUMERIC_METRICS {
                let values: Vec<f64> = members.iter().filter_map(|r| r.numeric(name)).collect();
                let values: Vec<f64> = if AMBIGUITY_COLUMNS.contains(&name) {
                    let (sentinel, real): (Vec<f64>, Vec<f64>) =
                        values.into_iter().partition(|v| *v == OOV_AMBIGUITY);
                    oov.insert(name.to_string(), sentinel.len());
                    real
                } else {
                    values
                };
                if let Some(s) = summary(&values) {
                    metrics.insert(name.to_string(), s);
                }
            }
            groups.push(GroupStats {
                label: label.clone(),
                correctness: kind,
                count: members.len(),
                metrics,
                oov,
            });
        }
    }
    let n = label_names.len();
    let mut matrix = vec![vec![0.0; n]; n];
    for r in rows.iter().filter(|r| !r.correct) {
        if let (Some(g), Some(p)) = (index(&r.gold), index(&r.pred)) {
            matrix[g][p] += r.token_confidence;
        }
    }
    TagAggregates {
        groups,
        labels: label_names.to_vec(),
        misclassification_confidence: matrix,
    }
}

impl TagAggregates {
    pub fn group(&self, label: &str, correctness: Correctness) -> Option<&GroupStats> {
        self.groups
            .iter()
            .find(|g| g.label == label && g.correctness == correctness)
    }
}
