//! Deterministic synthetic bundles.
//!
//! Every random choice is drawn from a ChaCha stream derived from the `FixtureSpec`
//! seed, one stream per component, so toggling e.g. attention does not
//! perturb the corpus.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    Artifacts, AttentionDump, AttentionEntry, AttentionIndex, AttentionStore, AttentionWeights, BundleParts,
    EmbeddingKey, EmbeddingTable, ExtractionBundle, LabelId, LabelSet, Manifest, Matrix, ModelState,
    PredictionRecord, ProjectionPoint, SentenceRecord, Split, Tag, TokenId, WordPieces, WordRecord,
};
use crate::error::Result;

const STREAM_CORPUS: u64 = 0;
const STREAM_PREDICTIONS: u64 = 1;
const STREAM_EMBEDDINGS: u64 = 2;
const STREAM_ATTENTION: u64 = 3;

/// Hand-written sentence pairs appended to the test split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedCase {
    /// Gold opens a person with `I-PER`, the prediction uses `B-PER`.
    SchemeFlipGold,
    /// Gold `B-LOC I-LOC I-LOC`, prediction `I-LOC I-LOC I-LOC`.
    SchemeFlipPred,
    /// Gold `O I-PER`, prediction `B-PER I-PER`.
    BoundaryToInclusion,
}

impl PlantedCase {
    pub const ALL: [PlantedCase; 3] = [
        PlantedCase::SchemeFlipGold,
        PlantedCase::SchemeFlipPred,
        PlantedCase::BoundaryToInclusion,
    ];

    /// (surface, gold, pred) rows.
    pub fn rows(self) -> &'static [(&'static str, &'static str, &'static str)] {
        match self {
            PlantedCase::SchemeFlipGold => &[
                ("Hayam", "I-PER", "B-PER"),
                ("arrived", "O", "O"),
                ("at", "O", "O"),
                ("the", "O", "O"),
                ("station", "O", "O"),
                ("early", "O", "O"),
                (".", "O", "O"),
            ],
            PlantedCase::SchemeFlipPred => &[
                ("Visiting", "O", "O"),
                ("New", "B-LOC", "I-LOC"),
                ("York", "I-LOC", "I-LOC"),
                ("City", "I-LOC", "I-LOC"),
                ("is", "O", "O"),
                ("fun", "O", "O"),
                (".", "O", "O"),
            ],
            PlantedCase::BoundaryToInclusion => &[("Dr", "O", "B-PER"), ("Samir", "I-PER", "I-PER")],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionPlan {
    /// Number of leading test sentences that get dumps.
    pub sentences: usize,
    pub layers: usize,
    pub heads: usize,
    /// Padding positions appended after the valid region.
    pub padding: usize,
    /// Length of each flattened Q‖K‖V weight vector.
    pub weight_len: usize,
    /// Scale of the logit perturbation between the two model states.
    pub drift: f64,
}

impl Default for AttentionPlan {
    fn default() -> Self {
        AttentionPlan {
            sentences: 8,
            layers: 2,
            heads: 4,
            padding: 2,
            weight_len: 48,
            drift: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub name: String,
    pub language: String,
    pub seed: u64,
    pub train_sentences: usize,
    pub test_sentences: usize,
    /// Inclusive word-count range per random sentence.
    pub sentence_len: (usize, usize),
    pub entity_types: Vec<String>,
    /// Relative frequency of each entity type, aligned with `entity_types`.
    pub type_weights: Vec<f64>,
    /// Probability that a span starts at any free position.
    pub entity_rate: f64,
    /// Relative frequency of span lengths 1, 2, 3, ...
    pub span_len_weights: Vec<f64>,
    /// Number of gold `B-` tags rewritten to `I-` so they violate IOB2.
    pub violations: usize,
    /// Per-token probability that the prediction is a wrong label.
    pub error_rate: f64,
    /// Share of multi-character words split into subword pieces.
    pub subword_rate: f64,
    /// Share of outside-labelled words marked as dropped.
    pub dropped_rate: f64,
    /// Share of words drawn from a pool shared by every label.
    pub ambiguity_rate: f64,
    /// Share of test words drawn from a pool never used in training.
    pub oov_rate: f64,
    pub vocab_size: usize,
    pub predictions: bool,
    pub pieces: bool,
    pub embedding_dim: Option<usize>,
    pub pretrained_embeddings: bool,
    pub projection: bool,
    pub attention: Option<AttentionPlan>,
    pub planted: Vec<PlantedCase>,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            name: "fixture".into(),
            language: "en".into(),
            seed: 42,
            train_sentences: 120,
            test_sentences: 40,
            sentence_len: (4, 16),
            entity_types: ["PER", "LOC", "ORG", "MISC"].map(String::from).to_vec(),
            type_weights: vec![0.35, 0.3, 0.2, 0.15],
            entity_rate: 0.12,
            span_len_weights: vec![0.5, 0.3, 0.12, 0.05, 0.03],
            violations: 0,
            error_rate: 0.08,
            subword_rate: 0.25,
            dropped_rate: 0.0,
            ambiguity_rate: 0.05,
            oov_rate: 0.1,
            vocab_size: 400,
            predictions: true,
            pieces: true,
            embedding_dim: Some(16),
            pretrained_embeddings: true,
            projection: true,
            attention: Some(AttentionPlan::default()),
            planted: Vec::new(),
        }
    }
}

impl FixtureSpec {
    /// A spec holding only the given planted sentences and no random ones.
    pub fn planted_only(cases: &[PlantedCase]) -> Self {
        FixtureSpec {
            train_sentences: 0,
            test_sentences: 0,
            planted: cases.to_vec(),
            ..FixtureSpec::default()
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn weighted_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "kh"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize, capitalized: bool) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).unwrap());
        w.push_str(VOWELS.choose(rng).unwrap());
    }
    if capitalized {
        let mut c = w.chars();
        let first = c.next().unwrap().to_ascii_uppercase();
        w = std::iter::once(first).chain(c).collect();
    }
    w
}

/// Distinct pseudo-words, with a numeric suffix on collision.
fn pool(rng: &mut ChaCha8Rng, size: usize, capitalized: bool, seen: &mut std::collections::HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let syl = rng.random_range(1..=3);
        let mut w = pseudo_word(rng, syl, capitalized);
        if seen.contains(&w) {
            w = format!("{w}{}", seen.len());
        }
        seen.insert(w.clone());
        out.push(w);
    }
    out
}

/// Zipf-like draw favouring low indices.
fn skewed<'a>(rng: &mut ChaCha8Rng, pool: &'a [String]) -> &'a str {
    let u: f64 = rng.random();
    &pool[((u * u) * pool.len() as f64) as usize % pool.len()]
}

struct Vocab {
    outside: Vec<String>,
    per_type: Vec<Vec<String>>,
    shared: Vec<String>,
    test_only: Vec<String>,
}

fn random_tags(rng: &mut ChaCha8Rng, spec: &FixtureSpec, labels: &LabelSet, len: usize) -> Vec<LabelId> {
    let mut tags = vec![labels.outside(); len];
    let mut i = 0;
    while i < len {
        if rng.random::<f64>() < spec.entity_rate {
            let ty = weighted_index(rng, &spec.type_weights);
            let span = (weighted_index(rng, &spec.span_len_weights) + 1).min(len - i);
            let t = labels.type_id(&spec.entity_types[ty]).unwrap();
            tags[i] = labels.label_for(Tag::Begin(t)).unwrap();
            for tag in tags.iter_mut().skip(i + 1).take(span - 1) {
                *tag = labels.label_for(Tag::Inside(t)).unwrap();
            }
            i += span;
        } else {
            i += 1;
        }
    }
    tags
}

fn surface_for(rng: &mut ChaCha8Rng, spec: &FixtureSpec, vocab: &Vocab, labels: &LabelSet, tag: LabelId, split: Split) -> String {
    let u: f64 = rng.random();
    if split == Split::Test && u < spec.oov_rate {
        return skewed(rng, &vocab.test_only).to_string();
    }
    if u < spec.oov_rate + spec.ambiguity_rate {
        return skewed(rng, &vocab.shared).to_string();
    }
    match labels.tag(tag).entity_type() {
        None => skewed(rng, &vocab.outside).to_string(),
        Some(t) => {
            let ty = spec
                .entity_types
                .iter()
                .position(|n| n == labels.type_name(t))
                .unwrap_or(0);
            skewed(rng, &vocab.per_type[ty]).to_string()
        }
    }
}

fn split_pieces(surface: &str, rng: &mut ChaCha8Rng, rate: f64) -> Vec<String> {
    let chars: Vec<char> = surface.chars().collect();
    if chars.len() < 2 || rng.random::<f64>() >= rate {
        return vec![surface.to_string()];
    }
    let n_pieces = if chars.len() >= 4 && rng.random::<bool>() { 3 } else { 2 };
    let mut cuts: Vec<usize> = (1..n_pieces).map(|k| k * chars.len() / n_pieces).collect();
    cuts.dedup();
    let mut out = Vec::new();
    let mut start = 0;
    for end in cuts.into_iter().chain(std::iter::once(chars.len())) {
        let piece: String = chars[start..end].iter().collect();
        out.push(if start == 0 { piece } else { format!("##{piece}") });
        start = end;
    }
    out
}

/// Probability vector with a strict maximum on `pred`.
fn probabilities(rng: &mut ChaCha8Rng, n: usize, pred: usize) -> Vec<f64> {
    let top = rng.random_range(0.55..0.995);
    let mut rest: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    rest[pred] = 0.0;
    let total: f64 = rest.iter().sum();
    let mut probs: Vec<f64> = rest.iter().map(|r| r / total * (1.0 - top)).collect();
    probs[pred] = top;
    // fold rounding drift into the top entry
    let drift = 1.0 - probs.iter().sum::<f64>();
    probs[pred] += drift;
    probs
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).map(|v: f64| v * scale).collect()
}

fn softmax_rows(logits: &[f64], seq: usize, valid: usize) -> Vec<f32> {
    let mut out = vec![0f32; seq * seq];
    for r in 0..valid {
        let row = &logits[r * valid..(r + 1) * valid];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        for (c, e) in exps.iter().enumerate() {
            out[r * seq + c] = (e / s) as f32;
        }
    }
    out
}

/// Builds a synthetic bundle from `spec`. Pure: equal `FixtureSpec`s give
/// equal bundles.
pub fn generate_fixture(spec: &FixtureSpec) -> Result<ExtractionBundle> {
    let mut label_names = vec!["O".to_string()];
    for t in &spec.entity_types {
        label_names.push(format!("B-{t}"));
        label_names.push(format!("I-{t}"));
    }
    let labels = LabelSet::new(label_names.clone(), "O")?;
    let n_labels = labels.len();
    let mut rng = stream(spec.seed, STREAM_CORPUS);

    let mut seen = std::collections::HashSet::new();
    let type_pool = (spec.vocab_size / 4).max(4);
    let vocab = Vocab {
        outside: pool(&mut rng, spec.vocab_size.max(4), false, &mut seen),
        per_type: spec
            .entity_types
            .iter()
            .map(|_| pool(&mut rng, type_pool, true, &mut seen))
            .collect(),
        shared: pool(&mut rng, (spec.vocab_size / 20).max(2), true, &mut seen),
        test_only: pool(&mut rng, (spec.vocab_size / 5).max(2), true, &mut seen),
    };

    // corpus: random sentences, then planted ones at the end of test
    let mut tag_rows: [Vec<Vec<LabelId>>; 2] = [Vec::new(), Vec::new()];
    let mut surface_rows: [Vec<Vec<String>>; 2] = [Vec::new(), Vec::new()];
    let mut planted_pred: BTreeMap<usize, Vec<LabelId>> = BTreeMap::new();
    for (split, n) in [(Split::Train, spec.train_sentences), (Split::Test, spec.test_sentences)] {
        for _ in 0..n {
            let len = rng.random_range(spec.sentence_len.0.max(1)..=spec.sentence_len.1.max(spec.sentence_len.0.max(1)));
            let tags = random_tags(&mut rng, spec, &labels, len);
            let surfaces = tags
                .iter()
                .map(|&t| surface_for(&mut rng, spec, &vocab, &labels, t, split))
                .collect();
            tag_rows[split.index()].push(tags);
            surface_rows[split.index()].push(surfaces);
        }
    }

    // plant violations: rewrite B-X whose predecessor is not of type X
    let mut candidates: Vec<(Split, usize, usize)> = Vec::new();
    for split in [Split::Test, Split::Train] {
        for (si, tags) in tag_rows[split.index()].iter().enumerate() {
            for (wi, &t) in tags.iter().enumerate() {
                if let Tag::Begin(ty) = labels.tag(t) {
                    let prev_same = wi > 0 && labels.tag(tags[wi - 1]).entity_type() == Some(ty);
                    if !prev_same {
                        candidates.push((split, si, wi));
                    }
                }
            }
        }
    }
    let mut planted_violations = 0;
    let mut used_sentences = std::collections::HashSet::new();
    for &(split, si, wi) in &candidates {
        if planted_violations == spec.violations {
            break;
        }
        // one per sentence keeps rewrites independent
        if !used_sentences.insert((split, si)) {
            continue;
        }
        let tags = &mut tag_rows[split.index()][si];
        if let Tag::Begin(ty) = labels.tag(tags[wi]) {
            tags[wi] = labels.label_for(Tag::Inside(ty)).unwrap();
            planted_violations += 1;
        }
    }

    for case in &spec.planted {
        let rows = case.rows();
        let si = tag_rows[Split::Test.index()].len();
        tag_rows[Split::Test.index()].push(rows.iter().map(|r| labels.id(r.1).unwrap()).collect());
        surface_rows[Split::Test.index()].push(rows.iter().map(|r| r.0.to_string()).collect());
        planted_pred.insert(si, rows.iter().map(|r| labels.id(r.2).unwrap()).collect());
    }

    let mut sentences: [Vec<SentenceRecord>; 2] = [Vec::new(), Vec::new()];
    let mut pieces: [Vec<WordPieces>; 2] = [Vec::new(), Vec::new()];
    for split in Split::ALL {
        for (si, (tags, surfaces)) in tag_rows[split.index()].iter().zip(&surface_rows[split.index()]).enumerate() {
            let planted = split == Split::Test && planted_pred.contains_key(&si);
            let words: Vec<WordRecord> = tags
                .iter()
                .zip(surfaces)
                .enumerate()
                .map(|(wi, (&t, s))| WordRecord {
                    split,
                    sentence_index: si,
                    word_index: wi,
                    surface: s.clone(),
                    gold_label: t,
                })
                .collect();
            for w in &words {
                let dropped = !planted
                    && w.gold_label == labels.outside()
                    && spec.dropped_rate > 0.0
                    && rng.random::<f64>() < spec.dropped_rate;
                pieces[split.index()].push(WordPieces {
                    id: TokenId::new(split, si, w.word_index),
                    pieces: split_pieces(&w.surface, &mut rng, spec.subword_rate),
                    dropped,
                });
            }
            sentences[split.index()].push(SentenceRecord {
                split,
                sentence_index: si,
                words,
                raw_text: None,
            });
        }
    }

    // predictions over non-dropped test words
    let mut prng = stream(spec.seed, STREAM_PREDICTIONS);
    let mut predictions = Vec::new();
    let mut pred_of: BTreeMap<TokenId, LabelId> = BTreeMap::new();
    let dropped: std::collections::HashSet<TokenId> = pieces
        .iter()
        .flatten()
        .filter(|p| p.dropped)
        .map(|p| p.id)
        .collect();
    if spec.predictions {
        for s in &sentences[Split::Test.index()] {
            for w in &s.words {
                let id = TokenId::new(Split::Test, s.sentence_index, w.word_index);
                if dropped.contains(&id) {
                    continue;
                }
                let pred = match planted_pred.get(&s.sentence_index) {
                    Some(p) => p[w.word_index],
                    None if prng.random::<f64>() < spec.error_rate => {
                        let other = prng.random_range(0..n_labels - 1);
                        LabelId((if other >= w.gold_label.index() { other + 1 } else { other }) as u16)
                    }
                    None => w.gold_label,
                };
                let probs = probabilities(&mut prng, n_labels, pred.index());
                let loss = -probs[w.gold_label.index()].max(1e-12).ln();
                pred_of.insert(id, pred);
                predictions.push(PredictionRecord {
                    id,
                    pred: labels.name(pred).to_string(),
                    probs,
                    loss: Some(loss),
                });
            }
        }
    }

    // embeddings: one Gaussian cluster per label
    let mut embeddings = BTreeMap::new();
    let mut projection = None;
    if let Some(dim) = spec.embedding_dim {
        let mut erng = stream(spec.seed, STREAM_EMBEDDINGS);
        let centres: Vec<Vec<f64>> = (0..n_labels).map(|_| gaussian(&mut erng, dim, 2.0)).collect();
        let pre_centres: Vec<Vec<f64>> = (0..n_labels).map(|_| gaussian(&mut erng, dim, 0.8)).collect();
        let mut ids = Vec::new();
        let mut fine = Vec::new();
        let mut pre = Vec::new();
        for split in Split::ALL {
            for s in &sentences[split.index()] {
                for w in &s.words {
                    let id = TokenId::new(split, s.sentence_index, w.word_index);
                    if dropped.contains(&id) {
                        continue;
                    }
                    let g = w.gold_label.index();
                    let p = pred_of.get(&id).map_or(g, |l| l.index());
                    let noise = gaussian(&mut erng, dim, 1.0);
                    fine.extend(
                        (0..dim).map(|d| (0.5 * (centres[g][d] + centres[p][d]) + noise[d]) as f32),
                    );
                    let noise = gaussian(&mut erng, dim, 1.0);
                    pre.extend((0..dim).map(|d| (pre_centres[g][d] + noise[d]) as f32));
                    ids.push(id);
                }
            }
        }
        let rows = ids.len();
        if spec.projection {
            let axes = [gaussian(&mut erng, dim, 1.0), gaussian(&mut erng, dim, 1.0)];
            projection = Some(
                ids.iter()
                    .enumerate()
                    .filter(|(_, id)| id.split == Split::Test)
                    .map(|(r, id)| {
                        let v = &fine[r * dim..(r + 1) * dim];
                        let [x, y] = axes.clone().map(|a| a.iter().zip(v).map(|(a, v)| a * *v as f64).sum::<f64>());
                        ProjectionPoint { id: *id, x, y }
                    })
                    .collect(),
            );
        }
        embeddings.insert(
            EmbeddingKey::FINETUNED_FINAL,
            EmbeddingTable::new(ids.clone(), Matrix::new(rows, dim, fine)?)?,
        );
        if spec.pretrained_embeddings {
            embeddings.insert(
                EmbeddingKey::PRETRAINED_FINAL,
                EmbeddingTable::new(ids, Matrix::new(rows, dim, pre)?)?,
            );
        }
    }

    // attention over the leading test sentences
    let mut attention_index = None;
    let mut attention = None;
    let mut weights = None;
    if let Some(plan) = &spec.attention {
        let mut arng = stream(spec.seed, STREAM_ATTENTION);
        let mut dumps = BTreeMap::new();
        let mut entries = Vec::new();
        let test = &sentences[Split::Test.index()];
        let test_pieces = &pieces[Split::Test.index()];
        for s in test.iter().take(plan.sentences) {
            let n_pieces: usize = test_pieces
                .iter()
                .filter(|p| p.id.sentence as usize == s.sentence_index && !p.dropped)
                .map(|p| p.pieces.len())
                .sum();
            let valid = n_pieces + 2;
            let seq = valid + plan.padding;
            let mut pre_data = Vec::with_capacity(plan.layers * plan.heads * seq * seq);
            let mut post_data = Vec::with_capacity(pre_data.capacity());
            for _ in 0..plan.layers * plan.heads {
                let logits = gaussian(&mut arng, valid * valid, 1.5);
                let shifted: Vec<f64> = logits
                    .iter()
                    .map(|v| v + plan.drift * Distribution::<f64>::sample(&StandardNormal, &mut arng))
                    .collect::<Vec<f64>>();
                pre_data.extend(softmax_rows(&logits, seq, valid));
                post_data.extend(softmax_rows(&shifted, seq, valid));
            }
            let i = s.sentence_index;
            let pre = AttentionDump::new(i, ModelState::Pretrained, plan.layers, plan.heads, seq, valid, pre_data)?;
            let post = AttentionDump::new(i, ModelState::FineTuned, plan.layers, plan.heads, seq, valid, post_data)?;
            dumps.insert(i, (pre, post));
            entries.push(AttentionEntry { index: i, valid_len: valid });
        }
        let mut pre_w = Vec::new();
        let mut post_w = Vec::new();
        for _ in 0..plan.layers * plan.heads {
            let base = gaussian(&mut arng, plan.weight_len, 0.1);
            let delta = gaussian(&mut arng, plan.weight_len, 0.1 * plan.drift);
            post_w.push(base.iter().zip(&delta).map(|(b, d)| (b + d) as f32).collect());
            pre_w.push(base.iter().map(|b| *b as f32).collect());
        }
        weights = Some((
            AttentionWeights {
                layers: plan.layers,
                heads: plan.heads,
                vectors: pre_w,
            },
            AttentionWeights {
                layers: plan.layers,
                heads: plan.heads,
                vectors: post_w,
            },
        ));
        attention_index = Some(AttentionIndex {
            layers: plan.layers,
            heads: plan.heads,
            sentences: entries,
        });
        attention = Some(AttentionStore::Memory(dumps));
    }

    let mut notes = Vec::new();
    if planted_violations < spec.violations {
        notes.push(format!(
            "planted {planted_violations} of {} requested scheme violations",
            spec.violations
        ));
    }
    let manifest = Manifest {
        name: spec.name.clone(),
        language: spec.language.clone(),
        labels: label_names,
        outside_label: "O".into(),
        embedding_dim: spec.embedding_dim,
        artifacts: Artifacts {
            pieces: spec.pieces,
            predictions: spec.predictions && !predictions.is_empty(),
            embeddings: embeddings.keys().map(|k| k.to_string()).collect(),
            projection: projection.is_some(),
            attention: attention_index,
            attention_weights: weights.is_some(),
        },
        extractor: serde_json::json!({
            "generator": "fixture",
            "seed": spec.seed,
            "planted_violations": planted_violations,
            "planted_cases": spec.planted,
        }),
        notes,
    };
    let [train, test] = sentences;
    ExtractionBundle::assemble(
        manifest,
        BundleParts {
            train,
            test,
            pieces: spec.pieces.then_some(pieces),
            predictions,
            embeddings,
            projection,
            attention,
            attention_weights: weights,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::validate_bundle;

    #[test]
    fn default_fixture_validates() {
        let b = generate_fixture(&FixtureSpec::default()).unwrap();
        let v = validate_bundle(&b);
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn variants_validate() {
        let specs = [
            FixtureSpec {
                dropped_rate: 0.1,
                violations: 5,
                planted: PlantedCase::ALL.to_vec(),
                ..FixtureSpec::default()
            },
            FixtureSpec {
                embedding_dim: None,
                attention: None,
                pieces: false,
                ..FixtureSpec::default()
            },
            FixtureSpec {
                predictions: false,
                ..FixtureSpec::default()
            },
            FixtureSpec::planted_only(&PlantedCase::ALL),
        ];
        for spec in specs {
            let b = generate_fixture(&spec).unwrap();
            let v = validate_bundle(&b);
            assert!(v.is_empty(), "{v:?}");
        }
    }

    #[test]
    fn planted_case_is_last_test_sentence() {
        let b = generate_fixture(&FixtureSpec {
            planted: vec![PlantedCase::SchemeFlipGold],
            ..FixtureSpec::default()
        })
        .unwrap();
        let last = b.sentences(Split::Test).len() - 1;
        let gold = b.sentence_gold(Split::Test, last);
        let pred = b.sentence_pred(Split::Test, last);
        assert_eq!(b.labels.name(gold[0]), "I-PER");
        assert_eq!(b.labels.name(pred[0]), "B-PER");
        assert_eq!(b.sentences(Split::Test)[last].words[0].surface, "Hayam");
    }

    #[test]
    fn probabilities_have_strict_argmax() {
        let mut rng = stream(1, 9);
        for pred in 0..9 {
            let p = probabilities(&mut rng, 9, pred);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().enumerate().all(|(i, v)| i == pred || *v < p[pred]));
        }
    }

    #[test]
    fn pieces_rejoin_to_surface() {
        let mut rng = stream(3, 0);
        for w in ["ab", "abcdef", "Khalid", "x"] {
            for _ in 0..10 {
                let p = split_pieces(w, &mut rng, 1.0);
                let joined: String = p.iter().map(|s| s.trim_start_matches("##")).collect();
                assert_eq!(joined, w);
            }
        }
    }
}
