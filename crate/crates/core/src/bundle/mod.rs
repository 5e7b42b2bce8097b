//! The extraction bundle: corpora, tokenisation maps and exported model
//! outputs, plus everything needed to load, validate, index and synthesize
//! one.

mod conll;
mod downsample;
mod fixture;
mod io;
mod labels;
mod validate;
mod vocab;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use conll::{parse_conll, serialize_conll};
pub use downsample::{corpus_totals, downsample_corpus, DownsampleTarget};
pub use fixture::{generate_fixture, AttentionPlan, FixtureSpec, PlantedCase};
pub use io::{load_bundle, read_attention_pair, write_bundle, WriteOptions};
pub use labels::{LabelId, LabelSet, Split, Tag, TokenId, TypeId};
pub use validate::{validate_bundle, Rule, Violation};
pub use vocab::{build_vocabulary_index, LabelCounts, VocabLevel, VocabularyIndex};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordRecord {
    pub split: Split,
    pub sentence_index: usize,
    pub word_index: usize,
    pub surface: String,
    pub gold_label: LabelId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceRecord {
    pub split: Split,
    pub sentence_index: usize,
    pub words: Vec<WordRecord>,
    pub raw_text: Option<String>,
}

impl SentenceRecord {
    pub fn gold_labels(&self) -> Vec<LabelId> {
        self.words.iter().map(|w| w.gold_label).collect()
    }

    pub fn text(&self) -> String {
        self.raw_text.clone().unwrap_or_else(|| {
            self.words
                .iter()
                .map(|w| w.surface.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
    }
}

/// Subword pieces of one word. Dropped words were removed by upstream
/// preprocessing: they count at word level but carry no core token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordPieces {
    pub id: TokenId,
    pub pieces: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub dropped: bool,
}

/// One scoreable token: the word, or its first subword piece.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreTokenRecord {
    pub id: TokenId,
    pub surface: String,
    pub core_piece: String,
    pub piece_count: u32,
    pub gold_label: LabelId,
    pub predicted_label: Option<LabelId>,
    pub probabilities: Option<Vec<f64>>,
    pub loss: Option<f64>,
    pub embedding_ref: Option<usize>,
    pub pretrained_embedding_ref: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelState {
    Pretrained,
    #[serde(rename = "finetuned")]
    FineTuned,
}

impl ModelState {
    pub const ALL: [ModelState; 2] = [ModelState::Pretrained, ModelState::FineTuned];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelState::Pretrained => "pretrained",
            ModelState::FineTuned => "finetuned",
        }
    }
}

impl std::str::FromStr for ModelState {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained" => Ok(ModelState::Pretrained),
            "finetuned" => Ok(ModelState::FineTuned),
            other => Err(Error::InvalidInput(format!("unknown model state `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerTag {
    Input,
    Mid,
    Final,
}

impl LayerTag {
    pub const ALL: [LayerTag; 3] = [LayerTag::Input, LayerTag::Mid, LayerTag::Final];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerTag::Input => "input",
            LayerTag::Mid => "mid",
            LayerTag::Final => "final",
        }
    }
}

impl std::str::FromStr for LayerTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(LayerTag::Input),
            "mid" => Ok(LayerTag::Mid),
            "final" => Ok(LayerTag::Final),
            other => Err(Error::InvalidInput(format!("unknown layer tag `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EmbeddingKey {
    pub state: ModelState,
    pub layer: LayerTag,
}

impl EmbeddingKey {
    pub const FINETUNED_FINAL: EmbeddingKey = EmbeddingKey {
        state: ModelState::FineTuned,
        layer: LayerTag::Final,
    };
    pub const PRETRAINED_FINAL: EmbeddingKey = EmbeddingKey {
        state: ModelState::Pretrained,
        layer: LayerTag::Final,
    };
}

impl fmt::Display for EmbeddingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.state.as_str(), self.layer.as_str())
    }
}

impl std::str::FromStr for EmbeddingKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (state, layer) = s
            .split_once('.')
            .ok_or_else(|| Error::InvalidInput(format!("malformed embedding key `{s}`")))?;
        Ok(EmbeddingKey {
            state: state.parse()?,
            layer: layer.parse()?,
        })
    }
}

/// Dense row-major matrix of `f32` rows.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Matrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if rows * dim != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{dim} matrix needs {} values, got {}",
                rows * dim,
                data.len()
            )));
        }
        Ok(Matrix { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "ragged rows: expected {dim}, got {}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// New matrix holding the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: rows.len(),
            dim: self.dim,
            data,
        }
    }

    pub fn scaled(&self, factor: f32) -> Matrix {
        Matrix {
            rows: self.rows,
            dim: self.dim,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Hidden states for one (state, layer) pair, keyed by token id.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct EmbeddingTable {
    pub ids: Vec<TokenId>,
    pub matrix: Matrix,
    index: HashMap<TokenId, usize>,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<TokenId>, matrix: Matrix) -> Result<Self> {
        if ids.len() != matrix.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids for {} embedding rows",
                ids.len(),
                matrix.rows()
            )));
        }
        let index = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        Ok(EmbeddingTable { ids, matrix, index })
    }

    pub fn row_of(&self, id: &TokenId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn vector(&self, id: &TokenId) -> Option<&[f32]> {
        self.row_of(id).map(|r| self.matrix.row(r))
    }

    pub(crate) fn has_duplicates(&self) -> bool {
        self.index.len() != self.ids.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionPoint {
    pub id: TokenId,
    pub x: f64,
    pub y: f64,
}

/// Attention probabilities for one sentence and model state.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionDump {
    pub sentence: usize,
    pub state: ModelState,
    pub layers: usize,
    pub heads: usize,
    pub seq: usize,
    pub valid_len: usize,
    data: Vec<f32>,
}

impl AttentionDump {
    pub fn new(
        sentence: usize,
        state: ModelState,
        layers: usize,
        heads: usize,
        seq: usize,
        valid_len: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != layers * heads * seq * seq {
            return Err(Error::ShapeMismatch(format!(
                "attention tensor {layers}x{heads}x{seq}x{seq} needs {} values, got {}",
                layers * heads * seq * seq,
                data.len()
            )));
        }
        if valid_len > seq {
            return Err(Error::ShapeMismatch(format!(
                "valid_len {valid_len} exceeds sequence length {seq}"
            )));
        }
        Ok(AttentionDump {
            sentence,
            state,
            layers,
            heads,
            seq,
            valid_len,
            data,
        })
    }

    /// The `seq x seq` slice for one layer and head, row-major.
    pub fn slice(&self, layer: usize, head: usize) -> &[f32] {
        let n = self.seq * self.seq;
        let start = (layer * self.heads + head) * n;
        &self.data[start..start + n]
    }

    /// Nested `layers x heads x seq x seq` arrays.
    pub fn to_nested(&self) -> Vec<Vec<Vec<Vec<f32>>>> {
        (0..self.layers)
            .map(|l| {
                (0..self.heads)
                    .map(|h| self.slice(l, h).chunks(self.seq).map(|r| r.to_vec()).collect())
                    .collect()
            })
            .collect()
    }

    pub fn scaled(&self, factor: f32) -> AttentionDump {
        AttentionDump {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionEntry {
    pub index: usize,
    pub valid_len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionIndex {
    pub layers: usize,
    pub heads: usize,
    pub sentences: Vec<AttentionEntry>,
}

/// Where attention dumps live: in memory for synthesized bundles, on disk
/// (read lazily per sentence) for loaded ones.
#[derive(Clone, Debug)]
pub enum AttentionStore {
    Memory(BTreeMap<usize, (AttentionDump, AttentionDump)>),
    Disk(PathBuf),
}

/// Per-head flattened Q‖K‖V parameter vectors for one model state.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub layers: usize,
    pub heads: usize,
    pub vectors: Vec<Vec<f32>>,
}

impl AttentionWeights {
    pub fn from_nested(nested: Vec<Vec<Vec<f32>>>) -> Result<Self> {
        let layers = nested.len();
        let heads = nested.first().map_or(0, |l| l.len());
        if nested.iter().any(|l| l.len() != heads) {
            return Err(Error::ShapeMismatch("ragged head count in weight blocks".into()));
        }
        Ok(AttentionWeights {
            layers,
            heads,
            vectors: nested.into_iter().flatten().collect(),
        })
    }

    pub fn vector(&self, layer: usize, head: usize) -> &[f32] {
        &self.vectors[layer * self.heads + head]
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f32>>> {
        self.vectors
            .chunks(self.heads.max(1))
            .map(|c| c.to_vec())
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    #[serde(default)]
    pub pieces: bool,
    #[serde(default)]
    pub predictions: bool,
    #[serde(default)]
    pub embeddings: Vec<String>,
    #[serde(default)]
    pub projection: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionIndex>,
    #[serde(default)]
    pub attention_weights: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub language: String,
    pub labels: Vec<String>,
    pub outside_label: String,
    #[serde(default)]
    pub embedding_dim: Option<usize>,
    #[serde(default)]
    pub artifacts: Artifacts,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extractor: serde_json::Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Prediction row as exported by the extractor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: TokenId,
    pub pred: String,
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

/// Immutable snapshot consumed by every analysis.
#[derive(Clone, Debug)]
pub struct ExtractionBundle {
    pub manifest: Manifest,
    pub labels: LabelSet,
    sentences: [Vec<SentenceRecord>; 2],
    pieces: Option<[Vec<Vec<WordPieces>>; 2]>,
    /// Per split, sorted by token id.
    pub core_tokens: [Vec<CoreTokenRecord>; 2],
    pub embeddings: BTreeMap<EmbeddingKey, EmbeddingTable>,
    pub projection: Option<Vec<ProjectionPoint>>,
    pub attention: Option<AttentionStore>,
    pub attention_weights: Option<(AttentionWeights, AttentionWeights)>,
    pub(crate) load_issues: Vec<Violation>,
}

/// Raw parts from which a bundle is assembled.
#[derive(Clone, Debug, Default)]
pub struct BundleParts {
    pub train: Vec<SentenceRecord>,
    pub test: Vec<SentenceRecord>,
    pub pieces: Option<[Vec<WordPieces>; 2]>,
    pub predictions: Vec<PredictionRecord>,
    pub embeddings: BTreeMap<EmbeddingKey, EmbeddingTable>,
    pub projection: Option<Vec<ProjectionPoint>>,
    pub attention: Option<AttentionStore>,
    pub attention_weights: Option<(AttentionWeights, AttentionWeights)>,
}

impl ExtractionBundle {
    /// Joins corpora, tokenisation, predictions and embeddings into core
    /// token records. Join failures become load issues that
    /// [`validate_bundle`] reports; they never abort assembly.
    pub fn assemble(manifest: Manifest, parts: BundleParts) -> Result<Self> {
        let labels = LabelSet::new(manifest.labels.clone(), &manifest.outside_label)?;
        let mut issues = Vec::new();
        let sentences = [parts.train, parts.test];

        let pieces = parts.pieces.map(|per_split| {
            let mut out: [Vec<Vec<WordPieces>>; 2] = [Vec::new(), Vec::new()];
            for split in Split::ALL {
                let mut by_id: HashMap<TokenId, WordPieces> = HashMap::new();
                for wp in per_split[split.index()].iter().cloned() {
                    let id = wp.id;
                    if by_id.insert(id, wp).is_some() {
                        issues.push(Violation::new(Rule::PiecesDuplicate, id.to_string(), "duplicate pieces row"));
                    }
                }
                let rows = sentences[split.index()]
                    .iter()
                    .map(|s| {
                        s.words
                            .iter()
                            .map(|w| {
                                let id = TokenId::new(split, s.sentence_index, w.word_index);
                                by_id.remove(&id).unwrap_or_else(|| {
                                    issues.push(Violation::new(
                                        Rule::PiecesMissing,
                                        id.to_string(),
                                        "word has no pieces row",
                                    ));
                                    WordPieces {
                                        id,
                                        pieces: vec![w.surface.clone()],
                                        dropped: false,
                                    }
                                })
                            })
                            .collect()
                    })
                    .collect();
                let mut orphans: Vec<TokenId> = by_id.into_keys().collect();
                orphans.sort();
                for id in orphans {
                    issues.push(Violation::new(Rule::UnknownId, id.to_string(), "pieces row for unknown word"));
                }
                out[split.index()] = rows;
            }
            out
        });

        let mut predictions: HashMap<TokenId, PredictionRecord> = HashMap::new();
        for p in parts.predictions {
            let id = p.id;
            if predictions.insert(id, p).is_some() {
                issues.push(Violation::new(Rule::PredictionDuplicate, id.to_string(), "duplicate prediction row"));
            }
        }

        let fine = parts.embeddings.get(&EmbeddingKey::FINETUNED_FINAL);
        let pre = parts.embeddings.get(&EmbeddingKey::PRETRAINED_FINAL);
        let mut core_tokens: [Vec<CoreTokenRecord>; 2] = [Vec::new(), Vec::new()];
        for split in Split::ALL {
            let mut tokens = Vec::new();
            for s in &sentences[split.index()] {
                for w in &s.words {
                    let id = TokenId::new(split, s.sentence_index, w.word_index);
                    let wp = pieces
                        .as_ref()
                        .and_then(|p| p[split.index()].get(s.sentence_index))
                        .and_then(|row| row.get(w.word_index));
                    if wp.is_some_and(|wp| wp.dropped) {
                        if predictions.remove(&id).is_some() {
                            issues.push(Violation::new(Rule::UnknownId, id.to_string(), "prediction for dropped word"));
                        }
                        continue;
                    }
                    let (core_piece, piece_count) = match wp {
                        Some(wp) => (
                            wp.pieces.first().cloned().unwrap_or_default(),
                            wp.pieces.len() as u32,
                        ),
                        None => (w.surface.clone(), 1),
                    };
                    let mut record = CoreTokenRecord {
                        id,
                        surface: w.surface.clone(),
                        core_piece,
                        piece_count,
                        gold_label: w.gold_label,
                        predicted_label: None,
                        probabilities: None,
                        loss: None,
                        embedding_ref: fine.and_then(|t| t.row_of(&id)),
                        pretrained_embedding_ref: pre.and_then(|t| t.row_of(&id)),
                    };
                    if let Some(p) = predictions.remove(&id) {
                        match labels.id(&p.pred) {
                            Some(l) => record.predicted_label = Some(l),
                            None => issues.push(Violation::new(
                                Rule::UnknownLabel,
                                id.to_string(),
                                format!("predicted label `{}` not in label set", p.pred),
                            )),
                        }
                        record.probabilities = Some(p.probs);
                        record.loss = p.loss;
                    }
                    tokens.push(record);
                }
            }
            core_tokens[split.index()] = tokens;
        }
        let mut orphans: Vec<TokenId> = predictions.into_keys().collect();
        orphans.sort();
        for id in orphans {
            issues.push(Violation::new(Rule::UnknownId, id.to_string(), "prediction for unknown token"));
        }

        Ok(ExtractionBundle {
            manifest,
            labels,
            sentences,
            pieces,
            core_tokens,
            embeddings: parts.embeddings,
            projection: parts.projection,
            attention: parts.attention,
            attention_weights: parts.attention_weights,
            load_issues: issues,
        })
    }

    pub fn sentences(&self, split: Split) -> &[SentenceRecord] {
        &self.sentences[split.index()]
    }

    pub fn core_tokens(&self, split: Split) -> &[CoreTokenRecord] {
        &self.core_tokens[split.index()]
    }

    pub fn pieces(&self, split: Split) -> Option<&[Vec<WordPieces>]> {
        self.pieces.as_ref().map(|p| p[split.index()].as_slice())
    }

    pub fn word_pieces(&self, id: &TokenId) -> Option<&WordPieces> {
        self.pieces(id.split)?
            .get(id.sentence as usize)?
            .get(id.word as usize)
    }

    pub fn is_dropped(&self, id: &TokenId) -> bool {
        self.word_pieces(id).is_some_and(|wp| wp.dropped)
    }

    pub fn core_token_index(&self, id: &TokenId) -> Option<usize> {
        self.core_tokens(id.split)
            .binary_search_by(|t| t.id.cmp(id))
            .ok()
    }

    pub fn core_token(&self, id: &TokenId) -> Option<&CoreTokenRecord> {
        self.core_token_index(id).map(|i| &self.core_tokens(id.split)[i])
    }

    pub fn has_predictions(&self) -> bool {
        self.core_tokens(Split::Test)
            .iter()
            .any(|t| t.predicted_label.is_some())
    }

    pub fn embedding(&self, key: EmbeddingKey) -> Option<&EmbeddingTable> {
        self.embeddings.get(&key)
    }

    pub fn attention_index(&self) -> Option<&AttentionIndex> {
        self.manifest.artifacts.attention.as_ref()
    }

    /// Loads one sentence's (pretrained, fine-tuned) attention pair.
    pub fn attention_pair(&self, sentence: usize) -> Result<Option<(AttentionDump, AttentionDump)>> {
        match &self.attention {
            None => Ok(None),
            Some(AttentionStore::Memory(map)) => Ok(map.get(&sentence).cloned()),
            Some(AttentionStore::Disk(root)) => {
                let Some(index) = self.attention_index() else {
                    return Ok(None);
                };
                let Some(entry) = index.sentences.iter().find(|e| e.index == sentence) else {
                    return Ok(None);
                };
                read_attention_pair(root, *entry).map(Some)
            }
        }
    }

    /// Per-word gold tags of a sentence in word order, with dropped words
    /// read as outside.
    pub fn sentence_gold(&self, split: Split, sentence: usize) -> Vec<LabelId> {
        let s = &self.sentences(split)[sentence];
        s.words
            .iter()
            .map(|w| {
                if self.is_dropped(&TokenId::new(split, sentence, w.word_index)) {
                    self.labels.outside()
                } else {
                    w.gold_label
                }
            })
            .collect()
    }

    /// Per-word predicted tags of a sentence; missing predictions read as
    /// outside.
    pub fn sentence_pred(&self, split: Split, sentence: usize) -> Vec<LabelId> {
        let s = &self.sentences(split)[sentence];
        s.words
            .iter()
            .map(|w| {
                self.core_token(&TokenId::new(split, sentence, w.word_index))
                    .and_then(|t| t.predicted_label)
                    .unwrap_or(self.labels.outside())
            })
            .collect()
    }
}
