//! Pretrained vs fine-tuned attention comparison, per layer and head.
//!
//! Score similarity is the cosine between the flattened top-left
//! `valid_len x valid_len` squares of the two states, so padding positions
//! never contribute. Weight similarity is the cosine between per-head
//! parameter vectors.

use serde::{Deserialize, Serialize};

use crate::bundle::{AttentionDump, AttentionWeights, ExtractionBundle};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::stats::{cosine, pairwise_sum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    Scores,
    Weights,
}

impl std::str::FromStr for SimilarityKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scores" | "score" => Ok(SimilarityKind::Scores),
            "weights" | "weight" => Ok(SimilarityKind::Weights),
            other => Err(Error::InvalidInput(format!("unknown similarity kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSimilarityMatrix {
    pub kind: SimilarityKind,
    pub layers: usize,
    pub heads: usize,
    /// `cells[layer][head]`; `None` where no comparison was defined.
    pub cells: Vec<Vec<Option<f64>>>,
    /// Sentences averaged over (scores only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentence_count: Option<usize>,
    /// Per-cell number of sentences that contributed (scores only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<Vec<Vec<usize>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceSimilarity {
    pub sentence: usize,
    pub valid_len: usize,
    pub cells: Vec<Vec<Option<f64>>>,
}

fn slice_cosine(pre: &[f32], post: &[f32], seq: usize, valid: usize) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for r in 0..valid {
        let a = &pre[r * seq..r * seq + valid];
        let b = &post[r * seq..r * seq + valid];
        for (&x, &y) in a.iter().zip(b) {
            let (x, y) = (x as f64, y as f64);
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Per-head similarity for one sentence.
pub fn sentence_similarity(pre: &AttentionDump, post: &AttentionDump) -> Result<SentenceSimilarity> {
    if (pre.layers, pre.heads, pre.seq, pre.valid_len) != (post.layers, post.heads, post.seq, post.valid_len) {
        return Err(Error::ShapeMismatch(format!(
            "sentence {}: attention {}x{}x{} (valid {}) vs {}x{}x{} (valid {})",
            pre.sentence,
            pre.layers,
            pre.heads,
            pre.seq,
            pre.valid_len,
            post.layers,
            post.heads,
            post.seq,
            post.valid_len
        )));
    }
    let cells = (0..pre.layers)
        .map(|l| {
            (0..pre.heads)
                .map(|h| slice_cosine(pre.slice(l, h), post.slice(l, h), pre.seq, pre.valid_len))
                .collect()
        })
        .collect();
    Ok(SentenceSimilarity {
        sentence: pre.sentence,
        valid_len: pre.valid_len,
        cells,
    })
}

/// Mean of per-sentence matrices, each cell averaged over the sentences
/// where it is defined.
pub fn aggregate_scores(per_sentence: &[SentenceSimilarity], layers: usize, heads: usize) -> Result<HeadSimilarityMatrix> {
    let mut values = vec![vec![Vec::new(); heads]; layers];
    for s in per_sentence {
        if s.cells.len() != layers || s.cells.iter().any(|r| r.len() != heads) {
            return Err(Error::ShapeMismatch(format!(
                "sentence {} does not have {layers}x{heads} heads",
                s.sentence
            )));
        }
        for (l, row) in s.cells.iter().enumerate() {
            for (h, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    values[l][h].push(*v);
                }
            }
        }
    }
    let cells = values
        .iter()
        .map(|row| {
            row.iter()
                .map(|v| (!v.is_empty()).then(|| pairwise_sum(v) / v.len() as f64))
                .collect()
        })
        .collect();
    let coverage = values.iter().map(|row| row.iter().map(Vec::len).collect()).collect();
    Ok(HeadSimilarityMatrix {
        kind: SimilarityKind::Scores,
        layers,
        heads,
        cells,
        sentence_count: Some(per_sentence.len()),
        coverage: Some(coverage),
    })
}

/// Score similarity over paired dumps. Returns the aggregate and the
/// per-sentence matrices in input order.
pub fn score_similarity(
    pairs: &[(AttentionDump, AttentionDump)],
    execution: Execution,
) -> Result<(HeadSimilarityMatrix, Vec<SentenceSimilarity>)> {
    let (layers, heads) = pairs.first().map_or((0, 0), |p| (p.0.layers, p.0.heads));
    let per: Vec<SentenceSimilarity> = execution
        .map_slice(pairs, |(a, b)| sentence_similarity(a, b))
        .into_iter()
        .collect::<Result<_>>()?;
    Ok((aggregate_scores(&per, layers, heads)?, per))
}

/// Score similarity over every dumped sentence of a bundle, reading each
/// pair on demand. `None` when the bundle carries no attention.
pub fn bundle_score_similarity(
    bundle: &ExtractionBundle,
    execution: Execution,
) -> Result<Option<(HeadSimilarityMatrix, Vec<SentenceSimilarity>)>> {
    let Some(index) = bundle.attention_index() else {
        return Ok(None);
    };
    let per: Vec<SentenceSimilarity> = execution
        .map_slice(&index.sentences, |e| -> Result<Option<SentenceSimilarity>> {
            match bundle.attention_pair(e.index)? {
                Some((a, b)) => sentence_similarity(&a, &b).map(Some),
                None => Ok(None),
            }
        })
        .into_iter()
        .filter_map(|r| r.transpose())
        .collect::<Result<_>>()?;
    Ok(Some((aggregate_scores(&per, index.layers, index.heads)?, per)))
}

pub fn weight_similarity(pre: &AttentionWeights, post: &AttentionWeights) -> Result<HeadSimilarityMatrix> {
    if (pre.layers, pre.heads) != (post.layers, post.heads) {
        return Err(Error::ShapeMismatch(format!(
            "weights {}x{} vs {}x{}",
            pre.layers, pre.heads, post.layers, post.heads
        )));
    }
    let mut cells = Vec::with_capacity(pre.layers);
    for l in 0..pre.layers {
        let mut row = Vec::with_capacity(pre.heads);
        for h in 0..pre.heads {
            let (a, b) = (pre.vector(l, h), post.vector(l, h));
            if a.len() != b.len() {
                return Err(Error::LengthMismatch {
                    left: a.len(),
                    right: b.len(),
                });
            }
            row.push(cosine(a, b).map(|c| c.clamp(-1.0, 1.0)));
        }
        cells.push(row);
    }
    Ok(HeadSimilarityMatrix {
        kind: SimilarityKind::Weights,
        layers: pre.layers,
        heads: pre.heads,
        cells,
        sentence_count: None,
        coverage: None,
    })
}
