use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::labels::LabelSet;
use super::SentenceRecord;
use crate::error::{Error, Result};

/// Relative tolerance on both targets.
pub const DOWNSAMPLE_TOLERANCE: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DownsampleTarget {
    pub tokens: usize,
    pub entity_tokens: usize,
}

/// (total tokens, entity tokens) of a sentence list.
pub fn corpus_totals(sentences: &[SentenceRecord], labels: &LabelSet) -> (usize, usize) {
    sentences.iter().fold((0, 0), |(t, e), s| {
        let ents = s.words.iter().filter(|w| w.gold_label != labels.outside()).count();
        (t + s.words.len(), e + ents)
    })
}

fn within(achieved: usize, target: usize) -> bool {
    (achieved as f64 - target as f64).abs() <= DOWNSAMPLE_TOLERANCE * target as f64
}

/// Seeded greedy sentence sampling toward a token and entity-token budget.
///
/// Sentences are visited in a seeded random order and kept whenever both
/// running totals stay under their upper bound (target + 2%). The result
/// keeps the original corpus order and sentence indices.
pub fn downsample_corpus(
    sentences: &[SentenceRecord],
    labels: &LabelSet,
    target: DownsampleTarget,
    seed: u64,
) -> Result<Vec<SentenceRecord>> {
    let (total, total_ent) = corpus_totals(sentences, labels);
    if target.tokens > total || target.entity_tokens > total_ent {
        return Err(Error::InfeasibleTarget {
            achieved_tokens: total,
            achieved_entity_tokens: total_ent,
        });
    }
    let cap_tokens = (target.tokens as f64 * (1.0 + DOWNSAMPLE_TOLERANCE)).floor() as usize;
    let cap_ent = (target.entity_tokens as f64 * (1.0 + DOWNSAMPLE_TOLERANCE)).floor() as usize;

    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let sizes: Vec<(usize, usize)> = sentences
        .iter()
        .map(|s| corpus_totals(std::slice::from_ref(s), labels))
        .collect();
    let mut keep = vec![false; sentences.len()];
    let (mut tokens, mut ents) = (0usize, 0usize);
    for &i in &order {
        let (t, e) = sizes[i];
        if tokens + t <= cap_tokens && ents + e <= cap_ent {
            keep[i] = true;
            tokens += t;
            ents += e;
            if tokens >= target.tokens && ents >= target.entity_tokens {
                break;
            }
        }
    }
    if !within(tokens, target.tokens) || !within(ents, target.entity_tokens) {
        return Err(Error::InfeasibleTarget {
            achieved_tokens: tokens,
            achieved_entity_tokens: ents,
        });
    }
    Ok(sentences
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(s, _)| s.clone())
        .collect())
}
