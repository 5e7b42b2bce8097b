use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::labels::{LabelId, Split, TokenId};
use super::ExtractionBundle;

/// Whether statistics run over words (pre-tokenisation) or core tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabLevel {
    Word,
    CoreToken,
}

impl std::str::FromStr for VocabLevel {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "word" => Ok(VocabLevel::Word),
            "token" | "core_token" => Ok(VocabLevel::CoreToken),
            other => Err(crate::Error::InvalidInput(format!("unknown level `{other}`"))),
        }
    }
}

/// Label-count multiset for one surface in one split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct LabelCounts(Vec<u32>);

impl LabelCounts {
    pub fn zeros(n_labels: usize) -> Self {
        LabelCounts(vec![0; n_labels])
    }

    pub fn get(&self, label: LabelId) -> u32 {
        self.0.get(label.index()).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&c| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub(crate) fn add(&mut self, label: LabelId) {
        self.0[label.index()] += 1;
    }
}

/// Surface → per-split label counts, at word and core-token level.
#[derive(Clone, Debug)]
pub struct VocabularyIndex {
    n_labels: usize,
    words: HashMap<String, [LabelCounts; 2]>,
    tokens: HashMap<String, [LabelCounts; 2]>,
    occurrences: HashMap<String, Vec<TokenId>>,
    empty: [LabelCounts; 2],
}

impl VocabularyIndex {
    /// Builds an index from `(split, surface, label)` triples per level.
    pub fn from_observations<'a, W, T>(n_labels: usize, words: W, tokens: T) -> Self
    where
        W: IntoIterator<Item = (Split, &'a str, LabelId)>,
        T: IntoIterator<Item = (Split, &'a str, LabelId)>,
    {
        let fill = |it: &mut dyn Iterator<Item = (Split, &'a str, LabelId)>| {
            let mut map: HashMap<String, [LabelCounts; 2]> = HashMap::new();
            for (split, surface, label) in it {
                let entry = map
                    .entry(surface.to_string())
                    .or_insert_with(|| [LabelCounts::zeros(n_labels), LabelCounts::zeros(n_labels)]);
                entry[split.index()].add(label);
            }
            map
        };
        VocabularyIndex {
            n_labels,
            words: fill(&mut words.into_iter()),
            tokens: fill(&mut tokens.into_iter()),
            occurrences: HashMap::new(),
            empty: [LabelCounts::zeros(n_labels), LabelCounts::zeros(n_labels)],
        }
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    /// Per-split counts; an unseen surface yields empty multisets.
    pub fn lookup(&self, level: VocabLevel, surface: &str) -> &[LabelCounts; 2] {
        let map = match level {
            VocabLevel::Word => &self.words,
            VocabLevel::CoreToken => &self.tokens,
        };
        map.get(surface).unwrap_or(&self.empty)
    }

    pub fn counts(&self, level: VocabLevel, surface: &str, split: Split) -> &LabelCounts {
        &self.lookup(level, surface)[split.index()]
    }

    pub fn surfaces(&self, level: VocabLevel) -> impl Iterator<Item = (&str, &[LabelCounts; 2])> {
        let map = match level {
            VocabLevel::Word => &self.words,
            VocabLevel::CoreToken => &self.tokens,
        };
        map.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Core tokens (both splits) whose word surface equals `surface`, in id order.
    pub fn occurrences(&self, surface: &str) -> &[TokenId] {
        self.occurrences.get(surface).map_or(&[], |v| v.as_slice())
    }
}

pub fn build_vocabulary_index(bundle: &ExtractionBundle) -> VocabularyIndex {
    let words = Split::ALL.into_iter().flat_map(|split| {
        bundle
            .sentences(split)
            .iter()
            .flat_map(move |s| s.words.iter().map(move |w| (split, w.surface.as_str(), w.gold_label)))
    });
    let tokens = Split::ALL.into_iter().flat_map(|split| {
        bundle
            .core_tokens(split)
            .iter()
            .map(move |t| (split, t.core_piece.as_str(), t.gold_label))
    });
    let mut index = VocabularyIndex::from_observations(bundle.labels.len(), words, tokens);
    for split in Split::ALL {
        for t in bundle.core_tokens(split) {
            index.occurrences.entry(t.surface.clone()).or_default().push(t.id);
        }
    }
    index
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::LabelSet;

    #[test]
    fn european_counts() {
        let ls = LabelSet::default();
        let i_org = ls.id("I-ORG").unwrap();
        let o = ls.outside();
        let obs: Vec<(Split, &str, LabelId)> = std::iter::repeat_n((Split::Train, "European", i_org), 15)
            .chain(std::iter::repeat_n((Split::Train, "European", o), 7))
            .collect();
        let idx = VocabularyIndex::from_observations(ls.len(), obs.clone(), obs);
        let c = idx.counts(VocabLevel::Word, "European", Split::Train);
        assert_eq!(c.get(i_org), 15);
        assert_eq!(c.get(o), 7);
        assert_eq!(c.total(), 22);
        assert!(idx.counts(VocabLevel::Word, "European", Split::Test).is_empty());
    }

    #[test]
    fn absent_surface_is_empty() {
        let idx = VocabularyIndex::from_observations(9, Vec::new(), Vec::new());
        let c = idx.lookup(VocabLevel::Word, "nowhere");
        assert!(c[0].is_empty() && c[1].is_empty());
    }
}
