//! Vocabulary structure at word and core-token level: diversity ratios,
//! per-tag type statistics, OOV rates and tag-overlap matrices.
//!
//! Types are exact, case-sensitive surface strings. Word level counts every
//! word, dropped ones included; token level counts core pieces of core
//! tokens only.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::bundle::{ExtractionBundle, LabelId, Split, TokenId, VocabLevel};
use crate::error::{Error, Result};
use crate::stats::population_std;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Train,
    Test,
    All,
}

impl Scope {
    fn splits(self) -> &'static [Split] {
        match self {
            Scope::Train => &[Split::Train],
            Scope::Test => &[Split::Test],
            Scope::All => &Split::ALL,
        }
    }
}

impl std::str::FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Scope::Train),
            "test" => Ok(Scope::Test),
            "all" | "dataset" => Ok(Scope::All),
            other => Err(Error::InvalidInput(format!("unknown scope `{other}`"))),
        }
    }
}

/// (surface, gold label) for every counted unit of one split.
pub fn observations(bundle: &ExtractionBundle, level: VocabLevel, split: Split) -> Vec<(&str, LabelId)> {
    match level {
        VocabLevel::Word => bundle
            .sentences(split)
            .iter()
            .flat_map(|s| s.words.iter().map(|w| (w.surface.as_str(), w.gold_label)))
            .collect(),
        VocabLevel::CoreToken => bundle
            .core_tokens(split)
            .iter()
            .map(|t| (t.core_piece.as_str(), t.gold_label))
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityStats {
    pub level: VocabLevel,
    pub scope: Scope,
    pub tokens: usize,
    pub types: usize,
    pub entity_tokens: usize,
    /// Distinct surfaces under any entity label, deduplicated across tags.
    pub entity_types: usize,
    /// Types over tokens.
    pub type_ratio: f64,
    pub ne_proportion: f64,
    /// Entity types over entity tokens.
    pub tewr: f64,
    /// Distinct surfaces per entity label.
    pub entity_types_per_tag: BTreeMap<String, usize>,
    /// Words flagged as dropped; they are counted at word level only.
    pub dropped_words: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn diversity_from(
    level: VocabLevel,
    scope: Scope,
    obs: &[(&str, LabelId)],
    outside: LabelId,
    label_names: &[String],
) -> DiversityStats {
    let types: HashSet<&str> = obs.iter().map(|o| o.0).collect();
    let entity: Vec<&(&str, LabelId)> = obs.iter().filter(|o| o.1 != outside).collect();
    let entity_types: HashSet<&str> = entity.iter().map(|o| o.0).collect();
    let mut per_tag: BTreeMap<String, HashSet<&str>> = BTreeMap::new();
    for (s, l) in &entity {
        per_tag.entry(label_names[l.index()].clone()).or_default().insert(s);
    }
    DiversityStats {
        level,
        scope,
        tokens: obs.len(),
        types: types.len(),
        entity_tokens: entity.len(),
        entity_types: entity_types.len(),
        type_ratio: ratio(types.len(), obs.len()),
        ne_proportion: ratio(entity.len(), obs.len()),
        tewr: ratio(entity_types.len(), entity.len()),
        entity_types_per_tag: per_tag.into_iter().map(|(k, v)| (k, v.len())).collect(),
        dropped_words: 0,
    }
}

pub fn diversity_stats(bundle: &ExtractionBundle, level: VocabLevel, scope: Scope) -> DiversityStats {
    let obs: Vec<(&str, LabelId)> = scope
        .splits()
        .iter()
        .flat_map(|&s| observations(bundle, level, s))
        .collect();
    let mut out = diversity_from(level, scope, &obs, bundle.labels.outside(), bundle.labels.labels());
    out.dropped_words = scope
        .splits()
        .iter()
        .flat_map(|&split| {
            bundle.sentences(split).iter().flat_map(move |s| {
                s.words
                    .iter()
                    .map(move |w| TokenId::new(split, s.sentence_index, w.word_index))
            })
        })
        .filter(|id| bundle.is_dropped(id))
        .count();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagTypeStats {
    pub label: String,
    pub tokens: usize,
    pub type_count: usize,
    pub type_to_count_ratio: f64,
    /// Population standard deviation of per-type frequencies.
    pub frequency_stddev: f64,
}

/// Labels with no occurrences are omitted.
pub fn per_tag_type_stats_from(obs: &[(&str, LabelId)], label_names: &[String]) -> Vec<TagTypeStats> {
    let mut freq: Vec<HashMap<&str, usize>> = vec![HashMap::new(); label_names.len()];
    for (s, l) in obs {
        *freq[l.index()].entry(s).or_default() += 1;
    }
    freq.iter()
        .enumerate()
        .filter(|(_, f)| !f.is_empty())
        .map(|(i, f)| {
            let tokens: usize = f.values().sum();
            let mut counts: Vec<f64> = f.values().map(|&c| c as f64).collect();
            counts.sort_by(f64::total_cmp);
            TagTypeStats {
                label: label_names[i].clone(),
                tokens,
                type_count: f.len(),
                type_to_count_ratio: ratio(f.len(), tokens),
                frequency_stddev: population_std(&counts).unwrap_or(0.0),
            }
        })
        .collect()
}

pub fn per_tag_type_stats(bundle: &ExtractionBundle, level: VocabLevel, split: Split) -> Vec<TagTypeStats> {
    per_tag_type_stats_from(&observations(bundle, level, split), bundle.labels.labels())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OovRate {
    pub test_types: usize,
    pub oov_types: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OovReport {
    pub level: VocabLevel,
    pub overall: OovRate,
    /// Test occurrences whose surface is unseen in training.
    pub oov_tokens: usize,
    pub test_tokens: usize,
    /// Restricted to types occurring under the tag in test.
    pub per_tag: BTreeMap<String, OovRate>,
}

fn oov_rate(test: &HashSet<&str>, train: &HashSet<&str>) -> OovRate {
    let oov = test.iter().filter(|t| !train.contains(*t)).count();
    OovRate {
        test_types: test.len(),
        oov_types: oov,
        rate: ratio(oov, test.len()),
    }
}

pub fn oov_rates_from(
    level: VocabLevel,
    train: &[(&str, LabelId)],
    test: &[(&str, LabelId)],
    label_names: &[String],
) -> OovReport {
    let train_types: HashSet<&str> = train.iter().map(|o| o.0).collect();
    let test_types: HashSet<&str> = test.iter().map(|o| o.0).collect();
    let mut per_tag: BTreeMap<String, HashSet<&str>> = BTreeMap::new();
    for (s, l) in test {
        per_tag.entry(label_names[l.index()].clone()).or_default().insert(s);
    }
    OovReport {
        level,
        overall: oov_rate(&test_types, &train_types),
        oov_tokens: test.iter().filter(|o| !train_types.contains(o.0)).count(),
        test_tokens: test.len(),
        per_tag: per_tag
            .into_iter()
            .map(|(k, v)| (k, oov_rate(&v, &train_types)))
            .collect(),
    }
}

pub fn oov_rates(bundle: &ExtractionBundle, level: VocabLevel) -> OovReport {
    oov_rates_from(
        level,
        &observations(bundle, level, Split::Train),
        &observations(bundle, level, Split::Test),
        bundle.labels.labels(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub level: VocabLevel,
    pub split: Split,
    pub labels: Vec<String>,
    /// Cell (a, b): surfaces seen under both labels; diagonal is zero.
    pub cells: Vec<Vec<u64>>,
}

pub fn tag_overlap_from(obs: &[(&str, LabelId)], n_labels: usize) -> Vec<Vec<u64>> {
    let mut by_surface: HashMap<&str, Vec<bool>> = HashMap::new();
    for (s, l) in obs {
        by_surface.entry(s).or_insert_with(|| vec![false; n_labels])[l.index()] = true;
    }
    let mut cells = vec![vec![0u64; n_labels]; n_labels];
    for present in by_surface.values() {
        let on: Vec<usize> = (0..n_labels).filter(|&i| present[i]).collect();
        for &a in &on {
            for &b in &on {
                if a != b {
                    cells[a][b] += 1;
                }
            }
        }
    }
    cells
}

pub fn tag_overlap_matrix(bundle: &ExtractionBundle, level: VocabLevel, split: Split) -> OverlapMatrix {
    OverlapMatrix {
        level,
        split,
        labels: bundle.labels.labels().to_vec(),
        cells: tag_overlap_from(&observations(bundle, level, split), bundle.labels.len()),
    }
}

impl OverlapMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.cells) {
            out.push_str(l);
            for c in row {
                out.push(',');
                out.push_str(&c.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Surfaces and counts for a published-total check: types over tokens.
pub fn type_token_ratio(types: usize, tokens: usize) -> f64 {
    ratio(types, tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{generate_fixture, FixtureSpec, LabelSet};

    fn names() -> Vec<String> {
        LabelSet::default().labels().to_vec()
    }

    #[test]
    fn published_ratios() {
        assert!((type_token_ratio(32_714, 150_110) - 0.2179).abs() < 1e-4);
        assert!((ratio(3462, 9075) - 0.3815).abs() < 1e-4);
    }

    #[test]
    fn all_distinct_corpus() {
        let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let obs: Vec<(&str, LabelId)> = words.iter().map(|w| (w.as_str(), LabelId(0))).collect();
        let d = diversity_from(VocabLevel::Word, Scope::Train, &obs, LabelId(0), &names());
        assert_eq!(d.type_ratio, 1.0);
        assert_eq!(d.entity_tokens, 0);
    }

    #[test]
    fn per_tag_stats() {
        let obs = vec![("a", LabelId(1)); 5];
        let s = per_tag_type_stats_from(&obs, &names());
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].type_to_count_ratio, s[0].frequency_stddev), (0.2, 0.0));
        let obs = vec![("a", LabelId(2)), ("a", LabelId(2)), ("a", LabelId(2)), ("b", LabelId(2))];
        assert_eq!(per_tag_type_stats_from(&obs, &names())[0].frequency_stddev, 1.0);
    }

    #[test]
    fn oov_with_covered_test() {
        let train = vec![("a", LabelId(0)), ("b", LabelId(1))];
        let test = vec![("a", LabelId(1)), ("b", LabelId(0))];
        let r = oov_rates_from(VocabLevel::Word, &train, &test, &names());
        assert_eq!(r.overall.rate, 0.0);
        assert_eq!(r.oov_tokens, 0);
    }

    #[test]
    fn overlap_single_shared_surface() {
        let ls = LabelSet::default();
        let bl = ls.id("B-LOC").unwrap();
        let bo = ls.id("B-ORG").unwrap();
        let obs = vec![("Paris", bl), ("Paris", bo), ("Acme", bo)];
        let m = tag_overlap_from(&obs, ls.len());
        let ones: Vec<(usize, usize)> = (0..9)
            .flat_map(|a| (0..9).map(move |b| (a, b)))
            .filter(|&(a, b)| m[a][b] == 1)
            .collect();
        assert_eq!(ones, vec![(bl.index(), bo.index()), (bo.index(), bl.index())]);
        let disjoint = vec![("x", bl), ("y", bo)];
        assert!(tag_overlap_from(&disjoint, 9).iter().flatten().all(|c| *c == 0));
    }

    #[test]
    fn fixture_matches_set_oracles() {
        let b = generate_fixture(&FixtureSpec::default()).unwrap();
        let words: Vec<(String, String)> = b
            .sentences(Split::Test)
            .iter()
            .flat_map(|s| s.words.iter().map(|w| (w.surface.clone(), b.labels.name(w.gold_label).to_string())))
            .collect();
        let d = diversity_stats(&b, VocabLevel::Word, Scope::Test);
        let mut types: Vec<&String> = words.iter().map(|w| &w.0).collect();
        types.sort();
        types.dedup();
        assert_eq!(d.types, types.len());
        assert_eq!(d.tokens, words.len());

        let train: HashSet<String> = b
            .sentences(Split::Train)
            .iter()
            .flat_map(|s| s.words.iter().map(|w| w.surface.clone()))
            .collect();
        let unseen = types.iter().filter(|t| !train.contains(**t)).count();
        let r = oov_rates(&b, VocabLevel::Word);
        assert_eq!(r.overall.oov_types, unseen);
        assert!(unseen > 0);

        let m = tag_overlap_matrix(&b, VocabLevel::Word, Split::Test);
        for a in 0..9 {
            assert_eq!(m.cells[a][a], 0);
            for c in 0..9 {
                assert_eq!(m.cells[a][c], m.cells[c][a]);
                if a == c {
                    continue;
                }
                let under = |l: usize| -> HashSet<&String> {
                    words.iter().filter(|w| w.1 == b.labels.labels()[l]).map(|w| &w.0).collect()
                };
                assert_eq!(m.cells[a][c] as usize, under(a).intersection(&under(c)).count());
            }
        }
    }

    #[test]
    fn identity_tokenisation_levels_agree() {
        let b = generate_fixture(&FixtureSpec {
            subword_rate: 0.0,
            ..FixtureSpec::default()
        })
        .unwrap();
        for scope in [Scope::Train, Scope::Test, Scope::All] {
            let mut w = diversity_stats(&b, VocabLevel::Word, scope);
            let t = diversity_stats(&b, VocabLevel::CoreToken, scope);
            w.level = VocabLevel::CoreToken;
            assert_eq!(w, t);
        }
        assert_eq!(
            oov_rates(&b, VocabLevel::Word).per_tag,
            oov_rates(&b, VocabLevel::CoreToken).per_tag
        );
    }
}
