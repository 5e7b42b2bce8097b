use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into [`LabelSet::labels`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub u16);

impl LabelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Index into [`LabelSet::entity_types`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeId(pub u16);

impl TypeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Positional reading of a label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Begin(TypeId),
    Inside(TypeId),
}

impl Tag {
    pub fn entity_type(self) -> Option<TypeId> {
        match self {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) => Some(t),
        }
    }
}

/// Ordered tag inventory. Non-outside labels are `B-TYPE` / `I-TYPE`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
    outside: LabelId,
    entity_types: Vec<String>,
    tags: Vec<Tag>,
    by_name: HashMap<String, LabelId>,
}

impl Default for LabelSet {
    fn default() -> Self {
        LabelSet::new(
            [
                "O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG", "B-MISC", "I-MISC",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            "O",
        )
        .expect("default label set is valid")
    }
}

impl LabelSet {
    pub fn new(labels: Vec<String>, outside_label: &str) -> Result<Self> {
        let mut by_name = HashMap::new();
        for (i, l) in labels.iter().enumerate() {
            if by_name.insert(l.clone(), LabelId(i as u16)).is_some() {
                return Err(Error::InvalidLabelSet(format!("duplicate label `{l}`")));
            }
        }
        let outside = *by_name.get(outside_label).ok_or_else(|| {
            Error::InvalidLabelSet(format!("outside label `{outside_label}` not in label list"))
        })?;
        let mut entity_types: Vec<String> = Vec::new();
        let mut tags = Vec::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if i == outside.index() {
                tags.push(Tag::Outside);
                continue;
            }
            let (prefix, ty) = l
                .split_once('-')
                .filter(|(p, t)| (*p == "B" || *p == "I") && !t.is_empty())
                .ok_or_else(|| {
                    Error::InvalidLabelSet(format!("label `{l}` does not match {{B|I}}-TYPE"))
                })?;
            let tid = match entity_types.iter().position(|t| t == ty) {
                Some(p) => TypeId(p as u16),
                None => {
                    entity_types.push(ty.to_string());
                    TypeId((entity_types.len() - 1) as u16)
                }
            };
            tags.push(if prefix == "B" {
                Tag::Begin(tid)
            } else {
                Tag::Inside(tid)
            });
        }
        Ok(LabelSet {
            labels,
            outside,
            entity_types,
            tags,
            by_name,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn outside(&self) -> LabelId {
        self.outside
    }

    pub fn outside_label(&self) -> &str {
        &self.labels[self.outside.index()]
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn id(&self, label: &str) -> Option<LabelId> {
        self.by_name.get(label).copied()
    }

    pub fn name(&self, id: LabelId) -> &str {
        &self.labels[id.index()]
    }

    pub fn type_name(&self, t: TypeId) -> &str {
        &self.entity_types[t.index()]
    }

    pub fn type_id(&self, name: &str) -> Option<TypeId> {
        self.entity_types
            .iter()
            .position(|t| t == name)
            .map(|p| TypeId(p as u16))
    }

    pub fn tag(&self, id: LabelId) -> Tag {
        self.tags[id.index()]
    }

    /// Label id of `B-TYPE` / `I-TYPE`, when present in the set.
    pub fn label_for(&self, tag: Tag) -> Option<LabelId> {
        self.tags.iter().position(|&t| t == tag).map(|p| LabelId(p as u16))
    }

    pub fn tags_of(&self, ids: &[LabelId]) -> Vec<Tag> {
        ids.iter().map(|&id| self.tag(id)).collect()
    }

    /// Parses label strings into tags, rejecting anything outside the set.
    pub fn parse_tags<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<Tag>> {
        labels
            .iter()
            .map(|l| {
                self.id(l.as_ref())
                    .map(|id| self.tag(id))
                    .ok_or_else(|| Error::UnknownTag(l.as_ref().to_string()))
            })
            .collect()
    }

    pub fn parse_ids<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<LabelId>> {
        labels
            .iter()
            .map(|l| {
                self.id(l.as_ref())
                    .ok_or_else(|| Error::UnknownTag(l.as_ref().to_string()))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Canonical token identity, rendered `{split}:{sentence}:{word}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenId {
    pub split: Split,
    pub sentence: u32,
    pub word: u32,
}

impl TokenId {
    pub fn new(split: Split, sentence: usize, word: usize) -> Self {
        TokenId {
            split,
            sentence: sentence as u32,
            word: word as u32,
        }
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.split, self.sentence, self.word)
    }
}

impl std::str::FromStr for TokenId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("malformed token id `{s}`"));
        let mut parts = s.split(':');
        let split = parts.next().ok_or_else(bad)?.parse()?;
        let sentence = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let word = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(TokenId {
            split,
            sentence,
            word,
        })
    }
}

impl Serialize for TokenId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TokenId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
