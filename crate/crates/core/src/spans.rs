//! Tag-sequence span decoding under repair or discard mechanics, and IOB2
//! scheme-violation detection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bundle::{LabelId, LabelSet, Tag, TypeId};
use crate::error::{Error, Result};

/// How an `I-` tag that cannot continue an open span is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// The orphan `I-X` opens a new span (non-strict scoring).
    Repair,
    /// The orphan `I-X` and the rest of its run are read as `O` (strict).
    Discard,
}

impl DecodeMode {
    pub const ALL: [DecodeMode; 2] = [DecodeMode::Repair, DecodeMode::Discard];

    pub fn as_str(self) -> &'static str {
        match self {
            DecodeMode::Repair => "repair",
            DecodeMode::Discard => "discard",
        }
    }
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "repair" | "non-strict" | "nonstrict" | "iob1" => Ok(DecodeMode::Repair),
            "discard" | "strict" | "iob2" => Ok(DecodeMode::Discard),
            other => Err(Error::InvalidInput(format!("unknown decode mode `{other}`"))),
        }
    }
}

/// An entity occurrence over the half-open word range `start..end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
    pub entity_type: TypeId,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    /// Shared word count with `other`; zero across sentences.
    pub fn overlap(&self, other: &Span) -> usize {
        if self.sentence != other.sentence {
            return 0;
        }
        self.end.min(other.end).saturating_sub(self.start.max(other.start))
    }

    pub fn same_bounds(&self, other: &Span) -> bool {
        self.sentence == other.sentence && self.start == other.start && self.end == other.end
    }

    pub fn to_json(&self, labels: &LabelSet) -> SpanJson {
        SpanJson {
            sentence: self.sentence,
            entity_type: labels.type_name(self.entity_type).to_string(),
            start: self.start,
            end: self.end,
        }
    }
}

/// Wire form of a [`Span`] with the type spelled out.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanJson {
    pub sentence: usize,
    #[serde(rename = "type")]
    pub entity_type: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationRule {
    IStartAfterO,
    IStartAtSentenceStart,
    ITypeSwitch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SchemeViolation {
    pub sentence: usize,
    pub index: usize,
    pub rule: ViolationRule,
}

/// Decodes one sentence's tags into spans, in textual order.
pub fn decode_spans(tags: &[Tag], mode: DecodeMode, sentence: usize) -> Vec<Span> {
    let mut out = Vec::new();
    let mut open: Option<(TypeId, usize)> = None;
    let close = |open: &mut Option<(TypeId, usize)>, end: usize, out: &mut Vec<Span>| {
        if let Some((t, start)) = open.take() {
            out.push(Span {
                sentence,
                start,
                end,
                entity_type: t,
            });
        }
    };
    for (i, tag) in tags.iter().enumerate() {
        match *tag {
            Tag::Outside => close(&mut open, i, &mut out),
            Tag::Begin(t) => {
                close(&mut open, i, &mut out);
                open = Some((t, i));
            }
            Tag::Inside(t) => match open {
                Some((o, _)) if o == t => {}
                _ => {
                    close(&mut open, i, &mut out);
                    if mode == DecodeMode::Repair {
                        open = Some((t, i));
                    }
                }
            },
        }
    }
    close(&mut open, tags.len(), &mut out);
    out
}

/// Decodes label ids, for callers holding ids rather than tags.
pub fn decode_labels(labels: &LabelSet, ids: &[LabelId], mode: DecodeMode, sentence: usize) -> Vec<Span> {
    decode_spans(&labels.tags_of(ids), mode, sentence)
}

/// Decodes label strings, failing on tags outside the label set.
pub fn decode_strs<S: AsRef<str>>(labels: &LabelSet, tags: &[S], mode: DecodeMode) -> Result<Vec<Span>> {
    Ok(decode_spans(&labels.parse_tags(tags)?, mode, 0))
}

/// Every `I-` token that cannot legally continue a span under IOB2. An
/// `I-X` following another `I-X` is legal even if the first was itself an
/// orphan, so each orphan run reports once.
pub fn find_scheme_violations(tags: &[Tag], sentence: usize) -> Vec<SchemeViolation> {
    let mut out = Vec::new();
    for (i, tag) in tags.iter().enumerate() {
        let Tag::Inside(t) = *tag else { continue };
        let rule = if i == 0 {
            Some(ViolationRule::IStartAtSentenceStart)
        } else {
            match tags[i - 1] {
                Tag::Outside => Some(ViolationRule::IStartAfterO),
                prev if prev.entity_type() != Some(t) => Some(ViolationRule::ITypeSwitch),
                _ => None,
            }
        };
        if let Some(rule) = rule {
            out.push(SchemeViolation {
                sentence,
                index: i,
                rule,
            });
        }
    }
    out
}

/// Strict IOB2 tags of length `len` for non-overlapping spans.
pub fn encode_iob2(spans: &[Span], len: usize) -> Vec<Tag> {
    let mut tags = vec![Tag::Outside; len];
    for s in spans {
        tags[s.start] = Tag::Begin(s.entity_type);
        for t in &mut tags[s.start + 1..s.end] {
            *t = Tag::Inside(s.entity_type);
        }
    }
    tags
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub count: usize,
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

pub fn span_length_stats(spans: &[Span]) -> BTreeMap<TypeId, LengthStats> {
    let mut acc: BTreeMap<TypeId, (usize, usize, usize, usize)> = BTreeMap::new();
    for s in spans {
        let e = acc.entry(s.entity_type).or_insert((0, 0, usize::MAX, 0));
        e.0 += 1;
        e.1 += s.len();
        e.2 = e.2.min(s.len());
        e.3 = e.3.max(s.len());
    }
    acc.into_iter()
        .map(|(t, (count, total, min, max))| {
            (
                t,
                LengthStats {
                    count,
                    mean: total as f64 / count as f64,
                    min,
                    max,
                },
            )
        })
        .collect()
}
