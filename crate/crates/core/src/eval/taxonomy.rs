use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::bundle::LabelSet;
use crate::spans::{Span, SpanJson};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    FP,
    FN,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::FP => "FP",
            Side::FN => "FN",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorKind {
    Boundary,
    Entity,
    EntityAndBoundary,
    OInclusion,
    OExclusion,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 5] = [
        ErrorKind::Boundary,
        ErrorKind::Entity,
        ErrorKind::EntityAndBoundary,
        ErrorKind::OInclusion,
        ErrorKind::OExclusion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Boundary => "Boundary",
            ErrorKind::Entity => "Entity",
            ErrorKind::EntityAndBoundary => "EntityAndBoundary",
            ErrorKind::OInclusion => "OInclusion",
            ErrorKind::OExclusion => "OExclusion",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SpanErrorRecord {
    pub side: Side,
    pub span: Span,
    pub kind: ErrorKind,
    pub counterpart: Option<Span>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanErrorJson {
    pub side: Side,
    pub span: SpanJson,
    pub kind: ErrorKind,
    pub counterpart: Option<SpanJson>,
}

impl SpanErrorRecord {
    pub fn to_json(&self, labels: &LabelSet) -> SpanErrorJson {
        SpanErrorJson {
            side: self.side,
            span: self.span.to_json(labels),
            kind: self.kind,
            counterpart: self.counterpart.map(|c| c.to_json(labels)),
        }
    }
}

/// Best overlapping candidate: maximal overlap, then earliest start.
fn best_overlap<'a>(span: &Span, candidates: impl Iterator<Item = &'a Span>) -> Option<Span> {
    let mut best: Option<(usize, Span)> = None;
    for c in candidates {
        let ov = span.overlap(c);
        if ov == 0 {
            continue;
        }
        let better = match &best {
            None => true,
            Some((bov, b)) => ov > *bov || (ov == *bov && c.start < b.start),
        };
        if better {
            best = Some((ov, *c));
        }
    }
    best.map(|b| b.1)
}

fn classify(span: &Span, others: &[Span], side: Side) -> SpanErrorRecord {
    let (kind, counterpart) = if let Some(c) = others
        .iter()
        .find(|o| o.same_bounds(span) && o.entity_type != span.entity_type)
    {
        (ErrorKind::Entity, Some(*c))
    } else if let Some(c) = best_overlap(span, others.iter().filter(|o| o.entity_type == span.entity_type)) {
        (ErrorKind::Boundary, Some(c))
    } else if let Some(c) = best_overlap(span, others.iter()) {
        (ErrorKind::EntityAndBoundary, Some(c))
    } else {
        let kind = match side {
            Side::FP => ErrorKind::OInclusion,
            Side::FN => ErrorKind::OExclusion,
        };
        (kind, None)
    };
    SpanErrorRecord {
        side,
        span: *span,
        kind,
        counterpart,
    }
}

fn by_sentence(spans: &[Span]) -> HashMap<usize, Vec<Span>> {
    let mut m: HashMap<usize, Vec<Span>> = HashMap::new();
    for s in spans {
        m.entry(s.sentence).or_default().push(*s);
    }
    m
}

/// One record per FP span and per FN span. Counterparts are searched among
/// all opposing spans of the same sentence, matched ones included.
pub fn classify_span_errors(gold: &[Span], pred: &[Span]) -> Vec<SpanErrorRecord> {
    let gold_set: HashSet<&Span> = gold.iter().collect();
    let pred_set: HashSet<&Span> = pred.iter().collect();
    let gold_by = by_sentence(gold);
    let pred_by = by_sentence(pred);
    let empty = Vec::new();
    let mut out = Vec::new();
    for p in pred.iter().filter(|p| !gold_set.contains(p)) {
        out.push(classify(p, gold_by.get(&p.sentence).unwrap_or(&empty), Side::FP));
    }
    for g in gold.iter().filter(|g| !pred_set.contains(g)) {
        out.push(classify(g, pred_by.get(&g.sentence).unwrap_or(&empty), Side::FN));
    }
    out.sort_by_key(|r| (r.side, r.span));
    out
}

/// Error counts grouped by type and by (type, kind), per side.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub by_kind: BTreeMap<String, BTreeMap<String, u64>>,
    pub by_type: BTreeMap<String, BTreeMap<String, u64>>,
    pub by_type_kind: BTreeMap<String, BTreeMap<String, BTreeMap<String, u64>>>,
}

pub fn summarize_errors(labels: &LabelSet, records: &[SpanErrorRecord]) -> ErrorSummary {
    let mut s = ErrorSummary::default();
    for side in [Side::FP, Side::FN] {
        let side_key = side.as_str().to_string();
        let kinds = s.by_kind.entry(side_key.clone()).or_default();
        for k in ErrorKind::ALL {
            if (side == Side::FP && k == ErrorKind::OExclusion) || (side == Side::FN && k == ErrorKind::OInclusion) {
                continue;
            }
            kinds.insert(k.as_str().to_string(), 0);
        }
        let types = s.by_type.entry(side_key.clone()).or_default();
        for t in labels.entity_types() {
            types.insert(t.clone(), 0);
        }
        s.by_type_kind.entry(side_key).or_default();
    }
    for r in records {
        let side = r.side.as_str().to_string();
        let ty = labels.type_name(r.span.entity_type).to_string();
        let kind = r.kind.as_str().to_string();
        *s.by_kind.get_mut(&side).unwrap().entry(kind.clone()).or_default() += 1;
        *s.by_type.get_mut(&side).unwrap().entry(ty.clone()).or_default() += 1;
        *s.by_type_kind
            .get_mut(&side)
            .unwrap()
            .entry(ty)
            .or_default()
            .entry(kind)
            .or_default() += 1;
    }
    s
}

/// Entity-level confusion over entity types plus `O`. Rows are gold, columns
/// predictions. Exact matches sit on the diagonal; each FP lands at
/// (counterpart type or `O`, its type); each missed gold span with no
/// overlapping prediction lands at (its type, `O`).
pub fn entity_confusion_matrix(
    labels: &LabelSet,
    gold: &[Span],
    pred: &[Span],
    records: &[SpanErrorRecord],
) -> super::ConfusionMatrix {
    let types = labels.entity_types();
    let n = types.len() + 1;
    let o = types.len();
    let mut cells = vec![vec![0u64; n]; n];
    let gold_set: HashSet<&Span> = gold.iter().collect();
    for p in pred.iter().filter(|p| gold_set.contains(p)) {
        cells[p.entity_type.index()][p.entity_type.index()] += 1;
    }
    for r in records {
        match (r.side, r.counterpart) {
            (Side::FP, Some(c)) => cells[c.entity_type.index()][r.span.entity_type.index()] += 1,
            (Side::FP, None) => cells[o][r.span.entity_type.index()] += 1,
            (Side::FN, None) => cells[r.span.entity_type.index()][o] += 1,
            (Side::FN, Some(_)) => {}
        }
    }
    let mut names = types.to_vec();
    names.push(labels.outside_label().to_string());
    super::ConfusionMatrix { labels: names, cells }
}
