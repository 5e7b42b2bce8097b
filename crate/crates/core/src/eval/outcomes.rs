use serde::{Deserialize, Serialize};

use crate::bundle::{LabelId, LabelSet};
use crate::error::{Error, Result};
use crate::spans::Span;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Token,
    Entity,
}

impl std::str::FromStr for Level {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token" => Ok(Level::Token),
            "entity" | "span" => Ok(Level::Entity),
            other => Err(Error::InvalidInput(format!("unknown level `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Token level only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tn: Option<u64>,
}

impl ClassCounts {
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn predicted(&self) -> u64 {
        self.tp + self.fp
    }
}

/// One-vs-rest counts per class. Token-level classes are labels, entity-level
/// classes are entity types.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub level: Level,
    pub classes: Vec<String>,
    pub counts: Vec<ClassCounts>,
}

impl OutcomeCounts {
    pub fn get(&self, class: &str) -> Option<&ClassCounts> {
        self.classes.iter().position(|c| c == class).map(|i| &self.counts[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ClassCounts)> {
        self.classes.iter().map(String::as_str).zip(&self.counts)
    }

    /// Builds token-level or entity-level counts from explicit per-class
    /// values, e.g. published tables.
    pub fn from_counts(level: Level, rows: &[(&str, ClassCounts)]) -> Self {
        OutcomeCounts {
            level,
            classes: rows.iter().map(|r| r.0.to_string()).collect(),
            counts: rows.iter().map(|r| r.1).collect(),
        }
    }

    pub fn total(&self) -> ClassCounts {
        self.counts.iter().fold(ClassCounts::default(), |a, c| ClassCounts {
            tp: a.tp + c.tp,
            fp: a.fp + c.fp,
            fn_: a.fn_ + c.fn_,
            tn: None,
        })
    }
}

/// Token-level one-vs-rest counts over parallel tag sequences.
pub fn token_outcomes(labels: &LabelSet, gold: &[LabelId], pred: &[LabelId]) -> Result<OutcomeCounts> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: gold.len(),
            right: pred.len(),
        });
    }
    let n = labels.len();
    let mut counts = vec![ClassCounts::default(); n];
    for (&g, &p) in gold.iter().zip(pred) {
        if g.index() >= n || p.index() >= n {
            return Err(Error::InvalidInput(format!("label id out of range: {} / {}", g.0, p.0)));
        }
        if g == p {
            counts[g.index()].tp += 1;
        } else {
            counts[p.index()].fp += 1;
            counts[g.index()].fn_ += 1;
        }
    }
    let total = gold.len() as u64;
    for c in &mut counts {
        c.tn = Some(total - c.tp - c.fp - c.fn_);
    }
    Ok(OutcomeCounts {
        level: Level::Token,
        classes: labels.labels().to_vec(),
        counts,
    })
}

/// Entity-level counts: exact (sentence, type, start, end) matches are TP,
/// remaining predicted spans FP of their type, remaining gold spans FN.
pub fn entity_outcomes(labels: &LabelSet, gold: &[Span], pred: &[Span]) -> OutcomeCounts {
    let n = labels.entity_types().len();
    let mut counts = vec![ClassCounts::default(); n];
    let gold_set: std::collections::HashSet<&Span> = gold.iter().collect();
    let pred_set: std::collections::HashSet<&Span> = pred.iter().collect();
    for p in pred {
        if gold_set.contains(p) {
            counts[p.entity_type.index()].tp += 1;
        } else {
            counts[p.entity_type.index()].fp += 1;
        }
    }
    for g in gold {
        if !pred_set.contains(g) {
            counts[g.entity_type.index()].fn_ += 1;
        }
    }
    OutcomeCounts {
        level: Level::Entity,
        classes: labels.entity_types().to_vec(),
        counts,
    }
}

/// Gold-by-prediction count matrix, rows and columns in label order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub cells: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gold\\pred");
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

pub fn token_confusion_matrix(labels: &LabelSet, gold: &[LabelId], pred: &[LabelId]) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: gold.len(),
            right: pred.len(),
        });
    }
    let n = labels.len();
    let mut cells = vec![vec![0u64; n]; n];
    for (g, p) in gold.iter().zip(pred) {
        cells[g.index()][p.index()] += 1;
    }
    Ok(ConfusionMatrix {
        labels: labels.labels().to_vec(),
        cells,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeShares {
    pub tp_share: f64,
    pub fp_share: f64,
    pub fn_share: f64,
}

/// TP/FP/FN as shares of TP+FP+FN; classes with a zero denominator are left
/// out.
pub fn outcome_proportions(counts: &OutcomeCounts) -> Vec<(String, OutcomeShares)> {
    counts
        .iter()
        .filter_map(|(class, c)| {
            let d = (c.tp + c.fp + c.fn_) as f64;
            (d > 0.0).then(|| {
                (
                    class.to_string(),
                    OutcomeShares {
                        tp_share: c.tp as f64 / d,
                        fp_share: c.fp as f64 / d,
                        fn_share: c.fn_ as f64 / d,
                    },
                )
            })
        })
        .collect()
}
