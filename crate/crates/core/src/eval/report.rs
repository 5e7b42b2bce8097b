use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::outcomes::{Level, OutcomeCounts};
use crate::spans::DecodeMode;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Drop the outside label from token-level reports entirely.
    pub exclude_o: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Metrics that were 0/0 and reported as 0.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub macro_avg: Prf,
    pub micro_avg: Prf,
    pub weighted_avg: Prf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub level: Level,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<DecodeMode>,
    pub classes: Vec<ClassMetrics>,
    pub aggregates: Aggregates,
    pub total_support: u64,
    /// Aggregates that hit a 0/0 and were reported as 0.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

fn ratio(num: u64, den: u64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if p + r == 0.0 {
        undefined.push(name.to_string());
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-class precision, recall and F1 with macro, micro and support-weighted
/// aggregates.
pub fn build_report(
    outcomes: &OutcomeCounts,
    mode: Option<DecodeMode>,
    outside_label: &str,
    opts: ReportOptions,
) -> ClassificationReport {
    let mut classes = Vec::new();
    for (name, c) in outcomes.iter() {
        if opts.exclude_o && outcomes.level == Level::Token && name == outside_label {
            continue;
        }
        let mut undefined = Vec::new();
        let precision = ratio(c.tp, c.tp + c.fp, "precision", &mut undefined);
        let recall = ratio(c.tp, c.tp + c.fn_, "recall", &mut undefined);
        let f1 = harmonic(precision, recall, "f1", &mut undefined);
        classes.push(ClassMetrics {
            class: name.to_string(),
            precision,
            recall,
            f1,
            support: c.support(),
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            undefined,
        });
    }

    let mut undefined = Vec::new();
    let n = classes.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if classes.is_empty() {
            0.0
        } else {
            classes.iter().map(f).sum::<f64>() / n
        }
    };
    let macro_avg = Prf {
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        f1: mean(|c| c.f1),
    };
    if classes.is_empty() {
        undefined.push("macro".to_string());
    }

    let (tp, fp, fn_) = classes
        .iter()
        .fold((0, 0, 0), |a, c| (a.0 + c.tp, a.1 + c.fp, a.2 + c.fn_));
    let mp = ratio(tp, tp + fp, "micro.precision", &mut undefined);
    let mr = ratio(tp, tp + fn_, "micro.recall", &mut undefined);
    let micro_avg = Prf {
        precision: mp,
        recall: mr,
        f1: harmonic(mp, mr, "micro.f1", &mut undefined),
    };

    let total_support: u64 = classes.iter().map(|c| c.support).sum();
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if total_support == 0 {
            0.0
        } else {
            classes.iter().map(|c| c.support as f64 * f(c)).sum::<f64>() / total_support as f64
        }
    };
    let weighted_avg = Prf {
        precision: weighted(|c| c.precision),
        recall: weighted(|c| c.recall),
        f1: weighted(|c| c.f1),
    };
    if total_support == 0 {
        undefined.push("weighted".to_string());
    }

    ClassificationReport {
        level: outcomes.level,
        mode,
        classes,
        aggregates: Aggregates {
            macro_avg,
            micro_avg,
            weighted_avg,
        },
        total_support,
        undefined,
    }
}

impl ClassificationReport {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.class == name)
    }

    /// Aligned table: one row per class, then the three aggregate rows.
    pub fn to_text(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(|c| c.class.chars().count())
            .chain(std::iter::once("weighted avg".len()))
            .max()
            .unwrap_or(12);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>width$}  {:>9}  {:>9}  {:>9}  {:>9}",
            "", "precision", "recall", "f1-score", "support"
        );
        let _ = writeln!(out);
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{:>width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9}",
                c.class, c.precision, c.recall, c.f1, c.support
            );
        }
        let _ = writeln!(out);
        for (name, m) in [
            ("micro avg", &self.aggregates.micro_avg),
            ("macro avg", &self.aggregates.macro_avg),
            ("weighted avg", &self.aggregates.weighted_avg),
        ] {
            let _ = writeln!(
                out,
                "{:>width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9}",
                name, m.precision, m.recall, m.f1, self.total_support
            );
        }
        out
    }

    /// One CSV row per class plus the aggregates.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,support,tp,fp,fn\n");
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.class, c.precision, c.recall, c.f1, c.support, c.tp, c.fp, c.fn_
            );
        }
        for (name, m) in [
            ("micro avg", &self.aggregates.micro_avg),
            ("macro avg", &self.aggregates.macro_avg),
            ("weighted avg", &self.aggregates.weighted_avg),
        ] {
            let _ = writeln!(out, "{name},{},{},{},{},,,", m.precision, m.recall, m.f1, self.total_support);
        }
        out
    }
}
