//! Two-column CoNLL reading and writing.
//!
//! Each non-blank line is `surface<WS>label` where the separator is the last
//! run of spaces/tabs on the line; a blank line ends a sentence.

use super::labels::{LabelSet, Split};
use super::{SentenceRecord, WordRecord};
use crate::error::{Error, Result};

pub fn parse_conll(text: &str, labels: &LabelSet, split: Split) -> Result<Vec<SentenceRecord>> {
    let mut sentences = Vec::new();
    let mut current: Vec<WordRecord> = Vec::new();
    for (i, raw) in text.split('\n').enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let content = line.trim_end_matches([' ', '\t']);
        if content.trim_start_matches([' ', '\t']).is_empty() {
            flush(&mut sentences, &mut current, split);
            continue;
        }
        let sep_end = content
            .rfind([' ', '\t'])
            .ok_or_else(|| Error::Parse {
                line: line_no,
                message: "expected `surface<whitespace>label`".into(),
            })?;
        let label = &content[sep_end + 1..];
        let surface = content[..sep_end].trim_end_matches([' ', '\t']);
        if surface.is_empty() {
            return Err(Error::EmptySurface { line: line_no });
        }
        let gold_label = labels.id(label).ok_or_else(|| Error::UnknownLabel {
            line: line_no,
            label: label.to_string(),
        })?;
        current.push(WordRecord {
            split,
            sentence_index: sentences.len(),
            word_index: current.len(),
            surface: surface.to_string(),
            gold_label,
        });
    }
    flush(&mut sentences, &mut current, split);
    Ok(sentences)
}

fn flush(sentences: &mut Vec<SentenceRecord>, current: &mut Vec<WordRecord>, split: Split) {
    if current.is_empty() {
        return;
    }
    sentences.push(SentenceRecord {
        split,
        sentence_index: sentences.len(),
        words: std::mem::take(current),
        raw_text: None,
    });
}

/// Writes sentences as `surface label` lines, one blank line after each
/// sentence.
pub fn serialize_conll(sentences: &[SentenceRecord], labels: &LabelSet) -> String {
    let mut out = String::new();
    for s in sentences {
        for w in &s.words {
            out.push_str(&w.surface);
            out.push(' ');
            out.push_str(labels.name(w.gold_label));
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
