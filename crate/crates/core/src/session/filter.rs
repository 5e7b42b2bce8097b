//! Token-table filter expressions: `field op literal` conditions joined by
//! `&&` or `and`. Literals may be bare or double-quoted.

use std::fmt;

use serde::Serialize;

use super::table::{canonical_metric, is_numeric, TokenRow};
use super::{QueryError, QueryResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Contains,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Eq => "=",
            Op::Ne => "!=",
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
            Op::Contains => "contains",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Literal {
    Number(f64),
    Text(String),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Condition {
    pub field: String,
    pub op: Op,
    pub value: Literal,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Filter {
    pub conditions: Vec<Condition>,
}

const TEXT_FIELDS: [&str; 3] = ["id", "surface", "core_piece"];

fn split_conjunction(expr: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    for chunk in expr.split("&&") {
        let mut rest = chunk;
        // split on the word `and`, outside quotes
        loop {
            let mut in_quote = false;
            let bytes = rest.as_bytes();
            let mut cut = None;
            for i in 0..bytes.len() {
                if bytes[i] == b'"' {
                    in_quote = !in_quote;
                }
                if !in_quote
                    && i > 0
                    && bytes[i - 1].is_ascii_whitespace()
                    && bytes.len() >= i + 4
                    && bytes[i..i + 3].eq_ignore_ascii_case(b"and")
                    && bytes[i + 3].is_ascii_whitespace()
                {
                    cut = Some(i);
                    break;
                }
            }
            match cut {
                Some(i) => {
                    parts.push(&rest[..i]);
                    rest = &rest[i + 3..];
                }
                None => {
                    parts.push(rest);
                    break;
                }
            }
        }
    }
    parts.into_iter().map(str::trim).filter(|p| !p.is_empty()).collect()
}

fn parse_condition(text: &str) -> QueryResult<Condition> {
    let bad = |m: &str| QueryError::Unprocessable(format!("filter `{text}`: {m}"));
    let (field, op, rest) = if let Some(i) = text.find(" contains ") {
        (&text[..i], Op::Contains, &text[i + " contains ".len()..])
    } else {
        let i = text.find(['=', '!', '<', '>']).ok_or_else(|| bad("missing operator"))?;
        let tail = &text[i..];
        let (op, len) = [
            ("==", Op::Eq),
            ("!=", Op::Ne),
            ("<=", Op::Le),
            (">=", Op::Ge),
            ("=", Op::Eq),
            ("<", Op::Lt),
            (">", Op::Gt),
        ]
        .iter()
        .find(|(s, _)| tail.starts_with(s))
        .map(|(s, op)| (*op, s.len()))
        .ok_or_else(|| bad("unknown operator"))?;
        (&text[..i], op, &tail[len..])
    };
    let field = field.trim();
    let raw = rest.trim();
    if field.is_empty() || raw.is_empty() {
        return Err(bad("expected `field op literal`"));
    }
    let numeric_field = is_numeric(field);
    if !numeric_field && !TEXT_FIELDS.contains(&field) && !super::table::is_categorical(field) {
        return Err(QueryError::Unprocessable(format!("unknown field `{field}`")));
    }
    let quoted = raw.len() >= 2 && raw.starts_with('"') && raw.ends_with('"');
    let value = if quoted {
        Literal::Text(raw[1..raw.len() - 1].to_string())
    } else if numeric_field {
        Literal::Number(raw.parse().map_err(|_| bad("expected a number"))?)
    } else {
        Literal::Text(raw.to_string())
    };
    match (&value, numeric_field, op) {
        (Literal::Text(_), true, _) => return Err(bad("numeric field needs a number")),
        (_, true, Op::Contains) => return Err(bad("`contains` applies to text fields")),
        (_, false, Op::Lt | Op::Le | Op::Gt | Op::Ge) => return Err(bad("ordering applies to numeric fields")),
        _ => {}
    }
    let field = if numeric_field { canonical_metric(field) } else { field };
    Ok(Condition {
        field: field.to_string(),
        op,
        value,
    })
}

pub fn parse_filter(expr: &str) -> QueryResult<Filter> {
    Ok(Filter {
        conditions: split_conjunction(expr).into_iter().map(parse_condition).collect::<QueryResult<_>>()?,
    })
}

impl Condition {
    pub fn matches(&self, row: &TokenRow) -> bool {
        match &self.value {
            Literal::Number(want) => {
                // absent values match nothing
                let Some(v) = row.numeric(&self.field) else {
                    return false;
                };
                match self.op {
                    Op::Eq => v == *want,
                    Op::Ne => v != *want,
                    Op::Lt => v < *want,
                    Op::Le => v <= *want,
                    Op::Gt => v > *want,
                    Op::Ge => v >= *want,
                    Op::Contains => false,
                }
            }
            Literal::Text(want) => {
                let Some(v) = row.text(&self.field) else {
                    return false;
                };
                match self.op {
                    Op::Eq => v == *want,
                    Op::Ne => v != *want,
                    Op::Contains => v.contains(want.as_str()),
                    _ => false,
                }
            }
        }
    }
}

impl Filter {
    pub fn matches(&self, row: &TokenRow) -> bool {
        self.conditions.iter().all(|c| c.matches(row))
    }
}
