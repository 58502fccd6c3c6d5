use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::Corpus;
use crate::featurize::RESPONSE_SEPARATOR;
use crate::synthgen::template::MIN_HEADERS;
use crate::{Error, Result};

pub const CATEGORY_FIELD: &str = "Category";
pub const PAYLOAD_FIELD: &str = "HTTP Payload";

/// One generated record in the exchange format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSample {
    #[serde(rename = "Category")]
    pub category: String,
    #[serde(rename = "HTTP Payload")]
    pub http_payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NotAnObject,
    MissingField(&'static str),
    NotAString(&'static str),
    EmptyCategory,
    MissingSeparator,
    RepeatedSeparator(usize),
    EmptyRequest,
    EmptyResponse,
    TooFewHeaders(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotAnObject => f.write_str("record is not a JSON object"),
            Violation::MissingField(name) => write!(f, "missing field \"{name}\""),
            Violation::NotAString(name) => write!(f, "field \"{name}\" is not a string"),
            Violation::EmptyCategory => f.write_str("empty category"),
            Violation::MissingSeparator => f.write_str("missing response separator"),
            Violation::RepeatedSeparator(n) => write!(f, "response separator occurs {n} times"),
            Violation::EmptyRequest => f.write_str("empty request"),
            Violation::EmptyResponse => f.write_str("empty response"),
            Violation::TooFewHeaders(n) => write!(f, "request has {n} header lines, at least {MIN_HEADERS} required"),
        }
    }
}

/// Header lines of a raw request: the lines after the request line up to
/// the first blank line that look like `Name: value`.
pub fn count_headers(request: &str) -> usize {
    request
        .lines()
        .skip(1)
        .take_while(|l| !l.trim().is_empty())
        .filter(|l| {
            l.split_once(':')
                .is_some_and(|(name, _)| !name.is_empty() && !name.contains(char::is_whitespace))
        })
        .count()
}

/// Checks one record against the exchange contract. An empty list means the
/// record conforms.
pub fn validate_sample(record: &Value) -> Vec<Violation> {
    let Some(obj) = record.as_object() else {
        return vec![Violation::NotAnObject];
    };
    let mut out = Vec::new();
    match obj.get(CATEGORY_FIELD) {
        None => out.push(Violation::MissingField(CATEGORY_FIELD)),
        Some(Value::String(s)) if s.trim().is_empty() => out.push(Violation::EmptyCategory),
        Some(Value::String(_)) => {}
        Some(_) => out.push(Violation::NotAString(CATEGORY_FIELD)),
    }
    let payload = match obj.get(PAYLOAD_FIELD) {
        None => {
            out.push(Violation::MissingField(PAYLOAD_FIELD));
            return out;
        }
        Some(Value::String(s)) => s,
        Some(_) => {
            out.push(Violation::NotAString(PAYLOAD_FIELD));
            return out;
        }
    };
    let parts: Vec<&str> = payload.split(RESPONSE_SEPARATOR).collect();
    match parts.len() {
        1 => out.push(Violation::MissingSeparator),
        2 => {}
        n => out.push(Violation::RepeatedSeparator(n - 1)),
    }
    let request = parts[0];
    if request.trim().is_empty() {
        out.push(Violation::EmptyRequest);
    } else {
        let headers = count_headers(request);
        if headers < MIN_HEADERS {
            out.push(Violation::TooFewHeaders(headers));
        }
    }
    if parts.len() >= 2 && parts[1..].iter().all(|r| r.trim().is_empty()) {
        out.push(Violation::EmptyResponse);
    }
    out
}

/// Index pairs `(first, later)` of records with byte-identical payloads.
pub fn find_duplicates(records: &[SynthSample]) -> Vec<(usize, usize)> {
    let mut first: HashMap<&str, usize> = HashMap::new();
    let mut out = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match first.get(r.http_payload.as_str()) {
            Some(&j) => out.push((j, i)),
            None => {
                first.insert(&r.http_payload, i);
            }
        }
    }
    out
}

/// Payload samples of a corpus in the exchange format, in corpus order.
pub fn to_records(corpus: &Corpus) -> Vec<SynthSample> {
    corpus
        .payloads()
        .map(|p| SynthSample {
            category: corpus.class(p.class_id).map(|c| c.name.clone()).unwrap_or_default(),
            http_payload: p.text_lossy().into_owned(),
        })
        .collect()
}

/// Writes records as a pretty-printed JSON array.
pub fn write_records(records: &[SynthSample], path: &Path) -> Result<()> {
    let json = serde_json::to_vec_pretty(records).map_err(|e| Error::Format(e.to_string()))?;
    crate::nn::write_atomic(path, &json)
}
