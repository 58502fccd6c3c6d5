use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    class_key, default_classes, ClassId, Corpus, Provenance, Sample, SampleKind, VulnClass,
    DEFAULT_MAX_PAYLOAD_BYTES,
};
use crate::{Error, Result};

/// On-disk corpus layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// A JSON array. Elements are either generated samples carrying
    /// `Category` and `HTTP Payload`, or internal sample records.
    JsonArray,
    /// One internal sample record per line.
    Jsonl,
}

impl CorpusFormat {
    /// Guesses from the extension: `.jsonl` is line-delimited, anything else
    /// is treated as a JSON array.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => CorpusFormat::Jsonl,
            _ => CorpusFormat::JsonArray,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub classes: Vec<VulnClass>,
    /// Unknown categories abort the load instead of being collected.
    pub strict: bool,
    pub max_payload_bytes: usize,
    /// Overrides the provenance inferred from the records.
    pub provenance: Option<Provenance>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            classes: default_classes(),
            strict: false,
            max_payload_bytes: DEFAULT_MAX_PAYLOAD_BYTES,
            provenance: None,
        }
    }
}

/// A record that could not be mapped onto the class table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    /// Zero-based position of the record in the file.
    pub index: usize,
    pub category: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub corpus: Corpus,
    pub rejections: Vec<Rejection>,
}

/// Internal JSONL schema. Payload bytes that are not valid UTF-8 are stored
/// base64-encoded under `text_b64` instead of `text`.
#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    kind: SampleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text_b64: Option<String>,
    class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    published: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threat_id: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    truncated: bool,
}

#[derive(Debug, Deserialize)]
struct SynthRecord {
    #[serde(rename = "Category")]
    category: String,
    #[serde(rename = "HTTP Payload")]
    payload: String,
}

pub fn load_corpus(path: &Path, format: CorpusFormat, options: &LoadOptions) -> Result<LoadedCorpus> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut builder = Builder::new(options);
    match format {
        CorpusFormat::JsonArray => {
            let values: Vec<Value> = serde_json::from_str(&raw).map_err(|e| Error::json(&e, 0))?;
            for (index, value) in values.into_iter().enumerate() {
                if value.get("Category").is_some() || value.get("HTTP Payload").is_some() {
                    let record: SynthRecord = serde_json::from_value(value).map_err(|e| {
                        Error::Validation(format!("record {index}: {e}"))
                    })?;
                    builder.push_synthetic(index, record)?;
                } else {
                    let record: SampleRecord = serde_json::from_value(value).map_err(|e| {
                        Error::Validation(format!("record {index}: {e}"))
                    })?;
                    builder.push_internal(index, record)?;
                }
            }
        }
        CorpusFormat::Jsonl => {
            let mut index = 0;
            for (line_no, line) in raw.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let record: SampleRecord =
                    serde_json::from_str(line).map_err(|e| Error::json(&e, line_no))?;
                builder.push_internal(index, record)?;
                index += 1;
            }
        }
    }
    builder.finish()
}

struct Builder<'a> {
    options: &'a LoadOptions,
    samples: Vec<Sample>,
    rejections: Vec<Rejection>,
    saw_synthetic: bool,
    keys: Vec<(String, ClassId)>,
}

impl<'a> Builder<'a> {
    fn new(options: &'a LoadOptions) -> Self {
        let keys = options
            .classes
            .iter()
            .map(|c| (class_key(&c.name), c.id))
            .collect();
        Builder {
            options,
            samples: Vec::new(),
            rejections: Vec::new(),
            saw_synthetic: false,
            keys,
        }
    }

    fn resolve(&mut self, index: usize, category: &str) -> Result<Option<ClassId>> {
        let key = class_key(category);
        if let Some((_, id)) = self.keys.iter().find(|(k, _)| *k == key) {
            return Ok(Some(*id));
        }
        if self.options.strict {
            return Err(Error::Validation(format!(
                "record {index}: unknown category {category:?}"
            )));
        }
        self.rejections.push(Rejection {
            index,
            category: category.to_string(),
            reason: "unknown category".into(),
        });
        Ok(None)
    }

    fn push_synthetic(&mut self, index: usize, record: SynthRecord) -> Result<()> {
        self.saw_synthetic = true;
        let Some(class_id) = self.resolve(index, &record.category)? else {
            return Ok(());
        };
        let id = format!("synth-{index:06}");
        self.push(Sample {
            threat_id: id.clone(),
            id,
            kind: SampleKind::Payload,
            text: record.payload.into_bytes(),
            class_id,
            published: None,
            truncated: false,
        });
        Ok(())
    }

    fn push_internal(&mut self, index: usize, record: SampleRecord) -> Result<()> {
        let text = match (record.text, record.text_b64) {
            (Some(text), None) => text.into_bytes(),
            (None, Some(encoded)) => BASE64.decode(encoded.as_bytes()).map_err(|e| {
                Error::Validation(format!("record {index} ({}): bad base64 text: {e}", record.id))
            })?,
            _ => {
                return Err(Error::Validation(format!(
                    "record {index} ({}): exactly one of text / text_b64 is required",
                    record.id
                )))
            }
        };
        let Some(class_id) = self.resolve(index, &record.class)? else {
            return Ok(());
        };
        self.push(Sample {
            threat_id: record.threat_id.unwrap_or_else(|| record.id.clone()),
            id: record.id,
            kind: record.kind,
            text,
            class_id,
            published: record.published,
            truncated: record.truncated,
        });
        Ok(())
    }

    fn push(&mut self, mut sample: Sample) {
        if sample.kind == SampleKind::Payload && sample.text.len() > self.options.max_payload_bytes {
            sample.text.truncate(self.options.max_payload_bytes);
            sample.truncated = true;
        }
        self.samples.push(sample);
    }

    fn finish(self) -> Result<LoadedCorpus> {
        let provenance = self.options.provenance.unwrap_or(if self.saw_synthetic {
            Provenance::Synthetic
        } else {
            Provenance::Real
        });
        let corpus = Corpus::new(self.options.classes.clone(), self.samples, provenance)?;
        Ok(LoadedCorpus {
            corpus,
            rejections: self.rejections,
        })
    }
}

/// Writes the corpus in the internal JSONL schema.
pub fn save_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for sample in corpus.samples() {
        let class = corpus
            .class(sample.class_id)
            .map(|c| c.name.clone())
            .unwrap_or_default();
        let (text, text_b64) = match std::str::from_utf8(&sample.text) {
            Ok(s) => (Some(s.to_string()), None),
            Err(_) => (None, Some(BASE64.encode(&sample.text))),
        };
        let record = SampleRecord {
            id: sample.id.clone(),
            kind: sample.kind,
            text,
            text_b64,
            class,
            published: sample.published,
            threat_id: Some(sample.threat_id.clone()),
            truncated: sample.truncated,
        };
        let line = serde_json::to_string(&record).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    id: String,
}

/// Split manifest: JSONL, one `{"id": ...}` object per sample.
pub fn write_manifest<'a>(path: &Path, ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for id in ids {
        let line = serde_json::to_string(&ManifestLine { id: id.to_string() })
            .map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str::<ManifestLine>(l)
                .map(|m| m.id)
                .map_err(|e| Error::json(&e, n))
        })
        .collect()
}
