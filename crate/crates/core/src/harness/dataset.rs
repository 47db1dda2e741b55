//! Line-delimited JSON dataset files.
//!
//! One sample per line:
//!
//! ```text
//! {"sample_id":"retrieval-0000","scenario":"retrieval","prompt":[1,2],"target":[5,6],"docs":[{"id":"p0","tokens":[5,6,7]}]}
//! ```
//!
//! `target` may be omitted for live-decode workloads. A line may also carry
//! `"tokenizer":"byte"`, in which case `prompt`, `target` and each doc's
//! `tokens` may be given as strings and are tokenized on load. Files are
//! always saved in the canonical id form above, so `save(load(p))` is
//! byte-identical for canonical files.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tokenizer::tokenizer_by_name;
use crate::types::{Document, ReferenceSet, TokenId, TokenSeq};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: schema error: {msg}")]
    Schema { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Retrieval,
    Cache,
    Multiturn,
    Custom,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Retrieval => "retrieval",
            Scenario::Cache => "cache",
            Scenario::Multiturn => "multiturn",
            Scenario::Custom => "custom",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "retrieval" => Ok(Scenario::Retrieval),
            "cache" => Ok(Scenario::Cache),
            "multiturn" => Ok(Scenario::Multiturn),
            "custom" => Ok(Scenario::Custom),
            other => Err(format!(
                "unknown scenario {other:?} (expected retrieval, cache, multiturn or custom)"
            )),
        }
    }
}

/// A prompt, an optional target output and the references it may copy from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSample {
    pub sample_id: String,
    pub scenario: Scenario,
    pub prompt: TokenSeq,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TokenSeq>,
    pub docs: ReferenceSet,
}

impl DatasetSample {
    /// The target, or an error naming the sample when it is absent or empty.
    pub fn require_target(&self) -> Result<&[TokenId], String> {
        match &self.target {
            Some(t) if !t.is_empty() => Ok(t),
            Some(_) => Err(format!("sample {:?} has an empty target", self.sample_id)),
            None => Err(format!("sample {:?} has no target", self.sample_id)),
        }
    }

    /// One past the largest token id anywhere in the sample.
    pub fn max_token_bound(&self) -> usize {
        let docs = self.docs.docs().iter().flat_map(|d| d.tokens.iter());
        self.prompt
            .iter()
            .chain(self.target.iter().flatten())
            .chain(docs)
            .max()
            .map_or(1, |&m| m as usize + 1)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawTokens {
    Ids(Vec<i64>),
    Text(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDoc {
    id: String,
    tokens: RawTokens,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSample {
    sample_id: String,
    scenario: Scenario,
    prompt: RawTokens,
    #[serde(default)]
    target: Option<RawTokens>,
    docs: Vec<RawDoc>,
    #[serde(default)]
    tokenizer: Option<String>,
}

fn resolve(raw: RawTokens, tokenizer: Option<&str>, what: &str) -> Result<TokenSeq, String> {
    match raw {
        RawTokens::Ids(ids) => ids
            .into_iter()
            .map(|v| {
                TokenId::try_from(v).map_err(|_| format!("{what}: token id {v} is not a non-negative 32-bit integer"))
            })
            .collect(),
        RawTokens::Text(text) => {
            let name = tokenizer.ok_or_else(|| format!("{what}: text given but no tokenizer named"))?;
            let tok = tokenizer_by_name(name).ok_or_else(|| format!("unknown tokenizer {name:?}"))?;
            Ok(tok.encode(&text))
        }
    }
}

/// Parses one dataset line. `line_no` is 1-based and only used in errors.
pub fn parse_sample(line: &str, line_no: usize) -> Result<DatasetSample, DatasetError> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
        line: line_no,
        msg: e.to_string(),
    })?;
    let schema = |msg: String| DatasetError::Schema { line: line_no, msg };
    let raw: RawSample = serde_json::from_value(value).map_err(|e| schema(e.to_string()))?;
    let tok = raw.tokenizer.as_deref();
    let prompt = resolve(raw.prompt, tok, "prompt").map_err(schema)?;
    let target = raw
        .target
        .map(|t| resolve(t, tok, "target"))
        .transpose()
        .map_err(schema)?;
    let docs = raw
        .docs
        .into_iter()
        .map(|d| {
            let what = format!("doc {:?}", d.id);
            Ok(Document::new(d.id, resolve(d.tokens, tok, &what)?))
        })
        .collect::<Result<Vec<_>, String>>()
        .map_err(schema)?;
    let docs = ReferenceSet::new(docs).map_err(|e| schema(e.to_string()))?;
    Ok(DatasetSample {
        sample_id: raw.sample_id,
        scenario: raw.scenario,
        prompt,
        target,
        docs,
    })
}

/// Reads samples from any buffered reader. Blank lines are skipped.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<DatasetSample>, DatasetError> {
    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DatasetError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_sample(&line, line_no)?;
        if !ids.insert(sample.sample_id.clone()) {
            return Err(DatasetError::Schema {
                line: line_no,
                msg: format!("duplicate sample_id {:?}", sample.sample_id),
            });
        }
        samples.push(sample);
    }
    Ok(samples)
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetSample>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(std::io::BufReader::new(file))
}

/// Writes samples in canonical form, one compact JSON object per line.
pub fn write_dataset<W: Write>(mut out: W, samples: &[DatasetSample]) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_dataset(path: &Path, samples: &[DatasetSample]) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    write_dataset(std::io::BufWriter::new(file), samples).map_err(io_err)
}
