//! Domain types shared by the index, decoders, simulator and harness.
//!
//! Everything here is plain data plus validation. Traces carry their totals
//! alongside the per-step records so that consumers do not have to re-sum
//! them, and [`DecodeTrace::validate`] checks that the two agree.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A vocabulary id. Tokenization happens outside the engine.
pub type TokenId = u32;

/// An ordered token sequence: prompts, outputs, documents and drafts.
pub type TokenSeq = Vec<TokenId>;

/// A reference document the decoder may copy from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: TokenSeq,
}

impl Document {
    pub fn new(id: impl Into<String>, tokens: impl Into<TokenSeq>) -> Self {
        Self {
            id: id.into(),
            tokens: tokens.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReferenceError {
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
}

/// Ordered list of reference documents with unique ids. May be empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Document>", into = "Vec<Document>")]
pub struct ReferenceSet {
    docs: Vec<Document>,
}

impl ReferenceSet {
    pub fn new(docs: Vec<Document>) -> Result<Self, ReferenceError> {
        let mut seen = std::collections::HashSet::with_capacity(docs.len());
        for doc in &docs {
            if !seen.insert(doc.id.as_str()) {
                return Err(ReferenceError::DuplicateId(doc.id.clone()));
            }
        }
        Ok(Self { docs })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a set from bare token lists, naming documents `d0`, `d1`, ...
    pub fn from_token_lists<I, T>(lists: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: Into<TokenSeq>,
    {
        let docs = lists
            .into_iter()
            .enumerate()
            .map(|(i, toks)| Document::new(format!("d{i}"), toks))
            .collect();
        Self { docs }
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(|d| d.tokens.len()).sum()
    }
}

impl TryFrom<Vec<Document>> for ReferenceSet {
    type Error = ReferenceError;

    fn try_from(docs: Vec<Document>) -> Result<Self, Self::Error> {
        Self::new(docs)
    }
}

impl From<ReferenceSet> for Vec<Document> {
    fn from(refs: ReferenceSet) -> Self {
        refs.docs
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid config: {field} must be >= 1")]
    InvalidConfig { field: &'static str },
}

/// Decoding hyper-parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Number of trailing output tokens that must match a reference span.
    pub match_len: usize,
    /// Number of reference tokens drafted per trigger.
    pub copy_len: usize,
    pub max_new_tokens: usize,
    pub stop_token: Option<TokenId>,
    /// Seeds the tie-break generator used by span matching.
    pub seed: u64,
    /// Optional cap on how far back prefix extension is measured when
    /// ranking candidate spans. `None` measures it exactly.
    pub prefix_cap: Option<usize>,
}

impl DecodeConfig {
    pub fn new(match_len: usize, copy_len: usize, max_new_tokens: usize) -> Self {
        Self {
            match_len,
            copy_len,
            max_new_tokens,
            stop_token: None,
            seed: 0,
            prefix_cap: None,
        }
    }

    pub fn with_stop_token(mut self, stop: Option<TokenId>) -> Self {
        self.stop_token = stop;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.match_len == 0 {
            return Err(ConfigError::InvalidConfig { field: "match_len" });
        }
        if self.copy_len == 0 {
            return Err(ConfigError::InvalidConfig { field: "copy_len" });
        }
        if self.max_new_tokens == 0 {
            return Err(ConfigError::InvalidConfig {
                field: "max_new_tokens",
            });
        }
        Ok(())
    }
}

/// Free-function form of [`DecodeConfig::validate`].
pub fn validate_config(cfg: &DecodeConfig) -> Result<(), ConfigError> {
    cfg.validate()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Stepwise,
    Copy,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Stepwise => "stepwise",
            StepKind::Copy => "copy",
        }
    }
}

/// One decoding step: a single scoring call and the tokens it emitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub kind: StepKind,
    /// Tokens fed to the model this step: 1, plus the draft length for copies.
    pub input_tokens: usize,
    pub output_tokens: usize,
    pub doc_id: Option<String>,
    pub copy_pos: Option<usize>,
    /// Accepted draft tokens. Present only on copy steps.
    pub accepted: Option<usize>,
    /// Emission was cut short by the output budget or the stop token.
    pub truncated: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("step {step}: {reason}")]
    BadStep { step: usize, reason: String },
    #[error("stored totals {stored:?} differ from recomputed {recomputed:?}")]
    TotalsMismatch {
        stored: TraceTotals,
        recomputed: TraceTotals,
    },
}

impl StepRecord {
    pub fn stepwise() -> Self {
        Self {
            kind: StepKind::Stepwise,
            input_tokens: 1,
            output_tokens: 1,
            doc_id: None,
            copy_pos: None,
            accepted: None,
            truncated: false,
        }
    }

    pub fn copy(
        doc_id: impl Into<String>,
        pos: usize,
        drafted: usize,
        accepted: usize,
        output_tokens: usize,
        truncated: bool,
    ) -> Self {
        Self {
            kind: StepKind::Copy,
            input_tokens: 1 + drafted,
            output_tokens,
            doc_id: Some(doc_id.into()),
            copy_pos: Some(pos),
            accepted: Some(accepted),
            truncated,
        }
    }

    /// Number of drafted tokens (zero for stepwise records).
    pub fn drafted(&self) -> usize {
        self.input_tokens.saturating_sub(1)
    }

    /// Checks the per-record invariants; needs no surrounding context.
    pub fn check(&self) -> Result<(), String> {
        match self.kind {
            StepKind::Stepwise => {
                if self.input_tokens != 1 || self.output_tokens != 1 {
                    return Err(format!(
                        "stepwise record must be (1,1), got ({},{})",
                        self.input_tokens, self.output_tokens
                    ));
                }
                if self.accepted.is_some() {
                    return Err("stepwise record carries an accepted count".into());
                }
                if self.truncated {
                    return Err("stepwise record flagged truncated".into());
                }
            }
            StepKind::Copy => {
                let accepted = self
                    .accepted
                    .ok_or_else(|| "copy record without accepted count".to_string())?;
                let drafted = self.drafted();
                if self.input_tokens < 1 {
                    return Err("copy record with zero input tokens".into());
                }
                if accepted > drafted {
                    return Err(format!("accepted {accepted} exceeds drafted {drafted}"));
                }
                if self.output_tokens < 1 || self.output_tokens > drafted + 1 {
                    return Err(format!(
                        "output_tokens {} outside [1, {}]",
                        self.output_tokens,
                        drafted + 1
                    ));
                }
                if !self.truncated && self.output_tokens != accepted + 1 {
                    return Err(format!(
                        "untruncated copy emits {} tokens but accepted {}",
                        self.output_tokens, accepted
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceTotals {
    pub num_steps: usize,
    pub num_triggers: usize,
    pub num_accepted: usize,
    pub num_output_tokens: usize,
}

impl TraceTotals {
    pub fn from_steps(steps: &[StepRecord]) -> Self {
        let mut t = TraceTotals {
            num_steps: steps.len(),
            ..Default::default()
        };
        for s in steps {
            t.num_output_tokens += s.output_tokens;
            if s.kind == StepKind::Copy {
                t.num_triggers += 1;
                t.num_accepted += s.accepted.unwrap_or(0);
            }
        }
        t
    }
}

/// Per-step record of a decode, produced by both the live decoder and the
/// target-guided simulator.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub steps: Vec<StepRecord>,
    pub totals: TraceTotals,
    /// Scoring calls issued. Exceeds `num_steps` by one when the final call
    /// produced only the stop token, which emits nothing and is not recorded.
    pub lm_calls: usize,
}

impl DecodeTrace {
    pub fn from_steps(steps: Vec<StepRecord>) -> Self {
        let totals = TraceTotals::from_steps(&steps);
        let lm_calls = steps.len();
        Self {
            steps,
            totals,
            lm_calls,
        }
    }

    pub fn push(&mut self, step: StepRecord) {
        self.totals.num_steps += 1;
        self.totals.num_output_tokens += step.output_tokens;
        if step.kind == StepKind::Copy {
            self.totals.num_triggers += 1;
            self.totals.num_accepted += step.accepted.unwrap_or(0);
        }
        self.steps.push(step);
    }

    pub fn num_steps(&self) -> usize {
        self.totals.num_steps
    }

    pub fn num_output_tokens(&self) -> usize {
        self.totals.num_output_tokens
    }

    /// Output tokens per step; 1.0 for an empty trace.
    pub fn compression_ratio(&self) -> f64 {
        if self.totals.num_steps == 0 {
            1.0
        } else {
            self.totals.num_output_tokens as f64 / self.totals.num_steps as f64
        }
    }

    /// Checks every record and that the stored totals match the records.
    pub fn validate(&self) -> Result<(), TraceError> {
        for (i, step) in self.steps.iter().enumerate() {
            step.check()
                .map_err(|reason| TraceError::BadStep { step: i, reason })?;
        }
        let recomputed = TraceTotals::from_steps(&self.steps);
        if recomputed != self.totals {
            return Err(TraceError::TotalsMismatch {
                stored: self.totals,
                recomputed,
            });
        }
        Ok(())
    }
}
