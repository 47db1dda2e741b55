//! Host-driven planning sessions.
//!
//! A runtime that owns its own model (and KV cache) drives the copy policy
//! step by step: ask [`PlannerSession::plan`] what to feed the model next,
//! run the forward pass, then hand the argmax outputs to
//! [`PlannerSession::accept_outputs`]. This is the surface exposed to the
//! Python extension; it only moves plain token-id lists.

use thiserror::Error;

use crate::decoder::{settle, verify_draft, DecodeError};
use crate::index::{ReferenceIndex, TieBreakRng};
use crate::types::{ConfigError, DecodeConfig, DecodeTrace, ReferenceSet, StepRecord, TokenId, TokenSeq};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error(transparent)]
    InvalidConfig(#[from] ConfigError),
    #[error("session is closed")]
    SessionClosed,
    #[error("no plan is pending; call plan() first")]
    NoPendingPlan,
    #[error("expected {expected} outputs for the pending plan, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// What the host should score next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Plan {
    /// Score the current context alone; supply one output.
    Stepwise,
    /// Score the context followed by `draft`; supply `draft.len() + 1` outputs.
    Copy {
        draft: TokenSeq,
        doc_id: String,
        pos: usize,
    },
}

impl Plan {
    pub fn expected_outputs(&self) -> usize {
        match self {
            Plan::Stepwise => 1,
            Plan::Copy { draft, .. } => draft.len() + 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlannerSession {
    index: ReferenceIndex,
    copy_len: usize,
    max_new_tokens: Option<usize>,
    stop_token: Option<TokenId>,
    rng: TieBreakRng,
    output: TokenSeq,
    trace: DecodeTrace,
    pending: Option<Plan>,
    closed: bool,
}

impl PlannerSession {
    /// Opens a session with no output budget or stop token; the host decides
    /// when to stop.
    pub fn open(refs: &ReferenceSet, match_len: usize, copy_len: usize, seed: u64) -> Result<Self, SessionError> {
        DecodeConfig::new(match_len, copy_len, 1).validate()?;
        Ok(Self {
            index: ReferenceIndex::build(refs, match_len),
            copy_len,
            max_new_tokens: None,
            stop_token: None,
            rng: TieBreakRng::new(seed),
            output: Vec::new(),
            trace: DecodeTrace::default(),
            pending: None,
            closed: false,
        })
    }

    /// Opens a session that applies the budget and stop token of `cfg`
    /// exactly as the in-process decoder does.
    pub fn with_config(refs: &ReferenceSet, cfg: &DecodeConfig) -> Result<Self, SessionError> {
        cfg.validate()?;
        let mut s = Self::open(refs, cfg.match_len, cfg.copy_len, cfg.seed)?;
        s.index = s.index.with_prefix_cap(cfg.prefix_cap);
        s.max_new_tokens = Some(cfg.max_new_tokens);
        s.stop_token = cfg.stop_token;
        Ok(s)
    }

    pub fn output(&self) -> &[TokenId] {
        &self.output
    }

    pub fn trace(&self) -> &DecodeTrace {
        &self.trace
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn close(&mut self) {
        self.closed = true;
        self.pending = None;
    }

    /// Plans the next step. Repeated calls without an intervening
    /// [`accept_outputs`](Self::accept_outputs) return the same plan.
    pub fn plan(&mut self) -> Result<Plan, SessionError> {
        if self.closed {
            return Err(SessionError::SessionClosed);
        }
        if let Some(p) = &self.pending {
            return Ok(p.clone());
        }
        let plan = match self.index.match_ngrams(&self.output, &mut self.rng) {
            None => Plan::Stepwise,
            Some(m) => Plan::Copy {
                draft: self.index.draft(&m, self.copy_len).to_vec(),
                doc_id: m.doc_id,
                pos: m.pos,
            },
        };
        self.pending = Some(plan.clone());
        Ok(plan)
    }

    /// Applies the model outputs for the pending plan and returns the tokens
    /// appended to the output.
    pub fn accept_outputs(&mut self, outputs: &[TokenId]) -> Result<TokenSeq, SessionError> {
        if self.closed {
            return Err(SessionError::SessionClosed);
        }
        let plan = self.pending.as_ref().ok_or(SessionError::NoPendingPlan)?;
        if outputs.len() != plan.expected_outputs() {
            return Err(SessionError::LengthMismatch {
                expected: plan.expected_outputs(),
                got: outputs.len(),
            });
        }
        let plan = self.pending.take().expect("checked above");
        self.trace.lm_calls += 1;
        let budget = self
            .max_new_tokens
            .map_or(usize::MAX, |n| n - self.output.len());
        let emitted = match plan {
            Plan::Stepwise => {
                if self.stop_token == Some(outputs[0]) {
                    self.closed = true;
                    Vec::new()
                } else {
                    self.trace.push(StepRecord::stepwise());
                    outputs.to_vec()
                }
            }
            Plan::Copy { draft, doc_id, pos } => {
                let accepted = verify_draft(outputs, &draft).map_err(|e| match e {
                    DecodeError::LengthMismatch { expected, got } => SessionError::LengthMismatch { expected, got },
                    other => unreachable!("verify_draft only fails on length: {other}"),
                })?;
                let s = settle(outputs, accepted, budget, self.stop_token);
                if s.emit > 0 {
                    self.trace.push(StepRecord::copy(doc_id, pos, draft.len(), s.accepted, s.emit, s.truncated));
                }
                if s.stopped {
                    self.closed = true;
                }
                outputs[..s.emit].to_vec()
            }
        };
        self.output.extend_from_slice(&emitted);
        if self.max_new_tokens.is_some_and(|n| self.output.len() >= n) {
            self.closed = true;
        }
        Ok(emitted)
    }
}
