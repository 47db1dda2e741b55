//! Reference-accelerated greedy decoding.
//!
//! When a model's output is likely to repeat spans of some reference text
//! (retrieved passages, cached responses, earlier turns), decoding can copy
//! those spans into the model input and check them all in one scoring call.
//! The last `n` generated tokens are matched against the references; on a
//! hit, the next `k` reference tokens are drafted, scored in parallel, and
//! the prefix the model agrees with is kept along with the model's own next
//! token. Output is identical to plain greedy decoding.
//!
//! * [`decoder`]: stepwise and copy-and-verify decoding
//! * [`index`]: n-gram index and span matching
//! * [`lm`]: the scoring contract and mock models
//! * [`simulator`]: model-free trace reconstruction from a known target
//! * [`session`]: step-by-step planner for external model runtimes
//! * [`harness`]: datasets, synthetic generation, sweeps and benchmarks

pub mod decoder;
pub mod harness;
pub mod index;
pub mod lm;
pub mod session;
pub mod simulator;
pub mod types;

pub use decoder::{llma_decode, llma_decode_with_index, stepwise_decode, verify_draft, DecodeError, Decoded};
pub use index::{MatchResult, ReferenceIndex, TieBreakRng};
pub use lm::{HashLm, LanguageModel, LmError, NgramLm, ScriptedLm};
pub use session::{Plan, PlannerSession, SessionError};
pub use simulator::{aggregate_stats, get_matched_tokens, infer_decode_sequence, TraceStats};
pub use types::{
    validate_config, DecodeConfig, DecodeTrace, Document, ReferenceSet, StepKind, StepRecord, TokenId, TokenSeq,
    TraceTotals,
};
