//! Greedy decoding: the one-token-per-call baseline and the copy-and-verify
//! loop that drafts spans from reference documents.
//!
//! Both loops stop when `max_new_tokens` outputs exist or the stop token is
//! produced; the stop token itself is never part of the output. A copy step
//! that crosses either limit is cut short and flagged `truncated`, so the two
//! decoders always return the same tokens for a model obeying the
//! consistency law.

use thiserror::Error;

use crate::index::{ReferenceIndex, TieBreakRng};
use crate::lm::{LanguageModel, LmError};
use crate::types::{ConfigError, DecodeConfig, DecodeTrace, ReferenceSet, StepRecord, TokenId, TokenSeq};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("expected {expected} model outputs, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("index built with match length {index} but config asks for {config}")]
    IndexMismatch { index: usize, config: usize },
}

/// Output tokens plus the per-step trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub output: TokenSeq,
    pub trace: DecodeTrace,
}

/// Number of leading draft tokens confirmed by the model outputs.
///
/// `outputs` must hold one more token than `draft`; the step then emits
/// `outputs[..accepted + 1]`.
pub fn verify_draft(outputs: &[TokenId], draft: &[TokenId]) -> Result<usize, DecodeError> {
    if outputs.len() != draft.len() + 1 {
        return Err(DecodeError::LengthMismatch {
            expected: draft.len() + 1,
            got: outputs.len(),
        });
    }
    Ok(draft.iter().zip(outputs).take_while(|(d, o)| d == o).count())
}

/// How many of a step's outputs are kept once the budget and stop token apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Settled {
    pub emit: usize,
    pub accepted: usize,
    pub truncated: bool,
    pub stopped: bool,
}

pub(crate) fn settle(outputs: &[TokenId], accepted: usize, budget: usize, stop: Option<TokenId>) -> Settled {
    let mut emit = accepted + 1;
    let mut truncated = false;
    let mut stopped = false;
    if emit > budget {
        emit = budget;
        truncated = true;
    }
    if let Some(stop) = stop {
        if let Some(s) = outputs[..emit].iter().position(|&t| t == stop) {
            emit = s;
            truncated = true;
            stopped = true;
        }
    }
    let accepted = if truncated { accepted.min(emit) } else { accepted };
    Settled {
        emit,
        accepted,
        truncated,
        stopped,
    }
}

fn context_buffer(prompt: &[TokenId], cfg: &DecodeConfig) -> Vec<TokenId> {
    let mut ctx = Vec::with_capacity(prompt.len() + cfg.max_new_tokens + cfg.copy_len + 1);
    ctx.extend_from_slice(prompt);
    ctx
}

/// Baseline greedy decoding: one `next_argmax` call per output token.
pub fn stepwise_decode<M: LanguageModel + ?Sized>(
    lm: &M,
    prompt: &[TokenId],
    cfg: &DecodeConfig,
) -> Result<Decoded, DecodeError> {
    cfg.validate()?;
    let mut ctx = context_buffer(prompt, cfg);
    let mut trace = DecodeTrace::default();
    while ctx.len() - prompt.len() < cfg.max_new_tokens {
        let next = lm.next_argmax(&ctx)?;
        trace.lm_calls += 1;
        if cfg.stop_token == Some(next) {
            break;
        }
        ctx.push(next);
        trace.push(StepRecord::stepwise());
    }
    Ok(Decoded {
        output: ctx.split_off(prompt.len()),
        trace,
    })
}

/// Copy-and-verify decoding against `refs`.
///
/// Builds the n-gram index and runs [`llma_decode_with_index`].
pub fn llma_decode<M: LanguageModel + ?Sized>(
    lm: &M,
    prompt: &[TokenId],
    refs: &ReferenceSet,
    cfg: &DecodeConfig,
) -> Result<Decoded, DecodeError> {
    cfg.validate()?;
    let index = ReferenceIndex::build(refs, cfg.match_len).with_prefix_cap(cfg.prefix_cap);
    llma_decode_with_index(lm, prompt, &index, cfg)
}

/// Copy-and-verify decoding with a prebuilt index.
///
/// Before every step the last `match_len` outputs are looked up in the
/// index. On a match, up to `copy_len` document tokens after the span are
/// drafted and scored in one `verify` call; the longest agreeing prefix plus
/// the model's own next token are emitted. Otherwise one `next_argmax` call
/// emits a single token.
pub fn llma_decode_with_index<M: LanguageModel + ?Sized>(
    lm: &M,
    prompt: &[TokenId],
    index: &ReferenceIndex,
    cfg: &DecodeConfig,
) -> Result<Decoded, DecodeError> {
    cfg.validate()?;
    if index.gram_len() != cfg.match_len {
        return Err(DecodeError::IndexMismatch {
            index: index.gram_len(),
            config: cfg.match_len,
        });
    }
    let mut rng = TieBreakRng::new(cfg.seed);
    let mut ctx = context_buffer(prompt, cfg);
    let mut trace = DecodeTrace::default();
    loop {
        let produced = ctx.len() - prompt.len();
        if produced >= cfg.max_new_tokens {
            break;
        }
        let budget = cfg.max_new_tokens - produced;
        let Some(m) = index.match_ngrams(&ctx[prompt.len()..], &mut rng) else {
            let next = lm.next_argmax(&ctx)?;
            trace.lm_calls += 1;
            if cfg.stop_token == Some(next) {
                break;
            }
            ctx.push(next);
            trace.push(StepRecord::stepwise());
            continue;
        };

        let draft = index.draft(&m, cfg.copy_len);
        let outputs = lm.verify(&ctx, draft)?;
        trace.lm_calls += 1;
        let accepted = verify_draft(&outputs, draft)?;
        let s = settle(&outputs, accepted, budget, cfg.stop_token);
        ctx.extend_from_slice(&outputs[..s.emit]);
        if s.emit > 0 {
            trace.push(StepRecord::copy(
                m.doc_id,
                m.pos,
                draft.len(),
                s.accepted,
                s.emit,
                s.truncated,
            ));
        }
        if s.stopped {
            break;
        }
    }
    Ok(Decoded {
        output: ctx.split_off(prompt.len()),
        trace,
    })
}
