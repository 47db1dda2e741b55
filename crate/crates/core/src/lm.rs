//! The deterministic scoring contract the decoders run against, and the
//! model-free implementations shipped for testing and simulation.
//!
//! A model only has to answer two questions: the argmax next token for a
//! context, and the argmax at every position of a drafted continuation in a
//! single call. The two are tied together by the consistency law
//!
//! ```text
//! verify(c, g)[j] == next_argmax(c ++ g[..j])   for 0 <= j <= len(g)
//! ```
//!
//! which is all the copy-and-verify decoder needs for its output to match
//! plain greedy decoding.

use std::cell::Cell;
use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use thiserror::Error;

use crate::types::{TokenId, TokenSeq};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LmError {
    #[error("token {token} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: TokenId, vocab_size: usize },
    #[error("context of length {len} is shorter than the scripted prompt ({prompt_len})")]
    ContextTooShort { len: usize, prompt_len: usize },
    #[error("corpus line {line}: {msg}")]
    Corpus { line: usize, msg: String },
}

/// Greedy scoring contract.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;

    /// Argmax next token after `context`.
    fn next_argmax(&self, context: &[TokenId]) -> Result<TokenId, LmError>;

    /// Argmax outputs at every draft position: `draft.len() + 1` tokens, where
    /// element `j` is the prediction after `context ++ draft[..j]`.
    ///
    /// The default loops over [`next_argmax`](Self::next_argmax). Hosts that
    /// can score a whole draft in one pass should override it.
    fn verify(&self, context: &[TokenId], draft: &[TokenId]) -> Result<TokenSeq, LmError> {
        let mut buf = Vec::with_capacity(context.len() + draft.len());
        buf.extend_from_slice(context);
        let mut out = Vec::with_capacity(draft.len() + 1);
        out.push(self.next_argmax(&buf)?);
        for &t in draft {
            buf.push(t);
            out.push(self.next_argmax(&buf)?);
        }
        Ok(out)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn next_argmax(&self, context: &[TokenId]) -> Result<TokenId, LmError> {
        (**self).next_argmax(context)
    }
    fn verify(&self, context: &[TokenId], draft: &[TokenId]) -> Result<TokenSeq, LmError> {
        (**self).verify(context, draft)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for Box<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn next_argmax(&self, context: &[TokenId]) -> Result<TokenId, LmError> {
        (**self).next_argmax(context)
    }
    fn verify(&self, context: &[TokenId], draft: &[TokenId]) -> Result<TokenSeq, LmError> {
        (**self).verify(context, draft)
    }
}

fn check_range(tokens: &[TokenId], vocab_size: usize) -> Result<(), LmError> {
    match tokens.iter().find(|&&t| t as usize >= vocab_size) {
        Some(&token) => Err(LmError::TokenOutOfRange { token, vocab_size }),
        None => Ok(()),
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Pseudo-random model whose next token is a hash of the seed and the last
/// `window` context tokens.
///
/// The recipe, so other implementations can reproduce it bit for bit:
///
/// ```text
/// h = mix64(seed ^ GOLDEN)
/// for t in last min(window, len(context)) tokens, oldest first:
///     h = mix64(h ^ (t + GOLDEN))          // wrapping u64 add
/// h = mix64(h ^ len(window slice))
/// next = h mod vocab_size
/// ```
///
/// with `mix64` the SplitMix64 finalizer and `GOLDEN = 0x9e3779b97f4a7c15`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashLm {
    vocab_size: usize,
    window: usize,
    seed: u64,
}

impl HashLm {
    /// Panics if `vocab_size` or `window` is zero.
    pub fn new(vocab_size: usize, window: usize, seed: u64) -> Self {
        assert!(vocab_size > 0, "vocab_size must be positive");
        assert!(window > 0, "window must be positive");
        Self {
            vocab_size,
            window,
            seed,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    fn hash_window(&self, window: &[TokenId]) -> TokenId {
        let mut h = mix64(self.seed ^ GOLDEN);
        for &t in window {
            h = mix64(h ^ (t as u64).wrapping_add(GOLDEN));
        }
        h = mix64(h ^ window.len() as u64);
        (h % self.vocab_size as u64) as TokenId
    }
}

impl LanguageModel for HashLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_argmax(&self, context: &[TokenId]) -> Result<TokenId, LmError> {
        check_range(context, self.vocab_size)?;
        let start = context.len().saturating_sub(self.window);
        Ok(self.hash_window(&context[start..]))
    }

    fn verify(&self, context: &[TokenId], draft: &[TokenId]) -> Result<TokenSeq, LmError> {
        check_range(context, self.vocab_size)?;
        check_range(draft, self.vocab_size)?;
        // Only the trailing window of the context can influence any position.
        let keep = context.len().min(self.window);
        let mut tail: Vec<TokenId> = context[context.len() - keep..].to_vec();
        tail.extend_from_slice(draft);
        let out = (0..=draft.len())
            .map(|j| {
                let end = keep + j;
                // full context length at this position is context.len() + j
                let start = end.saturating_sub(self.window);
                self.hash_window(&tail[start..end])
            })
            .collect();
        Ok(out)
    }
}

/// Count-based n-gram model with backoff.
///
/// Predicts the most frequent continuation of the last `order - 1` tokens,
/// backing off to shorter contexts when a context was never seen and finally
/// to the unigram argmax. Ties go to the lowest token id.
#[derive(Debug, Clone)]
pub struct NgramLm {
    vocab_size: usize,
    order: usize,
    // best continuation per context, keyed by context length then tokens
    argmax: Vec<HashMap<Vec<TokenId>, TokenId>>,
    unigram: TokenId,
}

impl NgramLm {
    /// Fits counts on `corpus`. Panics if `order` or `vocab_size` is zero.
    pub fn fit<S: AsRef<[TokenId]>>(corpus: &[S], order: usize, vocab_size: usize) -> Result<Self, LmError> {
        assert!(order >= 1, "order must be at least 1");
        assert!(vocab_size > 0, "vocab_size must be positive");
        let mut counts: Vec<HashMap<Vec<TokenId>, HashMap<TokenId, u64>>> =
            (0..order).map(|_| HashMap::new()).collect();
        for seq in corpus {
            let seq = seq.as_ref();
            check_range(seq, vocab_size)?;
            for (i, &next) in seq.iter().enumerate() {
                for ctx_len in 0..order.min(i + 1) {
                    let ctx = seq[i - ctx_len..i].to_vec();
                    *counts[ctx_len].entry(ctx).or_default().entry(next).or_insert(0) += 1;
                }
            }
        }
        let argmax: Vec<HashMap<Vec<TokenId>, TokenId>> = counts
            .into_iter()
            .map(|table| {
                table
                    .into_iter()
                    .map(|(ctx, dist)| (ctx, best_of(&dist)))
                    .collect()
            })
            .collect();
        let unigram = argmax[0].get(&Vec::new()).copied().unwrap_or(0);
        Ok(Self {
            vocab_size,
            order,
            argmax,
            unigram,
        })
    }

    /// Fits from a corpus file: one sequence per line, space-separated ids.
    pub fn fit_file(path: &Path, order: usize, vocab_size: Option<usize>) -> Result<Self, LmError> {
        let file = std::fs::File::open(path).map_err(|e| LmError::Corpus {
            line: 0,
            msg: e.to_string(),
        })?;
        let mut corpus = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| LmError::Corpus {
                line: i + 1,
                msg: e.to_string(),
            })?;
            let seq = parse_token_line(&line).map_err(|msg| LmError::Corpus { line: i + 1, msg })?;
            corpus.push(seq);
        }
        let vocab = vocab_size.unwrap_or_else(|| {
            corpus
                .iter()
                .flatten()
                .max()
                .map_or(1, |&m| m as usize + 1)
        });
        Self::fit(&corpus, order, vocab)
    }

    pub fn order(&self) -> usize {
        self.order
    }
}

fn best_of(dist: &HashMap<TokenId, u64>) -> TokenId {
    let mut best: Option<(TokenId, u64)> = None;
    for (&tok, &c) in dist {
        best = match best {
            Some((bt, bc)) if bc > c || (bc == c && bt < tok) => Some((bt, bc)),
            _ => Some((tok, c)),
        };
    }
    best.map_or(0, |(t, _)| t)
}

/// Parses a line of whitespace-separated token ids.
pub fn parse_token_line(line: &str) -> Result<TokenSeq, String> {
    line.split_whitespace()
        .map(|w| w.parse::<TokenId>().map_err(|e| format!("bad token {w:?}: {e}")))
        .collect()
}

impl LanguageModel for NgramLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_argmax(&self, context: &[TokenId]) -> Result<TokenId, LmError> {
        check_range(context, self.vocab_size)?;
        let longest = (self.order - 1).min(context.len());
        for ctx_len in (1..=longest).rev() {
            let ctx = &context[context.len() - ctx_len..];
            if let Some(&t) = self.argmax[ctx_len].get(ctx) {
                return Ok(t);
            }
        }
        Ok(self.unigram)
    }
}

/// Replays a fixed target regardless of what the context contains.
///
/// The output after a context of length `c` is `target[c - prompt_len]`, or
/// the stop token once the target is exhausted. This forces a decoder to
/// follow a known output sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedLm {
    prompt_len: usize,
    target: TokenSeq,
    stop_token: TokenId,
    vocab_size: usize,
}

impl ScriptedLm {
    /// Panics if `vocab_size` does not cover the target and the stop token.
    pub fn new(prompt_len: usize, target: TokenSeq, stop_token: TokenId, vocab_size: usize) -> Self {
        let needed = target
            .iter()
            .chain(std::iter::once(&stop_token))
            .max()
            .map_or(1, |&m| m as usize + 1);
        assert!(
            vocab_size >= needed,
            "vocab_size {vocab_size} does not cover scripted tokens (need {needed})"
        );
        Self {
            prompt_len,
            target,
            stop_token,
            vocab_size,
        }
    }

    pub fn target(&self) -> &[TokenId] {
        &self.target
    }

    pub fn stop_token(&self) -> TokenId {
        self.stop_token
    }

    fn at(&self, context_len: usize) -> TokenId {
        self.target
            .get(context_len - self.prompt_len)
            .copied()
            .unwrap_or(self.stop_token)
    }
}

impl LanguageModel for ScriptedLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_argmax(&self, context: &[TokenId]) -> Result<TokenId, LmError> {
        check_range(context, self.vocab_size)?;
        if context.len() < self.prompt_len {
            return Err(LmError::ContextTooShort {
                len: context.len(),
                prompt_len: self.prompt_len,
            });
        }
        Ok(self.at(context.len()))
    }

    fn verify(&self, context: &[TokenId], draft: &[TokenId]) -> Result<TokenSeq, LmError> {
        check_range(context, self.vocab_size)?;
        check_range(draft, self.vocab_size)?;
        if context.len() < self.prompt_len {
            return Err(LmError::ContextTooShort {
                len: context.len(),
                prompt_len: self.prompt_len,
            });
        }
        Ok((0..=draft.len()).map(|j| self.at(context.len() + j)).collect())
    }
}

/// Wraps a model and counts scoring calls (one per `next_argmax` or `verify`).
#[derive(Debug)]
pub struct CallCounter<M> {
    inner: M,
    calls: Cell<usize>,
}

impl<M> CallCounter<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn into_inner(self) -> M {
        self.inner
    }
}

impl<M: LanguageModel> LanguageModel for CallCounter<M> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn next_argmax(&self, context: &[TokenId]) -> Result<TokenId, LmError> {
        self.calls.set(self.calls.get() + 1);
        self.inner.next_argmax(context)
    }

    fn verify(&self, context: &[TokenId], draft: &[TokenId]) -> Result<TokenSeq, LmError> {
        self.calls.set(self.calls.get() + 1);
        self.inner.verify(context, draft)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    // Oracle: chain of single-token predictions.
    fn chained<M: LanguageModel>(lm: &M, context: &[u32], draft: &[u32]) -> Vec<u32> {
        (0..=draft.len())
            .map(|j| {
                let mut c = context.to_vec();
                c.extend_from_slice(&draft[..j]);
                lm.next_argmax(&c).unwrap()
            })
            .collect()
    }

    #[test]
    fn scripted_replays_target() {
        let lm = ScriptedLm::new(3, vec![7, 8], 0, 10);
        assert_eq!(lm.next_argmax(&[1, 2, 3]).unwrap(), 7);
        assert_eq!(lm.next_argmax(&[1, 2, 3, 9]).unwrap(), 8);
        assert_eq!(lm.next_argmax(&[1, 2, 3, 4, 5]).unwrap(), 0);
        assert_eq!(
            lm.next_argmax(&[1, 2]),
            Err(LmError::ContextTooShort { len: 2, prompt_len: 3 })
        );
    }

    #[test]
    fn scripted_verify_ignores_draft() {
        let lm = ScriptedLm::new(2, vec![4, 5, 6], 0, 10);
        assert_eq!(lm.verify(&[1, 1], &[9, 9]).unwrap(), vec![4, 5, 6]);
        assert_eq!(lm.verify(&[1, 1], &[]).unwrap(), vec![4]);
    }

    #[test]
    fn ngram_counts_bigrams() {
        let lm = NgramLm::fit(&[vec![1, 2, 1, 2, 1, 3]], 2, 4).unwrap();
        assert_eq!(lm.next_argmax(&[0, 1]).unwrap(), 2);
        // unseen context backs off to unigram argmax: 1 appears three times
        assert_eq!(lm.next_argmax(&[0]).unwrap(), 1);
        assert_eq!(lm.next_argmax(&[]).unwrap(), 1);
    }

    #[test]
    fn ngram_ties_pick_lowest_id() {
        // after 5: 9 once and 4 once
        let lm = NgramLm::fit(&[vec![5, 9], vec![5, 4]], 2, 10).unwrap();
        assert_eq!(lm.next_argmax(&[5]).unwrap(), 4);
        // unigram: 5 twice, others once
        assert_eq!(lm.next_argmax(&[]).unwrap(), 5);
    }

    #[test]
    fn ngram_backs_off_through_orders() {
        let lm = NgramLm::fit(&[vec![1, 2, 3, 1, 2, 4, 7, 2, 4]], 3, 8).unwrap();
        // trigram context (1,2): 3 once, 4 once -> 3
        assert_eq!(lm.next_argmax(&[1, 2]).unwrap(), 3);
        // trigram context (6,2) unseen, bigram context 2: 3 once, 4 twice -> 4
        assert_eq!(lm.next_argmax(&[6, 2]).unwrap(), 4);
    }

    #[test]
    fn out_of_range_tokens_rejected() {
        let lm = HashLm::new(10, 2, 1);
        assert_eq!(
            lm.next_argmax(&[3, 10]),
            Err(LmError::TokenOutOfRange { token: 10, vocab_size: 10 })
        );
        assert!(lm.verify(&[1], &[11]).is_err());
        assert!(NgramLm::fit(&[vec![1, 99]], 2, 10).is_err());
    }

    #[test]
    fn hash_lm_is_deterministic_and_windowed() {
        let lm = HashLm::new(1000, 2, 42);
        let a = lm.next_argmax(&[5, 6, 7]).unwrap();
        assert_eq!(a, lm.next_argmax(&[5, 6, 7]).unwrap());
        assert_eq!(a, lm.next_argmax(&[99, 6, 7]).unwrap());
        assert!(a < 1000);
        assert_eq!(lm.verify(&[1, 2], &[]).unwrap(), vec![lm.next_argmax(&[1, 2]).unwrap()]);
    }

    #[test]
    fn hash_lm_recipe_is_pinned() {
        // Reference values from the documented recipe; a change here breaks
        // fixtures produced by other implementations.
        let lm = HashLm::new(1 << 16, 3, 7);
        let expect = {
            let mut h = mix64(7 ^ GOLDEN);
            for t in [1u64, 2, 3] {
                h = mix64(h ^ t.wrapping_add(GOLDEN));
            }
            (mix64(h ^ 3) % (1 << 16)) as u32
        };
        assert_eq!(lm.next_argmax(&[0, 1, 2, 3]).unwrap(), expect);
        assert_eq!(mix64(0), 0);
        assert_eq!(mix64(1), 0x5692_161d_100b_05e5);
    }

    #[test]
    fn call_counter_counts() {
        let lm = CallCounter::new(HashLm::new(10, 1, 0));
        lm.next_argmax(&[1]).unwrap();
        lm.verify(&[1], &[2, 3]).unwrap();
        assert_eq!(lm.calls(), 2);
    }

    proptest! {
        #[test]
        fn hash_lm_consistency(
            seed in any::<u64>(),
            window in 1usize..5,
            context in prop::collection::vec(0u32..50, 0..10),
            draft in prop::collection::vec(0u32..50, 0..8),
        ) {
            let lm = HashLm::new(50, window, seed);
            prop_assert_eq!(lm.verify(&context, &draft).unwrap(), chained(&lm, &context, &draft));
        }

        #[test]
        fn ngram_consistency(
            corpus in prop::collection::vec(prop::collection::vec(0u32..6, 0..20), 0..5),
            order in 1usize..4,
            context in prop::collection::vec(0u32..6, 0..8),
            draft in prop::collection::vec(0u32..6, 0..8),
        ) {
            let lm = NgramLm::fit(&corpus, order, 6).unwrap();
            prop_assert_eq!(lm.verify(&context, &draft).unwrap(), chained(&lm, &context, &draft));
        }

        #[test]
        fn scripted_consistency(
            target in prop::collection::vec(1u32..20, 0..10),
            prompt in prop::collection::vec(0u32..20, 0..5),
            extra in prop::collection::vec(0u32..20, 0..5),
            draft in prop::collection::vec(0u32..20, 0..8),
        ) {
            let lm = ScriptedLm::new(prompt.len(), target, 0, 20);
            let mut ctx = prompt.clone();
            ctx.extend_from_slice(&extra);
            prop_assert_eq!(lm.verify(&ctx, &draft).unwrap(), chained(&lm, &ctx, &draft));
        }
    }
}
