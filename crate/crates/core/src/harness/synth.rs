//! Synthetic datasets with controlled reference overlap.
//!
//! A target is laid out as alternating copy spans and noise spans. Copy
//! spans average eight tokens; noise spans are sized so that on average
//! `overlap` of the target falls inside copy spans. Each copy span is
//! inserted verbatim into a random reference document between filler
//! chunks. When `overlap` is 1 there is no noise and the whole target is a
//! single span.
//!
//! Target tokens are distinct within a sample and filler never reuses a
//! target token, so noise tokens occur nowhere in the references.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use thiserror::Error;

use super::dataset::{DatasetSample, Scenario};
use crate::lm::mix64;
use crate::types::{Document, ReferenceSet, TokenId, TokenSeq};

/// End-of-sequence id; also the stop token for scripted replay.
pub const STOP_TOKEN: TokenId = 0;
pub const BOS_TOKEN: TokenId = 1;
pub const DOC_TOKEN: TokenId = 2;
pub const QUERY_TOKEN: TokenId = 3;
pub const ANSWER_TOKEN: TokenId = 4;
/// First id available for content.
pub const FIRST_CONTENT_TOKEN: TokenId = 5;

pub const DEFAULT_MEAN_SPAN: f64 = 8.0;
const FILLER_CHUNK: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid parameter {name}: {msg}")]
    InvalidParam { name: &'static str, msg: String },
}

fn invalid(name: &'static str, msg: impl Into<String>) -> SynthError {
    SynthError::InvalidParam { name, msg: msg.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub scenario: Scenario,
    pub num_samples: usize,
    pub target_len: usize,
    pub num_docs: usize,
    /// Filler tokens per document, before spans are planted.
    pub doc_len: usize,
    pub query_len: usize,
    pub overlap: f64,
    pub vocab_size: usize,
    pub mean_span: f64,
    pub seed: u64,
}

impl SynthParams {
    /// Scenario defaults: retrieval targets average 122 tokens with ten
    /// passages in the prompt; cache targets 177 tokens with four cached
    /// responses kept out of the prompt; multi-turn uses the previous turn.
    pub fn for_scenario(scenario: Scenario) -> Self {
        let (target_len, num_docs, doc_len, query_len) = match scenario {
            Scenario::Retrieval => (122, 10, 80, 10),
            Scenario::Cache => (177, 4, 160, 17),
            Scenario::Multiturn | Scenario::Custom => (150, 1, 120, 12),
        };
        Self {
            scenario,
            num_samples: 100,
            target_len,
            num_docs,
            doc_len,
            query_len,
            overlap: 0.6,
            vocab_size: 32_000,
            mean_span: DEFAULT_MEAN_SPAN,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.scenario == Scenario::Custom {
            return Err(invalid("scenario", "custom datasets are not generated"));
        }
        if self.num_samples == 0 {
            return Err(invalid("num_samples", "must be positive"));
        }
        if self.target_len == 0 {
            return Err(invalid("target_len", "must be positive"));
        }
        if self.num_docs == 0 {
            return Err(invalid("num_docs", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(invalid("overlap", format!("{} not in [0, 1]", self.overlap)));
        }
        if self.mean_span.is_nan() || self.mean_span < 1.0 {
            return Err(invalid("mean_span", "must be at least 1"));
        }
        // distinct target ids plus filler drawn outside them
        let needed = FIRST_CONTENT_TOKEN as usize + 2 * (self.target_len + self.num_docs * self.doc_len) + self.query_len;
        if self.vocab_size < needed || self.vocab_size > TokenId::MAX as usize {
            return Err(invalid(
                "vocab_size",
                format!("{} too small for these lengths (need at least {needed})", self.vocab_size),
            ));
        }
        Ok(())
    }
}

/// A run of target positions `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
    pub copied: bool,
}

fn geometric_len<R: Rng>(mean: f64, rng: &mut R) -> usize {
    if mean <= 1.0 {
        return 1;
    }
    let g = Geometric::new(1.0 / mean).expect("probability in (0, 1]");
    1 + g.sample(rng) as usize
}

/// Partitions `len` positions into alternating copy and noise spans.
pub fn span_layout<R: Rng>(len: usize, overlap: f64, mean_span: f64, rng: &mut R) -> Vec<Span> {
    let mut spans: Vec<Span> = Vec::new();
    if len == 0 {
        return spans;
    }
    if overlap <= 0.0 {
        return vec![Span { start: 0, len, copied: false }];
    }
    if overlap >= 1.0 {
        return vec![Span { start: 0, len, copied: true }];
    }
    let noise_mean = mean_span * (1.0 - overlap) / overlap;
    let mut pos = 0;
    let mut copy_next = rng.random_bool(overlap);
    while pos < len {
        let want = if copy_next {
            geometric_len(mean_span, rng)
        } else if noise_mean >= 1.0 {
            geometric_len(noise_mean, rng)
        } else if rng.random_bool(noise_mean) {
            1
        } else {
            0
        };
        let take = want.min(len - pos);
        if take > 0 {
            match spans.last_mut() {
                Some(last) if last.copied == copy_next => last.len += take,
                _ => spans.push(Span {
                    start: pos,
                    len: take,
                    copied: copy_next,
                }),
            }
            pos += take;
        }
        copy_next = !copy_next;
    }
    spans
}

/// Builds `num_docs` documents of filler chunks and inserts every copy span
/// of `target` into a random document at a random chunk boundary.
pub fn plant_spans<R, F>(
    target: &[TokenId],
    spans: &[Span],
    num_docs: usize,
    doc_len: usize,
    mut filler: F,
    rng: &mut R,
) -> Vec<TokenSeq>
where
    R: Rng,
    F: FnMut(&mut R) -> TokenId,
{
    assert!(num_docs > 0, "need at least one document");
    let mut docs: Vec<Vec<TokenSeq>> = (0..num_docs)
        .map(|_| {
            let mut chunks = Vec::new();
            let mut left = doc_len;
            while left > 0 {
                let c = left.min(FILLER_CHUNK);
                chunks.push((0..c).map(|_| filler(rng)).collect());
                left -= c;
            }
            chunks
        })
        .collect();
    for span in spans.iter().filter(|s| s.copied) {
        let d = rng.random_range(0..num_docs);
        let at = rng.random_range(0..=docs[d].len());
        docs[d].insert(at, target[span.start..span.start + span.len].to_vec());
    }
    docs.into_iter().map(|chunks| chunks.concat()).collect()
}

/// Seed for the `index`-th generated sample.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    mix64(mix64(seed ^ 0x5eed) ^ index as u64)
}

/// Draws an id in `[FIRST_CONTENT_TOKEN, vocab)` not yet in `used`, and marks it.
fn fresh_token<R: Rng>(used: &mut HashSet<TokenId>, vocab: usize, rng: &mut R) -> TokenId {
    loop {
        let t = rng.random_range(FIRST_CONTENT_TOKEN..vocab as TokenId);
        if used.insert(t) {
            return t;
        }
    }
}

fn doc_prefix(scenario: Scenario) -> &'static str {
    match scenario {
        Scenario::Retrieval => "p",
        Scenario::Cache => "c",
        Scenario::Multiturn | Scenario::Custom => "t",
    }
}

/// Generates `params.num_samples` samples. Sample `i` depends only on
/// `(params, i)`.
pub fn gen_synthetic(params: &SynthParams) -> Result<Vec<DatasetSample>, SynthError> {
    params.validate()?;
    Ok((0..params.num_samples).map(|i| gen_sample(params, i)).collect())
}

fn gen_sample(p: &SynthParams, i: usize) -> DatasetSample {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(p.seed, i));
    let spans = span_layout(p.target_len, p.overlap, p.mean_span, &mut rng);
    let mut used = HashSet::new();
    let target: TokenSeq = (0..p.target_len)
        .map(|_| fresh_token(&mut used, p.vocab_size, &mut rng))
        .collect();
    let in_target = used.clone();
    let vocab = p.vocab_size as TokenId;
    let filler = |r: &mut ChaCha8Rng| loop {
        let t = r.random_range(FIRST_CONTENT_TOKEN..vocab);
        if !in_target.contains(&t) {
            return t;
        }
    };
    let doc_tokens = plant_spans(&target, &spans, p.num_docs, p.doc_len, filler, &mut rng);
    let query: TokenSeq = (0..p.query_len)
        .map(|_| rng.random_range(FIRST_CONTENT_TOKEN..vocab))
        .collect();

    let prefix = doc_prefix(p.scenario);
    let docs = doc_tokens
        .into_iter()
        .enumerate()
        .map(|(j, toks)| Document::new(format!("{prefix}{j}"), toks))
        .collect::<Vec<_>>();
    let docs = ReferenceSet::new(docs).expect("generated ids are unique");
    let prompt = build_prompt(p.scenario, &query, &docs);
    DatasetSample {
        sample_id: format!("{}-{i:04}", p.scenario),
        scenario: p.scenario,
        prompt,
        target: Some(target),
        docs,
    }
}

/// Prompt layout per scenario.
///
/// * retrieval: `BOS (DOC passage)* QUERY query ANSWER`
/// * cache: `BOS QUERY query ANSWER`; cached sessions stay out of the prompt
/// * multiturn: `BOS (DOC previous-turn)* QUERY query ANSWER`
pub fn build_prompt(scenario: Scenario, query: &[TokenId], docs: &ReferenceSet) -> TokenSeq {
    let mut prompt = vec![BOS_TOKEN];
    if scenario != Scenario::Cache {
        for d in docs.docs() {
            prompt.push(DOC_TOKEN);
            prompt.extend_from_slice(&d.tokens);
        }
    }
    prompt.push(QUERY_TOKEN);
    prompt.extend_from_slice(query);
    prompt.push(ANSWER_TOKEN);
    prompt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::infer_decode_sequence;

    fn params(scenario: Scenario) -> SynthParams {
        SynthParams {
            num_samples: 8,
            ..SynthParams::for_scenario(scenario)
        }
    }

    #[test]
    fn layout_covers_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for overlap in [0.0, 0.1, 0.5, 0.6, 0.95, 1.0] {
            let spans = span_layout(300, overlap, 8.0, &mut rng);
            let mut pos = 0;
            for (i, s) in spans.iter().enumerate() {
                assert_eq!(s.start, pos);
                assert!(s.len > 0);
                if i > 0 {
                    assert_ne!(s.copied, spans[i - 1].copied);
                }
                pos += s.len;
            }
            assert_eq!(pos, 300);
        }
    }

    #[test]
    fn layout_hits_requested_overlap_on_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for overlap in [0.3, 0.6, 0.9] {
            let (mut copied, mut total) = (0usize, 0usize);
            for _ in 0..400 {
                for s in span_layout(122, overlap, 8.0, &mut rng) {
                    total += s.len;
                    if s.copied {
                        copied += s.len;
                    }
                }
            }
            let frac = copied as f64 / total as f64;
            assert!((frac - overlap).abs() < 0.05, "overlap {overlap}: got {frac}");
        }
    }

    #[test]
    fn planted_spans_appear_verbatim() {
        let s = gen_synthetic(&params(Scenario::Retrieval)).unwrap();
        assert_eq!(s.len(), 8);
        for sample in &s {
            let target = sample.target.as_ref().unwrap();
            assert_eq!(target.len(), 122);
            let uniq: HashSet<_> = target.iter().collect();
            assert_eq!(uniq.len(), target.len());
            assert_eq!(sample.docs.len(), 10);
            // passages sit inside the prompt
            let d0 = &sample.docs.docs()[0].tokens;
            assert!(sample.prompt.windows(d0.len()).any(|w| w == d0.as_slice()));
        }
    }

    #[test]
    fn cache_prompt_excludes_refs() {
        let s = gen_synthetic(&params(Scenario::Cache)).unwrap();
        for sample in &s {
            assert_eq!(sample.prompt.len(), 17 + 3);
            assert_eq!(sample.docs.len(), 4);
        }
    }

    #[test]
    fn zero_overlap_never_triggers() {
        let p = SynthParams {
            overlap: 0.0,
            ..params(Scenario::Retrieval)
        };
        for sample in gen_synthetic(&p).unwrap() {
            let y = sample.target.as_ref().unwrap();
            let t = infer_decode_sequence(y, &sample.docs, 1, 8, 0).unwrap();
            assert_eq!(t.num_steps(), y.len());
            assert_eq!(t.totals.num_triggers, 0);
        }
    }

    #[test]
    fn full_overlap_closed_form() {
        let p = SynthParams {
            overlap: 1.0,
            ..params(Scenario::Cache)
        };
        for sample in gen_synthetic(&p).unwrap() {
            let y = sample.target.as_ref().unwrap();
            let holders = sample
                .docs
                .docs()
                .iter()
                .filter(|d| d.tokens.windows(y.len()).any(|w| w == y.as_slice()))
                .count();
            assert_eq!(holders, 1);
            for k in [4, 15] {
                let t = infer_decode_sequence(y, &sample.docs, 1, k, 0).unwrap();
                assert_eq!(t.num_steps(), 1 + (y.len() - 1).div_ceil(k + 1));
            }
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let p = params(Scenario::Multiturn);
        assert_eq!(gen_synthetic(&p).unwrap(), gen_synthetic(&p).unwrap());
        let other = SynthParams { seed: 1, ..p.clone() };
        assert_ne!(gen_synthetic(&p).unwrap(), gen_synthetic(&other).unwrap());
    }

    #[test]
    fn rejects_bad_params() {
        let base = params(Scenario::Retrieval);
        for bad in [
            SynthParams { overlap: 1.2, ..base.clone() },
            SynthParams { overlap: -0.1, ..base.clone() },
            SynthParams { num_samples: 0, ..base.clone() },
            SynthParams { vocab_size: 100, ..base.clone() },
            SynthParams { scenario: Scenario::Custom, ..base.clone() },
        ] {
            assert!(matches!(gen_synthetic(&bad), Err(SynthError::InvalidParam { .. })));
        }
    }
}
