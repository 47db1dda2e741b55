//! N-gram position index over a reference set.
//!
//! Every length-`n` window of every document is keyed by its tokens and
//! mapped to the position right after the window. A query takes the last `n`
//! tokens of the generated output, looks up the candidate spans and ranks
//! them by how far the match extends backwards into earlier output. Ties on
//! that extension are broken uniformly at random from a caller-owned
//! [`TieBreakRng`].

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::types::{ReferenceSet, TokenId};

/// Seeded generator for tie-breaking between equally ranked spans.
///
/// Backed by ChaCha8, which is counter based and portable, so a given seed
/// produces the same choices on every platform.
#[derive(Debug, Clone)]
pub struct TieBreakRng(ChaCha8Rng);

impl TieBreakRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform index in `0..len`. `len` must be non-zero.
    pub fn pick(&mut self, len: usize) -> usize {
        self.0.random_range(0..len)
    }
}

/// A matched reference span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Index of the document within the reference set.
    pub doc_index: usize,
    pub doc_id: String,
    /// First position to copy from: the token right after the matched n-gram.
    pub pos: usize,
    /// How many tokens before the n-gram also agree with earlier output.
    pub prefix_ext: usize,
}

#[derive(Debug, Clone)]
pub struct ReferenceIndex {
    refs: ReferenceSet,
    gram_len: usize,
    positions: HashMap<Vec<TokenId>, Vec<(usize, usize)>>,
    prefix_cap: Option<usize>,
}

impl ReferenceIndex {
    /// Indexes every `gram_len`-gram of every document. Positions per key are
    /// stored in document order, then ascending end position.
    ///
    /// Panics if `gram_len` is zero.
    pub fn build(refs: &ReferenceSet, gram_len: usize) -> Self {
        assert!(gram_len >= 1, "match length must be at least 1");
        let mut positions: HashMap<Vec<TokenId>, Vec<(usize, usize)>> = HashMap::new();
        for (doc_index, doc) in refs.docs().iter().enumerate() {
            for (start, window) in doc.tokens.windows(gram_len).enumerate() {
                positions
                    .entry(window.to_vec())
                    .or_default()
                    .push((doc_index, start + gram_len));
            }
        }
        Self {
            refs: refs.clone(),
            gram_len,
            positions,
            prefix_cap: None,
        }
    }

    /// Limits prefix-extension measurement to `cap` tokens.
    pub fn with_prefix_cap(mut self, cap: Option<usize>) -> Self {
        self.prefix_cap = cap;
        self
    }

    pub fn gram_len(&self) -> usize {
        self.gram_len
    }

    pub fn refs(&self) -> &ReferenceSet {
        &self.refs
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn num_keys(&self) -> usize {
        self.positions.len()
    }

    /// End positions recorded for `gram`, as `(doc_index, end_pos)` pairs.
    pub fn lookup(&self, gram: &[TokenId]) -> &[(usize, usize)] {
        self.positions.get(gram).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Candidate spans for the suffix of `output`: every occurrence of its
    /// last `n` tokens that has at least one token left to copy.
    pub fn candidates(&self, output: &[TokenId]) -> Vec<(usize, usize)> {
        let n = self.gram_len;
        if output.len() < n {
            return Vec::new();
        }
        let docs = self.refs.docs();
        self.lookup(&output[output.len() - n..])
            .iter()
            .copied()
            .filter(|&(d, end)| end < docs[d].tokens.len())
            .collect()
    }

    /// Length of the common suffix of the output before its final n-gram and
    /// the document before the matched n-gram. Stops at either start.
    pub fn prefix_extension(&self, output: &[TokenId], doc_index: usize, end_pos: usize) -> usize {
        let n = self.gram_len;
        let before_output = &output[..output.len() - n];
        let before_doc = &self.refs.docs()[doc_index].tokens[..end_pos - n];
        let limit = self.prefix_cap.unwrap_or(usize::MAX);
        before_output
            .iter()
            .rev()
            .zip(before_doc.iter().rev())
            .take(limit)
            .take_while(|(a, b)| a == b)
            .count()
    }

    /// Finds the span to copy from, if any.
    ///
    /// Returns `None` when the output is shorter than `n` or no document
    /// contains its last `n` tokens with something after them. Otherwise
    /// picks the candidate with the longest prefix extension; the generator
    /// is consulted only when several candidates tie for the maximum.
    pub fn match_ngrams(&self, output: &[TokenId], rng: &mut TieBreakRng) -> Option<MatchResult> {
        let candidates = self.candidates(output);
        if candidates.is_empty() {
            return None;
        }
        let mut best_ext = 0;
        let mut best: Vec<(usize, usize)> = Vec::new();
        for (d, end) in candidates {
            let ext = self.prefix_extension(output, d, end);
            if best.is_empty() || ext > best_ext {
                best_ext = ext;
                best.clear();
                best.push((d, end));
            } else if ext == best_ext {
                best.push((d, end));
            }
        }
        let (doc_index, pos) = if best.len() == 1 {
            best[0]
        } else {
            best[rng.pick(best.len())]
        };
        Some(MatchResult {
            doc_index,
            doc_id: self.refs.docs()[doc_index].id.clone(),
            pos,
            prefix_ext: best_ext,
        })
    }

    /// Up to `max_len` tokens of the matched document starting at `m.pos`.
    pub fn draft(&self, m: &MatchResult, max_len: usize) -> &[TokenId] {
        let doc = &self.refs.docs()[m.doc_index].tokens;
        let end = doc.len().min(m.pos + max_len);
        &doc[m.pos..end]
    }
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, BTreeSet};

    use proptest::prelude::*;

    use super::*;

    // Naive scan over every window of every document.
    fn brute_force_positions(refs: &ReferenceSet, n: usize) -> BTreeMap<Vec<u32>, Vec<(usize, usize)>> {
        let mut out: BTreeMap<Vec<u32>, Vec<(usize, usize)>> = BTreeMap::new();
        for (d, doc) in refs.docs().iter().enumerate() {
            let t = &doc.tokens;
            if t.len() < n {
                continue;
            }
            for start in 0..=t.len() - n {
                out.entry(t[start..start + n].to_vec())
                    .or_default()
                    .push((d, start + n));
            }
        }
        out
    }

    fn brute_force_ext(y: &[u32], doc: &[u32], end: usize, n: usize) -> usize {
        let mut ext = 0;
        while ext < y.len() - n && ext < end - n && y[y.len() - n - 1 - ext] == doc[end - n - 1 - ext] {
            ext += 1;
        }
        ext
    }

    #[test]
    fn builds_expected_keys() {
        let refs = ReferenceSet::from_token_lists([vec![5, 6, 7, 6, 7]]);
        let idx = ReferenceIndex::build(&refs, 2);
        assert_eq!(idx.num_keys(), 3);
        assert_eq!(idx.lookup(&[5, 6]), &[(0, 2)]);
        assert_eq!(idx.lookup(&[6, 7]), &[(0, 3), (0, 5)]);
        assert_eq!(idx.lookup(&[7, 6]), &[(0, 4)]);
        let oracle = brute_force_positions(&refs, 2);
        assert_eq!(oracle.len(), 3);
        for (k, v) in oracle {
            assert_eq!(idx.lookup(&k), v.as_slice());
        }
    }

    #[test]
    fn empty_and_short_inputs() {
        assert!(ReferenceIndex::build(&ReferenceSet::empty(), 1).is_empty());
        let short = ReferenceSet::from_token_lists([vec![9]]);
        assert!(ReferenceIndex::build(&short, 2).is_empty());
    }

    #[test]
    fn no_match_without_history() {
        let refs = ReferenceSet::from_token_lists([vec![1, 2, 3]]);
        let idx = ReferenceIndex::build(&refs, 1);
        let mut rng = TieBreakRng::new(0);
        assert_eq!(idx.match_ngrams(&[], &mut rng), None);
        let idx2 = ReferenceIndex::build(&refs, 2);
        assert_eq!(idx2.match_ngrams(&[1], &mut rng), None);
    }

    #[test]
    fn longest_prefix_wins() {
        let refs = ReferenceSet::from_token_lists([vec![9, 3, 4, 50], vec![2, 3, 4, 60]]);
        let idx = ReferenceIndex::build(&refs, 2);
        let mut rng = TieBreakRng::new(7);
        let m = idx.match_ngrams(&[1, 2, 3, 4], &mut rng).unwrap();
        assert_eq!(m.doc_id, "d1");
        assert_eq!(m.pos, 3);
        assert_eq!(m.prefix_ext, 1);
        assert_eq!(idx.draft(&m, 10), &[60]);
    }

    #[test]
    fn pancreas_continuation_match() {
        // "... from the" matched in a passage continuing with "pancreases".
        const FROM: u32 = 101;
        const THE: u32 = 102;
        const PANCREASES: u32 = 103;
        let refs = ReferenceSet::from_token_lists([
            vec![200, 201, 202],
            vec![300, 301, FROM, THE, PANCREASES, 304, 305],
        ]);
        let idx = ReferenceIndex::build(&refs, 2);
        let y = [400, 401, FROM, THE];
        let m = idx.match_ngrams(&y, &mut TieBreakRng::new(0)).unwrap();
        assert_eq!(m.doc_id, "d1");
        assert_eq!(idx.draft(&m, 1), &[PANCREASES]);
    }

    #[test]
    fn match_at_document_end_is_not_a_candidate() {
        let refs = ReferenceSet::from_token_lists([vec![1, 2, 3]]);
        let idx = ReferenceIndex::build(&refs, 1);
        assert_eq!(idx.match_ngrams(&[3], &mut TieBreakRng::new(0)), None);
        let m = idx.match_ngrams(&[2], &mut TieBreakRng::new(0)).unwrap();
        assert_eq!(m.pos, 2);
    }

    #[test]
    fn ties_split_across_seeds() {
        let refs = ReferenceSet::from_token_lists([vec![1, 10], vec![1, 20], vec![1, 30]]);
        let idx = ReferenceIndex::build(&refs, 1);
        let mut seen = BTreeSet::new();
        for seed in 0..64 {
            let m = idx.match_ngrams(&[1], &mut TieBreakRng::new(seed)).unwrap();
            seen.insert(m.doc_index);
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn prefix_cap_limits_extension() {
        let refs = ReferenceSet::from_token_lists([vec![5, 6, 7, 8, 1, 2], vec![9, 7, 8, 1, 3]]);
        let y = [5, 6, 7, 8, 1];
        let exact = ReferenceIndex::build(&refs, 1);
        let m = exact.match_ngrams(&y, &mut TieBreakRng::new(0)).unwrap();
        assert_eq!((m.doc_index, m.prefix_ext), (0, 4));
        let capped = ReferenceIndex::build(&refs, 1).with_prefix_cap(Some(2));
        assert_eq!(capped.prefix_extension(&y, 0, 5), 2);
        assert_eq!(capped.prefix_extension(&y, 1, 4), 2);
    }

    fn small_refs() -> impl Strategy<Value = Vec<Vec<u32>>> {
        prop::collection::vec(prop::collection::vec(0u32..4, 0..12), 0..4)
    }

    proptest! {
        #[test]
        fn index_agrees_with_scan(docs in small_refs(), n in 1usize..4) {
            let refs = ReferenceSet::from_token_lists(docs);
            let idx = ReferenceIndex::build(&refs, n);
            let oracle = brute_force_positions(&refs, n);
            prop_assert_eq!(idx.num_keys(), oracle.len());
            for (k, v) in &oracle {
                prop_assert_eq!(idx.lookup(k), v.as_slice());
            }
        }

        #[test]
        fn best_candidate_is_maximal(
            docs in small_refs(),
            y in prop::collection::vec(0u32..4, 0..10),
            n in 1usize..4,
            seed in any::<u64>(),
        ) {
            let refs = ReferenceSet::from_token_lists(docs);
            let idx = ReferenceIndex::build(&refs, n);
            // candidate set by naive scan
            let mut naive = Vec::new();
            if y.len() >= n {
                let tail = &y[y.len() - n..];
                for (d, doc) in refs.docs().iter().enumerate() {
                    let t = &doc.tokens;
                    for end in n..t.len() {
                        if &t[end - n..end] == tail {
                            naive.push((d, end));
                        }
                    }
                }
            }
            prop_assert_eq!(idx.candidates(&y), naive.clone());

            let got = idx.match_ngrams(&y, &mut TieBreakRng::new(seed));
            match got {
                None => prop_assert!(naive.is_empty()),
                Some(m) => {
                    prop_assert!(naive.contains(&(m.doc_index, m.pos)));
                    let doc = &refs.docs()[m.doc_index].tokens;
                    prop_assert_eq!(&doc[m.pos - n..m.pos], &y[y.len() - n..]);
                    prop_assert_eq!(m.prefix_ext, brute_force_ext(&y, doc, m.pos, n));
                    for &(d, end) in &naive {
                        let ext = brute_force_ext(&y, &refs.docs()[d].tokens, end, n);
                        prop_assert!(m.prefix_ext >= ext);
                    }
                }
            }
            let again = idx.match_ngrams(&y, &mut TieBreakRng::new(seed));
            prop_assert_eq!(idx.match_ngrams(&y, &mut TieBreakRng::new(seed)), again);
        }
    }
}
