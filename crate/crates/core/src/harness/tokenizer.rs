//! Byte-level fallback tokenizer for text ingest in demos and fixtures.

use crate::types::{TokenId, TokenSeq};

/// Maps each UTF-8 byte to the token id of the same value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub const NAME: &'static str = "byte";
    pub const VOCAB_SIZE: usize = 256;

    pub fn encode(&self, text: &str) -> TokenSeq {
        text.bytes().map(TokenId::from).collect()
    }

    /// Lossy inverse of [`encode`](Self::encode); ids above 255 and invalid
    /// UTF-8 become U+FFFD.
    pub fn decode(&self, tokens: &[TokenId]) -> String {
        let mut bytes = Vec::with_capacity(tokens.len());
        let mut out = String::new();
        for &t in tokens {
            match u8::try_from(t) {
                Ok(b) => bytes.push(b),
                Err(_) => {
                    out.push_str(&String::from_utf8_lossy(&bytes));
                    bytes.clear();
                    out.push(char::REPLACEMENT_CHARACTER);
                }
            }
        }
        out.push_str(&String::from_utf8_lossy(&bytes));
        out
    }
}

/// Looks up a tokenizer by name. Only `"byte"` is built in.
pub fn tokenizer_by_name(name: &str) -> Option<ByteTokenizer> {
    (name == ByteTokenizer::NAME).then_some(ByteTokenizer)
}
