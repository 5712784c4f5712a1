//! Byte-level tokenizer: ids 0–255 are raw bytes, followed by three specials.

use crate::error::Result;

pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const PAD: u32 = 258;
pub const BYTE_VOCAB_SIZE: usize = 259;

pub trait Tokenizer {
    fn encode(&self, text: &str) -> Result<Vec<u32>>;

    /// Bytes of the non-special tokens, in order.
    fn decode_bytes(&self, ids: &[u32]) -> Vec<u8>;

    fn vocab_size(&self) -> usize;

    fn decode_lossy(&self, ids: &[u32]) -> String {
        String::from_utf8_lossy(&self.decode_bytes(ids)).into_owned()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<u32> {
        bytes.iter().map(|&b| u32::from(b)).collect()
    }
}

impl Tokenizer for ByteTokenizer {
    fn encode(&self, text: &str) -> Result<Vec<u32>> {
        Ok(self.encode_bytes(text.as_bytes()))
    }

    fn decode_bytes(&self, ids: &[u32]) -> Vec<u8> {
        ids.iter()
            .filter_map(|&id| u8::try_from(id).ok())
            .collect()
    }

    fn vocab_size(&self) -> usize {
        BYTE_VOCAB_SIZE
    }
}
