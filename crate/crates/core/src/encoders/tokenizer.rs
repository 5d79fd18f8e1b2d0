//! Hashed word tokenizer: lowercase, split on anything that is not
//! alphanumeric, bucket each word with 64-bit FNV-1a.

pub const VOCAB_BUCKETS: usize = 4096;
pub const BOS: usize = VOCAB_BUCKETS;
pub const EOS: usize = VOCAB_BUCKETS + 1;
pub const VOCAB_SIZE: usize = VOCAB_BUCKETS + 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenized {
    /// Word ids only; sentinels are added by the encoder.
    pub words: Vec<usize>,
    pub truncated: bool,
}

fn bucket(word: &str) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in word.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (h % VOCAB_BUCKETS as u64) as usize
}

/// Keeps at most `max_words` words, dropping the tail.
pub fn tokenize(text: &str, max_words: usize) -> Tokenized {
    let lower = text.to_lowercase();
    let mut words: Vec<usize> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(bucket)
        .collect();
    let truncated = words.len() > max_words;
    words.truncate(max_words);
    Tokenized { words, truncated }
}
