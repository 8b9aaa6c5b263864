use std::marker::PhantomData;

use super::{EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::corpus::UtterancePair;
use crate::scalar::Scalar;
use crate::util::{fnv1a64, fnv1a64_with};

/// Joins instruction and readback; U+241E does not occur in ATC transcripts.
pub const PAIR_SEPARATOR: char = '\u{241E}';

/// Signed feature hashing of character n-grams over the joined pair text.
#[derive(Debug, Clone)]
pub struct HashedNgramEncoder<T> {
    d: usize,
    ngram_range: (usize, usize),
    seed: u64,
    _scalar: PhantomData<fn() -> T>,
}

impl<T: Scalar> HashedNgramEncoder<T> {
    pub fn new(d: usize, ngram_range: (usize, usize), seed: u64) -> Result<Self, EmbedError> {
        if d < 2 {
            return Err(EmbedError::Config(format!("dimension {d} < 2")));
        }
        if ngram_range.0 < 1 || ngram_range.0 > ngram_range.1 {
            return Err(EmbedError::Config(format!("bad ngram range {ngram_range:?}")));
        }
        Ok(Self {
            d,
            ngram_range,
            seed,
            _scalar: PhantomData,
        })
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector<T>, EmbedError> {
        let chars: Vec<char> = text.chars().collect();
        let state = fnv1a64(&self.seed.to_le_bytes());
        let mut acc = vec![0.0f64; self.d];
        let mut buf = [0u8; 4];
        for n in self.ngram_range.0..=self.ngram_range.1 {
            for gram in chars.windows(n) {
                let mut h = state;
                for c in gram {
                    h = fnv1a64_with(h, c.encode_utf8(&mut buf).as_bytes());
                }
                let idx = (h % self.d as u64) as usize;
                let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
                acc[idx] += sign;
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbedError::Contract("hashed features cancel to zero norm".into()));
        }
        EmbeddingVector::new(acc.into_iter().map(|v| T::of(v / norm)).collect())
    }

    pub fn pair_text(instruction: &str, readback: &str) -> String {
        format!(
            "{}{PAIR_SEPARATOR}{}",
            instruction.to_lowercase(),
            readback.to_lowercase()
        )
    }
}

impl<T: Scalar> EmbeddingProvider<T> for HashedNgramEncoder<T> {
    fn dim(&self) -> usize {
        self.d
    }

    fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let desc = format!(
            "hashed_ngram/v1/d={}/ngram={}-{}/seed={}",
            self.d, self.ngram_range.0, self.ngram_range.1, self.seed
        );
        hex::encode(Sha256::digest(desc.as_bytes()))
    }

    fn embed_pair(&self, pair: &UtterancePair) -> Result<EmbeddingVector<T>, EmbedError> {
        self.embed_text(&Self::pair_text(&pair.instruction, &pair.readback))
    }
}
