//! Model-free scorer backend with exactly known distributions.

use std::collections::HashMap;

use super::{Capabilities, ScorerBackend};
use crate::error::{Error, Result};
use crate::trie::TokenId;

pub const DEFAULT_MOCK_VOCAB: usize = 32768;
pub const MOCK_EOS_ID: TokenId = 1;
/// First id handed out by the word tokenizer; 0 is padding and 1 is EOS.
const FIRST_WORD_ID: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fallback {
    Uniform,
    Seeded(u64),
}

/// Deterministic backend backed by a table of next-token distributions.
///
/// Lookups that miss the table fall back either to the uniform distribution or to a
/// seeded pseudo-random one. The seeded distribution pairs tokens `(2k, 2k+1)`: each
/// pair carries mass `2/V`, split `u : 1-u` with `u` drawn from a hash of the seed,
/// source, prefix and `k`. It therefore sums to one exactly and any single entry costs O(1).
#[derive(Debug, Clone)]
pub struct MockScorer {
    vocab_size: usize,
    table: HashMap<(String, Vec<TokenId>), Vec<f64>>,
    fallback: Fallback,
    summary: Option<String>,
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>, mut h: u64) -> u64 {
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Maps a hash to the open interval (0, 1).
fn unit(h: u64) -> f64 {
    ((h >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

impl MockScorer {
    /// Seeded random distributions over the default vocabulary.
    pub fn seeded(seed: u64) -> Self {
        MockScorer {
            vocab_size: DEFAULT_MOCK_VOCAB,
            table: HashMap::new(),
            fallback: Fallback::Seeded(seed),
            summary: None,
        }
    }

    /// Uniform distributions over a vocabulary of `vocab_size` (at least 3).
    pub fn uniform(vocab_size: usize) -> Self {
        assert!(vocab_size > FIRST_WORD_ID as usize, "vocabulary too small");
        MockScorer {
            vocab_size,
            table: HashMap::new(),
            fallback: Fallback::Uniform,
            summary: None,
        }
    }

    /// Changes the vocabulary size. Seeded mocks need an even size.
    pub fn with_vocab_size(mut self, vocab_size: usize) -> Result<Self> {
        if vocab_size <= FIRST_WORD_ID as usize {
            return Err(Error::Validation("mock vocabulary too small".into()));
        }
        if matches!(self.fallback, Fallback::Seeded(_)) && !vocab_size.is_multiple_of(2) {
            return Err(Error::Validation(
                "seeded mock needs an even vocabulary size".into(),
            ));
        }
        self.vocab_size = vocab_size;
        self.table.clear();
        Ok(self)
    }

    /// Fixed text returned by `generate`.
    pub fn with_summary(mut self, summary: impl Into<String>) -> Self {
        self.summary = Some(summary.into());
        self
    }

    pub fn seed(&self) -> Option<u64> {
        match self.fallback {
            Fallback::Seeded(s) => Some(s),
            Fallback::Uniform => None,
        }
    }

    /// Stores an explicit distribution for `(source, prefix)`. It must cover the whole vocabulary.
    pub fn insert_distribution(
        &mut self,
        source: &str,
        prefix: &[TokenId],
        dist: Vec<f64>,
    ) -> Result<()> {
        if dist.len() != self.vocab_size {
            return Err(Error::Validation(format!(
                "distribution has {} entries, vocabulary has {}",
                dist.len(),
                self.vocab_size
            )));
        }
        let total: f64 = dist.iter().sum();
        if dist.iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "distribution sums to {total}, not 1"
            )));
        }
        self.table
            .insert((source.to_string(), prefix.to_vec()), dist);
        Ok(())
    }

    fn context_hash(source: &str, prefix: &[TokenId]) -> u64 {
        let h = fnv1a(source.bytes(), FNV_OFFSET);
        fnv1a(
            prefix.iter().flat_map(|t| t.to_le_bytes()),
            fnv1a([0xff], h),
        )
    }

    /// Probability of `token` after `prefix` given `source`.
    pub fn prob(&self, source: &str, prefix: &[TokenId], token: TokenId) -> f64 {
        let v = self.vocab_size;
        if token as usize >= v {
            return 0.0;
        }
        if let Some(dist) = self.table.get(&(source.to_string(), prefix.to_vec())) {
            return dist[token as usize];
        }
        match self.fallback {
            Fallback::Uniform => 1.0 / v as f64,
            Fallback::Seeded(seed) => {
                let pair = u64::from(token / 2);
                let h = splitmix64(
                    seed ^ splitmix64(Self::context_hash(source, prefix) ^ splitmix64(pair)),
                );
                let u = unit(h);
                let share = if token.is_multiple_of(2) { u } else { 1.0 - u };
                2.0 * share / v as f64
            }
        }
    }

    /// The full next-token distribution; mostly useful for checking normalization.
    pub fn distribution(&self, source: &str, prefix: &[TokenId]) -> Vec<f64> {
        (0..self.vocab_size as TokenId)
            .map(|t| self.prob(source, prefix, t))
            .collect()
    }
}

impl ScorerBackend for MockScorer {
    fn capabilities(&self) -> Capabilities {
        Capabilities::ALL
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn eos_id(&self) -> TokenId {
        MOCK_EOS_ID
    }

    /// Whitespace words hashed into `[2, V)`.
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let span = self.vocab_size as u64 - FIRST_WORD_ID;
        Ok(text
            .split_whitespace()
            .map(|w| (FIRST_WORD_ID + fnv1a(w.bytes(), FNV_OFFSET) % span) as TokenId)
            .collect())
    }

    fn next_token_probs(
        &self,
        source: &str,
        prefix: &[TokenId],
        candidates: &[TokenId],
    ) -> Result<Vec<f64>> {
        if let Some(bad) = candidates.iter().find(|&&c| c as usize >= self.vocab_size) {
            return Err(Error::Backend {
                prefix: prefix.to_vec(),
                message: format!("candidate {bad} outside vocabulary of {}", self.vocab_size),
            });
        }
        Ok(candidates
            .iter()
            .map(|&c| self.prob(source, prefix, c))
            .collect())
    }

    /// The configured summary, or else the first `max_len` words of the source.
    fn generate(&self, source: &str, max_len: usize) -> Result<String> {
        Ok(match &self.summary {
            Some(s) => s.clone(),
            None => source
                .split_whitespace()
                .take(max_len)
                .collect::<Vec<_>>()
                .join(" "),
        })
    }
}
