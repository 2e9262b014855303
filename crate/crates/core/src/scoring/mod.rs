//! Scorer backends and relation scoring over token tries.

mod mock;
pub mod protocol;
mod rouge;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::trie::{NodeId, TokenId, TokenTrie};

pub use mock::{MockScorer, DEFAULT_MOCK_VOCAB, MOCK_EOS_ID};
pub use protocol::{BackendSpec, ProtocolClient};
pub use rouge::{lcs_len, rouge_l};

/// Default lower clamp applied to per-decision probabilities.
pub const DEFAULT_PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    pub tokenize: bool,
    pub next_token: bool,
    pub generate: bool,
}

impl Capabilities {
    pub const ALL: Capabilities = Capabilities {
        tokenize: true,
        next_token: true,
        generate: true,
    };

    pub fn names(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.tokenize {
            v.push("tokenize");
        }
        if self.next_token {
            v.push("next_token");
        }
        if self.generate {
            v.push("generate");
        }
        v
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Self {
        let has = |n: &str| names.iter().any(|s| s.as_ref() == n);
        Capabilities {
            tokenize: has("tokenize"),
            next_token: has("next_token"),
            generate: has("generate"),
        }
    }
}

/// Anything that can tokenize text and report next-token probabilities of a seq2seq model.
pub trait ScorerBackend: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    fn vocab_size(&self) -> usize;

    fn eos_id(&self) -> TokenId;

    /// Must be deterministic: equal text yields equal ids.
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>>;

    /// Probability of each candidate as the next decoder token after `prefix`, given `source`.
    /// The result has the same length and order as `candidates`.
    fn next_token_probs(
        &self,
        source: &str,
        prefix: &[TokenId],
        candidates: &[TokenId],
    ) -> Result<Vec<f64>>;

    fn generate(&self, _source: &str, _max_len: usize) -> Result<String> {
        Err(Error::Capability("generate"))
    }
}

macro_rules! forward_backend {
    ($($ty:ty),*) => {$(
        impl<B: ScorerBackend + ?Sized> ScorerBackend for $ty {
            fn capabilities(&self) -> Capabilities { (**self).capabilities() }
            fn vocab_size(&self) -> usize { (**self).vocab_size() }
            fn eos_id(&self) -> TokenId { (**self).eos_id() }
            fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> { (**self).tokenize(text) }
            fn next_token_probs(&self, source: &str, prefix: &[TokenId], candidates: &[TokenId]) -> Result<Vec<f64>> {
                (**self).next_token_probs(source, prefix, candidates)
            }
            fn generate(&self, source: &str, max_len: usize) -> Result<String> { (**self).generate(source, max_len) }
        }
    )*};
}

forward_backend!(&B, Box<B>, Arc<B>);

/// Wraps a backend and counts calls per operation.
#[derive(Debug, Default)]
pub struct CountingBackend<B> {
    inner: B,
    next_calls: AtomicUsize,
    tokenize_calls: AtomicUsize,
    generate_calls: AtomicUsize,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            next_calls: AtomicUsize::new(0),
            tokenize_calls: AtomicUsize::new(0),
            generate_calls: AtomicUsize::new(0),
        }
    }

    pub fn next_calls(&self) -> usize {
        self.next_calls.load(Ordering::Relaxed)
    }

    pub fn tokenize_calls(&self) -> usize {
        self.tokenize_calls.load(Ordering::Relaxed)
    }

    pub fn generate_calls(&self) -> usize {
        self.generate_calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.next_calls.store(0, Ordering::Relaxed);
        self.tokenize_calls.store(0, Ordering::Relaxed);
        self.generate_calls.store(0, Ordering::Relaxed);
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ScorerBackend> ScorerBackend for CountingBackend<B> {
    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn eos_id(&self) -> TokenId {
        self.inner.eos_id()
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        self.tokenize_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.tokenize(text)
    }

    fn next_token_probs(
        &self,
        source: &str,
        prefix: &[TokenId],
        candidates: &[TokenId],
    ) -> Result<Vec<f64>> {
        self.next_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.next_token_probs(source, prefix, candidates)
    }

    fn generate(&self, source: &str, max_len: usize) -> Result<String> {
        self.generate_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.generate(source, max_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// Products of backend probabilities as returned.
    #[default]
    Raw,
    /// Each decision's probability divided by the mass of its siblings.
    Renormalized,
}

impl ScoreMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScoreMode::Raw => "raw",
            ScoreMode::Renormalized => "renormalized",
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(ScoreMode::Raw),
            "renorm" | "renormalized" => Ok(ScoreMode::Renormalized),
            other => Err(Error::Validation(format!("unknown score mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    pub mode: ScoreMode,
    /// Per-decision probabilities below this are clamped up to it. `None` disables clamping.
    pub prob_floor: Option<f64>,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            mode: ScoreMode::Raw,
            prob_floor: Some(DEFAULT_PROB_FLOOR),
        }
    }
}

impl ScoreOptions {
    pub fn new(mode: ScoreMode) -> Self {
        ScoreOptions {
            mode,
            ..Default::default()
        }
    }

    pub fn without_floor(mut self) -> Self {
        self.prob_floor = None;
        self
    }
}

/// Relation scores, kept in candidate order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector<F> {
    pub mode: ScoreMode,
    scores: IndexMap<String, F>,
}

impl<F: Real> ScoreVector<F> {
    pub fn new(mode: ScoreMode) -> Self {
        ScoreVector {
            mode,
            scores: IndexMap::new(),
        }
    }

    pub fn from_pairs<I, S>(mode: ScoreMode, pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, F)>,
        S: Into<String>,
    {
        ScoreVector {
            mode,
            scores: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn insert(&mut self, label: impl Into<String>, score: F) {
        self.scores.insert(label.into(), score);
    }

    pub fn get(&self, label: &str) -> Option<F> {
        self.scores.get(label).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, F)> {
        self.scores.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.scores.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn total(&self) -> F {
        self.scores.values().fold(F::zero(), |a, &b| a + b)
    }

    /// Label with the highest score; ties go to the earliest label.
    pub fn argmax(&self) -> Option<(&str, F)> {
        self.argmax_where(|_| true)
    }

    pub fn argmax_where(&self, mut keep: impl FnMut(&str) -> bool) -> Option<(&str, F)> {
        let mut best: Option<(&str, F)> = None;
        for (k, v) in self.iter() {
            if !keep(k) {
                continue;
            }
            match best {
                Some((_, b)) if v.partial_cmp(&b) != Some(std::cmp::Ordering::Greater) => {}
                _ => best = Some((k, v)),
            }
        }
        best
    }

    pub fn as_map(&self) -> &IndexMap<String, F> {
        &self.scores
    }
}

/// Backend answers keyed by `(prefix, candidates)`, scoped to one source text.
#[derive(Debug, Default)]
pub struct QueryCache {
    entries: HashMap<(Vec<TokenId>, Vec<TokenId>), Vec<f64>>,
}

impl QueryCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn query<B: ScorerBackend + ?Sized>(
        &mut self,
        backend: &B,
        source: &str,
        prefix: Vec<TokenId>,
        candidates: Vec<TokenId>,
    ) -> Result<&[f64]> {
        use std::collections::hash_map::Entry;
        match self.entries.entry((prefix, candidates)) {
            Entry::Occupied(e) => Ok(e.into_mut()),
            Entry::Vacant(e) => {
                let (prefix, cands) = e.key();
                let probs = backend
                    .next_token_probs(source, prefix, cands)
                    .map_err(|err| with_prefix(err, prefix))?;
                check_probs(&probs, prefix, cands.len())?;
                Ok(e.insert(probs))
            }
        }
    }
}

fn with_prefix(err: Error, prefix: &[TokenId]) -> Error {
    match err {
        Error::Backend { .. } => err,
        other => Error::Backend {
            prefix: prefix.to_vec(),
            message: other.to_string(),
        },
    }
}

fn check_probs(probs: &[f64], prefix: &[TokenId], expected: usize) -> Result<()> {
    if probs.len() != expected {
        return Err(Error::Backend {
            prefix: prefix.to_vec(),
            message: format!("expected {expected} probabilities, got {}", probs.len()),
        });
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Backend {
            prefix: prefix.to_vec(),
            message: format!("probability {p} outside [0, 1]"),
        });
    }
    Ok(())
}

/// Scores every leaf relation of `trie` as a product of per-decision probabilities.
///
/// Each forky node costs exactly one backend query (all of its children are requested at once).
pub fn trie_score<F: Real, B: ScorerBackend + ?Sized>(
    backend: &B,
    source: &str,
    trie: &TokenTrie,
    opts: ScoreOptions,
) -> Result<ScoreVector<F>> {
    trie_score_cached(backend, source, trie, opts, &mut QueryCache::new())
}

/// Like [`trie_score`], reusing answers already in `cache`. The cache must belong to `source`.
pub fn trie_score_cached<F: Real, B: ScorerBackend + ?Sized>(
    backend: &B,
    source: &str,
    trie: &TokenTrie,
    opts: ScoreOptions,
    cache: &mut QueryCache,
) -> Result<ScoreVector<F>> {
    let mut factors: HashMap<NodeId, Vec<f64>> = HashMap::new();
    for node in trie.forky_nodes() {
        let prefix = trie.prefix(node);
        let cands: Vec<TokenId> = trie.children(node).map(|(t, _)| t).collect();
        let probs = cache.query(backend, source, prefix, cands)?;
        let mut f: Vec<f64> = match opts.mode {
            ScoreMode::Raw => probs.to_vec(),
            ScoreMode::Renormalized => {
                let total: f64 = probs.iter().sum();
                if total <= 0.0 {
                    return Err(Error::DegenerateDistribution {
                        node,
                        prefix: trie.prefix(node),
                    });
                }
                probs.iter().map(|p| p / total).collect()
            }
        };
        if let Some(floor) = opts.prob_floor {
            f.iter_mut().for_each(|p| *p = p.max(floor));
        }
        factors.insert(node, f);
    }

    let mut out = ScoreVector::new(opts.mode);
    for rel in trie.relations() {
        let mut score = F::one();
        for d in trie.decisions_for(rel)? {
            let idx = d
                .siblings
                .binary_search(&d.chosen)
                .expect("chosen child is a sibling");
            score = score * F::from_f64_lossy(factors[&d.node][idx]);
        }
        out.insert(rel, score);
    }
    Ok(out)
}

/// Sum of log-probabilities of `ids` followed by EOS, one backend query per position.
/// A zero probability anywhere gives negative infinity.
pub fn full_sequence_loglik<F: Real, B: ScorerBackend + ?Sized>(
    backend: &B,
    source: &str,
    ids: &[TokenId],
) -> Result<F> {
    let eos = backend.eos_id();
    let mut total = 0.0f64;
    for t in 0..=ids.len() {
        let tok = ids.get(t).copied().unwrap_or(eos);
        let prefix = &ids[..t];
        let probs = backend
            .next_token_probs(source, prefix, &[tok])
            .map_err(|e| with_prefix(e, prefix))?;
        check_probs(&probs, prefix, 1)?;
        total += probs[0].ln();
    }
    Ok(F::from_f64_lossy(total))
}

/// Ranks candidates by whole-sequence likelihood, without sharing prefixes.
pub fn likelihood_rank<F, B, S, T>(
    backend: &B,
    source: &str,
    candidates: &[(S, T)],
) -> Result<ScoreVector<F>>
where
    F: Real,
    B: ScorerBackend + ?Sized,
    S: AsRef<str>,
    T: AsRef<[TokenId]>,
{
    let mut out = ScoreVector::new(ScoreMode::Raw);
    for (label, ids) in candidates {
        let ll: F = full_sequence_loglik(backend, source, ids.as_ref())?;
        out.insert(label.as_ref(), ll.exp());
    }
    Ok(out)
}

/// Generates a summary and scores each filled template by ROUGE-L against it.
pub fn rouge_rank<F, B, S, T>(
    backend: &B,
    source: &str,
    filled: &[(S, T)],
    max_len: usize,
) -> Result<ScoreVector<F>>
where
    F: Real,
    B: ScorerBackend + ?Sized,
    S: AsRef<str>,
    T: AsRef<str>,
{
    if !backend.capabilities().generate {
        return Err(Error::Capability("generate"));
    }
    let summary = backend.generate(source, max_len)?;
    Ok(ScoreVector::from_pairs(
        ScoreMode::Raw,
        filled
            .iter()
            .map(|(l, t)| (l.as_ref(), rouge_l::<F>(&summary, t.as_ref()))),
    ))
}
