//! Mentions, candidates, matchers, and throttlers.
//!
//! Matchers decide what a mention looks like; every contiguous word n-gram in
//! every sentence is offered to them. Throttlers are hard filtering rules
//! over candidates built from the cross-product of per-slot mention sets.
//! Matchers fail closed (an erroring matcher skips the span) while throttlers
//! fail open (an erroring throttler keeps the candidate), preserving their
//! precision/recall roles.

mod matchers;

pub use matchers::{DictionaryMatcher, FnMatcher, NumericRangeMatcher, RegexMatcher};

use crate::doc::queries::SpanRef;
use crate::doc::{Document, NodeId};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("relation schema needs at least one slot")]
    EmptySchema,
    #[error("duplicate slot name {0:?}")]
    DuplicateSlot(String),
}

/// Relation schema: an ordered list of (slot name, mention type) pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSchema {
    pub relation: String,
    pub slots: Vec<SchemaSlot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaSlot {
    pub name: String,
    pub type_name: String,
}

impl RelationSchema {
    pub fn new(relation: impl Into<String>, slots: &[(&str, &str)]) -> Self {
        RelationSchema {
            relation: relation.into(),
            slots: slots
                .iter()
                .map(|&(name, type_name)| SchemaSlot {
                    name: name.into(),
                    type_name: type_name.into(),
                })
                .collect(),
        }
    }

    pub fn arity(&self) -> usize {
        self.slots.len()
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.slots.is_empty() {
            return Err(SchemaError::EmptySchema);
        }
        let mut seen = std::collections::HashSet::new();
        for slot in &self.slots {
            if !seen.insert(slot.name.as_str()) {
                return Err(SchemaError::DuplicateSlot(slot.name.clone()));
            }
        }
        Ok(())
    }
}

/// A contiguous word span inside one sentence of one document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub doc_id: String,
    pub sentence: NodeId,
    pub word_start: usize,
    pub word_end: usize,
    pub text: String,
}

impl Span {
    pub fn as_ref(&self) -> SpanRef {
        SpanRef { sentence: self.sentence, word_start: self.word_start, word_end: self.word_end }
    }

    pub fn len(&self) -> usize {
        self.word_end - self.word_start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mention {
    pub span: Span,
    pub type_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: u64,
    pub relation: String,
    pub mentions: Vec<Mention>,
}

impl Candidate {
    pub fn doc_id(&self) -> &str {
        &self.mentions[0].span.doc_id
    }
}

#[derive(Debug, Error)]
#[error("matcher failure: {0}")]
pub struct MatcherFailure(pub String);

#[derive(Debug, Error)]
#[error("throttler failure: {0}")]
pub struct ThrottlerFailure(pub String);

/// Predicate over a span, with data-model access.
pub trait Matcher: Send + Sync {
    fn accept(&self, doc: &Document, span: &Span) -> Result<bool, MatcherFailure>;
}

/// Hard filtering predicate over a candidate.
pub trait Throttler: Send + Sync {
    fn keep(&self, doc: &Document, candidate: &Candidate) -> Result<bool, ThrottlerFailure>;
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ExtractionStats {
    /// Spans skipped because the matcher raised.
    pub matcher_failures: u64,
    /// Candidates kept although a throttler raised.
    pub throttler_failures: u64,
}

/// FNV-1a over length-delimited parts; stable across platforms and runs.
pub fn stable_hash<I, P>(parts: I) -> u64
where
    I: IntoIterator<Item = P>,
    P: AsRef<[u8]>,
{
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    let mut eat = |byte: u8| {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(PRIME);
    };
    for part in parts {
        let bytes = part.as_ref();
        for &b in bytes {
            eat(b);
        }
        for b in (bytes.len() as u64).to_le_bytes() {
            eat(b);
        }
    }
    hash
}

/// Enumerate word n-grams of length `1..=max_ngram_len` in every sentence and
/// keep the spans the matcher accepts. Output is ordered by (sentence
/// position, word_start, length) and free of duplicates; erroring matchers
/// skip the span and bump the failure counter.
pub fn extract_mentions(
    doc: &Document,
    type_name: &str,
    matcher: &dyn Matcher,
    max_ngram_len: usize,
    stats: &mut ExtractionStats,
) -> Vec<Mention> {
    assert!(max_ngram_len >= 1, "max_ngram_len must be at least 1");
    let mut out = Vec::new();
    for sid in doc.sentences() {
        let sent = doc.node(sid).sentence.as_ref().expect("sentence attrs");
        for start in 0..sent.len() {
            for len in 1..=max_ngram_len {
                let end = start + len - 1;
                if end >= sent.len() {
                    break;
                }
                let span = Span {
                    doc_id: doc.doc_id.clone(),
                    sentence: sid,
                    word_start: start,
                    word_end: end,
                    text: sent.words[start..=end].join(" "),
                };
                match matcher.accept(doc, &span) {
                    Ok(true) => out.push(Mention { span, type_name: type_name.to_string() }),
                    Ok(false) => {}
                    Err(e) => {
                        stats.matcher_failures += 1;
                        log::warn!("matcher error on {:?}: {}", doc.doc_id, e);
                    }
                }
            }
        }
    }
    out
}

/// Deterministic candidate id from the document and span coordinates.
fn candidate_id(relation: &str, mentions: &[&Mention]) -> u64 {
    let mut parts: Vec<Vec<u8>> = vec![relation.as_bytes().to_vec()];
    for m in mentions {
        parts.push(m.span.doc_id.as_bytes().to_vec());
        parts.push(m.span.sentence.0.to_le_bytes().to_vec());
        parts.push((m.span.word_start as u64).to_le_bytes().to_vec());
        parts.push((m.span.word_end as u64).to_le_bytes().to_vec());
    }
    stable_hash(parts)
}

/// Cross-product of per-slot mention sets, pruned conjunctively by
/// throttlers. All mentions must come from `doc`; an erroring throttler
/// keeps the candidate and bumps the failure counter.
pub fn generate_candidates(
    doc: &Document,
    schema: &RelationSchema,
    mention_sets: &[Vec<Mention>],
    throttlers: &[&dyn Throttler],
    stats: &mut ExtractionStats,
) -> Vec<Candidate> {
    assert_eq!(mention_sets.len(), schema.arity(), "one mention set per schema slot");
    for (set, slot) in mention_sets.iter().zip(&schema.slots) {
        for m in set {
            assert_eq!(m.span.doc_id, doc.doc_id, "candidates never mix documents");
            assert_eq!(m.type_name, slot.type_name, "mention type must match its slot");
        }
    }
    if mention_sets.iter().any(Vec::is_empty) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut picks = vec![0usize; mention_sets.len()];
    'outer: loop {
        let mentions: Vec<&Mention> =
            picks.iter().enumerate().map(|(s, &i)| &mention_sets[s][i]).collect();
        let cand = Candidate {
            candidate_id: candidate_id(&schema.relation, &mentions),
            relation: schema.relation.clone(),
            mentions: mentions.into_iter().cloned().collect(),
        };
        let mut keep = true;
        for throttler in throttlers {
            match throttler.keep(doc, &cand) {
                Ok(true) => {}
                Ok(false) => {
                    keep = false;
                    break;
                }
                Err(e) => {
                    stats.throttler_failures += 1;
                    log::warn!("throttler error on {:?}: {}", doc.doc_id, e);
                }
            }
        }
        if keep {
            out.push(cand);
        }
        // Advance the odometer, last slot fastest.
        for slot in (0..picks.len()).rev() {
            picks[slot] += 1;
            if picks[slot] < mention_sets[slot].len() {
                continue 'outer;
            }
            picks[slot] = 0;
            if slot == 0 {
                break 'outer;
            }
        }
    }
    out
}
