//! The multimodal feature library with per-document mention caching.
//!
//! Candidate featurization unions slot-prefixed unary mention features with
//! pairwise binary features. Each mention's unary set is computed once per
//! document and cached until all of the document's candidates are featurized,
//! after which the cache is dropped.

mod templates;

pub use templates::{kind_of, mention_features, pair_features, TemplateArity, TEMPLATE_KINDS};

use crate::cand::{Candidate, Mention, RelationSchema};
use crate::doc::{Document, NodeId};
use crate::sparse::SparseMatrix;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::rc::Rc;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Structural,
    Tabular,
    Visual,
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "structural" => Ok(Modality::Structural),
            "tabular" => Ok(Modality::Tabular),
            "visual" => Ok(Modality::Visual),
            other => Err(format!("unknown feature modality {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureOptions {
    pub modalities: BTreeSet<Modality>,
    pub use_cache: bool,
    pub visual_tolerance: f64,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions {
            modalities: BTreeSet::from([Modality::Structural, Modality::Tabular, Modality::Visual]),
            use_cache: true,
            visual_tolerance: crate::doc::queries::DEFAULT_VISUAL_TOLERANCE,
        }
    }
}

/// Append-only map from feature names to dense column indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureRegistry {
    names: IndexMap<String, usize>,
}

impl FeatureRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_insert(&mut self, name: &str) -> usize {
        if let Some(&idx) = self.names.get(name) {
            return idx;
        }
        let idx = self.names.len();
        self.names.insert(name.to_string(), idx);
        idx
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.get(name).copied()
    }

    pub fn name_of(&self, idx: usize) -> Option<&str> {
        self.names.get_index(idx).map(|(k, _)| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.names.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (name, idx) in self.iter() {
            writeln!(w, "{idx}\t{name}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> std::io::Result<Self> {
        let mut names = IndexMap::new();
        for line in r.lines() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (idx, name) = line.split_once('\t').ok_or_else(|| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, "missing tab in registry line")
            })?;
            let idx: usize = idx
                .parse()
                .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidData, "bad column id"))?;
            names.insert(name.to_string(), idx);
        }
        Ok(FeatureRegistry { names })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DocFeaturizeStats {
    pub doc_id: String,
    pub distinct_mentions: u64,
    pub computations: u64,
    pub hits: u64,
}

type MentionKey = (NodeId, usize, usize);

/// Featurizes the candidates of a single document, caching unary mention
/// feature sets. Confine one featurizer to one worker; the cache is flushed
/// when the featurizer is dropped at the end of the document.
pub struct DocumentFeaturizer<'d> {
    doc: &'d Document,
    slot_names: Vec<String>,
    opts: FeatureOptions,
    cache: HashMap<MentionKey, Rc<BTreeSet<String>>>,
    pub stats: DocFeaturizeStats,
}

impl<'d> DocumentFeaturizer<'d> {
    pub fn new(doc: &'d Document, schema: &RelationSchema, opts: FeatureOptions) -> Self {
        DocumentFeaturizer {
            doc,
            slot_names: schema.slots.iter().map(|s| s.name.clone()).collect(),
            opts,
            cache: HashMap::new(),
            stats: DocFeaturizeStats { doc_id: doc.doc_id.clone(), ..Default::default() },
        }
    }

    /// Unary feature set of one mention, cached per document.
    pub fn featurize_mention(&mut self, mention: &Mention) -> Rc<BTreeSet<String>> {
        let span = &mention.span;
        let key = (span.sentence, span.word_start, span.word_end);
        if self.opts.use_cache {
            if let Some(hit) = self.cache.get(&key) {
                self.stats.hits += 1;
                return Rc::clone(hit);
            }
        }
        self.stats.computations += 1;
        let feats = Rc::new(mention_features(self.doc, &span.as_ref(), &span.text, &self.opts));
        if self.opts.use_cache {
            self.cache.insert(key, Rc::clone(&feats));
        }
        feats
    }

    /// Slot-prefixed unary features of every mention plus pairwise binary
    /// features; pair features carry the slot names only above arity 2.
    pub fn featurize_candidate(&mut self, candidate: &Candidate) -> BTreeSet<String> {
        let arity = candidate.mentions.len();
        let mut out = BTreeSet::new();
        for (i, mention) in candidate.mentions.iter().enumerate() {
            let slot = self.slot_names.get(i).cloned().unwrap_or_else(|| format!("m{i}"));
            let unary = self.featurize_mention(mention);
            out.extend(unary.iter().map(|f| format!("{slot}_{f}")));
        }
        for i in 0..arity {
            for j in (i + 1)..arity {
                let feats = pair_features(
                    self.doc,
                    &candidate.mentions[i].span.as_ref(),
                    &candidate.mentions[j].span.as_ref(),
                    &self.opts,
                );
                if arity > 2 {
                    let prefix = format!("{}_{}", self.slot_names[i], self.slot_names[j]);
                    out.extend(feats.into_iter().map(|f| format!("{prefix}_{f}")));
                } else {
                    out.extend(feats);
                }
            }
        }
        out
    }

    fn distinct_mentions(&mut self, candidates: &[&Candidate]) -> u64 {
        let mut keys: BTreeSet<MentionKey> = BTreeSet::new();
        for c in candidates {
            for m in &c.mentions {
                keys.insert((m.span.sentence, m.span.word_start, m.span.word_end));
            }
        }
        keys.len() as u64
    }
}

/// Featurize candidates (grouped by document, in order) into an LIL matrix
/// with one row per candidate. The registry grows append-only; re-running on
/// identical inputs yields a bit-identical matrix and registry.
pub fn build_feature_matrix(
    docs: &HashMap<String, Document>,
    schema: &RelationSchema,
    candidates: &[Candidate],
    registry: &mut FeatureRegistry,
    opts: &FeatureOptions,
) -> (SparseMatrix, Vec<DocFeaturizeStats>) {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(candidates.len());
    let mut stats = Vec::new();
    let mut idx = 0;
    while idx < candidates.len() {
        let doc_id = candidates[idx].doc_id().to_string();
        let doc = docs
            .get(&doc_id)
            .unwrap_or_else(|| panic!("candidate references unknown document {doc_id:?}"));
        let mut featurizer = DocumentFeaturizer::new(doc, schema, opts.clone());
        let start = idx;
        while idx < candidates.len() && candidates[idx].doc_id() == doc_id {
            let feats = featurizer.featurize_candidate(&candidates[idx]);
            let cols: Vec<(usize, f64)> =
                feats.iter().map(|f| (registry.get_or_insert(f), 1.0)).collect();
            rows.push(cols);
            idx += 1;
        }
        let doc_cands: Vec<&Candidate> = candidates[start..idx].iter().collect();
        featurizer.stats.distinct_mentions = featurizer.distinct_mentions(&doc_cands);
        stats.push(featurizer.stats);
        // Featurizer (and with it the mention cache) is flushed here.
    }
    (SparseMatrix::from_rows(registry.len(), rows), stats)
}
