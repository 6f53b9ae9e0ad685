//! Candidate generation: BM25, exact dense search and alias-dictionary lookup.

mod bm25;
mod dense;
mod snapshot;

pub use bm25::{Bm25Index, Bm25Params};
pub use dense::{DenseIndex, Embedder};
pub(crate) use dense::{dot as dense_dot, normalize as dense_normalize};
pub use snapshot::{IndexSnapshot, SnapshotError, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::kb::{dict_candidates, AliasDictionary, MarkedContext};
use crate::text::{sentence_window, SentenceSplitter};

/// Instruction prepended to dense queries for instruction-tuned embedders.
pub const RETRIEVER_INSTRUCTION: &str =
    "Given an ambiguous mention, retrieve relevant entities that the mention refers to.";

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot build an index over an empty knowledge base")]
    EmptyKb,
    #[error("embedding for `{0}` is the zero vector")]
    ZeroVector(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("candidate sets refer to different mentions: `{0}` vs `{1}`")]
    MentionMismatch(String, String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("embedding failed: {0}")]
    Embedding(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Bm25,
    Dense,
    Dictionary,
    Precomputed,
    Merged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub entity_id: String,
    /// Retriever score. Dictionary, precomputed and merged sets use `1 / rank`.
    pub retrieval_score: f64,
    /// 1-based.
    pub retrieval_rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_score: Option<f64>,
    /// Index shown in the selection prompt (0 is reserved for the None option).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presented_index: Option<usize>,
}

impl Candidate {
    pub fn new(entity_id: impl Into<String>, retrieval_score: f64, retrieval_rank: usize) -> Self {
        Self {
            entity_id: entity_id.into(),
            retrieval_score,
            retrieval_rank,
            rerank_score: None,
            presented_index: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub mention_id: String,
    pub candidates: Vec<Candidate>,
    pub provenance: Provenance,
}

impl CandidateSet {
    pub fn new(mention_id: impl Into<String>, provenance: Provenance) -> Self {
        Self {
            mention_id: mention_id.into(),
            candidates: Vec::new(),
            provenance,
        }
    }

    /// Builds a set from an ordered id list, scoring by reciprocal rank.
    /// Repeated ids keep their first position.
    pub fn from_ranked_ids<I, S>(mention_id: impl Into<String>, provenance: Provenance, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut set = Self::new(mention_id, provenance);
        for id in ids {
            let id = id.into();
            if seen.insert(id.clone()) {
                let rank = set.candidates.len() + 1;
                set.candidates.push(Candidate::new(id, 1.0 / rank as f64, rank));
            }
        }
        set
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.entity_id.clone()).collect()
    }

    pub fn contains(&self, entity_id: &str) -> bool {
        self.candidates.iter().any(|c| c.entity_id == entity_id)
    }

    pub fn position(&self, entity_id: &str) -> Option<usize> {
        self.candidates.iter().position(|c| c.entity_id == entity_id)
    }
}

/// Dictionary retriever over an alias map.
pub fn dictionary_search(dict: &AliasDictionary, mention_id: &str, surface: &str, n: usize) -> CandidateSet {
    let ids = dict_candidates(dict, surface);
    CandidateSet::from_ranked_ids(mention_id, Provenance::Dictionary, ids.into_iter().take(n))
}

/// Interleaves sets rank by rank (set order breaks ties), keeps the first
/// occurrence of each id and truncates to `budget`.
pub fn merge_candidates(sets: &[CandidateSet], budget: usize) -> Result<CandidateSet, RetrievalError> {
    let Some(first) = sets.first() else {
        return Ok(CandidateSet::new("", Provenance::Merged));
    };
    if let Some(other) = sets.iter().find(|s| s.mention_id != first.mention_id) {
        return Err(RetrievalError::MentionMismatch(
            first.mention_id.clone(),
            other.mention_id.clone(),
        ));
    }
    let depth = sets.iter().map(CandidateSet::len).max().unwrap_or(0);
    let interleaved = (0..depth).flat_map(|r| sets.iter().filter_map(move |s| s.candidates.get(r)));
    let mut merged = CandidateSet::from_ranked_ids(
        first.mention_id.clone(),
        Provenance::Merged,
        interleaved.map(|c| c.entity_id.clone()),
    );
    merged.candidates.truncate(budget);
    Ok(merged)
}

/// How retrieval queries are derived from a marked context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryConfig {
    /// Sentences of context on each side of the mention sentence (BM25).
    pub context_sentences: usize,
    pub use_context: bool,
    /// Prepend the retriever instruction to dense queries.
    pub instructed_embedder: bool,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            context_sentences: 1,
            use_context: true,
            instructed_embedder: true,
        }
    }
}

pub fn bm25_query(ctx: &MarkedContext, cfg: &QueryConfig) -> String {
    let surface = ctx.surface();
    if !cfg.use_context {
        return surface;
    }
    let (byte_start, _) = ctx.byte_span();
    let window = sentence_window(&SentenceSplitter::default(), ctx.text(), byte_start, cfg.context_sentences);
    format!("{surface} {window}")
}

pub fn dense_query(ctx: &MarkedContext, cfg: &QueryConfig) -> String {
    let surface = ctx.surface();
    if cfg.instructed_embedder {
        format!("Instruct: {RETRIEVER_INSTRUCTION}\nQuery: {surface}")
    } else {
        surface
    }
}
