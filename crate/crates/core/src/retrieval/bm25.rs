use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Candidate, CandidateSet, Provenance, RetrievalError};
use crate::kb::{verbalize_entity, KnowledgeBase};
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(RetrievalError::InvalidParameter(format!("k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(RetrievalError::InvalidParameter(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

/// In-memory Okapi BM25 index over entity verbalizations.
///
/// Term weight: `ln(1 + (N - df + 0.5) / (df + 0.5))`, always positive.
/// Query terms are summed with multiplicity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    params: Bm25Params,
    entity_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    /// term -> (doc, term frequency), docs ascending.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl Bm25Index {
    pub fn build(kb: &KnowledgeBase, params: Bm25Params) -> Result<Self, RetrievalError> {
        if kb.is_empty() {
            return Err(RetrievalError::EmptyKb);
        }
        params.validate()?;
        Ok(Self::from_documents(
            kb.iter().map(|e| (e.id.clone(), verbalize_entity(e))),
            params,
        ))
    }

    /// Indexes arbitrary `(id, text)` documents.
    pub fn from_documents(docs: impl IntoIterator<Item = (String, String)>, params: Bm25Params) -> Self {
        let mut entity_ids = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        for (doc, (id, text)) in docs.into_iter().enumerate() {
            let tokens = tokenize(&text);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((doc as u32, count));
            }
            entity_ids.push(id);
            doc_lengths.push(tokens.len() as u32);
        }
        let avg_doc_length = mean_length(&doc_lengths);
        Self {
            params,
            entity_ids,
            doc_lengths,
            avg_doc_length,
            postings,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn entity_ids(&self) -> &[String] {
        &self.entity_ids
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.document_frequency(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Raw scores for every document, in document order.
    pub fn score_all(&self, query: &str) -> Vec<f64> {
        let mut scores = vec![0.0f64; self.doc_count()];
        let Bm25Params { k1, b } = self.params;
        for term in tokenize(query) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for &(doc, tf) in list {
                let tf = tf as f64;
                let len = self.doc_lengths[doc as usize] as f64;
                let norm = 1.0 - b + b * len / self.avg_doc_length;
                scores[doc as usize] += idf * (tf * (k1 + 1.0)) / (tf + k1 * norm);
            }
        }
        scores
    }

    /// Top-`n` documents with a positive score, ties broken by insertion order.
    pub fn search(&self, mention_id: &str, query: &str, n: usize) -> CandidateSet {
        let scores = self.score_all(query);
        let mut hits: Vec<(usize, f64)> = scores.into_iter().enumerate().filter(|&(_, s)| s > 0.0).collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(n);
        let mut set = CandidateSet::new(mention_id, Provenance::Bm25);
        set.candidates = hits
            .into_iter()
            .enumerate()
            .map(|(rank, (doc, score))| Candidate::new(self.entity_ids[doc].clone(), score, rank + 1))
            .collect();
        set
    }

    pub(crate) fn recompute_stats(&mut self) {
        self.avg_doc_length = mean_length(&self.doc_lengths);
    }
}

fn mean_length(lengths: &[u32]) -> f64 {
    if lengths.is_empty() {
        0.0
    } else {
        lengths.iter().map(|&l| l as f64).sum::<f64>() / lengths.len() as f64
    }
}
