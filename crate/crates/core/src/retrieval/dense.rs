use serde::{Deserialize, Serialize};

use super::{Candidate, CandidateSet, Provenance, RetrievalError};
use crate::gateway::GatewayError;
use crate::kb::{verbalize_entity, KnowledgeBase};

/// Anything that maps texts to fixed-dimension vectors, order-aligned.
pub trait Embedder: Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError>;
}

impl<F> Embedder for F
where
    F: Fn(&[String]) -> Result<Vec<Vec<f32>>, GatewayError> + Sync,
{
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        self(texts)
    }
}

const EMBED_BATCH: usize = 64;

/// Flat exact-search index of unit-normalized rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseIndex {
    entity_ids: Vec<String>,
    dimension: usize,
    /// Row-major, `entity_ids.len() * dimension`.
    vectors: Vec<f32>,
}

pub(crate) fn normalize(v: &[f32]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|&x| (x as f64 / norm) as f32).collect())
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

impl DenseIndex {
    /// Embeds each entity verbalization; batches run in parallel, each call
    /// still going through the embedder's own concurrency limits.
    pub fn build(kb: &KnowledgeBase, embedder: &dyn Embedder) -> Result<Self, RetrievalError> {
        use rayon::prelude::*;
        if kb.is_empty() {
            return Err(RetrievalError::EmptyKb);
        }
        let texts: Vec<String> = kb.iter().map(verbalize_entity).collect();
        let batches: Vec<Vec<Vec<f32>>> = texts
            .par_chunks(EMBED_BATCH)
            .map(|chunk| {
                let out = embedder.embed(chunk)?;
                if out.len() != chunk.len() {
                    return Err(RetrievalError::Embedding(GatewayError::Decode(format!(
                        "embedder returned {} vectors for {} texts",
                        out.len(),
                        chunk.len()
                    ))));
                }
                Ok(out)
            })
            .collect::<Result<_, RetrievalError>>()?;
        let rows = kb.iter().map(|e| e.id.clone()).zip(batches.into_iter().flatten());
        Self::from_rows(rows)
    }

    /// Builds from `(id, raw vector)` rows, normalizing each.
    pub fn from_rows(rows: impl IntoIterator<Item = (String, Vec<f32>)>) -> Result<Self, RetrievalError> {
        let mut entity_ids = Vec::new();
        let mut vectors = Vec::new();
        let mut dimension = None;
        for (id, raw) in rows {
            let dim = *dimension.get_or_insert(raw.len());
            if raw.len() != dim {
                return Err(RetrievalError::DimensionMismatch {
                    expected: dim,
                    got: raw.len(),
                });
            }
            let unit = normalize(&raw).ok_or_else(|| RetrievalError::ZeroVector(id.clone()))?;
            vectors.extend_from_slice(&unit);
            entity_ids.push(id);
        }
        let Some(dimension) = dimension else {
            return Err(RetrievalError::EmptyKb);
        };
        Ok(Self {
            entity_ids,
            dimension,
            vectors,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entity_ids.is_empty()
    }

    pub fn entity_ids(&self) -> &[String] {
        &self.entity_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Exact top-`n` by cosine similarity; ties broken by insertion order.
    pub fn search(&self, mention_id: &str, query: &[f32], n: usize) -> Result<CandidateSet, RetrievalError> {
        if query.len() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dimension,
                got: query.len(),
            });
        }
        let q = normalize(query).unwrap_or_else(|| vec![0.0; self.dimension]);
        let mut scored: Vec<(usize, f64)> = (0..self.len()).map(|i| (i, dot(self.row(i), &q))).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(n);
        let mut set = CandidateSet::new(mention_id, Provenance::Dense);
        set.candidates = scored
            .into_iter()
            .enumerate()
            .map(|(rank, (i, s))| Candidate::new(self.entity_ids[i].clone(), s, rank + 1))
            .collect();
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::Entity;

    fn kb3() -> KnowledgeBase {
        KnowledgeBase::from_entities(
            "t",
            [
                Entity::new("a", "Alpha", ""),
                Entity::new("b", "Beta", ""),
                Entity::new("c", "Alpha", ""),
            ],
        )
        .unwrap()
    }

    fn toy_embedder(texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        Ok(texts
            .iter()
            .map(|t| {
                let b = t.as_bytes();
                vec![b[0] as f32, b.len() as f32, 1.0, b[b.len() - 1] as f32]
            })
            .collect())
    }

    #[test]
    fn build_normalizes_rows() {
        let idx = DenseIndex::build(&kb3(), &toy_embedder).unwrap();
        assert_eq!((idx.len(), idx.dimension()), (3, 4));
        for i in 0..3 {
            let norm = dot(idx.row(i), idx.row(i)).sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
        assert_eq!(idx.row(0), idx.row(2));
    }

    #[test]
    fn zero_vector_is_rejected() {
        let zero = |texts: &[String]| -> Result<Vec<Vec<f32>>, GatewayError> {
            Ok(texts.iter().map(|_| vec![0.0; 4]).collect())
        };
        assert!(matches!(DenseIndex::build(&kb3(), &zero), Err(RetrievalError::ZeroVector(id)) if id == "a"));
    }

    #[test]
    fn ragged_dimensions_are_rejected() {
        let ragged = |texts: &[String]| -> Result<Vec<Vec<f32>>, GatewayError> {
            Ok(texts.iter().enumerate().map(|(i, _)| vec![1.0; 3 + i]).collect())
        };
        assert!(matches!(
            DenseIndex::build(&kb3(), &ragged),
            Err(RetrievalError::DimensionMismatch { expected: 3, got: 4 })
        ));
    }

    #[test]
    fn self_similarity_and_orthogonal_query() {
        let idx = DenseIndex::from_rows([
            ("x".to_string(), vec![1.0, 0.0, 0.0]),
            ("y".to_string(), vec![0.0, 2.0, 0.0]),
            ("z".to_string(), vec![0.0, 1.0, 1.0]),
        ])
        .unwrap();
        let res = idx.search("m", &[0.0, 3.0, 0.0], 3).unwrap();
        assert_eq!(res.candidates[0].entity_id, "y");
        assert!((res.candidates[0].retrieval_score - 1.0).abs() < 1e-6);

        let idx2 = DenseIndex::from_rows([
            ("x".to_string(), vec![1.0, 0.0, 0.0]),
            ("y".to_string(), vec![0.0, 1.0, 0.0]),
        ])
        .unwrap();
        let res = idx2.search("m", &[0.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(res.ids(), ["x", "y"]);
        assert!(res.candidates.iter().all(|c| c.retrieval_score == 0.0));
        assert!(matches!(idx2.search("m", &[1.0], 1), Err(RetrievalError::DimensionMismatch { .. })));
    }
}
