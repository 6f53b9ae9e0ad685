//! Fine-tuning-free entity linking.
//!
//! Candidates are retrieved from a knowledge base (BM25, exact dense search
//! or an alias dictionary), reranked pointwise by the yes/no next-token
//! probabilities of an instructed reranker, cut to the top `k`, and handed
//! to a selection LLM whose sampled answers are majority-voted into the
//! final entity or a None outcome.

pub mod adapters;
pub mod config;
pub mod eval;
pub mod gateway;
pub mod kb;
pub mod pipeline;
pub mod rerank;
pub mod retrieval;
pub mod select;
pub mod text;
