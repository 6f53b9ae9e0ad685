//! Pointwise candidate reranking and top-k truncation.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use parking_lot::{Mutex, RwLock};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, YesNoScoreRequest};
use crate::kb::{verbalize_entity, KnowledgeBase, MarkedContext};
use crate::retrieval::CandidateSet;

/// Default reranking instruction.
pub const RERANKER_INSTRUCTION: &str =
    "Given a text with a marked mention enclosed in square brackets, retrieve relevant entities that the mention refers to.";

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("no candidates to rerank")]
    EmptyCandidates,
    #[error("non-finite logit input ({0}, {1})")]
    NonFiniteInput(f64, f64),
    #[error("candidate `{0}` is not in the knowledge base")]
    UnknownEntity(String),
    #[error("no gated items to evaluate")]
    EmptyGatedSet,
    #[error("invalid rerank config: {0}")]
    InvalidConfig(String),
    #[error("gateway error: {0}")]
    Gateway(#[from] GatewayError),
    #[error("score cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    #[default]
    GenerativeYesNo,
    EmbeddingCosine,
    RetrievalPassthrough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankConfig {
    pub k: usize,
    pub instruction_text: String,
    pub scorer_kind: ScorerKind,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            k: 10,
            instruction_text: RERANKER_INSTRUCTION.to_string(),
            scorer_kind: ScorerKind::GenerativeYesNo,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<(), RerankError> {
        if self.k == 0 {
            return Err(RerankError::InvalidConfig("k must be >= 1".into()));
        }
        if self.scorer_kind == ScorerKind::GenerativeYesNo && self.instruction_text.trim().is_empty() {
            return Err(RerankError::InvalidConfig("empty instruction for the generative scorer".into()));
        }
        Ok(())
    }
}

/// `e^yes / (e^yes + e^no)`, computed as the logistic of `yes - no`.
pub fn score_from_logits(lp_yes: f64, lp_no: f64) -> Result<f64, RerankError> {
    if !lp_yes.is_finite() || !lp_no.is_finite() {
        return Err(RerankError::NonFiniteInput(lp_yes, lp_no));
    }
    let x = lp_yes - lp_no;
    Ok(if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    })
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    yes: f64,
    no: f64,
}

/// Content-addressed store of yes/no logits, optionally persisted as JSONL.
#[derive(Default)]
pub struct ScoreCache {
    entries: RwLock<HashMap<String, (f64, f64)>>,
    sink: Option<Mutex<File>>,
    path: Option<PathBuf>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl std::fmt::Debug for ScoreCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScoreCache")
            .field("entries", &self.len())
            .field("path", &self.path)
            .finish()
    }
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads existing entries from `path` and appends new ones to it.
    pub fn persistent(path: &Path) -> Result<Self, RerankError> {
        let mut entries = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if let Ok(entry) = serde_json::from_str::<CacheLine>(&line) {
                    entries.insert(entry.key, (entry.yes, entry.no));
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries: RwLock::new(entries),
            sink: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
            ..Self::default()
        })
    }

    pub fn get(&self, key: &str) -> Option<(f64, f64)> {
        let hit = self.entries.read().get(key).copied();
        match hit {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        hit
    }

    pub fn insert(&self, key: String, logits: (f64, f64)) {
        let fresh = self.entries.write().insert(key.clone(), logits).is_none();
        if let (true, Some(sink)) = (fresh, &self.sink) {
            let line = CacheLine {
                key,
                yes: logits.0,
                no: logits.1,
            };
            if let Ok(json) = serde_json::to_string(&line) {
                let _ = writeln!(sink.lock(), "{json}");
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankOutcome {
    pub candidates: CandidateSet,
    /// Candidates whose scoring call failed; they score 0.
    pub failed: Vec<String>,
}

fn cosine_query(instruction: &str, ctx: &MarkedContext) -> String {
    format!("Instruct: {instruction}\nQuery: {}", ctx.rendered())
}

fn score_generative(
    ctx: &MarkedContext,
    docs: &[String],
    cfg: &RerankConfig,
    gateway: &Gateway,
    cache: Option<&ScoreCache>,
) -> Vec<Result<f64, RerankError>> {
    docs.par_iter()
        .map(|doc| {
            let req = YesNoScoreRequest {
                instruction: cfg.instruction_text.clone(),
                query: ctx.rendered().to_string(),
                document: doc.clone(),
            };
            let key = cache.map(|_| req.content_hash());
            let cached = cache.zip(key.as_deref()).and_then(|(c, k)| c.get(k));
            let (yes, no) = match cached {
                Some(logits) => logits,
                None => {
                    let logits = gateway.score_yes_no(&req)?;
                    if let (Some(c), Some(k)) = (cache, key) {
                        c.insert(k, logits);
                    }
                    logits
                }
            };
            score_from_logits(yes, no)
        })
        .collect()
}

fn score_cosine(ctx: &MarkedContext, docs: &[String], cfg: &RerankConfig, gateway: &Gateway) -> Result<Vec<f64>, RerankError> {
    let mut texts = Vec::with_capacity(docs.len() + 1);
    texts.push(cosine_query(&cfg.instruction_text, ctx));
    texts.extend(docs.iter().cloned());
    let vectors = gateway.embed(&texts)?;
    let unit = |v: &[f32]| crate::retrieval::dense_normalize(v);
    let q = unit(&vectors[0]);
    Ok(vectors[1..]
        .iter()
        .map(|v| {
            let cos = match (&q, unit(v)) {
                (Some(q), Some(d)) => crate::retrieval::dense_dot(q, &d),
                _ => 0.0,
            };
            ((1.0 + cos) / 2.0).clamp(0.0, 1.0)
        })
        .collect())
}

/// Scores every candidate and sorts by score, ties kept in retrieval order.
pub fn rerank(
    ctx: &MarkedContext,
    cands: &CandidateSet,
    kb: &KnowledgeBase,
    cfg: &RerankConfig,
    gateway: &Gateway,
    cache: Option<&ScoreCache>,
) -> Result<RerankOutcome, RerankError> {
    cfg.validate()?;
    if cands.is_empty() {
        return Err(RerankError::EmptyCandidates);
    }
    let mut ordered = cands.clone();
    ordered.candidates.sort_by_key(|c| c.retrieval_rank);
    let docs = ordered
        .candidates
        .iter()
        .map(|c| {
            kb.get(&c.entity_id)
                .map(verbalize_entity)
                .ok_or_else(|| RerankError::UnknownEntity(c.entity_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut failed = Vec::new();
    let scores: Vec<f64> = match cfg.scorer_kind {
        ScorerKind::RetrievalPassthrough => ordered
            .candidates
            .iter()
            .map(|c| 1.0 / (1.0 + c.retrieval_rank as f64))
            .collect(),
        ScorerKind::EmbeddingCosine => score_cosine(ctx, &docs, cfg, gateway)?,
        ScorerKind::GenerativeYesNo => score_generative(ctx, &docs, cfg, gateway, cache)
            .into_iter()
            .zip(&ordered.candidates)
            .map(|(r, c)| match r {
                Ok(s) => s,
                Err(e) => {
                    tracing::warn!(entity = %c.entity_id, error = %e, "scoring failed; candidate scores 0");
                    failed.push(c.entity_id.clone());
                    0.0
                }
            })
            .collect(),
    };
    for (c, s) in ordered.candidates.iter_mut().zip(scores) {
        c.rerank_score = Some(s);
    }
    ordered
        .candidates
        .sort_by(|a, b| b.rerank_score.unwrap_or(0.0).total_cmp(&a.rerank_score.unwrap_or(0.0)));
    Ok(RerankOutcome {
        candidates: ordered,
        failed,
    })
}

/// First `min(k, len)` candidates, with presented indices `1..=m`.
pub fn top_k(cands: &CandidateSet, k: usize) -> CandidateSet {
    let mut out = cands.clone();
    out.candidates.truncate(k);
    for (i, c) in out.candidates.iter_mut().enumerate() {
        c.presented_index = Some(i + 1);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub ranking: Vec<String>,
    pub gold: String,
    /// Gold is within the pre-rerank candidate pool.
    pub gated: bool,
}

/// Fraction of gated items whose gold lies within the first `k` entries.
pub fn accuracy_at_k(items: &[RankedItem], k: usize) -> Result<f64, RerankError> {
    let gated: Vec<_> = items.iter().filter(|i| i.gated).collect();
    if gated.is_empty() {
        return Err(RerankError::EmptyGatedSet);
    }
    let hits = gated
        .iter()
        .filter(|i| i.ranking.iter().take(k).any(|id| *id == i.gold))
        .count();
    Ok(hits as f64 / gated.len() as f64)
}
