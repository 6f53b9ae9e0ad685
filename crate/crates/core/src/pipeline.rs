//! End-to-end linking: retrieve, rerank, cut to top-k, select. Also batch
//! execution, retention-funnel accounting and run-directory output.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError};
use crate::kb::{mark_mention, AliasDictionary, KnowledgeBase, MarkedContext, MentionError};
use crate::rerank::{rerank, top_k, RerankConfig, RerankError, ScoreCache};
use crate::retrieval::{
    bm25_query, dense_query, dictionary_search, merge_candidates, Bm25Index, Bm25Params, Candidate, CandidateSet,
    DenseIndex, Provenance, QueryConfig, RetrievalError,
};
use crate::select::{select, LinkResult, LinkingDecision, PromptOptions, SelectError, SelectionConfig};
use crate::text::centered_window;

/// Reserved gold id for mentions with no matching KB entity.
pub const UNK_GOLD: &str = "__UNK__";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("task file line {line_no}: {reason}")]
    MalformedTask { line_no: usize, reason: String },
    #[error("task `{task}`: {source}")]
    BadMention { task: String, source: MentionError },
    #[error("task `{task}`: precomputed candidate `{entity}` is not in the knowledge base")]
    UnknownCandidate { task: String, entity: String },
    #[error("retriever `{0:?}` needs an index that was not built")]
    MissingIndex(RetrieverKind),
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("retrieval failed: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("reranking failed: {0}")]
    Rerank(#[from] RerankError),
    #[error("selection failed: {0}")]
    Select(#[from] SelectError),
    #[error("gateway error: {0}")]
    Gateway(#[from] GatewayError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// True when the failure came from the model backend rather than the input.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            PipelineError::Gateway(_)
                | PipelineError::Retrieval(RetrievalError::Embedding(_))
                | PipelineError::Rerank(RerankError::Gateway(_))
                | PipelineError::Select(SelectError::Gateway(_))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    #[default]
    Bm25,
    Dense,
    Dictionary,
    /// BM25 and dense lists interleaved by rank.
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub retriever: RetrieverKind,
    /// Candidate budget n.
    pub budget: usize,
    pub bm25: Bm25Params,
    pub query: QueryConfig,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            retriever: RetrieverKind::Bm25,
            budget: 64,
            bm25: Bm25Params::default(),
            query: QueryConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Forward all retrieved candidates, in retrieval order, with no cutoff.
    pub no_reranker: bool,
    /// Return the top reranked candidate without calling the selector.
    pub no_selection: bool,
    /// Show names only in the selection prompt.
    pub no_descriptions: bool,
    pub no_reasoning: bool,
    /// Force a single sample.
    pub no_self_consistency: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub retrieval: RetrievalConfig,
    pub rerank: RerankConfig,
    pub selection: SelectionConfig,
    /// Pool depth for normalized accuracy.
    pub gate_n: usize,
    pub ablations: AblationFlags,
    pub max_concurrency: usize,
    /// Context truncation limit in characters, centered on the mention.
    pub context_limit: Option<usize>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig::default(),
            rerank: RerankConfig::default(),
            selection: SelectionConfig::default(),
            gate_n: 64,
            ablations: AblationFlags::default(),
            max_concurrency: 8,
            context_limit: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        if self.retrieval.budget == 0 {
            return bad("retrieval budget must be >= 1");
        }
        if self.max_concurrency == 0 {
            return bad("max_concurrency must be >= 1");
        }
        if self.selection.num_samples == 0 {
            return bad("selection.num_samples must be >= 1");
        }
        if self.context_limit == Some(0) {
            return bad("context_limit must be >= 1");
        }
        if !self.ablations.no_reranker {
            self.rerank.validate()?;
            if self.gate_n < self.rerank.k {
                return Err(PipelineError::InvalidConfig(format!(
                    "gate_n ({}) must be >= k ({})",
                    self.gate_n, self.rerank.k
                )));
            }
        }
        self.retrieval.bm25.validate()?;
        Ok(())
    }

    /// Selection settings after ablation flags are applied.
    pub fn effective_selection(&self) -> SelectionConfig {
        let mut s = self.selection.clone();
        if self.ablations.no_self_consistency {
            s.num_samples = 1;
        }
        if self.ablations.no_reasoning {
            s.reasoning_enabled = false;
        }
        s
    }
}

/// One line of the mention task file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionTaskRecord {
    pub id: String,
    pub text: String,
    pub mention_start: usize,
    pub mention_end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MentionTask {
    pub id: String,
    pub context: MarkedContext,
    /// `Some(UNK_GOLD)` marks a mention whose answer is None.
    pub gold_id: Option<String>,
    pub candidates: Option<Vec<String>>,
    pub domain: Option<String>,
}

impl MentionTask {
    pub fn new(id: impl Into<String>, context: MarkedContext) -> Self {
        Self {
            id: id.into(),
            context,
            gold_id: None,
            candidates: None,
            domain: None,
        }
    }

    pub fn with_gold(mut self, gold: impl Into<String>) -> Self {
        self.gold_id = Some(gold.into());
        self
    }

    pub fn with_candidates<S: Into<String>>(mut self, ids: impl IntoIterator<Item = S>) -> Self {
        self.candidates = Some(ids.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        self.domain = Some(domain.into());
        self
    }

    pub fn is_unk(&self) -> bool {
        self.gold_id.as_deref() == Some(UNK_GOLD)
    }

    /// Whether `result` matches the gold; None matches an UNK gold.
    pub fn is_correct(&self, result: &LinkResult) -> bool {
        match (self.gold_id.as_deref(), result) {
            (Some(UNK_GOLD), LinkResult::None) => true,
            (Some(g), LinkResult::Entity(id)) => g != UNK_GOLD && g == id,
            _ => false,
        }
    }

    pub fn to_record(&self) -> MentionTaskRecord {
        MentionTaskRecord {
            id: self.id.clone(),
            text: self.context.text().to_string(),
            mention_start: self.context.mention_start(),
            mention_end: self.context.mention_end(),
            gold_id: self.gold_id.clone(),
            candidates: self.candidates.clone(),
            domain: self.domain.clone(),
        }
    }
}

impl TryFrom<MentionTaskRecord> for MentionTask {
    type Error = PipelineError;

    fn try_from(r: MentionTaskRecord) -> Result<Self, Self::Error> {
        let context = mark_mention(&r.text, r.mention_start, r.mention_end)
            .map_err(|source| PipelineError::BadMention { task: r.id.clone(), source })?;
        Ok(Self {
            id: r.id,
            context,
            gold_id: r.gold_id,
            candidates: r.candidates,
            domain: r.domain,
        })
    }
}

/// Reads a JSONL task file; blank lines are skipped, ids must be unique.
pub fn load_tasks<R: BufRead>(reader: R) -> Result<Vec<MentionTask>, PipelineError> {
    let mut tasks = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| PipelineError::MalformedTask { line_no, reason };
        let record: MentionTaskRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if !seen.insert(record.id.clone()) {
            return Err(malformed(format!("duplicate task id `{}`", record.id)));
        }
        let task = MentionTask::try_from(record).map_err(|e| malformed(e.to_string()))?;
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn load_tasks_file(path: &Path) -> Result<Vec<MentionTask>, PipelineError> {
    load_tasks(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn write_tasks<W: Write>(mut w: W, tasks: &[MentionTask]) -> Result<(), PipelineError> {
    for t in tasks {
        serde_json::to_writer(&mut w, &t.to_record())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Precomputed candidates must resolve in the KB.
pub fn validate_tasks(tasks: &[MentionTask], kb: &KnowledgeBase) -> Result<(), PipelineError> {
    for t in tasks {
        if let Some(missing) = t.candidates.iter().flatten().find(|id| !kb.contains(id)) {
            return Err(PipelineError::UnknownCandidate {
                task: t.id.clone(),
                entity: missing.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunnelStage {
    LostAtRetrieval,
    LostAtRerank,
    LostAtSelection,
    Correct,
    /// No gold available.
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelRecord {
    pub mention_id: String,
    pub gold_in_retrieved: bool,
    pub gold_in_topk: bool,
    pub selected_correct: bool,
    /// 1-based rank of the gold in the retrieved pool. UNK golds have none.
    pub gold_retrieval_rank: Option<usize>,
    pub unk: bool,
    pub stage: FunnelStage,
}

impl FunnelRecord {
    /// An UNK gold is never filtered by retrieval or reranking, so it counts as
    /// retained through both stages.
    pub fn new(mention_id: &str, task: &MentionTask, retrieved: &CandidateSet, topk: &CandidateSet, result: &LinkResult) -> Self {
        let Some(gold) = task.gold_id.as_deref() else {
            return Self {
                mention_id: mention_id.to_string(),
                gold_in_retrieved: false,
                gold_in_topk: false,
                selected_correct: false,
                gold_retrieval_rank: None,
                unk: false,
                stage: FunnelStage::Unlabeled,
            };
        };
        let unk = gold == UNK_GOLD;
        let rank = (!unk).then(|| retrieved.position(gold).map(|p| p + 1)).flatten();
        let gold_in_retrieved = unk || rank.is_some();
        let gold_in_topk = gold_in_retrieved && (unk || topk.contains(gold));
        let selected_correct = gold_in_topk && task.is_correct(result);
        Self::from_flags(mention_id, gold_in_retrieved, gold_in_topk, selected_correct, rank, unk)
    }

    pub fn from_flags(
        mention_id: &str,
        gold_in_retrieved: bool,
        gold_in_topk: bool,
        selected_correct: bool,
        gold_retrieval_rank: Option<usize>,
        unk: bool,
    ) -> Self {
        let stage = if !gold_in_retrieved {
            FunnelStage::LostAtRetrieval
        } else if !gold_in_topk {
            FunnelStage::LostAtRerank
        } else if !selected_correct {
            FunnelStage::LostAtSelection
        } else {
            FunnelStage::Correct
        };
        Self {
            mention_id: mention_id.to_string(),
            gold_in_retrieved,
            gold_in_topk: gold_in_retrieved && gold_in_topk,
            selected_correct: gold_in_retrieved && gold_in_topk && selected_correct,
            gold_retrieval_rank,
            unk,
            stage,
        }
    }

    pub fn labeled(&self) -> bool {
        self.stage != FunnelStage::Unlabeled
    }

    /// Gold lies in the first `gate_n` retrieved entries (always true for UNK).
    pub fn gated(&self, gate_n: usize) -> bool {
        self.labeled() && (self.unk || self.gold_retrieval_rank.is_some_and(|r| r <= gate_n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FunnelSummary {
    pub total: usize,
    pub retained_after_retrieval: usize,
    pub retained_after_rerank: usize,
    pub correct_after_selection: usize,
    pub lost_at_retrieval: usize,
    pub lost_at_rerank: usize,
    pub lost_at_selection: usize,
}

impl FunnelSummary {
    pub fn is_conserved(&self) -> bool {
        self.total == self.retained_after_retrieval + self.lost_at_retrieval
            && self.retained_after_retrieval == self.retained_after_rerank + self.lost_at_rerank
            && self.retained_after_rerank == self.correct_after_selection + self.lost_at_selection
    }
}

/// Stage counts over labeled records.
pub fn funnel_summary(records: &[FunnelRecord]) -> FunnelSummary {
    let mut s = FunnelSummary::default();
    for r in records {
        match r.stage {
            FunnelStage::Unlabeled => continue,
            FunnelStage::LostAtRetrieval => s.lost_at_retrieval += 1,
            FunnelStage::LostAtRerank => s.lost_at_rerank += 1,
            FunnelStage::LostAtSelection => s.lost_at_selection += 1,
            FunnelStage::Correct => s.correct_after_selection += 1,
        }
        s.total += 1;
    }
    s.retained_after_rerank = s.correct_after_selection + s.lost_at_selection;
    s.retained_after_retrieval = s.retained_after_rerank + s.lost_at_rerank;
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub mention_id: String,
    pub provenance: Provenance,
    pub retrieved: Vec<Candidate>,
    /// Candidates forwarded to selection, with rerank scores when reranked.
    pub topk: Vec<Candidate>,
    pub rerank_skipped: bool,
    pub rerank_failed: Vec<String>,
    pub context_truncated: bool,
    pub prompt_tokens: u32,
    pub generated_tokens: Vec<u32>,
    pub retrieval_ms: f64,
    pub rerank_ms: f64,
    pub selection_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkOutput {
    pub decision: LinkingDecision,
    pub funnel: FunnelRecord,
    pub trace: StageTrace,
}

/// Indices available to the retriever.
#[derive(Debug, Default)]
pub struct Indices {
    pub bm25: Option<Bm25Index>,
    pub dense: Option<DenseIndex>,
    pub dictionary: Option<AliasDictionary>,
}

impl Indices {
    pub fn bm25(index: Bm25Index) -> Self {
        Self {
            bm25: Some(index),
            ..Self::default()
        }
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Keeps at most `limit` characters centered on the mention.
pub fn truncate_context(ctx: &MarkedContext, limit: usize) -> (MarkedContext, bool) {
    let len = ctx.text().chars().count();
    let (l, r) = centered_window(len, ctx.mention_start(), ctx.mention_end(), limit);
    if (l, r) == (0, len) {
        return (ctx.clone(), false);
    }
    let text: String = ctx.text().chars().skip(l).take(r - l).collect();
    let start = ctx.mention_start() - l;
    let end = ctx.mention_end().min(r) - l;
    let truncated = mark_mention(&text, start, end).expect("window contains the mention start");
    (truncated, true)
}

/// Shared, read-only resources for linking.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub cfg: &'a PipelineConfig,
    pub kb: &'a KnowledgeBase,
    pub indices: &'a Indices,
    pub gateway: &'a Gateway,
    pub cache: Option<&'a ScoreCache>,
}

impl<'a> Pipeline<'a> {
    pub fn new(cfg: &'a PipelineConfig, kb: &'a KnowledgeBase, indices: &'a Indices, gateway: &'a Gateway) -> Self {
        Self {
            cfg,
            kb,
            indices,
            gateway,
            cache: None,
        }
    }

    pub fn with_cache(mut self, cache: &'a ScoreCache) -> Self {
        self.cache = Some(cache);
        self
    }

    fn retrieve(&self, task: &MentionTask, ctx: &MarkedContext) -> Result<CandidateSet, PipelineError> {
        let rc = &self.cfg.retrieval;
        if let Some(ids) = &task.candidates {
            if let Some(missing) = ids.iter().find(|id| !self.kb.contains(id)) {
                return Err(PipelineError::UnknownCandidate {
                    task: task.id.clone(),
                    entity: missing.clone(),
                });
            }
            let mut set = CandidateSet::from_ranked_ids(&task.id, Provenance::Precomputed, ids.iter().cloned());
            set.candidates.truncate(rc.budget);
            return Ok(set);
        }
        let bm25 = || -> Result<CandidateSet, PipelineError> {
            let index = self.indices.bm25.as_ref().ok_or(PipelineError::MissingIndex(rc.retriever))?;
            Ok(index.search(&task.id, &bm25_query(ctx, &rc.query), rc.budget))
        };
        let dense = || -> Result<CandidateSet, PipelineError> {
            let index = self.indices.dense.as_ref().ok_or(PipelineError::MissingIndex(rc.retriever))?;
            let q = self.gateway.embed(&[dense_query(ctx, &rc.query)])?;
            Ok(index.search(&task.id, &q[0], rc.budget)?)
        };
        match rc.retriever {
            RetrieverKind::Bm25 => bm25(),
            RetrieverKind::Dense => dense(),
            RetrieverKind::Dictionary => {
                let dict = self.indices.dictionary.as_ref().ok_or(PipelineError::MissingIndex(rc.retriever))?;
                Ok(dictionary_search(dict, &task.id, &ctx.surface(), rc.budget))
            }
            RetrieverKind::Hybrid => Ok(merge_candidates(&[bm25()?, dense()?], rc.budget)?),
        }
    }

    /// Links one mention.
    pub fn link(&self, task: &MentionTask) -> Result<LinkOutput, PipelineError> {
        let t0 = Instant::now();
        let (ctx, context_truncated) = match self.cfg.context_limit {
            Some(limit) => truncate_context(&task.context, limit),
            None => (task.context.clone(), false),
        };
        let sel = self.cfg.effective_selection();

        let retrieved = self.retrieve(task, &ctx)?;
        let retrieval_ms = ms(t0.elapsed());

        let t1 = Instant::now();
        let (topk, rerank_failed) = if retrieved.is_empty() {
            (retrieved.clone(), Vec::new())
        } else if self.cfg.ablations.no_reranker {
            let mut ordered = retrieved.clone();
            ordered.candidates.sort_by_key(|c| c.retrieval_rank);
            (top_k(&ordered, ordered.len()), Vec::new())
        } else {
            let out = rerank(&ctx, &retrieved, self.kb, &self.cfg.rerank, self.gateway, self.cache)?;
            (top_k(&out.candidates, self.cfg.rerank.k), out.failed)
        };
        let rerank_ms = ms(t1.elapsed());

        let t2 = Instant::now();
        let mut decision = if topk.is_empty() {
            LinkingDecision::empty(&task.id, sel.include_none)
        } else if self.cfg.ablations.no_selection {
            LinkingDecision::passthrough(&task.id, &topk, sel.include_none)
        } else {
            let opts = PromptOptions {
                no_descriptions: self.cfg.ablations.no_descriptions,
                max_description_chars: sel.max_description_chars,
            };
            select(&ctx, &topk, self.kb, &sel, self.gateway, task.gold_id.as_deref(), opts)?
        };
        decision.mention_id = task.id.clone();
        let selection_ms = ms(t2.elapsed());

        let funnel = FunnelRecord::new(&task.id, task, &retrieved, &topk, &decision.result);
        let trace = StageTrace {
            mention_id: task.id.clone(),
            provenance: retrieved.provenance,
            retrieved: retrieved.candidates,
            topk: topk.candidates,
            rerank_skipped: self.cfg.ablations.no_reranker,
            rerank_failed,
            context_truncated,
            prompt_tokens: decision.prompt_tokens,
            generated_tokens: decision.generated_tokens.clone(),
            retrieval_ms,
            rerank_ms,
            selection_ms,
            total_ms: ms(t0.elapsed()),
        };
        Ok(LinkOutput { decision, funnel, trace })
    }

    /// Links all tasks on a pool of `max_concurrency` threads. Output order
    /// follows input order; a failing task does not stop the batch.
    pub fn link_batch(&self, tasks: &[MentionTask]) -> Result<BatchOutput, PipelineError> {
        self.cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.max_concurrency)
            .build()
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        let results: Vec<Result<LinkOutput, PipelineError>> = pool.install(|| tasks.par_iter().map(|t| self.link(t)).collect());
        let mut out = BatchOutput::default();
        for (task, r) in tasks.iter().zip(results) {
            match r {
                Ok(o) => {
                    out.decisions.push(o.decision);
                    out.funnel.push(o.funnel);
                    out.traces.push(o.trace);
                }
                Err(e) => {
                    tracing::warn!(task = %task.id, error = %e, "task failed");
                    out.failures.push(TaskFailure {
                        mention_id: task.id.clone(),
                        backend: e.is_backend(),
                        error: e.to_string(),
                    });
                }
            }
        }
        out.timing = timing_summary(&out.decisions, &out.traces);
        Ok(out)
    }
}

/// Convenience wrapper around [`Pipeline::link`].
pub fn link(
    task: &MentionTask,
    cfg: &PipelineConfig,
    kb: &KnowledgeBase,
    indices: &Indices,
    gateway: &Gateway,
) -> Result<LinkOutput, PipelineError> {
    Pipeline::new(cfg, kb, indices, gateway).link(task)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFailure {
    pub mention_id: String,
    pub backend: bool,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingSummary {
    pub mentions: usize,
    pub mean_wall_ms: f64,
    pub total_samples: usize,
    pub total_generated_tokens: u64,
    pub mean_generated_tokens_per_sample: f64,
    pub mean_prompt_tokens: f64,
}

pub fn timing_summary(decisions: &[LinkingDecision], traces: &[StageTrace]) -> TimingSummary {
    let mentions = decisions.len();
    let samples: usize = decisions.iter().map(|d| d.generated_tokens.len()).sum();
    let tokens: u64 = decisions.iter().flat_map(|d| &d.generated_tokens).map(|&t| u64::from(t)).sum();
    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    TimingSummary {
        mentions,
        mean_wall_ms: mean(traces.iter().map(|t| t.total_ms).sum(), traces.len()),
        total_samples: samples,
        total_generated_tokens: tokens,
        mean_generated_tokens_per_sample: mean(tokens as f64, samples),
        mean_prompt_tokens: mean(decisions.iter().map(|d| f64::from(d.prompt_tokens)).sum(), mentions),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchOutput {
    pub decisions: Vec<LinkingDecision>,
    pub funnel: Vec<FunnelRecord>,
    pub traces: Vec<StageTrace>,
    pub failures: Vec<TaskFailure>,
    pub timing: TimingSummary,
}

impl BatchOutput {
    pub fn funnel_summary(&self) -> FunnelSummary {
        funnel_summary(&self.funnel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub overall_accuracy: f64,
    /// Accuracy over mentions whose gold survived to the top-k set.
    pub selection_accuracy: f64,
    /// Fraction of labeled mentions whose gold is in the top-k set.
    pub accuracy_at_k: f64,
}

pub(crate) fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Re-runs the batch for each `k`; rerank scores come from `cache`.
pub fn sweep_k(
    tasks: &[MentionTask],
    cfg: &PipelineConfig,
    kb: &KnowledgeBase,
    indices: &Indices,
    gateway: &Gateway,
    cache: &ScoreCache,
    ks: &[usize],
) -> Result<Vec<KSweepRow>, PipelineError> {
    ks.iter()
        .map(|&k| {
            let mut c = cfg.clone();
            c.rerank.k = k;
            c.gate_n = c.gate_n.max(k);
            let out = Pipeline::new(&c, kb, indices, gateway).with_cache(cache).link_batch(tasks)?;
            let s = out.funnel_summary();
            let labeled = s.total + out.failures.len();
            Ok(KSweepRow {
                k,
                overall_accuracy: ratio(s.correct_after_selection, labeled),
                selection_accuracy: ratio(s.correct_after_selection, s.retained_after_rerank),
                accuracy_at_k: ratio(s.retained_after_rerank, labeled),
            })
        })
        .collect()
}

/// Run-directory file names.
pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const FUNNEL_FILE: &str = "funnel.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const TIMING_FILE: &str = "timing.json";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const SCORE_CACHE_FILE: &str = "score_cache.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelFile {
    pub summary: FunnelSummary,
    pub records: Vec<FunnelRecord>,
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes decisions, traces, funnel, timing and failures into `dir`.
pub fn write_run_dir(dir: &Path, out: &BatchOutput) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)?;
    write_jsonl(&dir.join(DECISIONS_FILE), &out.decisions)?;
    write_jsonl(&dir.join(TRACES_FILE), &out.traces)?;
    write_jsonl(&dir.join(FAILURES_FILE), &out.failures)?;
    write_json(
        &dir.join(FUNNEL_FILE),
        &FunnelFile {
            summary: out.funnel_summary(),
            records: out.funnel.clone(),
        },
    )?;
    write_json(&dir.join(TIMING_FILE), &out.timing)?;
    Ok(())
}

pub fn read_decisions(path: &Path) -> Result<Vec<LinkingDecision>, PipelineError> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn score_cache_path(dir: &Path) -> PathBuf {
    dir.join(SCORE_CACHE_FILE)
}
