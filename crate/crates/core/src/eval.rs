//! Metrics over completed runs: accuracy variants, UNK splits, domain
//! aggregation, mention categories, confidence intervals, ablation drivers
//! and report output.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::Gateway;
use crate::kb::KnowledgeBase;
use crate::pipeline::{
    funnel_summary, ratio, FunnelRecord, FunnelSummary, Indices, MentionTask, Pipeline, PipelineConfig, PipelineError,
    BatchOutput, UNK_GOLD,
};
use crate::rerank::ScoreCache;
use crate::select::{vote_diagnostics, LinkResult, LinkingDecision, Ordering, SelectError, Vote, VoteDiagnostics};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no labeled mentions to evaluate")]
    EmptySet,
    #[error("no mentions pass the gate")]
    EmptyGatedSet,
    #[error("no domains to aggregate")]
    NoDomains,
    #[error("requested k_sc = {requested} but only {stored} samples are stored for `{mention}`")]
    RequestedExceedsStored {
        mention: String,
        requested: usize,
        stored: usize,
    },
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

fn decisions_by_id(decisions: &[LinkingDecision]) -> HashMap<&str, &LinkingDecision> {
    decisions.iter().map(|d| (d.mention_id.as_str(), d)).collect()
}

fn labeled(tasks: &[MentionTask]) -> impl Iterator<Item = &MentionTask> {
    tasks.iter().filter(|t| t.gold_id.is_some())
}

/// Correctness per labeled task, keyed by id. A missing decision is wrong.
fn correctness<'a>(tasks: &'a [MentionTask], decisions: &[LinkingDecision]) -> Vec<(&'a MentionTask, bool)> {
    let by_id = decisions_by_id(decisions);
    labeled(tasks)
        .map(|t| (t, by_id.get(t.id.as_str()).is_some_and(|d| t.is_correct(&d.result))))
        .collect()
}

fn frac(items: impl Iterator<Item = bool>) -> Option<f64> {
    let (mut hit, mut n) = (0usize, 0usize);
    for ok in items {
        n += 1;
        hit += usize::from(ok);
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

/// Fraction of labeled tasks whose decision matches the gold.
pub fn accuracy(decisions: &[LinkingDecision], tasks: &[MentionTask]) -> Result<f64, EvalError> {
    frac(correctness(tasks, decisions).into_iter().map(|(_, ok)| ok)).ok_or(EvalError::EmptySet)
}

/// Retrieved pool per mention id.
pub type CandidatePools = HashMap<String, Vec<String>>;

/// Accuracy over mentions whose gold is within the first `gate_n` pool
/// entries. UNK golds always pass the gate.
pub fn normalized_accuracy(
    decisions: &[LinkingDecision],
    tasks: &[MentionTask],
    pools: &CandidatePools,
    gate_n: usize,
) -> Result<f64, EvalError> {
    let gated = |t: &MentionTask| {
        t.is_unk()
            || pools
                .get(&t.id)
                .zip(t.gold_id.as_deref())
                .is_some_and(|(pool, g)| pool.iter().take(gate_n).any(|c| c == g))
    };
    frac(correctness(tasks, decisions).into_iter().filter(|(t, _)| gated(t)).map(|(_, ok)| ok))
        .ok_or(EvalError::EmptyGatedSet)
}

/// `(unk_accuracy, non_unk_accuracy)`; a side with no mentions is `None`.
pub fn unk_split_accuracy(decisions: &[LinkingDecision], tasks: &[MentionTask]) -> (Option<f64>, Option<f64>) {
    let scored = correctness(tasks, decisions);
    let unk = frac(scored.iter().filter(|(t, _)| t.is_unk()).map(|(_, ok)| *ok));
    let known = frac(scored.iter().filter(|(t, _)| !t.is_unk()).map(|(_, ok)| *ok));
    (unk, known)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MentionCategory {
    /// Name identical to the mention.
    HO,
    /// Name is the mention plus a parenthesized qualifier.
    MC,
    /// Mention is a substring of the name.
    AS,
    LO,
}

impl fmt::Display for MentionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Rules apply in order HO, MC, AS, LO on whitespace-normalized,
/// case-sensitive strings.
pub fn categorize_mention(surface: &str, gold_name: &str) -> MentionCategory {
    let (s, n) = (squash(surface), squash(gold_name));
    if n == s {
        return MentionCategory::HO;
    }
    let qualified = n
        .strip_prefix(&s)
        .and_then(|rest| rest.strip_prefix(" ("))
        .and_then(|rest| rest.strip_suffix(')'))
        .is_some_and(|inner| !inner.trim().is_empty());
    if qualified {
        MentionCategory::MC
    } else if n.contains(&s) {
        MentionCategory::AS
    } else {
        MentionCategory::LO
    }
}

/// 95% Wald half-width, `1.96 * sqrt(p (1 - p) / n)`.
pub fn wald_ci(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    1.96 * (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainResult {
    pub domain: String,
    pub correct: usize,
    pub total: usize,
}

impl DomainResult {
    pub fn accuracy(&self) -> f64 {
        ratio(self.correct, self.total)
    }
}

/// `(macro, micro)`: unweighted mean of domain accuracies, pooled ratio.
pub fn aggregate(domains: &[DomainResult]) -> Result<(f64, f64), EvalError> {
    let counted: Vec<_> = domains.iter().filter(|d| d.total > 0).collect();
    if counted.is_empty() {
        return Err(EvalError::NoDomains);
    }
    let macro_avg = counted.iter().map(|d| d.accuracy()).sum::<f64>() / counted.len() as f64;
    let correct: usize = counted.iter().map(|d| d.correct).sum();
    let total: usize = counted.iter().map(|d| d.total).sum();
    Ok((macro_avg, ratio(correct, total)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRow {
    pub domain: String,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub gated: usize,
    pub gated_correct: usize,
    pub normalized_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: MentionCategory,
    pub gated: usize,
    pub gated_correct: usize,
    /// Pooled normalized accuracy.
    pub normalized_accuracy: Option<f64>,
    /// Normalized accuracy averaged over domains with this category.
    pub macro_normalized_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfidenceIntervals {
    pub overall: Option<f64>,
    pub normalized: Option<f64>,
    pub unk: Option<f64>,
    pub non_unk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub overall_accuracy: f64,
    pub gate_n: usize,
    pub gated: usize,
    pub normalized_accuracy: Option<f64>,
    pub unk_count: usize,
    pub unk_accuracy: Option<f64>,
    pub non_unk_count: usize,
    pub non_unk_accuracy: Option<f64>,
    pub ci95: ConfidenceIntervals,
    pub domains: Vec<DomainRow>,
    pub macro_accuracy: Option<f64>,
    pub micro_accuracy: Option<f64>,
    pub macro_normalized_accuracy: Option<f64>,
    pub micro_normalized_accuracy: Option<f64>,
    pub categories: Vec<CategoryRow>,
    pub funnel: FunnelSummary,
    pub failed: usize,
    pub diagnostics: VoteDiagnostics,
    pub config_hash: String,
}

/// SHA-256 of the config's JSON form.
pub fn config_hash(cfg: &PipelineConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

const NO_DOMAIN: &str = "default";

struct Scored<'a> {
    task: &'a MentionTask,
    correct: bool,
    gated: bool,
    category: Option<MentionCategory>,
}

/// Builds the full report for a batch run over `tasks`.
pub fn build_report(
    tasks: &[MentionTask],
    out: &BatchOutput,
    kb: &KnowledgeBase,
    cfg: &PipelineConfig,
) -> Result<EvalReport, EvalError> {
    let funnel: HashMap<&str, &FunnelRecord> = out.funnel.iter().map(|r| (r.mention_id.as_str(), r)).collect();
    let scored: Vec<Scored> = correctness(tasks, &out.decisions)
        .into_iter()
        .map(|(task, correct)| {
            let category = task
                .gold_id
                .as_deref()
                .filter(|g| *g != UNK_GOLD)
                .and_then(|g| kb.get(g))
                .map(|e| categorize_mention(&task.context.surface(), &e.name));
            Scored {
                task,
                correct,
                gated: funnel.get(task.id.as_str()).is_some_and(|r| r.gated(cfg.gate_n)),
                category,
            }
        })
        .collect();
    if scored.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let count = |f: &dyn Fn(&Scored) -> bool| scored.iter().filter(|s| f(s)).count();
    let total = scored.len();
    let correct = count(&|s| s.correct);
    let gated = count(&|s| s.gated);
    let gated_correct = count(&|s| s.gated && s.correct);
    let unk_count = count(&|s| s.task.is_unk());
    let unk_correct = count(&|s| s.task.is_unk() && s.correct);
    let non_unk_count = total - unk_count;
    let non_unk_correct = correct - unk_correct;

    let opt_ratio = |c: usize, n: usize| (n > 0).then(|| ratio(c, n));
    let ci = |c: usize, n: usize| opt_ratio(c, n).map(|p| wald_ci(p, n));

    let mut by_domain: BTreeMap<&str, Vec<&Scored>> = BTreeMap::new();
    for s in &scored {
        by_domain.entry(s.task.domain.as_deref().unwrap_or(NO_DOMAIN)).or_default().push(s);
    }
    let domains: Vec<DomainRow> = by_domain
        .iter()
        .map(|(name, rows)| {
            let c = rows.iter().filter(|s| s.correct).count();
            let g = rows.iter().filter(|s| s.gated).count();
            let gc = rows.iter().filter(|s| s.gated && s.correct).count();
            DomainRow {
                domain: name.to_string(),
                total: rows.len(),
                correct: c,
                accuracy: ratio(c, rows.len()),
                gated: g,
                gated_correct: gc,
                normalized_accuracy: opt_ratio(gc, g),
            }
        })
        .collect();
    let plain: Vec<DomainResult> = domains
        .iter()
        .map(|d| DomainResult { domain: d.domain.clone(), correct: d.correct, total: d.total })
        .collect();
    let normalized: Vec<DomainResult> = domains
        .iter()
        .map(|d| DomainResult { domain: d.domain.clone(), correct: d.gated_correct, total: d.gated })
        .collect();
    let (macro_accuracy, micro_accuracy) = aggregate(&plain).ok().unzip();
    let (macro_normalized_accuracy, micro_normalized_accuracy) = aggregate(&normalized).ok().unzip();

    let categories = [MentionCategory::HO, MentionCategory::MC, MentionCategory::AS, MentionCategory::LO]
        .into_iter()
        .map(|cat| {
            let in_cat = |s: &&&Scored| s.gated && s.category == Some(cat);
            let g = scored.iter().filter(|s| s.gated && s.category == Some(cat)).count();
            let gc = scored.iter().filter(|s| s.gated && s.correct && s.category == Some(cat)).count();
            let per_domain: Vec<DomainResult> = by_domain
                .iter()
                .map(|(name, rows)| DomainResult {
                    domain: name.to_string(),
                    correct: rows.iter().filter(in_cat).filter(|s| s.correct).count(),
                    total: rows.iter().filter(in_cat).count(),
                })
                .collect();
            CategoryRow {
                category: cat,
                gated: g,
                gated_correct: gc,
                normalized_accuracy: opt_ratio(gc, g),
                macro_normalized_accuracy: aggregate(&per_domain).ok().map(|(m, _)| m),
            }
        })
        .collect();

    Ok(EvalReport {
        total,
        correct,
        overall_accuracy: ratio(correct, total),
        gate_n: cfg.gate_n,
        gated,
        normalized_accuracy: opt_ratio(gated_correct, gated),
        unk_count,
        unk_accuracy: opt_ratio(unk_correct, unk_count),
        non_unk_count,
        non_unk_accuracy: opt_ratio(non_unk_correct, non_unk_count),
        ci95: ConfidenceIntervals {
            overall: ci(correct, total),
            normalized: ci(gated_correct, gated),
            unk: ci(unk_correct, unk_count),
            non_unk: ci(non_unk_correct, non_unk_count),
        },
        domains,
        macro_accuracy,
        micro_accuracy,
        macro_normalized_accuracy,
        micro_normalized_accuracy,
        categories,
        funnel: funnel_summary(&out.funnel),
        failed: out.failures.len(),
        diagnostics: vote_diagnostics(&out.decisions),
        config_hash: config_hash(cfg),
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x))
}

fn pct_ci(v: Option<f64>, ci: Option<f64>) -> String {
    match (v, ci) {
        (Some(v), Some(c)) => format!("{:.2} ± {:.2}", 100.0 * v, 100.0 * c),
        _ => pct(v),
    }
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String, EvalError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Aligned-column text rendering; percentages with two decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let rows = [
            ("overall", format!("{}/{}", self.correct, self.total), pct_ci(Some(self.overall_accuracy), self.ci95.overall)),
            (
                "normalized",
                format!("{}@{}", self.gated, self.gate_n),
                pct_ci(self.normalized_accuracy, self.ci95.normalized),
            ),
            ("unk", self.unk_count.to_string(), pct_ci(self.unk_accuracy, self.ci95.unk)),
            ("non_unk", self.non_unk_count.to_string(), pct_ci(self.non_unk_accuracy, self.ci95.non_unk)),
            ("macro", String::new(), pct(self.macro_accuracy)),
            ("micro", String::new(), pct(self.micro_accuracy)),
            ("macro_normalized", String::new(), pct(self.macro_normalized_accuracy)),
            ("micro_normalized", String::new(), pct(self.micro_normalized_accuracy)),
        ];
        let _ = writeln!(out, "{:<18} {:>10} {:>16}", "metric", "n", "accuracy");
        for (name, n, v) in rows {
            let _ = writeln!(out, "{name:<18} {n:>10} {v:>16}");
        }
        let _ = writeln!(out, "\n{:<18} {:>8} {:>8} {:>10} {:>10}", "domain", "total", "gated", "acc", "norm_acc");
        for d in &self.domains {
            let _ = writeln!(
                out,
                "{:<18} {:>8} {:>8} {:>10} {:>10}",
                d.domain,
                d.total,
                d.gated,
                pct(Some(d.accuracy)),
                pct(d.normalized_accuracy)
            );
        }
        let _ = writeln!(out, "\n{:<18} {:>8} {:>10} {:>10}", "category", "gated", "norm_acc", "macro");
        for c in &self.categories {
            let _ = writeln!(
                out,
                "{:<18} {:>8} {:>10} {:>10}",
                c.category.to_string(),
                c.gated,
                pct(c.normalized_accuracy),
                pct(c.macro_normalized_accuracy)
            );
        }
        let f = &self.funnel;
        let _ = writeln!(
            out,
            "\nfunnel: total {} | retrieved {} (lost {}) | top-k {} (lost {}) | correct {} (lost {})",
            f.total,
            f.retained_after_retrieval,
            f.lost_at_retrieval,
            f.retained_after_rerank,
            f.lost_at_rerank,
            f.correct_after_selection,
            f.lost_at_selection
        );
        let _ = writeln!(
            out,
            "invalid rate {:.4} over {} samples; failed tasks {}",
            self.diagnostics.invalid_rate, self.diagnostics.total_samples, self.failed
        );
        let _ = writeln!(out, "config {}", self.config_hash);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingRow {
    pub ordering: Ordering,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Mentions whose gold reached the top-k set.
    pub gated: usize,
    pub selection_accuracy: Option<f64>,
}

/// Runs selection once per ordering over the same top-k sets (reranking is
/// served from `cache` after the first pass).
#[allow(clippy::too_many_arguments)]
pub fn ordering_ablation(
    tasks: &[MentionTask],
    cfg: &PipelineConfig,
    kb: &KnowledgeBase,
    indices: &Indices,
    gateway: &Gateway,
    cache: &ScoreCache,
    orderings: &[Ordering],
) -> Result<Vec<OrderingRow>, EvalError> {
    orderings
        .iter()
        .map(|&ordering| {
            if ordering.needs_gold() && tasks.iter().any(|t| t.gold_id.is_none()) {
                return Err(SelectError::OrderingNeedsGold(ordering).into());
            }
            let mut c = cfg.clone();
            c.selection.ordering = ordering;
            let out = Pipeline::new(&c, kb, indices, gateway).with_cache(cache).link_batch(tasks)?;
            let s = funnel_summary(&out.funnel);
            let total = labeled(tasks).count();
            Ok(OrderingRow {
                ordering,
                total,
                correct: s.correct_after_selection,
                accuracy: ratio(s.correct_after_selection, total),
                gated: s.retained_after_rerank,
                selection_accuracy: (s.retained_after_rerank > 0)
                    .then(|| ratio(s.correct_after_selection, s.retained_after_rerank)),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScRow {
    pub k_sc: usize,
    pub evaluated: usize,
    pub selection_accuracy: Option<f64>,
    pub invalid_rate: f64,
}

/// Re-votes each decision on its first `k_sc` stored samples. Only
/// decisions that went through selection with the gold on offer count.
pub fn sweep_self_consistency(
    decisions: &[LinkingDecision],
    tasks: &[MentionTask],
    k_values: &[usize],
) -> Result<Vec<ScRow>, EvalError> {
    let by_id: HashMap<&str, &MentionTask> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let eligible: Vec<(&LinkingDecision, &MentionTask)> = decisions
        .iter()
        .filter(|d| !d.votes.is_empty())
        .filter_map(|d| by_id.get(d.mention_id.as_str()).map(|t| (d, *t)))
        .filter(|(d, t)| match t.gold_id.as_deref() {
            Some(UNK_GOLD) => d.include_none,
            Some(g) => d.presented.iter().any(|p| p == g),
            None => false,
        })
        .collect();
    k_values
        .iter()
        .map(|&k| {
            let mut correct = 0usize;
            let mut invalid = 0usize;
            for (d, t) in &eligible {
                let outcome = d.revote_prefix(k).ok_or_else(|| EvalError::RequestedExceedsStored {
                    mention: d.mention_id.clone(),
                    requested: k,
                    stored: d.votes.len(),
                })?;
                correct += usize::from(t.is_correct(&outcome.result));
                invalid += d.votes[..k].iter().filter(|v| **v == Vote::Invalid).count();
            }
            Ok(ScRow {
                k_sc: k,
                evaluated: eligible.len(),
                selection_accuracy: (!eligible.is_empty()).then(|| ratio(correct, eligible.len())),
                invalid_rate: ratio(invalid, k * eligible.len()),
            })
        })
        .collect()
}

/// Writes rows as CSV with a header line.
pub fn write_csv<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<(), EvalError> {
    let mut writer = csv::Writer::from_writer(w);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Entity id, or `NONE`.
pub fn describe_result(result: &LinkResult) -> &str {
    result.entity_id().unwrap_or("NONE")
}
