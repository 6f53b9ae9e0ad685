//! Candidate selection: prompt construction over the top-k set, answer
//! parsing and self-consistency majority voting.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::kb::{verbalize, KnowledgeBase, MarkedContext};
use crate::retrieval::CandidateSet;

/// System instruction for the selection LLM.
pub const SELECTION_PROMPT: &str = "You are an expert designed to disambiguate entities in text, taking into account the overall context and a list of entity candidates. You are provided with an input text that includes a full contextual narrative, a marked mention enclosed in square brackets, and a list of candidates, each preceded by an index number.\n\nYour task is to determine the most appropriate entity from the candidates based on the context and candidate entity descriptions. Please show your choice with only the index, e.g., \"answer: 3\".";

pub const NONE_LINE: &str = "0. None of the candidates";

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("ordering `{0}` needs the gold entity")]
    OrderingNeedsGold(Ordering),
    #[error("no candidates to select from")]
    EmptyCandidates,
    #[error("candidate `{0}` is not in the knowledge base")]
    UnknownEntity(String),
    #[error("invalid answer pattern `{0}`: {1}")]
    BadPattern(String, regex::Error),
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
    #[error("gateway error: {0}")]
    Gateway(#[from] GatewayError),
}

/// Order of candidates (or of the None line) in the selection prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Ordering {
    #[default]
    Reranker,
    Bm25,
    Random(u64),
    /// Gold moved to the first position (evaluation only).
    AnswerFirst,
    /// Gold moved to the last position (evaluation only).
    AnswerLast,
    NoneFirst,
    NoneLast,
    NoneRandom(u64),
}

impl Ordering {
    pub fn needs_gold(self) -> bool {
        matches!(self, Ordering::AnswerFirst | Ordering::AnswerLast)
    }
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ordering::Reranker => f.write_str("reranker"),
            Ordering::Bm25 => f.write_str("bm25"),
            Ordering::Random(s) => write!(f, "random:{s}"),
            Ordering::AnswerFirst => f.write_str("answer_first"),
            Ordering::AnswerLast => f.write_str("answer_last"),
            Ordering::NoneFirst => f.write_str("none_first"),
            Ordering::NoneLast => f.write_str("none_last"),
            Ordering::NoneRandom(s) => write!(f, "none_random:{s}"),
        }
    }
}

impl FromStr for Ordering {
    type Err = String;

    /// Accepts `random`, `random:7` and `random(7)`; an omitted seed is 0.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, seed) = match s.find([':', '(']) {
            Some(i) => (&s[..i], Some(s[i + 1..].trim_end_matches(')'))),
            None => (s, None),
        };
        let seed = seed
            .map(|v| v.trim().parse::<u64>().map_err(|e| format!("bad seed in `{s}`: {e}")))
            .transpose()?
            .unwrap_or(0);
        Ok(match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "reranker" => Ordering::Reranker,
            "bm25" | "retrieval" => Ordering::Bm25,
            "random" => Ordering::Random(seed),
            "answer_first" => Ordering::AnswerFirst,
            "answer_last" => Ordering::AnswerLast,
            "none_first" => Ordering::NoneFirst,
            "none_last" => Ordering::NoneLast,
            "none_random" => Ordering::NoneRandom(seed),
            other => return Err(format!("unknown ordering `{other}`")),
        })
    }
}

impl TryFrom<String> for Ordering {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Ordering> for String {
    fn from(o: Ordering) -> Self {
        o.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub num_samples: usize,
    pub include_none: bool,
    pub ordering: Ordering,
    pub temperature: f64,
    pub max_output_tokens: usize,
    pub reasoning_enabled: bool,
    /// Truncate descriptions in the prompt to this many characters.
    pub max_description_chars: Option<usize>,
    /// Extra answer regexes; capture group 1 must hold the index.
    pub answer_patterns: Vec<String>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            num_samples: 10,
            include_none: false,
            ordering: Ordering::Reranker,
            temperature: 0.7,
            max_output_tokens: 4096,
            reasoning_enabled: true,
            max_description_chars: None,
            answer_patterns: Vec::new(),
        }
    }
}

/// One parsed sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Vote {
    None,
    Index(usize),
    Invalid,
}

impl fmt::Display for Vote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Vote::None => f.write_str("NONE"),
            Vote::Index(i) => write!(f, "{i}"),
            Vote::Invalid => f.write_str("INVALID"),
        }
    }
}

impl TryFrom<String> for Vote {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        match s.as_str() {
            "NONE" => Ok(Vote::None),
            "INVALID" => Ok(Vote::Invalid),
            n => n.parse().map(Vote::Index).map_err(|_| format!("bad vote `{s}`")),
        }
    }
}

impl From<Vote> for String {
    fn from(v: Vote) -> Self {
        v.to_string()
    }
}

/// Final outcome of linking a mention: an entity id or the None sentinel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Option<String>", into = "Option<String>")]
pub enum LinkResult {
    Entity(String),
    None,
}

impl LinkResult {
    pub fn entity_id(&self) -> Option<&str> {
        match self {
            LinkResult::Entity(id) => Some(id),
            LinkResult::None => None,
        }
    }
}

impl From<Option<String>> for LinkResult {
    fn from(o: Option<String>) -> Self {
        o.map_or(LinkResult::None, LinkResult::Entity)
    }
}

impl From<LinkResult> for Option<String> {
    fn from(r: LinkResult) -> Self {
        match r {
            LinkResult::Entity(id) => Some(id),
            LinkResult::None => None,
        }
    }
}

/// Rendering switches set by the pipeline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PromptOptions {
    pub no_descriptions: bool,
    pub max_description_chars: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPrompt {
    pub system_text: String,
    pub user_text: String,
    /// Entity id shown at index `i` is `presented[i - 1]`.
    pub presented: Vec<String>,
    /// Line position of the None option among the listed lines, if offered.
    pub none_line: Option<usize>,
}

fn salted_rng(seed: u64, ctx: &MarkedContext) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::gateway::stable_seed(seed, &[ctx.rendered()]))
}

/// Candidate display order, as positions into `topk`.
fn display_order(
    ctx: &MarkedContext,
    topk: &CandidateSet,
    ordering: Ordering,
    gold: Option<&str>,
) -> Result<Vec<usize>, SelectError> {
    let mut order: Vec<usize> = (0..topk.len()).collect();
    if ordering.needs_gold() && gold.is_none() {
        return Err(SelectError::OrderingNeedsGold(ordering));
    }
    let gold_pos = gold.and_then(|g| topk.position(g));
    match ordering {
        Ordering::Reranker | Ordering::NoneFirst | Ordering::NoneLast | Ordering::NoneRandom(_) => {}
        Ordering::Bm25 => order.sort_by_key(|&i| topk.candidates[i].retrieval_rank),
        Ordering::Random(seed) => order.shuffle(&mut salted_rng(seed, ctx)),
        Ordering::AnswerFirst => {
            if let Some(g) = gold_pos {
                order.retain(|&i| i != g);
                order.insert(0, g);
            }
        }
        Ordering::AnswerLast => {
            if let Some(g) = gold_pos {
                order.retain(|&i| i != g);
                order.push(g);
            }
        }
    }
    Ok(order)
}

fn truncate_chars(s: &str, max: Option<usize>) -> &str {
    match max {
        Some(m) => s.char_indices().nth(m).map_or(s, |(b, _)| &s[..b]),
        None => s,
    }
}

/// Builds the system and user messages for the selection LLM.
///
/// The user message is the bracketed context, a blank line, then one line
/// per candidate (`i. name: description`, `i` from 1). With `include_none`
/// the line `0. None of the candidates` is added, first unless a None
/// ordering moves it.
pub fn build_selection_prompt(
    ctx: &MarkedContext,
    topk: &CandidateSet,
    kb: &KnowledgeBase,
    include_none: bool,
    ordering: Ordering,
    gold: Option<&str>,
    opts: PromptOptions,
) -> Result<SelectionPrompt, SelectError> {
    if topk.is_empty() {
        return Err(SelectError::EmptyCandidates);
    }
    let order = display_order(ctx, topk, ordering, gold)?;
    let mut lines = Vec::with_capacity(order.len() + 1);
    let mut presented = Vec::with_capacity(order.len());
    for (slot, &i) in order.iter().enumerate() {
        let id = &topk.candidates[i].entity_id;
        let entity = kb.get(id).ok_or_else(|| SelectError::UnknownEntity(id.clone()))?;
        let description = if opts.no_descriptions {
            ""
        } else {
            truncate_chars(&entity.description, opts.max_description_chars)
        };
        lines.push(format!("{}. {}", slot + 1, verbalize(&entity.name, description)));
        presented.push(id.clone());
    }
    let none_line = include_none.then(|| match ordering {
        Ordering::NoneLast => lines.len(),
        Ordering::NoneRandom(seed) => salted_rng(seed, ctx).random_range(0..=lines.len()),
        _ => 0,
    });
    if let Some(pos) = none_line {
        lines.insert(pos, NONE_LINE.to_string());
    }
    Ok(SelectionPrompt {
        system_text: SELECTION_PROMPT.to_string(),
        user_text: format!("{}\n\n{}", ctx.rendered(), lines.join("\n")),
        presented,
        none_line,
    })
}

static DEFAULT_ANSWER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?i)\banswer\b["'*]*\s*[:=]?\s*["'*]*\s*(\d+)"#).expect("valid regex"));

/// Extracts the last `answer: N`-style index from a completion.
#[derive(Debug, Clone, Default)]
pub struct AnswerParser {
    extra: Vec<Regex>,
}

impl AnswerParser {
    pub fn with_patterns(patterns: &[String]) -> Result<Self, SelectError> {
        let extra = patterns
            .iter()
            .map(|p| Regex::new(p).map_err(|e| SelectError::BadPattern(p.clone(), e)))
            .collect::<Result<_, _>>()?;
        Ok(Self { extra })
    }

    /// Only text after the last `</think>` is considered; an unclosed
    /// `<think>` block yields INVALID.
    pub fn parse(&self, completion: &str, max_index: usize, include_none: bool) -> Vote {
        let tail = match completion.rfind("</think>") {
            Some(i) => &completion[i + "</think>".len()..],
            None if completion.contains("<think>") => return Vote::Invalid,
            None => completion,
        };
        let last = std::iter::once(&*DEFAULT_ANSWER)
            .chain(self.extra.iter())
            .filter_map(|re| re.captures_iter(tail).last())
            .filter_map(|c| c.get(1))
            .max_by_key(|m| m.end());
        let Some(m) = last else {
            return Vote::Invalid;
        };
        let rest = &tail[m.end()..];
        let mut after = rest.chars();
        if let (Some('.' | ','), Some(d)) = (after.next(), after.next()) {
            if d.is_ascii_digit() {
                return Vote::Invalid;
            }
        }
        let Ok(n) = m.as_str().parse::<usize>() else {
            return Vote::Invalid;
        };
        match n {
            0 if include_none => Vote::None,
            n if n >= 1 && n <= max_index => Vote::Index(n),
            _ => Vote::Invalid,
        }
    }
}

pub fn parse_answer(completion: &str, max_index: usize, include_none: bool) -> Vote {
    AnswerParser::default().parse(completion, max_index, include_none)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteOutcome {
    pub result: LinkResult,
    pub fallback_used: bool,
}

/// Most frequent valid vote wins; ties go to the lowest presented index
/// (None counts as index 0). All-invalid falls back to `top_ranked`.
pub fn majority_vote(votes: &[Vote], presented: &[String], top_ranked: &str) -> VoteOutcome {
    let mut counts: HashMap<Vote, usize> = HashMap::new();
    for &v in votes.iter().filter(|v| **v != Vote::Invalid) {
        *counts.entry(v).or_default() += 1;
    }
    let rank = |v: &Vote| match v {
        Vote::None => 0,
        Vote::Index(i) => *i,
        Vote::Invalid => usize::MAX,
    };
    let winner = counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| rank(&b.0).cmp(&rank(&a.0))));
    match winner {
        Some((Vote::None, _)) => VoteOutcome {
            result: LinkResult::None,
            fallback_used: false,
        },
        Some((Vote::Index(i), _)) if i >= 1 && i <= presented.len() => VoteOutcome {
            result: LinkResult::Entity(presented[i - 1].clone()),
            fallback_used: false,
        },
        _ => VoteOutcome {
            result: LinkResult::Entity(top_ranked.to_string()),
            fallback_used: true,
        },
    }
}

pub fn tally(votes: &[Vote]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for v in votes {
        *out.entry(v.to_string()).or_default() += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkingDecision {
    pub mention_id: String,
    pub result: LinkResult,
    pub vote_counts: BTreeMap<String, usize>,
    /// Parsed sample answers, in sample order.
    pub votes: Vec<Vote>,
    /// Entity id per presented index (`presented[i - 1]`).
    pub presented: Vec<String>,
    /// Highest reranked candidate; target of the all-invalid fallback.
    pub top_ranked: Option<String>,
    pub include_none: bool,
    pub fallback_used: bool,
    /// Retrieval produced nothing, so the decision is None by default.
    #[serde(default)]
    pub no_candidates: bool,
    /// Selection was skipped and the top reranked candidate returned.
    #[serde(default)]
    pub selection_skipped: bool,
    #[serde(default)]
    pub samples: Vec<String>,
    #[serde(default)]
    pub generated_tokens: Vec<u32>,
    #[serde(default)]
    pub prompt_tokens: u32,
}

impl LinkingDecision {
    /// Decision for a mention without candidates.
    pub fn empty(mention_id: &str, include_none: bool) -> Self {
        Self {
            mention_id: mention_id.to_string(),
            result: LinkResult::None,
            vote_counts: BTreeMap::new(),
            votes: Vec::new(),
            presented: Vec::new(),
            top_ranked: None,
            include_none,
            fallback_used: false,
            no_candidates: true,
            selection_skipped: false,
            samples: Vec::new(),
            generated_tokens: Vec::new(),
            prompt_tokens: 0,
        }
    }

    /// Top-1 passthrough used when selection is disabled.
    pub fn passthrough(mention_id: &str, topk: &CandidateSet, include_none: bool) -> Self {
        let top = topk.candidates.first().map(|c| c.entity_id.clone());
        Self {
            result: top.clone().map_or(LinkResult::None, LinkResult::Entity),
            presented: topk.ids(),
            top_ranked: top,
            no_candidates: topk.is_empty(),
            selection_skipped: true,
            ..Self::empty(mention_id, include_none)
        }
    }

    /// Re-votes on the first `k` samples without further inference.
    pub fn revote_prefix(&self, k: usize) -> Option<VoteOutcome> {
        if k > self.votes.len() {
            return None;
        }
        let top = self.top_ranked.as_deref()?;
        Some(majority_vote(&self.votes[..k], &self.presented, top))
    }
}

/// Runs one sampled selection request over `topk` and votes.
pub fn select(
    ctx: &MarkedContext,
    topk: &CandidateSet,
    kb: &KnowledgeBase,
    cfg: &SelectionConfig,
    gateway: &Gateway,
    gold: Option<&str>,
    opts: PromptOptions,
) -> Result<LinkingDecision, SelectError> {
    if cfg.num_samples == 0 {
        return Err(SelectError::InvalidConfig("num_samples must be >= 1".into()));
    }
    let parser = AnswerParser::with_patterns(&cfg.answer_patterns)?;
    let opts = PromptOptions {
        max_description_chars: opts.max_description_chars.or(cfg.max_description_chars),
        ..opts
    };
    let prompt = build_selection_prompt(ctx, topk, kb, cfg.include_none, cfg.ordering, gold, opts)?;
    let req = ChatRequest {
        system_text: prompt.system_text.clone(),
        user_text: prompt.user_text.clone(),
        temperature: cfg.temperature,
        num_samples: cfg.num_samples,
        max_tokens: cfg.max_output_tokens,
        reasoning_enabled: cfg.reasoning_enabled,
    };
    let resp = gateway.chat_sample(&req)?;
    let votes: Vec<Vote> = resp
        .completions
        .iter()
        .map(|c| parser.parse(c, prompt.presented.len(), cfg.include_none))
        .collect();
    let top = topk.candidates[0].entity_id.clone();
    let outcome = majority_vote(&votes, &prompt.presented, &top);
    Ok(LinkingDecision {
        mention_id: topk.mention_id.clone(),
        result: outcome.result,
        vote_counts: tally(&votes),
        votes,
        presented: prompt.presented,
        top_ranked: Some(top),
        include_none: cfg.include_none,
        fallback_used: outcome.fallback_used,
        no_candidates: false,
        selection_skipped: false,
        samples: resp.completions,
        generated_tokens: resp.generated_tokens,
        prompt_tokens: resp.prompt_tokens,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteDiagnostics {
    /// Number of distinct valid answers per decision -> decision count.
    pub distinct_answers: BTreeMap<usize, usize>,
    pub invalid_rate: f64,
    pub total_samples: usize,
}

pub fn vote_diagnostics(decisions: &[LinkingDecision]) -> VoteDiagnostics {
    let mut distinct_answers = BTreeMap::new();
    let mut invalid = 0usize;
    let mut total = 0usize;
    for d in decisions.iter().filter(|d| !d.votes.is_empty()) {
        let distinct: std::collections::HashSet<_> = d.votes.iter().filter(|v| **v != Vote::Invalid).collect();
        *distinct_answers.entry(distinct.len()).or_default() += 1;
        invalid += d.votes.iter().filter(|v| **v == Vote::Invalid).count();
        total += d.votes.len();
    }
    VoteDiagnostics {
        distinct_answers,
        invalid_rate: if total == 0 { 0.0 } else { invalid as f64 / total as f64 },
        total_samples: total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{GatewayConfig, MockBackend, OracleBook};
    use crate::kb::{mark_mention, Entity};
    use crate::retrieval::Provenance;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn kb() -> KnowledgeBase {
        KnowledgeBase::from_entities(
            "t",
            (1..=9).map(|i| Entity::new(format!("e{i}"), format!("Name{i}"), format!("desc {i}"))),
        )
        .unwrap()
    }

    fn ctx() -> MarkedContext {
        mark_mention("We saw Name3 today.", 7, 12).unwrap()
    }

    fn topk(ids: &[&str]) -> CandidateSet {
        crate::rerank::top_k(&CandidateSet::from_ranked_ids("m", Provenance::Bm25, ids.iter().copied()), 10)
    }

    fn gw(mock: MockBackend) -> Gateway {
        Gateway::new(Arc::new(mock), GatewayConfig { backoff_base_ms: 0, ..GatewayConfig::default() })
    }

    #[test]
    fn prompt_with_none_line() {
        let p = build_selection_prompt(&ctx(), &topk(&["e1", "e2"]), &kb(), true, Ordering::Reranker, None, PromptOptions::default())
            .unwrap();
        assert_eq!(p.system_text, SELECTION_PROMPT);
        assert_eq!(
            p.user_text,
            "We saw [Name3] today.\n\n0. None of the candidates\n1. Name1: desc 1\n2. Name2: desc 2"
        );
        let without = build_selection_prompt(&ctx(), &topk(&["e1", "e2"]), &kb(), false, Ordering::Reranker, None, PromptOptions::default())
            .unwrap();
        assert_eq!(without.user_text, "We saw [Name3] today.\n\n1. Name1: desc 1\n2. Name2: desc 2");
    }

    #[test]
    fn prompt_options() {
        let opts = PromptOptions { no_descriptions: true, max_description_chars: None };
        let p = build_selection_prompt(&ctx(), &topk(&["e1"]), &kb(), false, Ordering::Reranker, None, opts).unwrap();
        assert!(p.user_text.ends_with("\n\n1. Name1"));
        let opts = PromptOptions { no_descriptions: false, max_description_chars: Some(4) };
        let p = build_selection_prompt(&ctx(), &topk(&["e1"]), &kb(), false, Ordering::Reranker, None, opts).unwrap();
        assert!(p.user_text.ends_with("1. Name1: desc"));
    }

    #[test]
    fn answer_first_moves_gold() {
        let ids = ["e1", "e2", "e3", "e4", "e5", "e6", "e7", "e8"];
        let p = build_selection_prompt(&ctx(), &topk(&ids), &kb(), false, Ordering::AnswerFirst, Some("e7"), PromptOptions::default())
            .unwrap();
        assert_eq!(p.presented[0], "e7");
        let mut rest: Vec<&str> = ids.to_vec();
        rest.retain(|&i| i != "e7");
        assert_eq!(p.presented[1..], rest.iter().map(|s| s.to_string()).collect::<Vec<_>>()[..]);
        let last = build_selection_prompt(&ctx(), &topk(&ids), &kb(), false, Ordering::AnswerLast, Some("e2"), PromptOptions::default())
            .unwrap();
        assert_eq!(last.presented.last().unwrap(), "e2");
        assert!(matches!(
            build_selection_prompt(&ctx(), &topk(&ids), &kb(), false, Ordering::AnswerFirst, None, PromptOptions::default()),
            Err(SelectError::OrderingNeedsGold(Ordering::AnswerFirst))
        ));
    }

    #[test]
    fn random_and_none_orderings() {
        let ids = ["e1", "e2", "e3", "e4", "e5", "e6"];
        let a = build_selection_prompt(&ctx(), &topk(&ids), &kb(), false, Ordering::Random(3), None, PromptOptions::default()).unwrap();
        let b = build_selection_prompt(&ctx(), &topk(&ids), &kb(), false, Ordering::Random(3), None, PromptOptions::default()).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.presented.clone();
        sorted.sort();
        assert_eq!(sorted, ids);

        let last = build_selection_prompt(&ctx(), &topk(&ids), &kb(), true, Ordering::NoneLast, None, PromptOptions::default()).unwrap();
        assert_eq!(last.none_line, Some(6));
        assert!(last.user_text.ends_with(NONE_LINE));
        let first = build_selection_prompt(&ctx(), &topk(&ids), &kb(), true, Ordering::NoneFirst, None, PromptOptions::default()).unwrap();
        assert_eq!(first.none_line, Some(0));
        let rnd = build_selection_prompt(&ctx(), &topk(&ids), &kb(), true, Ordering::NoneRandom(5), None, PromptOptions::default()).unwrap();
        assert!(rnd.none_line.unwrap() <= 6);
        assert_eq!(rnd.presented, first.presented);
    }

    #[test]
    fn bm25_ordering_sorts_by_retrieval_rank() {
        let mut set = topk(&["e1", "e2", "e3"]);
        set.candidates.reverse();
        let p = build_selection_prompt(&ctx(), &set, &kb(), false, Ordering::Bm25, None, PromptOptions::default()).unwrap();
        assert_eq!(p.presented, ["e1", "e2", "e3"]);
    }

    #[test]
    fn ordering_names_round_trip() {
        for o in [
            Ordering::Reranker,
            Ordering::Bm25,
            Ordering::Random(9),
            Ordering::AnswerFirst,
            Ordering::AnswerLast,
            Ordering::NoneFirst,
            Ordering::NoneLast,
            Ordering::NoneRandom(2),
        ] {
            assert_eq!(o.to_string().parse::<Ordering>().unwrap(), o);
        }
        assert_eq!("random(42)".parse::<Ordering>().unwrap(), Ordering::Random(42));
        assert_eq!("random".parse::<Ordering>().unwrap(), Ordering::Random(0));
        assert!("sideways".parse::<Ordering>().is_err());
    }

    #[test]
    fn parses_common_trace_forms() {
        assert_eq!(parse_answer("…long reasoning… answer: 3", 10, false), Vote::Index(3));
        assert_eq!(parse_answer("<think>hmm</think> \"answer\": 0", 10, true), Vote::None);
        assert_eq!(parse_answer("the best is probably Paris", 10, false), Vote::Invalid);
        assert_eq!(parse_answer("Answer 2", 3, false), Vote::Index(2));
        assert_eq!(parse_answer("answer: 1 ... actually answer: 2", 3, false), Vote::Index(2));
        assert_eq!(parse_answer("\"answer\": 0", 10, false), Vote::Invalid);
        assert_eq!(parse_answer("answer: 11", 10, false), Vote::Invalid);
        assert_eq!(parse_answer("answer: 2.5", 10, false), Vote::Invalid);
        assert_eq!(parse_answer("<think>answer: 2", 10, false), Vote::Invalid);
        assert_eq!(parse_answer("<think>answer: 2</think> no idea", 10, false), Vote::Invalid);
    }

    #[test]
    fn extra_patterns() {
        let parser = AnswerParser::with_patterns(&[r"\{\s*\x22choice\x22\s*:\s*(\d+)\s*\}".to_string()]).unwrap();
        assert_eq!(parser.parse(r#"{"choice": 4}"#, 5, false), Vote::Index(4));
        assert!(AnswerParser::with_patterns(&["(".to_string()]).is_err());
    }

    #[test]
    fn vote_examples() {
        let presented: Vec<String> = (1..=9).map(|i| format!("e{i}")).collect();
        let strict = majority_vote(&[Vote::Index(2), Vote::Index(2), Vote::Index(7)], &presented, "e1");
        assert_eq!(strict, VoteOutcome { result: LinkResult::Entity("e2".into()), fallback_used: false });
        let tie = majority_vote(&[Vote::Index(3), Vote::Index(1)], &presented, "e5");
        assert_eq!(tie.result, LinkResult::Entity("e1".into()));
        let none_tie = majority_vote(&[Vote::Index(1), Vote::None], &presented, "e5");
        assert_eq!(none_tie.result, LinkResult::None);
        let all_bad = majority_vote(&[Vote::Invalid, Vote::Invalid], &presented, "e5");
        assert_eq!(all_bad, VoteOutcome { result: LinkResult::Entity("e5".into()), fallback_used: true });
    }

    /// Exhaustive statement of the vote rule for cross-checking.
    fn vote_oracle(votes: &[Vote], presented: &[String], top: &str) -> LinkResult {
        let valid: Vec<Vote> = votes.iter().copied().filter(|v| *v != Vote::Invalid).collect();
        if valid.is_empty() {
            return LinkResult::Entity(top.into());
        }
        let best = valid.iter().map(|v| valid.iter().filter(|w| *w == v).count()).max().unwrap();
        let mut tied: Vec<Vote> = valid.iter().copied().filter(|v| valid.iter().filter(|w| *w == v).count() == best).collect();
        tied.sort();
        match tied[0] {
            Vote::None => LinkResult::None,
            Vote::Index(i) => LinkResult::Entity(presented[i - 1].clone()),
            Vote::Invalid => unreachable!(),
        }
    }

    fn arb_vote() -> impl Strategy<Value = Vote> {
        prop_oneof![Just(Vote::None), Just(Vote::Invalid), (1usize..=6).prop_map(Vote::Index)]
    }

    proptest! {
        #[test]
        fn vote_matches_oracle_and_is_permutation_invariant(
            votes in proptest::collection::vec(arb_vote(), 1..12),
            seed in any::<u64>(),
        ) {
            let presented: Vec<String> = (1..=6).map(|i| format!("e{i}")).collect();
            let got = majority_vote(&votes, &presented, "e1");
            prop_assert_eq!(&got.result, &vote_oracle(&votes, &presented, "e1"));
            let mut shuffled = votes.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(got, majority_vote(&shuffled, &presented, "e1"));
        }

        #[test]
        fn parser_never_out_of_range(text in "\\PC{0,40}", n in 0usize..30, max in 1usize..12, none in any::<bool>()) {
            let s = format!("{text} answer: {n}");
            match parse_answer(&s, max, none) {
                Vote::Index(i) => prop_assert!(i >= 1 && i <= max),
                Vote::None => prop_assert!(none),
                Vote::Invalid => {}
            }
        }
    }

    #[test]
    fn scripted_selection() {
        let gw = gw(MockBackend::scripted(["answer: 1", "answer: 2", "answer: 1"]));
        let cfg = SelectionConfig { num_samples: 3, ..SelectionConfig::default() };
        let d = select(&ctx(), &topk(&["e4", "e5"]), &kb(), &cfg, &gw, None, PromptOptions::default()).unwrap();
        assert_eq!(d.result, LinkResult::Entity("e4".into()));
        assert_eq!(d.vote_counts, BTreeMap::from([("1".to_string(), 2), ("2".to_string(), 1)]));
        assert_eq!(d.samples.len(), 3);
    }

    #[test]
    fn oracle_selection_tracks_gold() {
        let kb = Arc::new(kb());
        let mut book = OracleBook::new(kb.clone());
        book.insert(ctx().rendered(), Some("e3".into()));
        let gw = gw(MockBackend::oracle(book));
        for ordering in [Ordering::Reranker, Ordering::Random(1), Ordering::AnswerLast] {
            let cfg = SelectionConfig { ordering, num_samples: 2, ..SelectionConfig::default() };
            let d = select(&ctx(), &topk(&["e1", "e3", "e2"]), &kb, &cfg, &gw, Some("e3"), PromptOptions::default()).unwrap();
            assert_eq!(d.result, LinkResult::Entity("e3".into()), "{ordering}");
        }
    }

    #[test]
    fn single_sample_path() {
        let mock = Arc::new(MockBackend::noisy(3));
        let gw = Gateway::new(mock.clone(), GatewayConfig::default());
        let cfg = SelectionConfig { num_samples: 1, ..SelectionConfig::default() };
        let d = select(&ctx(), &topk(&["e1", "e2", "e3"]), &kb(), &cfg, &gw, None, PromptOptions::default()).unwrap();
        assert_eq!(d.votes.len(), 1);
        let reqs = mock.recorded_requests();
        assert_eq!(reqs.len(), 1);
        assert_eq!(reqs[0].num_samples, 1);
    }

    #[test]
    fn diagnostics() {
        let mk = |votes: Vec<Vote>| LinkingDecision {
            votes,
            ..LinkingDecision::empty("m", false)
        };
        let unanimous = vec![mk(vec![Vote::Index(1); 4]), mk(vec![Vote::Index(2); 4])];
        assert_eq!(vote_diagnostics(&unanimous).distinct_answers, BTreeMap::from([(1, 2)]));
        let split = vec![mk([vec![Vote::Index(1); 5], vec![Vote::Index(2); 5]].concat())];
        assert_eq!(vote_diagnostics(&split).distinct_answers, BTreeMap::from([(2, 1)]));
        let mut batch = Vec::new();
        for i in 0..10 {
            let mut v = vec![Vote::Index(1); 10];
            if i % 2 == 0 {
                v[3] = Vote::Invalid;
                v[7] = Vote::Invalid;
            }
            batch.push(mk(v));
        }
        let d = vote_diagnostics(&batch);
        assert_eq!(d.total_samples, 100);
        assert_eq!(d.invalid_rate, 0.10);
    }
}
