use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{word_count, Backend, ChatRequest, ChatResponse, GatewayError, TokenLogprob};
use crate::kb::{verbalize, KnowledgeBase};
use crate::text::tokenize;

pub(crate) fn stable_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Splits a selection prompt into the marked context and its numbered lines.
pub fn parse_selection_prompt(user_text: &str) -> (&str, Vec<(usize, &str)>) {
    let (context, list) = user_text.rsplit_once("\n\n").unwrap_or((user_text, ""));
    let lines = list
        .lines()
        .filter_map(|line| {
            let (num, rest) = line.split_once(". ")?;
            Some((num.parse::<usize>().ok()?, rest))
        })
        .collect();
    (context, lines)
}

/// Gold answers the oracle consults, keyed by rendered (bracketed) context.
/// A `None` gold means the mention has no KB entity.
#[derive(Debug, Clone, Default)]
pub struct OracleBook {
    kb: Arc<KnowledgeBase>,
    golds: HashMap<String, Option<String>>,
}

impl OracleBook {
    pub fn new(kb: Arc<KnowledgeBase>) -> Self {
        Self {
            kb,
            golds: HashMap::new(),
        }
    }

    pub fn insert(&mut self, rendered_context: impl Into<String>, gold: Option<String>) {
        self.golds.insert(rendered_context.into(), gold);
    }

    fn gold_for(&self, context: &str) -> Option<&Option<String>> {
        self.golds.get(context).or_else(|| {
            // Truncated contexts are windows of a registered one.
            self.golds
                .iter()
                .filter(|(k, _)| k.contains(context))
                .min_by(|a, b| a.0.cmp(b.0))
                .map(|(_, v)| v)
        })
    }

    /// Index the oracle answers for a selection prompt.
    fn answer(&self, user_text: &str) -> usize {
        let (context, lines) = parse_selection_prompt(user_text);
        let has_none = lines.iter().any(|&(i, _)| i == 0);
        let fallback = if has_none { 0 } else { 1 };
        let Some(Some(gold_id)) = self.gold_for(context) else {
            return fallback;
        };
        let Some(gold) = self.kb.get(gold_id) else {
            return fallback;
        };
        let full = verbalize(&gold.name, &gold.description);
        let prefix = format!("{}: ", gold.name);
        let candidates = || lines.iter().filter(|&&(i, _)| i > 0);
        candidates()
            .find(|&&(_, t)| t == full)
            .or_else(|| candidates().find(|&&(_, t)| t == gold.name))
            .or_else(|| candidates().find(|&&(_, t)| t.starts_with(&prefix)))
            .map_or(fallback, |&(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedSample {
    pub text: String,
    pub tokens: u32,
}

impl ScriptedSample {
    pub fn new(text: impl Into<String>, tokens: u32) -> Self {
        Self {
            text: text.into(),
            tokens,
        }
    }
}

impl From<&str> for ScriptedSample {
    fn from(text: &str) -> Self {
        Self::new(text, word_count(text))
    }
}

impl From<String> for ScriptedSample {
    fn from(text: String) -> Self {
        let tokens = word_count(&text);
        Self { text, tokens }
    }
}

#[derive(Debug, Clone)]
pub enum ChatBehavior {
    /// Names the gold candidate's index when it is listed; otherwise the
    /// None line (if offered) or index 1.
    Oracle(OracleBook),
    /// Sample `i` of every request is `script[i % len]`.
    Scripted(Vec<ScriptedSample>),
    /// Seeded pseudo-random index per sample, with a short reasoning prefix.
    Noisy,
}

#[derive(Debug, Clone)]
pub enum ScoreBehavior {
    /// `yes ~ U(-4, 4)` from a hash of (seed, query, document); `no = 0`.
    Hashed,
    /// Token overlap between the bracketed mention and the document name,
    /// plus context/document overlap.
    Lexical,
    Fixed { yes: f64, no: f64 },
    /// Per-document logits; unknown documents fall back to `default`.
    Table {
        by_document: HashMap<String, (f64, f64)>,
        default: (f64, f64),
    },
    /// Returns this top-K list verbatim.
    Raw(Vec<TokenLogprob>),
    Unsupported,
}

/// Deterministic offline backend. All outputs depend only on the seed and
/// the request content.
#[derive(Debug)]
pub struct MockBackend {
    chat: ChatBehavior,
    scores: ScoreBehavior,
    seed: u64,
    embed_dim: usize,
    tokens_per_completion: Option<u32>,
    reject_multi_sample: bool,
    transient_failures: AtomicUsize,
    failing_documents: HashSet<String>,
    log: Mutex<Vec<ChatRequest>>,
}

impl MockBackend {
    pub fn new(chat: ChatBehavior) -> Self {
        Self {
            chat,
            scores: ScoreBehavior::Lexical,
            seed: 0,
            embed_dim: 16,
            tokens_per_completion: None,
            reject_multi_sample: false,
            transient_failures: AtomicUsize::new(0),
            failing_documents: HashSet::new(),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn oracle(book: OracleBook) -> Self {
        Self::new(ChatBehavior::Oracle(book))
    }

    pub fn scripted<I, S>(script: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<ScriptedSample>,
    {
        Self::new(ChatBehavior::Scripted(script.into_iter().map(Into::into).collect()))
    }

    pub fn constant(text: &str) -> Self {
        Self::scripted([text])
    }

    pub fn noisy(seed: u64) -> Self {
        Self::new(ChatBehavior::Noisy).with_seed(seed)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_scores(mut self, scores: ScoreBehavior) -> Self {
        self.scores = scores;
        self
    }

    pub fn with_embed_dim(mut self, dim: usize) -> Self {
        self.embed_dim = dim.max(1);
        self
    }

    pub fn with_tokens_per_completion(mut self, tokens: u32) -> Self {
        self.tokens_per_completion = Some(tokens);
        self
    }

    pub fn rejecting_multi_sample(mut self) -> Self {
        self.reject_multi_sample = true;
        self
    }

    /// The next `n` calls (of any kind) fail with a 503.
    pub fn with_transient_failures(self, n: usize) -> Self {
        self.transient_failures.store(n, Ordering::SeqCst);
        self
    }

    /// Scoring calls for these documents always fail with a non-retryable error.
    pub fn with_failing_documents<I: IntoIterator<Item = String>>(mut self, docs: I) -> Self {
        self.failing_documents.extend(docs);
        self
    }

    pub fn recorded_requests(&self) -> Vec<ChatRequest> {
        self.log.lock().clone()
    }

    fn maybe_fail(&self) -> Result<(), GatewayError> {
        let took = self
            .transient_failures
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1));
        match took {
            Ok(_) => Err(GatewayError::Transport {
                status: Some(503),
                message: "mock transient failure".into(),
            }),
            Err(_) => Ok(()),
        }
    }

    fn sample(&self, req: &ChatRequest, i: usize) -> ScriptedSample {
        match &self.chat {
            ChatBehavior::Oracle(book) => {
                let text = format!("answer: {}", book.answer(&req.user_text));
                ScriptedSample::from(text)
            }
            ChatBehavior::Scripted(script) => {
                if script.is_empty() {
                    ScriptedSample::new("", 0)
                } else {
                    script[i % script.len()].clone()
                }
            }
            ChatBehavior::Noisy => {
                let (_, lines) = parse_selection_prompt(&req.user_text);
                let lo = lines.iter().map(|&(i, _)| i).min().unwrap_or(1);
                let hi = lines.iter().map(|&(i, _)| i).max().unwrap_or(1).max(lo);
                let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(
                    self.seed,
                    &[&req.system_text, &req.user_text, &i.to_string()],
                ));
                let pick = rng.random_range(lo..=hi);
                let draw: u32 = rng.random();
                let text = if req.reasoning_enabled {
                    format!("<think>Sample {i}: weighing the candidates (draw {draw}).</think> answer: {pick}")
                } else {
                    format!("answer: {pick}")
                };
                ScriptedSample::from(text)
            }
        }
    }

    fn logits_for(&self, user: &str) -> Result<Vec<TokenLogprob>, GatewayError> {
        let (query, document) = split_scoring_prompt(user);
        if self.failing_documents.contains(document) {
            return Err(GatewayError::BackendRefused(format!("mock refuses to score `{document}`")));
        }
        let (yes, no) = match &self.scores {
            ScoreBehavior::Unsupported => return Err(GatewayError::LogprobsUnsupported),
            ScoreBehavior::Raw(list) => return Ok(list.clone()),
            ScoreBehavior::Fixed { yes, no } => (*yes, *no),
            ScoreBehavior::Table { by_document, default } => *by_document.get(document).unwrap_or(default),
            ScoreBehavior::Hashed => {
                let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(self.seed, &[query, document]));
                (rng.random_range(-4.0..4.0), 0.0)
            }
            ScoreBehavior::Lexical => (lexical_score(query, document), 1.0),
        };
        Ok(vec![TokenLogprob::new("yes", yes), TokenLogprob::new("no", no)])
    }
}

fn split_scoring_prompt(user: &str) -> (&str, &str) {
    let mut query = "";
    let mut document = "";
    for line in user.lines() {
        if let Some(q) = line.strip_prefix("Query: ") {
            query = q;
        } else if let Some(d) = line.strip_prefix("Document: ") {
            document = d;
        }
    }
    (query, document)
}

fn bracketed(query: &str) -> &str {
    match (query.find('['), query.rfind(']')) {
        (Some(s), Some(e)) if e > s => &query[s + 1..e],
        _ => query,
    }
}

fn overlap(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    a.intersection(b).count() as f64 / a.len() as f64
}

fn lexical_score(query: &str, document: &str) -> f64 {
    let name = document.split_once(": ").map_or(document, |(n, _)| n);
    let mention: HashSet<String> = tokenize(bracketed(query)).into_iter().collect();
    let name_tokens: HashSet<String> = tokenize(name).into_iter().collect();
    let context: HashSet<String> = tokenize(query).into_iter().collect();
    let doc_tokens: HashSet<String> = tokenize(document).into_iter().collect();
    3.0 * overlap(&mention, &name_tokens) + overlap(&doc_tokens, &context) - 1.0
}

fn hash_embedding(text: &str, dim: usize, seed: u64) -> Vec<f32> {
    let mut v = vec![0.0f32; dim];
    let tokens = tokenize(text);
    if tokens.is_empty() {
        let h = stable_seed(seed, &[text]);
        v[(h % dim as u64) as usize] = 1.0;
        return v;
    }
    for t in &tokens {
        let h = stable_seed(seed, &[t]);
        let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    if v.iter().all(|&x| x == 0.0) {
        v[0] = 1.0;
    }
    v
}

impl Backend for MockBackend {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.log.lock().push(req.clone());
        self.maybe_fail()?;
        if self.reject_multi_sample && req.num_samples > 1 {
            return Err(GatewayError::BackendRefused("mock accepts only n = 1".into()));
        }
        let samples: Vec<ScriptedSample> = (0..req.num_samples).map(|i| self.sample(req, i)).collect();
        Ok(ChatResponse {
            generated_tokens: samples
                .iter()
                .map(|s| self.tokens_per_completion.unwrap_or(s.tokens))
                .collect(),
            truncated: vec![false; samples.len()],
            completions: samples.into_iter().map(|s| s.text).collect(),
            prompt_tokens: word_count(&req.system_text) + word_count(&req.user_text),
            ..ChatResponse::default()
        })
    }

    fn first_token_logprobs(&self, _system: &str, user: &str, _top_k: usize) -> Result<Vec<TokenLogprob>, GatewayError> {
        self.maybe_fail()?;
        self.logits_for(user)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        self.maybe_fail()?;
        Ok(texts
            .iter()
            .map(|t| hash_embedding(t, self.embed_dim, self.seed))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::Entity;

    fn req(user: &str, n: usize) -> ChatRequest {
        ChatRequest {
            system_text: "sys".into(),
            user_text: user.into(),
            temperature: 0.7,
            num_samples: n,
            max_tokens: 64,
            reasoning_enabled: true,
        }
    }

    const PROMPT: &str = "France hosted the Olympics in [Paris].\n\n0. None of the candidates\n1. Paris (novel): 1897 novel by Emile Zola\n2. Paris (city): Capital city of France";

    #[test]
    fn oracle_names_gold_index() {
        let kb = Arc::new(
            KnowledgeBase::from_entities(
                "t",
                [
                    Entity::new("Q1", "Paris (city)", "Capital city of France"),
                    Entity::new("Q2", "Paris (novel)", "1897 novel by Emile Zola"),
                ],
            )
            .unwrap(),
        );
        let mut book = OracleBook::new(kb);
        book.insert("France hosted the Olympics in [Paris].", Some("Q1".into()));
        let mock = MockBackend::oracle(book);
        let resp = mock.chat(&req(PROMPT, 4)).unwrap();
        assert_eq!(resp.completions, vec!["answer: 2"; 4]);

        let unknown = PROMPT.replace("France hosted", "Zola visited");
        assert_eq!(mock.chat(&req(&unknown, 1)).unwrap().completions, ["answer: 0"]);
    }

    #[test]
    fn noisy_is_seeded_and_distinct() {
        let a = MockBackend::noisy(42).chat(&req(PROMPT, 3)).unwrap();
        let b = MockBackend::noisy(42).chat(&req(PROMPT, 3)).unwrap();
        assert_eq!(a.completions, b.completions);
        let distinct: HashSet<_> = a.completions.iter().collect();
        assert_eq!(distinct.len(), 3);
        let c = MockBackend::noisy(7).chat(&req(PROMPT, 3)).unwrap();
        assert_ne!(a.completions, c.completions);
    }

    #[test]
    fn scripted_token_counts() {
        let mock = MockBackend::scripted([ScriptedSample::new("answer: 1", 120), ScriptedSample::new("answer: 2", 80)]);
        let resp = mock.chat(&req(PROMPT, 3)).unwrap();
        assert_eq!(resp.generated_tokens, [120, 80, 120]);
        let fixed = MockBackend::constant("answer: 1").with_tokens_per_completion(7);
        assert_eq!(fixed.chat(&req(PROMPT, 2)).unwrap().generated_tokens, [7, 7]);
    }

    #[test]
    fn prompt_parsing() {
        let (ctx, lines) = parse_selection_prompt(PROMPT);
        assert_eq!(ctx, "France hosted the Olympics in [Paris].");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2], (2, "Paris (city): Capital city of France"));
    }

    #[test]
    fn lexical_scores_prefer_name_match() {
        let q = "France hosted the Olympics in [Paris].";
        let city = lexical_score(q, "Paris (city): Capital city of France");
        let novel = lexical_score(q, "Paris (novel): 1897 novel by Emile Zola");
        let country = lexical_score(q, "France: Country in Western Europe");
        assert!(city > novel && novel > country, "{city} {novel} {country}");
    }
}
