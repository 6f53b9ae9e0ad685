//! `linkforge` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use linkforge::adapters::{convert, AdapterKind, AdapterSpec, DescriptionPolicy};
use linkforge::config::{BackendKind, Config};
use linkforge::eval::{build_report, ordering_ablation, sweep_self_consistency, write_csv, EvalReport};
use linkforge::gateway::{Backend, Gateway, HttpBackend, MockBackend, OracleBook};
use linkforge::kb::{load_kb_file, mark_mention, AliasDictionary, KnowledgeBase};
use linkforge::pipeline::{
    score_cache_path, sweep_k, write_run_dir, BatchOutput, FunnelFile, Indices, MentionTask, Pipeline,
    PipelineConfig, RetrieverKind, FUNNEL_FILE, METRICS_FILE, UNK_GOLD,
};
use linkforge::rerank::ScoreCache;
use linkforge::retrieval::{Bm25Index, DenseIndex, IndexSnapshot};
use linkforge::select::Ordering;

#[derive(Parser)]
#[command(name = "linkforge", version, about = "Entity linking with retrieval, reranking and LLM selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and save a retrieval index snapshot.
    BuildIndex {
        #[command(flatten)]
        common: Common,
        /// Output path (default: <run-dir>/index.snapshot).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Link a single mention and print the decision.
    Link {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        text: String,
        /// Character span START:END of the mention.
        #[arg(long)]
        span: String,
        /// Gold entity id (used by the oracle mock and oracle orderings).
        #[arg(long)]
        gold: Option<String>,
        /// Comma-separated precomputed candidate ids.
        #[arg(long, value_delimiter = ',')]
        candidates: Option<Vec<String>>,
    },
    /// Run a batch of tasks and write metrics.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Run an ablation suite and write a CSV table.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// ordering, k, self-consistency or variants.
        #[arg(long)]
        suite: String,
        #[arg(long, value_delimiter = ',')]
        orderings: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        k_values: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        sc_values: Option<Vec<usize>>,
    },
    /// Print the retention funnel stored in a run directory.
    Funnel {
        #[command(flatten)]
        common: Common,
    },
    /// Convert a benchmark layout into canonical KB and task files.
    Convert {
        #[command(flatten)]
        common: Common,
        /// Adapter kind, or the name of an `adapters` entry in the config.
        #[arg(long)]
        adapter: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        first_sentences: Option<usize>,
        #[arg(long)]
        unk_marker: Option<String>,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kb: Option<PathBuf>,
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Saved index snapshot; built from the KB when absent.
    #[arg(long)]
    index: Option<PathBuf>,
    /// http, mock-oracle or mock-scripted.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    gate_n: Option<usize>,
    #[arg(long)]
    include_none: bool,
    #[arg(long)]
    ordering: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_concurrency: Option<usize>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// bm25, dense, dictionary or hybrid.
    #[arg(long)]
    retriever: Option<String>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    context_limit: Option<usize>,
    /// Completion returned by the scripted mock; repeat to cycle.
    #[arg(long)]
    mock_script: Vec<String>,
    #[arg(long)]
    no_reranker: bool,
    #[arg(long)]
    no_selection: bool,
    #[arg(long)]
    no_descriptions: bool,
    #[arg(long)]
    no_reasoning: bool,
    #[arg(long)]
    no_self_consistency: bool,
}

/// Failure classes mapped to exit codes 1 and 2.
enum Failure {
    Input(anyhow::Error),
    Backend(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let backend = e.chain().any(|c| {
            if let Some(p) = c.downcast_ref::<linkforge::pipeline::PipelineError>() {
                return p.is_backend();
            }
            c.downcast_ref::<linkforge::gateway::GatewayError>().is_some()
        });
        if backend {
            Failure::Backend(e)
        } else {
            Failure::Input(e)
        }
    }
}

fn parse_ordering(s: &str, seed: u64) -> Result<Ordering> {
    let o: Ordering = s.parse().map_err(|e: String| anyhow!(e))?;
    let explicit_seed = s.contains([':', '(']);
    Ok(match o {
        Ordering::Random(_) if !explicit_seed => Ordering::Random(seed),
        Ordering::NoneRandom(_) if !explicit_seed => Ordering::NoneRandom(seed),
        other => other,
    })
}

impl Common {
    fn config(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display()))?,
            None => Config::default(),
        };
        let p = &mut cfg.pipeline;
        if let Some(seed) = self.seed {
            p.seed = seed;
        }
        if let Some(k) = self.k {
            p.rerank.k = k;
        }
        if let Some(n) = self.samples {
            p.selection.num_samples = n;
        }
        if let Some(n) = self.gate_n {
            p.gate_n = n;
        }
        if self.include_none {
            p.selection.include_none = true;
        }
        if let Some(o) = &self.ordering {
            p.selection.ordering = parse_ordering(o, p.seed)?;
        }
        if let Some(n) = self.max_concurrency {
            p.max_concurrency = n;
        }
        if let Some(r) = &self.retriever {
            p.retrieval.retriever = serde_json::from_value(serde_json::Value::String(r.clone()))
                .map_err(|_| anyhow!("unknown retriever `{r}`"))?;
        }
        if let Some(b) = self.budget {
            p.retrieval.budget = b;
        }
        if self.context_limit.is_some() {
            p.context_limit = self.context_limit;
        }
        let a = &mut p.ablations;
        a.no_reranker |= self.no_reranker;
        a.no_selection |= self.no_selection;
        a.no_descriptions |= self.no_descriptions;
        a.no_reasoning |= self.no_reasoning;
        a.no_self_consistency |= self.no_self_consistency;
        if let Some(b) = &self.backend {
            cfg.backend.kind = b.parse().map_err(|e: String| anyhow!(e))?;
        }
        if let Some(e) = &self.endpoint {
            cfg.backend.http.endpoint = e.clone();
        }
        if let Some(m) = &self.model {
            cfg.backend.http.model = m.clone();
        }
        if !self.mock_script.is_empty() {
            cfg.backend.mock_script = self.mock_script.clone();
        }
        cfg.backend.gateway.max_concurrency = cfg.backend.gateway.max_concurrency.max(cfg.pipeline.max_concurrency);
        cfg.pipeline
            .validate()
            .context("invalid configuration")?;
        Ok(cfg)
    }

    fn kb(&self) -> Result<(KnowledgeBase, AliasDictionary)> {
        let path = self.kb.as_ref().ok_or_else(|| anyhow!("--kb is required"))?;
        let (kb, aliases) = load_kb_file(path).with_context(|| format!("loading KB {}", path.display()))?;
        aliases.validate(&kb)?;
        Ok((kb, aliases))
    }

    fn tasks(&self, kb: &KnowledgeBase) -> Result<Vec<MentionTask>> {
        let path = self.tasks.as_ref().ok_or_else(|| anyhow!("--tasks is required"))?;
        let tasks = linkforge::pipeline::load_tasks_file(path).with_context(|| format!("loading tasks {}", path.display()))?;
        linkforge::pipeline::validate_tasks(&tasks, kb)?;
        Ok(tasks)
    }

    fn run_dir(&self) -> PathBuf {
        self.run_dir.clone().unwrap_or_else(|| PathBuf::from("run"))
    }
}

fn make_gateway(cfg: &Config, kb: &KnowledgeBase, tasks: &[MentionTask]) -> Gateway {
    let seed = cfg.pipeline.seed;
    let backend: Arc<dyn Backend> = match cfg.backend.kind {
        BackendKind::Http => Arc::new(HttpBackend::new(cfg.backend.http.clone())),
        BackendKind::MockOracle => {
            let mut book = OracleBook::new(Arc::new(kb.clone()));
            for t in tasks {
                if let Some(g) = &t.gold_id {
                    book.insert(t.context.rendered(), (g != UNK_GOLD).then(|| g.clone()));
                }
            }
            Arc::new(MockBackend::oracle(book).with_seed(seed))
        }
        BackendKind::MockScripted => {
            let script = if cfg.backend.mock_script.is_empty() {
                vec!["answer: 1".to_string()]
            } else {
                cfg.backend.mock_script.clone()
            };
            Arc::new(MockBackend::scripted(script).with_seed(seed))
        }
    };
    Gateway::new(backend, cfg.backend.gateway.clone())
}

fn make_indices(common: &Common, cfg: &PipelineConfig, kb: &KnowledgeBase, aliases: AliasDictionary, gateway: &Gateway) -> Result<Indices> {
    let mut indices = Indices {
        dictionary: Some(aliases),
        ..Indices::default()
    };
    if let Some(path) = &common.index {
        match IndexSnapshot::load(path).with_context(|| format!("loading index {}", path.display()))? {
            IndexSnapshot::Bm25(i) => indices.bm25 = Some(i),
            IndexSnapshot::Dense(i) => indices.dense = Some(i),
        }
    }
    let r = cfg.retrieval.retriever;
    if matches!(r, RetrieverKind::Bm25 | RetrieverKind::Hybrid) && indices.bm25.is_none() {
        indices.bm25 = Some(Bm25Index::build(kb, cfg.retrieval.bm25)?);
    }
    if matches!(r, RetrieverKind::Dense | RetrieverKind::Hybrid) && indices.dense.is_none() {
        indices.dense = Some(DenseIndex::build(kb, gateway)?);
    }
    Ok(indices)
}

fn open_cache(dir: Option<&Path>) -> Result<ScoreCache> {
    match dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            Ok(ScoreCache::persistent(&score_cache_path(d))?)
        }
        None => Ok(ScoreCache::in_memory()),
    }
}

fn backend_failures(out: &BatchOutput) -> Result<(), Failure> {
    for f in &out.failures {
        eprintln!("task {} failed: {}", f.mention_id, f.error);
    }
    match out.failures.iter().find(|f| f.backend) {
        Some(f) => Err(Failure::Backend(anyhow!("backend failure on task {}: {}", f.mention_id, f.error))),
        None => Ok(()),
    }
}

fn parse_span(span: &str) -> Result<(usize, usize)> {
    let (s, e) = span.split_once(':').ok_or_else(|| anyhow!("--span must be START:END"))?;
    Ok((s.trim().parse().context("span start")?, e.trim().parse().context("span end")?))
}

fn cmd_build_index(common: &Common, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = common.config()?;
    let (kb, _) = common.kb()?;
    let path = out.unwrap_or_else(|| common.run_dir().join("index.snapshot"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(anyhow::Error::from)?;
    }
    let snapshot = match cfg.pipeline.retrieval.retriever {
        RetrieverKind::Dense => {
            let gateway = make_gateway(&cfg, &kb, &[]);
            IndexSnapshot::Dense(DenseIndex::build(&kb, &gateway).map_err(anyhow::Error::from)?)
        }
        _ => IndexSnapshot::Bm25(Bm25Index::build(&kb, cfg.pipeline.retrieval.bm25).map_err(anyhow::Error::from)?),
    };
    snapshot.save(&path).map_err(anyhow::Error::from)?;
    println!("wrote {} ({} entities)", path.display(), kb.len());
    Ok(())
}

fn cmd_link(common: &Common, text: &str, span: &str, gold: Option<String>, candidates: Option<Vec<String>>) -> Result<(), Failure> {
    let cfg = common.config()?;
    let (kb, aliases) = common.kb()?;
    let (start, end) = parse_span(span)?;
    let ctx = mark_mention(text, start, end).map_err(anyhow::Error::from)?;
    let mut task = MentionTask::new("cli", ctx);
    task.gold_id = gold;
    task.candidates = candidates;
    linkforge::pipeline::validate_tasks(std::slice::from_ref(&task), &kb).map_err(anyhow::Error::from)?;
    let gateway = make_gateway(&cfg, &kb, std::slice::from_ref(&task));
    let indices = make_indices(common, &cfg.pipeline, &kb, aliases, &gateway)?;
    let cache = open_cache(common.run_dir.as_deref())?;
    let out = Pipeline::new(&cfg.pipeline, &kb, &indices, &gateway)
        .with_cache(&cache)
        .link(&task)
        .map_err(anyhow::Error::from)?;

    println!("context: {}", task.context.rendered());
    println!("\n{:>4}  {:<20} {:>8} {:>9}  name", "idx", "entity", "rerank", "retrieval");
    for c in &out.trace.topk {
        let idx = out
            .decision
            .presented
            .iter()
            .position(|p| *p == c.entity_id)
            .map_or_else(|| "-".to_string(), |i| (i + 1).to_string());
        let rerank = c.rerank_score.map_or_else(|| "-".to_string(), |s| format!("{s:.4}"));
        let name = kb.get(&c.entity_id).map_or("", |e| e.name.as_str());
        println!("{idx:>4}  {:<20} {rerank:>8} {:>9}  {name}", c.entity_id, c.retrieval_rank);
    }
    let votes: Vec<String> = out.decision.vote_counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("\nvotes: {}", if votes.is_empty() { "-".to_string() } else { votes.join(" ") });
    if out.decision.fallback_used {
        println!("fallback: all samples invalid, using top reranked candidate");
    }
    match out.decision.result.entity_id() {
        Some(id) => println!("result: {id} {}", kb.get(id).map_or("", |e| e.name.as_str())),
        None => println!("result: NONE"),
    }
    if let Some(dir) = &common.run_dir {
        let batch = BatchOutput {
            timing: linkforge::pipeline::timing_summary(std::slice::from_ref(&out.decision), std::slice::from_ref(&out.trace)),
            decisions: vec![out.decision],
            funnel: vec![out.funnel],
            traces: vec![out.trace],
            failures: Vec::new(),
        };
        write_run_dir(dir, &batch).map_err(anyhow::Error::from)?;
    }
    Ok(())
}

struct Loaded {
    cfg: Config,
    kb: KnowledgeBase,
    tasks: Vec<MentionTask>,
    gateway: Gateway,
    indices: Indices,
}

fn load_all(common: &Common) -> Result<Loaded> {
    let cfg = common.config()?;
    let (kb, aliases) = common.kb()?;
    let tasks = common.tasks(&kb)?;
    let gateway = make_gateway(&cfg, &kb, &tasks);
    let indices = make_indices(common, &cfg.pipeline, &kb, aliases, &gateway)?;
    Ok(Loaded { cfg, kb, tasks, gateway, indices })
}

fn cmd_eval(common: &Common) -> Result<(), Failure> {
    let l = load_all(common)?;
    let dir = common.run_dir();
    let cache = open_cache(Some(&dir))?;
    let out = Pipeline::new(&l.cfg.pipeline, &l.kb, &l.indices, &l.gateway)
        .with_cache(&cache)
        .link_batch(&l.tasks)
        .map_err(anyhow::Error::from)?;
    write_run_dir(&dir, &out).map_err(anyhow::Error::from)?;
    let report: EvalReport = build_report(&l.tasks, &out, &l.kb, &l.cfg.pipeline).map_err(anyhow::Error::from)?;
    std::fs::write(dir.join(METRICS_FILE), report.to_json().map_err(anyhow::Error::from)?).map_err(anyhow::Error::from)?;
    print!("{}", report.to_text());
    backend_failures(&out)
}

fn write_table<T: serde::Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    write_csv(std::fs::File::create(&path)?, rows)?;
    write_csv(std::io::stdout().lock(), rows)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

#[derive(serde::Serialize)]
struct VariantRow {
    variant: String,
    accuracy: f64,
    normalized_accuracy: Option<f64>,
    fallback_rate: f64,
}

fn cmd_ablate(
    common: &Common,
    suite: &str,
    orderings: Option<Vec<String>>,
    k_values: Option<Vec<usize>>,
    sc_values: Option<Vec<usize>>,
) -> Result<(), Failure> {
    let mut common = common.clone();
    let ks = k_values.unwrap_or_else(|| vec![1, 5, 10]);
    if suite == "k" {
        common.k = ks.iter().copied().max();
    }
    let l = load_all(&common)?;
    let dir = common.run_dir();
    let cache = open_cache(Some(&dir))?;
    let p = &l.cfg.pipeline;
    match suite {
        "ordering" => {
            let names = orderings.unwrap_or_else(|| vec!["reranker".into(), "random".into(), "bm25".into()]);
            let list = names.iter().map(|n| parse_ordering(n, p.seed)).collect::<Result<Vec<_>>>()?;
            let rows = ordering_ablation(&l.tasks, p, &l.kb, &l.indices, &l.gateway, &cache, &list).map_err(anyhow::Error::from)?;
            write_table(&dir, "ordering.csv", &rows)?;
        }
        "k" => {
            let rows = sweep_k(&l.tasks, p, &l.kb, &l.indices, &l.gateway, &cache, &ks).map_err(anyhow::Error::from)?;
            write_table(&dir, "k_sweep.csv", &rows)?;
        }
        "self-consistency" | "sc" => {
            let ks = sc_values.unwrap_or_else(|| vec![1, 3, 5, 10]);
            let mut c = p.clone();
            c.selection.num_samples = ks.iter().copied().max().unwrap_or(1).max(c.selection.num_samples);
            let out = Pipeline::new(&c, &l.kb, &l.indices, &l.gateway)
                .with_cache(&cache)
                .link_batch(&l.tasks)
                .map_err(anyhow::Error::from)?;
            backend_failures(&out)?;
            let rows = sweep_self_consistency(&out.decisions, &l.tasks, &ks).map_err(anyhow::Error::from)?;
            write_table(&dir, "sc_sweep.csv", &rows)?;
        }
        "variants" => {
            let mut rows = Vec::new();
            type Variant = (&'static str, fn(&mut PipelineConfig));
            let variants: [Variant; 6] = [
                ("full", |_| {}),
                ("no_self_consistency", |c| c.ablations.no_self_consistency = true),
                ("no_reranker", |c| c.ablations.no_reranker = true),
                ("no_descriptions", |c| c.ablations.no_descriptions = true),
                ("no_reasoning", |c| c.ablations.no_reasoning = true),
                ("no_selection", |c| c.ablations.no_selection = true),
            ];
            for (name, apply) in variants {
                let mut c = p.clone();
                apply(&mut c);
                let out = Pipeline::new(&c, &l.kb, &l.indices, &l.gateway)
                    .with_cache(&cache)
                    .link_batch(&l.tasks)
                    .map_err(anyhow::Error::from)?;
                backend_failures(&out)?;
                let report = build_report(&l.tasks, &out, &l.kb, &c).map_err(anyhow::Error::from)?;
                let fallbacks = out.decisions.iter().filter(|d| d.fallback_used).count();
                rows.push(VariantRow {
                    variant: name.to_string(),
                    accuracy: report.overall_accuracy,
                    normalized_accuracy: report.normalized_accuracy,
                    fallback_rate: fallbacks as f64 / out.decisions.len().max(1) as f64,
                });
            }
            write_table(&dir, "variants.csv", &rows)?;
        }
        other => return Err(Failure::Input(anyhow!("unknown suite `{other}` (ordering, k, self-consistency, variants)"))),
    }
    Ok(())
}

fn cmd_funnel(common: &Common) -> Result<(), Failure> {
    let path = common.run_dir().join(FUNNEL_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let file: FunnelFile = serde_json::from_str(&text).map_err(anyhow::Error::from)?;
    let s = file.summary;
    println!("{:<12} {:>8} {:>8}", "stage", "retained", "lost");
    println!("{:<12} {:>8} {:>8}", "total", s.total, "-");
    println!("{:<12} {:>8} {:>8}", "retrieval", s.retained_after_retrieval, s.lost_at_retrieval);
    println!("{:<12} {:>8} {:>8}", "rerank", s.retained_after_rerank, s.lost_at_rerank);
    println!("{:<12} {:>8} {:>8}", "selection", s.correct_after_selection, s.lost_at_selection);
    if !s.is_conserved() {
        return Err(Failure::Input(anyhow!("funnel counts in {} are not conserved", path.display())));
    }
    Ok(())
}

fn cmd_convert(
    common: &Common,
    adapter: &str,
    input: &Path,
    out: &Path,
    first_sentences: Option<usize>,
    unk_marker: Option<String>,
) -> Result<(), Failure> {
    let cfg = common.config()?;
    let mut spec = match cfg.adapters.get(adapter) {
        Some(s) => s.clone(),
        None => AdapterSpec::new(adapter.parse::<AdapterKind>().map_err(|e| anyhow!(e))?),
    };
    if let Some(n) = first_sentences {
        spec.description = DescriptionPolicy::FirstSentences(n);
    }
    if let Some(m) = unk_marker {
        spec.unk_marker = m;
    }
    let res = convert(&spec, input, out).map_err(anyhow::Error::from)?;
    println!(
        "wrote {} ({} entities) and {} ({} tasks)",
        res.kb_path.display(),
        res.entities,
        res.tasks_path.display(),
        res.tasks
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::BuildIndex { common, out } => cmd_build_index(&common, out),
        Command::Link { common, text, span, gold, candidates } => cmd_link(&common, &text, &span, gold, candidates),
        Command::Eval { common } => cmd_eval(&common),
        Command::Ablate { common, suite, orderings, k_values, sc_values } => {
            cmd_ablate(&common, &suite, orderings, k_values, sc_values)
        }
        Command::Funnel { common } => cmd_funnel(&common),
        Command::Convert { common, adapter, input, out, first_sentences, unk_marker } => {
            cmd_convert(&common, &adapter, &input, &out, first_sentences, unk_marker)
        }
    }
}

/// Joins the error chain, skipping causes already embedded in the outer message.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("LINKFORGE_LOG"))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(1)
        }
        Err(Failure::Backend(e)) => {
            eprintln!("backend error: {}", render(&e));
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_and_orderings() {
        assert_eq!(parse_span("30:35").unwrap(), (30, 35));
        assert!(parse_span("30-35").is_err());
        assert_eq!(parse_ordering("random", 9).unwrap(), Ordering::Random(9));
        assert_eq!(parse_ordering("random:2", 9).unwrap(), Ordering::Random(2));
        assert_eq!(parse_ordering("none_random", 4).unwrap(), Ordering::NoneRandom(4));
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 3\n[rerank]\nk = 4\n").unwrap();
        let common = Common {
            config: Some(path),
            k: Some(6),
            ..Common::default()
        };
        let cfg = common.config().unwrap();
        assert_eq!(cfg.pipeline.rerank.k, 6);
        assert_eq!(cfg.pipeline.seed, 3);
    }
}
