//! Converters from benchmark layouts to the canonical `kb.jsonl` and
//! `tasks.jsonl` files.
//!
//! Input layouts, relative to the input directory:
//!
//! * `wikia_dump`: `documents/<domain>.json` (JSONL of `document_id`, `title`,
//!   `text`), `mentions.json` (JSONL of `mention_id`, `context_document_id`,
//!   inclusive whitespace-token `start_index`/`end_index`,
//!   `label_document_id`, optional `corpus`) and `candidates.json` (JSONL of
//!   `mention_id` plus `candidates` or `tfidf_candidates`).
//! * `taxonomy`: `taxonomy.csv` (`conceptUri`, `preferredLabel`,
//!   `description`, `altLabels` separated by newlines or `|`) and
//!   `mentions.jsonl` (`id`, `text`, `mention_start`, `mention_end`, `gold`).
//! * `acronym_dict`: `dictionary.json` (object from short form to long forms)
//!   and `mentions.jsonl` (`id`, `text`, `acronym`, `long_form`, optional
//!   offsets).
//! * `generic_jsonl`: `kb.jsonl` and `tasks.jsonl`, copied unchanged.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{load_kb_file, mark_mention, write_kb, KbError, KbRecord};
use crate::pipeline::{load_tasks_file, validate_tasks, write_tasks, MentionTask, PipelineError, UNK_GOLD};
use crate::text::{SentenceSplitter, DEFAULT_ABBREVIATIONS};

pub const KB_FILE: &str = "kb.jsonl";
pub const TASKS_FILE: &str = "tasks.jsonl";

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("{file}, record {record}: {reason}")]
    SchemaMismatch { file: String, record: usize, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("converted knowledge base does not load: {0}")]
    Kb(#[from] KbError),
    #[error("converted tasks do not load: {0}")]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    WikiaDump,
    Taxonomy,
    AcronymDict,
    GenericJsonl,
}

impl std::str::FromStr for AdapterKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "wikia_dump" => Ok(AdapterKind::WikiaDump),
            "taxonomy" => Ok(AdapterKind::Taxonomy),
            "acronym_dict" => Ok(AdapterKind::AcronymDict),
            "generic_jsonl" => Ok(AdapterKind::GenericJsonl),
            other => Err(format!("unknown adapter kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "n")]
pub enum DescriptionPolicy {
    #[default]
    Verbatim,
    FirstSentences(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub kind: AdapterKind,
    #[serde(default)]
    pub description: DescriptionPolicy,
    /// Source-side gold label meaning "no match". Output always uses `__UNK__`.
    #[serde(default = "default_unk_marker")]
    pub unk_marker: String,
    /// Abbreviations protected by the sentence splitter.
    #[serde(default)]
    pub abbreviations: Option<Vec<String>>,
}

fn default_unk_marker() -> String {
    "UNK".to_string()
}

impl AdapterSpec {
    pub fn new(kind: AdapterKind) -> Self {
        Self {
            kind,
            description: DescriptionPolicy::Verbatim,
            unk_marker: default_unk_marker(),
            abbreviations: None,
        }
    }

    fn splitter(&self) -> SentenceSplitter {
        match &self.abbreviations {
            Some(a) => SentenceSplitter::new(a.iter().cloned()),
            None => SentenceSplitter::new(DEFAULT_ABBREVIATIONS.iter().map(|s| s.to_string())),
        }
    }

    fn describe(&self, splitter: &SentenceSplitter, text: &str) -> String {
        match self.description {
            DescriptionPolicy::Verbatim => text.to_string(),
            DescriptionPolicy::FirstSentences(n) => splitter.first_sentences(text, n),
        }
    }

    fn is_unk_label(&self, label: Option<&str>) -> bool {
        match label.map(str::trim) {
            None | Some("") => true,
            Some(l) => l == self.unk_marker || l == UNK_GOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvertOutput {
    pub kb_path: PathBuf,
    pub tasks_path: PathBuf,
    pub entities: usize,
    pub tasks: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AdapterError + '_ {
    move |source| AdapterError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn mismatch(file: &Path, record: usize, reason: impl Into<String>) -> AdapterError {
    AdapterError::SchemaMismatch {
        file: file.display().to_string(),
        record,
        reason: reason.into(),
    }
}

/// Parses a JSONL file; records are numbered from 1.
fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, AdapterError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| mismatch(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

/// Converts `input` into canonical files under `out_dir`, then reloads them
/// to check they validate.
pub fn convert(spec: &AdapterSpec, input: &Path, out_dir: &Path) -> Result<ConvertOutput, AdapterError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let kb_path = out_dir.join(KB_FILE);
    let tasks_path = out_dir.join(TASKS_FILE);
    match spec.kind {
        AdapterKind::GenericJsonl => {
            for (name, dst) in [(KB_FILE, &kb_path), (TASKS_FILE, &tasks_path)] {
                let src = input.join(name);
                fs::copy(&src, dst).map_err(io_err(&src))?;
            }
        }
        kind => {
            let (records, tasks) = match kind {
                AdapterKind::WikiaDump => wikia(spec, input)?,
                AdapterKind::Taxonomy => taxonomy(spec, input)?,
                AdapterKind::AcronymDict => acronyms(input)?,
                AdapterKind::GenericJsonl => unreachable!(),
            };
            let mut kb_out = Vec::new();
            write_kb(&mut kb_out, &records).map_err(io_err(&kb_path))?;
            fs::write(&kb_path, kb_out).map_err(io_err(&kb_path))?;
            let mut tasks_out = Vec::new();
            write_tasks(&mut tasks_out, &tasks)?;
            fs::write(&tasks_path, tasks_out).map_err(io_err(&tasks_path))?;
        }
    }
    let (kb, aliases) = load_kb_file(&kb_path)?;
    aliases.validate(&kb)?;
    let tasks = load_tasks_file(&tasks_path)?;
    validate_tasks(&tasks, &kb)?;
    Ok(ConvertOutput {
        kb_path,
        tasks_path,
        entities: kb.len(),
        tasks: tasks.len(),
    })
}

#[derive(Deserialize)]
struct WikiaDocument {
    document_id: String,
    title: String,
    text: String,
}

#[derive(Deserialize)]
struct WikiaMention {
    mention_id: String,
    context_document_id: String,
    start_index: usize,
    end_index: usize,
    label_document_id: String,
    #[serde(default)]
    corpus: Option<String>,
}

#[derive(Deserialize)]
struct WikiaCandidates {
    mention_id: String,
    #[serde(alias = "tfidf_candidates")]
    candidates: Vec<String>,
}

/// Character span covering whitespace tokens `first..=last`.
pub fn token_span_to_chars(text: &str, first: usize, last: usize) -> Option<(usize, usize)> {
    if last < first {
        return None;
    }
    let mut token = 0usize;
    let mut start = None;
    let mut in_token = false;
    let mut last_end = 0usize;
    for (ci, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            if in_token {
                if token == last {
                    return start.map(|s| (s, ci));
                }
                token += 1;
                in_token = false;
            }
        } else {
            if !in_token {
                in_token = true;
                if token == first {
                    start = Some(ci);
                }
            }
            last_end = ci + 1;
        }
    }
    if in_token && token == last {
        start.map(|s| (s, last_end))
    } else {
        None
    }
}

fn wikia(spec: &AdapterSpec, input: &Path) -> Result<(Vec<KbRecord>, Vec<MentionTask>), AdapterError> {
    let splitter = spec.splitter();
    let doc_dir = input.join("documents");
    let mut files: Vec<PathBuf> = fs::read_dir(&doc_dir)
        .map_err(io_err(&doc_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json" || x == "jsonl"))
        .collect();
    files.sort();

    let mut records = Vec::new();
    let mut texts: HashMap<String, (String, String)> = HashMap::new();
    for file in &files {
        let domain = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for (i, doc) in read_jsonl::<WikiaDocument>(file)?.into_iter().enumerate() {
            if doc.title.trim().is_empty() {
                return Err(mismatch(file, i + 1, "empty title"));
            }
            if texts.contains_key(&doc.document_id) {
                return Err(mismatch(file, i + 1, format!("duplicate document_id `{}`", doc.document_id)));
            }
            let description = spec.describe(&splitter, &doc.text);
            records.push(KbRecord {
                id: doc.document_id.clone(),
                name: doc.title,
                description: (!description.is_empty()).then_some(description),
                aliases: Vec::new(),
            });
            texts.insert(doc.document_id, (doc.text, domain.clone()));
        }
    }

    let cand_path = input.join("candidates.json");
    let mut candidates: HashMap<String, Vec<String>> = HashMap::new();
    if cand_path.exists() {
        for (i, c) in read_jsonl::<WikiaCandidates>(&cand_path)?.into_iter().enumerate() {
            if let Some(bad) = c.candidates.iter().find(|id| !texts.contains_key(*id)) {
                return Err(mismatch(&cand_path, i + 1, format!("unknown candidate `{bad}`")));
            }
            candidates.insert(c.mention_id, c.candidates);
        }
    }

    let mention_path = input.join("mentions.json");
    let mut tasks = Vec::new();
    for (i, m) in read_jsonl::<WikiaMention>(&mention_path)?.into_iter().enumerate() {
        let record = i + 1;
        let (text, domain) = texts
            .get(&m.context_document_id)
            .ok_or_else(|| mismatch(&mention_path, record, format!("unknown context document `{}`", m.context_document_id)))?;
        if !texts.contains_key(&m.label_document_id) {
            return Err(mismatch(&mention_path, record, format!("unknown label document `{}`", m.label_document_id)));
        }
        let (start, end) = token_span_to_chars(text, m.start_index, m.end_index)
            .ok_or_else(|| mismatch(&mention_path, record, "token span out of range"))?;
        let ctx = mark_mention(text, start, end).map_err(|e| mismatch(&mention_path, record, e.to_string()))?;
        let mut task = MentionTask::new(&m.mention_id, ctx)
            .with_gold(m.label_document_id)
            .with_domain(m.corpus.unwrap_or_else(|| domain.clone()));
        task.candidates = candidates.remove(&m.mention_id);
        tasks.push(task);
    }
    Ok((records, tasks))
}

#[derive(Deserialize)]
struct TaxonomyRow {
    #[serde(rename = "conceptUri")]
    uri: String,
    #[serde(rename = "preferredLabel")]
    label: String,
    #[serde(default)]
    description: String,
    #[serde(rename = "altLabels", default)]
    alt_labels: String,
}

#[derive(Deserialize)]
struct SpanMention {
    id: String,
    text: String,
    mention_start: usize,
    mention_end: usize,
    #[serde(default)]
    gold: Option<String>,
    #[serde(default)]
    domain: Option<String>,
}

fn taxonomy(spec: &AdapterSpec, input: &Path) -> Result<(Vec<KbRecord>, Vec<MentionTask>), AdapterError> {
    let splitter = spec.splitter();
    let csv_path = input.join("taxonomy.csv");
    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| mismatch(&csv_path, 0, e.to_string()))?;
    let mut records = Vec::new();
    let mut known = HashMap::new();
    for (i, row) in reader.deserialize::<TaxonomyRow>().enumerate() {
        let record = i + 1;
        let row = row.map_err(|e| mismatch(&csv_path, record, e.to_string()))?;
        if row.label.trim().is_empty() {
            return Err(mismatch(&csv_path, record, "empty preferredLabel"));
        }
        if known.insert(row.uri.clone(), ()).is_some() {
            return Err(mismatch(&csv_path, record, format!("duplicate conceptUri `{}`", row.uri)));
        }
        let mut aliases = vec![row.label.clone()];
        aliases.extend(
            row.alt_labels
                .split(['\n', '|'])
                .map(str::trim)
                .filter(|a| !a.is_empty())
                .map(str::to_string),
        );
        let description = spec.describe(&splitter, row.description.trim());
        records.push(KbRecord {
            id: row.uri,
            name: row.label,
            description: (!description.is_empty()).then_some(description),
            aliases,
        });
    }

    let mention_path = input.join("mentions.jsonl");
    let mut tasks = Vec::new();
    for (i, m) in read_jsonl::<SpanMention>(&mention_path)?.into_iter().enumerate() {
        let ctx = mark_mention(&m.text, m.mention_start, m.mention_end)
            .map_err(|e| mismatch(&mention_path, i + 1, e.to_string()))?;
        let gold = match m.gold.as_deref() {
            g if spec.is_unk_label(g) => UNK_GOLD.to_string(),
            Some(g) if known.contains_key(g) => g.to_string(),
            _ => UNK_GOLD.to_string(),
        };
        let mut task = MentionTask::new(m.id, ctx).with_gold(gold);
        task.domain = m.domain;
        tasks.push(task);
    }
    Ok((records, tasks))
}

#[derive(Deserialize)]
struct AcronymMention {
    id: String,
    text: String,
    acronym: String,
    #[serde(default)]
    long_form: Option<String>,
    #[serde(default)]
    mention_start: Option<usize>,
    #[serde(default)]
    mention_end: Option<usize>,
    #[serde(default)]
    domain: Option<String>,
}

fn acronym_entity_id(acronym: &str, i: usize) -> String {
    format!("{acronym}::{i}")
}

/// First whole-word occurrence of `word`, in characters.
fn find_word(text: &str, word: &str) -> Option<(usize, usize)> {
    for (b, _) in text.match_indices(word) {
        let before = text[..b].chars().next_back();
        let after = text[b + word.len()..].chars().next();
        if before.is_none_or(|c| !c.is_alphanumeric()) && after.is_none_or(|c| !c.is_alphanumeric()) {
            let start = text[..b].chars().count();
            return Some((start, start + word.chars().count()));
        }
    }
    None
}

fn acronyms(input: &Path) -> Result<(Vec<KbRecord>, Vec<MentionTask>), AdapterError> {
    let dict_path = input.join("dictionary.json");
    let raw = fs::read_to_string(&dict_path).map_err(io_err(&dict_path))?;
    let dict: BTreeMap<String, Vec<String>> =
        serde_json::from_str(&raw).map_err(|e| mismatch(&dict_path, 1, e.to_string()))?;
    let mut records = Vec::new();
    for (acronym, forms) in &dict {
        for (i, form) in forms.iter().enumerate() {
            if form.trim().is_empty() {
                return Err(mismatch(&dict_path, 1, format!("empty long form for `{acronym}`")));
            }
            records.push(KbRecord {
                id: acronym_entity_id(acronym, i),
                name: form.clone(),
                description: None,
                aliases: vec![acronym.clone()],
            });
        }
    }

    let mention_path = input.join("mentions.jsonl");
    let mut tasks = Vec::new();
    for (i, m) in read_jsonl::<AcronymMention>(&mention_path)?.into_iter().enumerate() {
        let record = i + 1;
        let (start, end) = match (m.mention_start, m.mention_end) {
            (Some(s), Some(e)) => (s, e),
            _ => find_word(&m.text, &m.acronym)
                .ok_or_else(|| mismatch(&mention_path, record, format!("acronym `{}` not found in text", m.acronym)))?,
        };
        let ctx = mark_mention(&m.text, start, end).map_err(|e| mismatch(&mention_path, record, e.to_string()))?;
        let forms = dict.get(&m.acronym).map(Vec::as_slice).unwrap_or(&[]);
        let gold = m
            .long_form
            .as_deref()
            .and_then(|lf| forms.iter().position(|f| f == lf))
            .map_or_else(|| UNK_GOLD.to_string(), |p| acronym_entity_id(&m.acronym, p));
        let ids = (0..forms.len()).map(|p| acronym_entity_id(&m.acronym, p));
        let mut task = MentionTask::new(m.id, ctx).with_gold(gold).with_candidates(ids);
        task.domain = m.domain;
        tasks.push(task);
    }
    Ok((records, tasks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::load_kb_file;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, content: &str) {
        let path = dir.join(name);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, content).unwrap();
    }

    #[test]
    fn token_spans() {
        let text = "The  Dark Knight rises.";
        assert_eq!(token_span_to_chars(text, 1, 2), Some((5, 16)));
        assert_eq!(token_span_to_chars(text, 3, 3), Some((17, 23)));
        assert_eq!(token_span_to_chars(text, 3, 4), None);
        assert_eq!(token_span_to_chars(text, 2, 1), None);
    }

    #[test]
    fn wikia_first_three_sentences() {
        let input = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        write(
            input.path(),
            "documents/lego.json",
            &[
                r#"{"document_id":"D1","title":"Batman (Lego)","text":"Batman is a minifigure. He wears a cape. He has a belt. He drives a car. He fights crime."}"#,
                r#"{"document_id":"D2","title":"Robin","text":"Robin is a sidekick. Batman met Robin."}"#,
            ]
            .join("\n"),
        );
        write(
            input.path(),
            "mentions.json",
            r#"{"mention_id":"M1","context_document_id":"D2","start_index":4,"end_index":4,"label_document_id":"D1"}"#,
        );
        write(input.path(), "candidates.json", r#"{"mention_id":"M1","tfidf_candidates":["D2","D1"]}"#);
        let spec = AdapterSpec {
            description: DescriptionPolicy::FirstSentences(3),
            ..AdapterSpec::new(AdapterKind::WikiaDump)
        };
        let res = convert(&spec, input.path(), out.path()).unwrap();
        assert_eq!((res.entities, res.tasks), (2, 1));
        let (kb, _) = load_kb_file(&res.kb_path).unwrap();
        assert_eq!(kb.get("D1").unwrap().description, "Batman is a minifigure. He wears a cape. He has a belt.");
        let tasks = load_tasks_file(&res.tasks_path).unwrap();
        assert_eq!(tasks[0].context.surface(), "Batman");
        assert_eq!(tasks[0].candidates.as_deref(), Some(&["D2".to_string(), "D1".to_string()][..]));
        assert_eq!(tasks[0].domain.as_deref(), Some("lego"));
    }

    #[test]
    fn wikia_schema_mismatch_names_record() {
        let input = tempfile::tempdir().unwrap();
        write(input.path(), "documents/a.json", r#"{"document_id":"D1","title":"T","text":"x"}"#);
        write(
            input.path(),
            "mentions.json",
            "\n{\"mention_id\":\"M1\",\"context_document_id\":\"D1\",\"start_index\":0,\"end_index\":0,\"label_document_id\":\"D1\"}\n{\"mention_id\":\"M2\"}",
        );
        let err = convert(&AdapterSpec::new(AdapterKind::WikiaDump), input.path(), &input.path().join("out")).unwrap_err();
        assert!(matches!(err, AdapterError::SchemaMismatch { record: 3, .. }), "{err}");
    }

    #[test]
    fn taxonomy_marks_unk() {
        let input = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        write(
            input.path(),
            "taxonomy.csv",
            "conceptUri,preferredLabel,description,altLabels\nhttp://esco/1,baker,Bakes bread.,\"pastry chef\nbread maker\"\n",
        );
        write(
            input.path(),
            "mentions.jsonl",
            &[
                r#"{"id":"a","text":"I am a baker.","mention_start":7,"mention_end":12,"gold":"http://esco/1"}"#,
                r#"{"id":"b","text":"I am a wizard.","mention_start":7,"mention_end":13,"gold":null}"#,
                r#"{"id":"c","text":"I am a pilot.","mention_start":7,"mention_end":12,"gold":"http://esco/99"}"#,
                r#"{"id":"d","text":"I am a pilot.","mention_start":7,"mention_end":12,"gold":"UNK"}"#,
            ]
            .join("\n"),
        );
        let res = convert(&AdapterSpec::new(AdapterKind::Taxonomy), input.path(), out.path()).unwrap();
        let tasks = load_tasks_file(&res.tasks_path).unwrap();
        let golds: Vec<_> = tasks.iter().map(|t| t.gold_id.clone().unwrap()).collect();
        assert_eq!(golds, ["http://esco/1", UNK_GOLD, UNK_GOLD, UNK_GOLD]);
        let (_, aliases) = load_kb_file(&res.kb_path).unwrap();
        assert_eq!(aliases.lookup("Bread Maker"), ["http://esco/1"]);
    }

    #[test]
    fn acronym_dictionary() {
        let input = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        write(input.path(), "dictionary.json", r#"{"EL":["entity linking","electroluminescence"]}"#);
        write(
            input.path(),
            "mentions.jsonl",
            &[
                r#"{"id":"1","text":"We study EL for text.","acronym":"EL","long_form":"entity linking"}"#,
                r#"{"id":"2","text":"HELP with EL panels.","acronym":"EL","long_form":"something else"}"#,
            ]
            .join("\n"),
        );
        let res = convert(&AdapterSpec::new(AdapterKind::AcronymDict), input.path(), out.path()).unwrap();
        let tasks = load_tasks_file(&res.tasks_path).unwrap();
        assert_eq!(tasks[0].gold_id.as_deref(), Some("EL::0"));
        assert_eq!(tasks[1].gold_id.as_deref(), Some(UNK_GOLD));
        assert_eq!(tasks[1].context.mention_start(), 10);
        assert_eq!(tasks[0].candidates.as_ref().unwrap(), &["EL::0", "EL::1"]);
    }

    #[test]
    fn generic_passthrough_is_byte_identical() {
        let input = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let kb = "{\"id\": \"Q1\", \"name\": \"Paris\"}\n\n{\"id\":\"Q2\",\"name\":\"France\",\"aliases\":[\"FR\"]}\n";
        let tasks = "{\"id\":\"m\",\"text\":\"In Paris.\",\"mention_start\":3,\"mention_end\":8,\"gold_id\":\"Q1\"}\n";
        write(input.path(), KB_FILE, kb);
        write(input.path(), TASKS_FILE, tasks);
        let res = convert(&AdapterSpec::new(AdapterKind::GenericJsonl), input.path(), out.path()).unwrap();
        assert_eq!(fs::read_to_string(res.kb_path).unwrap(), kb);
        assert_eq!(fs::read_to_string(res.tasks_path).unwrap(), tasks);
    }

    proptest! {
        #[test]
        fn first_n_never_empty(sentences in proptest::collection::vec("[A-Z][a-z]{1,8}( [a-z]{1,8}){0,4}\\.", 1..8), n in 1usize..5) {
            let spec = AdapterSpec { description: DescriptionPolicy::FirstSentences(n), ..AdapterSpec::new(AdapterKind::WikiaDump) };
            let text = sentences.join(" ");
            let d = spec.describe(&spec.splitter(), &text);
            prop_assert!(!d.is_empty());
            prop_assert!(text.starts_with(&d));
        }
    }
}
