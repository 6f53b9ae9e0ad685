//! Entity universe, marked mentions, entity verbalization and alias dictionaries.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator placed between an entity name and its description.
pub const VERBALIZATION_SEPARATOR: &str = ": ";

#[derive(Debug, Error)]
pub enum KbError {
    #[error("malformed record on line {line_no}: {reason}")]
    MalformedRecord { line_no: usize, reason: String },
    #[error("duplicate entity id `{0}`")]
    DuplicateId(String),
    #[error("entity `{0}` has an empty name")]
    EmptyName(String),
    #[error("alias `{alias}` references unknown entity `{id}`")]
    UnknownAliasTarget { alias: String, id: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MentionError {
    #[error("mention offsets {start}..{end} out of range for text of length {len}")]
    OffsetOutOfRange { start: usize, end: usize, len: usize },
    #[error("mention span is empty")]
    EmptyMention,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
}

impl Entity {
    pub fn new(id: impl Into<String>, name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            description: description.into(),
        }
    }
}

/// Renders an entity as `name: description`, or just `name` when the
/// description is empty.
pub fn verbalize_entity(entity: &Entity) -> String {
    verbalize(&entity.name, &entity.description)
}

pub fn verbalize(name: &str, description: &str) -> String {
    if description.is_empty() {
        name.to_string()
    } else {
        let mut out = String::with_capacity(name.len() + VERBALIZATION_SEPARATOR.len() + description.len());
        out.push_str(name);
        out.push_str(VERBALIZATION_SEPARATOR);
        out.push_str(description);
        out
    }
}

/// An immutable, insertion-ordered collection of entities keyed by id.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    source: String,
    entities: Vec<Entity>,
    by_id: HashMap<String, usize>,
}

impl KnowledgeBase {
    pub fn new(source: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            ..Self::default()
        }
    }

    /// Builds a KB from entities, rejecting duplicate ids and empty names.
    pub fn from_entities(
        source: impl Into<String>,
        entities: impl IntoIterator<Item = Entity>,
    ) -> Result<Self, KbError> {
        let mut kb = Self::new(source);
        for entity in entities {
            kb.insert(entity)?;
        }
        Ok(kb)
    }

    fn insert(&mut self, entity: Entity) -> Result<(), KbError> {
        if entity.name.is_empty() {
            return Err(KbError::EmptyName(entity.id));
        }
        if self.by_id.contains_key(&entity.id) {
            return Err(KbError::DuplicateId(entity.id));
        }
        self.by_id.insert(entity.id.clone(), self.entities.len());
        self.entities.push(entity);
        Ok(())
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Entity> {
        self.by_id.get(id).map(|&i| &self.entities[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Insertion position of an entity, used for stable tie-breaking.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn iter(&self) -> impl Iterator<Item = &Entity> {
        self.entities.iter()
    }
}

/// Case-folds, trims and collapses internal whitespace.
pub fn normalize_surface(surface: &str) -> String {
    surface
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Maps normalized surface strings to prior-ordered entity id lists.
#[derive(Debug, Clone, Default)]
pub struct AliasDictionary {
    map: HashMap<String, Vec<String>>,
}

impl AliasDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `id` to the list for `surface` unless it is already present.
    pub fn insert(&mut self, surface: &str, id: impl Into<String>) {
        let id = id.into();
        let ids = self.map.entry(normalize_surface(surface)).or_default();
        if !ids.contains(&id) {
            ids.push(id);
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Checks that every referenced id resolves in `kb`.
    pub fn validate(&self, kb: &KnowledgeBase) -> Result<(), KbError> {
        for (alias, ids) in &self.map {
            if let Some(id) = ids.iter().find(|id| !kb.contains(id)) {
                return Err(KbError::UnknownAliasTarget {
                    alias: alias.clone(),
                    id: id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn lookup(&self, surface: &str) -> &[String] {
        self.map
            .get(&normalize_surface(surface))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

/// Prior-ordered candidate ids for a surface string; empty when unknown.
pub fn dict_candidates(dict: &AliasDictionary, surface: &str) -> Vec<String> {
    dict.lookup(surface).to_vec()
}

/// One line of a knowledge-base file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbRecord {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

/// Writes records as line-delimited JSON.
pub fn write_kb<W: std::io::Write>(mut w: W, records: &[KbRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a line-delimited JSON knowledge base. Blank lines are skipped.
pub fn load_kb<R: BufRead>(reader: R, source: &str) -> Result<(KnowledgeBase, AliasDictionary), KbError> {
    let mut kb = KnowledgeBase::new(source);
    let mut aliases = AliasDictionary::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: KbRecord = serde_json::from_str(&line).map_err(|e| KbError::MalformedRecord {
            line_no,
            reason: e.to_string(),
        })?;
        if record.name.is_empty() {
            return Err(KbError::MalformedRecord {
                line_no,
                reason: "empty name".into(),
            });
        }
        for alias in &record.aliases {
            aliases.insert(alias, record.id.clone());
        }
        kb.insert(Entity {
            id: record.id,
            name: record.name,
            description: record.description.unwrap_or_default(),
        })?;
    }
    Ok((kb, aliases))
}

pub fn load_kb_file(path: &std::path::Path) -> Result<(KnowledgeBase, AliasDictionary), KbError> {
    let file = std::fs::File::open(path)?;
    load_kb(std::io::BufReader::new(file), &path.display().to_string())
}

/// A context with a single mention span, in character offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedContext {
    text: String,
    mention_start: usize,
    mention_end: usize,
    rendered: String,
}

impl MarkedContext {
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn mention_start(&self) -> usize {
        self.mention_start
    }

    pub fn mention_end(&self) -> usize {
        self.mention_end
    }

    /// The context with the mention wrapped in square brackets.
    pub fn rendered(&self) -> &str {
        &self.rendered
    }

    pub fn surface(&self) -> String {
        self.text
            .chars()
            .skip(self.mention_start)
            .take(self.mention_end - self.mention_start)
            .collect()
    }

    /// Byte range of the mention inside `text`.
    pub fn byte_span(&self) -> (usize, usize) {
        let start = char_to_byte(&self.text, self.mention_start);
        let end = char_to_byte(&self.text, self.mention_end);
        (start, end)
    }

    /// Removes the two inserted brackets, recovering the original text.
    pub fn strip_brackets(&self) -> String {
        let mut out = String::with_capacity(self.text.len());
        for (i, c) in self.rendered.chars().enumerate() {
            if i == self.mention_start || i == self.mention_end + 1 {
                continue;
            }
            out.push(c);
        }
        out
    }
}

fn char_to_byte(text: &str, char_idx: usize) -> usize {
    text.char_indices()
        .nth(char_idx)
        .map(|(b, _)| b)
        .unwrap_or(text.len())
}

pub fn mark_mention(text: &str, start: usize, end: usize) -> Result<MarkedContext, MentionError> {
    let len = text.chars().count();
    if start > len || end > len {
        return Err(MentionError::OffsetOutOfRange { start, end, len });
    }
    if end <= start {
        return Err(MentionError::EmptyMention);
    }
    let bstart = char_to_byte(text, start);
    let bend = char_to_byte(text, end);
    let mut rendered = String::with_capacity(text.len() + 2);
    rendered.push_str(&text[..bstart]);
    rendered.push('[');
    rendered.push_str(&text[bstart..bend]);
    rendered.push(']');
    rendered.push_str(&text[bend..]);
    Ok(MarkedContext {
        text: text.to_string(),
        mention_start: start,
        mention_end: end,
        rendered,
    })
}
