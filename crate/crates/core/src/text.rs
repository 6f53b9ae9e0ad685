//! Tokenization, rule-based sentence splitting and context windowing.

/// Case-folds and splits on non-alphanumeric characters, dropping empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "Mr.", "Mrs.", "Ms.", "Dr.", "Prof.", "St.", "Jr.", "Sr.", "vs.", "e.g.", "i.e.", "etc.", "U.S.", "No.",
    "Mt.", "Gen.", "Col.", "Lt.", "Capt.", "Sgt.",
];

#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    abbreviations: Vec<String>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        Self::new(DEFAULT_ABBREVIATIONS.iter().map(|s| s.to_string()))
    }
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

impl SentenceSplitter {
    pub fn new(abbreviations: impl IntoIterator<Item = String>) -> Self {
        Self {
            abbreviations: abbreviations.into_iter().filter(|a| !a.is_empty()).collect(),
        }
    }

    /// Byte ranges `(start, end)` of each sentence, trimmed of surrounding whitespace.
    pub fn sentence_spans(&self, text: &str) -> Vec<(usize, usize)> {
        let protected = self.protected_ranges(text);
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut spans = Vec::new();
        let mut start = 0usize;
        let mut i = 0usize;
        while i < chars.len() {
            let (pos, c) = chars[i];
            if is_terminal(c) && !protected.iter().any(|&(s, e)| pos >= s && pos < e) {
                // Absorb runs of terminators and closing quotes/brackets.
                let mut j = i + 1;
                while j < chars.len() && (is_terminal(chars[j].1) || is_closer(chars[j].1)) {
                    j += 1;
                }
                let end = chars.get(j).map(|&(b, _)| b).unwrap_or(text.len());
                let mut k = j;
                while k < chars.len() && chars[k].1.is_whitespace() {
                    k += 1;
                }
                let breaks = if j == chars.len() || k == chars.len() {
                    true
                } else {
                    k > j && starts_sentence(chars[k].1)
                };
                if breaks {
                    push_trimmed(text, start, end, &mut spans);
                    start = end;
                    i = k;
                    continue;
                }
                i = j;
                continue;
            }
            i += 1;
        }
        push_trimmed(text, start, text.len(), &mut spans);
        spans
    }

    pub fn split<'a>(&self, text: &'a str) -> Vec<&'a str> {
        self.sentence_spans(text)
            .into_iter()
            .map(|(s, e)| &text[s..e])
            .collect()
    }

    /// Keeps the first `n` sentences verbatim (including inner spacing).
    pub fn first_sentences(&self, text: &str, n: usize) -> String {
        let spans = self.sentence_spans(text);
        match (spans.first(), spans.get(n.saturating_sub(1).min(spans.len().saturating_sub(1)))) {
            (Some(&(s, _)), Some(&(_, e))) if n > 0 => text[s..e].to_string(),
            _ => String::new(),
        }
    }

    fn protected_ranges(&self, text: &str) -> Vec<(usize, usize)> {
        let mut ranges = Vec::new();
        for abbr in &self.abbreviations {
            for (pos, _) in text.match_indices(abbr.as_str()) {
                let before_ok = text[..pos]
                    .chars()
                    .next_back()
                    .is_none_or(|c| !c.is_alphanumeric());
                if before_ok {
                    ranges.push((pos, pos + abbr.len()));
                }
            }
        }
        ranges
    }
}

fn starts_sentence(c: char) -> bool {
    c.is_uppercase() || c.is_numeric() || matches!(c, '"' | '\'' | '(' | '[' | '\u{201c}')
}

fn push_trimmed(text: &str, start: usize, end: usize, spans: &mut Vec<(usize, usize)>) {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trimmed = slice.trim();
    if !trimmed.is_empty() {
        spans.push((start + lead, start + lead + trimmed.len()));
    }
}

pub fn sentence_split(text: &str) -> Vec<&str> {
    SentenceSplitter::default().split(text)
}

/// Text of the sentence holding byte offset `byte_pos` plus `radius`
/// sentences on either side.
pub fn sentence_window(splitter: &SentenceSplitter, text: &str, byte_pos: usize, radius: usize) -> String {
    let spans = splitter.sentence_spans(text);
    if spans.is_empty() {
        return String::new();
    }
    let idx = spans
        .iter()
        .position(|&(_, e)| byte_pos < e)
        .unwrap_or(spans.len() - 1);
    let lo = idx.saturating_sub(radius);
    let hi = (idx + radius).min(spans.len() - 1);
    text[spans[lo].0..spans[hi].1].to_string()
}

/// Character window of at most `limit` chars centered on `[start, end)`.
/// Returns the window start offset; the mention is kept whole when it fits.
pub fn centered_window(text_len: usize, start: usize, end: usize, limit: usize) -> (usize, usize) {
    if text_len <= limit {
        return (0, text_len);
    }
    let mention = end - start;
    if mention >= limit {
        return (start, start + limit);
    }
    let slack = limit - mention;
    let mut left = start.saturating_sub(slack / 2);
    let mut right = left + limit;
    if right > text_len {
        right = text_len;
        left = text_len - limit;
    }
    (left, right)
}
