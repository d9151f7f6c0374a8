//! Annotated and plain-text corpora in the `word/TAG` line format.
//!
//! One sentence per line, tokens separated by whitespace. Each annotated token
//! is split at the *rightmost* tag separator, so words may themselves contain
//! the separator (`3/4/CD` is the word `3/4` tagged `CD`).

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    /// A token had no separator, or splitting it left an empty word or tag.
    /// `line` and `column` are 1-based; `column` counts characters.
    #[error("malformed token at line {line}, column {column}")]
    MalformedToken { line: usize, column: usize },
    #[error("invalid tag separator {0:?}: must be a single non-whitespace character")]
    InvalidSeparator(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token {
    pub word: String,
    pub tag: String,
}

impl Token {
    pub fn new(word: impl Into<String>, tag: impl Into<String>) -> Self {
        Self {
            word: word.into(),
            tag: tag.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    /// Ordinal of the source line among non-blank lines.
    pub index: usize,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.word.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnnotatedCorpus {
    pub sentences: Vec<Sentence>,
    pub word_count: usize,
}

impl AnnotatedCorpus {
    /// Builds a corpus from sentences, renumbering indexes consecutively.
    pub fn from_sentences(sentences: impl IntoIterator<Item = Vec<Token>>) -> Self {
        let sentences: Vec<Sentence> = sentences
            .into_iter()
            .filter(|tokens| !tokens.is_empty())
            .enumerate()
            .map(|(index, tokens)| Sentence { index, tokens })
            .collect();
        let word_count = sentences.iter().map(Sentence::len).sum();
        Self {
            sentences,
            word_count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Returns the leading portion of the corpus holding exactly
    /// `min(words, word_count)` tokens; the last sentence may be cut short.
    pub fn truncate_words(&self, words: usize) -> AnnotatedCorpus {
        let mut remaining = words;
        let mut out = Vec::new();
        for sentence in &self.sentences {
            if remaining == 0 {
                break;
            }
            let take = sentence.len().min(remaining);
            out.push(sentence.tokens[..take].to_vec());
            remaining -= take;
        }
        AnnotatedCorpus::from_sentences(out)
    }

    /// Plain `(index, line)` pairs with the tags stripped.
    pub fn plain_lines(&self) -> Vec<(usize, String)> {
        self.sentences
            .iter()
            .map(|s| (s.index, s.words().collect::<Vec<_>>().join(" ")))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorpusConfig {
    tag_separator: char,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { tag_separator: '/' }
    }
}

impl CorpusConfig {
    pub fn new(tag_separator: char) -> Result<Self, CorpusError> {
        if tag_separator.is_whitespace() {
            return Err(CorpusError::InvalidSeparator(tag_separator.to_string()));
        }
        Ok(Self { tag_separator })
    }

    /// Parses a separator given as a string, which must hold exactly one char.
    pub fn from_str_separator(sep: &str) -> Result<Self, CorpusError> {
        let mut chars = sep.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::new(c),
            _ => Err(CorpusError::InvalidSeparator(sep.to_string())),
        }
    }

    pub fn tag_separator(&self) -> char {
        self.tag_separator
    }
}

/// Splits `word<SEP>tag` at the rightmost separator.
pub fn split_token(token: &str, separator: char) -> Option<(&str, &str)> {
    let at = token.rfind(separator)?;
    let (word, rest) = token.split_at(at);
    let tag = &rest[separator.len_utf8()..];
    if word.is_empty() || tag.is_empty() {
        return None;
    }
    Some((word, tag))
}

/// Non-blank lines of `text` with their 1-based source line numbers.
fn non_blank_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(n, line)| (n + 1, line))
}

pub fn parse_annotated(text: &str, config: &CorpusConfig) -> Result<AnnotatedCorpus, CorpusError> {
    let sep = config.tag_separator;
    let mut sentences = Vec::new();
    let mut word_count = 0;
    for (index, (line_no, line)) in non_blank_lines(text).enumerate() {
        let mut tokens = Vec::new();
        for (offset, raw) in whitespace_tokens(line) {
            let (word, tag) = split_token(raw, sep).ok_or_else(|| CorpusError::MalformedToken {
                line: line_no,
                column: line[..offset].chars().count() + 1,
            })?;
            tokens.push(Token::new(word, tag));
        }
        word_count += tokens.len();
        sentences.push(Sentence { index, tokens });
    }
    Ok(AnnotatedCorpus {
        sentences,
        word_count,
    })
}

/// Whitespace-separated tokens paired with their byte offset in `line`.
fn whitespace_tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    line.split(char::is_whitespace)
        .filter(|s| !s.is_empty())
        .map(move |s| (s.as_ptr() as usize - line.as_ptr() as usize, s))
}

pub fn parse_plain(text: &str) -> Vec<(usize, String)> {
    non_blank_lines(text)
        .enumerate()
        .map(|(index, (_, line))| (index, line.trim_end().to_string()))
        .collect()
}

pub fn write_annotated(corpus: &AnnotatedCorpus, config: &CorpusConfig) -> String {
    let mut out = String::new();
    for sentence in &corpus.sentences {
        write_tokens(&mut out, &sentence.tokens, config.tag_separator);
    }
    out
}

/// Appends one annotated line (with trailing newline) to `out`.
pub fn write_tokens(out: &mut String, tokens: &[Token], separator: char) {
    for (i, token) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{}{}{}", token.word, separator, token.tag);
    }
    out.push('\n');
}
