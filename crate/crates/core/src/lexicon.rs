//! Dictionary and tagtoken indexes, built as MapReduce jobs.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::corpus::{AnnotatedCorpus, Sentence};
use crate::mr::{run_job, JobConfig, JobError, JobReport, MapReduce, TaskError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LexiconError {
    #[error("tagset is empty")]
    EmptyTagset,
}

/// word -> (tag -> count).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dictionary {
    pub entries: BTreeMap<String, BTreeMap<String, u64>>,
    pub total_tokens: u64,
}

impl Dictionary {
    pub fn from_entries(entries: BTreeMap<String, BTreeMap<String, u64>>) -> Self {
        let total_tokens = entries.values().flat_map(|tags| tags.values()).sum();
        Self {
            entries,
            total_tokens,
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    /// Number of training tokens of `word` across all tags (0 if unknown).
    pub fn word_count(&self, word: &str) -> u64 {
        self.entries.get(word).map_or(0, |tags| tags.values().sum())
    }

    pub fn tags_of(&self, word: &str) -> Option<&BTreeMap<String, u64>> {
        self.entries.get(word)
    }

    /// The tagtoken index implied by this dictionary.
    pub fn to_tagtoken(&self) -> TagToken {
        let mut entries: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (word, tags) in &self.entries {
            for tag in tags.keys() {
                entries.entry(tag.clone()).or_default().insert(word.clone());
            }
        }
        TagToken { entries }
    }
}

/// tag -> distinct words seen with it.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TagToken {
    pub entries: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Tagset {
    /// Sorted and distinct.
    tags: Vec<String>,
    closed_class: BTreeSet<String>,
}

impl Tagset {
    /// Builds a tagset; `closed_class` entries not in `tags` are dropped.
    pub fn new(
        tags: impl IntoIterator<Item = String>,
        closed_class: impl IntoIterator<Item = String>,
    ) -> Self {
        let tags: BTreeSet<String> = tags.into_iter().collect();
        let closed_class = closed_class
            .into_iter()
            .filter(|t| tags.contains(t))
            .collect();
        Self {
            tags: tags.into_iter().collect(),
            closed_class,
        }
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn closed_class(&self) -> &BTreeSet<String> {
        &self.closed_class
    }

    pub fn is_closed(&self, tag: &str) -> bool {
        self.closed_class.contains(tag)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.tags.binary_search_by(|t| t.as_str().cmp(tag)).ok()
    }

    /// Tags offered for words missing from the dictionary.
    pub fn unknown_word_tags(&self, learn_closed: bool) -> Vec<&str> {
        if learn_closed {
            let open: Vec<&str> = self
                .tags
                .iter()
                .filter(|t| !self.closed_class.contains(*t))
                .map(String::as_str)
                .collect();
            if !open.is_empty() {
                return open;
            }
        }
        self.tags.iter().map(String::as_str).collect()
    }
}

struct DictionaryJob;

impl MapReduce for DictionaryJob {
    type Input = Sentence;
    type Key = String;
    type Value = String;
    type Output = BTreeMap<String, u64>;

    fn name(&self) -> &str {
        "dictionary"
    }

    fn map(&self, sentence: &Sentence, emit: &mut Vec<(String, String)>) -> Result<(), TaskError> {
        emit.extend(
            sentence
                .tokens
                .iter()
                .map(|t| (t.word.clone(), t.tag.clone())),
        );
        Ok(())
    }

    fn reduce(
        &self,
        word: String,
        tags: Vec<String>,
        emit: &mut Vec<(String, BTreeMap<String, u64>)>,
    ) -> Result<(), TaskError> {
        let mut counts = BTreeMap::new();
        for tag in tags {
            *counts.entry(tag).or_insert(0) += 1;
        }
        emit.push((word, counts));
        Ok(())
    }
}

struct TagTokenJob;

impl MapReduce for TagTokenJob {
    type Input = Sentence;
    type Key = String;
    type Value = String;
    type Output = BTreeSet<String>;

    fn name(&self) -> &str {
        "tagtoken"
    }

    fn map(&self, sentence: &Sentence, emit: &mut Vec<(String, String)>) -> Result<(), TaskError> {
        emit.extend(
            sentence
                .tokens
                .iter()
                .map(|t| (t.tag.clone(), t.word.clone())),
        );
        Ok(())
    }

    fn reduce(
        &self,
        tag: String,
        words: Vec<String>,
        emit: &mut Vec<(String, BTreeSet<String>)>,
    ) -> Result<(), TaskError> {
        emit.push((tag, words.into_iter().collect()));
        Ok(())
    }
}

pub fn build_dictionary_job(
    corpus: &AnnotatedCorpus,
    jobs: &JobConfig,
) -> Result<(Dictionary, JobReport), JobError> {
    let (out, report) = run_job(&DictionaryJob, &corpus.sentences, jobs)?;
    Ok((Dictionary::from_entries(out.into_iter().collect()), report))
}

pub fn build_tagtoken_job(
    corpus: &AnnotatedCorpus,
    jobs: &JobConfig,
) -> Result<(TagToken, JobReport), JobError> {
    let (out, report) = run_job(&TagTokenJob, &corpus.sentences, jobs)?;
    Ok((
        TagToken {
            entries: out.into_iter().collect(),
        },
        report,
    ))
}

/// A tag is closed-class when fewer than `threshold` distinct words carry it.
pub fn learn_closed_class_tags(tagtoken: &TagToken, threshold: usize) -> Tagset {
    let closed = tagtoken
        .entries
        .iter()
        .filter(|(_, words)| words.len() < threshold)
        .map(|(tag, _)| tag.clone());
    Tagset::new(tagtoken.entries.keys().cloned(), closed)
}

/// Tags the decoder considers for `word`, in tagset order.
pub fn candidate_tags<'a>(
    word: &str,
    dictionary: &Dictionary,
    tagset: &'a Tagset,
    learn_closed: bool,
) -> Result<Vec<&'a str>, LexiconError> {
    if tagset.is_empty() {
        return Err(LexiconError::EmptyTagset);
    }
    match dictionary.tags_of(word) {
        Some(seen) => Ok(tagset
            .tags()
            .iter()
            .filter(|t| seen.contains_key(*t))
            .map(String::as_str)
            .collect()),
        None => Ok(tagset.unknown_word_tags(learn_closed)),
    }
}
