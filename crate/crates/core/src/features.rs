//! Tagging histories and the binary feature set built from them.
//!
//! A feature pairs a context predicate (one of seven templates) with the tag
//! it fires for. Features are only created for (predicate, tag) pairs that
//! were observed in training, so every retained feature has a positive
//! empirical count.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::corpus::{AnnotatedCorpus, Sentence};
use crate::lexicon::{Dictionary, Tagset};
use crate::mr::{run_job, JobConfig, JobError, JobReport, MapReduce, TaskError};

/// Stands in for words and tags outside the sentence. It contains a space,
/// so it can never be a corpus token.
pub const BOUNDARY: &str = "[ ]";

/// Upper bound on the number of features active for one (history, tag) pair.
pub const MAX_ACTIVE: usize = 7;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("unknown feature template id {0}")]
    UnknownTemplate(u8),
    #[error("template {template} takes {expected} operand(s), got {got}")]
    Arity {
        template: u8,
        expected: usize,
        got: usize,
    },
    #[error("feature {index}: {reason}")]
    InvalidFeature { index: usize, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Template {
    /// w_i
    Word = 1,
    /// w_{i-1}
    PrevWord = 2,
    /// w_{i+1}
    NextWord = 3,
    /// t_{i-1}
    PrevTag = 4,
    /// t_{i-1} t_{i-2}
    PrevTwoTags = 5,
    /// t_{i-1} w_i
    PrevTagWord = 6,
    /// w_{i-1} w_i
    PrevWordWord = 7,
}

impl Template {
    pub const ALL: [Template; 7] = [
        Template::Word,
        Template::PrevWord,
        Template::NextWord,
        Template::PrevTag,
        Template::PrevTwoTags,
        Template::PrevTagWord,
        Template::PrevWordWord,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self, FeatureError> {
        Template::ALL
            .get(usize::from(id).wrapping_sub(1))
            .copied()
            .ok_or(FeatureError::UnknownTemplate(id))
    }

    pub fn arity(self) -> usize {
        match self {
            Template::Word | Template::PrevWord | Template::NextWord | Template::PrevTag => 1,
            _ => 2,
        }
    }

    /// Templates mentioning the current word are subject to the rare-word cutoff.
    pub fn uses_current_word(self) -> bool {
        matches!(
            self,
            Template::Word | Template::PrevTagWord | Template::PrevWordWord
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeaturePredicate {
    pub template: Template,
    pub operands: Vec<String>,
}

impl FeaturePredicate {
    pub fn new(template: Template, operands: Vec<String>) -> Result<Self, FeatureError> {
        if operands.len() != template.arity() {
            return Err(FeatureError::Arity {
                template: template.id(),
                expected: template.arity(),
                got: operands.len(),
            });
        }
        Ok(Self { template, operands })
    }
}

impl fmt::Display for FeaturePredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.template.id(), self.operands.join("·"))
    }
}

/// The context of one tagging decision.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct History {
    pub sentence_id: usize,
    pub position: usize,
    pub words: Arc<[String]>,
    /// t_{i-1}, or [`BOUNDARY`].
    pub prev_tag: String,
    /// t_{i-2}, or [`BOUNDARY`].
    pub prev_prev_tag: String,
}

impl History {
    pub fn word(&self) -> &str {
        &self.words[self.position]
    }

    pub fn prev_word(&self) -> &str {
        match self.position {
            0 => BOUNDARY,
            i => &self.words[i - 1],
        }
    }

    pub fn next_word(&self) -> &str {
        self.words
            .get(self.position + 1)
            .map_or(BOUNDARY, String::as_str)
    }
}

/// A training event: a history and its gold tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub history: History,
    pub gold: String,
}

/// Events of one sentence, with previous tags read from the gold annotation.
pub fn sentence_events(sentence: &Sentence) -> Vec<Event> {
    let words: Arc<[String]> = sentence.tokens.iter().map(|t| t.word.clone()).collect();
    let tags: Vec<&str> = sentence.tokens.iter().map(|t| t.tag.as_str()).collect();
    (0..tags.len())
        .map(|i| Event {
            history: History {
                sentence_id: sentence.index,
                position: i,
                words: Arc::clone(&words),
                prev_tag: i.checked_sub(1).map_or(BOUNDARY, |j| tags[j]).to_string(),
                prev_prev_tag: i.checked_sub(2).map_or(BOUNDARY, |j| tags[j]).to_string(),
            },
            gold: tags[i].to_string(),
        })
        .collect()
}

struct HistoriesJob;

impl MapReduce for HistoriesJob {
    type Input = Sentence;
    type Key = (usize, usize);
    type Value = Event;
    type Output = Event;

    fn name(&self) -> &str {
        "histories"
    }

    fn map(
        &self,
        sentence: &Sentence,
        emit: &mut Vec<((usize, usize), Event)>,
    ) -> Result<(), TaskError> {
        emit.extend(
            sentence_events(sentence)
                .into_iter()
                .map(|e| ((e.history.sentence_id, e.history.position), e)),
        );
        Ok(())
    }

    fn reduce(
        &self,
        key: (usize, usize),
        values: Vec<Event>,
        emit: &mut Vec<((usize, usize), Event)>,
    ) -> Result<(), TaskError> {
        emit.extend(values.into_iter().map(|e| (key, e)));
        Ok(())
    }
}

/// One event per token, ordered by (sentence, position).
pub fn extract_histories_job(
    corpus: &AnnotatedCorpus,
    jobs: &JobConfig,
) -> Result<(Vec<Event>, JobReport), JobError> {
    let (out, report) = run_job(&HistoriesJob, &corpus.sentences, jobs)?;
    Ok((out.into_iter().map(|(_, e)| e).collect(), report))
}

/// Instantiates the seven templates against `h`. Templates that mention the
/// current word are skipped unless that word occurred at least
/// `min_word_count` times in training.
pub fn apply_templates(
    h: &History,
    dictionary: &Dictionary,
    min_word_count: u64,
) -> Vec<FeaturePredicate> {
    let frequent = dictionary.word_count(h.word()) >= min_word_count;
    let w = h.word();
    let pw = h.prev_word();
    Template::ALL
        .iter()
        .filter(|t| frequent || !t.uses_current_word())
        .map(|&template| {
            let operands: Vec<&str> = match template {
                Template::Word => vec![w],
                Template::PrevWord => vec![pw],
                Template::NextWord => vec![h.next_word()],
                Template::PrevTag => vec![&h.prev_tag],
                Template::PrevTwoTags => vec![&h.prev_tag, &h.prev_prev_tag],
                Template::PrevTagWord => vec![&h.prev_tag, w],
                Template::PrevWordWord => vec![pw, w],
            };
            FeaturePredicate {
                template,
                operands: operands.into_iter().map(str::to_string).collect(),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Feature {
    pub predicate: FeaturePredicate,
    pub tag: String,
    pub index: usize,
    pub empirical_count: u64,
}

/// Interned context key: template id plus up to two operand symbols.
type ContextKey = (u8, u32, u32);

const NO_OPERAND: u32 = u32::MAX;

/// Dense feature table with string and interned lookups.
#[derive(Clone, Debug)]
pub struct FeatureIndex {
    features: Vec<Feature>,
    lookup: HashMap<(FeaturePredicate, String), usize>,
    symbols: HashMap<String, u32>,
    by_context: HashMap<ContextKey, Vec<(u32, u32)>>,
    tag_symbols: Vec<Option<u32>>,
    boundary: Option<u32>,
}

impl PartialEq for FeatureIndex {
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features
    }
}

impl FeatureIndex {
    /// Builds the index. Features must be numbered `0..n` in order, carry
    /// tags from `tagset` and have positive counts.
    pub fn new(features: Vec<Feature>, tagset: &Tagset) -> Result<Self, FeatureError> {
        let mut lookup = HashMap::with_capacity(features.len());
        let mut symbols: HashMap<String, u32> = HashMap::new();
        let mut by_context: HashMap<ContextKey, Vec<(u32, u32)>> = HashMap::new();
        let intern = |s: &str, symbols: &mut HashMap<String, u32>| -> u32 {
            let next = symbols.len() as u32;
            *symbols.entry(s.to_string()).or_insert(next)
        };
        for (i, f) in features.iter().enumerate() {
            let invalid = |reason: &str| FeatureError::InvalidFeature {
                index: i,
                reason: reason.to_string(),
            };
            if f.index != i {
                return Err(invalid("indices must be dense and in order"));
            }
            if f.empirical_count == 0 {
                return Err(invalid("empirical count must be positive"));
            }
            if f.predicate.operands.len() != f.predicate.template.arity() {
                return Err(FeatureError::Arity {
                    template: f.predicate.template.id(),
                    expected: f.predicate.template.arity(),
                    got: f.predicate.operands.len(),
                });
            }
            let tag = tagset
                .index_of(&f.tag)
                .ok_or_else(|| invalid("tag not in tagset"))?;
            if lookup
                .insert((f.predicate.clone(), f.tag.clone()), i)
                .is_some()
            {
                return Err(invalid("duplicate (predicate, tag)"));
            }
            let a = intern(&f.predicate.operands[0], &mut symbols);
            let b = match f.predicate.operands.get(1) {
                Some(s) => intern(s, &mut symbols),
                None => NO_OPERAND,
            };
            by_context
                .entry((f.predicate.template.id(), a, b))
                .or_default()
                .push((tag as u32, i as u32));
        }
        let tag_symbols = tagset
            .tags()
            .iter()
            .map(|t| symbols.get(t).copied())
            .collect();
        let boundary = symbols.get(BOUNDARY).copied();
        Ok(Self {
            features,
            lookup,
            symbols,
            by_context,
            tag_symbols,
            boundary,
        })
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn get(&self, predicate: &FeaturePredicate, tag: &str) -> Option<usize> {
        self.lookup
            .get(&(predicate.clone(), tag.to_string()))
            .copied()
    }

    /// Indices of the features firing on `(h, tag)`, in template order.
    pub fn active(
        &self,
        h: &History,
        tag: &str,
        dictionary: &Dictionary,
        min_word_count: u64,
    ) -> Vec<usize> {
        apply_templates(h, dictionary, min_word_count)
            .iter()
            .filter_map(|p| self.get(p, tag))
            .collect()
    }

    /// Prepares the per-sentence part of the interned lookup.
    pub fn sentence_context<S: AsRef<str>>(
        &self,
        words: &[S],
        dictionary: &Dictionary,
        min_word_count: u64,
    ) -> SentenceContext {
        SentenceContext {
            words: words
                .iter()
                .map(|w| self.symbols.get(w.as_ref()).copied())
                .collect(),
            frequent: words
                .iter()
                .map(|w| dictionary.word_count(w.as_ref()) >= min_word_count)
                .collect(),
        }
    }

    /// Interned context keys of position `i` given the previous two tags
    /// (tagset indices, `None` at the sentence boundary). A `None` key cannot
    /// match any feature.
    pub fn context_keys(
        &self,
        sentence: &SentenceContext,
        i: usize,
        prev: Option<usize>,
        prev_prev: Option<usize>,
    ) -> [Option<ContextKey>; MAX_ACTIVE] {
        let n = sentence.words.len();
        let w = sentence.words[i];
        let pw = if i == 0 {
            self.boundary
        } else {
            sentence.words[i - 1]
        };
        let nw = if i + 1 >= n {
            self.boundary
        } else {
            sentence.words[i + 1]
        };
        let tag_sym = |t: Option<usize>| match t {
            None => self.boundary,
            Some(t) => self.tag_symbols.get(t).copied().flatten(),
        };
        let pt = tag_sym(prev);
        let ppt = tag_sym(prev_prev);
        let frequent = sentence.frequent[i];
        let unary = |id: u8, a: Option<u32>| a.map(|a| (id, a, NO_OPERAND));
        let binary = |id: u8, a: Option<u32>, b: Option<u32>| match (a, b) {
            (Some(a), Some(b)) => Some((id, a, b)),
            _ => None,
        };
        [
            if frequent { unary(1, w) } else { None },
            unary(2, pw),
            unary(3, nw),
            unary(4, pt),
            binary(5, pt, ppt),
            if frequent { binary(6, pt, w) } else { None },
            if frequent { binary(7, pw, w) } else { None },
        ]
    }

    /// Calls `visit(tag_index, feature_index)` for every feature matching one
    /// of `keys`, whatever its tag.
    pub fn for_each_match(
        &self,
        keys: &[Option<ContextKey>; MAX_ACTIVE],
        mut visit: impl FnMut(usize, usize),
    ) {
        for key in keys.iter().flatten() {
            if let Some(hits) = self.by_context.get(key) {
                for &(tag, feature) in hits {
                    visit(tag as usize, feature as usize);
                }
            }
        }
    }
}

/// Interned words of one sentence.
#[derive(Clone, Debug)]
pub struct SentenceContext {
    words: Vec<Option<u32>>,
    frequent: Vec<bool>,
}

impl SentenceContext {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

struct FeaturesJob<'a> {
    dictionary: &'a Dictionary,
    min_word_count: u64,
}

impl MapReduce for FeaturesJob<'_> {
    type Input = Event;
    type Key = (FeaturePredicate, String);
    type Value = u64;
    type Output = u64;

    fn name(&self) -> &str {
        "features"
    }

    fn map(&self, event: &Event, emit: &mut Vec<(Self::Key, u64)>) -> Result<(), TaskError> {
        emit.extend(
            apply_templates(&event.history, self.dictionary, self.min_word_count)
                .into_iter()
                .map(|p| ((p, event.gold.clone()), 1)),
        );
        Ok(())
    }

    fn reduce(
        &self,
        key: Self::Key,
        values: Vec<u64>,
        emit: &mut Vec<(Self::Key, u64)>,
    ) -> Result<(), TaskError> {
        emit.push((key, values.iter().sum()));
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum BuildFeaturesError {
    #[error(transparent)]
    Job(#[from] JobError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Collects the observed (predicate, gold tag) pairs, numbering them in
/// sorted key order.
pub fn build_features_job(
    events: &[Event],
    tagset: &Tagset,
    dictionary: &Dictionary,
    min_word_count: u64,
    jobs: &JobConfig,
) -> Result<(FeatureIndex, JobReport), BuildFeaturesError> {
    let job = FeaturesJob {
        dictionary,
        min_word_count,
    };
    let (out, report) = run_job(&job, events, jobs)?;
    let features = out
        .into_iter()
        .enumerate()
        .map(|(index, ((predicate, tag), empirical_count))| Feature {
            predicate,
            tag,
            index,
            empirical_count,
        })
        .collect();
    Ok((FeatureIndex::new(features, tagset)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_annotated, CorpusConfig};
    use crate::lexicon::{build_dictionary_job, learn_closed_class_tags};

    const TOY: &str = "saya/PRP makan/VB nasi/NN\nsaya/PRP minum/VB\nnasi/NN enak/JJ\n";

    fn pred(template: Template, ops: &[&str]) -> FeaturePredicate {
        FeaturePredicate::new(template, ops.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    fn toy() -> (AnnotatedCorpus, Dictionary, Tagset) {
        let corpus = parse_annotated(TOY, &CorpusConfig::default()).unwrap();
        let (d, _) = build_dictionary_job(&corpus, &JobConfig::sequential()).unwrap();
        let ts = learn_closed_class_tags(&d.to_tagtoken(), 10);
        (corpus, d, ts)
    }

    #[test]
    fn template_ids_round_trip() {
        for t in Template::ALL {
            assert_eq!(Template::from_id(t.id()).unwrap(), t);
        }
        assert_eq!(Template::from_id(0), Err(FeatureError::UnknownTemplate(0)));
        assert_eq!(Template::from_id(8), Err(FeatureError::UnknownTemplate(8)));
        assert!(FeaturePredicate::new(Template::PrevTwoTags, vec!["A".into()]).is_err());
    }

    #[test]
    fn histories_of_two_word_sentence() {
        let corpus = parse_annotated("saya/PRP makan/VB", &CorpusConfig::default()).unwrap();
        let (events, _) = extract_histories_job(&corpus, &JobConfig::sequential()).unwrap();
        assert_eq!(events.len(), 2);
        let h0 = &events[0].history;
        assert_eq!(
            (h0.position, h0.prev_tag.as_str(), h0.prev_prev_tag.as_str()),
            (0, BOUNDARY, BOUNDARY)
        );
        assert_eq!(events[0].gold, "PRP");
        let h1 = &events[1].history;
        assert_eq!(
            (h1.position, h1.prev_tag.as_str(), h1.prev_prev_tag.as_str()),
            (1, "PRP", BOUNDARY)
        );
        assert_eq!(events[1].gold, "VB");
    }

    #[test]
    fn histories_cover_every_token_in_order() {
        let (corpus, _, _) = toy();
        let (events, _) = extract_histories_job(&corpus, &JobConfig::new(2, 2).unwrap()).unwrap();
        assert_eq!(events.len(), corpus.word_count);
        let keys: Vec<_> = events
            .iter()
            .map(|e| (e.history.sentence_id, e.history.position))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        let (none, _) =
            extract_histories_job(&AnnotatedCorpus::default(), &JobConfig::sequential()).unwrap();
        assert!(none.is_empty());
    }

    fn saya_makan_history() -> History {
        History {
            sentence_id: 0,
            position: 1,
            words: vec!["saya".to_string(), "makan".to_string()].into(),
            prev_tag: "PRP".into(),
            prev_prev_tag: BOUNDARY.into(),
        }
    }

    #[test]
    fn all_seven_templates() {
        let (_, d, _) = toy();
        let got = apply_templates(&saya_makan_history(), &d, 1);
        assert_eq!(
            got,
            vec![
                pred(Template::Word, &["makan"]),
                pred(Template::PrevWord, &["saya"]),
                pred(Template::NextWord, &[BOUNDARY]),
                pred(Template::PrevTag, &["PRP"]),
                pred(Template::PrevTwoTags, &["PRP", BOUNDARY]),
                pred(Template::PrevTagWord, &["PRP", "makan"]),
                pred(Template::PrevWordWord, &["saya", "makan"]),
            ]
        );
    }

    #[test]
    fn rare_current_word_suppresses_templates() {
        let (_, d, _) = toy();
        assert_eq!(d.word_count("makan"), 1);
        let got = apply_templates(&saya_makan_history(), &d, 2);
        let ids: Vec<u8> = got.iter().map(|p| p.template.id()).collect();
        assert_eq!(ids, vec![2, 3, 4, 5]);
    }

    #[test]
    fn sentence_start_binds_boundaries() {
        let (corpus, d, _) = toy();
        let events = sentence_events(&corpus.sentences[0]);
        let got = apply_templates(&events[0].history, &d, 1);
        assert_eq!(got[1], pred(Template::PrevWord, &[BOUNDARY]));
        assert_eq!(got[3], pred(Template::PrevTag, &[BOUNDARY]));
        assert_eq!(got[4], pred(Template::PrevTwoTags, &[BOUNDARY, BOUNDARY]));
        assert_eq!(got[5], pred(Template::PrevTagWord, &[BOUNDARY, "saya"]));
        assert_eq!(got[6], pred(Template::PrevWordWord, &[BOUNDARY, "saya"]));
    }

    #[test]
    fn toy_feature_counts() {
        let (corpus, d, ts) = toy();
        let (events, _) = extract_histories_job(&corpus, &JobConfig::sequential()).unwrap();
        let (index, _) = build_features_job(&events, &ts, &d, 1, &JobConfig::sequential()).unwrap();
        let j = index.get(&pred(Template::Word, &["nasi"]), "NN").unwrap();
        assert_eq!(index.features()[j].empirical_count, 2);
        // sorted key order
        let keys: Vec<_> = index
            .features()
            .iter()
            .map(|f| (f.predicate.clone(), f.tag.clone()))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        let (empty, _) = build_features_job(&[], &ts, &d, 1, &JobConfig::sequential()).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn interned_lookup_matches_brute_force() {
        let (corpus, d, ts) = toy();
        let (events, _) = extract_histories_job(&corpus, &JobConfig::sequential()).unwrap();
        for min in [1, 2] {
            let (index, _) =
                build_features_job(&events, &ts, &d, min, &JobConfig::sequential()).unwrap();
            for e in &events {
                let h = &e.history;
                let ctx = index.sentence_context(&h.words, &d, min);
                let tag_idx = |t: &str| ts.index_of(t);
                let keys = index.context_keys(
                    &ctx,
                    h.position,
                    tag_idx(&h.prev_tag),
                    tag_idx(&h.prev_prev_tag),
                );
                let preds = apply_templates(h, &d, min);
                for (ti, tag) in ts.tags().iter().enumerate() {
                    // scan of every feature
                    let brute: Vec<usize> = index
                        .features()
                        .iter()
                        .filter(|f| &f.tag == tag && preds.contains(&f.predicate))
                        .map(|f| f.index)
                        .collect();
                    let mut fast = Vec::new();
                    index.for_each_match(&keys, |t, j| {
                        if t == ti {
                            fast.push(j)
                        }
                    });
                    fast.sort();
                    let mut by_lookup = index.active(h, tag, &d, min);
                    by_lookup.sort();
                    assert_eq!(fast, brute);
                    assert_eq!(by_lookup, brute);
                    assert!(brute.len() <= MAX_ACTIVE);
                }
            }
        }
    }

    #[test]
    fn index_validation() {
        let (_, _, ts) = toy();
        let f = |index, tag: &str, count| Feature {
            predicate: pred(Template::Word, &["x"]),
            tag: tag.to_string(),
            index,
            empirical_count: count,
        };
        assert!(FeatureIndex::new(vec![f(1, "NN", 1)], &ts).is_err());
        assert!(FeatureIndex::new(vec![f(0, "ZZ", 1)], &ts).is_err());
        assert!(FeatureIndex::new(vec![f(0, "NN", 0)], &ts).is_err());
        assert!(FeatureIndex::new(vec![f(0, "NN", 1), f(1, "NN", 1)], &ts).is_err());
        assert!(FeatureIndex::new(vec![f(0, "NN", 1), f(1, "VB", 3)], &ts).is_ok());
    }
}
