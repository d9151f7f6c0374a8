//! Beam-search decoding and the parallel document-tagging job.

use std::cmp::Ordering;

use thiserror::Error;

use crate::corpus::{write_tokens, Token};
use crate::lexicon::LexiconError;
use crate::maxent::{MaxentError, Model};
use crate::mr::{run_job, JobConfig, JobError, JobReport, MapReduce, TaskError};

#[derive(Debug, Error)]
pub enum TagError {
    #[error("cannot tag an empty sentence")]
    EmptySentence,
    #[error("beam width must be at least 1")]
    ZeroBeam,
    #[error("tag {tag:?} at position {position} is not a candidate for its word")]
    ZeroProbability { position: usize, tag: String },
    #[error("{0} words but {1} tags")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Model(#[from] MaxentError),
    #[error(transparent)]
    Job(#[from] JobError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamState {
    /// Tagset indices.
    pub tags: Vec<usize>,
    pub log_prob: f64,
}

impl BeamState {
    pub fn position(&self) -> usize {
        self.tags.len()
    }
}

/// Higher probability first, then lexicographically smaller tag sequence.
fn beam_order(a: &BeamState, b: &BeamState) -> Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then_with(|| a.tags.cmp(&b.tags))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggedSentence {
    pub line_index: usize,
    pub tokens: Vec<Token>,
    pub log_prob: f64,
    /// Number of (history, tag) probabilities computed while decoding.
    pub evaluations: u64,
}

impl TaggedSentence {
    pub fn to_line(&self, separator: char) -> String {
        let mut out = String::new();
        write_tokens(&mut out, &self.tokens, separator);
        out
    }
}

fn prev_tags(tags: &[usize]) -> (Option<usize>, Option<usize>) {
    let n = tags.len();
    (
        n.checked_sub(1).map(|i| tags[i]),
        n.checked_sub(2).map(|i| tags[i]),
    )
}

/// Left-to-right beam search over the candidate tags of each word.
pub fn tag_sentence<S: AsRef<str>>(
    model: &Model,
    words: &[S],
    beam_width: usize,
) -> Result<TaggedSentence, TagError> {
    if words.is_empty() {
        return Err(TagError::EmptySentence);
    }
    if beam_width == 0 {
        return Err(TagError::ZeroBeam);
    }
    if model.tagset().is_empty() {
        return Err(LexiconError::EmptyTagset.into());
    }
    let ctx = model.sentence_context(words);
    let mut beam = vec![BeamState {
        tags: Vec::with_capacity(words.len()),
        log_prob: 0.0,
    }];
    let mut logp = Vec::new();
    let mut evaluations = 0u64;
    for (i, word) in words.iter().enumerate() {
        let candidates = model.candidates(word.as_ref());
        let mut next = Vec::with_capacity(beam.len() * candidates.len());
        for state in &beam {
            let (prev, prev_prev) = prev_tags(&state.tags);
            model.local_log_probs(&ctx, i, prev, prev_prev, candidates, &mut logp)?;
            evaluations += candidates.len() as u64;
            for (&tag, &lp) in candidates.iter().zip(&logp) {
                let mut tags = Vec::with_capacity(words.len());
                tags.extend_from_slice(&state.tags);
                tags.push(tag);
                next.push(BeamState {
                    tags,
                    log_prob: state.log_prob + lp,
                });
            }
        }
        next.sort_by(beam_order);
        next.truncate(beam_width);
        beam = next;
    }
    let best = beam.swap_remove(0);
    let tagset = model.tagset().tags();
    Ok(TaggedSentence {
        line_index: 0,
        tokens: words
            .iter()
            .zip(&best.tags)
            .map(|(w, &t)| Token::new(w.as_ref(), tagset[t].as_str()))
            .collect(),
        log_prob: best.log_prob,
        evaluations,
    })
}

/// `Σ_i ln p(t_i | h_i)` with histories built from the given tags.
pub fn sequence_log_probability<S: AsRef<str>, T: AsRef<str>>(
    model: &Model,
    words: &[S],
    tags: &[T],
) -> Result<f64, TagError> {
    if words.len() != tags.len() {
        return Err(TagError::LengthMismatch(words.len(), tags.len()));
    }
    let ctx = model.sentence_context(words);
    let mut ids = Vec::with_capacity(tags.len());
    let mut logp = Vec::new();
    let mut total = 0.0;
    for (i, (word, tag)) in words.iter().zip(tags).enumerate() {
        let zero = || TagError::ZeroProbability {
            position: i,
            tag: tag.as_ref().to_string(),
        };
        let id = model.tagset().index_of(tag.as_ref()).ok_or_else(zero)?;
        let candidates = model.candidates(word.as_ref());
        let slot = candidates.iter().position(|&c| c == id).ok_or_else(zero)?;
        let (prev, prev_prev) = prev_tags(&ids);
        model.local_log_probs(&ctx, i, prev, prev_prev, candidates, &mut logp)?;
        total += logp[slot];
        ids.push(id);
    }
    Ok(total)
}

struct TagJob<'a> {
    model: &'a Model,
    beam_width: usize,
}

impl MapReduce for TagJob<'_> {
    type Input = (usize, String);
    type Key = usize;
    type Value = TaggedSentence;
    type Output = TaggedSentence;

    fn name(&self) -> &str {
        "tag"
    }

    fn map(
        &self,
        (index, line): &(usize, String),
        emit: &mut Vec<(usize, TaggedSentence)>,
    ) -> Result<(), TaskError> {
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            return Ok(());
        }
        let mut tagged = tag_sentence(self.model, &words, self.beam_width)?;
        tagged.line_index = *index;
        emit.push((*index, tagged));
        Ok(())
    }

    fn reduce(
        &self,
        key: usize,
        values: Vec<TaggedSentence>,
        emit: &mut Vec<(usize, TaggedSentence)>,
    ) -> Result<(), TaskError> {
        emit.extend(values.into_iter().map(|v| (key, v)));
        Ok(())
    }
}

/// Tags `(index, line)` pairs across map tasks and reassembles them by line
/// index.
pub fn tag_document_job(
    model: &Model,
    lines: &[(usize, String)],
    beam_width: usize,
    jobs: &JobConfig,
) -> Result<(Vec<TaggedSentence>, JobReport), TagError> {
    if beam_width == 0 {
        return Err(TagError::ZeroBeam);
    }
    let job = TagJob { model, beam_width };
    let (out, report) = run_job(&job, lines, jobs).map_err(|e| match e {
        JobError::Map { source, .. } if source.is::<TagError>() => {
            *source.downcast::<TagError>().unwrap()
        }
        other => other.into(),
    })?;
    Ok((out.into_iter().map(|(_, s)| s).collect(), report))
}

/// Annotated-format text of a tagged document.
pub fn write_tagged(sentences: &[TaggedSentence], separator: char) -> String {
    let mut out = String::new();
    for s in sentences {
        write_tokens(&mut out, &s.tokens, separator);
    }
    out
}
