//! Line-oriented text encodings of the training pipeline's intermediate
//! results. The model file is assembled from the same pieces.
//!
//! Every format is tab-separated, one record per line, and the encoding of a
//! value is canonical: equal values encode to equal bytes. Reals use 17
//! significant digits, which round-trips every `f64` exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::features::{Event, Feature, FeatureIndex, FeaturePredicate, History, Template};
use crate::lexicon::{Dictionary, TagToken, Tagset};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{section}, line {line}: {reason}")]
pub struct CodecError {
    pub section: String,
    /// 1-based, relative to the start of the encoded block.
    pub line: usize,
    pub reason: String,
}

impl CodecError {
    pub fn new(section: &str, line: usize, reason: impl Into<String>) -> Self {
        Self {
            section: section.to_string(),
            line,
            reason: reason.into(),
        }
    }
}

pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_real(s: &str) -> Option<f64> {
    s.parse::<f64>().ok()
}

fn fields<'a>(
    line: &'a str,
    section: &str,
    n: usize,
    line_no: usize,
) -> Result<Vec<&'a str>, CodecError> {
    let parts: Vec<&str> = line.split('\t').collect();
    if parts.len() != n {
        return Err(CodecError::new(
            section,
            line_no,
            format!("expected {n} fields, found {}", parts.len()),
        ));
    }
    Ok(parts)
}

fn number<T: std::str::FromStr>(s: &str, section: &str, line_no: usize) -> Result<T, CodecError> {
    s.parse()
        .map_err(|_| CodecError::new(section, line_no, format!("bad number {s:?}")))
}

pub fn write_dictionary(dictionary: &Dictionary) -> String {
    let mut out = String::new();
    for (word, tags) in &dictionary.entries {
        for (tag, count) in tags {
            out.push_str(&format!("{word}\t{tag}\t{count}\n"));
        }
    }
    out
}

pub fn read_dictionary(text: &str) -> Result<Dictionary, CodecError> {
    const SECTION: &str = "DICT";
    let mut entries: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let f = fields(line, SECTION, 3, i + 1)?;
        let count: u64 = number(f[2], SECTION, i + 1)?;
        if count == 0 || f[0].is_empty() || f[1].is_empty() {
            return Err(CodecError::new(
                SECTION,
                i + 1,
                "empty word/tag or zero count",
            ));
        }
        if entries
            .entry(f[0].to_string())
            .or_default()
            .insert(f[1].to_string(), count)
            .is_some()
        {
            return Err(CodecError::new(SECTION, i + 1, "duplicate entry"));
        }
    }
    Ok(Dictionary::from_entries(entries))
}

pub fn write_tagtoken(tagtoken: &TagToken) -> String {
    let mut out = String::new();
    for (tag, words) in &tagtoken.entries {
        for word in words {
            out.push_str(&format!("{tag}\t{word}\n"));
        }
    }
    out
}

pub fn read_tagtoken(text: &str) -> Result<TagToken, CodecError> {
    let mut entries: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let f = fields(line, "TAGTOKEN", 2, i + 1)?;
        entries
            .entry(f[0].to_string())
            .or_default()
            .insert(f[1].to_string());
    }
    Ok(TagToken { entries })
}

pub fn write_tags(tagset: &Tagset) -> String {
    tagset
        .tags()
        .iter()
        .map(|t| format!("{t}\t{}\n", u8::from(tagset.is_closed(t))))
        .collect()
}

pub fn read_tags(text: &str) -> Result<Tagset, CodecError> {
    const SECTION: &str = "TAGS";
    let mut tags: Vec<String> = Vec::new();
    let mut closed = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f = fields(line, SECTION, 2, i + 1)?;
        if let Some(prev) = tags.last() {
            if f[0] <= prev.as_str() {
                return Err(CodecError::new(
                    SECTION,
                    i + 1,
                    "tags must be sorted and distinct",
                ));
            }
        }
        match f[1] {
            "0" => {}
            "1" => closed.push(f[0].to_string()),
            other => {
                return Err(CodecError::new(
                    SECTION,
                    i + 1,
                    format!("bad closed flag {other:?}"),
                ))
            }
        }
        tags.push(f[0].to_string());
    }
    Ok(Tagset::new(tags, closed))
}

/// Histories, one event per line:
/// `sentence<TAB>position<TAB>prev<TAB>prevprev<TAB>gold<TAB>words…`.
pub fn write_events(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        let h = &e.history;
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}",
            h.sentence_id, h.position, h.prev_tag, h.prev_prev_tag, e.gold
        ));
        for w in h.words.iter() {
            out.push('\t');
            out.push_str(w);
        }
        out.push('\n');
    }
    out
}

pub fn read_events(text: &str) -> Result<Vec<Event>, CodecError> {
    const SECTION: &str = "HISTORIES";
    let mut events: Vec<Event> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() < 6 {
            return Err(CodecError::new(SECTION, i + 1, "too few fields"));
        }
        let sentence_id: usize = number(parts[0], SECTION, i + 1)?;
        let position: usize = number(parts[1], SECTION, i + 1)?;
        let words = &parts[5..];
        if position >= words.len() {
            return Err(CodecError::new(SECTION, i + 1, "position out of range"));
        }
        // events of one sentence share their word sequence
        let shared = events.last().and_then(|prev| {
            let h = &prev.history;
            (h.sentence_id == sentence_id
                && h.words.iter().map(String::as_str).eq(words.iter().copied()))
            .then(|| Arc::clone(&h.words))
        });
        let words = shared.unwrap_or_else(|| words.iter().map(|w| w.to_string()).collect());
        events.push(Event {
            history: History {
                sentence_id,
                position,
                words,
                prev_tag: parts[2].to_string(),
                prev_prev_tag: parts[3].to_string(),
            },
            gold: parts[4].to_string(),
        });
    }
    Ok(events)
}

/// `index<TAB>template<TAB>operands…<TAB>tag<TAB>count` per feature.
pub fn write_features(index: &FeatureIndex) -> String {
    let mut out = String::new();
    for f in index.features() {
        out.push_str(&format!("{}\t{}", f.index, f.predicate.template.id()));
        for op in &f.predicate.operands {
            out.push('\t');
            out.push_str(op);
        }
        out.push_str(&format!("\t{}\t{}\n", f.tag, f.empirical_count));
    }
    out
}

pub fn read_features(text: &str, tagset: &Tagset) -> Result<FeatureIndex, CodecError> {
    const SECTION: &str = "FEATURES";
    let mut features = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() < 5 {
            return Err(CodecError::new(SECTION, i + 1, "too few fields"));
        }
        let index: usize = number(parts[0], SECTION, i + 1)?;
        let template_id: u8 = number(parts[1], SECTION, i + 1)?;
        let template = Template::from_id(template_id)
            .map_err(|e| CodecError::new(SECTION, i + 1, e.to_string()))?;
        if parts.len() != 4 + template.arity() {
            return Err(CodecError::new(
                SECTION,
                i + 1,
                "operand count does not match template",
            ));
        }
        let operands = parts[2..2 + template.arity()]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let predicate = FeaturePredicate::new(template, operands)
            .map_err(|e| CodecError::new(SECTION, i + 1, e.to_string()))?;
        let tag = parts[parts.len() - 2].to_string();
        let empirical_count: u64 = number(parts[parts.len() - 1], SECTION, i + 1)?;
        features.push(Feature {
            predicate,
            tag,
            index,
            empirical_count,
        });
    }
    FeatureIndex::new(features, tagset).map_err(|e| {
        let line = match &e {
            crate::features::FeatureError::InvalidFeature { index, .. } => index + 1,
            _ => 0,
        };
        CodecError::new(SECTION, line, e.to_string())
    })
}

/// One line per value: `index<TAB>value`.
pub fn write_reals(values: &[f64]) -> String {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{i}\t{}\n", format_real(*v)))
        .collect()
}

pub fn read_reals(text: &str, section: &str) -> Result<Vec<f64>, CodecError> {
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f = fields(line, section, 2, i + 1)?;
        let index: usize = number(f[0], section, i + 1)?;
        if index != i {
            return Err(CodecError::new(
                section,
                i + 1,
                "indices must be dense and in order",
            ));
        }
        let v = parse_real(f[1])
            .filter(|v| v.is_finite())
            .ok_or_else(|| CodecError::new(section, i + 1, format!("bad real {:?}", f[1])))?;
        values.push(v);
    }
    Ok(values)
}
