//! Versioned text model file.
//!
//! ```text
//! mrtag-model<TAB>1
//! CONFIG<TAB>n      key<TAB>value lines
//! TAGS<TAB>n        tag<TAB>closed(0|1)
//! DICT<TAB>n        word<TAB>tag<TAB>count
//! FEATURES<TAB>n    index<TAB>template<TAB>operands…<TAB>tag<TAB>count
//! WEIGHTS<TAB>n     index<TAB>lambda
//! MU<TAB>ln_mu
//! END
//! ```
//!
//! Weights are written with 17 significant digits, so loading a saved model
//! reproduces every probability bit for bit.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::codec::{self, format_real, parse_real, CodecError};
use crate::maxent::{Model, Search, TrainConfig};

pub const MAGIC: &str = "mrtag-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    /// `line` is 1-based within the file; 0 when the problem is not tied to a line.
    #[error("corrupt model: {section} section, line {line}: {reason}")]
    CorruptModel {
        section: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn corrupt(section: &str, line: usize, reason: impl Into<String>) -> ModelFileError {
    ModelFileError::CorruptModel {
        section: section.to_string(),
        line,
        reason: reason.into(),
    }
}

fn opt_real(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), format_real)
}

fn config_lines(config: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("arch", "generic".to_string()),
        ("search", config.search.as_str().to_string()),
        ("iterations", config.iterations.to_string()),
        ("curWordMinFeatureThresh", config.min_word_count.to_string()),
        (
            "closedClassTagsThreshold",
            config.closed_class_threshold.to_string(),
        ),
        (
            "learnClosedClassTags",
            config.learn_closed_class.to_string(),
        ),
        ("sigmaSquared", opt_real(config.sigma_squared)),
        ("earlyStop", opt_real(config.early_stop)),
        ("tagSeparator", config.tag_separator.to_string()),
        ("beam", config.beam_width.to_string()),
    ]
}

fn section(out: &mut String, name: &str, body: &str) {
    out.push_str(&format!("{name}\t{}\n", body.lines().count()));
    out.push_str(body);
}

pub fn model_to_string(model: &Model) -> String {
    let mut out = format!("{MAGIC}\t{VERSION}\n");
    let config: String = config_lines(model.config())
        .into_iter()
        .map(|(k, v)| format!("{k}\t{v}\n"))
        .collect();
    section(&mut out, "CONFIG", &config);
    section(&mut out, "TAGS", &codec::write_tags(model.tagset()));
    section(
        &mut out,
        "DICT",
        &codec::write_dictionary(model.dictionary()),
    );
    section(
        &mut out,
        "FEATURES",
        &codec::write_features(model.features()),
    );
    section(&mut out, "WEIGHTS", &codec::write_reals(model.lambda()));
    out.push_str(&format!("MU\t{}\nEND\n", format_real(model.mu_log())));
    out
}

struct Sections<'a> {
    lines: Vec<&'a str>,
    at: usize,
}

impl<'a> Sections<'a> {
    /// Reads a `NAME<TAB>count` header and returns the body text and the
    /// file line number of its first line.
    fn take(&mut self, name: &str) -> Result<(String, usize), ModelFileError> {
        let header_line = self.at + 1;
        let header = self
            .lines
            .get(self.at)
            .ok_or_else(|| corrupt(name, header_line, "missing section (file truncated?)"))?;
        let count = header
            .strip_prefix(name)
            .and_then(|rest| rest.strip_prefix('\t'))
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| {
                corrupt(
                    name,
                    header_line,
                    format!("expected `{name}<TAB>count` header"),
                )
            })?;
        let start = self.at + 1;
        if start + count > self.lines.len() {
            return Err(corrupt(name, self.lines.len(), "section truncated"));
        }
        let mut body = String::new();
        for line in &self.lines[start..start + count] {
            body.push_str(line);
            body.push('\n');
        }
        self.at = start + count;
        Ok((body, start + 1))
    }

    fn next_line(&mut self, section: &str) -> Result<(&'a str, usize), ModelFileError> {
        let line = self
            .lines
            .get(self.at)
            .ok_or_else(|| corrupt(section, self.at + 1, "unexpected end of file"))?;
        self.at += 1;
        Ok((line, self.at))
    }
}

fn located(e: CodecError, first_line: usize) -> ModelFileError {
    let line = if e.line == 0 {
        0
    } else {
        first_line + e.line - 1
    };
    corrupt(&e.section, line, e.reason)
}

fn parse_config(body: &str, first_line: usize) -> Result<TrainConfig, ModelFileError> {
    let mut config = TrainConfig::default();
    let expected: Vec<&str> = config_lines(&config).into_iter().map(|(k, _)| k).collect();
    let lines: Vec<&str> = body.lines().collect();
    if lines.len() != expected.len() {
        return Err(corrupt("CONFIG", first_line, "wrong number of entries"));
    }
    for (i, (line, key)) in lines.iter().zip(&expected).enumerate() {
        let n = first_line + i;
        let bad = |why: &str| corrupt("CONFIG", n, why.to_string());
        let (k, v) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected key<TAB>value"))?;
        if k != *key {
            return Err(bad(&format!("expected key {key}, found {k}")));
        }
        let opt = |v: &str| -> Result<Option<f64>, ModelFileError> {
            if v == "none" {
                Ok(None)
            } else {
                parse_real(v).map(Some).ok_or_else(|| bad("bad real"))
            }
        };
        match k {
            "arch" if v == "generic" => {}
            "arch" => return Err(bad("only the generic architecture is supported")),
            "search" => config.search = v.parse::<Search>().map_err(|_| bad("bad search"))?,
            "iterations" => config.iterations = v.parse().map_err(|_| bad("bad integer"))?,
            "curWordMinFeatureThresh" => {
                config.min_word_count = v.parse().map_err(|_| bad("bad integer"))?
            }
            "closedClassTagsThreshold" => {
                config.closed_class_threshold = v.parse().map_err(|_| bad("bad integer"))?
            }
            "learnClosedClassTags" => {
                config.learn_closed_class = v.parse().map_err(|_| bad("bad boolean"))?
            }
            "sigmaSquared" => config.sigma_squared = opt(v)?,
            "earlyStop" => config.early_stop = opt(v)?,
            "tagSeparator" => {
                let mut chars = v.chars();
                config.tag_separator = match (chars.next(), chars.next()) {
                    (Some(c), None) => c,
                    _ => return Err(bad("separator must be one character")),
                };
            }
            "beam" => config.beam_width = v.parse().map_err(|_| bad("bad integer"))?,
            _ => unreachable!(),
        }
    }
    config
        .validate()
        .map_err(|e| corrupt("CONFIG", first_line, e.to_string()))?;
    Ok(config)
}

pub fn model_from_str(text: &str) -> Result<Model, ModelFileError> {
    let mut s = Sections {
        lines: text.lines().collect(),
        at: 0,
    };
    let (header, _) = s.next_line("version")?;
    let version = header
        .strip_prefix(MAGIC)
        .and_then(|r| r.strip_prefix('\t'))
        .ok_or_else(|| corrupt("version", 1, "not a model file"))?;
    if version != VERSION.to_string() {
        return Err(corrupt(
            "version",
            1,
            format!("unsupported version {version}"),
        ));
    }

    let (body, first) = s.take("CONFIG")?;
    let config = parse_config(&body, first)?;
    let (body, first) = s.take("TAGS")?;
    let tagset = codec::read_tags(&body).map_err(|e| located(e, first))?;
    if tagset.is_empty() {
        return Err(corrupt("TAGS", first, "empty tagset"));
    }
    let (body, first) = s.take("DICT")?;
    let dictionary = codec::read_dictionary(&body).map_err(|e| located(e, first))?;
    let (body, first) = s.take("FEATURES")?;
    let features = codec::read_features(&body, &tagset).map_err(|e| located(e, first))?;
    let (body, first) = s.take("WEIGHTS")?;
    let lambda = codec::read_reals(&body, "WEIGHTS").map_err(|e| located(e, first))?;
    if lambda.len() != features.len() {
        return Err(corrupt(
            "WEIGHTS",
            first,
            "weight count differs from feature count",
        ));
    }
    let (mu_line, n) = s.next_line("MU")?;
    let mu_log = mu_line
        .strip_prefix("MU\t")
        .and_then(parse_real)
        .filter(|v| v.is_finite())
        .ok_or_else(|| corrupt("MU", n, "expected `MU<TAB>value`"))?;
    let (end, n) = s.next_line("END")?;
    if end != "END" {
        return Err(corrupt("END", n, "expected END"));
    }
    if s.at != s.lines.len() {
        return Err(corrupt("END", s.at + 1, "trailing content"));
    }
    Model::new(features, tagset, dictionary, config, lambda, mu_log)
        .map_err(|e| corrupt("model", 0, e.to_string()))
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), ModelFileError> {
    fs::write(path, model_to_string(model)).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<Model, ModelFileError> {
    let text = fs::read_to_string(path).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    model_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_annotated, CorpusConfig};
    use crate::maxent::train;
    use crate::mr::JobConfig;
    use crate::tagger::{tag_document_job, write_tagged};

    const CORPUS: &str = "\
the/DT can/NN rusts/VB\n\
the/DT can/MD rusts/VB\n\
i/PR can/MD go/VB\n\
i/PR can/NN go/VB\n\
the/DT dog/NN barks/VB\n";

    fn model() -> Model {
        let corpus = parse_annotated(CORPUS, &CorpusConfig::default()).unwrap();
        let config = TrainConfig {
            iterations: 20,
            min_word_count: 1,
            sigma_squared: Some(2.5),
            ..TrainConfig::default()
        };
        train(&corpus, &config, &JobConfig::sequential()).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let text = model_to_string(&m);
        let back = model_from_str(&text).unwrap();
        assert_eq!(model_to_string(&back), text);
        assert_eq!(back.config(), m.config());
        assert!(back
            .lambda()
            .iter()
            .zip(m.lambda())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        let doc = vec![
            (0, "the can go".to_string()),
            (1, "i can rusts dog".to_string()),
        ];
        let (a, _) = tag_document_job(&m, &doc, 5, &JobConfig::sequential()).unwrap();
        let (b, _) = tag_document_job(&back, &doc, 5, &JobConfig::sequential()).unwrap();
        assert_eq!(write_tagged(&a, '/'), write_tagged(&b, '/'));
        assert!(a
            .iter()
            .zip(&b)
            .all(|(x, y)| x.log_prob.to_bits() == y.log_prob.to_bits()));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.model");
        let m = model();
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(model_to_string(&back), model_to_string(&m));
        assert!(matches!(
            load_model(&dir.path().join("missing")),
            Err(ModelFileError::Io { .. })
        ));
    }

    fn section_of(e: ModelFileError) -> String {
        match e {
            ModelFileError::CorruptModel { section, .. } => section,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn truncation_detected() {
        let text = model_to_string(&model());
        let lines: Vec<&str> = text.lines().collect();
        for cut in [1, 5, lines.len() / 2, lines.len() - 2, lines.len() - 1] {
            let truncated = lines[..cut].join("\n");
            assert!(model_from_str(&truncated).is_err(), "cut at {cut}");
        }
        assert!(model_from_str("").is_err());
    }

    #[test]
    fn version_mismatch() {
        let text = model_to_string(&model()).replacen("mrtag-model\t1", "mrtag-model\t2", 1);
        assert_eq!(section_of(model_from_str(&text).unwrap_err()), "version");
        assert_eq!(
            section_of(model_from_str("hello\n").unwrap_err()),
            "version"
        );
    }

    #[test]
    fn corrupt_sections_are_located() {
        let text = model_to_string(&model());
        let bad_weight = {
            let mut lines: Vec<String> = text.lines().map(String::from).collect();
            let w = lines
                .iter()
                .position(|l| l.starts_with("WEIGHTS\t"))
                .unwrap();
            lines[w + 1] = "0\tnot-a-number".into();
            lines.join("\n")
        };
        match model_from_str(&bad_weight).unwrap_err() {
            ModelFileError::CorruptModel { section, line, .. } => {
                assert_eq!(section, "WEIGHTS");
                let w = text
                    .lines()
                    .position(|l| l.starts_with("WEIGHTS\t"))
                    .unwrap();
                assert_eq!(line, w + 2);
            }
            other => panic!("{other}"),
        }
        let bad_arch = text.replacen("arch\tgeneric", "arch\tenglish", 1);
        assert_eq!(section_of(model_from_str(&bad_arch).unwrap_err()), "CONFIG");
        let bad_tag = text.replacen("\nDT\t", "\nZZ\t", 1);
        assert!(model_from_str(&bad_tag).is_err());
        let trailing = format!("{text}extra\n");
        assert_eq!(section_of(model_from_str(&trailing).unwrap_err()), "END");
    }
}
