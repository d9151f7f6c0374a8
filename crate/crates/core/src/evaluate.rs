//! Token-level accuracy against a gold corpus.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::corpus::AnnotatedCorpus;
use crate::lexicon::Dictionary;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    /// `sentence` and `position` are 0-based; a missing sentence is reported
    /// at position 0 of the first sentence only one side has.
    #[error("predicted and gold corpora diverge at sentence {sentence}, position {position}")]
    CorpusMismatch { sentence: usize, position: usize },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub total_tokens: u64,
    pub correct_tokens: u64,
    pub accuracy: f64,
    pub unknown_word_tokens: u64,
    pub unknown_word_correct: u64,
    pub unknown_word_accuracy: f64,
    /// (gold, predicted) -> count.
    pub per_tag_confusion: BTreeMap<(String, String), u64>,
}

pub const EVAL_CSV_HEADER: &str =
    "total_tokens,correct_tokens,accuracy,unknown_word_tokens,unknown_word_accuracy";

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{},{:.6}",
            self.total_tokens,
            self.correct_tokens,
            self.accuracy,
            self.unknown_word_tokens,
            self.unknown_word_accuracy
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "accuracy: {:.2}% ({}/{})",
            self.accuracy * 100.0,
            self.correct_tokens,
            self.total_tokens
        )?;
        writeln!(
            f,
            "unknown words: {:.2}% ({}/{})",
            self.unknown_word_accuracy * 100.0,
            self.unknown_word_correct,
            self.unknown_word_tokens
        )?;
        let mut errors: Vec<_> = self
            .per_tag_confusion
            .iter()
            .filter(|((g, p), _)| g != p)
            .collect();
        errors.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        if !errors.is_empty() {
            writeln!(f, "top confusions (gold -> predicted):")?;
            for ((gold, predicted), count) in errors.into_iter().take(10) {
                writeln!(f, "  {gold} -> {predicted}: {count}")?;
            }
        }
        Ok(())
    }
}

pub fn evaluate(
    predicted: &AnnotatedCorpus,
    gold: &AnnotatedCorpus,
    dictionary: &Dictionary,
) -> Result<EvalReport, EvalError> {
    let mut report = EvalReport::default();
    for (s, (p, g)) in predicted.sentences.iter().zip(&gold.sentences).enumerate() {
        for position in 0..p.len().max(g.len()) {
            let (pt, gt) = match (p.tokens.get(position), g.tokens.get(position)) {
                (Some(pt), Some(gt)) if pt.word == gt.word => (pt, gt),
                _ => {
                    return Err(EvalError::CorpusMismatch {
                        sentence: s,
                        position,
                    })
                }
            };
            let correct = pt.tag == gt.tag;
            report.total_tokens += 1;
            report.correct_tokens += u64::from(correct);
            if !dictionary.contains(&gt.word) {
                report.unknown_word_tokens += 1;
                report.unknown_word_correct += u64::from(correct);
            }
            *report
                .per_tag_confusion
                .entry((gt.tag.clone(), pt.tag.clone()))
                .or_insert(0) += 1;
        }
    }
    let (np, ng) = (predicted.sentences.len(), gold.sentences.len());
    if np != ng {
        return Err(EvalError::CorpusMismatch {
            sentence: np.min(ng),
            position: 0,
        });
    }
    report.accuracy = ratio(report.correct_tokens, report.total_tokens);
    report.unknown_word_accuracy = ratio(report.unknown_word_correct, report.unknown_word_tokens);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_annotated, CorpusConfig};
    use proptest::prelude::*;

    const GOLD: &str = "saya/PRP makan/VB nasi/NN\nsaya/PRP minum/VB\nnasi/NN enak/JJ\n";

    fn parse(s: &str) -> AnnotatedCorpus {
        parse_annotated(s, &CorpusConfig::default()).unwrap()
    }

    #[test]
    fn perfect_and_all_wrong() {
        let gold = parse(GOLD);
        let r = evaluate(&gold, &gold, &Dictionary::default()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.unknown_word_tokens, 7);
        let wrong = parse("saya/X makan/X nasi/X\nsaya/X minum/X\nnasi/X enak/X\n");
        let r = evaluate(&wrong, &gold, &Dictionary::default()).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(
            r.per_tag_confusion[&("PRP".to_string(), "X".to_string())],
            2
        );
    }

    #[test]
    fn two_errors_of_seven() {
        let gold = parse(GOLD);
        let pred = parse("saya/PRP makan/NN nasi/NN\nsaya/PRP minum/VB\nnasi/JJ enak/JJ\n");
        let mut dict = Dictionary::default();
        dict.entries
            .insert("nasi".into(), [("NN".to_string(), 2)].into());
        let r = evaluate(&pred, &gold, &dict).unwrap();
        assert_eq!((r.correct_tokens, r.total_tokens), (5, 7));
        assert!((r.accuracy - 5.0 / 7.0).abs() < 1e-15);
        assert_eq!(r.unknown_word_tokens, 5);
        assert_eq!(r.unknown_word_correct, 4);
        assert!(r.to_string().starts_with("accuracy: 71.43% (5/7)"));
        let total: u64 = r.per_tag_confusion.values().sum();
        assert_eq!(total, r.total_tokens);
    }

    #[test]
    fn mismatches_are_located() {
        let gold = parse(GOLD);
        let pred = parse("saya/PRP makan/VB nasi/NN\nsaya/PRP minum/VB\nnasi/NN lezat/JJ\n");
        assert_eq!(
            evaluate(&pred, &gold, &Dictionary::default()),
            Err(EvalError::CorpusMismatch {
                sentence: 2,
                position: 1
            })
        );
        let short = parse("saya/PRP makan/VB nasi/NN\n");
        assert_eq!(
            evaluate(&short, &gold, &Dictionary::default()),
            Err(EvalError::CorpusMismatch {
                sentence: 1,
                position: 0
            })
        );
        let truncated = parse("saya/PRP makan/VB\n");
        assert_eq!(
            evaluate(&truncated, &gold, &Dictionary::default()),
            Err(EvalError::CorpusMismatch {
                sentence: 0,
                position: 2
            })
        );
    }

    proptest! {
        #[test]
        fn reordering_preserves_accuracy(
            rows in prop::collection::vec(prop::collection::vec(("[a-c]", "[XY]", "[XY]"), 1..5), 1..20),
            seed in any::<u64>(),
        ) {
            let gold_lines: Vec<String> = rows.iter().map(|r| r.iter().map(|(w, g, _)| format!("{w}/{g}")).collect::<Vec<_>>().join(" ")).collect();
            let pred_lines: Vec<String> = rows.iter().map(|r| r.iter().map(|(w, _, p)| format!("{w}/{p}")).collect::<Vec<_>>().join(" ")).collect();
            let base = evaluate(&parse(&pred_lines.join("\n")), &parse(&gold_lines.join("\n")), &Dictionary::default()).unwrap();
            let self_eval = evaluate(&parse(&gold_lines.join("\n")), &parse(&gold_lines.join("\n")), &Dictionary::default()).unwrap();
            prop_assert_eq!(self_eval.accuracy, 1.0);
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.rotate_left((seed as usize) % rows.len());
            let g: Vec<&String> = order.iter().map(|&i| &gold_lines[i]).collect();
            let p: Vec<&String> = order.iter().map(|&i| &pred_lines[i]).collect();
            let join = |v: Vec<&String>| v.into_iter().cloned().collect::<Vec<_>>().join("\n");
            let shuffled = evaluate(&parse(&join(p)), &parse(&join(g)), &Dictionary::default()).unwrap();
            prop_assert_eq!(shuffled.accuracy, base.accuracy);
        }
    }
}
