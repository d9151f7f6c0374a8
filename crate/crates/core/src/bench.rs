//! Timing harness: training jobs, training totals with and without
//! intermediate persistence, and document tagging, over a grid of corpus
//! sizes and worker counts.

use std::time::Duration;

use crate::corpus::AnnotatedCorpus;
use crate::maxent::{train_with, MaxentError, TrainConfig, TrainOptions};
use crate::mr::{millis, JobConfig, JobReport};
use crate::tagger::{tag_document_job, TagError};

pub const BENCH_CSV_HEADER: &str =
    "job,corpus_words,maps,reduces,map_ms,shuffle_ms,reduce_ms,total_ms,persist_ms,speedup";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub job: String,
    pub corpus_words: usize,
    pub maps: usize,
    pub reduces: usize,
    pub map_time: Duration,
    pub shuffle_time: Duration,
    pub reduce_time: Duration,
    pub total_time: Duration,
    pub persist_time: Duration,
    /// Total time of the (1, 1) run of the same job and size divided by this
    /// row's total time.
    pub speedup: f64,
}

impl BenchRow {
    fn from_report(report: &JobReport, corpus_words: usize) -> Self {
        Self {
            job: report.name.clone(),
            corpus_words,
            maps: report.num_maps,
            reduces: report.num_reduces,
            map_time: report.map_time,
            shuffle_time: report.shuffle_time,
            reduce_time: report.reduce_time,
            total_time: report.total_time,
            persist_time: report.persist_time,
            speedup: 1.0,
        }
    }

    fn total(
        job: &str,
        corpus_words: usize,
        jobs: &JobConfig,
        total: Duration,
        persist: Duration,
    ) -> Self {
        Self {
            job: job.to_string(),
            corpus_words,
            maps: jobs.num_maps(),
            reduces: jobs.num_reduces(),
            map_time: Duration::ZERO,
            shuffle_time: Duration::ZERO,
            reduce_time: Duration::ZERO,
            total_time: total,
            persist_time: persist,
            speedup: 1.0,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.4}",
            self.job,
            self.corpus_words,
            self.maps,
            self.reduces,
            millis(self.map_time),
            millis(self.shuffle_time),
            millis(self.reduce_time),
            millis(self.total_time),
            millis(self.persist_time),
            self.speedup
        )
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub maps: Vec<usize>,
    pub reduces: Vec<usize>,
    /// Document sizes (words) to tag with each trained model; the training
    /// size itself when empty.
    pub doc_sizes: Vec<usize>,
    pub train: TrainConfig,
    /// Also run training with every job's output written out and read back,
    /// reported as `*_persist` rows and `train_total_with_persist`.
    pub persist_intermediate: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("size {size} exceeds the corpus ({available} words)")]
    SizeTooLarge { size: usize, available: usize },
    #[error("empty {0} list")]
    EmptyGrid(&'static str),
    #[error(transparent)]
    Job(#[from] crate::mr::JobError),
    #[error(transparent)]
    Train(#[from] MaxentError),
    #[error(transparent)]
    Tag(#[from] TagError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// `(1, 1)` first, then the rest of `maps × reduces` in list order.
fn worker_grid(maps: &[usize], reduces: &[usize]) -> Result<Vec<JobConfig>, BenchError> {
    let mut grid = vec![JobConfig::sequential()];
    for &m in maps {
        for &r in reduces {
            let jobs = JobConfig::new(m, r)?;
            if !grid.contains(&jobs) {
                grid.push(jobs);
            }
        }
    }
    Ok(grid)
}

/// Runs the grid, handing each row to `emit` as soon as it is measured.
/// Rows from the implicit `(1, 1)` baseline are emitted only when `(1, 1)` is
/// part of the requested grid.
pub fn run_bench(
    corpus: &AnnotatedCorpus,
    config: &BenchConfig,
    mut emit: impl FnMut(&BenchRow) -> std::io::Result<()>,
) -> Result<(), BenchError> {
    if config.sizes.is_empty() {
        return Err(BenchError::EmptyGrid("sizes"));
    }
    if config.maps.is_empty() {
        return Err(BenchError::EmptyGrid("maps"));
    }
    if config.reduces.is_empty() {
        return Err(BenchError::EmptyGrid("reduces"));
    }
    let grid = worker_grid(&config.maps, &config.reduces)?;
    let baseline_requested = config.maps.contains(&1) && config.reduces.contains(&1);

    for &size in &config.sizes {
        if size > corpus.word_count {
            return Err(BenchError::SizeTooLarge {
                size,
                available: corpus.word_count,
            });
        }
        let train_corpus = corpus.truncate_words(size);
        let doc_sizes = if config.doc_sizes.is_empty() {
            vec![size]
        } else {
            config.doc_sizes.clone()
        };
        let mut baseline: Vec<(String, usize, Duration)> = Vec::new();
        for (g, jobs) in grid.iter().enumerate() {
            let is_baseline = g == 0;
            let mut rows = Vec::new();

            let plain = train_with(&train_corpus, &config.train, jobs, &TrainOptions::default())?;
            for r in &plain.job_reports {
                rows.push(BenchRow::from_report(r, size));
            }
            rows.push(BenchRow::from_report(&plain.expectation_summary(), size));
            rows.push(BenchRow::total(
                "train_total",
                size,
                jobs,
                plain.elapsed,
                Duration::ZERO,
            ));

            if config.persist_intermediate {
                let dir = tempfile::tempdir()?;
                let options = TrainOptions {
                    persist_dir: Some(dir.path().to_path_buf()),
                    track_likelihood: false,
                };
                let persisted = train_with(&train_corpus, &config.train, jobs, &options)?;
                for r in persisted
                    .job_reports
                    .iter()
                    .chain([&persisted.expectation_summary()])
                {
                    let mut row = BenchRow::from_report(r, size);
                    row.job = format!("{}_persist", r.name);
                    rows.push(row);
                }
                rows.push(BenchRow::total(
                    "train_total_with_persist",
                    size,
                    jobs,
                    persisted.elapsed,
                    persisted.persist_time,
                ));
            }

            for &doc_words in &doc_sizes {
                if doc_words > corpus.word_count {
                    return Err(BenchError::SizeTooLarge {
                        size: doc_words,
                        available: corpus.word_count,
                    });
                }
                let document = corpus.truncate_words(doc_words).plain_lines();
                let (_, report) =
                    tag_document_job(&plain.model, &document, config.train.beam_width, jobs)?;
                rows.push(BenchRow::from_report(&report, doc_words));
            }

            for mut row in rows {
                if is_baseline {
                    baseline.push((row.job.clone(), row.corpus_words, row.total_time));
                }
                let base = baseline
                    .iter()
                    .find(|(job, words, _)| *job == row.job && *words == row.corpus_words)
                    .map(|(_, _, t)| *t);
                row.speedup = match base {
                    Some(t) if !row.total_time.is_zero() => {
                        t.as_secs_f64() / row.total_time.as_secs_f64()
                    }
                    _ => 1.0,
                };
                if !is_baseline || baseline_requested {
                    emit(&row)?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::default_language;

    fn config(maps: Vec<usize>, reduces: Vec<usize>, persist: bool) -> BenchConfig {
        BenchConfig {
            sizes: vec![600],
            maps,
            reduces,
            doc_sizes: vec![],
            train: TrainConfig {
                iterations: 2,
                ..TrainConfig::default()
            },
            persist_intermediate: persist,
        }
    }

    #[test]
    fn row_count_per_job() {
        let corpus = default_language(1).corpus(1000, 2);
        let mut rows = Vec::new();
        run_bench(&corpus, &config(vec![1, 3, 30], vec![1, 6], false), |r| {
            rows.push(r.clone());
            Ok(())
        })
        .unwrap();
        for job in [
            "dictionary",
            "tagtoken",
            "histories",
            "features",
            "expectations",
            "train_total",
        ] {
            assert_eq!(rows.iter().filter(|r| r.job == job).count(), 6, "{job}");
        }
        assert!(rows
            .iter()
            .all(|r| r.total_time > Duration::ZERO && r.speedup > 0.0));
        let seq: Vec<_> = rows
            .iter()
            .filter(|r| r.maps == 1 && r.reduces == 1)
            .collect();
        assert!(seq.iter().all(|r| r.speedup == 1.0));
        assert!(rows
            .iter()
            .all(|r| r.csv_row().split(',').count() == BENCH_CSV_HEADER.split(',').count()));
    }

    #[test]
    fn baseline_hidden_unless_requested() {
        let corpus = default_language(1).corpus(1000, 2);
        let mut rows = Vec::new();
        run_bench(&corpus, &config(vec![2], vec![2], true), |r| {
            rows.push(r.clone());
            Ok(())
        })
        .unwrap();
        assert!(rows.iter().all(|r| r.maps == 2 && r.reduces == 2));
        let persisted: Vec<_> = rows
            .iter()
            .filter(|r| r.job.ends_with("_persist") && !r.job.starts_with("train_total"))
            .collect();
        assert_eq!(persisted.len(), 5);
        assert!(persisted.iter().all(|r| r.persist_time > Duration::ZERO));
        assert!(rows.iter().any(|r| r.job == "train_total_with_persist"));
    }

    #[test]
    fn rejects_oversized_and_empty() {
        let corpus = default_language(1).corpus(100, 2);
        let sink = |_: &BenchRow| Ok(());
        assert!(matches!(
            run_bench(&corpus, &config(vec![1], vec![1], false), sink),
            Err(BenchError::SizeTooLarge { .. })
        ));
        assert!(matches!(
            run_bench(&corpus, &config(vec![], vec![1], false), sink),
            Err(BenchError::EmptyGrid("maps"))
        ));
        assert!(matches!(
            run_bench(&corpus, &config(vec![0], vec![1], false), sink),
            Err(BenchError::Job(_))
        ));
    }
}
