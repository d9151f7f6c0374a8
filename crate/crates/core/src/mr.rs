//! In-process MapReduce engine.
//!
//! A job runs in three phases separated by barriers: map tasks over
//! contiguous input partitions, a shuffle that groups intermediate values by
//! key, and reduce tasks over contiguous slices of the sorted key set.
//!
//! The output is a pure function of the input records and the job's map and
//! reduce functions. It does not depend on the number of map or reduce
//! workers: keys are visited in ascending order, and the values for a key
//! arrive ordered by (map task index, emission order within the task), which
//! is exactly the order a single sequential pass would produce.

use std::collections::BTreeMap;
use std::error::Error as StdError;
use std::fmt::Write as _;
use std::num::NonZeroUsize;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

pub type TaskError = Box<dyn StdError + Send + Sync>;

#[derive(Debug, Error)]
pub enum JobError {
    #[error("job `{job}`: map task {task} failed: {source}")]
    Map {
        job: String,
        task: usize,
        #[source]
        source: TaskError,
    },
    #[error("job `{job}`: reduce task {task} failed: {source}")]
    Reduce {
        job: String,
        task: usize,
        #[source]
        source: TaskError,
    },
    #[error("job `{job}`: worker panicked in task {task}")]
    Panicked { job: String, task: usize },
    #[error("worker counts must be positive")]
    ZeroWorkers,
}

/// User-supplied map and reduce functions of a job.
///
/// Both functions must be pure: the engine may call them from any worker
/// thread, and it relies on them producing the same emissions for the same
/// arguments.
pub trait MapReduce: Sync {
    type Input: Sync;
    type Key: Ord + Send;
    type Value: Send;
    type Output: Send;

    fn name(&self) -> &str;

    fn map(
        &self,
        record: &Self::Input,
        emit: &mut Vec<(Self::Key, Self::Value)>,
    ) -> Result<(), TaskError>;

    fn reduce(
        &self,
        key: Self::Key,
        values: Vec<Self::Value>,
        emit: &mut Vec<(Self::Key, Self::Output)>,
    ) -> Result<(), TaskError>;
}

/// Worker counts for a job.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct JobConfig {
    num_maps: NonZeroUsize,
    num_reduces: NonZeroUsize,
}

impl Default for JobConfig {
    fn default() -> Self {
        Self::sequential()
    }
}

impl JobConfig {
    pub fn new(num_maps: usize, num_reduces: usize) -> Result<Self, JobError> {
        match (NonZeroUsize::new(num_maps), NonZeroUsize::new(num_reduces)) {
            (Some(num_maps), Some(num_reduces)) => Ok(Self {
                num_maps,
                num_reduces,
            }),
            _ => Err(JobError::ZeroWorkers),
        }
    }

    pub fn sequential() -> Self {
        Self {
            num_maps: NonZeroUsize::MIN,
            num_reduces: NonZeroUsize::MIN,
        }
    }

    pub fn num_maps(&self) -> usize {
        self.num_maps.get()
    }

    pub fn num_reduces(&self) -> usize {
        self.num_reduces.get()
    }
}

/// Timing and volume counters of one job run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct JobReport {
    pub name: String,
    pub num_maps: usize,
    pub num_reduces: usize,
    pub map_task_times: Vec<Duration>,
    /// Wall time of the whole map phase.
    pub map_time: Duration,
    pub shuffle_time: Duration,
    pub reduce_time: Duration,
    pub total_time: Duration,
    /// Time spent writing the job output out and reading it back in, when the
    /// caller persists intermediate results. Not part of `total_time`.
    pub persist_time: Duration,
    pub records_in: usize,
    pub intermediate_records: usize,
    pub records_out: usize,
}

pub const REPORT_CSV_HEADER: &str =
    "job,maps,reduces,map_ms,shuffle_ms,reduce_ms,total_ms,persist_ms,records_in,records_out";

pub fn millis(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl JobReport {
    pub fn csv_row(&self) -> String {
        let mut row = String::new();
        let _ = write!(
            row,
            "{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{},{}",
            self.name,
            self.num_maps,
            self.num_reduces,
            millis(self.map_time),
            millis(self.shuffle_time),
            millis(self.reduce_time),
            millis(self.total_time),
            millis(self.persist_time),
            self.records_in,
            self.records_out
        );
        row
    }

    /// Slowest single map task.
    pub fn max_map_task_time(&self) -> Duration {
        self.map_task_times
            .iter()
            .copied()
            .max()
            .unwrap_or_default()
    }

    /// Adds another run's times and counts into this one (used to fold the
    /// per-iteration jobs of training into a single row).
    pub fn accumulate(&mut self, other: &JobReport) {
        self.map_task_times.extend_from_slice(&other.map_task_times);
        self.map_time += other.map_time;
        self.shuffle_time += other.shuffle_time;
        self.reduce_time += other.reduce_time;
        self.total_time += other.total_time;
        self.persist_time += other.persist_time;
        self.records_in += other.records_in;
        self.intermediate_records += other.intermediate_records;
        self.records_out += other.records_out;
    }
}

/// Contiguous, order-preserving split into `min(num_maps, records.len())`
/// non-empty chunks whose sizes differ by at most one; larger chunks first.
pub fn partition_input<T>(records: &[T], num_maps: usize) -> Vec<&[T]> {
    chunk_bounds(records.len(), num_maps)
        .map(|(start, end)| &records[start..end])
        .collect()
}

fn chunk_bounds(len: usize, parts: usize) -> impl Iterator<Item = (usize, usize)> {
    let parts = parts.max(1).min(len);
    let (base, extra) = match (len.checked_div(parts), len.checked_rem(parts)) {
        (Some(b), Some(e)) => (b, e),
        _ => (0, 0),
    };
    let mut start = 0;
    (0..parts).map(move |i| {
        let size = base + usize::from(i < extra);
        let bounds = (start, start + size);
        start += size;
        bounds
    })
}

/// Reduce output of a job, sorted by key.
pub type JobOutput<J> = Vec<(<J as MapReduce>::Key, <J as MapReduce>::Output)>;

type Emitted<K, V> = Vec<(K, V)>;
type MapResult<J> = Result<
    (
        Emitted<<J as MapReduce>::Key, <J as MapReduce>::Value>,
        Duration,
    ),
    TaskError,
>;
type ReduceResult<J> = Result<JobOutput<J>, TaskError>;

/// Runs `job` with the worker counts in `config`.
pub fn run_job<J: MapReduce>(
    job: &J,
    input: &[J::Input],
    config: &JobConfig,
) -> Result<(JobOutput<J>, JobReport), JobError> {
    execute(job, input, config.num_maps(), config.num_reduces(), true)
}

/// Reference execution: one map task and one reduce task on the calling
/// thread.
pub fn run_sequential<J: MapReduce>(job: &J, input: &[J::Input]) -> Result<JobOutput<J>, JobError> {
    execute(job, input, 1, 1, false).map(|(out, _)| out)
}

fn execute<J: MapReduce>(
    job: &J,
    input: &[J::Input],
    num_maps: usize,
    num_reduces: usize,
    threaded: bool,
) -> Result<(JobOutput<J>, JobReport), JobError> {
    let started = Instant::now();
    let mut report = JobReport {
        name: job.name().to_string(),
        num_maps,
        num_reduces,
        records_in: input.len(),
        ..JobReport::default()
    };

    // map
    let partitions = partition_input(input, num_maps);
    let map_started = Instant::now();
    let map_results: Vec<MapResult<J>> = if threaded {
        thread::scope(|scope| {
            let handles: Vec<_> = partitions
                .iter()
                .map(|part| scope.spawn(move || map_task(job, part)))
                .collect();
            handles
                .into_iter()
                .enumerate()
                .map(|(task, h)| {
                    h.join().map_err(|_| JobError::Panicked {
                        job: job.name().to_string(),
                        task,
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        })?
    } else {
        partitions.iter().map(|part| map_task(job, part)).collect()
    };
    report.map_time = map_started.elapsed();

    let mut task_outputs = Vec::with_capacity(map_results.len());
    for (task, result) in map_results.into_iter().enumerate() {
        let (emitted, elapsed) = result.map_err(|source| JobError::Map {
            job: job.name().to_string(),
            task,
            source,
        })?;
        report.map_task_times.push(elapsed);
        task_outputs.push(emitted);
    }

    // shuffle: group by key, values in (task, emission) order
    let shuffle_started = Instant::now();
    let mut groups: BTreeMap<J::Key, Vec<J::Value>> = BTreeMap::new();
    for emitted in task_outputs {
        report.intermediate_records += emitted.len();
        for (key, value) in emitted {
            groups.entry(key).or_default().push(value);
        }
    }
    let mut groups: Vec<(J::Key, Vec<J::Value>)> = groups.into_iter().collect();
    report.shuffle_time = shuffle_started.elapsed();

    // reduce over contiguous key ranges
    let reduce_started = Instant::now();
    let mut slices = Vec::new();
    let bounds: Vec<_> = chunk_bounds(groups.len(), num_reduces).collect();
    for &(start, _) in bounds.iter().rev() {
        slices.push(groups.split_off(start));
    }
    slices.reverse();

    let reduce_results: Vec<ReduceResult<J>> = if threaded {
        thread::scope(|scope| {
            let handles: Vec<_> = slices
                .into_iter()
                .map(|slice| scope.spawn(move || reduce_task(job, slice)))
                .collect();
            handles
                .into_iter()
                .enumerate()
                .map(|(task, h)| {
                    h.join().map_err(|_| JobError::Panicked {
                        job: job.name().to_string(),
                        task,
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        })?
    } else {
        slices
            .into_iter()
            .map(|slice| reduce_task(job, slice))
            .collect()
    };

    let mut output = Vec::new();
    for (task, result) in reduce_results.into_iter().enumerate() {
        let emitted = result.map_err(|source| JobError::Reduce {
            job: job.name().to_string(),
            task,
            source,
        })?;
        output.extend(emitted);
    }
    report.reduce_time = reduce_started.elapsed();
    report.records_out = output.len();
    report.total_time = started.elapsed();
    Ok((output, report))
}

fn map_task<J: MapReduce>(job: &J, part: &[J::Input]) -> MapResult<J> {
    let started = Instant::now();
    let mut emitted = Vec::new();
    for record in part {
        job.map(record, &mut emitted)?;
    }
    Ok((emitted, started.elapsed()))
}

fn reduce_task<J: MapReduce>(
    job: &J,
    slice: Vec<(J::Key, Vec<J::Value>)>,
) -> Result<Emitted<J::Key, J::Output>, TaskError> {
    let mut emitted = Vec::new();
    for (key, values) in slice {
        job.reduce(key, values, &mut emitted)?;
    }
    Ok(emitted)
}
