//! Conditional maximum-entropy model and its iterative-scaling trainers.
//!
//! `p(t|h) = exp(Σ_j λ_j f_j(h,t)) / Z(h)` with `λ_j = ln α_j`. The
//! normaliser `Z(h)` runs over the candidate tags of the history's word.
//!
//! Both GIS and IIS apply *batch* updates: every weight change of an
//! iteration is computed from the same model expectations and then applied
//! at once. That makes an iteration a pure function of the expectations, and
//! the expectations come out of a MapReduce job whose output does not depend
//! on the worker counts, so training is bit-identical for any number of
//! workers.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::codec::{self, CodecError};
use crate::corpus::AnnotatedCorpus;
use crate::features::{
    build_features_job, extract_histories_job, BuildFeaturesError, Event, FeatureIndex, History,
    SentenceContext, MAX_ACTIVE,
};
use crate::lexicon::{
    build_dictionary_job, build_tagtoken_job, learn_closed_class_tags, Dictionary, LexiconError,
    Tagset,
};
use crate::mr::{run_job, JobConfig, JobError, JobReport, MapReduce, TaskError};

#[derive(Debug, Error)]
pub enum MaxentError {
    #[error("non-finite score: weights have diverged")]
    NumericOverflow,
    #[error("feature {0} has zero model expectation but positive empirical expectation")]
    ZeroModelExpectation(usize),
    #[error("weight update for feature {0} did not converge")]
    NewtonNonconvergence(usize),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("gold tag {tag:?} is not a candidate for {word:?}")]
    GoldNotCandidate { word: String, tag: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Job(#[from] JobError),
    #[error(transparent)]
    Features(#[from] BuildFeaturesError),
    #[error("persisting intermediate results: {0}")]
    Persist(String),
}

impl From<CodecError> for MaxentError {
    fn from(e: CodecError) -> Self {
        MaxentError::Persist(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Search {
    Gis,
    Iis,
}

impl Search {
    pub fn as_str(self) -> &'static str {
        match self {
            Search::Gis => "gis",
            Search::Iis => "iis",
        }
    }
}

impl FromStr for Search {
    type Err = MaxentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gis" => Ok(Search::Gis),
            "iis" => Ok(Search::Iis),
            other => Err(MaxentError::InvalidConfig(format!(
                "unknown search {other:?}"
            ))),
        }
    }
}

/// Training parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub search: Search,
    pub iterations: u32,
    /// Current-word templates fire only for words seen at least this often.
    pub min_word_count: u64,
    pub closed_class_threshold: usize,
    pub learn_closed_class: bool,
    /// Variance of an optional Gaussian prior on the weights.
    pub sigma_squared: Option<f64>,
    /// Stop once the largest weight change of an iteration falls below this.
    pub early_stop: Option<f64>,
    pub tag_separator: char,
    /// Default beam width for tagging with this model.
    pub beam_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            search: Search::Iis,
            iterations: 500,
            min_word_count: 2,
            closed_class_threshold: 10,
            learn_closed_class: true,
            sigma_squared: None,
            early_stop: None,
            tag_separator: '/',
            beam_width: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MaxentError> {
        let bad = |m: &str| Err(MaxentError::InvalidConfig(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.beam_width == 0 {
            return bad("beam width must be at least 1");
        }
        if self.tag_separator.is_whitespace() {
            return bad("tag separator must not be whitespace");
        }
        if let Some(s) = self.sigma_squared {
            if !(s.is_finite() && s > 0.0) {
                return bad("sigma squared must be positive and finite");
            }
        }
        if let Some(t) = self.early_stop {
            if !(t.is_finite() && t > 0.0) {
                return bad("early-stop tolerance must be positive and finite");
            }
        }
        Ok(())
    }
}

/// A trained (or in-training) model. Immutable apart from its weights.
#[derive(Clone, Debug)]
pub struct Model {
    lambda: Vec<f64>,
    mu_log: f64,
    features: FeatureIndex,
    tagset: Tagset,
    dictionary: Dictionary,
    config: TrainConfig,
    known: HashMap<String, Vec<usize>>,
    unknown: Vec<usize>,
}

impl Model {
    pub fn new(
        features: FeatureIndex,
        tagset: Tagset,
        dictionary: Dictionary,
        config: TrainConfig,
        lambda: Vec<f64>,
        mu_log: f64,
    ) -> Result<Self, MaxentError> {
        config.validate()?;
        if tagset.is_empty() {
            return Err(LexiconError::EmptyTagset.into());
        }
        if lambda.len() != features.len() {
            return Err(MaxentError::InvalidModel(format!(
                "{} weights for {} features",
                lambda.len(),
                features.len()
            )));
        }
        if lambda.iter().any(|l| !l.is_finite()) || !mu_log.is_finite() {
            return Err(MaxentError::InvalidModel("non-finite weight".into()));
        }
        let mut known = HashMap::with_capacity(dictionary.entries.len());
        for (word, tags) in &dictionary.entries {
            let mut idx = Vec::with_capacity(tags.len());
            for tag in tags.keys() {
                idx.push(tagset.index_of(tag).ok_or_else(|| {
                    MaxentError::InvalidModel(format!("dictionary tag {tag:?} not in tagset"))
                })?);
            }
            known.insert(word.clone(), idx);
        }
        let unknown = tagset
            .unknown_word_tags(config.learn_closed_class)
            .into_iter()
            .filter_map(|t| tagset.index_of(t))
            .collect();
        Ok(Self {
            lambda,
            mu_log,
            features,
            tagset,
            dictionary,
            config,
            known,
            unknown,
        })
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Replaces the weights; rejects a length change or non-finite values.
    pub fn set_lambda(&mut self, lambda: Vec<f64>) -> Result<(), MaxentError> {
        if lambda.len() != self.lambda.len() {
            return Err(MaxentError::InvalidModel("weight count changed".into()));
        }
        if lambda.iter().any(|l| !l.is_finite()) {
            return Err(MaxentError::NumericOverflow);
        }
        self.lambda = lambda;
        Ok(())
    }

    pub fn mu_log(&self) -> f64 {
        self.mu_log
    }

    pub fn features(&self) -> &FeatureIndex {
        &self.features
    }

    pub fn tagset(&self) -> &Tagset {
        &self.tagset
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dictionary
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Candidate tag indices for `word`, in tagset order.
    pub fn candidates(&self, word: &str) -> &[usize] {
        self.known.get(word).map_or(&self.unknown, Vec::as_slice)
    }

    pub fn sentence_context<S: AsRef<str>>(&self, words: &[S]) -> SentenceContext {
        self.features
            .sentence_context(words, &self.dictionary, self.config.min_word_count)
    }

    /// `ln p(t|h)` for each of `candidates` at position `i`, written to `out`.
    pub fn local_log_probs(
        &self,
        sentence: &SentenceContext,
        i: usize,
        prev: Option<usize>,
        prev_prev: Option<usize>,
        candidates: &[usize],
        out: &mut Vec<f64>,
    ) -> Result<(), MaxentError> {
        out.clear();
        out.resize(candidates.len(), 0.0);
        let keys = self.features.context_keys(sentence, i, prev, prev_prev);
        self.features.for_each_match(&keys, |tag, j| {
            if let Some(slot) = candidates.iter().position(|&c| c == tag) {
                out[slot] += self.lambda[j];
            }
        });
        normalize_log(out)
    }

    /// Conditional distribution over the candidate tags of `h`'s word;
    /// tags outside the candidate set have probability zero and are omitted.
    pub fn conditional_probability(
        &self,
        h: &History,
    ) -> Result<BTreeMap<String, f64>, MaxentError> {
        let sentence = self.sentence_context(&h.words);
        let candidates = self.candidates(h.word());
        let mut logp = Vec::new();
        self.local_log_probs(
            &sentence,
            h.position,
            self.tagset.index_of(&h.prev_tag),
            self.tagset.index_of(&h.prev_prev_tag),
            candidates,
            &mut logp,
        )?;
        Ok(candidates
            .iter()
            .zip(logp)
            .map(|(&t, lp)| (self.tagset.tags()[t].clone(), lp.exp()))
            .collect())
    }
}

/// Turns scores into log-probabilities in place (log-sum-exp).
fn normalize_log(scores: &mut [f64]) -> Result<(), MaxentError> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || scores.iter().any(|s| !s.is_finite()) {
        return Err(MaxentError::NumericOverflow);
    }
    let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let log_z = max + sum.ln();
    for s in scores.iter_mut() {
        *s -= log_z;
    }
    Ok(())
}

/// One training event with the active features of each candidate tag.
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledEvent {
    /// Position of the gold tag within `candidates`.
    pub gold: usize,
    pub candidates: Vec<CandidateFeatures>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateFeatures {
    pub tag: usize,
    pub features: Vec<u32>,
}

impl CompiledEvent {
    fn log_probs(&self, lambda: &[f64], out: &mut Vec<f64>) -> Result<(), MaxentError> {
        out.clear();
        out.extend(
            self.candidates
                .iter()
                .map(|c| c.features.iter().map(|&j| lambda[j as usize]).sum::<f64>()),
        );
        normalize_log(out)
    }
}

/// Training events resolved against a model's feature index.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub events: Vec<CompiledEvent>,
}

impl TrainingSet {
    pub fn compile(model: &Model, events: &[Event]) -> Result<Self, MaxentError> {
        let mut compiled = Vec::with_capacity(events.len());
        let mut cached: Option<(Arc<[String]>, SentenceContext)> = None;
        for e in events {
            let h = &e.history;
            let ctx = match &cached {
                Some((words, ctx)) if Arc::ptr_eq(words, &h.words) => ctx,
                _ => {
                    cached = Some((Arc::clone(&h.words), model.sentence_context(&h.words)));
                    &cached.as_ref().unwrap().1
                }
            };
            let tags = model.tagset();
            let keys = model.features().context_keys(
                ctx,
                h.position,
                tags.index_of(&h.prev_tag),
                tags.index_of(&h.prev_prev_tag),
            );
            let cands = model.candidates(h.word());
            let mut candidates: Vec<CandidateFeatures> = cands
                .iter()
                .map(|&tag| CandidateFeatures {
                    tag,
                    features: Vec::new(),
                })
                .collect();
            model.features().for_each_match(&keys, |tag, j| {
                if let Some(c) = candidates.iter_mut().find(|c| c.tag == tag) {
                    c.features.push(j as u32);
                }
            });
            let gold = tags
                .index_of(&e.gold)
                .and_then(|g| cands.iter().position(|&c| c == g))
                .ok_or_else(|| MaxentError::GoldNotCandidate {
                    word: h.word().to_string(),
                    tag: e.gold.clone(),
                })?;
            compiled.push(CompiledEvent { gold, candidates });
        }
        Ok(Self { events: compiled })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Largest number of features active on any (history, candidate) pair:
    /// the GIS step constant.
    pub fn max_active(&self) -> usize {
        self.events
            .iter()
            .flat_map(|e| e.candidates.iter().map(|c| c.features.len()))
            .max()
            .unwrap_or(0)
    }
}

/// One value per feature.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectationTable {
    pub values: Vec<f64>,
}

/// Model expectations, also split by the number of features active on the
/// (history, tag) pair that contributed: `moments[j][m]` sums `p(t|h)/N`
/// over pairs where feature `j` fires together with `m - 1` others.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelExpectations {
    pub table: ExpectationTable,
    pub moments: Vec<[f64; MAX_ACTIVE + 1]>,
    pub events: usize,
}

pub fn empirical_expectations(
    events: &[Event],
    index: &FeatureIndex,
) -> Result<ExpectationTable, MaxentError> {
    if events.is_empty() {
        return Err(MaxentError::EmptyTrainingSet);
    }
    let n = events.len() as f64;
    Ok(ExpectationTable {
        values: index
            .features()
            .iter()
            .map(|f| f.empirical_count as f64 / n)
            .collect(),
    })
}

struct ExpectationJob<'a> {
    lambda: &'a [f64],
}

impl MapReduce for ExpectationJob<'_> {
    type Input = CompiledEvent;
    type Key = u32;
    type Value = (u8, f64);
    type Output = [f64; MAX_ACTIVE + 1];

    fn name(&self) -> &str {
        "expectations"
    }

    fn map(
        &self,
        event: &CompiledEvent,
        emit: &mut Vec<(u32, (u8, f64))>,
    ) -> Result<(), TaskError> {
        let mut logp = Vec::with_capacity(event.candidates.len());
        event.log_probs(self.lambda, &mut logp)?;
        for (c, lp) in event.candidates.iter().zip(&logp) {
            let p = lp.exp();
            let active = c.features.len() as u8;
            emit.extend(c.features.iter().map(|&j| (j, (active, p))));
        }
        Ok(())
    }

    fn reduce(
        &self,
        key: u32,
        values: Vec<(u8, f64)>,
        emit: &mut Vec<(u32, [f64; MAX_ACTIVE + 1])>,
    ) -> Result<(), TaskError> {
        let mut bins = [0.0; MAX_ACTIVE + 1];
        for (m, p) in values {
            bins[m as usize] += p;
        }
        emit.push((key, bins));
        Ok(())
    }
}

/// `E_model[f_j] = (1/N) Σ_events Σ_t p(t|h) f_j(h,t)`, one map emission per
/// firing feature so the reduce-side summation order is the event order.
pub fn model_expectations_job(
    model: &Model,
    set: &TrainingSet,
    jobs: &JobConfig,
) -> Result<(ModelExpectations, JobReport), MaxentError> {
    if set.is_empty() {
        return Err(MaxentError::EmptyTrainingSet);
    }
    let job = ExpectationJob {
        lambda: &model.lambda,
    };
    let (out, report) = run_job(&job, &set.events, jobs).map_err(|e| match e {
        JobError::Map { source, .. } if source.is::<MaxentError>() => {
            *source.downcast::<MaxentError>().unwrap()
        }
        other => other.into(),
    })?;
    let n = set.len() as f64;
    let k = model.features.len();
    let mut moments = vec![[0.0; MAX_ACTIVE + 1]; k];
    for (j, bins) in out {
        moments[j as usize] = bins.map(|b| b / n);
    }
    let values = moments.iter().map(|m| m.iter().sum()).collect();
    Ok((
        ModelExpectations {
            table: ExpectationTable { values },
            moments,
            events: set.len(),
        },
        report,
    ))
}

/// Sequential reference for [`model_expectations_job`].
pub fn model_expectations(
    model: &Model,
    set: &TrainingSet,
) -> Result<ModelExpectations, MaxentError> {
    let job = ExpectationJob {
        lambda: &model.lambda,
    };
    let out = crate::mr::run_sequential(&job, &set.events)?;
    let n = set.len() as f64;
    let mut moments = vec![[0.0; MAX_ACTIVE + 1]; model.features.len()];
    for (j, bins) in out {
        moments[j as usize] = bins.map(|b| b / n);
    }
    let values = moments.iter().map(|m| m.iter().sum()).collect();
    Ok(ModelExpectations {
        table: ExpectationTable { values },
        moments,
        events: set.len(),
    })
}

pub fn log_likelihood(model: &Model, set: &TrainingSet) -> Result<f64, MaxentError> {
    let mut logp = Vec::new();
    let mut total = 0.0;
    for e in &set.events {
        e.log_probs(&model.lambda, &mut logp)?;
        total += logp[e.gold];
    }
    Ok(total)
}

const NEWTON_TOLERANCE: f64 = 1e-10;
const NEWTON_MAX_STEPS: usize = 50;

/// Root of an increasing function by Newton's method safeguarded with
/// bisection inside a bracket.
fn solve_increasing(f: impl Fn(f64) -> (f64, f64)) -> Option<f64> {
    let (f0, _) = f(0.0);
    if f0 == 0.0 {
        return Some(0.0);
    }
    if f0.is_nan() {
        return None;
    }
    // bracket [lo, hi] with f(lo) < 0 < f(hi)
    let (mut lo, mut hi) = if f0 < 0.0 { (0.0, 1.0) } else { (-1.0, 0.0) };
    for _ in 0..64 {
        if f0 < 0.0 {
            if f(hi).0 > 0.0 {
                break;
            }
            lo = hi;
            hi *= 2.0;
        } else {
            if f(lo).0 < 0.0 {
                break;
            }
            hi = lo;
            lo *= 2.0;
        }
    }
    if !(f(lo).0 < 0.0 && f(hi).0 > 0.0) {
        return None;
    }
    let mut x = if f0 < 0.0 { lo } else { hi };
    for _ in 0..NEWTON_MAX_STEPS {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return Some(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / dfx;
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= NEWTON_TOLERANCE || hi - lo <= NEWTON_TOLERANCE {
            return Some(next);
        }
        x = next;
    }
    None
}

/// Penalty-gradient term of the Gaussian prior, per event: `(λ+δ)/(Nσ²)`.
fn prior_term(config: &TrainConfig, events: usize) -> Option<f64> {
    config.sigma_squared.map(|s2| 1.0 / (events as f64 * s2))
}

/// Batch GIS step with constant `c`:
/// `λ_j += ln(E_emp[f_j] / E_model[f_j]) / c` for every `j` at once.
pub fn gis_update(
    model: &mut Model,
    empirical: &ExpectationTable,
    model_exp: &ExpectationTable,
    c: usize,
    events: usize,
) -> Result<(), MaxentError> {
    if c == 0 {
        return Err(MaxentError::InvalidConfig(
            "GIS constant must be positive".into(),
        ));
    }
    let cf = c as f64;
    let prior = prior_term(&model.config, events);
    let mut next = Vec::with_capacity(model.lambda.len());
    for (j, ((&l, &emp), &mexp)) in model
        .lambda
        .iter()
        .zip(&empirical.values)
        .zip(&model_exp.values)
        .enumerate()
    {
        if mexp <= 0.0 && emp > 0.0 {
            return Err(MaxentError::ZeroModelExpectation(j));
        }
        let delta = match prior {
            None => (emp / mexp).ln() / cf,
            Some(k) => solve_increasing(|d| {
                let e = mexp * (cf * d).exp();
                (e + k * (l + d) - emp, cf * e + k)
            })
            .ok_or(MaxentError::NewtonNonconvergence(j))?,
        };
        next.push(l + delta);
    }
    model.set_lambda(next)
}

/// Batch IIS step: for each `j` solve
/// `Σ_m moments[j][m] · exp(δ_j m) = E_emp[f_j]`, then apply all `δ_j`.
pub fn iis_update(
    model: &mut Model,
    expectations: &ModelExpectations,
    empirical: &ExpectationTable,
) -> Result<(), MaxentError> {
    let prior = prior_term(&model.config, expectations.events);
    let mut next = Vec::with_capacity(model.lambda.len());
    for (j, ((&l, &emp), moments)) in model
        .lambda
        .iter()
        .zip(&empirical.values)
        .zip(&expectations.moments)
        .enumerate()
    {
        if expectations.table.values[j] <= 0.0 && emp > 0.0 {
            return Err(MaxentError::ZeroModelExpectation(j));
        }
        let k = prior.unwrap_or(0.0);
        let delta = solve_increasing(|d| {
            let (mut value, mut slope) = (0.0, 0.0);
            for (m, &mass) in moments.iter().enumerate() {
                if mass != 0.0 {
                    let e = mass * (d * m as f64).exp();
                    value += e;
                    slope += m as f64 * e;
                }
            }
            (value + k * (l + d) - emp, slope + k)
        })
        .ok_or(MaxentError::NewtonNonconvergence(j))?;
        next.push(l + delta);
    }
    model.set_lambda(next)
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Write each job's output here and read it back before the next stage.
    pub persist_dir: Option<PathBuf>,
    /// Record the training log-likelihood before every iteration and after
    /// the last one.
    pub track_likelihood: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    /// dictionary, tagtoken, histories, features.
    pub job_reports: Vec<JobReport>,
    /// One expectation job per iteration.
    pub iteration_reports: Vec<JobReport>,
    pub log_likelihood: Vec<f64>,
    pub iterations_run: u32,
    /// Wall time of the whole run, persistence included.
    pub elapsed: Duration,
    pub persist_time: Duration,
}

impl TrainOutcome {
    /// All expectation jobs folded into one report.
    pub fn expectation_summary(&self) -> JobReport {
        let mut total = JobReport {
            name: "expectations".into(),
            ..JobReport::default()
        };
        if let Some(first) = self.iteration_reports.first() {
            total.num_maps = first.num_maps;
            total.num_reduces = first.num_reduces;
        }
        for r in &self.iteration_reports {
            total.accumulate(r);
        }
        total
    }
}

/// Round-trips `value` through `dir/name` when persisting, timing it.
fn persist<T>(
    dir: Option<&Path>,
    name: &str,
    value: T,
    report: &mut JobReport,
    write: impl Fn(&T) -> String,
    read: impl Fn(&str) -> Result<T, CodecError>,
) -> Result<T, MaxentError> {
    let Some(dir) = dir else {
        return Ok(value);
    };
    let started = Instant::now();
    let path = dir.join(name);
    fs::write(&path, write(&value))
        .map_err(|e| MaxentError::Persist(format!("{}: {e}", path.display())))?;
    drop(value);
    let text = fs::read_to_string(&path)
        .map_err(|e| MaxentError::Persist(format!("{}: {e}", path.display())))?;
    let back = read(&text)?;
    report.persist_time += started.elapsed();
    Ok(back)
}

pub fn train(
    corpus: &AnnotatedCorpus,
    config: &TrainConfig,
    jobs: &JobConfig,
) -> Result<Model, MaxentError> {
    train_with(corpus, config, jobs, &TrainOptions::default()).map(|o| o.model)
}

/// Runs the dictionary, tagtoken, histories and features jobs, then
/// `config.iterations` rounds of expectation job + weight update.
pub fn train_with(
    corpus: &AnnotatedCorpus,
    config: &TrainConfig,
    jobs: &JobConfig,
    options: &TrainOptions,
) -> Result<TrainOutcome, MaxentError> {
    config.validate()?;
    if corpus.word_count == 0 {
        return Err(MaxentError::EmptyTrainingSet);
    }
    let started = Instant::now();
    let dir = options.persist_dir.as_deref();
    let mut job_reports = Vec::with_capacity(4);

    let (dictionary, mut report) = build_dictionary_job(corpus, jobs)?;
    let dictionary = persist(
        dir,
        "dictionary.tsv",
        dictionary,
        &mut report,
        codec::write_dictionary,
        codec::read_dictionary,
    )?;
    job_reports.push(report);

    let (tagtoken, mut report) = build_tagtoken_job(corpus, jobs)?;
    let tagtoken = persist(
        dir,
        "tagtoken.tsv",
        tagtoken,
        &mut report,
        codec::write_tagtoken,
        codec::read_tagtoken,
    )?;
    job_reports.push(report);
    let tagset = learn_closed_class_tags(&tagtoken, config.closed_class_threshold);

    let (events, mut report) = extract_histories_job(corpus, jobs)?;
    let events = persist(
        dir,
        "histories.tsv",
        events,
        &mut report,
        |e| codec::write_events(e),
        codec::read_events,
    )?;
    job_reports.push(report);

    let (index, mut report) =
        build_features_job(&events, &tagset, &dictionary, config.min_word_count, jobs)?;
    let index = persist(
        dir,
        "features.tsv",
        index,
        &mut report,
        codec::write_features,
        |t| codec::read_features(t, &tagset),
    )?;
    job_reports.push(report);

    let k = index.len();
    let mut model = Model::new(index, tagset, dictionary, config.clone(), vec![0.0; k], 0.0)?;
    let set = TrainingSet::compile(&model, &events)?;
    let empirical = empirical_expectations(&events, model.features())?;
    let c = set.max_active();

    let mut iteration_reports = Vec::with_capacity(config.iterations as usize);
    let mut log_likelihood = Vec::new();
    let mut iterations_run = 0;
    for _ in 0..config.iterations {
        if options.track_likelihood {
            log_likelihood.push(self::log_likelihood(&model, &set)?);
        }
        let (mut expectations, mut report) = model_expectations_job(&model, &set, jobs)?;
        if dir.is_some() {
            let table = persist(
                dir,
                "expectations.tsv",
                expectations.table.values,
                &mut report,
                |v| codec::write_reals(v),
                |t| codec::read_reals(t, "EXPECTATIONS"),
            )?;
            expectations.table.values = table;
        }
        iteration_reports.push(report);

        let before = config.early_stop.map(|_| model.lambda.clone());
        match config.search {
            Search::Gis => gis_update(&mut model, &empirical, &expectations.table, c, set.len())?,
            Search::Iis => iis_update(&mut model, &expectations, &empirical)?,
        }
        iterations_run += 1;
        if let (Some(tol), Some(before)) = (config.early_stop, before) {
            let max_change = before
                .iter()
                .zip(&model.lambda)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if max_change < tol {
                break;
            }
        }
    }
    if options.track_likelihood {
        log_likelihood.push(self::log_likelihood(&model, &set)?);
    }

    let persist_time = job_reports
        .iter()
        .chain(&iteration_reports)
        .map(|r| r.persist_time)
        .sum();
    Ok(TrainOutcome {
        model,
        job_reports,
        iteration_reports,
        log_likelihood,
        iterations_run,
        elapsed: started.elapsed(),
        persist_time,
    })
}

/// The pieces of a training run before any weight update, for callers that
/// drive iterations themselves.
pub struct Prepared {
    pub model: Model,
    pub events: Vec<Event>,
    pub set: TrainingSet,
    pub empirical: ExpectationTable,
}

pub fn prepare(
    corpus: &AnnotatedCorpus,
    config: &TrainConfig,
    jobs: &JobConfig,
) -> Result<Prepared, MaxentError> {
    let mut one = config.clone();
    one.iterations = 1;
    one.validate()?;
    if corpus.word_count == 0 {
        return Err(MaxentError::EmptyTrainingSet);
    }
    let (dictionary, _) = build_dictionary_job(corpus, jobs)?;
    let (tagtoken, _) = build_tagtoken_job(corpus, jobs)?;
    let tagset = learn_closed_class_tags(&tagtoken, config.closed_class_threshold);
    let (events, _) = extract_histories_job(corpus, jobs)?;
    let (index, _) =
        build_features_job(&events, &tagset, &dictionary, config.min_word_count, jobs)?;
    let k = index.len();
    let model = Model::new(index, tagset, dictionary, config.clone(), vec![0.0; k], 0.0)?;
    let set = TrainingSet::compile(&model, &events)?;
    let empirical = empirical_expectations(&events, model.features())?;
    Ok(Prepared {
        model,
        events,
        set,
        empirical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_annotated, CorpusConfig};
    use crate::features::{apply_templates, sentence_events, BOUNDARY};

    const TOY: &str = "saya/PRP makan/VB nasi/NN\nsaya/PRP minum/VB\nnasi/NN enak/JJ\n";

    fn toy_config(search: Search, iterations: u32) -> TrainConfig {
        TrainConfig {
            search,
            iterations,
            min_word_count: 1,
            ..TrainConfig::default()
        }
    }

    fn corpus(text: &str) -> AnnotatedCorpus {
        parse_annotated(text, &CorpusConfig::default()).unwrap()
    }

    /// Ambiguous words appear only in duplicated contexts, so the maximum
    /// likelihood weights are finite.
    const AMBIGUOUS: &str = "\
the/DT can/NN rusts/VB\n\
the/DT can/NN rusts/VB\n\
the/DT can/MD rusts/VB\n\
i/PR can/MD go/VB\n\
i/PR can/MD go/VB\n\
i/PR can/NN go/VB\n\
the/DT dog/NN barks/VB\n\
i/PR go/VB\n";

    #[test]
    fn uniform_at_initialisation() {
        let p = prepare(
            &corpus(AMBIGUOUS),
            &toy_config(Search::Gis, 1),
            &JobConfig::sequential(),
        )
        .unwrap();
        let e = p.events.iter().find(|e| e.history.word() == "can").unwrap();
        let dist = p.model.conditional_probability(&e.history).unwrap();
        assert_eq!(dist.len(), 2);
        assert!(dist.values().all(|&v| (v - 0.5).abs() < 1e-15));
        let single = p.events.iter().find(|e| e.history.word() == "dog").unwrap();
        let dist = p.model.conditional_probability(&single.history).unwrap();
        assert_eq!(dist["NN"], 1.0);
    }

    #[test]
    fn two_candidate_closed_form() {
        let mut p = prepare(
            &corpus(AMBIGUOUS),
            &toy_config(Search::Gis, 1),
            &JobConfig::sequential(),
        )
        .unwrap();
        let e = p
            .events
            .iter()
            .find(|e| e.history.word() == "can")
            .unwrap()
            .clone();
        // λ = 1 on the first active NN feature, 0 elsewhere: scores e^1 and e^0
        let j = p
            .model
            .features()
            .active(&e.history, "NN", p.model.dictionary(), 1)[0];
        let mut lambda = vec![0.0; p.model.lambda().len()];
        lambda[j] = 1.0;
        p.model.set_lambda(lambda).unwrap();
        let dist = p.model.conditional_probability(&e.history).unwrap();
        let en = std::f64::consts::E;
        assert!((dist["NN"] - en / (en + 1.0)).abs() < 1e-15);
        assert!((dist["MD"] - 1.0 / (en + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn overflow_detected() {
        let mut p = prepare(
            &corpus(AMBIGUOUS),
            &toy_config(Search::Gis, 1),
            &JobConfig::sequential(),
        )
        .unwrap();
        assert!(p
            .model
            .set_lambda(vec![f64::INFINITY; p.model.lambda().len()])
            .is_err());
        let mut scores = [f64::MAX, f64::NEG_INFINITY];
        assert!(matches!(
            normalize_log(&mut scores),
            Err(MaxentError::NumericOverflow)
        ));
        // huge but finite scores still normalise
        let mut scores = [1e300, 1e300 - 1e290];
        normalize_log(&mut scores).unwrap();
        assert_eq!(scores[0], 0.0);
    }

    #[test]
    fn empirical_expectations_toy() {
        let p = prepare(
            &corpus(TOY),
            &toy_config(Search::Gis, 1),
            &JobConfig::sequential(),
        )
        .unwrap();
        let pred = crate::features::FeaturePredicate::new(
            crate::features::Template::Word,
            vec!["nasi".into()],
        )
        .unwrap();
        let j = p.model.features().get(&pred, "NN").unwrap();
        assert!((p.empirical.values[j] - 2.0 / 7.0).abs() < 1e-15);
        let n = p.events.len() as f64;
        assert!(p.empirical.values.iter().all(|&v| v >= 1.0 / n));
        assert!(matches!(
            empirical_expectations(&[], p.model.features()),
            Err(MaxentError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn empirical_matches_brute_force() {
        let p = prepare(
            &corpus(AMBIGUOUS),
            &toy_config(Search::Gis, 1),
            &JobConfig::sequential(),
        )
        .unwrap();
        let d = p.model.dictionary();
        let n = p.events.len() as f64;
        for f in p.model.features().features() {
            let mut count = 0.0;
            for e in &p.events {
                let preds = apply_templates(&e.history, d, 1);
                if e.gold == f.tag && preds.contains(&f.predicate) {
                    count += 1.0;
                }
            }
            assert_eq!(p.empirical.values[f.index], count / n);
        }
    }

    #[test]
    fn uniform_model_expectation_is_half() {
        let p = prepare(
            &corpus(AMBIGUOUS),
            &toy_config(Search::Gis, 1),
            &JobConfig::sequential(),
        )
        .unwrap();
        let n = p.set.len() as f64;
        // feature (template 1: dog, NN) fires once, on an unambiguous event
        let dog = crate::features::FeaturePredicate::new(
            crate::features::Template::Word,
            vec!["dog".into()],
        )
        .unwrap();
        let j = p.model.features().get(&dog, "NN").unwrap();
        let exp = model_expectations(&p.model, &p.set).unwrap();
        assert!((exp.table.values[j] - 1.0 / n).abs() < 1e-15);
        // (template 1: can, NN) fires on all six "can" events at p = 0.5
        let can = crate::features::FeaturePredicate::new(
            crate::features::Template::Word,
            vec!["can".into()],
        )
        .unwrap();
        let j = p.model.features().get(&can, "NN").unwrap();
        assert!((exp.table.values[j] - 6.0 * 0.5 / n).abs() < 1e-15);
    }

    #[test]
    fn expectations_are_worker_independent() {
        let p = prepare(
            &corpus(AMBIGUOUS),
            &toy_config(Search::Gis, 1),
            &JobConfig::sequential(),
        )
        .unwrap();
        let seq = model_expectations(&p.model, &p.set).unwrap();
        for (m, r) in [(1, 1), (3, 2), (30, 6)] {
            let (par, _) =
                model_expectations_job(&p.model, &p.set, &JobConfig::new(m, r).unwrap()).unwrap();
            assert_eq!(par, seq);
        }
    }

    #[test]
    fn gis_fixed_point_and_unit_step() {
        let mut p = prepare(
            &corpus(AMBIGUOUS),
            &toy_config(Search::Gis, 1),
            &JobConfig::sequential(),
        )
        .unwrap();
        let before = p.model.lambda().to_vec();
        let emp = p.empirical.clone();
        gis_update(&mut p.model, &emp, &emp, 7, p.set.len()).unwrap();
        assert_eq!(p.model.lambda(), before.as_slice());
        let c = 3;
        let model_exp = ExpectationTable {
            values: emp.values.iter().map(|v| v / (c as f64).exp()).collect(),
        };
        gis_update(&mut p.model, &emp, &model_exp, c, p.set.len()).unwrap();
        for l in p.model.lambda() {
            assert!((l - 1.0).abs() < 1e-14);
        }
        let zero = ExpectationTable {
            values: vec![0.0; emp.values.len()],
        };
        assert!(matches!(
            gis_update(&mut p.model, &emp, &zero, c, p.set.len()),
            Err(MaxentError::ZeroModelExpectation(0))
        ));
    }

    #[test]
    fn iis_fixed_point() {
        let mut p = prepare(
            &corpus(AMBIGUOUS),
            &toy_config(Search::Iis, 1),
            &JobConfig::sequential(),
        )
        .unwrap();
        let mut exp = model_expectations(&p.model, &p.set).unwrap();
        // make empirical equal the model expectations exactly
        let emp = exp.table.clone();
        exp.events = p.set.len();
        iis_update(&mut p.model, &exp, &emp).unwrap();
        assert!(p.model.lambda().iter().all(|&l| l == 0.0));
    }

    #[test]
    fn gis_log_likelihood_monotone() {
        let outcome = train_with(
            &corpus(AMBIGUOUS),
            &toy_config(Search::Gis, 500),
            &JobConfig::sequential(),
            &TrainOptions {
                track_likelihood: true,
                ..TrainOptions::default()
            },
        )
        .unwrap();
        let ll = &outcome.log_likelihood;
        assert_eq!(ll.len(), 501);
        for w in ll.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
        assert!(ll.iter().all(|&l| l <= 0.0));
    }

    #[test]
    fn trained_model_matches_empirical() {
        for search in [Search::Gis, Search::Iis] {
            let c = corpus(AMBIGUOUS);
            let model = train(&c, &toy_config(search, 500), &JobConfig::sequential()).unwrap();
            let (events, _) = extract_histories_job(&c, &JobConfig::sequential()).unwrap();
            let set = TrainingSet::compile(&model, &events).unwrap();
            let exp = model_expectations(&model, &set).unwrap();
            let emp = empirical_expectations(&events, model.features()).unwrap();
            for (m, e) in exp.table.values.iter().zip(&emp.values) {
                assert!(((m - e) / e).abs() < 1e-4, "{search:?}: {m} vs {e}");
            }
        }
    }

    #[test]
    fn toy_corpus_converges() {
        let c = corpus(TOY);
        let model = train(&c, &toy_config(Search::Gis, 500), &JobConfig::sequential()).unwrap();
        let (events, _) = extract_histories_job(&c, &JobConfig::sequential()).unwrap();
        let set = TrainingSet::compile(&model, &events).unwrap();
        let exp = model_expectations(&model, &set).unwrap();
        let emp = empirical_expectations(&events, model.features()).unwrap();
        for (m, e) in exp.table.values.iter().zip(&emp.values) {
            assert!(((m - e) / e).abs() < 1e-4);
        }
        // single-candidate events contribute ln 1 = 0
        assert_eq!(log_likelihood(&model, &set).unwrap(), 0.0);
    }

    #[test]
    fn uniform_log_likelihood() {
        let p = prepare(
            &corpus(AMBIGUOUS),
            &toy_config(Search::Gis, 1),
            &JobConfig::sequential(),
        )
        .unwrap();
        let ambiguous = p
            .set
            .events
            .iter()
            .filter(|e| e.candidates.len() == 2)
            .count();
        let expected = ambiguous as f64 * 0.5f64.ln();
        assert!((log_likelihood(&p.model, &p.set).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn iteration_count_contract() {
        let c = corpus(AMBIGUOUS);
        assert!(matches!(
            train(&c, &toy_config(Search::Gis, 0), &JobConfig::sequential()),
            Err(MaxentError::InvalidConfig(_))
        ));
        let one = train_with(
            &c,
            &toy_config(Search::Iis, 1),
            &JobConfig::sequential(),
            &TrainOptions::default(),
        )
        .unwrap();
        assert_eq!(one.iterations_run, 1);
        assert_eq!(one.iteration_reports.len(), 1);
        let mut p = prepare(&c, &toy_config(Search::Iis, 1), &JobConfig::sequential()).unwrap();
        let exp = model_expectations(&p.model, &p.set).unwrap();
        iis_update(&mut p.model, &exp, &p.empirical).unwrap();
        assert_eq!(one.model.lambda(), p.model.lambda());
        assert!(matches!(
            train(
                &AnnotatedCorpus::default(),
                &toy_config(Search::Gis, 1),
                &JobConfig::sequential()
            ),
            Err(MaxentError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn early_stop_halts_on_fixed_point() {
        let c = corpus(TOY);
        let mut cfg = toy_config(Search::Gis, 500);
        cfg.early_stop = Some(1e-7);
        let out = train_with(&c, &cfg, &JobConfig::sequential(), &TrainOptions::default()).unwrap();
        assert_eq!(out.iterations_run, 1);
    }

    #[test]
    fn gaussian_prior_shrinks_weights() {
        let c = corpus(AMBIGUOUS);
        let free = train(&c, &toy_config(Search::Iis, 100), &JobConfig::sequential()).unwrap();
        for search in [Search::Gis, Search::Iis] {
            let mut cfg = toy_config(search, 100);
            cfg.sigma_squared = Some(0.1);
            let shrunk = train(&c, &cfg, &JobConfig::sequential()).unwrap();
            let norm = |m: &Model| m.lambda().iter().map(|l| l * l).sum::<f64>();
            assert!(norm(&shrunk) < norm(&free), "{search:?}");
        }
    }

    #[test]
    fn newton_solver() {
        let root = solve_increasing(|x| (x.exp() - 3.0, x.exp())).unwrap();
        assert!((root - 3f64.ln()).abs() < 1e-12);
        let root =
            solve_increasing(|x| ((7.0 * x).exp() * 0.25 - 1e-3, 1.75 * (7.0 * x).exp())).unwrap();
        assert!((root - (4e-3f64).ln() / 7.0).abs() < 1e-12);
        assert_eq!(solve_increasing(|x| (x, 1.0)), Some(0.0));
        assert_eq!(solve_increasing(|_| (f64::NAN, 1.0)), None);
    }

    #[test]
    fn naive_product_form_agrees() {
        let mut p = prepare(
            &corpus(AMBIGUOUS),
            &toy_config(Search::Gis, 1),
            &JobConfig::sequential(),
        )
        .unwrap();
        let lambda: Vec<f64> = (0..p.model.lambda().len())
            .map(|j| ((j * 37 % 11) as f64 - 5.0) / 3.0)
            .collect();
        p.model.set_lambda(lambda).unwrap();
        let d = p.model.dictionary().clone();
        for sentence in &corpus(AMBIGUOUS).sentences {
            for e in sentence_events(sentence) {
                let dist = p.model.conditional_probability(&e.history).unwrap();
                // Π α_j^{f_j} over the full feature list, then normalise
                let preds = apply_templates(&e.history, &d, 1);
                let mut unnorm = BTreeMap::new();
                for tag in dist.keys() {
                    let mut prod = 1.0;
                    for f in p.model.features().features() {
                        if &f.tag == tag && preds.contains(&f.predicate) {
                            prod *= p.model.lambda()[f.index].exp();
                        }
                    }
                    unnorm.insert(tag.clone(), prod);
                }
                let z: f64 = unnorm.values().sum();
                for (tag, prob) in &dist {
                    assert!((prob - unnorm[tag] / z).abs() < 1e-12);
                }
                assert!(e.history.prev_tag != BOUNDARY || e.history.position == 0);
            }
        }
    }
}
