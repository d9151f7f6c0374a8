//! Maximum-entropy part-of-speech tagging on a small deterministic
//! MapReduce engine.
//!
//! Training (dictionary, tagtoken, histories, features, and the per-iteration
//! model-expectation job) and tagging run as [`mr`] jobs. Every job produces
//! the same bytes for any number of map and reduce workers.

pub mod bench;
pub mod codec;
pub mod corpus;
pub mod evaluate;
pub mod features;
pub mod lexicon;
pub mod maxent;
pub mod model_file;
pub mod mr;
pub mod synth;
pub mod tagger;

pub use corpus::{AnnotatedCorpus, CorpusConfig, Sentence, Token};
pub use evaluate::{evaluate, EvalReport};
pub use lexicon::{Dictionary, Tagset};
pub use maxent::{train, train_with, Model, Search, TrainConfig, TrainOptions};
pub use model_file::{load_model, save_model};
pub use mr::{JobConfig, JobReport, MapReduce};
pub use tagger::{tag_document_job, tag_sentence, TaggedSentence};
