//! Seeded synthetic annotated corpora for tests and benchmarks.
//!
//! A [`Language`] is a tag bigram chain with a Zipfian vocabulary per tag.
//! A few tags have tiny vocabularies (closed-class) and some open-class words
//! are shared between two tags, so the tagger has real ambiguity to resolve.
//! Everything is a pure function of the seed.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Zipf;

use crate::corpus::{AnnotatedCorpus, Token};

#[derive(Clone, Debug)]
pub struct LanguageConfig {
    pub num_tags: usize,
    pub closed_tags: usize,
    /// Vocabulary size of each open-class tag.
    pub open_vocabulary: usize,
    /// Zipf exponent of the per-tag word distribution.
    pub zipf_exponent: f64,
    /// Fraction of open-class vocabulary slots filled by a word borrowed
    /// from another tag.
    pub ambiguity: f64,
    pub min_sentence: usize,
    pub max_sentence: usize,
}

impl Default for LanguageConfig {
    fn default() -> Self {
        Self {
            num_tags: 25,
            closed_tags: 6,
            open_vocabulary: 400,
            zipf_exponent: 1.1,
            ambiguity: 0.08,
            min_sentence: 4,
            max_sentence: 18,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Language {
    config: LanguageConfig,
    tags: Vec<String>,
    vocabulary: Vec<Vec<String>>,
    zipf: Vec<Zipf<f64>>,
    start: WeightedIndex<f64>,
    transitions: Vec<WeightedIndex<f64>>,
}

const ONSETS: [&str; 12] = ["b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t", "w"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Pronounceable, distinct spelling of `id`.
fn spell(mut id: usize) -> String {
    let mut word = String::new();
    loop {
        let syllable = id % (ONSETS.len() * VOWELS.len());
        word.push_str(ONSETS[syllable / VOWELS.len()]);
        word.push_str(VOWELS[syllable % VOWELS.len()]);
        id /= ONSETS.len() * VOWELS.len();
        if id == 0 {
            break;
        }
        id -= 1;
    }
    word
}

fn chain_weights(rng: &mut ChaCha8Rng, n: usize) -> WeightedIndex<f64> {
    // skewed, but every transition stays possible
    let weights: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>().powi(3)).collect();
    WeightedIndex::new(weights).expect("positive weights")
}

impl Language {
    pub fn new(config: LanguageConfig, seed: u64) -> Self {
        assert!(config.num_tags > 0 && config.closed_tags <= config.num_tags);
        assert!(config.open_vocabulary > 0 && config.min_sentence > 0);
        assert!(config.min_sentence <= config.max_sentence);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.num_tags;
        let tags: Vec<String> = (0..n)
            .map(|i| {
                if i < config.closed_tags {
                    format!("C{i:02}")
                } else {
                    format!("T{i:02}")
                }
            })
            .collect();

        let mut next_id = 0;
        let mut vocabulary: Vec<Vec<String>> = (0..n)
            .map(|i| {
                let size = if i < config.closed_tags {
                    rng.random_range(2..=5)
                } else {
                    config.open_vocabulary
                };
                (0..size)
                    .map(|_| {
                        next_id += 1;
                        spell(next_id)
                    })
                    .collect()
            })
            .collect();
        let open = config.closed_tags..n;
        if open.len() > 1 {
            for t in open.clone() {
                for slot in 0..vocabulary[t].len() {
                    if rng.random::<f64>() < config.ambiguity {
                        let mut other = rng.random_range(open.clone());
                        if other == t {
                            other = if other + 1 < n {
                                other + 1
                            } else {
                                config.closed_tags
                            };
                        }
                        let donor = rng.random_range(0..vocabulary[other].len());
                        vocabulary[t][slot] = vocabulary[other][donor].clone();
                    }
                }
            }
        }
        let zipf = vocabulary
            .iter()
            .map(|v| Zipf::new(v.len() as f64, config.zipf_exponent).expect("valid zipf"))
            .collect();
        let start = chain_weights(&mut rng, n);
        let transitions = (0..n).map(|_| chain_weights(&mut rng, n)).collect();
        Self {
            config,
            tags,
            vocabulary,
            zipf,
            start,
            transitions,
        }
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn sentence(&self, rng: &mut ChaCha8Rng) -> Vec<Token> {
        let len = rng.random_range(self.config.min_sentence..=self.config.max_sentence);
        let mut tokens = Vec::with_capacity(len);
        let mut tag = self.start.sample(rng);
        for i in 0..len {
            if i > 0 {
                tag = self.transitions[tag].sample(rng);
            }
            let rank = self.zipf[tag].sample(rng) as usize;
            let word = &self.vocabulary[tag][rank.clamp(1, self.vocabulary[tag].len()) - 1];
            tokens.push(Token::new(word.clone(), self.tags[tag].clone()));
        }
        tokens
    }

    /// Sentences until exactly `words` tokens (the last sentence is cut short).
    pub fn corpus(&self, words: usize, seed: u64) -> AnnotatedCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sentences = Vec::new();
        let mut remaining = words;
        while remaining > 0 {
            let mut s = self.sentence(&mut rng);
            s.truncate(remaining);
            remaining -= s.len();
            sentences.push(s);
        }
        AnnotatedCorpus::from_sentences(sentences)
    }

    /// `lines` untagged sentences as `(line index, text)` pairs.
    pub fn document(&self, lines: usize, seed: u64) -> Vec<(usize, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..lines)
            .map(|i| {
                let words: Vec<String> = self
                    .sentence(&mut rng)
                    .into_iter()
                    .map(|t| t.word)
                    .collect();
                (i, words.join(" "))
            })
            .collect()
    }

    /// Untagged document of at least `words` tokens.
    pub fn document_words(&self, words: usize, seed: u64) -> Vec<(usize, String)> {
        let corpus = self.corpus(words, seed);
        corpus.plain_lines()
    }
}

/// The default 25-tag language.
pub fn default_language(seed: u64) -> Language {
    Language::new(LanguageConfig::default(), seed)
}
