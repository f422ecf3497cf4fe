//! Seeded noisy-copy parallel text for smoke tests and small experiments.
//!
//! Targets are random sentences over a small word list. Sources copy the
//! target, insert filler words the model must learn to drop, and replace a
//! fraction of words with random ones (not recoverable).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParallelCorpus, TextPipeline};
use crate::error::Result;

pub const CONTENT_WORDS: &[&str] = &[
    "a", "man", "woman", "dog", "cat", "runs", "sits", "on", "the", "grass", "street", "red",
    "blue", "ball", "child", "plays", "with", "in", "park", "water", "jumps", "over", "two",
    "people", "walk", "near", "car", "black", "white", "shirt",
];

pub const FILLER_WORDS: &[&str] = &["uh", "um", "er", "hm"];

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyCopy {
    pub min_len: usize,
    pub max_len: usize,
    /// Probability of inserting a filler word after each source word.
    pub insert_rate: f64,
    /// Probability of replacing a source word with a random content word.
    pub replace_rate: f64,
    /// Appended to every source word, to mimic a distinct source language.
    pub source_suffix: String,
    /// Image-feature dimension; 0 for none.
    pub feature_dim: usize,
}

impl Default for NoisyCopy {
    fn default() -> Self {
        Self {
            min_len: 3,
            max_len: 8,
            insert_rate: 0.15,
            replace_rate: 0.05,
            source_suffix: String::new(),
            feature_dim: 0,
        }
    }
}

/// Generated raw text and optional features.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticText {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub features: Option<Vec<Vec<f64>>>,
}

impl NoisyCopy {
    pub fn generate(&self, n: usize, seed: u64) -> SyntheticText {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = SyntheticText {
            sources: Vec::with_capacity(n),
            targets: Vec::with_capacity(n),
            features: (self.feature_dim > 0).then(|| Vec::with_capacity(n)),
        };
        for _ in 0..n {
            let len = rng.gen_range(self.min_len..=self.max_len.max(self.min_len));
            let target: Vec<&str> = (0..len)
                .map(|_| *CONTENT_WORDS.choose(&mut rng).expect("non-empty"))
                .collect();
            let mut source = Vec::with_capacity(len * 2);
            for &w in &target {
                let word = if rng.gen_bool(self.replace_rate) {
                    *CONTENT_WORDS.choose(&mut rng).expect("non-empty")
                } else {
                    w
                };
                source.push(format!("{word}{}", self.source_suffix));
                if rng.gen_bool(self.insert_rate) {
                    source.push(
                        FILLER_WORDS
                            .choose(&mut rng)
                            .expect("non-empty")
                            .to_string(),
                    );
                }
            }
            if let Some(f) = out.features.as_mut() {
                // Bag-of-words style summary of the target, plus noise.
                let mut v: Vec<f64> = (0..self.feature_dim)
                    .map(|_| rng.gen_range(-0.1..0.1))
                    .collect();
                for w in &target {
                    let k =
                        CONTENT_WORDS.iter().position(|c| c == w).unwrap_or(0) % self.feature_dim;
                    v[k] += 1.0 / len as f64;
                }
                f.push(v);
            }
            out.sources.push(source.join(" "));
            out.targets.push(target.join(" "));
        }
        out
    }
}

/// Raw text plus encoded corpora for a train/validation split, with BPE and
/// vocabulary learned on the training side (both languages jointly).
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub text: TextPipeline,
    pub raw_train: SyntheticText,
    pub raw_valid: SyntheticText,
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
}

pub fn noisy_copy_task(
    generator: &NoisyCopy,
    n_train: usize,
    n_valid: usize,
    seed: u64,
) -> Result<SyntheticTask> {
    let raw_train = generator.generate(n_train, seed);
    let raw_valid = generator.generate(n_valid, seed.wrapping_add(0x5eed));
    let joint: Vec<&String> = raw_train.sources.iter().chain(&raw_train.targets).collect();
    let text = TextPipeline::learn(&joint, 1000, 1000)?;
    let build = |raw: &SyntheticText| {
        text.build_corpus(
            &raw.sources,
            &raw.targets,
            raw.features.clone(),
            "src",
            "tgt",
            100,
        )
        .map(|(c, _)| c)
    };
    Ok(SyntheticTask {
        train: build(&raw_train)?,
        valid: build(&raw_valid)?,
        text,
        raw_train,
        raw_valid,
    })
}
