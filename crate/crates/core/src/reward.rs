//! Sentence- and corpus-level BLEU.
//!
//! Sentence BLEU is the reward for policy-gradient training. Orders with no
//! matching n-gram are smoothed add-one, `(0 + 1) / (c + 1)`; orders that do
//! match use the plain clipped precision. Corpus BLEU pools counts over all
//! sentences and is not smoothed.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothing {
    /// Add one to numerator and denominator of orders with zero matches.
    AddOneOnZero,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardSpec {
    pub max_order: usize,
    pub smoothing: Smoothing,
    /// Per-token bonus used by beam search. Not part of the reward.
    pub length_reward: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            max_order: 4,
            smoothing: Smoothing::AddOneOnZero,
            length_reward: 0.0,
        }
    }
}

impl RewardSpec {
    pub fn validate(&self) -> Result<()> {
        if self.max_order == 0 {
            return Err(Error::Config("BLEU order must be at least 1".into()));
        }
        if !self.length_reward.is_finite() {
            return Err(Error::Config("length reward must be finite".into()));
        }
        Ok(())
    }
}

/// Clipped matches and candidate n-gram totals per order, plus lengths.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NgramStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl NgramStats {
    fn add(&mut self, other: &NgramStats) {
        if self.matches.is_empty() {
            self.matches = vec![0; other.matches.len()];
            self.totals = vec![0; other.totals.len()];
        }
        for n in 0..other.matches.len() {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

pub fn ngram_stats<T: Eq + Hash>(candidate: &[T], reference: &[T], max_order: usize) -> NgramStats {
    let mut stats = NgramStats {
        matches: vec![0; max_order],
        totals: vec![0; max_order],
        candidate_len: candidate.len(),
        reference_len: reference.len(),
    };
    for n in 1..=max_order {
        let cand = ngram_counts(candidate, n);
        let refs = ngram_counts(reference, n);
        stats.totals[n - 1] = candidate.len().saturating_sub(n - 1);
        stats.matches[n - 1] = cand
            .iter()
            .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
            .sum();
    }
    stats
}

fn brevity_penalty(candidate_len: usize, reference_len: usize) -> f64 {
    (1.0 - reference_len as f64 / candidate_len as f64)
        .min(0.0)
        .exp()
}

fn bleu_from_stats(stats: &NgramStats, smoothing: Smoothing) -> f64 {
    if stats.candidate_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for (&m, &c) in stats.matches.iter().zip(&stats.totals) {
        let p = match smoothing {
            Smoothing::AddOneOnZero if m == 0 => 1.0 / (c as f64 + 1.0),
            _ if c == 0 || m == 0 => return 0.0,
            _ => m as f64 / c as f64,
        };
        log_sum += p.ln();
    }
    let order = stats.matches.len() as f64;
    (log_sum / order).exp() * brevity_penalty(stats.candidate_len, stats.reference_len)
}

/// Smoothed sentence BLEU in `[0, 1]`. An empty candidate scores 0.
pub fn sentence_bleu<T: Eq + Hash>(candidate: &[T], reference: &[T], spec: &RewardSpec) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    bleu_from_stats(
        &ngram_stats(candidate, reference, spec.max_order),
        spec.smoothing,
    )
}

/// Elementwise [`sentence_bleu`] over aligned lists.
pub fn reward_batch<T: Eq + Hash>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
    spec: &RewardSpec,
) -> Result<Vec<f64>> {
    if candidates.len() != references.len() {
        return Err(Error::Invalid(format!(
            "{} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    Ok(candidates
        .iter()
        .zip(references)
        .map(|(c, r)| sentence_bleu(c, r, spec))
        .collect())
}

/// Unsmoothed corpus BLEU (order 4) over pooled n-gram counts.
pub fn corpus_bleu<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    corpus_bleu_with_order(candidates, references, 4)
}

pub fn corpus_bleu_with_order<T: Eq + Hash>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
    max_order: usize,
) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::Invalid(format!(
            "{} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Invalid(
            "corpus BLEU needs at least one sentence".into(),
        ));
    }
    let mut pooled = NgramStats::default();
    for (c, r) in candidates.iter().zip(references) {
        pooled.add(&ngram_stats(c, r, max_order));
    }
    Ok(bleu_from_stats(&pooled, Smoothing::None))
}

/// Splits a sentence into surface word tokens.
pub fn words(sentence: &str) -> Vec<&str> {
    sentence.split_whitespace().collect()
}
