//! Corpus ingestion: preprocessing, parallel corpora, batching, multi-source
//! mixing and image-feature files.

mod features;
mod preprocess;
pub mod synthetic;

pub use features::{format_features, load_features, parse_features, write_features};
pub use preprocess::{preprocess, preprocess_line};

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bpe::{build_vocab, learn_bpe, MergeTable, Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};

/// Batches per length-sorted bucket when bucketing is on.
pub const BUCKET_BATCHES: usize = 10;

/// Aligned source/target id sequences with optional image features.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    pub source: Vec<Vec<usize>>,
    /// Target ids without BOS/EOS.
    pub target: Vec<Vec<usize>>,
    pub features: Option<Vec<Vec<f64>>>,
    /// Source language of each pair.
    pub source_langs: Vec<String>,
    pub target_lang: String,
    pub vocab_hash: String,
}

impl ParallelCorpus {
    pub fn new(
        source: Vec<Vec<usize>>,
        target: Vec<Vec<usize>>,
        features: Option<Vec<Vec<f64>>>,
        source_lang: &str,
        target_lang: &str,
        vocab_hash: &str,
    ) -> Result<Self> {
        let corpus = Self {
            source_langs: vec![source_lang.to_string(); source.len()],
            source,
            target,
            features,
            target_lang: target_lang.to_string(),
            vocab_hash: vocab_hash.to_string(),
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.source.len();
        if self.target.len() != n || self.source_langs.len() != n {
            return Err(Error::Invalid(format!(
                "misaligned corpus: {} sources, {} targets, {} language tags",
                n,
                self.target.len(),
                self.source_langs.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| self.source[i].is_empty() || self.target[i].is_empty()) {
            return Err(Error::Invalid(format!("empty sentence in pair {i}")));
        }
        if let Some(f) = &self.features {
            if f.len() != n {
                return Err(Error::Invalid(format!(
                    "{} feature rows for {n} pairs",
                    f.len()
                )));
            }
            if let Some(d) = f.first().map(Vec::len) {
                if f.iter().any(|r| r.len() != d) {
                    return Err(Error::Invalid("feature rows differ in dimension".into()));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features
            .as_ref()
            .and_then(|f| f.first())
            .map_or(0, Vec::len)
    }

    pub fn feature(&self, i: usize) -> Option<&[f64]> {
        self.features.as_ref().map(|f| f[i].as_slice())
    }

    /// Reorders every aligned list by `order`.
    fn permuted(&self, order: &[usize]) -> Self {
        Self {
            source: order.iter().map(|&i| self.source[i].clone()).collect(),
            target: order.iter().map(|&i| self.target[i].clone()).collect(),
            features: self
                .features
                .as_ref()
                .map(|f| order.iter().map(|&i| f[i].clone()).collect()),
            source_langs: order
                .iter()
                .map(|&i| self.source_langs[i].clone())
                .collect(),
            target_lang: self.target_lang.clone(),
            vocab_hash: self.vocab_hash.clone(),
        }
    }

    /// Target with BOS prepended and EOS appended.
    pub fn decoder_target(&self, i: usize) -> Vec<usize> {
        let mut t = Vec::with_capacity(self.target[i].len() + 2);
        t.push(BOS);
        t.extend_from_slice(&self.target[i]);
        t.push(EOS);
        t
    }
}

/// Padded mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[B × max_src]`, PAD-padded.
    pub source: Vec<Vec<usize>>,
    /// `[B × max_tgt]`, BOS … EOS then PAD.
    pub target: Vec<Vec<usize>>,
    pub source_lens: Vec<usize>,
    /// Target lengths including BOS and EOS.
    pub target_lens: Vec<usize>,
    /// `false` exactly on PAD positions of `target`.
    pub target_mask: Vec<Vec<bool>>,
    pub features: Option<Vec<Vec<f64>>>,
    /// Position of each row in the corpus the batch was cut from.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn from_corpus(corpus: &ParallelCorpus, indices: &[usize]) -> Self {
        let targets: Vec<Vec<usize>> = indices.iter().map(|&i| corpus.decoder_target(i)).collect();
        let max_src = indices
            .iter()
            .map(|&i| corpus.source[i].len())
            .max()
            .unwrap_or(0);
        let max_tgt = targets.iter().map(Vec::len).max().unwrap_or(0);
        let pad = |s: &[usize], w: usize| {
            let mut row = s.to_vec();
            row.resize(w, PAD);
            row
        };
        Self {
            source: indices
                .iter()
                .map(|&i| pad(&corpus.source[i], max_src))
                .collect(),
            source_lens: indices.iter().map(|&i| corpus.source[i].len()).collect(),
            target_lens: targets.iter().map(Vec::len).collect(),
            target_mask: targets
                .iter()
                .map(|t| (0..max_tgt).map(|j| j < t.len()).collect())
                .collect(),
            target: targets.iter().map(|t| pad(t, max_tgt)).collect(),
            features: corpus
                .features
                .as_ref()
                .map(|f| indices.iter().map(|&i| f[i].clone()).collect()),
            indices: indices.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn source_seq(&self, row: usize) -> &[usize] {
        &self.source[row][..self.source_lens[row]]
    }

    /// BOS … EOS for `row`, unpadded.
    pub fn target_seq(&self, row: usize) -> &[usize] {
        &self.target[row][..self.target_lens[row]]
    }

    pub fn feature(&self, row: usize) -> Option<&[f64]> {
        self.features.as_ref().map(|f| f[row].as_slice())
    }

    /// Number of predicted (non-PAD, non-BOS) target tokens.
    pub fn num_target_tokens(&self) -> usize {
        self.target_lens.iter().map(|&l| l.saturating_sub(1)).sum()
    }
}

/// Seeded shuffle into batches of at most `batch_size`; the last batch may
/// be partial. With `sort_within`, rows are length-sorted inside buckets of
/// [`BUCKET_BATCHES`] batches to cut padding.
pub fn make_batches(
    corpus: &ParallelCorpus,
    batch_size: usize,
    seed: u64,
    sort_within: bool,
) -> Vec<Batch> {
    assert!(batch_size > 0, "batch_size must be positive");
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    if sort_within {
        for bucket in order.chunks_mut(batch_size * BUCKET_BATCHES) {
            bucket.sort_by_key(|&i| corpus.source[i].len());
        }
    }
    order
        .chunks(batch_size)
        .map(|idx| Batch::from_corpus(corpus, idx))
        .collect()
}

/// Concatenates corpora that share a target language and vocabulary, then
/// shuffles all pairs together.
pub fn shuffle_mix(corpora: &[ParallelCorpus], seed: u64) -> Result<ParallelCorpus> {
    let first = corpora
        .first()
        .ok_or_else(|| Error::Invalid("shuffle_mix needs at least one corpus".into()))?;
    for c in corpora {
        if c.vocab_hash != first.vocab_hash {
            return Err(Error::Invalid(format!(
                "vocabulary mismatch: {} vs {}",
                c.vocab_hash, first.vocab_hash
            )));
        }
        if c.target_lang != first.target_lang {
            return Err(Error::Invalid(format!(
                "target language mismatch: {} vs {}",
                c.target_lang, first.target_lang
            )));
        }
        if c.features.is_some() != first.features.is_some()
            || c.feature_dim() != first.feature_dim()
        {
            return Err(Error::Invalid("corpora disagree on image features".into()));
        }
    }
    let mut all = ParallelCorpus {
        source: Vec::new(),
        target: Vec::new(),
        features: first.features.as_ref().map(|_| Vec::new()),
        source_langs: Vec::new(),
        target_lang: first.target_lang.clone(),
        vocab_hash: first.vocab_hash.clone(),
    };
    for c in corpora {
        all.source.extend(c.source.iter().cloned());
        all.target.extend(c.target.iter().cloned());
        all.source_langs.extend(c.source_langs.iter().cloned());
        if let (Some(dst), Some(src)) = (all.features.as_mut(), c.features.as_ref()) {
            dst.extend(src.iter().cloned());
        }
    }
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mixed = all.permuted(&order);
    mixed.validate()?;
    Ok(mixed)
}

pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Preprocessing, BPE segmentation and vocabulary lookup as one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct TextPipeline {
    pub merges: MergeTable,
    pub vocab: Vocabulary,
}

/// Counts of pairs removed while building a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropCounts {
    pub empty: usize,
    pub too_long: usize,
}

impl TextPipeline {
    pub fn new(merges: MergeTable, vocab: Vocabulary) -> Self {
        Self { merges, vocab }
    }

    pub fn load(merges: impl AsRef<Path>, vocab: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(
            MergeTable::load(merges)?,
            Vocabulary::load(vocab)?,
        ))
    }

    /// Learns merges and a capped vocabulary jointly from raw sentences.
    pub fn learn<T: AsRef<str>>(raw: &[T], num_merges: usize, vocab_cap: usize) -> Result<Self> {
        let lines: Vec<String> = raw.iter().map(|s| preprocess_line(s.as_ref())).collect();
        let merges = learn_bpe(&lines, num_merges)?;
        let vocab = build_vocab(lines.iter().map(|s| merges.apply(s)), vocab_cap)?;
        Ok(Self::new(merges, vocab))
    }

    /// Subword strings for one raw sentence.
    pub fn segment(&self, raw: &str) -> Vec<String> {
        self.merges.apply(&preprocess_line(raw))
    }

    pub fn encode(&self, raw: &str) -> Vec<usize> {
        self.vocab.encode(&self.segment(raw))
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        self.vocab.detokenize(ids)
    }

    /// Encodes aligned raw sentences, dropping pairs that are empty after
    /// preprocessing or longer than `max_len` after BPE.
    #[allow(clippy::too_many_arguments)]
    pub fn build_corpus(
        &self,
        sources: &[String],
        targets: &[String],
        features: Option<Vec<Vec<f64>>>,
        source_lang: &str,
        target_lang: &str,
        max_len: usize,
    ) -> Result<(ParallelCorpus, DropCounts)> {
        if sources.len() != targets.len() {
            return Err(Error::Invalid(format!(
                "{} source lines vs {} target lines",
                sources.len(),
                targets.len()
            )));
        }
        if let Some(f) = &features {
            if f.len() != sources.len() {
                return Err(Error::Invalid(format!(
                    "{} feature rows vs {} source lines",
                    f.len(),
                    sources.len()
                )));
            }
        }
        let mut drops = DropCounts::default();
        let (mut src, mut tgt, mut feats) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..sources.len() {
            let s = self.encode(&sources[i]);
            let t = self.encode(&targets[i]);
            if s.is_empty() || t.is_empty() {
                drops.empty += 1;
                continue;
            }
            if s.len() > max_len || t.len() > max_len {
                drops.too_long += 1;
                continue;
            }
            src.push(s);
            tgt.push(t);
            if let Some(f) = &features {
                feats.push(f[i].clone());
            }
        }
        if drops.empty + drops.too_long > 0 {
            log::info!(
                "dropped {} empty and {} over-length pairs ({source_lang}-{target_lang})",
                drops.empty,
                drops.too_long
            );
        }
        let features = features.map(|_| feats);
        let corpus = ParallelCorpus::new(
            src,
            tgt,
            features,
            source_lang,
            target_lang,
            &self.vocab.content_hash(),
        )?;
        Ok((corpus, drops))
    }
}
