//! Greedy, beam and ensemble decoding.
//!
//! An ensemble's next-token distribution is the arithmetic mean of its
//! members' softmax outputs. Beam hypotheses are scored by
//! `Σ ln p̂ + λ · tokens`, with EOS counted as a token. Ties between
//! candidates go to the lowest token id.

use rayon::prelude::*;

use crate::bpe::{Vocabulary, BOS, EOS};
use crate::data::TextPipeline;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, DecoderState, EncoderOutput, Seq2Seq};
use crate::reward::{corpus_bleu, words};
use crate::scalar::Scalar;
use crate::tensor::softmax_slice;

/// Floor applied before taking logs of averaged probabilities.
const PROB_FLOOR: f64 = 1e-300;

/// Decoding knobs shared by greedy and beam search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub beam: usize,
    /// Per-token bonus λ ≥ 0.
    pub length_reward: f64,
    /// Maximum number of emitted tokens, EOS included.
    pub max_len: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            beam: 5,
            length_reward: 0.0,
            max_len: 100,
        }
    }
}

impl DecodeOptions {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::Config("beam must be at least 1".into()));
        }
        if !(self.length_reward >= 0.0 && self.length_reward.is_finite()) {
            return Err(Error::Config(format!(
                "length reward must be finite and non-negative, got {}",
                self.length_reward
            )));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max decode length must be positive".into()));
        }
        Ok(())
    }
}

/// Ordered ensemble members sharing one vocabulary, plus decode options.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec<S> {
    members: Vec<Seq2Seq<S>>,
    vocab_hash: String,
    pub options: DecodeOptions,
}

impl<S: Scalar> EnsembleSpec<S> {
    pub fn new(checkpoints: Vec<Checkpoint<S>>, options: DecodeOptions) -> Result<Self> {
        options.validate()?;
        let first = checkpoints
            .first()
            .ok_or_else(|| Error::Invalid("an ensemble needs at least one checkpoint".into()))?;
        let vocab_hash = first.vocab_hash.clone();
        let vocab_size = first.model.vocab_size();
        for (i, c) in checkpoints.iter().enumerate() {
            if c.vocab_hash != vocab_hash {
                return Err(Error::Checkpoint(format!(
                    "member {i} has vocabulary hash {}, member 0 has {vocab_hash}",
                    c.vocab_hash
                )));
            }
            if c.model.vocab_size() != vocab_size {
                return Err(Error::Checkpoint(format!(
                    "member {i} has vocabulary size {}, member 0 has {vocab_size}",
                    c.model.vocab_size()
                )));
            }
        }
        Ok(Self {
            members: checkpoints.into_iter().map(|c| c.model).collect(),
            vocab_hash,
            options,
        })
    }

    pub fn members(&self) -> &[Seq2Seq<S>] {
        &self.members
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn needs_features(&self) -> bool {
        self.members.iter().any(|m| m.config().is_multimodal())
    }

    fn refs(&self) -> Vec<&Seq2Seq<S>> {
        self.members.iter().collect()
    }
}

/// Per-member encoder outputs and initial states for one source sentence.
pub fn start<S: Scalar>(
    members: &[&Seq2Seq<S>],
    src: &[usize],
    img: Option<&[S]>,
) -> Result<(Vec<EncoderOutput<S>>, Vec<DecoderState<S>>)> {
    let mut encs = Vec::with_capacity(members.len());
    let mut states = Vec::with_capacity(members.len());
    for m in members {
        let enc = m.encode(src)?;
        let member_img = if m.config().is_multimodal() {
            Some(img.ok_or_else(|| {
                Error::Invalid("multimodal ensemble member needs image features".into())
            })?)
        } else {
            None
        };
        states.push(m.init_decoder(&enc, member_img)?);
        encs.push(enc);
    }
    Ok((encs, states))
}

/// One step of every member; returns the averaged distribution and the new
/// per-member states.
pub fn ensemble_step<S: Scalar>(
    members: &[&Seq2Seq<S>],
    states: &[DecoderState<S>],
    prev_token: usize,
    encs: &[EncoderOutput<S>],
) -> Result<(Vec<S>, Vec<DecoderState<S>>)> {
    if members.is_empty() || members.len() != states.len() || members.len() != encs.len() {
        return Err(Error::Invalid(format!(
            "ensemble step with {} members, {} states, {} encoder outputs",
            members.len(),
            states.len(),
            encs.len()
        )));
    }
    let n = S::of(members.len() as f64);
    let mut avg = vec![S::zero(); members[0].vocab_size()];
    let mut next = Vec::with_capacity(members.len());
    for ((m, s), e) in members.iter().zip(states).zip(encs) {
        let out = m.decode_step(s, prev_token, e)?;
        for (a, p) in avg.iter_mut().zip(softmax_slice(&out.logits)) {
            *a += p;
        }
        next.push(out.state);
    }
    if members.len() > 1 {
        avg.iter_mut().for_each(|a| *a /= n);
    }
    Ok((avg, next))
}

fn log_prob<S: Scalar>(p: S) -> f64 {
    p.f64().max(PROB_FLOOR).ln()
}

/// Index of the largest value; the lowest index wins ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A finished or abandoned decode.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted tokens without BOS and without the final EOS.
    pub tokens: Vec<usize>,
    /// `Σ ln p̂ + λ · steps`.
    pub score: f64,
    /// `Σ ln p̂` alone.
    pub log_prob: f64,
    /// Emitted EOS before hitting the length limit.
    pub finished: bool,
}

impl Hypothesis {
    /// Number of scored steps, EOS included.
    pub fn steps(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamResult {
    pub best: Hypothesis,
    /// Sorted by score, best first; at most `beam` entries.
    pub k_best: Vec<Hypothesis>,
    /// No hypothesis reached EOS; `best` is the top unfinished one.
    pub degenerate: bool,
}

/// Argmax decoding over the members' averaged distribution.
pub fn greedy_decode_models<S: Scalar>(
    members: &[&Seq2Seq<S>],
    src: &[usize],
    img: Option<&[S]>,
    max_len: usize,
    length_reward: f64,
) -> Result<Hypothesis> {
    let (encs, mut states) = start(members, src, img)?;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        log_prob: 0.0,
        finished: false,
    };
    let mut prev = BOS;
    for _ in 0..max_len {
        let (probs, next) = ensemble_step(members, &states, prev, &encs)?;
        let logp: Vec<f64> = probs.iter().map(|&p| log_prob(p)).collect();
        let tok = argmax(&logp);
        hyp.log_prob += logp[tok];
        hyp.score += logp[tok] + length_reward;
        if tok == EOS {
            hyp.finished = true;
            break;
        }
        hyp.tokens.push(tok);
        states = next;
        prev = tok;
    }
    Ok(hyp)
}

pub fn greedy_decode<S: Scalar>(
    spec: &EnsembleSpec<S>,
    src: &[usize],
    img: Option<&[S]>,
) -> Result<Hypothesis> {
    greedy_decode_models(
        &spec.refs(),
        src,
        img,
        spec.options.max_len,
        spec.options.length_reward,
    )
}

struct Active<S> {
    hyp: Hypothesis,
    states: Vec<DecoderState<S>>,
}

fn by_score(a: &Hypothesis, b: &Hypothesis) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

pub fn beam_decode_models<S: Scalar>(
    members: &[&Seq2Seq<S>],
    src: &[usize],
    img: Option<&[S]>,
    options: &DecodeOptions,
) -> Result<BeamResult> {
    options.validate()?;
    let lambda = options.length_reward;
    let (encs, states) = start(members, src, img)?;
    let mut active = vec![Active {
        hyp: Hypothesis {
            tokens: Vec::new(),
            score: 0.0,
            log_prob: 0.0,
            finished: false,
        },
        states,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for step in 0..options.max_len {
        // (score, token, parent, ln p, new states of parent)
        let mut candidates: Vec<(f64, usize, usize, f64)> = Vec::new();
        let mut expanded = Vec::with_capacity(active.len());
        for (pi, a) in active.iter().enumerate() {
            let prev = a.hyp.tokens.last().copied().unwrap_or(BOS);
            let (probs, next) = ensemble_step(members, &a.states, prev, &encs)?;
            for (tok, &p) in probs.iter().enumerate() {
                let lp = log_prob(p);
                candidates.push((a.hyp.score + lp + lambda, tok, pi, lp));
            }
            expanded.push(next);
        }
        candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        candidates.truncate(options.beam);

        let mut next_active = Vec::with_capacity(options.beam);
        for (score, tok, pi, lp) in candidates {
            let parent = &active[pi].hyp;
            let mut hyp = Hypothesis {
                tokens: parent.tokens.clone(),
                score,
                log_prob: parent.log_prob + lp,
                finished: tok == EOS,
            };
            if tok == EOS {
                finished.push(hyp);
            } else {
                hyp.tokens.push(tok);
                next_active.push(Active {
                    hyp,
                    states: expanded[pi].clone(),
                });
            }
        }
        active = next_active;
        if active.is_empty() {
            break;
        }
        if let Some(best_done) = finished.iter().map(|h| h.score).max_by(f64::total_cmp) {
            let remaining = (options.max_len - step - 1) as f64;
            let best_open = active
                .iter()
                .map(|a| a.hyp.score)
                .fold(f64::NEG_INFINITY, f64::max);
            if best_open + lambda * remaining <= best_done {
                break;
            }
        }
    }

    let degenerate = finished.is_empty();
    let mut pool = if degenerate {
        active.into_iter().map(|a| a.hyp).collect()
    } else {
        finished
    };
    pool.sort_by(by_score);
    pool.truncate(options.beam);
    Ok(BeamResult {
        best: pool[0].clone(),
        k_best: pool,
        degenerate,
    })
}

pub fn beam_decode<S: Scalar>(
    spec: &EnsembleSpec<S>,
    src: &[usize],
    img: Option<&[S]>,
) -> Result<BeamResult> {
    beam_decode_models(&spec.refs(), src, img, &spec.options)
}

/// Best token sequence for `src`: greedy when `beam == 1`, beam search otherwise.
pub fn decode<S: Scalar>(
    spec: &EnsembleSpec<S>,
    src: &[usize],
    img: Option<&[S]>,
) -> Result<Vec<usize>> {
    if spec.options.beam == 1 {
        Ok(greedy_decode(spec, src, img)?.tokens)
    } else {
        Ok(beam_decode(spec, src, img)?.best.tokens)
    }
}

/// Translations plus optional corpus BLEU against references.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationReport {
    pub lines: Vec<String>,
    pub bleu: Option<f64>,
    pub truncated: usize,
}

/// Translates raw source lines; sentences are decoded in parallel and
/// returned in input order. Empty inputs produce empty outputs; sources over
/// the length limit are truncated.
pub fn translate_corpus<S: Scalar>(
    spec: &EnsembleSpec<S>,
    text: &TextPipeline,
    sources: &[String],
    features: Option<&[Vec<f64>]>,
    references: Option<&[String]>,
) -> Result<TranslationReport> {
    if text.vocab.content_hash() != spec.vocab_hash {
        return Err(Error::Checkpoint(format!(
            "vocabulary hash {} does not match the checkpoints' {}",
            text.vocab.content_hash(),
            spec.vocab_hash
        )));
    }
    if let Some(f) = features {
        if f.len() != sources.len() {
            return Err(Error::Invalid(format!(
                "{} feature vectors for {} source lines",
                f.len(),
                sources.len()
            )));
        }
    } else if spec.needs_features() {
        return Err(Error::Invalid(
            "multimodal ensemble members need a feature file".into(),
        ));
    }
    if let Some(r) = references {
        if r.len() != sources.len() {
            return Err(Error::Invalid(format!(
                "{} reference lines for {} source lines",
                r.len(),
                sources.len()
            )));
        }
    }
    let max_src = spec
        .members
        .iter()
        .map(|m| m.config().max_src_len)
        .min()
        .unwrap_or(1);
    let results: Vec<Result<(String, bool)>> = sources
        .par_iter()
        .enumerate()
        .map(|(i, line)| {
            let mut ids = text.encode(line);
            if ids.is_empty() {
                return Ok((String::new(), false));
            }
            let cut = ids.len() > max_src;
            ids.truncate(max_src);
            let img: Option<Vec<S>> = features.map(|f| f[i].iter().map(|&v| S::of(v)).collect());
            let out = decode(spec, &ids, img.as_deref())?;
            Ok((text.decode(&out), cut))
        })
        .collect();
    let mut lines = Vec::with_capacity(sources.len());
    let mut truncated = 0;
    for r in results {
        let (line, cut) = r?;
        truncated += usize::from(cut);
        lines.push(line);
    }
    if truncated > 0 {
        log::info!("truncated {truncated} over-length source sentences");
    }
    let bleu = match references {
        Some(refs) if !lines.is_empty() => Some(bleu_of_lines(&lines, refs)?),
        _ => None,
    };
    Ok(TranslationReport {
        lines,
        bleu,
        truncated,
    })
}

/// Corpus BLEU over whitespace-split lines; references are preprocessed the
/// same way sources are.
pub fn bleu_of_lines(candidates: &[String], references: &[String]) -> Result<f64> {
    let cands: Vec<Vec<&str>> = candidates.iter().map(|c| words(c)).collect();
    let refs: Vec<String> = references
        .iter()
        .map(|r| crate::data::preprocess_line(r))
        .collect();
    let refs: Vec<Vec<&str>> = refs.iter().map(|r| words(r)).collect();
    corpus_bleu(&cands, &refs)
}

/// Corpus BLEU of greedy single-model output on id-level references.
pub fn greedy_corpus_bleu<S: Scalar>(
    model: &Seq2Seq<S>,
    vocab: &Vocabulary,
    sources: &[Vec<usize>],
    targets: &[Vec<usize>],
    features: Option<&[Vec<f64>]>,
    max_len: usize,
) -> Result<f64> {
    let hyps: Vec<Result<Vec<usize>>> = sources
        .par_iter()
        .enumerate()
        .map(|(i, src)| {
            let img: Option<Vec<S>> = features.map(|f| f[i].iter().map(|&v| S::of(v)).collect());
            Ok(greedy_decode_models(&[model], src, img.as_deref(), max_len, 0.0)?.tokens)
        })
        .collect();
    let mut cands = Vec::with_capacity(hyps.len());
    for h in hyps {
        cands.push(vocab.detokenize(&h?));
    }
    let refs: Vec<String> = targets.iter().map(|t| vocab.detokenize(t)).collect();
    let cands: Vec<Vec<&str>> = cands.iter().map(|c| words(c)).collect();
    let refs: Vec<Vec<&str>> = refs.iter().map(|r| words(r)).collect();
    corpus_bleu(&cands, &refs)
}
