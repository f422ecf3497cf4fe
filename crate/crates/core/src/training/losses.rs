use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{RngKey, DROPOUT_STREAM, FEED_STREAM, SAMPLE_STREAM};
use crate::bpe::{Vocabulary, BOS, EOS};
use crate::data::Batch;
use crate::decoding::greedy_decode_models;
use crate::error::{Error, Result};
use crate::model::{Dropout, ModelRef, Seq2Seq};
use crate::reward::{sentence_bleu, words, RewardSpec};
use crate::scalar::Scalar;
use crate::tensor::{softmax_slice, Gradients, Graph, Var};

/// Which token was fed to the decoder at one step under scheduled sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedChoice {
    /// Decoder input position (1 is the first input after BOS).
    pub step: usize,
    pub sampled: bool,
    pub token: usize,
}

/// Scheduled-sampling state for one sentence.
pub struct ScheduledFeed<'a> {
    pub epsilon: f64,
    pub rng: &'a mut ChaCha8Rng,
    pub trace: &'a mut Vec<FeedChoice>,
}

fn sample_from<S: Scalar>(probs: &[S], rng: &mut ChaCha8Rng) -> Result<usize> {
    let weights: Vec<f64> = probs.iter().map(|p| p.f64()).collect();
    let dist =
        WeightedIndex::new(&weights).map_err(|e| Error::Invalid(format!("cannot sample: {e}")))?;
    Ok(dist.sample(rng))
}

/// Summed negative log-likelihood of `tgt` (BOS … EOS) given `src`.
///
/// Without `feed` every decoder input is the gold previous token. With it,
/// each input after the first is replaced, with probability ε, by a token
/// sampled from the previous step's distribution; targets stay gold.
#[allow(clippy::too_many_arguments)]
pub fn sentence_nll_on<'p, S: Scalar>(
    model: ModelRef<'_, 'p, S>,
    g: &mut Graph<'p, S>,
    src: &[usize],
    tgt: &[usize],
    img: Option<&[S]>,
    mut feed: Option<&mut ScheduledFeed<'_>>,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<Var> {
    if tgt.len() < 2 || tgt[0] != BOS {
        return Err(Error::Invalid(
            "target must start with BOS and hold at least one token".into(),
        ));
    }
    let enc = model.encode_on(g, src, dropout.as_deref_mut())?;
    let mut state = model.init_decoder_on(g, &enc, img)?;
    let mut total: Option<Var> = None;
    let mut prev_logits: Option<Var> = None;
    for t in 1..tgt.len() {
        let mut input = tgt[t - 1];
        if let (Some(f), Some(logits)) = (feed.as_deref_mut(), prev_logits) {
            let sampled = f.epsilon > 0.0 && f.rng.gen_bool(f.epsilon);
            if sampled {
                input = sample_from(&softmax_slice(g.value(logits)), f.rng)?;
            }
            f.trace.push(FeedChoice {
                step: t,
                sampled,
                token: input,
            });
        }
        let step = model.decode_step_on(g, &state, input, &enc, dropout.as_deref_mut())?;
        let lsm = g.log_softmax(step.logits)?;
        let lp = g.pick(lsm, tgt[t])?;
        total = Some(match total {
            Some(acc) => g.add(acc, lp)?,
            None => lp,
        });
        state = step.state;
        prev_logits = Some(step.logits);
    }
    Ok(g.neg(total.expect("at least one step"))?)
}

/// Mean per-token loss of a batch with its gradient.
#[derive(Debug, Clone)]
pub struct LossOutput<S> {
    pub loss: f64,
    pub tokens: usize,
    pub grads: Gradients<S>,
    /// Per-row feed decisions (empty under teacher forcing).
    pub traces: Vec<Vec<FeedChoice>>,
}

fn feature<S: Scalar>(batch: &Batch, row: usize) -> Option<Vec<S>> {
    batch
        .feature(row)
        .map(|f| f.iter().map(|&v| S::of(v)).collect())
}

fn dropout_for(rate: f64, rng: &mut ChaCha8Rng) -> Option<Dropout<'_>> {
    (rate > 0.0).then_some(Dropout { rate, rng })
}

fn batch_nll<S: Scalar>(
    model: &Seq2Seq<S>,
    batch: &Batch,
    epsilon: Option<f64>,
    dropout_rate: f64,
    key: RngKey,
) -> Result<LossOutput<S>> {
    let tokens = batch.num_target_tokens();
    if tokens == 0 {
        return Err(Error::Invalid("batch has no target tokens".into()));
    }
    let rows: Vec<Result<(f64, Gradients<S>, Vec<FeedChoice>)>> = (0..batch.len())
        .into_par_iter()
        .map(|row| {
            let mut drng = key.rng(row, DROPOUT_STREAM);
            let mut frng = key.rng(row, FEED_STREAM);
            let mut trace = Vec::new();
            let mut feed = epsilon.map(|epsilon| ScheduledFeed {
                epsilon,
                rng: &mut frng,
                trace: &mut trace,
            });
            let mut dropout = dropout_for(dropout_rate, &mut drng);
            let img = feature::<S>(batch, row);
            let mut g = Graph::new();
            let loss = sentence_nll_on(
                model.view(),
                &mut g,
                batch.source_seq(row),
                batch.target_seq(row),
                img.as_deref(),
                feed.as_mut(),
                dropout.as_mut(),
            )?;
            let grads = g.backward(loss)?;
            let value = g.scalar(loss).f64();
            Ok((value, grads, trace))
        })
        .collect();
    let inv = S::of(1.0 / tokens as f64);
    let mut grads = Gradients::for_params(model.params());
    let mut total = 0.0;
    let mut traces = Vec::with_capacity(batch.len());
    for r in rows {
        let (v, g, t) = r?;
        total += v;
        grads.add_scaled(&g, inv);
        traces.push(t);
    }
    Ok(LossOutput {
        loss: total / tokens as f64,
        tokens,
        grads,
        traces,
    })
}

/// Teacher-forced cross-entropy, averaged over non-PAD target tokens.
pub fn ce_loss<S: Scalar>(
    model: &Seq2Seq<S>,
    batch: &Batch,
    dropout_rate: f64,
    key: RngKey,
) -> Result<LossOutput<S>> {
    batch_nll(model, batch, None, dropout_rate, key)
}

/// Scheduled-sampling loss. At `epsilon = 0` it equals [`ce_loss`] bit for bit.
pub fn ss_loss<S: Scalar>(
    model: &Seq2Seq<S>,
    batch: &Batch,
    epsilon: f64,
    dropout_rate: f64,
    key: RngKey,
) -> Result<LossOutput<S>> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Invalid(format!(
            "epsilon must lie in [0, 1], got {epsilon}"
        )));
    }
    batch_nll(model, batch, Some(epsilon), dropout_rate, key)
}

/// One sampled sequence with its reward and the greedy baseline reward.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardedSample {
    /// Sampled tokens without the final EOS.
    pub tokens: Vec<usize>,
    /// `ln p` of every sampled step, EOS included.
    pub log_probs: Vec<f64>,
    pub reward: f64,
    pub baseline: f64,
    pub finished: bool,
}

impl RewardedSample {
    pub fn advantage(&self) -> f64 {
        self.reward - self.baseline
    }
}

#[derive(Debug, Clone)]
pub struct RlOutput<S> {
    /// Mean surrogate loss `−(r − b) Σ ln p`.
    pub loss: f64,
    pub mean_reward: f64,
    pub mean_baseline: f64,
    pub mean_advantage: f64,
    pub grads: Gradients<S>,
    pub samples: Vec<RewardedSample>,
}

fn bleu_words(vocab: &Vocabulary, cand: &[usize], reference: &[usize], spec: &RewardSpec) -> f64 {
    let c = vocab.detokenize(cand);
    let r = vocab.detokenize(reference);
    sentence_bleu(&words(&c), &words(&r), spec)
}

/// Self-critical REINFORCE step: sample with dropout active, score against
/// the dropout-free greedy decode, and return the gradient of
/// `−(r − b) Σ_t ln p(w_t)` averaged over the batch.
pub fn rl_step<S: Scalar>(
    model: &Seq2Seq<S>,
    batch: &Batch,
    vocab: &Vocabulary,
    spec: &RewardSpec,
    dropout_rate: f64,
    max_len: usize,
    key: RngKey,
) -> Result<RlOutput<S>> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let rows: Vec<Result<(f64, Option<Gradients<S>>, RewardedSample)>> = (0..batch.len())
        .into_par_iter()
        .map(|row| {
            let mut drng = key.rng(row, DROPOUT_STREAM);
            let mut srng = key.rng(row, SAMPLE_STREAM);
            let mut dropout = dropout_for(dropout_rate, &mut drng);
            let img = feature::<S>(batch, row);
            let src = batch.source_seq(row);
            let view = model.view();
            let mut g = Graph::new();
            let enc = view.encode_on(&mut g, src, dropout.as_mut())?;
            let mut state = view.init_decoder_on(&mut g, &enc, img.as_deref())?;
            let mut prev = BOS;
            let mut picked = Vec::new();
            let mut sample = RewardedSample {
                tokens: Vec::new(),
                log_probs: Vec::new(),
                reward: 0.0,
                baseline: 0.0,
                finished: false,
            };
            for _ in 0..max_len {
                let step = view.decode_step_on(&mut g, &state, prev, &enc, dropout.as_mut())?;
                let lsm = g.log_softmax(step.logits)?;
                let tok = sample_from(&softmax_slice(g.value(step.logits)), &mut srng)?;
                let lp = g.pick(lsm, tok)?;
                sample.log_probs.push(g.scalar(lp).f64());
                picked.push(lp);
                if tok == EOS {
                    sample.finished = true;
                    break;
                }
                sample.tokens.push(tok);
                prev = tok;
                state = step.state;
            }
            let reference = batch.target_seq(row);
            sample.reward = bleu_words(vocab, &sample.tokens, reference, spec);
            let greedy = greedy_decode_models(&[model], src, img.as_deref(), max_len, 0.0)?;
            sample.baseline = bleu_words(vocab, &greedy.tokens, reference, spec);
            let adv = sample.advantage();
            if adv == 0.0 {
                return Ok((0.0, None, sample));
            }
            let mut sum = picked[0];
            for &lp in &picked[1..] {
                sum = g.add(sum, lp)?;
            }
            let surrogate = g.scale(sum, S::of(-adv))?;
            let grads = g.backward(surrogate)?;
            Ok((g.scalar(surrogate).f64(), Some(grads), sample))
        })
        .collect();
    let n = batch.len() as f64;
    let inv = S::of(1.0 / n);
    let mut grads = Gradients::for_params(model.params());
    let (mut loss, mut reward, mut baseline) = (0.0, 0.0, 0.0);
    let mut samples = Vec::with_capacity(batch.len());
    for r in rows {
        let (v, g, s) = r?;
        loss += v;
        reward += s.reward;
        baseline += s.baseline;
        if let Some(g) = g {
            grads.add_scaled(&g, inv);
        }
        samples.push(s);
    }
    Ok(RlOutput {
        loss: loss / n,
        mean_reward: reward / n,
        mean_baseline: baseline / n,
        mean_advantage: (reward - baseline) / n,
        grads,
        samples,
    })
}
