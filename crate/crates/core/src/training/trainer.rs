use super::{ce_loss, epsilon_at, rl_step, ss_loss, RngKey, TrainConfig};
use crate::bpe::Vocabulary;
use crate::data::{make_batches, ParallelCorpus};
use crate::decoding::greedy_corpus_bleu;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Regime};
use crate::scalar::Scalar;
use crate::tensor::{Gradients, TensorError};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub regime: Regime,
    pub epsilon: Option<f64>,
    pub loss: f64,
    pub valid_bleu: Option<f64>,
    pub mean_reward: Option<f64>,
    pub mean_advantage: Option<f64>,
}

impl EpochReport {
    pub const TSV_HEADER: &'static str =
        "epoch\tregime\tepsilon\tloss\tvalid_bleu\tmean_reward\tmean_advantage";

    pub fn to_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        format!(
            "{}\t{}\t{}\t{:.6}\t{}\t{}\t{}",
            self.epoch,
            self.regime,
            opt(self.epsilon),
            self.loss,
            opt(self.valid_bleu),
            opt(self.mean_reward),
            opt(self.mean_advantage)
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    /// Validation BLEU of the starting model.
    pub initial_valid_bleu: Option<f64>,
    pub reports: Vec<EpochReport>,
    /// Model after the last epoch.
    pub last: Checkpoint<S>,
    /// Highest-validation-BLEU epoch (earliest on ties); the last epoch when
    /// there is no validation set.
    pub best: Checkpoint<S>,
    pub best_epoch: Option<usize>,
    pub best_valid_bleu: Option<f64>,
}

fn divergence(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { .. }) => Error::Divergence { epoch, batch },
        other => other,
    }
}

/// Validation corpus BLEU of greedy output.
pub fn validation_bleu<S: Scalar>(
    ckpt: &Checkpoint<S>,
    valid: &ParallelCorpus,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<f64> {
    greedy_corpus_bleu(
        &ckpt.model,
        vocab,
        &valid.source,
        &valid.target,
        valid.features.as_deref(),
        max_len,
    )
}

/// Trains `start` under `cfg.regime` for `cfg.epochs` epochs.
///
/// Each epoch reshuffles (seeded), runs the regime loss per batch, clips the
/// global gradient norm and takes a plain SGD step. `on_epoch` sees every
/// report together with the model at the end of that epoch.
pub fn train<S: Scalar>(
    start: Checkpoint<S>,
    data: &ParallelCorpus,
    valid: Option<&ParallelCorpus>,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochReport, &Checkpoint<S>) -> Result<()>,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if cfg.regime == Regime::Rl && start.regime == Regime::Init {
        return Err(Error::Config(
            "rl training needs a ce- or ss-trained checkpoint to start from".into(),
        ));
    }
    let hash = vocab.content_hash();
    for (what, h) in [
        ("checkpoint", &start.vocab_hash),
        ("training corpus", &data.vocab_hash),
    ] {
        if *h != hash {
            return Err(Error::Checkpoint(format!(
                "{what} vocabulary hash {h} does not match vocabulary {hash}"
            )));
        }
    }
    if data.is_empty() {
        return Err(Error::Invalid("training corpus is empty".into()));
    }
    if start.model.vocab_size() != vocab.len() {
        return Err(Error::Checkpoint(format!(
            "model vocabulary size {} differs from vocabulary size {}",
            start.model.vocab_size(),
            vocab.len()
        )));
    }

    let mut ckpt = start;
    ckpt.regime = cfg.regime;
    let lr = S::of(cfg.learning_rate);
    let clip = S::of(cfg.grad_clip_norm);
    let initial_valid_bleu = valid
        .map(|v| validation_bleu(&ckpt, v, vocab, cfg.max_decode_len))
        .transpose()?;
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Checkpoint<S>)> = None;

    for epoch in 0..cfg.epochs {
        let shuffle = RngKey::new(cfg.seed, epoch, 0).shuffle_seed();
        let batches = make_batches(data, cfg.batch_size, shuffle, cfg.bucketing);
        let epsilon = (cfg.regime == Regime::Ss).then(|| epsilon_at(epoch, &cfg.ss_schedule));
        let (mut loss_sum, mut weight) = (0.0, 0.0);
        let (mut reward_sum, mut adv_sum) = (0.0, 0.0);
        for (bi, batch) in batches.iter().enumerate() {
            let key = RngKey::new(cfg.seed, epoch, bi);
            let (loss, w, mut grads): (f64, f64, Gradients<S>) = match cfg.regime {
                Regime::Ce => {
                    let out = ce_loss(&ckpt.model, batch, cfg.dropout, key)
                        .map_err(|e| divergence(e, epoch, bi))?;
                    (out.loss, out.tokens as f64, out.grads)
                }
                Regime::Ss => {
                    let out = ss_loss(&ckpt.model, batch, epsilon.unwrap_or(0.0), cfg.dropout, key)
                        .map_err(|e| divergence(e, epoch, bi))?;
                    (out.loss, out.tokens as f64, out.grads)
                }
                Regime::Rl => {
                    let out = rl_step(
                        &ckpt.model,
                        batch,
                        vocab,
                        &cfg.reward,
                        cfg.dropout,
                        cfg.max_decode_len,
                        key,
                    )
                    .map_err(|e| divergence(e, epoch, bi))?;
                    let n = batch.len() as f64;
                    reward_sum += out.mean_reward * n;
                    adv_sum += out.mean_advantage * n;
                    (out.loss, n, out.grads)
                }
                Regime::Init => unreachable!("rejected by validate"),
            };
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence { epoch, batch: bi });
            }
            grads.clip_global_norm(clip);
            ckpt.model.params_mut().sgd_step(&grads, lr);
            loss_sum += loss * w;
            weight += w;
        }
        let valid_bleu = valid
            .map(|v| validation_bleu(&ckpt, v, vocab, cfg.max_decode_len))
            .transpose()?;
        let rl = cfg.regime == Regime::Rl;
        let report = EpochReport {
            epoch,
            regime: cfg.regime,
            epsilon,
            loss: loss_sum / weight,
            valid_bleu,
            mean_reward: rl.then(|| reward_sum / data.len() as f64),
            mean_advantage: rl.then(|| adv_sum / data.len() as f64),
        };
        log::info!("{}", report.to_tsv());
        on_epoch(&report, &ckpt)?;
        if let Some(b) = valid_bleu {
            if best.as_ref().is_none_or(|(_, bb, _)| b > *bb) {
                best = Some((epoch, b, ckpt.clone()));
            }
        }
        reports.push(report);
    }

    let (best_epoch, best_valid_bleu, best_ckpt) = match best {
        Some((e, b, c)) => (Some(e), Some(b), c),
        None => (cfg.epochs.checked_sub(1), None, ckpt.clone()),
    };
    Ok(TrainOutcome {
        initial_valid_bleu,
        reports,
        last: ckpt,
        best: best_ckpt,
        best_epoch,
        best_valid_bleu,
    })
}
