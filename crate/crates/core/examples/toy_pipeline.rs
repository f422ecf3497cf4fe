//! Runs CE → SS → RL on the synthetic noisy-copy task and prints the log.
//!
//! Usage: `toy_pipeline [ce] [ss] [rl] [batch] [lr] [rl_batch] [rl_lr] [ckpt_dir] [seed]`
//!
//! With `ckpt_dir`, the best checkpoint of each stage is written there and an
//! existing `ss.ckpt` is reused instead of retraining CE and SS.

use std::path::PathBuf;
use std::time::Instant;

use nmt_core::data::synthetic::{noisy_copy_task, NoisyCopy};
use nmt_core::model::{load_checkpoint, save_checkpoint, Checkpoint, ModelConfig, Regime, Seq2Seq};
use nmt_core::training::{train, EpochReport, TrainConfig};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args()
        .nth(i)
        .and_then(|a| a.parse().ok())
        .unwrap_or(default)
}

fn main() -> nmt_core::Result<()> {
    let (ce, ss, rl) = (arg(1, 30), arg(2, 10), arg(3, 5));
    let (batch, lr) = (arg(4, 2usize), arg(5, 1.0));
    let (rl_batch, rl_lr) = (arg(6, 50usize), arg(7, 1.0));
    let dir: Option<PathBuf> = std::env::args()
        .nth(8)
        .filter(|d| d != "-")
        .map(PathBuf::from);
    let seed = arg(9, 1u64);
    let task = noisy_copy_task(&NoisyCopy::default(), 500, 100, 11)?;
    let vocab = &task.text.vocab;
    println!(
        "vocab {} train {} valid {}",
        vocab.len(),
        task.train.len(),
        task.valid.len()
    );
    let config = ModelConfig {
        embed_dim: 64,
        hidden_dim: 64,
        attention_dim: 64,
        dropout_rate: 0.1,
        seed,
        ..ModelConfig::new(vocab.len())
    };
    let base = TrainConfig {
        batch_size: batch,
        learning_rate: lr,
        bucketing: false,
        max_decode_len: 30,
        seed,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    println!("{}", EpochReport::TSV_HEADER);
    let mut log = |r: &EpochReport, _: &Checkpoint<f64>| {
        println!("{}\t{:.1}s", r.to_tsv(), t0.elapsed().as_secs_f64());
        Ok(())
    };
    let cached = dir
        .as_ref()
        .map(|d| d.join("ss.ckpt"))
        .filter(|p| p.exists());
    let ss_best = match cached {
        Some(p) => load_checkpoint(p)?,
        None => {
            let start = Checkpoint::new(Seq2Seq::new(config)?, Regime::Init, vocab.content_hash());
            let mut current = start;
            for (regime, epochs) in [(Regime::Ce, ce), (Regime::Ss, ss)] {
                let cfg = TrainConfig {
                    regime,
                    epochs,
                    ..base.clone()
                };
                let out = train(
                    current,
                    &task.train,
                    Some(&task.valid),
                    vocab,
                    &cfg,
                    &mut log,
                )?;
                println!(
                    "{regime} best {:?} at {:?}",
                    out.best_valid_bleu, out.best_epoch
                );
                current = out.best;
                if let Some(d) = &dir {
                    save_checkpoint(&current, d.join(format!("{regime}.ckpt")))?;
                }
            }
            current
        }
    };
    let cfg = TrainConfig {
        regime: Regime::Rl,
        epochs: rl,
        batch_size: rl_batch,
        learning_rate: rl_lr,
        ..base
    };
    let out = train(
        ss_best,
        &task.train,
        Some(&task.valid),
        vocab,
        &cfg,
        &mut log,
    )?;
    println!(
        "rl initial {:?} best {:?} at {:?}",
        out.initial_valid_bleu, out.best_valid_bleu, out.best_epoch
    );
    Ok(())
}
