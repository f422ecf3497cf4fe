//! Cross-entropy, scheduled-sampling and self-critical REINFORCE training.
//!
//! Every sentence gets its own graph; sentences of a batch run in parallel
//! and their gradients are summed in batch order, so results do not depend
//! on the thread count. Randomness is drawn from per-sentence generators
//! keyed by `(seed, epoch, batch, row)`, one stream per purpose.

pub mod gradcheck;
mod losses;
pub mod toy;
mod trainer;

pub use losses::{
    ce_loss, rl_step, sentence_nll_on, ss_loss, FeedChoice, LossOutput, RewardedSample, RlOutput,
    ScheduledFeed,
};
pub use trainer::{train, validation_bleu, EpochReport, TrainOutcome};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Regime;
use crate::reward::RewardSpec;

pub const DROPOUT_STREAM: u64 = 0;
pub const FEED_STREAM: u64 = 1;
pub const SAMPLE_STREAM: u64 = 2;
pub const SHUFFLE_STREAM: u64 = 3;

/// Scheduled-sampling ε ramp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsSchedule {
    pub step_size: f64,
    /// Epochs per increment.
    pub period: usize,
    pub cap: f64,
}

impl Default for SsSchedule {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            period: 5,
            cap: 0.25,
        }
    }
}

impl SsSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::Config("ss_period must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.cap) {
            return Err(Error::Config(format!(
                "ss_cap must lie in [0, 1], got {}",
                self.cap
            )));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "ss_step must be non-negative, got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

/// `min(cap, step_size · ⌊epoch / period⌋)` for a zero-based epoch, rounded
/// to 12 decimals so that e.g. `3 · 0.05` is exactly `0.15`.
pub fn epsilon_at(epoch: usize, schedule: &SsSchedule) -> f64 {
    let raw = schedule.step_size * (epoch / schedule.period.max(1)) as f64;
    ((raw * 1e12).round() / 1e12).min(schedule.cap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub grad_clip_norm: f64,
    pub epochs: usize,
    pub seed: u64,
    pub regime: Regime,
    pub ss_schedule: SsSchedule,
    pub reward: RewardSpec,
    /// Length-sorted buckets when batching.
    pub bucketing: bool,
    /// Length limit for RL samples and validation decodes.
    pub max_decode_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 50,
            learning_rate: 1.0,
            dropout: 0.1,
            grad_clip_norm: 5.0,
            epochs: 10,
            seed: 1,
            regime: Regime::Ce,
            ss_schedule: SsSchedule::default(),
            reward: RewardSpec::default(),
            bucketing: true,
            max_decode_len: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.grad_clip_norm.is_nan() || self.grad_clip_norm <= 0.0 {
            return Err(Error::Config("grad_clip_norm must be positive".into()));
        }
        if self.regime == Regime::Init {
            return Err(Error::Config("training regime must be ce, ss or rl".into()));
        }
        if self.max_decode_len == 0 {
            return Err(Error::Config("max_decode_len must be positive".into()));
        }
        self.ss_schedule.validate()?;
        self.reward.validate()
    }
}

/// Identifies one batch of one epoch; derives independent per-sentence
/// generators from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngKey {
    pub seed: u64,
    pub epoch: u64,
    pub batch: u64,
}

impl RngKey {
    pub fn new(seed: u64, epoch: usize, batch: usize) -> Self {
        Self {
            seed,
            epoch: epoch as u64,
            batch: batch as u64,
        }
    }

    pub fn rng(&self, row: usize, stream: u64) -> ChaCha8Rng {
        let mut bytes = [0u8; 32];
        bytes[..8].copy_from_slice(&self.seed.to_le_bytes());
        bytes[8..16].copy_from_slice(&self.epoch.to_le_bytes());
        bytes[16..24].copy_from_slice(&self.batch.to_le_bytes());
        bytes[24..].copy_from_slice(&(row as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(bytes);
        rng.set_stream(stream);
        rng
    }

    /// Seed for the epoch's batch shuffle.
    pub fn shuffle_seed(&self) -> u64 {
        use rand::RngCore;
        self.rng(usize::MAX, SHUFFLE_STREAM).next_u64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_table() {
        let s = SsSchedule::default();
        let expect = [
            (0, 0.0),
            (4, 0.0),
            (5, 0.05),
            (9, 0.05),
            (10, 0.10),
            (15, 0.15),
            (24, 0.20),
            (25, 0.25),
            (1000, 0.25),
        ];
        for (e, v) in expect {
            assert_eq!(epsilon_at(e, &s), v, "epoch {e}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: -1.0,
                ..Default::default()
            },
            TrainConfig {
                dropout: 1.0,
                ..Default::default()
            },
            TrainConfig {
                regime: Regime::Init,
                ..Default::default()
            },
            TrainConfig {
                ss_schedule: SsSchedule {
                    period: 0,
                    ..Default::default()
                },
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn rng_keys_are_independent() {
        use rand::Rng;
        let k = RngKey::new(1, 0, 0);
        let a: u64 = k.rng(0, 0).gen();
        assert_eq!(a, k.rng(0, 0).gen::<u64>());
        assert_ne!(a, k.rng(1, 0).gen::<u64>());
        assert_ne!(a, k.rng(0, 1).gen::<u64>());
        assert_ne!(a, RngKey::new(1, 1, 0).rng(0, 0).gen::<u64>());
    }
}
