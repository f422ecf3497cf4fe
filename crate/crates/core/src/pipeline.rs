//! Staged training: each stage resumes from the previous stage's
//! best-validation checkpoint.

use std::fmt;

use crate::bpe::Vocabulary;
use crate::data::ParallelCorpus;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Regime};
use crate::scalar::Scalar;
use crate::training::{train, EpochReport, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub regime: Regime,
    pub epochs: usize,
    /// Overrides the base batch size for this stage.
    pub batch_size: Option<usize>,
}

impl Stage {
    pub fn new(regime: Regime, epochs: usize) -> Self {
        Self {
            regime,
            epochs,
            batch_size: None,
        }
    }

    pub fn with_batch_size(self, batch_size: usize) -> Self {
        Self {
            batch_size: Some(batch_size),
            ..self
        }
    }

    /// Parses `ce:10,ss:10,rl:5`, each optionally followed by `:batch_size`.
    pub fn parse_list(text: &str) -> Result<Vec<Stage>> {
        text.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                let parts: Vec<&str> = s.split(':').map(str::trim).collect();
                if !(2..=3).contains(&parts.len()) {
                    return Err(Error::Config(format!(
                        "stage {s:?} must look like regime:epochs[:batch_size]"
                    )));
                }
                let regime: Regime = parts[0].parse()?;
                let epochs = parts[1]
                    .parse()
                    .map_err(|_| Error::Config(format!("stage {s:?}: bad epoch count")))?;
                let stage = Stage::new(regime, epochs);
                match parts.get(2) {
                    None => Ok(stage),
                    Some(b) => match b.parse() {
                        Ok(b) if b > 0 => Ok(stage.with_batch_size(b)),
                        _ => Err(Error::Config(format!("stage {s:?}: bad batch size"))),
                    },
                }
            })
            .collect()
    }

    pub fn format_list(stages: &[Stage]) -> String {
        stages
            .iter()
            .map(Stage::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.regime, self.epochs)?;
        match self.batch_size {
            Some(b) => write!(f, ":{b}"),
            None => Ok(()),
        }
    }
}

/// Rejects stage lists that cannot run from a checkpoint tagged `start`.
pub fn validate_stages(stages: &[Stage], start: Regime) -> Result<()> {
    if stages.is_empty() {
        return Err(Error::Config("pipeline needs at least one stage".into()));
    }
    let mut current = start;
    for (i, s) in stages.iter().enumerate() {
        match s.regime {
            Regime::Init => {
                return Err(Error::Config(format!(
                    "stage {i}: init is not a training regime"
                )))
            }
            Regime::Rl if current == Regime::Init => {
                return Err(Error::Config(format!(
                    "stage {i}: rl needs a preceding ce or ss checkpoint"
                )))
            }
            r => current = r,
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct StageResult<S> {
    pub stage: Stage,
    pub outcome: TrainOutcome<S>,
}

/// Runs `stages` in order starting from `start`.
pub fn run_pipeline<S: Scalar>(
    start: Checkpoint<S>,
    stages: &[Stage],
    data: &ParallelCorpus,
    valid: Option<&ParallelCorpus>,
    vocab: &Vocabulary,
    base: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, &EpochReport, &Checkpoint<S>) -> Result<()>,
) -> Result<Vec<StageResult<S>>> {
    validate_stages(stages, start.regime)?;
    let mut current = start;
    let mut results = Vec::with_capacity(stages.len());
    for (i, &stage) in stages.iter().enumerate() {
        let cfg = TrainConfig {
            regime: stage.regime,
            epochs: stage.epochs,
            batch_size: stage.batch_size.unwrap_or(base.batch_size),
            ..base.clone()
        };
        let outcome = train(current, data, valid, vocab, &cfg, &mut |r, c| {
            on_epoch(i, r, c)
        })?;
        current = outcome.best.clone();
        results.push(StageResult { stage, outcome });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_list_parsing() {
        let s = Stage::parse_list("ce:2, ss:3,rl:1:50").unwrap();
        assert_eq!(
            s,
            vec![
                Stage::new(Regime::Ce, 2),
                Stage::new(Regime::Ss, 3),
                Stage::new(Regime::Rl, 1).with_batch_size(50)
            ]
        );
        assert_eq!(Stage::format_list(&s), "ce:2,ss:3,rl:1:50");
        assert!(Stage::parse_list("ce").is_err());
        assert!(Stage::parse_list("ce:1:0").is_err());
        assert!(Stage::parse_list("ce:1:2:3").is_err());
        assert!(Stage::parse_list("xx:1").is_err());
    }

    #[test]
    fn rl_without_pretraining_rejected() {
        assert!(validate_stages(&[Stage::new(Regime::Rl, 1)], Regime::Init).is_err());
        assert!(validate_stages(&[Stage::new(Regime::Rl, 1)], Regime::Ss).is_ok());
        assert!(validate_stages(
            &[Stage::new(Regime::Ce, 1), Stage::new(Regime::Rl, 1)],
            Regime::Init
        )
        .is_ok());
        assert!(validate_stages(&[], Regime::Init).is_err());
    }
}
