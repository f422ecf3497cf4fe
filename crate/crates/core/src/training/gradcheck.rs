//! Finite-difference check of the full sequence cross-entropy at toy size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sentence_nll_on;
use crate::bpe::{BOS, EOS, SPECIALS};
use crate::error::Result;
use crate::model::{ModelConfig, Seq2Seq};
use crate::tensor::{finite_diff_check, GradCheckReport, TensorError};

/// V=12, embed 6, hidden 8, two encoder layers.
pub fn toy_config(seed: u64, image_feature_dim: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 12,
        embed_dim: 6,
        hidden_dim: 8,
        encoder_layers: 2,
        attention_dim: 8,
        image_feature_dim,
        dropout_rate: 0.0,
        seed,
        max_src_len: 20,
        max_tgt_len: 20,
    }
}

/// Checks every parameter of a toy model on a random source of length 4 and
/// target of length 5 (plus BOS/EOS).
///
/// Weights are drawn from `U(-param_scale, param_scale)`. At the usual
/// `0.1` most gradients sit near `1e-7`, where central differences lose
/// most of their digits to rounding; a larger scale keeps the comparison
/// meaningful.
pub fn toy_gradcheck(seed: u64, param_scale: f64, step: f64, tol: f64) -> Result<GradCheckReport> {
    let config = toy_config(seed, 0);
    let mut model = Seq2Seq::<f64>::new(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        for v in model.params_mut().get_mut(id).data_mut() {
            *v = rng.gen_range(-param_scale..param_scale);
        }
    }
    let content = SPECIALS.len()..config.vocab_size;
    let src: Vec<usize> = (0..4).map(|_| rng.gen_range(content.clone())).collect();
    let mut tgt = vec![BOS];
    tgt.extend((0..5).map(|_| rng.gen_range(content.clone())));
    tgt.push(EOS);
    let report = finite_diff_check(
        model.params(),
        |g, p| {
            sentence_nll_on(model.view_with(p), g, &src, &tgt, None, None, None)
                .map_err(|e| TensorError::GradCheck(e.to_string()))
        },
        step,
        tol,
    )?;
    Ok(report)
}
