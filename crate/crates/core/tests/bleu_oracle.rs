mod common;

use common::*;
use nmt_core::reward::{corpus_bleu, sentence_bleu, RewardSpec, Smoothing};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn sentence_bleu_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = RewardSpec::default();
    for _ in 0..2000 {
        let c = random_sentence(&mut rng, 9);
        let r = random_sentence(&mut rng, 9);
        let got = sentence_bleu(&c, &r, &spec);
        let want = brute_sentence_bleu(&c, &r);
        assert!(
            (got - want).abs() <= 1e-12,
            "{c:?} / {r:?}: {got} vs {want}"
        );
        assert!((0.0..=1.0).contains(&got));
    }
}

#[test]
fn corpus_bleu_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let n = rng.gen_range(1..12);
        let cands: Vec<_> = (0..n).map(|_| random_sentence(&mut rng, 10)).collect();
        let refs: Vec<_> = (0..n).map(|_| random_sentence(&mut rng, 10)).collect();
        let got = corpus_bleu(&cands, &refs).unwrap();
        assert!((got - brute_corpus_bleu(&cands, &refs)).abs() <= 1e-12);
    }
}

#[test]
fn unsmoothed_sentence_bleu_is_zero_without_four_gram_match() {
    let spec = RewardSpec {
        smoothing: Smoothing::None,
        ..RewardSpec::default()
    };
    let c: Vec<&str> = "a b c d".split(' ').collect();
    let r: Vec<&str> = "a b c e".split(' ').collect();
    assert_eq!(sentence_bleu(&c, &r, &spec), 0.0);
    assert!(sentence_bleu(&c, &r, &RewardSpec::default()) > 0.0);
}

#[test]
fn brevity_penalty_only_for_short_candidates() {
    let spec = RewardSpec::default();
    let r: Vec<&str> = "a b c d e f".split(' ').collect();
    let short = &r[..4];
    let expected = (1.0f64 - 6.0 / 4.0).exp();
    assert!((sentence_bleu(short, &r, &spec) - expected).abs() < 1e-12);
    let long: Vec<&str> = "a b c d e f g".split(' ').collect();
    assert!(sentence_bleu(&long, &r, &spec) < 1.0);
}
