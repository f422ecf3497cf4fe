//! Independent reference implementations shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use nmt_core::model::{ModelConfig, Seq2Seq};
use nmt_core::ParamSet;

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
        max_src_len: 30,
        max_tgt_len: 30,
    }
}

pub fn toy_model(seed: u64) -> Seq2Seq<f64> {
    Seq2Seq::new(toy_config(seed, 0)).unwrap()
}

/// Row-major matrix borrowed out of a parameter set by name.
pub struct Mat<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

pub fn mat<'a>(p: &'a ParamSet, name: &str) -> Mat<'a> {
    let t = p.get(p.id_of(name).unwrap_or_else(|| panic!("no param {name}")));
    let shape = t.shape();
    Mat {
        rows: shape[0],
        cols: if shape.len() > 1 { shape[1] } else { 1 },
        data: t.data(),
    }
}

pub fn matvec(m: &Mat, x: &[f64]) -> Vec<f64> {
    assert_eq!(m.cols, x.len());
    (0..m.rows)
        .map(|r| {
            let mut s = 0.0;
            for c in 0..m.cols {
                s += m.data[r * m.cols + c] * x[c];
            }
            s
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn lstm(p: &ParamSet, prefix: &str, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hd = h.len();
    let z = add(
        &matvec(&mat(p, &format!("{prefix}.w")), &cat(x, h)),
        mat(p, &format!("{prefix}.b")).data,
    );
    let mut h2 = vec![0.0; hd];
    let mut c2 = vec![0.0; hd];
    for k in 0..hd {
        let i = sigmoid(z[k]);
        let f = sigmoid(z[hd + k]);
        let g = z[2 * hd + k].tanh();
        let o = sigmoid(z[3 * hd + k]);
        c2[k] = f * c[k] + i * g;
        h2[k] = o * c2[k].tanh();
    }
    (h2, c2)
}

/// Encoder annotations plus the two final states, written out loop by loop.
pub struct RefEncoding {
    pub annotations: Vec<Vec<f64>>,
    pub keys: Vec<Vec<f64>>,
    pub fwd_final: Vec<f64>,
    pub bwd_final: Vec<f64>,
}

pub fn ref_encode(model: &Seq2Seq<f64>, src: &[usize]) -> RefEncoding {
    let c = model.config();
    let p = model.params();
    let hd = c.hidden_dim;
    let emb = mat(p, "embedding");
    let mut inputs: Vec<Vec<f64>> = src
        .iter()
        .map(|&t| emb.data[t * emb.cols..(t + 1) * emb.cols].to_vec())
        .collect();
    let n = src.len();
    let (mut fwd_final, mut bwd_final) = (vec![], vec![]);
    for layer in 0..c.encoder_layers {
        let mut fwd = vec![vec![]; n];
        let mut bwd = vec![vec![]; n];
        let (mut h, mut cc) = (vec![0.0; hd], vec![0.0; hd]);
        for t in 0..n {
            (h, cc) = lstm(p, &format!("enc.l{layer}.fwd"), &inputs[t], &h, &cc);
            fwd[t] = h.clone();
        }
        let (mut h, mut cc) = (vec![0.0; hd], vec![0.0; hd]);
        for t in (0..n).rev() {
            (h, cc) = lstm(p, &format!("enc.l{layer}.bwd"), &inputs[t], &h, &cc);
            bwd[t] = h.clone();
        }
        fwd_final = fwd[n - 1].clone();
        bwd_final = bwd[0].clone();
        inputs = (0..n).map(|t| cat(&fwd[t], &bwd[t])).collect();
    }
    let wk = mat(p, "attn.key");
    let keys = inputs
        .iter()
        .map(|a| {
            (0..wk.cols)
                .map(|j| (0..wk.rows).map(|i| a[i] * wk.data[i * wk.cols + j]).sum())
                .collect()
        })
        .collect();
    RefEncoding {
        annotations: inputs,
        keys,
        fwd_final,
        bwd_final,
    }
}

/// `tanh(W_e [fwd; bwd] + W_img · img + b)`.
pub fn ref_init_hidden(model: &Seq2Seq<f64>, enc: &RefEncoding, img: Option<&[f64]>) -> Vec<f64> {
    let p = model.params();
    let mut pre = matvec(&mat(p, "init.w_e"), &cat(&enc.fwd_final, &enc.bwd_final));
    if let Some(img) = img {
        pre = add(&pre, &matvec(&mat(p, "init.w_img"), img));
    }
    add(&pre, mat(p, "init.b").data)
        .into_iter()
        .map(f64::tanh)
        .collect()
}

pub struct RefState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub ctx: Vec<f64>,
}

pub fn ref_init_state(model: &Seq2Seq<f64>, enc: &RefEncoding, img: Option<&[f64]>) -> RefState {
    let hd = model.config().hidden_dim;
    RefState {
        h: ref_init_hidden(model, enc, img),
        c: vec![0.0; hd],
        ctx: vec![0.0; 2 * hd],
    }
}

/// One decoder step; returns logits and the next state.
pub fn ref_step(
    model: &Seq2Seq<f64>,
    s: &RefState,
    prev: usize,
    enc: &RefEncoding,
) -> (Vec<f64>, RefState) {
    let p = model.params();
    let emb = mat(p, "embedding");
    let e = &emb.data[prev * emb.cols..(prev + 1) * emb.cols];
    let (h, c) = lstm(p, "dec.lstm", &cat(e, &s.ctx), &s.h, &s.c);
    let q = matvec(&mat(p, "attn.query"), &h);
    let v = mat(p, "attn.score");
    let scores: Vec<f64> = enc
        .keys
        .iter()
        .map(|k| {
            k.iter()
                .zip(&q)
                .zip(v.data)
                .map(|((k, q), v)| (k + q).tanh() * v)
                .sum()
        })
        .collect();
    let alpha = softmax(&scores);
    let mut ctx = vec![0.0; enc.annotations[0].len()];
    for (a, ann) in alpha.iter().zip(&enc.annotations) {
        for (cv, x) in ctx.iter_mut().zip(ann) {
            *cv += a * x;
        }
    }
    let att_h: Vec<f64> = add(
        &matvec(&mat(p, "out.combine.w"), &cat(&h, &ctx)),
        mat(p, "out.combine.b").data,
    )
    .into_iter()
    .map(f64::tanh)
    .collect();
    let logits = add(&matvec(&mat(p, "out.w"), &att_h), mat(p, "out.b").data);
    (logits, RefState { h, c, ctx })
}

/// Summed teacher-forced NLL of `tgt` (BOS … EOS).
pub fn ref_nll(model: &Seq2Seq<f64>, src: &[usize], tgt: &[usize], img: Option<&[f64]>) -> f64 {
    let enc = ref_encode(model, src);
    let mut s = ref_init_state(model, &enc, img);
    let mut total = 0.0;
    for t in 1..tgt.len() {
        let (logits, next) = ref_step(model, &s, tgt[t - 1], &enc);
        total -= softmax(&logits)[tgt[t]].ln();
        s = next;
    }
    total
}

/// BLEU computed by listing every n-gram and counting by linear scan.
pub fn brute_bleu_stats(
    cand: &[String],
    reference: &[String],
    max_order: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut matches = vec![0.0; max_order];
    let mut totals = vec![0.0; max_order];
    for n in 1..=max_order {
        if cand.len() < n {
            continue;
        }
        let grams: Vec<&[String]> = (0..=cand.len() - n).map(|i| &cand[i..i + n]).collect();
        let ref_grams: Vec<&[String]> = if reference.len() >= n {
            (0..=reference.len() - n)
                .map(|i| &reference[i..i + n])
                .collect()
        } else {
            vec![]
        };
        totals[n - 1] = grams.len() as f64;
        let mut seen: Vec<&[String]> = vec![];
        for g in &grams {
            if seen.contains(g) {
                continue;
            }
            seen.push(g);
            let in_cand = grams.iter().filter(|x| *x == g).count();
            let in_ref = ref_grams.iter().filter(|x| *x == g).count();
            matches[n - 1] += in_cand.min(in_ref) as f64;
        }
    }
    (matches, totals)
}

fn combine(matches: &[f64], totals: &[f64], cand_len: f64, ref_len: f64, smooth: bool) -> f64 {
    if cand_len == 0.0 {
        return 0.0;
    }
    let mut prod = 1.0;
    for (m, t) in matches.iter().zip(totals) {
        let p = if *m == 0.0 {
            if smooth {
                1.0 / (t + 1.0)
            } else {
                return 0.0;
            }
        } else {
            m / t
        };
        prod *= p;
    }
    let bp = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len / cand_len).exp()
    };
    bp * prod.powf(1.0 / matches.len() as f64)
}

pub fn brute_sentence_bleu(cand: &[String], reference: &[String]) -> f64 {
    let (m, t) = brute_bleu_stats(cand, reference, 4);
    combine(&m, &t, cand.len() as f64, reference.len() as f64, true)
}

pub fn brute_corpus_bleu(cands: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let (mut m, mut t) = (vec![0.0; 4], vec![0.0; 4]);
    let (mut cl, mut rl) = (0.0, 0.0);
    for (c, r) in cands.iter().zip(refs) {
        let (mm, tt) = brute_bleu_stats(c, r, 4);
        for i in 0..4 {
            m[i] += mm[i];
            t[i] += tt[i];
        }
        cl += c.len() as f64;
        rl += r.len() as f64;
    }
    combine(&m, &t, cl, rl, false)
}

/// Random sentence over a small alphabet so n-grams collide often.
pub fn random_sentence(rng: &mut impl rand::Rng, max_len: usize) -> Vec<String> {
    let len = rng.gen_range(0..=max_len);
    (0..len)
        .map(|_| ["a", "b", "c", "d"][rng.gen_range(0..4)].to_string())
        .collect()
}
