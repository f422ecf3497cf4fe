//! A tabular two-step policy small enough to enumerate, for checking the
//! single-sample REINFORCE estimator against its exact expectation.
//!
//! Tokens are `a b c`. `p(w1) = softmax(θ1)`, `p(w2 | w1) = softmax(θ2[w1])`.
//! The reward is smoothed sentence BLEU against a fixed reference.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::Result;
use crate::reward::{sentence_bleu, RewardSpec};
use crate::tensor::{softmax_slice, Graph, ParamId, ParamSet, Tensor, Var};

pub const TOY_TOKENS: [&str; 3] = ["a", "b", "c"];

pub type Sequence = [usize; 2];

#[derive(Debug, Clone)]
pub struct ToyPolicy {
    params: ParamSet<f64>,
    theta1: ParamId,
    theta2: ParamId,
    reference: Vec<&'static str>,
    spec: RewardSpec,
}

impl ToyPolicy {
    pub fn new(theta1: [f64; 3], theta2: [[f64; 3]; 3], reference: Sequence) -> Self {
        let mut params = ParamSet::new();
        let t1 = params.add(
            "theta1",
            Tensor::new(vec![3, 1], theta1.to_vec()).expect("finite"),
        );
        let t2 = params.add(
            "theta2",
            Tensor::new(vec![3, 3], theta2.iter().flatten().copied().collect()).expect("finite"),
        );
        Self {
            params,
            theta1: t1,
            theta2: t2,
            reference: reference.iter().map(|&i| TOY_TOKENS[i]).collect(),
            spec: RewardSpec::default(),
        }
    }

    /// Instance whose greedy output equals the reference `a b`.
    pub fn standard() -> Self {
        Self::new(
            [0.8, 0.3, -0.2],
            [[0.1, 0.9, -0.3], [0.2, -0.1, 0.4], [-0.5, 0.3, 0.6]],
            [0, 1],
        )
    }

    pub fn params(&self) -> &ParamSet<f64> {
        &self.params
    }

    pub fn num_coordinates(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn all_sequences() -> Vec<Sequence> {
        (0..3).flat_map(|a| (0..3).map(move |b| [a, b])).collect()
    }

    fn first(&self) -> Vec<f64> {
        softmax_slice(self.params.get(self.theta1).data())
    }

    fn second(&self, w1: usize) -> Vec<f64> {
        softmax_slice(self.params.get(self.theta2).row(w1))
    }

    pub fn prob(&self, w: Sequence) -> f64 {
        self.first()[w[0]] * self.second(w[0])[w[1]]
    }

    pub fn greedy(&self) -> Sequence {
        let argmax = |p: &[f64]| (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        let w1 = argmax(&self.first());
        [w1, argmax(&self.second(w1))]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sequence {
        let w1 = WeightedIndex::new(self.first())
            .expect("positive")
            .sample(rng);
        let w2 = WeightedIndex::new(self.second(w1))
            .expect("positive")
            .sample(rng);
        [w1, w2]
    }

    pub fn reward(&self, w: Sequence) -> f64 {
        let cand: Vec<&str> = w.iter().map(|&i| TOY_TOKENS[i]).collect();
        sentence_bleu(&cand, &self.reference, &self.spec)
    }

    /// Greedy baseline reward `b = r(ŵ)`.
    pub fn baseline(&self) -> f64 {
        self.reward(self.greedy())
    }

    /// `ln p(w)` recorded on `g`.
    pub fn log_prob_on<'p>(
        &self,
        g: &mut Graph<'p, f64>,
        params: &'p ParamSet<f64>,
        w: Sequence,
    ) -> Result<Var> {
        let t1 = g.param(params, self.theta1)?;
        let t2 = g.param(params, self.theta2)?;
        let l1 = g.log_softmax(t1)?;
        let a = g.pick(l1, w[0])?;
        let row = g.gather_rows(t2, &[w[0]])?;
        let row = g.reshape(row, vec![3, 1])?;
        let l2 = g.log_softmax(row)?;
        let b = g.pick(l2, w[1])?;
        Ok(g.add(a, b)?)
    }

    /// `∇ ln p(w)`, flattened in parameter order.
    pub fn grad_log_prob(&self, w: Sequence) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let lp = self.log_prob_on(&mut g, &self.params, w)?;
        Ok(g.backward(lp)?.flatten(&self.params))
    }

    /// Single-sample estimate of the loss gradient, `−(r(w) − b) ∇ ln p(w)`.
    pub fn single_sample_gradient(&self, w: Sequence, baseline: f64) -> Result<Vec<f64>> {
        let adv = self.reward(w) - baseline;
        Ok(self
            .grad_log_prob(w)?
            .into_iter()
            .map(|v| -adv * v)
            .collect())
    }

    /// `Σ_w p(w) · (−(r(w) − b)) ∇ ln p(w)` by enumeration.
    pub fn exact_expected_gradient(&self, baseline: f64) -> Result<Vec<f64>> {
        let mut total = vec![0.0; self.num_coordinates()];
        for w in Self::all_sequences() {
            let p = self.prob(w);
            for (t, v) in total
                .iter_mut()
                .zip(self.single_sample_gradient(w, baseline)?)
            {
                *t += p * v;
            }
        }
        Ok(total)
    }

    /// Exact expected contribution of the baseline, `Σ_w p(w) b ∇ ln p(w)`.
    pub fn exact_baseline_term(&self, baseline: f64) -> Result<Vec<f64>> {
        let mut total = vec![0.0; self.num_coordinates()];
        for w in Self::all_sequences() {
            let p = self.prob(w);
            for (t, v) in total.iter_mut().zip(self.grad_log_prob(w)?) {
                *t += p * baseline * v;
            }
        }
        Ok(total)
    }
}

/// Per-coordinate sample mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl Moments {
    pub fn standard_error(&self) -> Vec<f64> {
        self.variance
            .iter()
            .map(|v| (v / self.count as f64).sqrt())
            .collect()
    }
}

/// Mean and unbiased variance of a list of equal-length vectors, via
/// Welford's update.
pub fn moments(samples: &[Vec<f64>]) -> Moments {
    let d = samples.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for (k, s) in samples.iter().enumerate() {
        let n = (k + 1) as f64;
        for i in 0..d {
            let delta = s[i] - mean[i];
            mean[i] += delta / n;
            m2[i] += delta * (s[i] - mean[i]);
        }
    }
    let denom = samples.len().saturating_sub(1).max(1) as f64;
    Moments {
        count: samples.len(),
        mean,
        variance: m2.into_iter().map(|v| v / denom).collect(),
    }
}
