use rand::Rng;

use super::{Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to one tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Registers a tensor. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// Registers a tensor filled from `U(-scale, scale)`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        scale: f64,
        rng: &mut R,
    ) -> ParamId {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = S::of(rng.gen_range(-scale..=scale));
        }
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<S>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Plain SGD: `p ← p − lr·g` for every parameter with a gradient.
    pub fn sgd_step(&mut self, grads: &Gradients<S>, lr: S) {
        for (t, g) in self.tensors.iter_mut().zip(&grads.grads) {
            if let Some(g) = g {
                for (p, &d) in t.data_mut().iter_mut().zip(g) {
                    *p -= lr * d;
                }
            }
        }
    }

    /// Copies gradients into each tensor's `grad` slot; parameters without a
    /// gradient get an all-zero one.
    pub fn store_grads(&mut self, grads: &Gradients<S>) {
        for (t, g) in self.tensors.iter_mut().zip(&grads.grads) {
            let g = g.clone().unwrap_or_else(|| vec![S::zero(); t.len()]);
            t.set_grad(g).expect("gradient sized from its parameter");
        }
    }

    /// Bitwise equality of every parameter value.
    pub fn bit_identical(&self, other: &Self) -> bool {
        self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.f64().to_bits() == y.f64().to_bits())
            })
    }
}

/// Per-parameter gradient buffers, indexed by [`ParamId`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    pub(crate) grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Empty gradients sized for `params`.
    pub fn for_params(params: &ParamSet<S>) -> Self {
        Self {
            grads: vec![None; params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[S]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `id`, or zeros of length `len` when it never reached the loss.
    pub fn get_or_zeros(&self, id: ParamId, len: usize) -> Vec<S> {
        self.get(id)
            .map(<[S]>::to_vec)
            .unwrap_or_else(|| vec![S::zero(); len])
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[S]) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(acc) => acc.iter_mut().zip(grad).for_each(|(a, &g)| *a += g),
            slot @ None => *slot = Some(grad.to_vec()),
        }
    }

    /// `self += k · other`.
    pub fn add_scaled(&mut self, other: &Gradients<S>, k: S) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(theirs) = theirs {
                match mine {
                    Some(m) => m.iter_mut().zip(theirs).for_each(|(a, &b)| *a += k * b),
                    None => *mine = Some(theirs.iter().map(|&b| k * b).collect()),
                }
            }
        }
    }

    pub fn scale(&mut self, k: S) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn global_norm(&self) -> S {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|&v| v * v)
            .sum::<S>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`. Returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: S) -> S {
        let norm = self.global_norm();
        if norm > max_norm && norm > S::zero() {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn dot(&self, other: &Gradients<S>) -> S {
        self.grads
            .iter()
            .zip(&other.grads)
            .filter_map(|(a, b)| Some((a.as_ref()?, b.as_ref()?)))
            .flat_map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| x * y))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().flatten().all(|v| v.is_finite())
    }

    /// Flattens into one vector in parameter order, zero-filling missing entries.
    pub fn flatten(&self, params: &ParamSet<S>) -> Vec<S> {
        params
            .iter()
            .flat_map(|(id, _, t)| self.get_or_zeros(id, t.len()))
            .collect()
    }

    pub(crate) fn check_against(&self, params: &ParamSet<S>) -> Result<()> {
        for (id, _, t) in params.iter() {
            if let Some(g) = self.get(id) {
                if g.len() != t.len() {
                    return Err(TensorError::ShapeMismatch {
                        op: "gradients",
                        left: t.shape().to_vec(),
                        right: vec![g.len()],
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_params() -> (ParamSet<f64>, ParamId, ParamId) {
        let mut p = ParamSet::new();
        let a = p.add("a", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let b = p.add("b", Tensor::new(vec![1], vec![3.0]).unwrap());
        (p, a, b)
    }

    #[test]
    fn clipping_preserves_direction() {
        let (p, a, b) = two_params();
        let mut g = Gradients::for_params(&p);
        g.accumulate(a, &[3.0, 0.0]);
        g.accumulate(b, &[4.0]);
        let before = g.clone();
        let norm = g.clip_global_norm(1.0);
        assert!((norm - 5.0).abs() < 1e-15);
        assert!((g.global_norm() - 1.0).abs() < 1e-15);
        let cos = g.dot(&before) / (g.global_norm() * before.global_norm());
        assert!((cos - 1.0).abs() < 1e-15);
    }

    #[test]
    fn clipping_below_threshold_is_identity() {
        let (p, a, _) = two_params();
        let mut g = Gradients::for_params(&p);
        g.accumulate(a, &[0.1, 0.2]);
        let before = g.clone();
        g.clip_global_norm(5.0);
        assert_eq!(g, before);
    }

    #[test]
    fn sgd_skips_params_without_gradient() {
        let (mut p, a, b) = two_params();
        let mut g = Gradients::for_params(&p);
        g.accumulate(a, &[1.0, 1.0]);
        p.sgd_step(&g, 0.5);
        assert_eq!(p.get(a).data(), &[0.5, 1.5]);
        assert_eq!(p.get(b).data(), &[3.0]);
    }

    #[test]
    fn accumulate_is_additive() {
        let (p, a, _) = two_params();
        let mut g = Gradients::for_params(&p);
        g.accumulate(a, &[1.0, 2.0]);
        g.accumulate(a, &[0.5, 0.5]);
        assert_eq!(g.get(a), Some(&[1.5, 2.5][..]));
    }
}
