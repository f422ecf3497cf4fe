use super::params::{Gradients, ParamId, ParamSet};
use super::{check_finite, check_shape, numel, Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'p, S> {
    Owned(Vec<S>),
    Borrowed(&'p [S]),
}

impl<S> Value<'_, S> {
    fn as_slice(&self) -> &[S] {
        match self {
            Value::Owned(v) => v,
            Value::Borrowed(v) => v,
        }
    }
}

enum Op<S> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Neg(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Gather { table: Var, ids: Vec<usize> },
    Concat(Vec<Var>),
    Slice { src: Var, start: usize },
    StackRows(Vec<Var>),
    RepeatRows(Var),
    Reshape(Var),
    Sum(Var),
    Pick(Var, usize),
}

struct Node<'p, S> {
    shape: Vec<usize>,
    value: Value<'p, S>,
    op: Op<S>,
}

/// Append-only record of executed operations.
///
/// Parameters are borrowed from a single [`ParamSet`] for the lifetime of the
/// graph, so building a graph never copies weights.
pub struct Graph<'p, S> {
    nodes: Vec<Node<'p, S>>,
    param_source: Option<*const ParamSet<S>>,
    param_leaves: Vec<Option<Var>>,
    tanh_fault: bool,
}

// The raw pointer is only compared for identity, never dereferenced.
unsafe impl<S: Send> Send for Graph<'_, S> {}

impl<S: Scalar> Default for Graph<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, S: Scalar> Graph<'p, S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_source: None,
            param_leaves: Vec::new(),
            tanh_fault: false,
        }
    }

    /// Negative control for gradient checking: scales every tanh backward
    /// contribution by 1.5 so that a correct checker must report failure.
    #[doc(hidden)]
    pub fn corrupt_tanh_backward(&mut self) {
        self.tanh_fault = true;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[S] {
        self.nodes[v.0].value.as_slice()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> S {
        self.value(v)[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<S> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec())
            .expect("graph values are finite and well-shaped")
    }

    fn push(
        &mut self,
        shape: Vec<usize>,
        data: Vec<S>,
        op: Op<S>,
        name: &'static str,
    ) -> Result<Var> {
        debug_assert_eq!(numel(&shape), data.len());
        check_finite(name, &data)?;
        self.nodes.push(Node {
            shape,
            value: Value::Owned(data),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Value::Owned(t.into_data()),
            op: Op::Input,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf from raw parts.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<S>) -> Result<Var> {
        check_shape(&shape)?;
        if numel(&shape) != data.len() {
            return Err(TensorError::InvalidShape {
                reason: format!("{} elements supplied", data.len()),
                shape,
            });
        }
        self.push(shape, data, Op::Input, "constant")
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> Result<Var> {
        check_shape(&shape)?;
        let n = numel(&shape);
        self.push(shape, vec![S::zero(); n], Op::Input, "zeros")
    }

    /// Trainable leaf borrowed from `params`. Repeated calls with the same id
    /// return the same node.
    pub fn param(&mut self, params: &'p ParamSet<S>, id: ParamId) -> Result<Var> {
        let src = params as *const ParamSet<S>;
        match self.param_source {
            None => self.param_source = Some(src),
            Some(existing) if existing != src => {
                return Err(TensorError::Backward(
                    "a graph may draw parameters from one parameter set only".into(),
                ))
            }
            Some(_) => {}
        }
        if let Some(Some(v)) = self.param_leaves.get(id.0) {
            return Ok(*v);
        }
        let t = params.get(id);
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Value::Borrowed(t.data()),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        if self.param_leaves.len() <= id.0 {
            self.param_leaves.resize(id.0 + 1, None);
        }
        self.param_leaves[id.0] = Some(v);
        Ok(v)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            other => Err(TensorError::ShapeMismatch {
                op,
                left: other.to_vec(),
                right: vec![0, 0],
            }),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let (av, bv) = (self.value(a), self.value(b));
        if n == 1 {
            let out = (0..m).map(|i| dot(&av[i * k..(i + 1) * k], bv)).collect();
            return self.push(vec![m, 1], out, Op::MatMul(a, b), "matmul");
        }
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == S::zero() {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        self.push(vec![m, n], out, Op::MatMul(a, b), "matmul")
    }

    fn broadcast_shape(&self, a: Var, b: Var, op: &'static str) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb || numel(sb) == 1 {
            Ok(sa.to_vec())
        } else if numel(sa) == 1 {
            Ok(sb.to_vec())
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            })
        }
    }

    fn zip_with(&self, a: Var, b: Var, n: usize, f: impl Fn(S, S) -> S) -> Vec<S> {
        let (av, bv) = (self.value(a), self.value(b));
        let ai = |i: usize| if av.len() == 1 { av[0] } else { av[i] };
        let bi = |i: usize| if bv.len() == 1 { bv[0] } else { bv[i] };
        (0..n).map(|i| f(ai(i), bi(i))).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shape(a, b, "add")?;
        let out = self.zip_with(a, b, numel(&shape), |x, y| x + y);
        self.push(shape, out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, numel(&shape), |x, y| x - y);
        self.push(shape, out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, numel(&shape), |x, y| x * y);
        self.push(shape, out, Op::Mul(a, b), "mul")
    }

    /// Multiplies by a constant that is not itself differentiated.
    pub fn scale(&mut self, x: Var, k: S) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| v * k).collect();
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, k), "scale")
    }

    fn unary(&mut self, x: Var, op: Op<S>, name: &'static str, f: impl Fn(S) -> S) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        self.push(self.shape(x).to_vec(), out, op, name)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Neg(x), "neg", |v| -v)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), "tanh", S::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), "sigmoid", sigmoid)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(index) = self.value(x).iter().position(|&v| v <= S::zero()) {
            return Err(TensorError::Domain {
                op: "log",
                index,
                value: self.value(x)[index].f64(),
            });
        }
        self.unary(x, Op::Log(x), "log", S::ln)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp(x), "exp", S::exp)
    }

    fn check_vector(&self, x: Var, op: &'static str) -> Result<()> {
        let s = self.shape(x);
        if s.iter().filter(|&&d| d > 1).count() > 1 {
            return Err(TensorError::ShapeMismatch {
                op,
                left: s.to_vec(),
                right: vec![numel(s)],
            });
        }
        Ok(())
    }

    /// Softmax over all entries of a vector-shaped tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check_vector(x, "softmax")?;
        let out = softmax_slice(self.value(x));
        self.push(self.shape(x).to_vec(), out, Op::Softmax(x), "softmax")
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.check_vector(x, "log_softmax")?;
        let out = log_softmax_slice(self.value(x));
        self.push(
            self.shape(x).to_vec(),
            out,
            Op::LogSoftmax(x),
            "log_softmax",
        )
    }

    /// Row lookup: `table[V×d]`, ids → `[len×d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, d) = self.dims2(table, "gather_rows")?;
        if ids.is_empty() {
            return Err(TensorError::InvalidShape {
                shape: vec![0, d],
                reason: "gather_rows needs at least one id".into(),
            });
        }
        if let Some((position, &id)) = ids.iter().enumerate().find(|(_, &id)| id >= rows) {
            return Err(TensorError::IndexOutOfRange { id, position, rows });
        }
        let tv = self.value(table);
        let out = ids
            .iter()
            .flat_map(|&id| tv[id * d..(id + 1) * d].iter().copied())
            .collect();
        self.push(
            vec![ids.len(), d],
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            "gather_rows",
        )
    }

    /// Flat concatenation into a column vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let out: Vec<S> = parts
            .iter()
            .flat_map(|&p| self.value(p).iter().copied())
            .collect();
        let n = out.len();
        check_shape(&[n])?;
        self.push(vec![n, 1], out, Op::Concat(parts.to_vec()), "concat")
    }

    /// Contiguous flat range `[start, start+len)` as a column vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.value(x).len();
        if len == 0 || start + len > n {
            return Err(TensorError::ShapeMismatch {
                op: "slice",
                left: self.shape(x).to_vec(),
                right: vec![start, len],
            });
        }
        let out = self.value(x)[start..start + len].to_vec();
        self.push(vec![len, 1], out, Op::Slice { src: x, start }, "slice")
    }

    /// Stacks equal-sized tensors as rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let d = rows.first().map(|&r| self.value(r).len()).unwrap_or(0);
        if rows.is_empty() {
            return Err(TensorError::InvalidShape {
                shape: vec![0, d],
                reason: "stack_rows needs at least one row".into(),
            });
        }
        if let Some(&bad) = rows.iter().find(|&&r| self.value(r).len() != d) {
            return Err(TensorError::ShapeMismatch {
                op: "stack_rows",
                left: self.shape(rows[0]).to_vec(),
                right: self.shape(bad).to_vec(),
            });
        }
        let out: Vec<S> = rows
            .iter()
            .flat_map(|&r| self.value(r).iter().copied())
            .collect();
        self.push(
            vec![rows.len(), d],
            out,
            Op::StackRows(rows.to_vec()),
            "stack_rows",
        )
    }

    /// Tiles a row (any shape, flattened) `n` times into `[n×d]`.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let row = self.value(x).to_vec();
        let d = row.len();
        check_shape(&[n, d])?;
        let out = row.iter().copied().cycle().take(n * d).collect();
        self.push(vec![n, d], out, Op::RepeatRows(x), "repeat_rows")
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        check_shape(&shape)?;
        if numel(&shape) != self.value(x).len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: self.shape(x).to_vec(),
                right: shape,
            });
        }
        let out = self.value(x).to_vec();
        self.push(shape, out, Op::Reshape(x), "reshape")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum(x), "sum")
    }

    /// Single element at flat index `i`.
    pub fn pick(&mut self, x: Var, i: usize) -> Result<Var> {
        let n = self.value(x).len();
        if i >= n {
            return Err(TensorError::IndexOutOfRange {
                id: i,
                position: 0,
                rows: n,
            });
        }
        let v = self.value(x)[i];
        self.push(vec![1], vec![v], Op::Pick(x, i), "pick")
    }

    /// Reverse pass from a single-element `loss`; returns the gradient of the
    /// loss with respect to every parameter leaf on the graph.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.nodes.is_empty() {
            return Err(TensorError::Backward("empty graph".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::Backward(
                "loss is not a node of this graph".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![S::one()]);
        let mut out = Gradients { grads: Vec::new() };
        let mut reached_param = false;

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = node.value.as_slice();
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    reached_param = true;
                    out.accumulate(*id, &g);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let n = self.shape(*b)[1];
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = vec![S::zero(); m * k];
                    let mut gb = vec![S::zero(); k * n];
                    if n == 1 {
                        for i in 0..m {
                            let gi = g[i];
                            let arow = &av[i * k..(i + 1) * k];
                            for ((o, &bp), (acc, &ap)) in ga[i * k..(i + 1) * k]
                                .iter_mut()
                                .zip(bv)
                                .zip(gb.iter_mut().zip(arow))
                            {
                                *o = gi * bp;
                                *acc += ap * gi;
                            }
                        }
                    } else {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                ga[i * k + p] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                                let x = av[i * k + p];
                                if x != S::zero() {
                                    for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                        *o += x * gv;
                                    }
                                }
                            }
                        }
                    }
                    add_into(&mut grads, *a, ga);
                    add_into(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    let ga = reduce_to(self.value(*a).len(), &g);
                    let gb = reduce_to(self.value(*b).len(), &g);
                    add_into(&mut grads, *a, ga);
                    add_into(&mut grads, *b, gb);
                }
                Op::Sub(a, b) => {
                    let ga = reduce_to(self.value(*a).len(), &g);
                    let gb = reduce_to(self.value(*b).len(), &g)
                        .into_iter()
                        .map(|v| -v)
                        .collect();
                    add_into(&mut grads, *a, ga);
                    add_into(&mut grads, *b, gb);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let at = |i: usize| if av.len() == 1 { av[0] } else { av[i] };
                    let bt = |i: usize| if bv.len() == 1 { bv[0] } else { bv[i] };
                    let ga_full: Vec<S> = g.iter().enumerate().map(|(i, &gv)| gv * bt(i)).collect();
                    let gb_full: Vec<S> = g.iter().enumerate().map(|(i, &gv)| gv * at(i)).collect();
                    add_into(&mut grads, *a, reduce_to(av.len(), &ga_full));
                    add_into(&mut grads, *b, reduce_to(bv.len(), &gb_full));
                }
                Op::Scale(x, k) => {
                    let gx = g.iter().map(|&v| v * *k).collect();
                    add_into(&mut grads, *x, gx);
                }
                Op::Neg(x) => add_into(&mut grads, *x, g.iter().map(|&v| -v).collect()),
                Op::Tanh(x) => {
                    let fault = if self.tanh_fault {
                        S::of(1.5)
                    } else {
                        S::one()
                    };
                    let gx = g
                        .iter()
                        .zip(y)
                        .map(|(&gv, &yv)| fault * gv * (S::one() - yv * yv))
                        .collect();
                    add_into(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = g
                        .iter()
                        .zip(y)
                        .map(|(&gv, &yv)| gv * yv * (S::one() - yv))
                        .collect();
                    add_into(&mut grads, *x, gx);
                }
                Op::Log(x) => {
                    let xv = self.value(*x);
                    let gx = g.iter().zip(xv).map(|(&gv, &xv)| gv / xv).collect();
                    add_into(&mut grads, *x, gx);
                }
                Op::Exp(x) => {
                    let gx = g.iter().zip(y).map(|(&gv, &yv)| gv * yv).collect();
                    add_into(&mut grads, *x, gx);
                }
                Op::Softmax(x) => {
                    let dot: S = g.iter().zip(y).map(|(&gv, &yv)| gv * yv).sum();
                    let gx = g.iter().zip(y).map(|(&gv, &yv)| yv * (gv - dot)).collect();
                    add_into(&mut grads, *x, gx);
                }
                Op::LogSoftmax(x) => {
                    let total: S = g.iter().copied().sum();
                    let gx = g
                        .iter()
                        .zip(y)
                        .map(|(&gv, &yv)| gv - yv.exp() * total)
                        .collect();
                    add_into(&mut grads, *x, gx);
                }
                Op::Gather { table, ids } => {
                    let d = self.shape(*table)[1];
                    let mut gt = vec![S::zero(); self.value(*table).len()];
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, &gv) in gt[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                        {
                            *o += gv;
                        }
                    }
                    add_into(&mut grads, *table, gt);
                }
                Op::Concat(parts) | Op::StackRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        add_into(&mut grads, p, g[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Op::Slice { src, start } => {
                    let mut gx = vec![S::zero(); self.value(*src).len()];
                    gx[*start..*start + g.len()].copy_from_slice(&g);
                    add_into(&mut grads, *src, gx);
                }
                Op::RepeatRows(x) => {
                    let d = self.value(*x).len();
                    let mut gx = vec![S::zero(); d];
                    for chunk in g.chunks(d) {
                        gx.iter_mut().zip(chunk).for_each(|(o, &v)| *o += v);
                    }
                    add_into(&mut grads, *x, gx);
                }
                Op::Reshape(x) => add_into(&mut grads, *x, g),
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    add_into(&mut grads, *x, vec![g[0]; n]);
                }
                Op::Pick(x, i) => {
                    let mut gx = vec![S::zero(); self.value(*x).len()];
                    gx[*i] = g[0];
                    add_into(&mut grads, *x, gx);
                }
            }
        }
        if !reached_param {
            return Err(TensorError::Backward(
                "loss does not depend on any parameter".into(),
            ));
        }
        if !out.is_finite() {
            return Err(TensorError::NonFinite {
                op: "backward",
                index: 0,
            });
        }
        Ok(out)
    }
}

fn add_into<S: Scalar>(grads: &mut [Option<Vec<S>>], v: Var, g: Vec<S>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

/// Sums a broadcast gradient back down to a scalar operand.
fn reduce_to<S: Scalar>(len: usize, g: &[S]) -> Vec<S> {
    if len == g.len() {
        g.to_vec()
    } else {
        vec![g.iter().copied().sum()]
    }
}

pub(crate) fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

/// Dot product with four independent accumulators.
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = [S::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (&x, &y) in ra.iter().zip(rb) {
        total += x * y;
    }
    total
}

/// Max-subtracted softmax over a slice.
pub fn softmax_slice<S: Scalar>(x: &[S]) -> Vec<S> {
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax_slice<S: Scalar>(x: &[S]) -> Vec<S> {
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    let lse = max + x.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
    x.iter().map(|&v| v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(shape: Vec<usize>, data: Vec<f64>) -> (ParamSet<f64>, ParamId) {
        let mut p = ParamSet::new();
        let id = p.add("w", Tensor::new(shape, data).unwrap());
        (p, id)
    }

    #[test]
    fn matmul_identity_and_hand_example() {
        let mut g = Graph::<f64>::new();
        let i = g.input(Tensor::eye(2));
        let m = g.input(Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap());
        let r = g.matmul(i, m).unwrap();
        assert_eq!(g.value(r), &[5.0, 6.0, 7.0, 8.0]);

        let a = g.input(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = g.input(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
        let r = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(r), &[2, 1]);
        assert_eq!(g.value(r), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.zeros(vec![2, 3]).unwrap();
        let b = g.zeros(vec![2, 3]).unwrap();
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }

    #[test]
    fn elementwise_fixed_points() {
        let mut g = Graph::<f64>::new();
        let z = g.zeros(vec![1]).unwrap();
        let t = g.tanh(z).unwrap();
        let s = g.sigmoid(z).unwrap();
        assert_eq!(g.scalar(t), 0.0);
        assert_eq!(g.scalar(s), 0.5);
    }

    #[test]
    fn log_rejects_non_positive_before_nan() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(vec![3], vec![1.0, 0.0, 2.0]).unwrap();
        let err = g.log(x).unwrap_err();
        assert!(matches!(err, TensorError::Domain { index: 1, .. }));
        let neg = g.constant(vec![1], vec![-1.0]).unwrap();
        assert!(g.log(neg).is_err());
    }

    #[test]
    fn exp_overflow_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(vec![1], vec![1000.0]).unwrap();
        assert!(matches!(g.exp(x), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn broadcasting_is_scalar_or_equal_only() {
        let mut g = Graph::<f64>::new();
        let a = g.zeros(vec![2, 3]).unwrap();
        let b = g.zeros(vec![1, 3]).unwrap();
        assert!(g.add(a, b).is_err());
        let s = g.constant(vec![1], vec![2.0]).unwrap();
        let r = g.add(a, s).unwrap();
        assert_eq!(g.value(r), &[2.0; 6]);
    }

    #[test]
    fn softmax_uniform_and_large_logits() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(vec![3], vec![4.2, 4.2, 4.2]).unwrap();
        let y = g.softmax(x).unwrap();
        for &v in g.value(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = g.constant(vec![2], vec![1000.0, 0.0]).unwrap();
        let y = g.softmax(x).unwrap();
        assert!((g.value(y)[0] - 1.0).abs() < 1e-15);
        assert!(g.value(y)[1] < 1e-300);
    }

    #[test]
    fn softmax_rejects_matrices() {
        let mut g = Graph::<f64>::new();
        let x = g.zeros(vec![2, 2]).unwrap();
        assert!(g.softmax(x).is_err());
    }

    #[test]
    fn gather_first_row_and_out_of_range() {
        let (p, id) = single(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut g = Graph::new();
        let t = g.param(&p, id).unwrap();
        let r = g.gather_rows(t, &[0]).unwrap();
        assert_eq!(g.value(r), &[1.0, 2.0]);
        let err = g.gather_rows(t, &[1, 3]).unwrap_err();
        assert_eq!(
            err,
            TensorError::IndexOutOfRange {
                id: 3,
                position: 1,
                rows: 3
            }
        );
    }

    #[test]
    fn gather_repeated_id_accumulates() {
        let (p, id) = single(vec![3, 2], vec![0.0; 6]);
        let mut g = Graph::new();
        let t = g.param(&p, id).unwrap();
        let r = g.gather_rows(t, &[2, 2]).unwrap();
        let w = g.constant(vec![2, 2], vec![1.0, 2.0, 10.0, 20.0]).unwrap();
        let m = g.mul(r, w).unwrap();
        let loss = g.sum(m).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(id).unwrap(), &[0.0, 0.0, 0.0, 0.0, 11.0, 22.0]);
    }

    #[test]
    fn sum_gives_all_ones_and_zero_scale_gives_zeros() {
        let (p, id) = single(vec![2, 2], vec![0.3, -1.0, 2.0, 0.1]);
        let mut g = Graph::new();
        let w = g.param(&p, id).unwrap();
        let s = g.sum(w).unwrap();
        assert_eq!(g.backward(s).unwrap().get(id).unwrap(), &[1.0; 4]);

        let mut g = Graph::new();
        let w = g.param(&p, id).unwrap();
        let t = g.tanh(w).unwrap();
        let s = g.sum(t).unwrap();
        let z = g.scale(s, 0.0).unwrap();
        assert_eq!(g.backward(z).unwrap().get(id).unwrap(), &[0.0; 4]);
    }

    #[test]
    fn backward_preconditions() {
        let g = Graph::<f64>::new();
        assert!(g.backward(Var(0)).is_err());

        let (p, id) = single(vec![2], vec![1.0, 2.0]);
        let mut g = Graph::new();
        let w = g.param(&p, id).unwrap();
        assert!(matches!(g.backward(w), Err(TensorError::Backward(_))));

        let mut g = Graph::<f64>::new();
        let c = g.constant(vec![1], vec![1.0]).unwrap();
        assert!(g.backward(c).is_err());
    }

    #[test]
    fn param_leaf_is_shared() {
        let (p, id) = single(vec![1], vec![3.0]);
        let mut g = Graph::new();
        let a = g.param(&p, id).unwrap();
        let b = g.param(&p, id).unwrap();
        assert_eq!(a, b);
        let (q, qid) = single(vec![1], vec![3.0]);
        assert!(g.param(&q, qid).is_err());
    }

    #[test]
    fn slice_concat_stack_repeat_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let b = g.constant(vec![1], vec![3.0]).unwrap();
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(g.shape(c), &[3, 1]);
        let s = g.slice(c, 1, 2).unwrap();
        assert_eq!(g.value(s), &[2.0, 3.0]);
        assert!(g.slice(c, 2, 2).is_err());
        let st = g.stack_rows(&[a, a]).unwrap();
        assert_eq!(g.shape(st), &[2, 2]);
        let r = g.repeat_rows(a, 3).unwrap();
        assert_eq!(g.value(r), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
    }
}
