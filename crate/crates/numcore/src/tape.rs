//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every operation appends a node holding its output value and the inputs it
//! read. Nodes only ever reference earlier nodes, so the recorded graph is
//! acyclic by construction and the backward sweep is a single reverse pass.
//!
//! ```
//! use numcore::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_f64([3], &[1.0, 2.0, 3.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(&tape, x).to_f64_vec(), vec![2.0, 4.0, 6.0]);
//! ```

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{NumError, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{broadcast_shape, broadcast_strides, for_each_broadcast, Tensor};

/// Reference to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Bmm(Var, Var),
    TransposeLast(Var),
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    IndexSelect {
        input: Var,
        index: Arc<[usize]>,
    },
    IndexAdd {
        input: Var,
        index: Arc<[usize]>,
    },
    Sum(Var),
    Mean(Var),
    SumAxis {
        input: Var,
        axis: usize,
    },
    Softmax(Var),
    Sigmoid(Var),
    Silu(Var),
    Relu(Var),
    Norm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        over_rows: bool,
    },
    L2NormLast(Var),
    FrobeniusNorm(Var),
    BceWithLogits {
        logits: Var,
        targets: Arc<Vec<T>>,
    },
    ChannelDistances {
        coords: Var,
        mask: Arc<Vec<bool>>,
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
    },
    SlidingChannelMean {
        input: Var,
        counts: Arc<[usize]>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Records a computation for one forward pass.
///
/// A tape is confined to a single worker. Parameters are read from a shared
/// [`ParamStore`] and bound at most once per tape.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    bound: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of a backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.nodes.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `var`, zeros when it did not influence the root.
    pub fn wrt(&self, tape: &Tape<T>, var: Var) -> Tensor<T> {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let shape = tape.value(var).shape().to_vec();
                let n = shape.iter().product();
                Tensor::from_parts(shape, vec![T::zero(); n])
            }
        }
    }

    /// Gradients of every parameter bound on the tape, in binding order.
    pub fn params(&self) -> &[(ParamId, Tensor<T>)] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records values only; `backward` yields no gradients.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn requires(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(
        &mut self,
        name: &'static str,
        op: Op<T>,
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: &[Var],
    ) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumError::NonFinite { op: name });
        }
        let requires = inputs.iter().any(|&v| self.requires(v));
        Ok(self.push(op, Tensor::from_parts(shape, data), requires))
    }

    /// Records a constant (never differentiated).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Records an input that gradients are tracked for.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Binds a parameter from the store; repeated binds return the same var.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let trainable = store.is_trainable(id);
        let v = self.push(Op::Param, store.value(id).clone(), trainable);
        self.bound.insert(id, v);
        v
    }

    // ---- elementwise -------------------------------------------------------

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = broadcast_shape(name, ta.shape(), tb.shape())?;
        let sa = broadcast_strides(ta.shape(), &out);
        let sb = broadcast_strides(tb.shape(), &out);
        let (da, db) = (ta.data(), tb.data());
        let mut data = vec![T::zero(); out.iter().product()];
        for_each_broadcast(&out, &sa, &sb, |o, pa, pb| data[o] = f(da[pa], db[pb]));
        self.record(name, op, out, data, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&v| v * factor).collect();
        let shape = t.shape().to_vec();
        self.record("scale", Op::Scale(a, factor), shape, data, &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&v| v + c).collect();
        let shape = t.shape().to_vec();
        self.record("add_scalar", Op::AddScalar(a), shape, data, &[a])
    }

    fn unary(&mut self, name: &'static str, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let shape = t.shape().to_vec();
        self.record(name, op, shape, data, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.unary("silu", a, Op::Silu(a), |x| x * sigmoid(x))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    // ---- linear algebra ----------------------------------------------------

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(NumError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = vec![T::zero(); m * n];
        T::gemm(m, k, n, ta.data(), false, tb.data(), false, T::zero(), &mut data);
        self.record("matmul", Op::MatMul(a, b), vec![m, n], data, &[a, b])
    }

    /// Batched `[B, m, k] x [B, k, n] -> [B, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 3
            || tb.rank() != 3
            || ta.shape()[0] != tb.shape()[0]
            || ta.shape()[2] != tb.shape()[1]
        {
            return Err(NumError::ShapeMismatch {
                op: "bmm",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (bs, m, k, n) = (ta.shape()[0], ta.shape()[1], ta.shape()[2], tb.shape()[2]);
        let mut data = vec![T::zero(); bs * m * n];
        for i in 0..bs {
            T::gemm(
                m,
                k,
                n,
                &ta.data()[i * m * k..(i + 1) * m * k],
                false,
                &tb.data()[i * k * n..(i + 1) * k * n],
                false,
                T::zero(),
                &mut data[i * m * n..(i + 1) * m * n],
            );
        }
        self.record("bmm", Op::Bmm(a, b), vec![bs, m, n], data, &[a, b])
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() < 2 {
            return Err(NumError::InvalidArgument {
                op: "transpose_last",
                detail: format!("rank {} < 2", t.rank()),
            });
        }
        let r = t.rank();
        let (rows, cols) = (t.shape()[r - 2], t.shape()[r - 1]);
        let data = transpose_blocks(t.data(), rows, cols);
        let mut shape = t.shape().to_vec();
        shape.swap(r - 2, r - 1);
        self.record("transpose_last", Op::TransposeLast(a), shape, data, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        let requires = self.requires(a);
        Ok(self.push(Op::Reshape(a), t, requires))
    }

    // ---- structural --------------------------------------------------------

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or(NumError::InvalidArgument {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(NumError::InvalidArgument {
                op: "concat",
                detail: format!("axis {axis} out of range for rank {}", base.len()),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(NumError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.record(
            "concat",
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            shape,
            data,
            inputs,
        )
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.rank() || len == 0 || start + len > t.shape()[axis] {
            return Err(NumError::InvalidArgument {
                op: "narrow",
                detail: format!(
                    "range {start}..{} on axis {axis} of shape {:?}",
                    start + len,
                    t.shape()
                ),
            });
        }
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        self.record(
            "narrow",
            Op::Narrow {
                input: a,
                axis,
                start,
            },
            shape,
            data,
            &[a],
        )
    }

    /// Gathers rows (axis 0).
    pub fn index_select(&mut self, a: Var, index: impl Into<Arc<[usize]>>) -> Result<Var> {
        let index = index.into();
        let t = self.value(a);
        if t.rank() == 0 || index.is_empty() {
            return Err(NumError::InvalidArgument {
                op: "index_select",
                detail: "needs a rank >= 1 input and a nonempty index".into(),
            });
        }
        let rows = t.shape()[0];
        let row = t.numel() / rows;
        let mut data = Vec::with_capacity(index.len() * row);
        for &i in index.iter() {
            if i >= rows {
                return Err(NumError::InvalidArgument {
                    op: "index_select",
                    detail: format!("index {i} out of range for {rows} rows"),
                });
            }
            data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = index.len();
        self.record("index_select", Op::IndexSelect { input: a, index }, shape, data, &[a])
    }

    /// Scatter-adds rows of `a` into `rows` output rows (axis 0).
    pub fn index_add(&mut self, a: Var, index: impl Into<Arc<[usize]>>, rows: usize) -> Result<Var> {
        let index = index.into();
        let t = self.value(a);
        if t.rank() == 0 || index.len() != t.shape()[0] || rows == 0 {
            return Err(NumError::InvalidArgument {
                op: "index_add",
                detail: format!(
                    "index length {} vs input shape {:?}, rows {rows}",
                    index.len(),
                    t.shape()
                ),
            });
        }
        let row = t.numel() / t.shape()[0];
        let mut data = vec![T::zero(); rows * row];
        for (e, &i) in index.iter().enumerate() {
            if i >= rows {
                return Err(NumError::InvalidArgument {
                    op: "index_add",
                    detail: format!("index {i} out of range for {rows} rows"),
                });
            }
            let src = &t.data()[e * row..(e + 1) * row];
            for (d, &s) in data[i * row..(i + 1) * row].iter_mut().zip(src) {
                *d = *d + s;
            }
        }
        let mut shape = t.shape().to_vec();
        shape[0] = rows;
        self.record("index_add", Op::IndexAdd { input: a, index }, shape, data, &[a])
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        self.record("sum", Op::Sum(a), vec![], vec![s], &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s: T = t.data().iter().copied().sum();
        let m = s / T::from_usize(t.numel()).unwrap();
        self.record("mean", Op::Mean(a), vec![], vec![m], &[a])
    }

    /// Sum over `axis`; the axis is kept with size 1 when `keepdim`.
    pub fn sum_axis(&mut self, a: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.rank() {
            return Err(NumError::InvalidArgument {
                op: "sum_axis",
                detail: format!("axis {axis} out of range for shape {:?}", t.shape()),
            });
        }
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut data = vec![T::zero(); outer * inner];
        let src = t.data();
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for i in 0..inner {
                    data[o * inner + i] = data[o * inner + i] + src[base + i];
                }
            }
        }
        let mut shape = t.shape().to_vec();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        self.record("sum_axis", Op::SumAxis { input: a, axis }, shape, data, &[a])
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let n = *self.shape(a).get(axis).ok_or(NumError::InvalidArgument {
            op: "mean_axis",
            detail: format!("axis {axis} out of range"),
        })?;
        let s = self.sum_axis(a, axis, keepdim)?;
        self.scale(s, T::one() / T::from_usize(n).unwrap())
    }

    /// Mean over `axis` of the entries whose `mask` is set; masked-out entries
    /// contribute nothing to the value or the gradient. `mask` is broadcast
    /// against `a` and must select at least one entry along `axis` everywhere.
    pub fn masked_mean_axis(&mut self, a: Var, mask: &Tensor<T>, axis: usize) -> Result<Var> {
        let mask_var = self.constant(mask.clone());
        let count = self.sum_axis(mask_var, axis, true)?;
        if self.value(count).data().iter().any(|&c| c <= T::zero()) {
            return Err(NumError::InvalidArgument {
                op: "masked_mean_axis",
                detail: "mask selects no entries along the reduced axis".into(),
            });
        }
        let masked = self.mul(a, mask_var)?;
        let total = self.sum_axis(masked, axis, true)?;
        self.div(total, count)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let k = *t.shape().last().unwrap_or(&1);
        let mut data = t.to_vec();
        for row in data.chunks_mut(k) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z = z + *v;
            }
            for v in row.iter_mut() {
                *v = *v / z;
            }
        }
        let shape = t.shape().to_vec();
        self.record("softmax", Op::Softmax(a), shape, data, &[a])
    }

    // ---- normalization -----------------------------------------------------

    fn normalize(
        &mut self,
        name: &'static str,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
        over_rows: bool,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let t = self.value(x);
        let width = *t.shape().last().unwrap_or(&1);
        if t.rank() == 0
            || self.shape(gamma) != [width]
            || self.shape(beta) != [width]
            || (over_rows && t.rank() != 2)
        {
            return Err(NumError::ShapeMismatch {
                op: name,
                lhs: t.shape().to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let rows = t.numel() / width;
        let src = t.data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        // groups: columns when normalizing over rows (batch), rows otherwise (layer)
        let (groups, len) = if over_rows { (width, rows) } else { (rows, width) };
        let at = |grp: usize, k: usize| if over_rows { k * width + grp } else { grp * width + k };
        let n = T::from_usize(len).unwrap();
        let mut xhat = vec![T::zero(); t.numel()];
        let mut inv_std = vec![T::zero(); groups];
        let mut means = vec![T::zero(); groups];
        let mut vars = vec![T::zero(); groups];
        for grp in 0..groups {
            let mean = (0..len).map(|k| src[at(grp, k)]).sum::<T>() / n;
            let var = (0..len)
                .map(|k| {
                    let d = src[at(grp, k)] - mean;
                    d * d
                })
                .sum::<T>()
                / n;
            let is = T::one() / (var + eps).sqrt();
            for k in 0..len {
                xhat[at(grp, k)] = (src[at(grp, k)] - mean) * is;
            }
            inv_std[grp] = is;
            means[grp] = mean;
            vars[grp] = var;
        }
        let data = xhat
            .iter()
            .enumerate()
            .map(|(i, &xh)| {
                let c = i % width;
                g[c] * xh + b[c]
            })
            .collect();
        let shape = t.shape().to_vec();
        let v = self.record(
            name,
            Op::Norm {
                input: x,
                gamma,
                beta,
                xhat,
                inv_std,
                over_rows,
            },
            shape,
            data,
            &[x, gamma, beta],
        )?;
        Ok((v, means, vars))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        Ok(self.normalize("layer_norm", x, gamma, beta, eps, false)?.0)
    }

    /// Batch normalization of `[n, k]` with statistics over the rows.
    /// Also returns the per-column batch mean and biased variance.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        self.normalize("batch_norm", x, gamma, beta, eps, true)
    }

    /// Euclidean norm along the last axis, keeping it with size 1.
    pub fn l2_norm_last(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() == 0 {
            return Err(NumError::InvalidArgument {
                op: "l2_norm_last",
                detail: "rank 0 input".into(),
            });
        }
        let k = *t.shape().last().unwrap();
        let data = t
            .data()
            .chunks(k)
            .map(|row| row.iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        self.record("l2_norm_last", Op::L2NormLast(a), shape, data, &[a])
    }

    /// Square root of the sum of squares of every entry.
    pub fn frobenius_norm(&mut self, a: Var) -> Result<Var> {
        let s = self
            .value(a)
            .data()
            .iter()
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt();
        self.record("frobenius_norm", Op::FrobeniusNorm(a), vec![], vec![s], &[a])
    }

    // ---- losses ------------------------------------------------------------

    /// Mean binary cross entropy of sigmoid(`logits`) against `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(NumError::ShapeMismatch {
                op: "bce_with_logits",
                lhs: z.shape().to_vec(),
                rhs: targets.shape().to_vec(),
            });
        }
        let total: T = z
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &y)| z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln())
            .sum();
        let loss = total / T::from_usize(z.numel()).unwrap();
        self.record(
            "bce_with_logits",
            Op::BceWithLogits {
                logits,
                targets: Arc::new(targets.to_vec()),
            },
            vec![],
            vec![loss],
            &[logits],
        )
    }

    // ---- multichannel geometry ----------------------------------------------

    /// Masked channel-pair distances between node coordinate sets.
    ///
    /// `coords` is `[n, C, 3]`, `mask` has `n * C` entries. For each edge `e`
    /// the output `[E, C, C]` holds
    /// `mask[dst, p] * mask[src, q] * |X[dst, p] - X[src, q]|`.
    pub fn channel_distances(
        &mut self,
        coords: Var,
        mask: Arc<Vec<bool>>,
        src: impl Into<Arc<[usize]>>,
        dst: impl Into<Arc<[usize]>>,
    ) -> Result<Var> {
        let (src, dst) = (src.into(), dst.into());
        let t = self.value(coords);
        if t.rank() != 3 || t.shape()[2] != 3 || mask.len() != t.shape()[0] * t.shape()[1] {
            return Err(NumError::ShapeMismatch {
                op: "channel_distances",
                lhs: t.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        if src.len() != dst.len() || src.is_empty() {
            return Err(NumError::InvalidArgument {
                op: "channel_distances",
                detail: format!("edge lists of length {} and {}", src.len(), dst.len()),
            });
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        if let Some(&bad) = src.iter().chain(dst.iter()).find(|&&i| i >= n) {
            return Err(NumError::InvalidArgument {
                op: "channel_distances",
                detail: format!("node {bad} out of range for {n} nodes"),
            });
        }
        let x = t.data();
        let edges = src.len();
        let mut data = vec![T::zero(); edges * c * c];
        for (e, (&j, &i)) in src.iter().zip(dst.iter()).enumerate() {
            for p in 0..c {
                if !mask[i * c + p] {
                    continue;
                }
                let xi = &x[(i * c + p) * 3..(i * c + p) * 3 + 3];
                for q in 0..c {
                    if !mask[j * c + q] {
                        continue;
                    }
                    let xj = &x[(j * c + q) * 3..(j * c + q) * 3 + 3];
                    let d = (0..3).map(|k| (xi[k] - xj[k]) * (xi[k] - xj[k])).sum::<T>();
                    data[(e * c + p) * c + q] = d.sqrt();
                }
            }
        }
        self.record(
            "channel_distances",
            Op::ChannelDistances {
                coords,
                mask,
                src,
                dst,
            },
            vec![edges, c, c],
            data,
            &[coords],
        )
    }

    /// Sliding-window average of each row of `[E, C]` down to `counts[e]`
    /// entries (window `C - counts[e] + 1`, stride 1); trailing entries are 0.
    pub fn sliding_channel_mean(&mut self, a: Var, counts: impl Into<Arc<[usize]>>) -> Result<Var> {
        let counts = counts.into();
        let t = self.value(a);
        if t.rank() != 2 || counts.len() != t.shape()[0] {
            return Err(NumError::ShapeMismatch {
                op: "sliding_channel_mean",
                lhs: t.shape().to_vec(),
                rhs: vec![counts.len()],
            });
        }
        let c_max = t.shape()[1];
        if let Some(&bad) = counts.iter().find(|&&c| c == 0 || c > c_max) {
            return Err(NumError::InvalidArgument {
                op: "sliding_channel_mean",
                detail: format!("channel count {bad} outside 1..={c_max}"),
            });
        }
        let src = t.data();
        let mut data = vec![T::zero(); t.numel()];
        for (e, &c) in counts.iter().enumerate() {
            let w = c_max - c + 1;
            let inv = T::one() / T::from_usize(w).unwrap();
            let row = &src[e * c_max..(e + 1) * c_max];
            for p in 0..c {
                data[e * c_max + p] = row[p..p + w].iter().copied().sum::<T>() * inv;
            }
        }
        let shape = t.shape().to_vec();
        self.record(
            "sliding_channel_mean",
            Op::SlidingChannelMean { input: a, counts },
            shape,
            data,
            &[a],
        )
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a one-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_val = self.value(root);
        if root_val.numel() != 1 {
            return Err(NumError::NonScalarRoot {
                shape: root_val.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root.0 + 1];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![T::one()]);
        }
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let nodes: Vec<Option<Tensor<T>>> = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::from_parts(self.nodes[i].value.shape().to_vec(), g)))
            .collect();
        let mut params: Vec<(ParamId, Tensor<T>)> = self
            .bound
            .iter()
            .filter(|(_, v)| self.nodes[v.0].requires_grad)
            .map(|(&id, &v)| {
                let g = nodes.get(v.0).and_then(|g| g.clone()).unwrap_or_else(|| {
                    let shape = self.nodes[v.0].value.shape().to_vec();
                    let n = shape.iter().product();
                    Tensor::from_parts(shape, vec![T::zero(); n])
                });
                (id, g)
            })
            .collect();
        params.sort_by_key(|(id, _)| *id);
        Ok(Gradients { nodes, params })
    }

    /// Backward sweep whose parameter gradients are added into `store`.
    pub fn backward_into(&self, root: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.backward(root)?;
        store.accumulate(&grads)
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let shape = |v: Var| self.nodes[v.0].value.shape();
        // accumulate only into inputs that need it
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                let (a, b) = (*a, *b);
                let out = node.value.shape();
                let sa = broadcast_strides(shape(a), out);
                let sb = broadcast_strides(shape(b), out);
                let (da, db) = (val(a), val(b));
                let kind = match node.op {
                    Op::Add(..) => 0,
                    Op::Sub(..) => 1,
                    Op::Mul(..) => 2,
                    _ => 3,
                };
                acc(a, &mut |ga| {
                    for_each_broadcast(out, &sa, &sb, |o, pa, pb| {
                        ga[pa] = ga[pa]
                            + match kind {
                                0 | 1 => g[o],
                                2 => g[o] * db[pb],
                                _ => g[o] / db[pb],
                            };
                    })
                });
                acc(b, &mut |gb| {
                    for_each_broadcast(out, &sa, &sb, |o, pa, pb| {
                        gb[pb] = gb[pb]
                            + match kind {
                                0 => g[o],
                                1 => -g[o],
                                2 => g[o] * da[pa],
                                _ => -g[o] * da[pa] / (db[pb] * db[pb]),
                            };
                    })
                });
            }
            Op::Scale(a, f) => acc(*a, &mut |ga| {
                for (x, &gi) in ga.iter_mut().zip(g) {
                    *x = *x + gi * *f;
                }
            }),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k, n) = (shape(a)[0], shape(a)[1], shape(b)[1]);
                acc(a, &mut |ga| T::gemm(m, n, k, g, false, val(b), true, T::one(), ga));
                acc(b, &mut |gb| T::gemm(k, m, n, val(a), true, g, false, T::one(), gb));
            }
            Op::Bmm(a, b) => {
                let (a, b) = (*a, *b);
                let (bs, m, k, n) = (shape(a)[0], shape(a)[1], shape(a)[2], shape(b)[2]);
                acc(a, &mut |ga| {
                    for i in 0..bs {
                        T::gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            false,
                            &val(b)[i * k * n..(i + 1) * k * n],
                            true,
                            T::one(),
                            &mut ga[i * m * k..(i + 1) * m * k],
                        );
                    }
                });
                acc(b, &mut |gb| {
                    for i in 0..bs {
                        T::gemm(
                            k,
                            m,
                            n,
                            &val(a)[i * m * k..(i + 1) * m * k],
                            true,
                            &g[i * m * n..(i + 1) * m * n],
                            false,
                            T::one(),
                            &mut gb[i * k * n..(i + 1) * k * n],
                        );
                    }
                });
            }
            Op::TransposeLast(a) => {
                let s = node.value.shape();
                let r = s.len();
                // output is [.., cols, rows]; transposing back restores the input layout
                let back = transpose_blocks(g, s[r - 2], s[r - 1]);
                acc(*a, &mut |ga| add_into(ga, &back));
            }
            Op::Concat { inputs, axis } => {
                let out = node.value.shape();
                let (outer, total, inner) = split_axis(out, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = shape(v)[*axis];
                    let off = offset;
                    acc(v, &mut |gv| {
                        for o in 0..outer {
                            let src = &g[(o * total + off) * inner..(o * total + off + len) * inner];
                            add_into(&mut gv[o * len * inner..(o + 1) * len * inner], src);
                        }
                    });
                    offset += len;
                }
            }
            Op::Narrow { input, axis, start } => {
                let (outer, n, inner) = split_axis(shape(*input), *axis);
                let len = node.value.shape()[*axis];
                acc(*input, &mut |ga| {
                    for o in 0..outer {
                        let dst = (o * n + start) * inner;
                        add_into(
                            &mut ga[dst..dst + len * inner],
                            &g[o * len * inner..(o + 1) * len * inner],
                        );
                    }
                });
            }
            Op::IndexSelect { input, index } => {
                let row = node.value.numel() / index.len();
                acc(*input, &mut |ga| {
                    for (k, &i) in index.iter().enumerate() {
                        add_into(&mut ga[i * row..(i + 1) * row], &g[k * row..(k + 1) * row]);
                    }
                });
            }
            Op::IndexAdd { input, index } => {
                let row = node.value.numel() / node.value.shape()[0];
                acc(*input, &mut |ga| {
                    for (e, &i) in index.iter().enumerate() {
                        add_into(&mut ga[e * row..(e + 1) * row], &g[i * row..(i + 1) * row]);
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x = *x + g[0])),
            Op::Mean(a) => {
                let n = T::from_usize(self.nodes[a.0].value.numel()).unwrap();
                acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x = *x + g[0] / n));
            }
            Op::SumAxis { input, axis } => {
                let (outer, n, inner) = split_axis(shape(*input), *axis);
                acc(*input, &mut |ga| {
                    for o in 0..outer {
                        for k in 0..n {
                            let base = (o * n + k) * inner;
                            add_into(&mut ga[base..base + inner], &g[o * inner..(o + 1) * inner]);
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let k = *node.value.shape().last().unwrap_or(&1);
                acc(*a, &mut |ga| {
                    for ((gr, yr), gar) in g.chunks(k).zip(y.chunks(k)).zip(ga.chunks_mut(k)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((x, &gi), &yi) in gar.iter_mut().zip(gr).zip(yr) {
                            *x = *x + yi * (gi - dot);
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for ((x, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                        *x = *x + gi * yi * (T::one() - yi);
                    }
                });
            }
            Op::Silu(a) => {
                let xs = val(*a);
                acc(*a, &mut |ga| {
                    for ((x, &gi), &xi) in ga.iter_mut().zip(g).zip(xs) {
                        let s = sigmoid(xi);
                        *x = *x + gi * (s + xi * s * (T::one() - s));
                    }
                });
            }
            Op::Relu(a) => {
                let xs = val(*a);
                acc(*a, &mut |ga| {
                    for ((x, &gi), &xi) in ga.iter_mut().zip(g).zip(xs) {
                        if xi > T::zero() {
                            *x = *x + gi;
                        }
                    }
                });
            }
            Op::Norm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                over_rows,
            } => {
                let width = *node.value.shape().last().unwrap();
                let rows = node.value.numel() / width;
                let gm = val(*gamma);
                acc(*gamma, &mut |gg| {
                    for (i, (&gi, &xh)) in g.iter().zip(xhat).enumerate() {
                        gg[i % width] = gg[i % width] + gi * xh;
                    }
                });
                acc(*beta, &mut |gb| {
                    for (i, &gi) in g.iter().enumerate() {
                        gb[i % width] = gb[i % width] + gi;
                    }
                });
                let (groups, len) = if *over_rows { (width, rows) } else { (rows, width) };
                let at = |grp: usize, k: usize| {
                    if *over_rows {
                        k * width + grp
                    } else {
                        grp * width + k
                    }
                };
                let n = T::from_usize(len).unwrap();
                acc(*input, &mut |gx| {
                    for grp in 0..groups {
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for k in 0..len {
                            let i = at(grp, k);
                            let d = g[i] * gm[i % width];
                            sum_d = sum_d + d;
                            sum_dx = sum_dx + d * xhat[i];
                        }
                        for k in 0..len {
                            let i = at(grp, k);
                            let d = g[i] * gm[i % width];
                            gx[i] = gx[i] + inv_std[grp] * (d - sum_d / n - xhat[i] * sum_dx / n);
                        }
                    }
                });
            }
            Op::L2NormLast(a) => {
                let xs = val(*a);
                let k = *shape(*a).last().unwrap();
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for (r, (row, gar)) in xs.chunks(k).zip(ga.chunks_mut(k)).enumerate() {
                        if y[r] > T::zero() {
                            for (x, &xi) in gar.iter_mut().zip(row) {
                                *x = *x + g[r] * xi / y[r];
                            }
                        }
                    }
                });
            }
            Op::FrobeniusNorm(a) => {
                let y = node.value.data()[0];
                let xs = val(*a);
                if y > T::zero() {
                    acc(*a, &mut |ga| {
                        for (x, &xi) in ga.iter_mut().zip(xs) {
                            *x = *x + g[0] * xi / y;
                        }
                    });
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let zs = val(*logits);
                let n = T::from_usize(zs.len()).unwrap();
                acc(*logits, &mut |gz| {
                    for ((x, &z), &t) in gz.iter_mut().zip(zs).zip(targets.iter()) {
                        *x = *x + g[0] * (sigmoid(z) - t) / n;
                    }
                });
            }
            Op::ChannelDistances {
                coords,
                mask,
                src,
                dst,
            } => {
                let x = val(*coords);
                let c = shape(*coords)[1];
                let d = node.value.data();
                acc(*coords, &mut |gx| {
                    for (e, (&j, &i)) in src.iter().zip(dst.iter()).enumerate() {
                        for p in 0..c {
                            if !mask[i * c + p] {
                                continue;
                            }
                            for q in 0..c {
                                let o = (e * c + p) * c + q;
                                if !mask[j * c + q] || d[o] <= T::zero() {
                                    continue;
                                }
                                let scale = g[o] / d[o];
                                for k in 0..3 {
                                    let diff = x[(i * c + p) * 3 + k] - x[(j * c + q) * 3 + k];
                                    gx[(i * c + p) * 3 + k] = gx[(i * c + p) * 3 + k] + scale * diff;
                                    gx[(j * c + q) * 3 + k] = gx[(j * c + q) * 3 + k] - scale * diff;
                                }
                            }
                        }
                    }
                });
            }
            Op::SlidingChannelMean { input, counts } => {
                let c_max = shape(*input)[1];
                acc(*input, &mut |ga| {
                    for (e, &c) in counts.iter().enumerate() {
                        let w = c_max - c + 1;
                        let inv = T::one() / T::from_usize(w).unwrap();
                        for p in 0..c {
                            let gp = g[e * c_max + p] * inv;
                            for k in p..p + w {
                                ga[e * c_max + k] = ga[e * c_max + k] + gp;
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Transposes each trailing `rows x cols` block of a row-major buffer.
fn transpose_blocks<T: Scalar>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let block = rows * cols;
    let mut out = vec![T::zero(); data.len()];
    for (src, dst) in data.chunks(block).zip(out.chunks_mut(block)) {
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
    out
}
