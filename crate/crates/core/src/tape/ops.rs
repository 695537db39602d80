//! Forward primitives and their vector-Jacobian products.

use rand::Rng;

use super::kernels::{axis_layout, gemm_nn, gemm_nt, gemm_tn};
use super::{Node, Var};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

/// Variance floor inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

pub(crate) enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddTiled {
        x: usize,
        bias: usize,
    },
    MatMul {
        a: usize,
        b: usize,
    },
    Gelu(usize),
    Sigmoid(usize),
    Softmax {
        x: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        axis: usize,
        normed: Vec<T>,
        inv_std: Vec<T>,
    },
    Dropout {
        x: usize,
        mask: Vec<T>,
    },
    ConcatRows(Vec<usize>),
    SliceRows {
        x: usize,
        start: usize,
    },
    BlockScores {
        q: usize,
        k: usize,
        block: usize,
        scale: T,
    },
    BlockMix {
        v: usize,
        alpha: usize,
        block: usize,
    },
    MixBlocks {
        e: usize,
        weights: usize,
    },
    GateMix {
        rho: usize,
        a: usize,
        b: usize,
    },
    Sum(usize),
    Mean(usize),
    Mse {
        pred: usize,
        target: Tensor<T>,
    },
    Mae {
        pred: usize,
        target: Tensor<T>,
    },
}

impl<T> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Gelu(x)
            | Op::Sigmoid(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Softmax { x, .. }
            | Op::Dropout { x, .. }
            | Op::SliceRows { x, .. }
            | Op::Mse { pred: x, .. }
            | Op::Mae { pred: x, .. } => vec![*x],
            Op::AddTiled { x, bias } => vec![*x, *bias],
            Op::MatMul { a, b } => vec![*a, *b],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::ConcatRows(ids) => ids.clone(),
            Op::BlockScores { q, k, .. } => vec![*q, *k],
            Op::BlockMix { v, alpha, .. } => vec![*v, *alpha],
            Op::MixBlocks { e, weights } => vec![*e, *weights],
            Op::GateMix { rho, a, b } => vec![*rho, *a, *b],
        }
    }

    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddTiled { .. } => "add_tiled",
            Op::MatMul { .. } => "matmul",
            Op::Gelu(_) => "gelu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout { .. } => "dropout",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::BlockScores { .. } => "block_scores",
            Op::BlockMix { .. } => "block_mix",
            Op::MixBlocks { .. } => "mix_blocks",
            Op::GateMix { .. } => "gate_mix",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Mse { .. } => "mse",
            Op::Mae { .. } => "mae",
        }
    }
}

fn mismatch(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn invalid(op: &'static str, reason: impl Into<String>) -> TensorError {
    TensorError::InvalidParameter {
        op,
        reason: reason.into(),
    }
}

fn require_rank2(op: &'static str, t: &Tensor<impl Scalar>) -> Result<(usize, usize), TensorError> {
    if t.rank() != 2 {
        return Err(invalid(op, format!("expected a matrix, got shape {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

#[inline]
fn gaussian_cdf<T: Scalar>(x: T) -> T {
    T::of(0.5) * (T::one() + (x * T::FRAC_1_SQRT_2()).erf())
}

#[inline]
fn gaussian_pdf<T: Scalar>(x: T) -> T {
    T::of(0.398_942_280_401_432_7) * (-(x * x) * T::of(0.5)).exp()
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Exact GELU, `x·Φ(x)`.
#[inline]
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    x * gaussian_cdf(x)
}

impl<'t, T: Scalar> Var<'t, T> {
    fn same_tape(&self, other: &Var<'t, T>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "variables belong to different tapes"
        );
    }

    fn zip_same_shape(
        self,
        other: Var<'t, T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>, TensorError> {
        self.same_tape(&other);
        let nodes = self.tape.nodes();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        if a.shape() != b.shape() {
            return Err(mismatch(op, a, b));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape(), data)
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        let out = self.zip_same_shape(other, "add", |a, b| a + b)?;
        Ok(self.tape.push(out, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        let out = self.zip_same_shape(other, "sub", |a, b| a - b)?;
        Ok(self.tape.push(out, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        let out = self.zip_same_shape(other, "mul", |a, b| a * b)?;
        Ok(self.tape.push(out, Op::Mul(self.id, other.id)))
    }

    pub fn scale(self, s: T) -> Var<'t, T> {
        let out = self.value().map(|x| x * s);
        self.tape.push(out, Op::Scale(self.id, s))
    }

    /// Broadcast add of `bias[r×k]` onto `self[r×c]`, column `j` receiving
    /// bias column `j mod k`. `k = 1` is an ordinary bias vector.
    pub fn add_tiled(self, bias: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&bias);
        let out = {
            let nodes = self.tape.nodes();
            let (x, b) = (&nodes[self.id].value, &nodes[bias.id].value);
            let (r, c) = require_rank2("add_tiled", x)?;
            let k = if b.rank() == 1 { 1 } else { b.cols() };
            if b.rows() != r || b.len() != r * k || c % k != 0 {
                return Err(mismatch("add_tiled", x, b));
            }
            let mut data = x.data().to_vec();
            for i in 0..r {
                for j in 0..c {
                    data[i * c + j] += b.data()[i * k + j % k];
                }
            }
            Tensor::new(&[r, c], data)?
        };
        Ok(self.tape.push(
            out,
            Op::AddTiled {
                x: self.id,
                bias: bias.id,
            },
        ))
    }

    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&other);
        let out = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
                return Err(mismatch("matmul", a, b));
            }
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            let mut data = vec![T::zero(); m * n];
            gemm_nn(a.data(), b.data(), &mut data, m, k, n);
            Tensor::new(&[m, n], data)?
        };
        Ok(self.tape.push(
            out,
            Op::MatMul {
                a: self.id,
                b: other.id,
            },
        ))
    }

    pub fn gelu(self) -> Var<'t, T> {
        let out = self.value().map(gelu_scalar);
        self.tape.push(out, Op::Gelu(self.id))
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let out = self.value().map(sigmoid);
        self.tape.push(out, Op::Sigmoid(self.id))
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>, TensorError> {
        let out = {
            let x = self.value();
            if axis >= x.rank() {
                return Err(invalid("softmax", format!("axis {axis} for shape {:?}", x.shape())));
            }
            let (outer, len, inner) = axis_layout(x.shape(), axis);
            let src = x.data();
            let mut data = vec![T::zero(); src.len()];
            for o in 0..outer {
                for j in 0..inner {
                    let at = |i: usize| (o * len + i) * inner + j;
                    let max = (0..len).fold(T::neg_infinity(), |m, i| m.max(src[at(i)]));
                    let mut total = T::zero();
                    for i in 0..len {
                        let e = (src[at(i)] - max).exp();
                        data[at(i)] = e;
                        total += e;
                    }
                    for i in 0..len {
                        data[at(i)] /= total;
                    }
                }
            }
            Tensor::new(x.shape(), data)?
        };
        Ok(self.tape.push(out, Op::Softmax { x: self.id, axis }))
    }

    /// Normalizes every slice along `axis` to zero mean and unit variance
    /// (biased variance plus [`LAYER_NORM_EPS`]), then applies the per-position
    /// affine `gain`, `bias` (each holding `shape[axis]` values).
    pub fn layer_norm(
        self,
        gain: Var<'t, T>,
        bias: Var<'t, T>,
        axis: usize,
    ) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&gain);
        self.same_tape(&bias);
        let (out, normed, inv_std) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id].value;
            let (g, b) = (&nodes[gain.id].value, &nodes[bias.id].value);
            if axis >= x.rank() || x.shape()[axis] < 2 {
                return Err(invalid(
                    "layer_norm",
                    format!("axis {axis} of {:?} needs extent >= 2", x.shape()),
                ));
            }
            let (outer, len, inner) = axis_layout(x.shape(), axis);
            if g.len() != len {
                return Err(mismatch("layer_norm", x, g));
            }
            if b.len() != len {
                return Err(mismatch("layer_norm", x, b));
            }
            let src = x.data();
            let n = T::of(len as f64);
            let eps = T::of(LAYER_NORM_EPS);
            let mut normed = vec![T::zero(); src.len()];
            let mut out = vec![T::zero(); src.len()];
            let mut inv_std = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                for j in 0..inner {
                    let at = |i: usize| (o * len + i) * inner + j;
                    let mean = (0..len).fold(T::zero(), |s, i| s + src[at(i)]) / n;
                    let var = (0..len).fold(T::zero(), |s, i| {
                        let d = src[at(i)] - mean;
                        s + d * d
                    }) / n;
                    let r = T::one() / (var + eps).sqrt();
                    inv_std.push(r);
                    for i in 0..len {
                        let xh = (src[at(i)] - mean) * r;
                        normed[at(i)] = xh;
                        out[at(i)] = xh * g.data()[i] + b.data()[i];
                    }
                }
            }
            (Tensor::new(x.shape(), out)?, normed, inv_std)
        };
        Ok(self.tape.push(
            out,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                axis,
                normed,
                inv_std,
            },
        ))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`; otherwise
    /// the input is returned unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        self,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var<'t, T>, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(self);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let (out, mask) = {
            let x = self.value();
            let mask: Vec<T> = (0..x.len())
                .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
                .collect();
            let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            (Tensor::new(x.shape(), data)?, mask)
        };
        Ok(self.tape.push(out, Op::Dropout { x: self.id, mask }))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t, T>, TensorError> {
        let out = {
            let x = self.value();
            let (r, c) = require_rank2("slice_rows", &x)?;
            if len == 0 || start + len > r {
                return Err(invalid("slice_rows", format!("rows {start}..{} of {r}", start + len)));
            }
            Tensor::new(&[len, c], x.data()[start * c..(start + len) * c].to_vec())?
        };
        Ok(self.tape.push(
            out,
            Op::SliceRows {
                x: self.id,
                start,
            },
        ))
    }

    /// Per-block dot-product scores between token columns.
    ///
    /// `self` (queries) and `keys` are `z × cols` with `cols = blocks·block`.
    /// The result is `block × cols`: entry `(s, b·block + t)` is
    /// `scale·⟨q[:, b·block+t], k[:, b·block+s]⟩`, the score of source `s` for
    /// target `t` within block `b`.
    pub fn block_scores(self, keys: Var<'t, T>, block: usize, scale: T) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&keys);
        let out = {
            let nodes = self.tape.nodes();
            let (q, k) = (&nodes[self.id].value, &nodes[keys.id].value);
            let (z, cols) = require_rank2("block_scores", q)?;
            if q.shape() != k.shape() {
                return Err(mismatch("block_scores", q, k));
            }
            if block == 0 || cols % block != 0 {
                return Err(invalid("block_scores", format!("{cols} columns not divisible by block {block}")));
            }
            let mut data = vec![T::zero(); block * cols];
            let (qd, kd) = (q.data(), k.data());
            for d in 0..z {
                let qrow = &qd[d * cols..(d + 1) * cols];
                let krow = &kd[d * cols..(d + 1) * cols];
                for base in (0..cols).step_by(block) {
                    for t in 0..block {
                        let qv = qrow[base + t] * scale;
                        for s in 0..block {
                            data[s * cols + base + t] += qv * krow[base + s];
                        }
                    }
                }
            }
            Tensor::new(&[block, cols], data)?
        };
        Ok(self.tape.push(
            out,
            Op::BlockScores {
                q: self.id,
                k: keys.id,
                block,
                scale,
            },
        ))
    }

    /// Per-block weighted mixing of value columns: with `self` (values)
    /// `z × cols` and `alpha` `block × cols`, output column `b·block + t` is
    /// `Σ_s alpha[s, b·block+t] · v[:, b·block+s]`.
    pub fn block_mix(self, alpha: Var<'t, T>, block: usize) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&alpha);
        let out = {
            let nodes = self.tape.nodes();
            let (v, a) = (&nodes[self.id].value, &nodes[alpha.id].value);
            let (z, cols) = require_rank2("block_mix", v)?;
            if a.shape() != [block, cols] || cols % block != 0 {
                return Err(mismatch("block_mix", v, a));
            }
            let mut data = vec![T::zero(); z * cols];
            let (vd, ad) = (v.data(), a.data());
            for d in 0..z {
                let vrow = &vd[d * cols..(d + 1) * cols];
                let orow = &mut data[d * cols..(d + 1) * cols];
                for base in (0..cols).step_by(block) {
                    for t in 0..block {
                        let mut acc = T::zero();
                        for s in 0..block {
                            acc += ad[s * cols + base + t] * vrow[base + s];
                        }
                        orow[base + t] = acc;
                    }
                }
            }
            Tensor::new(&[z, cols], data)?
        };
        Ok(self.tape.push(
            out,
            Op::BlockMix {
                v: self.id,
                alpha: alpha.id,
                block,
            },
        ))
    }

    /// Weighted sum of equal-width column blocks: `self` is `r × (nb·c)`,
    /// `weights` holds `nb` values, the result is `Σ_m w[m]·block_m` (`r × c`).
    pub fn mix_blocks(self, weights: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&weights);
        let out = {
            let nodes = self.tape.nodes();
            let (e, w) = (&nodes[self.id].value, &nodes[weights.id].value);
            let (r, total) = require_rank2("mix_blocks", e)?;
            let nb = w.len();
            if total % nb != 0 {
                return Err(mismatch("mix_blocks", e, w));
            }
            let c = total / nb;
            let mut data = vec![T::zero(); r * c];
            for i in 0..r {
                for (m, &wm) in w.data().iter().enumerate() {
                    let src = &e.data()[i * total + m * c..i * total + (m + 1) * c];
                    for (o, &x) in data[i * c..(i + 1) * c].iter_mut().zip(src) {
                        *o += wm * x;
                    }
                }
            }
            Tensor::new(&[r, c], data)?
        };
        Ok(self.tape.push(
            out,
            Op::MixBlocks {
                e: self.id,
                weights: weights.id,
            },
        ))
    }

    /// Gated convex combination `rho⊙a + (1-rho)⊙b`, with `self` as `rho`.
    ///
    /// Evaluated as `b + rho⊙(a-b)` and clamped to `[min(a,b), max(a,b)]`,
    /// which removes rounding excursions outside the convex hull; the result
    /// equals `a` exactly when `a == b`.
    pub fn gate_mix(self, a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&a);
        self.same_tape(&b);
        let out = {
            let nodes = self.tape.nodes();
            let (rho, av, bv) = (&nodes[self.id].value, &nodes[a.id].value, &nodes[b.id].value);
            if rho.shape() != av.shape() {
                return Err(mismatch("gate_mix", rho, av));
            }
            if av.shape() != bv.shape() {
                return Err(mismatch("gate_mix", av, bv));
            }
            let data = rho
                .data()
                .iter()
                .zip(av.data().iter().zip(bv.data()))
                .map(|(&r, (&x, &y))| (y + r * (x - y)).max(x.min(y)).min(x.max(y)))
                .collect();
            Tensor::new(av.shape(), data)?
        };
        Ok(self.tape.push(
            out,
            Op::GateMix {
                rho: self.id,
                a: a.id,
                b: b.id,
            },
        ))
    }

    pub fn sum(self) -> Var<'t, T> {
        let s = self.value().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t, T> {
        let s = {
            let x = self.value();
            x.sum() / T::of(x.len() as f64)
        };
        self.tape.push(Tensor::scalar(s), Op::Mean(self.id))
    }

    /// Mean squared error against a constant target.
    pub fn mse(self, target: Tensor<T>) -> Result<Var<'t, T>, TensorError> {
        let s = {
            let p = self.value();
            if p.shape() != target.shape() {
                return Err(mismatch("mse", &p, &target));
            }
            let total = p
                .data()
                .iter()
                .zip(target.data())
                .fold(T::zero(), |s, (&a, &b)| s + (a - b) * (a - b));
            total / T::of(p.len() as f64)
        };
        Ok(self.tape.push(
            Tensor::scalar(s),
            Op::Mse {
                pred: self.id,
                target,
            },
        ))
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Mean absolute error against a constant target. The derivative at a
    /// zero residual is taken as 0.
    pub fn mae(self, target: Tensor<T>) -> Result<Var<'t, T>, TensorError> {
        let s = {
            let p = self.value();
            if p.shape() != target.shape() {
                return Err(mismatch("mae", &p, &target));
            }
            let total = p
                .data()
                .iter()
                .zip(target.data())
                .fold(T::zero(), |s, (&a, &b)| s + (a - b).abs());
            total / T::of(p.len() as f64)
        };
        Ok(self.tape.push(
            Tensor::scalar(s),
            Op::Mae {
                pred: self.id,
                target,
            },
        ))
    }
}

/// Stacks matrices with equal column counts vertically.
pub fn concat_rows<'t, T: Scalar>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>, TensorError> {
    let first = parts
        .first()
        .ok_or_else(|| invalid("concat_rows", "no inputs"))?;
    let out = {
        let nodes = first.tape.nodes();
        let head = &nodes[first.id].value;
        let (_, c) = require_rank2("concat_rows", head)?;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            first.same_tape(p);
            let t = &nodes[p.id].value;
            if t.rank() != 2 || t.cols() != c {
                return Err(mismatch("concat_rows", head, t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        Tensor::new(&[rows, c], data)?
    };
    Ok(first
        .tape
        .push(out, Op::ConcatRows(parts.iter().map(|p| p.id).collect())))
}

struct Accumulator<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Tensor<T>>],
}

impl<'a, T: Scalar> Accumulator<'a, T> {
    /// Gradient buffer of node `id`, or `None` if it is not tracked.
    fn slot(&mut self, id: usize) -> Option<&mut [T]> {
        let node = &self.nodes[id];
        if !node.requires_grad {
            return None;
        }
        Some(
            self.grads[id]
                .get_or_insert_with(|| Tensor::zeros(node.value.shape()))
                .data_mut(),
        )
    }

    fn add_scaled(&mut self, id: usize, g: &[T], s: T) {
        if let Some(dst) = self.slot(id) {
            for (d, &x) in dst.iter_mut().zip(g) {
                *d += s * x;
            }
        }
    }

    fn add_with(&mut self, id: usize, f: impl Fn(usize) -> T) {
        if let Some(dst) = self.slot(id) {
            for (i, d) in dst.iter_mut().enumerate() {
                *d += f(i);
            }
        }
    }

    fn value(&self, id: usize) -> &'a Tensor<T> {
        &self.nodes[id].value
    }
}

pub(crate) fn backward_node<T: Scalar>(
    nodes: &[Node<T>],
    id: usize,
    g: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let node = &nodes[id];
    let gd = g.data();
    let mut acc = Accumulator { nodes, grads };
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc.add_scaled(*a, gd, T::one());
            acc.add_scaled(*b, gd, T::one());
        }
        Op::Sub(a, b) => {
            acc.add_scaled(*a, gd, T::one());
            acc.add_scaled(*b, gd, -T::one());
        }
        Op::Mul(a, b) => {
            let (av, bv) = (acc.value(*a).data(), acc.value(*b).data());
            acc.add_with(*a, |i| gd[i] * bv[i]);
            acc.add_with(*b, |i| gd[i] * av[i]);
        }
        Op::Scale(x, s) => acc.add_scaled(*x, gd, *s),
        Op::AddTiled { x, bias } => {
            acc.add_scaled(*x, gd, T::one());
            let c = node.value.cols();
            let bshape = acc.value(*bias).shape().to_vec();
            let k = if bshape.len() == 1 { 1 } else { bshape[1] };
            if let Some(dst) = acc.slot(*bias) {
                for (idx, &gv) in gd.iter().enumerate() {
                    let (i, j) = (idx / c, idx % c);
                    dst[i * k + j % k] += gv;
                }
            }
        }
        Op::MatMul { a, b } => {
            let (at, bt) = (acc.value(*a), acc.value(*b));
            let (m, k, n) = (at.rows(), at.cols(), bt.cols());
            let (ad, bd) = (at.data(), bt.data());
            if let Some(dst) = acc.slot(*a) {
                gemm_nt(gd, bd, dst, m, n, k);
            }
            if let Some(dst) = acc.slot(*b) {
                gemm_tn(ad, gd, dst, k, m, n);
            }
        }
        Op::Gelu(x) => {
            let xv = acc.value(*x).data();
            acc.add_with(*x, |i| gd[i] * (gaussian_cdf(xv[i]) + xv[i] * gaussian_pdf(xv[i])));
        }
        Op::Sigmoid(x) => {
            let y = node.value.data();
            acc.add_with(*x, |i| gd[i] * y[i] * (T::one() - y[i]));
        }
        Op::Softmax { x, axis } => {
            let y = node.value.data();
            let (outer, len, inner) = axis_layout(node.value.shape(), *axis);
            if let Some(dst) = acc.slot(*x) {
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |i: usize| (o * len + i) * inner + j;
                        let dot = (0..len).fold(T::zero(), |s, i| s + gd[at(i)] * y[at(i)]);
                        for i in 0..len {
                            dst[at(i)] += y[at(i)] * (gd[at(i)] - dot);
                        }
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            axis,
            normed,
            inv_std,
        } => {
            let (outer, len, inner) = axis_layout(node.value.shape(), *axis);
            let gain_v = acc.value(*gain).data();
            let n = T::of(len as f64);
            if let Some(dst) = acc.slot(*x) {
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |i: usize| (o * len + i) * inner + j;
                        let r = inv_std[o * inner + j];
                        let (mut s1, mut s2) = (T::zero(), T::zero());
                        for i in 0..len {
                            let dxh = gd[at(i)] * gain_v[i];
                            s1 += dxh;
                            s2 += dxh * normed[at(i)];
                        }
                        for i in 0..len {
                            let dxh = gd[at(i)] * gain_v[i];
                            dst[at(i)] += r / n * (n * dxh - s1 - normed[at(i)] * s2);
                        }
                    }
                }
            }
            let per_position = |weights: Option<&[T]>| {
                let mut out = vec![T::zero(); len];
                for (idx, &gv) in gd.iter().enumerate() {
                    let i = (idx / inner) % len;
                    out[i] += weights.map_or(gv, |w| gv * w[idx]);
                }
                out
            };
            let dgain = per_position(Some(normed));
            let dbias = per_position(None);
            acc.add_scaled(*gain, &dgain, T::one());
            acc.add_scaled(*bias, &dbias, T::one());
        }
        Op::Dropout { x, mask } => acc.add_with(*x, |i| gd[i] * mask[i]),
        Op::ConcatRows(ids) => {
            let mut offset = 0;
            for &p in ids {
                let n = acc.value(p).len();
                acc.add_scaled(p, &gd[offset..offset + n], T::one());
                offset += n;
            }
        }
        Op::SliceRows { x, start } => {
            let c = node.value.cols();
            let n = node.value.len();
            if let Some(dst) = acc.slot(*x) {
                for (d, &gv) in dst[start * c..start * c + n].iter_mut().zip(gd) {
                    *d += gv;
                }
            }
        }
        Op::BlockScores { q, k, block, scale } => {
            let (qt, kt) = (acc.value(*q), acc.value(*k));
            let (z, cols) = (qt.rows(), qt.cols());
            let (qd, kd) = (qt.data(), kt.data());
            let block = *block;
            if let Some(dst) = acc.slot(*q) {
                for d in 0..z {
                    for base in (0..cols).step_by(block) {
                        for t in 0..block {
                            let mut s_acc = T::zero();
                            for s in 0..block {
                                s_acc += gd[s * cols + base + t] * kd[d * cols + base + s];
                            }
                            dst[d * cols + base + t] += *scale * s_acc;
                        }
                    }
                }
            }
            if let Some(dst) = acc.slot(*k) {
                for d in 0..z {
                    for base in (0..cols).step_by(block) {
                        for s in 0..block {
                            let mut t_acc = T::zero();
                            for t in 0..block {
                                t_acc += gd[s * cols + base + t] * qd[d * cols + base + t];
                            }
                            dst[d * cols + base + s] += *scale * t_acc;
                        }
                    }
                }
            }
        }
        Op::BlockMix { v, alpha, block } => {
            let (vt, at) = (acc.value(*v), acc.value(*alpha));
            let (z, cols) = (vt.rows(), vt.cols());
            let (vd, ad) = (vt.data(), at.data());
            let block = *block;
            if let Some(dst) = acc.slot(*v) {
                for d in 0..z {
                    for base in (0..cols).step_by(block) {
                        for s in 0..block {
                            let mut t_acc = T::zero();
                            for t in 0..block {
                                t_acc += ad[s * cols + base + t] * gd[d * cols + base + t];
                            }
                            dst[d * cols + base + s] += t_acc;
                        }
                    }
                }
            }
            if let Some(dst) = acc.slot(*alpha) {
                for d in 0..z {
                    for base in (0..cols).step_by(block) {
                        for t in 0..block {
                            let gv = gd[d * cols + base + t];
                            for s in 0..block {
                                dst[s * cols + base + t] += gv * vd[d * cols + base + s];
                            }
                        }
                    }
                }
            }
        }
        Op::MixBlocks { e, weights } => {
            let (et, wt) = (acc.value(*e), acc.value(*weights));
            let (r, total) = (et.rows(), et.cols());
            let nb = wt.len();
            let c = total / nb;
            let (ed, wd) = (et.data(), wt.data());
            acc.add_with(*e, |idx| {
                let (i, col) = (idx / total, idx % total);
                wd[col / c] * gd[i * c + col % c]
            });
            acc.add_with(*weights, |m| {
                let mut s = T::zero();
                for i in 0..r {
                    for j in 0..c {
                        s += gd[i * c + j] * ed[i * total + m * c + j];
                    }
                }
                s
            });
        }
        Op::GateMix { rho, a, b } => {
            let (rv, av, bv) = (acc.value(*rho).data(), acc.value(*a).data(), acc.value(*b).data());
            acc.add_with(*rho, |i| gd[i] * (av[i] - bv[i]));
            acc.add_with(*a, |i| gd[i] * rv[i]);
            acc.add_with(*b, |i| gd[i] * (T::one() - rv[i]));
        }
        Op::Sum(x) => {
            let g0 = gd[0];
            acc.add_with(*x, |_| g0);
        }
        Op::Mean(x) => {
            let g0 = gd[0] / T::of(acc.value(*x).len() as f64);
            acc.add_with(*x, |_| g0);
        }
        Op::Mse { pred, target } => {
            let p = acc.value(*pred).data();
            let t = target.data();
            let s = T::of(2.0) * gd[0] / T::of(p.len() as f64);
            acc.add_with(*pred, |i| s * (p[i] - t[i]));
        }
        Op::Mae { pred, target } => {
            let p = acc.value(*pred).data();
            let t = target.data();
            let s = gd[0] / T::of(p.len() as f64);
            acc.add_with(*pred, |i| {
                let r = p[i] - t[i];
                if r > T::zero() {
                    s
                } else if r < T::zero() {
                    -s
                } else {
                    T::zero()
                }
            });
        }
    }
}
