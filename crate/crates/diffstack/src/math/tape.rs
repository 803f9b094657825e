//! Reverse-mode gradient tape.
//!
//! A [`Tape`] records primitive vector operations during a forward pass and
//! replays them in reverse to accumulate gradients into a [`ParamStore`].
//! Node values live in one flat arena so a training step performs no
//! per-node allocation after warm-up; `clear()` resets the tape between
//! BPTT windows without freeing the buffers.
//!
//! All five stack-augmented cell families share this single differentiation
//! path, which is verified against central finite differences in the test
//! suites.

use super::matrix::Matrix;
use crate::{Error, Result};
use std::collections::HashMap;

/// Handle to a value recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node(u32);

/// Handle to a named parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) u32);

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Matrix,
    grad: Vec<f64>,
}

/// Named, shaped parameter tensors with gradient accumulators.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Matrix) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter {name}"
        );
        let id = ParamId(self.params.len() as u32);
        let n = value.data().len();
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: vec![0.0; n],
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0 as usize].name
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0 as usize].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0 as usize].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0 as usize].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0 as usize].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len() as u32).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    /// First parameter holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.params
            .iter()
            .find(|p| !p.value.is_finite())
            .map(|p| p.name.as_str())
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const,
    /// Column `col` of a parameter matrix (one-hot embedding lookup).
    Embed { pid: ParamId, col: u32 },
    /// Parameter matrix times node vector.
    MatVec { pid: ParamId, x: Node },
    /// Node plus parameter vector (bias).
    AddParam { x: Node, pid: ParamId },
    Add { a: Node, b: Node },
    Sub { a: Node, b: Node },
    /// Elementwise product.
    Mul { a: Node, b: Node },
    Scale { x: Node, k: f64 },
    /// 1 - x, elementwise.
    OneMinus { x: Node },
    ScaledTanh { x: Node },
    Logistic { x: Node },
    Softmax { x: Node },
    /// Length-1 output: cross-entropy of softmax(logits) against `target`.
    CeLogits { logits: Node, target: u32 },
    /// Length-1 output: 0.5 * (pred[idx] - target)^2.
    HalfSqErr { pred: Node, idx: u32, target: f64 },
    /// Continuous stack transition; see `stack` module for semantics.
    StackStep {
        s: Node,
        a: Node,
        v: Node,
        noop_identity: bool,
    },
    /// Top-k window of a stack vector, zero-padded past depth.
    ReadTopK { s: Node, k: u32 },
}

struct Span {
    off: u32,
    len: u32,
}

/// Records a forward pass; `backward` accumulates dLoss/dParam.
#[derive(Default)]
pub struct Tape {
    ops: Vec<Op>,
    spans: Vec<Span>,
    vals: Vec<f64>,
    grads: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Forget all recorded nodes but keep the buffers.
    pub fn clear(&mut self) {
        self.ops.clear();
        self.spans.clear();
        self.vals.clear();
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, n: Node) -> &[f64] {
        let s = &self.spans[n.0 as usize];
        &self.vals[s.off as usize..(s.off + s.len) as usize]
    }

    pub fn scalar(&self, n: Node) -> f64 {
        let v = self.value(n);
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    pub fn check_finite(&self, n: Node, what: &str) -> Result<()> {
        if self.value(n).iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    fn push(&mut self, op: Op, value_len: usize) -> Node {
        let off = self.vals.len() as u32;
        self.vals.resize(self.vals.len() + value_len, 0.0);
        self.ops.push(op);
        self.spans.push(Span {
            off,
            len: value_len as u32,
        });
        Node(self.ops.len() as u32 - 1)
    }

    fn out_mut(&mut self, n: Node) -> &mut [f64] {
        let s = &self.spans[n.0 as usize];
        &mut self.vals[s.off as usize..(s.off + s.len) as usize]
    }

    fn val_range(&self, n: Node) -> (usize, usize) {
        let s = &self.spans[n.0 as usize];
        (s.off as usize, s.len as usize)
    }

    // ---- node constructors -------------------------------------------------

    pub fn constant(&mut self, v: &[f64]) -> Node {
        let n = self.push(Op::Const, v.len());
        self.out_mut(n).copy_from_slice(v);
        n
    }

    pub fn zeros(&mut self, len: usize) -> Node {
        self.push(Op::Const, len)
    }

    /// Column `col` of the parameter matrix (x one-hot at `col`).
    pub fn embed(&mut self, store: &ParamStore, pid: ParamId, col: usize) -> Node {
        let m = store.value(pid);
        assert!(col < m.cols(), "embed column out of range");
        let rows = m.rows();
        let n = self.push(
            Op::Embed {
                pid,
                col: col as u32,
            },
            rows,
        );
        let (off, _) = self.val_range(n);
        for r in 0..rows {
            self.vals[off + r] = store.value(pid).get(r, col);
        }
        n
    }

    pub fn matvec(&mut self, store: &ParamStore, pid: ParamId, x: Node) -> Node {
        let m = store.value(pid);
        let (xo, xl) = self.val_range(x);
        assert_eq!(xl, m.cols(), "matvec shape mismatch for {}", store.name(pid));
        let rows = m.rows();
        let cols = m.cols();
        let n = self.push(Op::MatVec { pid, x }, rows);
        let (off, _) = self.val_range(n);
        let data = store.value(pid).data();
        for r in 0..rows {
            let mut acc = 0.0;
            let row = &data[r * cols..(r + 1) * cols];
            for c in 0..cols {
                acc += row[c] * self.vals[xo + c];
            }
            self.vals[off + r] = acc;
        }
        n
    }

    pub fn add_param(&mut self, store: &ParamStore, pid: ParamId, x: Node) -> Node {
        let b = store.value(pid);
        let (xo, xl) = self.val_range(x);
        assert_eq!(
            xl,
            b.data().len(),
            "bias shape mismatch for {}",
            store.name(pid)
        );
        let n = self.push(Op::AddParam { x, pid }, xl);
        let (off, _) = self.val_range(n);
        for i in 0..xl {
            self.vals[off + i] = self.vals[xo + i] + store.value(pid).data()[i];
        }
        n
    }

    fn binary(&mut self, op: Op, a: Node, b: Node, f: impl Fn(f64, f64) -> f64) -> Node {
        let (ao, al) = self.val_range(a);
        let (bo, bl) = self.val_range(b);
        assert_eq!(al, bl, "elementwise op shape mismatch");
        let n = self.push(op, al);
        let (off, _) = self.val_range(n);
        for i in 0..al {
            self.vals[off + i] = f(self.vals[ao + i], self.vals[bo + i]);
        }
        n
    }

    pub fn add(&mut self, a: Node, b: Node) -> Node {
        self.binary(Op::Add { a, b }, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Node, b: Node) -> Node {
        self.binary(Op::Sub { a, b }, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Node, b: Node) -> Node {
        self.binary(Op::Mul { a, b }, a, b, |x, y| x * y)
    }

    fn unary(&mut self, op: Op, x: Node, f: impl Fn(f64) -> f64) -> Node {
        let (xo, xl) = self.val_range(x);
        let n = self.push(op, xl);
        let (off, _) = self.val_range(n);
        for i in 0..xl {
            self.vals[off + i] = f(self.vals[xo + i]);
        }
        n
    }

    pub fn scale(&mut self, x: Node, k: f64) -> Node {
        self.unary(Op::Scale { x, k }, x, |v| k * v)
    }

    pub fn one_minus(&mut self, x: Node) -> Node {
        self.unary(Op::OneMinus { x }, x, |v| 1.0 - v)
    }

    pub fn scaled_tanh(&mut self, x: Node) -> Node {
        self.unary(Op::ScaledTanh { x }, x, super::scaled_tanh_scalar)
    }

    pub fn logistic(&mut self, x: Node) -> Node {
        self.unary(Op::Logistic { x }, x, super::logistic_scalar)
    }

    pub fn softmax(&mut self, x: Node) -> Node {
        let (xo, xl) = self.val_range(x);
        assert!(xl > 0, "softmax of empty vector");
        let n = self.push(Op::Softmax { x }, xl);
        let (off, _) = self.val_range(n);
        let max = self.vals[xo..xo + xl]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for i in 0..xl {
            let e = (self.vals[xo + i] - max).exp();
            self.vals[off + i] = e;
            sum += e;
        }
        for i in 0..xl {
            self.vals[off + i] /= sum;
        }
        n
    }

    /// -log softmax(logits)[target], computed with max-subtraction.
    pub fn ce_logits(&mut self, logits: Node, target: usize) -> Node {
        let (lo, ll) = self.val_range(logits);
        assert!(target < ll, "CE target out of range");
        let n = self.push(
            Op::CeLogits {
                logits,
                target: target as u32,
            },
            1,
        );
        let (off, _) = self.val_range(n);
        let max = self.vals[lo..lo + ll]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let lse: f64 = self.vals[lo..lo + ll]
            .iter()
            .map(|&v| (v - max).exp())
            .sum::<f64>()
            .ln()
            + max;
        self.vals[off] = lse - self.vals[lo + target];
        n
    }

    /// 0.5 * (pred[0] - target)^2 for a length-1 node.
    pub fn half_sq_err(&mut self, pred: Node, target: f64) -> Node {
        self.half_sq_err_entry_target(pred, 0, target)
    }

    /// 0.5 * pred[idx]^2.
    pub fn half_sq_err_entry(&mut self, pred: Node, idx: usize) -> Node {
        self.half_sq_err_entry_target(pred, idx, 0.0)
    }

    /// 0.5 * (pred[idx] - target)^2.
    pub fn half_sq_err_entry_target(&mut self, pred: Node, idx: usize, target: f64) -> Node {
        let (po, pl) = self.val_range(pred);
        assert!(idx < pl, "half_sq_err index out of range");
        let n = self.push(
            Op::HalfSqErr {
                pred,
                idx: idx as u32,
                target,
            },
            1,
        );
        let (off, _) = self.val_range(n);
        let d = self.vals[po + idx] - target;
        self.vals[off] = 0.5 * d * d;
        n
    }

    /// Continuous stack transition. `s` has depth d, `a` is the 3-vector
    /// (PUSH, POP, NoOP), `v` the scalar push value; output has depth d+1.
    /// With `noop_identity` the NoOP share keeps deep cells in place; without
    /// it deep cells follow the literal push/pop-only blending.
    pub fn stack_step(&mut self, s: Node, a: Node, v: Node, noop_identity: bool) -> Node {
        let (so, sl) = self.val_range(s);
        let (ao, al) = self.val_range(a);
        let (vo, vl) = self.val_range(v);
        assert_eq!(al, 3, "action distribution must have 3 entries");
        assert_eq!(vl, 1, "push value must be scalar");
        let n = self.push(
            Op::StackStep {
                s,
                a,
                v,
                noop_identity,
            },
            sl + 1,
        );
        let (off, _) = self.val_range(n);
        let (push, pop, noop) = (self.vals[ao], self.vals[ao + 1], self.vals[ao + 2]);
        let get = |vals: &[f64], i: usize| if i < sl { vals[so + i] } else { 0.0 };
        self.vals[off] =
            push * self.vals[vo] + pop * get(&self.vals, 1) + noop * get(&self.vals, 0);
        for i in 1..=sl {
            let mut cell = push * self.vals[so + i - 1] + pop * get(&self.vals, i + 1);
            if noop_identity {
                cell += noop * get(&self.vals, i);
            }
            self.vals[off + i] = cell;
        }
        n
    }

    /// First k cells of a stack vector, zero-padded past its depth.
    pub fn read_topk(&mut self, s: Node, k: usize) -> Node {
        let (so, sl) = self.val_range(s);
        let n = self.push(Op::ReadTopK { s, k: k as u32 }, k);
        let (off, _) = self.val_range(n);
        for i in 0..k.min(sl) {
            self.vals[off + i] = self.vals[so + i];
        }
        n
    }

    // ---- reverse pass ------------------------------------------------------

    /// Accumulate dLoss/dParam for every parameter into `store` grads.
    /// The loss must be a scalar node on this tape.
    pub fn backward(&mut self, loss: Node, store: &mut ParamStore) -> Result<()> {
        assert_eq!(self.value(loss).len(), 1, "loss must be scalar");
        self.grads.clear();
        self.grads.resize(self.vals.len(), 0.0);
        let (lo, _) = self.val_range(loss);
        self.grads[lo] = 1.0;

        for idx in (0..=loss.0 as usize).rev() {
            let op = self.ops[idx];
            let (oo, ol) = {
                let s = &self.spans[idx];
                (s.off as usize, s.len as usize)
            };
            match op {
                Op::Const => {}
                Op::Embed { pid, col } => {
                    let cols = store.value(pid).cols();
                    let grad = store.grad_mut(pid);
                    for r in 0..ol {
                        grad[r * cols + col as usize] += self.grads[oo + r];
                    }
                }
                Op::MatVec { pid, x } => {
                    let (xo, xl) = self.val_range(x);
                    let cols = store.value(pid).cols();
                    // dW and dx in one sweep over rows.
                    for r in 0..ol {
                        let g = self.grads[oo + r];
                        if g == 0.0 {
                            continue;
                        }
                        let grad = store.grad_mut(pid);
                        for c in 0..xl {
                            grad[r * cols + c] += g * self.vals[xo + c];
                        }
                        let data = store.value(pid).data();
                        for c in 0..xl {
                            self.grads[xo + c] += data[r * cols + c] * g;
                        }
                    }
                }
                Op::AddParam { x, pid } => {
                    let (xo, _) = self.val_range(x);
                    let grad = store.grad_mut(pid);
                    for i in 0..ol {
                        let g = self.grads[oo + i];
                        grad[i] += g;
                        self.grads[xo + i] += g;
                    }
                }
                Op::Add { a, b } => {
                    let (ao, _) = self.val_range(a);
                    let (bo, _) = self.val_range(b);
                    for i in 0..ol {
                        let g = self.grads[oo + i];
                        self.grads[ao + i] += g;
                        self.grads[bo + i] += g;
                    }
                }
                Op::Sub { a, b } => {
                    let (ao, _) = self.val_range(a);
                    let (bo, _) = self.val_range(b);
                    for i in 0..ol {
                        let g = self.grads[oo + i];
                        self.grads[ao + i] += g;
                        self.grads[bo + i] -= g;
                    }
                }
                Op::Mul { a, b } => {
                    let (ao, _) = self.val_range(a);
                    let (bo, _) = self.val_range(b);
                    for i in 0..ol {
                        let g = self.grads[oo + i];
                        self.grads[ao + i] += g * self.vals[bo + i];
                        self.grads[bo + i] += g * self.vals[ao + i];
                    }
                }
                Op::Scale { x, k } => {
                    let (xo, _) = self.val_range(x);
                    for i in 0..ol {
                        self.grads[xo + i] += k * self.grads[oo + i];
                    }
                }
                Op::OneMinus { x } => {
                    let (xo, _) = self.val_range(x);
                    for i in 0..ol {
                        self.grads[xo + i] -= self.grads[oo + i];
                    }
                }
                Op::ScaledTanh { x } => {
                    let (xo, _) = self.val_range(x);
                    // y = A tanh(Bx): dy/dx = A*B*(1 - (y/A)^2)
                    let (a, b) = (super::TANH_SCALE, super::TANH_SLOPE);
                    for i in 0..ol {
                        let y = self.vals[oo + i];
                        let t = y / a;
                        self.grads[xo + i] += self.grads[oo + i] * a * b * (1.0 - t * t);
                    }
                }
                Op::Logistic { x } => {
                    let (xo, _) = self.val_range(x);
                    for i in 0..ol {
                        let y = self.vals[oo + i];
                        self.grads[xo + i] += self.grads[oo + i] * y * (1.0 - y);
                    }
                }
                Op::Softmax { x } => {
                    let (xo, _) = self.val_range(x);
                    let mut dot = 0.0;
                    for i in 0..ol {
                        dot += self.grads[oo + i] * self.vals[oo + i];
                    }
                    for i in 0..ol {
                        self.grads[xo + i] += self.vals[oo + i] * (self.grads[oo + i] - dot);
                    }
                }
                Op::CeLogits { logits, target } => {
                    let g = self.grads[oo];
                    if g != 0.0 {
                        let (lo, ll) = self.val_range(logits);
                        let max = self.vals[lo..lo + ll]
                            .iter()
                            .cloned()
                            .fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = self.vals[lo..lo + ll]
                            .iter()
                            .map(|&v| (v - max).exp())
                            .sum();
                        for i in 0..ll {
                            let p = (self.vals[lo + i] - max).exp() / sum;
                            self.grads[lo + i] += g * p;
                        }
                        self.grads[lo + target as usize] -= g;
                    }
                }
                Op::HalfSqErr { pred, idx, target } => {
                    let (po, _) = self.val_range(pred);
                    let p = po + idx as usize;
                    self.grads[p] += self.grads[oo] * (self.vals[p] - target);
                }
                Op::StackStep {
                    s,
                    a,
                    v,
                    noop_identity,
                } => {
                    let (so, sl) = self.val_range(s);
                    let (ao, _) = self.val_range(a);
                    let (vo, _) = self.val_range(v);
                    let (push, pop, noop) = (self.vals[ao], self.vals[ao + 1], self.vals[ao + 2]);
                    let sval = |i: usize| if i < sl { self.vals[so + i] } else { 0.0 };
                    // top cell
                    let g0 = self.grads[oo];
                    self.grads[vo] += g0 * push;
                    self.grads[ao] += g0 * self.vals[vo];
                    self.grads[ao + 1] += g0 * sval(1);
                    self.grads[ao + 2] += g0 * sval(0);
                    if sl > 0 {
                        self.grads[so] += g0 * noop;
                    }
                    if sl > 1 {
                        self.grads[so + 1] += g0 * pop;
                    }
                    // deeper cells
                    for i in 1..=sl {
                        let g = self.grads[oo + i];
                        if g == 0.0 {
                            continue;
                        }
                        self.grads[ao] += g * self.vals[so + i - 1];
                        self.grads[ao + 1] += g * sval(i + 1);
                        self.grads[so + i - 1] += g * push;
                        if i + 1 < sl {
                            self.grads[so + i + 1] += g * pop;
                        }
                        if noop_identity && i < sl {
                            self.grads[ao + 2] += g * self.vals[so + i];
                            self.grads[so + i] += g * noop;
                        }
                    }
                }
                Op::ReadTopK { s, k } => {
                    let (so, sl) = self.val_range(s);
                    for i in 0..(k as usize).min(sl) {
                        self.grads[so + i] += self.grads[oo + i];
                    }
                }
            }
        }

        for pid in store.ids().collect::<Vec<_>>() {
            if store.grad(pid).iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", store.name(pid))));
            }
        }
        Ok(())
    }
}
