//! Reverse-mode autodiff tape over the kernel set.
//!
//! A [`Tape`] owns every tensor produced during a forward pass. Ops record
//! their inputs; [`Tape::backward`] walks the recording in reverse and
//! accumulates gradients into the leaf tensors that were inserted with
//! `requires_grad` set. Intermediate gradients are pass-local, so calling
//! `backward` twice accumulates leaf gradients without double-counting.

use alloc::vec;
use alloc::vec::Vec;

use super::kernels;
use super::tensor::Tensor;
use crate::error::{CoreError, Result};
use crate::ensure;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Conv2d { x: NodeId, w: NodeId, b: NodeId },
    MaxPool2 { x: NodeId },
    Relu { x: NodeId },
    LogSoftmax { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f32 },
    Sum { x: NodeId },
    Mean { x: NodeId },
    Exp { x: NodeId },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Inserts a leaf tensor. Gradients accumulate into it during
    /// `backward` iff it was built `.with_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf, needs)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the loss w.r.t. a leaf, if backward has populated it.
    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.nodes[id.0].value.grad()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn output(&mut self, shape: &[usize], data: Vec<f32>, op: Op, name: &'static str, needs: bool) -> Result<NodeId> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite { op: name });
        }
        let mut t = Tensor::from_vec(shape, data)?;
        if needs {
            t = t.with_grad();
        }
        Ok(self.push(t, op, needs))
    }

    // ── forward ops ─────────────────────────────────────────────────

    /// x: [B, ...] (flattened to [B, Din]), w: [Din, Dout], b: [Dout]
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        ensure!(!xs.is_empty() && ws.len() == 2 && bs.len() == 1, "affine expects x [B,..], w [Din,Dout], b [Dout], got {xs:?} {ws:?} {bs:?}");
        let bsz = xs[0];
        ensure!(bsz > 0, "affine on empty batch");
        let din = self.value(x).numel() / bsz;
        let (wdin, dout) = (ws[0], ws[1]);
        ensure!(din == wdin && bs[0] == dout, "affine shape mismatch: x rows of {din}, w {ws:?}, b {bs:?}");
        let y = kernels::affine_fwd(self.value(x).data(), self.value(w).data(), self.value(b).data(), bsz, din, dout);
        let needs = self.any_needs(&[x, w, b]);
        self.output(&[bsz, dout], y, Op::Affine { x, w, b }, "affine", needs)
    }

    /// x: [B, Ci, H, W], w: [Co, Ci, K, K] (K odd), b: [Co]; stride 1,
    /// zero padding (K-1)/2 so spatial size is preserved.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (self.value(x).shape().to_vec(), self.value(w).shape().to_vec(), self.value(b).shape().to_vec());
        ensure!(xs.len() == 4 && ws.len() == 4 && bs.len() == 1, "conv2d expects x [B,Ci,H,W], w [Co,Ci,K,K], b [Co], got {xs:?} {ws:?} {bs:?}");
        let (bsz, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, wcin, k, k2) = (ws[0], ws[1], ws[2], ws[3]);
        ensure!(k == k2 && k % 2 == 1, "conv2d kernel must be square with odd side, got {k}x{k2}");
        ensure!(wcin == cin && bs[0] == cout, "conv2d channel mismatch: x {xs:?}, w {ws:?}, b {bs:?}");
        let y = kernels::conv2d_fwd(self.value(x).data(), self.value(w).data(), self.value(b).data(), bsz, cin, h, wd, cout, k);
        let needs = self.any_needs(&[x, w, b]);
        self.output(&[bsz, cout, h, wd], y, Op::Conv2d { x, w, b }, "conv2d", needs)
    }

    /// 2x2 max pooling, stride 2; x: [B, C, H, W] with even H and W.
    pub fn max_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        ensure!(xs.len() == 4, "max_pool2 expects [B,C,H,W], got {xs:?}");
        let (bsz, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        ensure!(h % 2 == 0 && wd % 2 == 0, "max_pool2 needs even H and W, got {h}x{wd}");
        let y = kernels::maxpool2_fwd(self.value(x).data(), bsz, c, h, wd);
        let needs = self.nodes[xid(x)].needs_grad;
        self.output(&[bsz, c, h / 2, wd / 2], y, Op::MaxPool2 { x }, "max_pool2", needs)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.value(x).shape().to_vec();
        let y: Vec<f32> = self.value(x).data().iter().map(|&v| v.max(0.0)).collect();
        let needs = self.nodes[xid(x)].needs_grad;
        self.output(&shape, y, Op::Relu { x }, "relu", needs)
    }

    /// Row-wise log-softmax; x: [B, C].
    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        ensure!(xs.len() == 2, "log_softmax expects [B,C], got {xs:?}");
        let y = kernels::log_softmax_fwd(self.value(x).data(), xs[0], xs[1]);
        let needs = self.nodes[xid(x)].needs_grad;
        self.output(&xs, y, Op::LogSoftmax { x }, "log_softmax", needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: NodeId, c: f32) -> Result<NodeId> {
        ensure!(c.is_finite(), "scale by non-finite constant");
        let shape = self.value(x).shape().to_vec();
        let y: Vec<f32> = self.value(x).data().iter().map(|&v| v * c).collect();
        let needs = self.nodes[xid(x)].needs_grad;
        self.output(&shape, y, Op::Scale { x, c }, "scale", needs)
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f32 = self.value(x).data().iter().sum();
        let needs = self.nodes[xid(x)].needs_grad;
        self.output(&[1], vec![s], Op::Sum { x }, "sum", needs)
    }

    /// Scalar mean of all elements.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).numel();
        ensure!(n > 0, "mean of empty tensor");
        let s: f32 = self.value(x).data().iter().sum::<f32>() / n as f32;
        let needs = self.nodes[xid(x)].needs_grad;
        self.output(&[1], vec![s], Op::Mean { x }, "mean", needs)
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.value(x).shape().to_vec();
        let y: Vec<f32> = self.value(x).data().iter().map(|&v| libm::expf(v)).collect();
        let needs = self.nodes[xid(x)].needs_grad;
        self.output(&shape, y, Op::Exp { x }, "exp", needs)
    }

    fn elementwise(&mut self, a: NodeId, b: NodeId, name: &'static str, f: impl Fn(f32, f32) -> f32, op: Op) -> Result<NodeId> {
        ensure!(
            self.value(a).shape() == self.value(b).shape(),
            "{name} shape mismatch: {:?} vs {:?}",
            self.value(a).shape(),
            self.value(b).shape()
        );
        let shape = self.value(a).shape().to_vec();
        let y: Vec<f32> = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &z)| f(x, z)).collect();
        let needs = self.any_needs(&[a, b]);
        self.output(&shape, y, op, name, needs)
    }

    fn any_needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    // ── backward ────────────────────────────────────────────────────

    /// Accumulates d(loss)/d(leaf) into every `requires_grad` leaf.
    /// `loss` must be a scalar node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        ensure!(
            self.value(loss).numel() == 1,
            "backward on non-scalar node with shape {:?}",
            self.value(loss).shape()
        );
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let Some(gout) = grads[i].take() else { continue };
            // Stash leaf gradients; everything else propagates.
            match self.nodes[i].op.clone() {
                Op::Leaf => {
                    if self.nodes[i].value.requires_grad() {
                        self.nodes[i].value.accumulate_grad(&gout)?;
                    }
                }
                Op::Affine { x, w, b } => {
                    let bsz = self.value(x).shape()[0];
                    let din = self.value(x).numel() / bsz;
                    let dout = self.value(w).shape()[1];
                    let (xn, wn, bn) = (self.needs(x), self.needs(w), self.needs(b));
                    let mut dx = xn.then(|| vec![0.0; bsz * din]);
                    let mut dw = wn.then(|| vec![0.0; din * dout]);
                    let mut db = bn.then(|| vec![0.0; dout]);
                    kernels::affine_bwd(
                        self.value(x).data(),
                        self.value(w).data(),
                        &gout,
                        bsz,
                        din,
                        dout,
                        dx.as_deref_mut(),
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                    self.flow(&mut grads, x, dx);
                    self.flow(&mut grads, w, dw);
                    self.flow(&mut grads, b, db);
                }
                Op::Conv2d { x, w, b } => {
                    let xs = self.value(x).shape().to_vec();
                    let ws = self.value(w).shape().to_vec();
                    let (bsz, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                    let (cout, k) = (ws[0], ws[2]);
                    let (xn, wn, bn) = (self.needs(x), self.needs(w), self.needs(b));
                    let mut dx = xn.then(|| vec![0.0; bsz * cin * h * wd]);
                    let mut dw = wn.then(|| vec![0.0; cout * cin * k * k]);
                    let mut db = bn.then(|| vec![0.0; cout]);
                    kernels::conv2d_bwd(
                        self.value(x).data(),
                        self.value(w).data(),
                        &gout,
                        bsz,
                        cin,
                        h,
                        wd,
                        cout,
                        k,
                        dx.as_deref_mut(),
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                    self.flow(&mut grads, x, dx);
                    self.flow(&mut grads, w, dw);
                    self.flow(&mut grads, b, db);
                }
                Op::MaxPool2 { x } => {
                    if self.needs(x) {
                        let xs = self.value(x).shape().to_vec();
                        let mut dx = vec![0.0; self.value(x).numel()];
                        kernels::maxpool2_bwd(self.value(x).data(), &gout, xs[0], xs[1], xs[2], xs[3], &mut dx);
                        self.flow(&mut grads, x, Some(dx));
                    }
                }
                Op::Relu { x } => {
                    if self.needs(x) {
                        let dx: Vec<f32> = self.value(x).data().iter().zip(&gout).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
                        self.flow(&mut grads, x, Some(dx));
                    }
                }
                Op::LogSoftmax { x } => {
                    if self.needs(x) {
                        let shape = self.value(x).shape().to_vec();
                        let mut dx = vec![0.0; self.value(x).numel()];
                        kernels::log_softmax_bwd(self.nodes[i].value.data(), &gout, shape[0], shape[1], &mut dx);
                        self.flow(&mut grads, x, Some(dx));
                    }
                }
                Op::Add { a, b } => {
                    if self.needs(a) {
                        self.flow(&mut grads, a, Some(gout.clone()));
                    }
                    if self.needs(b) {
                        self.flow(&mut grads, b, Some(gout.clone()));
                    }
                }
                Op::Sub { a, b } => {
                    if self.needs(a) {
                        self.flow(&mut grads, a, Some(gout.clone()));
                    }
                    if self.needs(b) {
                        self.flow(&mut grads, b, Some(gout.iter().map(|&g| -g).collect()));
                    }
                }
                Op::Mul { a, b } => {
                    if self.needs(a) {
                        let da: Vec<f32> = gout.iter().zip(self.value(b).data()).map(|(&g, &v)| g * v).collect();
                        self.flow(&mut grads, a, Some(da));
                    }
                    if self.needs(b) {
                        let db: Vec<f32> = gout.iter().zip(self.value(a).data()).map(|(&g, &v)| g * v).collect();
                        self.flow(&mut grads, b, Some(db));
                    }
                }
                Op::Scale { x, c } => {
                    if self.needs(x) {
                        self.flow(&mut grads, x, Some(gout.iter().map(|&g| g * c).collect()));
                    }
                }
                Op::Sum { x } => {
                    if self.needs(x) {
                        self.flow(&mut grads, x, Some(vec![gout[0]; self.value(x).numel()]));
                    }
                }
                Op::Mean { x } => {
                    if self.needs(x) {
                        let n = self.value(x).numel() as f32;
                        self.flow(&mut grads, x, Some(vec![gout[0] / n; self.value(x).numel()]));
                    }
                }
                Op::Exp { x } => {
                    if self.needs(x) {
                        // output value is exp(x)
                        let dx: Vec<f32> = self.nodes[i].value.data().iter().zip(&gout).map(|(&e, &g)| e * g).collect();
                        self.flow(&mut grads, x, Some(dx));
                    }
                }
            }
        }
        Ok(())
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn flow(&self, grads: &mut [Option<Vec<f32>>], dst: NodeId, delta: Option<Vec<f32>>) {
        let Some(delta) = delta else { return };
        match &mut grads[dst.0] {
            Some(acc) => {
                for (a, d) in acc.iter_mut().zip(&delta) {
                    *a += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }
}

fn xid(id: NodeId) -> usize {
    id.0
}
