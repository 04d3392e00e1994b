//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! A [`Tape`] is rebuilt per forward pass (define-by-run). Every op records a
//! node holding the result value and its parent handles; [`Tape::backward`]
//! walks the nodes in reverse, accumulating vector-Jacobian products. Nodes
//! are topologically ordered by construction since parents must exist before
//! use. The op set is closed: matmul (both operand layouts), add, sub, mul,
//! scale, relu, l2_normalize, logsumexp, gather-rows, sum, mean, square,
//! sqrt, dot. Everything else in the crate is composed from these.
//!
//! Tapes are single-threaded objects. Distinct tapes are independent.

use crate::tensor::{
    mat_dims, mm_nn, mm_nt, mm_tn, normalize_rows, softmax_slice, Tensor, TensorError, NORM_EPS,
};

/// Handle of a node on one specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    MatMulNt { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, factor: f64 },
    Relu { a: NodeId },
    L2Normalize { a: NodeId },
    LogSumExp { a: NodeId },
    GatherRows { a: NodeId, indices: Vec<usize> },
    Sum { a: NodeId },
    Mean { a: NodeId },
    Square { a: NodeId },
    Sqrt { a: NodeId },
    Dot { a: NodeId, b: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Recorded computation graph for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradient buffers produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    /// Gradient with respect to a tracked tensor; `None` if the tensor never
    /// touched this tape. Untouched-but-tracked leaves yield zeros.
    pub fn wrt(&self, t: &Tensor) -> Option<Tensor> {
        let id = t.node()?;
        let g = self.grads.get(id.0)?;
        Some(Tensor::new(t.shape().to_vec(), g.clone()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a tracked leaf (a parameter or input that needs a gradient).
    pub fn leaf(&mut self, value: &Tensor) -> Tensor {
        self.push(Op::Leaf, value.detach(), true)
    }

    /// Register an untracked constant; no gradient will be computed for it.
    pub fn constant(&mut self, value: &Tensor) -> Tensor {
        self.push(Op::Leaf, value.detach(), false)
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Tensor {
        let id = NodeId(self.nodes.len());
        let out = value.clone().with_node(id);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        out
    }

    /// Resolve an operand to a node on this tape, registering untracked
    /// tensors as constants on first use.
    fn operand(&mut self, t: &Tensor) -> NodeId {
        match t.node() {
            Some(id) if id.0 < self.nodes.len() => id,
            _ => {
                let c = self.constant(t);
                c.node().expect("constant was just registered")
            }
        }
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn record_unary(
        &mut self,
        a: &Tensor,
        value: Tensor,
        make: impl FnOnce(NodeId) -> Op,
    ) -> Tensor {
        let na = self.operand(a);
        let req = self.requires(na);
        self.push(make(na), value, req)
    }

    fn record_binary(
        &mut self,
        a: &Tensor,
        b: &Tensor,
        value: Tensor,
        make: impl FnOnce(NodeId, NodeId) -> Op,
    ) -> Tensor {
        let na = self.operand(a);
        let nb = self.operand(b);
        let req = self.requires(na) || self.requires(nb);
        self.push(make(na, nb), value, req)
    }

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let value = a.matmul(b)?;
        Ok(self.record_binary(a, b, value, |a, b| Op::MatMul { a, b }))
    }

    /// `a · bᵀ` in one op; avoids materializing transposes on the tape.
    pub fn matmul_nt(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let value = a.matmul_nt(b)?;
        Ok(self.record_binary(a, b, value, |a, b| Op::MatMulNt { a, b }))
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let value = a.add(b)?;
        Ok(self.record_binary(a, b, value, |a, b| Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let value = a.sub(b)?;
        Ok(self.record_binary(a, b, value, |a, b| Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let value = a.mul(b)?;
        Ok(self.record_binary(a, b, value, |a, b| Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: &Tensor, factor: f64) -> Tensor {
        let value = a.scale(factor);
        self.record_unary(a, value, |a| Op::Scale { a, factor })
    }

    pub fn relu(&mut self, a: &Tensor) -> Tensor {
        let value = a.relu();
        self.record_unary(a, value, |a| Op::Relu { a })
    }

    pub fn l2_normalize(&mut self, a: &Tensor) -> Result<Tensor, TensorError> {
        let value = a.l2_normalize()?;
        Ok(self.record_unary(a, value, |a| Op::L2Normalize { a }))
    }

    pub fn logsumexp(&mut self, a: &Tensor) -> Result<Tensor, TensorError> {
        let value = Tensor::scalar(a.logsumexp()?);
        Ok(self.record_unary(a, value, |a| Op::LogSumExp { a }))
    }

    pub fn gather_rows(&mut self, a: &Tensor, indices: &[usize]) -> Result<Tensor, TensorError> {
        let value = a.gather_rows(indices)?;
        let idx = indices.to_vec();
        Ok(self.record_unary(a, value, |a| Op::GatherRows { a, indices: idx }))
    }

    pub fn sum(&mut self, a: &Tensor) -> Tensor {
        let value = Tensor::scalar(a.sum());
        self.record_unary(a, value, |a| Op::Sum { a })
    }

    pub fn mean(&mut self, a: &Tensor) -> Result<Tensor, TensorError> {
        let value = Tensor::scalar(a.mean()?);
        Ok(self.record_unary(a, value, |a| Op::Mean { a }))
    }

    pub fn square(&mut self, a: &Tensor) -> Tensor {
        let value = a.square();
        self.record_unary(a, value, |a| Op::Square { a })
    }

    pub fn sqrt(&mut self, a: &Tensor) -> Result<Tensor, TensorError> {
        let value = a.sqrt()?;
        Ok(self.record_unary(a, value, |a| Op::Sqrt { a }))
    }

    pub fn dot(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let value = Tensor::scalar(a.dot(b)?);
        Ok(self.record_binary(a, b, value, |a, b| Op::Dot { a, b }))
    }

    /// Reverse pass from a scalar root. Returns per-node gradient buffers;
    /// leaves that never influenced the root keep zero gradients.
    pub fn backward(&self, root: &Tensor) -> Result<Gradients, TensorError> {
        let root_id = root.node().ok_or(TensorError::NotTracked)?;
        if root_id.0 >= self.nodes.len() {
            return Err(TensorError::NotTracked);
        }
        if self.nodes[root_id.0].value.numel() != 1 {
            return Err(TensorError::NonScalarRoot(root.shape().to_vec()));
        }

        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.numel()])
            .collect();
        grads[root_id.0][0] = 1.0;

        // Nodes after the root cannot be its ancestors.
        for id in (0..=root_id.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            if grads[id].iter().all(|g| *g == 0.0) {
                continue;
            }
            let g = grads[id].clone();
            self.propagate(id, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                // C = A·B: dA += G·Bᵀ, dB += Aᵀ·G
                let va = &self.nodes[a.0].value;
                let vb = &self.nodes[b.0].value;
                let (m, k) = mat_dims(va, "matmul").expect("validated on forward");
                let (_, n) = mat_dims(vb, "matmul").expect("validated on forward");
                if self.requires(*a) {
                    accumulate(&mut grads[a.0], &mm_nt(g, m, n, vb.data(), k));
                }
                if self.requires(*b) {
                    accumulate(&mut grads[b.0], &mm_tn(va.data(), m, k, g, n));
                }
            }
            Op::MatMulNt { a, b } => {
                // C = A·Bᵀ: dA += G·B, dB += Gᵀ·A
                let va = &self.nodes[a.0].value;
                let vb = &self.nodes[b.0].value;
                let (m, k) = mat_dims(va, "matmul_nt").expect("validated on forward");
                let (n, _) = mat_dims(vb, "matmul_nt").expect("validated on forward");
                if self.requires(*a) {
                    accumulate(&mut grads[a.0], &mm_nn(g, m, n, vb.data(), k));
                }
                if self.requires(*b) {
                    accumulate(&mut grads[b.0], &mm_tn(g, m, n, va.data(), k));
                }
            }
            Op::Add { a, b } => {
                if self.requires(*a) {
                    accumulate(&mut grads[a.0], g);
                }
                if self.requires(*b) {
                    accumulate(&mut grads[b.0], g);
                }
            }
            Op::Sub { a, b } => {
                if self.requires(*a) {
                    accumulate(&mut grads[a.0], g);
                }
                if self.requires(*b) {
                    for (acc, gv) in grads[b.0].iter_mut().zip(g) {
                        *acc -= gv;
                    }
                }
            }
            Op::Mul { a, b } => {
                let va = self.nodes[a.0].value.data().to_vec();
                let vb = self.nodes[b.0].value.data().to_vec();
                if self.requires(*a) {
                    for ((acc, gv), bv) in grads[a.0].iter_mut().zip(g).zip(&vb) {
                        *acc += gv * bv;
                    }
                }
                if self.requires(*b) {
                    for ((acc, gv), av) in grads[b.0].iter_mut().zip(g).zip(&va) {
                        *acc += gv * av;
                    }
                }
            }
            Op::Scale { a, factor } => {
                if self.requires(*a) {
                    for (acc, gv) in grads[a.0].iter_mut().zip(g) {
                        *acc += gv * factor;
                    }
                }
            }
            Op::Relu { a } => {
                if self.requires(*a) {
                    let va = self.nodes[a.0].value.data();
                    for ((acc, gv), xv) in grads[a.0].iter_mut().zip(g).zip(va) {
                        if *xv > 0.0 {
                            *acc += gv;
                        }
                    }
                }
            }
            Op::L2Normalize { a } => {
                // y = x/‖x‖ per row: dx = (g − y·(y·g)) / ‖x‖
                if self.requires(*a) {
                    let va = &self.nodes[a.0].value;
                    let rows = va.rows();
                    let cols = va.cols();
                    let (y, norms) =
                        normalize_rows(va.data(), rows, cols).expect("validated on forward");
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let y_dot_g: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                        let acc = &mut grads[a.0][r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            acc[j] += (gr[j] - yr[j] * y_dot_g) / norms[r];
                        }
                    }
                }
            }
            Op::LogSumExp { a } => {
                if self.requires(*a) {
                    let sm = softmax_slice(self.nodes[a.0].value.data());
                    for (acc, sv) in grads[a.0].iter_mut().zip(sm) {
                        *acc += g[0] * sv;
                    }
                }
            }
            Op::GatherRows { a, indices } => {
                // scatter-add; duplicate indices accumulate
                if self.requires(*a) {
                    let cols = self.nodes[a.0].value.cols();
                    for (out_row, &src) in indices.iter().enumerate() {
                        let gr = &g[out_row * cols..(out_row + 1) * cols];
                        let acc = &mut grads[a.0][src * cols..(src + 1) * cols];
                        for j in 0..cols {
                            acc[j] += gr[j];
                        }
                    }
                }
            }
            Op::Sum { a } => {
                if self.requires(*a) {
                    for acc in grads[a.0].iter_mut() {
                        *acc += g[0];
                    }
                }
            }
            Op::Mean { a } => {
                if self.requires(*a) {
                    let n = self.nodes[a.0].value.numel() as f64;
                    for acc in grads[a.0].iter_mut() {
                        *acc += g[0] / n;
                    }
                }
            }
            Op::Square { a } => {
                if self.requires(*a) {
                    let va = self.nodes[a.0].value.data();
                    for ((acc, gv), xv) in grads[a.0].iter_mut().zip(g).zip(va) {
                        *acc += gv * 2.0 * xv;
                    }
                }
            }
            Op::Sqrt { a } => {
                // subgradient 0 at x = 0: the guard keeps |x| = sqrt(x²)
                // finite at its kink instead of emitting NaN
                if self.requires(*a) {
                    let va = self.nodes[a.0].value.data();
                    for ((acc, gv), xv) in grads[a.0].iter_mut().zip(g).zip(va) {
                        let denom = 2.0 * xv.sqrt().max(NORM_EPS);
                        *acc += gv / denom;
                    }
                }
            }
            Op::Dot { a, b } => {
                let va = self.nodes[a.0].value.data().to_vec();
                let vb = self.nodes[b.0].value.data().to_vec();
                if self.requires(*a) {
                    for (acc, bv) in grads[a.0].iter_mut().zip(&vb) {
                        *acc += g[0] * bv;
                    }
                }
                if self.requires(*b) {
                    for (acc, av) in grads[b.0].iter_mut().zip(&va) {
                        *acc += g[0] * av;
                    }
                }
            }
        }
    }
}

fn accumulate(acc: &mut [f64], add: &[f64]) {
    for (a, b) in acc.iter_mut().zip(add) {
        *a += b;
    }
}
