//! Reverse-mode differentiation over a fixed operation vocabulary.
//!
//! The compute graph of the method is small and static, so this is a plain
//! Wengert list: forward calls record one node per operation, `backward`
//! replays the list in reverse. There is no general broadcasting and no
//! higher-order support; the vocabulary below is exactly what the model
//! needs.
//!
//! A tape lives for a single forward/backward pass. Parameters live outside
//! the tape in a [`ParamSet`] and are bound to leaves at the start of each
//! pass; leaves marked frozen receive an exactly-zero gradient and are never
//! touched by optimizers.

use std::collections::BTreeMap;

use crate::diffmath::matrix::FeatureMatrix;
use crate::error::{CoreError, Result};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { name: String, frozen: bool },
    Constant,
    MatMul(VarId, VarId),
    Transpose(VarId),
    Add(VarId, VarId),
    /// Broadcast a `1 x c` row onto every row of the first operand.
    AddRow(VarId, VarId),
    /// `alpha * x + beta`; beta is a constant shift and drops out of the VJP.
    Affine(VarId, f64),
    Mul(VarId, VarId),
    Relu(VarId),
    L2NormalizeRows(VarId, f64),
    SoftmaxRows(VarId, f64),
    Ln(VarId),
    SumAll(VarId),
    MeanRows(VarId),
    ConcatRows(Vec<VarId>),
    SliceRows(VarId, usize),
    GatherRows(VarId, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: FeatureMatrix,
    op: Op,
    needs_grad: bool,
}

/// One named parameter: its current value and whether it is excluded from
/// optimization.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: FeatureMatrix,
    pub frozen: bool,
}

/// Named set of parameter leaves. Iteration order is the sorted name order,
/// which keeps optimizer updates and serialization deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: FeatureMatrix, frozen: bool) {
        self.entries.insert(name.into(), Param { value, frozen });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of learnable scalars across all non-frozen entries.
    pub fn learnable_scalar_count(&self) -> usize {
        self.entries
            .values()
            .filter(|p| !p.frozen)
            .map(|p| p.value.len())
            .sum()
    }

    /// True if any entry differs bit-wise from `other`.
    pub fn differs_from(&self, other: &ParamSet) -> bool {
        if self.entries.len() != other.entries.len() {
            return true;
        }
        self.entries.iter().zip(other.entries.iter()).any(
            |((na, pa), (nb, pb))| na != nb || pa.frozen != pb.frozen || pa.value != pb.value,
        )
    }
}

/// Leaf bindings produced by [`Tape::register`].
#[derive(Debug, Clone, Default)]
pub struct TapeBindings {
    map: BTreeMap<String, VarId>,
}

impl TapeBindings {
    pub fn var(&self, name: &str) -> Result<VarId> {
        self.map.get(name).copied().ok_or_else(|| CoreError::Parameter {
            name: "binding",
            reason: format!("no registered parameter named `{name}`"),
        })
    }
}

/// Gradients keyed by parameter name; one entry per registered leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: BTreeMap<String, FeatureMatrix>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&FeatureMatrix> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &FeatureMatrix)> {
        self.map.iter()
    }

    /// Entry-wise accumulation: `self += other`. Shapes must already agree.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (name, grad) in &other.map {
            match self.map.get_mut(name) {
                Some(existing) => {
                    for (a, b) in existing.data_mut().iter_mut().zip(grad.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.map.insert(name.clone(), grad.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for grad in self.map.values_mut() {
            for v in grad.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(|g| g.is_finite())
    }
}

/// Wengert list recording one training step's compute graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: VarId) -> &FeatureMatrix {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: FeatureMatrix, op: Op, needs_grad: bool) -> VarId {
        self.nodes.push(Node { value, op, needs_grad });
        VarId(self.nodes.len() - 1)
    }

    fn needs(&self, id: VarId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Registers every parameter of the set as a leaf.
    pub fn register(&mut self, params: &ParamSet) -> TapeBindings {
        let mut map = BTreeMap::new();
        for (name, param) in params.iter() {
            let id = self.push(
                param.value.clone(),
                Op::Leaf { name: name.clone(), frozen: param.frozen },
                !param.frozen,
            );
            map.insert(name.clone(), id);
        }
        TapeBindings { map }
    }

    /// A value with no gradient of its own.
    pub fn constant(&mut self, value: FeatureMatrix) -> VarId {
        self.push(value, Op::Constant, false)
    }

    /// Registers a single named leaf outside of a [`ParamSet`].
    pub fn leaf(&mut self, name: impl Into<String>, value: FeatureMatrix, frozen: bool) -> VarId {
        self.push(value, Op::Leaf { name: name.into(), frozen }, !frozen)
    }

    // ── recorded operations ─────────────────────────────────────────────

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let value = self.value(a).transpose();
        let needs = self.needs(a);
        self.push(value, Op::Transpose(a), needs)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = self.value(a).add(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn add_row(&mut self, a: VarId, row: VarId) -> Result<VarId> {
        let value = self.value(a).add_row(self.value(row))?;
        let needs = self.needs(a) || self.needs(row);
        Ok(self.push(value, Op::AddRow(a, row), needs))
    }

    pub fn affine(&mut self, a: VarId, alpha: f64, beta: f64) -> VarId {
        let value = self.value(a).affine(alpha, beta);
        let needs = self.needs(a);
        self.push(value, Op::Affine(a, alpha), needs)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = self.value(a).mul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let value = self.value(a).relu();
        let needs = self.needs(a);
        self.push(value, Op::Relu(a), needs)
    }

    pub fn l2_normalize_rows(&mut self, a: VarId, eps: f64) -> Result<VarId> {
        let value = self.value(a).l2_normalize_rows(eps)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::L2NormalizeRows(a, eps), needs))
    }

    pub fn softmax_rows(&mut self, a: VarId, tau: f64) -> Result<VarId> {
        let value = self.value(a).softmax_rows(tau)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::SoftmaxRows(a, tau), needs))
    }

    pub fn ln(&mut self, a: VarId) -> VarId {
        let value = self.value(a).ln();
        let needs = self.needs(a);
        self.push(value, Op::Ln(a), needs)
    }

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let value = FeatureMatrix::filled(1, 1, self.value(a).sum_all());
        let needs = self.needs(a);
        self.push(value, Op::SumAll(a), needs)
    }

    pub fn mean_rows(&mut self, a: VarId) -> VarId {
        let value = self.value(a).mean_rows();
        let needs = self.needs(a);
        self.push(value, Op::MeanRows(a), needs)
    }

    pub fn concat_rows(&mut self, parts: &[VarId]) -> Result<VarId> {
        let values: Vec<&FeatureMatrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = FeatureMatrix::concat_rows(&values)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), needs))
    }

    pub fn slice_rows(&mut self, a: VarId, start: usize, len: usize) -> Result<VarId> {
        let value = self.value(a).slice_rows(start, len)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::SliceRows(a, start), needs))
    }

    pub fn gather_rows(&mut self, a: VarId, indices: &[usize]) -> Result<VarId> {
        let value = self.value(a).gather_rows(indices)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::GatherRows(a, indices.to_vec()), needs))
    }

    // ── composites ──────────────────────────────────────────────────────

    /// Entry `(i, j)` is the cosine of row `a_i` and row `b_j`.
    pub fn cosine_matrix(&mut self, a: VarId, b: VarId, eps: f64) -> Result<VarId> {
        if self.value(a).cols() != self.value(b).cols() {
            return Err(CoreError::Dimension {
                op: "cosine_matrix",
                lhs: self.value(a).shape_string(),
                rhs: self.value(b).shape_string(),
            });
        }
        let na = self.l2_normalize_rows(a, eps)?;
        let nb = self.l2_normalize_rows(b, eps)?;
        let nbt = self.transpose(nb);
        self.matmul(na, nbt)
    }

    /// `-log p[label]` for a `1 x K` probability row.
    pub fn cross_entropy(&mut self, probs: VarId, label: usize) -> Result<VarId> {
        let k = self.value(probs).cols();
        if label >= k {
            return Err(CoreError::Parameter {
                name: "label",
                reason: format!("label {label} out of {k} classes"),
            });
        }
        let mut onehot = FeatureMatrix::zeros(1, k);
        onehot.set(0, label, 1.0);
        let mask = self.constant(onehot);
        let logp = self.ln(probs);
        let picked = self.mul(logp, mask)?;
        let s = self.sum_all(picked);
        Ok(self.affine(s, -1.0, 0.0))
    }

    /// Average of `1 x 1` scalars.
    pub fn mean_of_scalars(&mut self, terms: &[VarId]) -> Result<VarId> {
        let mut acc = *terms.first().ok_or_else(|| CoreError::Parameter {
            name: "terms",
            reason: "mean of zero terms".into(),
        })?;
        for &t in &terms[1..] {
            acc = self.add(acc, t)?;
        }
        Ok(self.affine(acc, 1.0 / terms.len() as f64, 0.0))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a `1 x 1` loss node. Returns one gradient per
    /// registered leaf: zero for frozen leaves and for leaves the loss does
    /// not depend on, always with the leaf's own shape.
    pub fn backward(&self, loss: VarId) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.shape() != (1, 1) {
            return Err(CoreError::Parameter {
                name: "loss",
                reason: format!("backward needs a 1x1 loss, got {}", loss_node.value.shape_string()),
            });
        }
        if !loss_node.value.is_finite() {
            return Err(CoreError::Evaluation("loss is not finite".into()));
        }

        let mut grads: Vec<Option<FeatureMatrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(FeatureMatrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf { .. } | Op::Constant => {
                    grads[idx] = Some(grad); // keep for collection below
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let delta = grad.matmul(&self.nodes[b.0].value.transpose())?;
                        accumulate(&mut grads[a.0], delta);
                    }
                    if self.needs(*b) {
                        let delta = self.nodes[a.0].value.transpose().matmul(&grad)?;
                        accumulate(&mut grads[b.0], delta);
                    }
                }
                Op::Transpose(a) => accumulate(&mut grads[a.0], grad.transpose()),
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], grad.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], grad);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        let sums = grad.col_sums();
                        accumulate(&mut grads[row.0], FeatureMatrix::row_vector(&sums));
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], grad);
                    }
                }
                Op::Affine(a, alpha) => accumulate(&mut grads[a.0], grad.affine(*alpha, 0.0)),
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], grad.mul(&self.nodes[b.0].value)?);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], grad.mul(&self.nodes[a.0].value)?);
                    }
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].value;
                    let mut delta = grad;
                    for (d, xv) in delta.data_mut().iter_mut().zip(x.data()) {
                        if *xv <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads[a.0], delta);
                }
                Op::L2NormalizeRows(a, eps) => {
                    let x = &self.nodes[a.0].value;
                    let y = &node.value;
                    let cols = x.cols();
                    let mut delta = grad;
                    for r in 0..x.rows() {
                        let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm < *eps {
                            continue; // identity on guarded rows
                        }
                        let yr = y.row(r);
                        let gr = &delta.data()[r * cols..(r + 1) * cols];
                        let proj: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        let drow = &mut delta.data_mut()[r * cols..(r + 1) * cols];
                        for (c, d) in drow.iter_mut().enumerate() {
                            *d = (*d - proj * yr[c]) / norm;
                        }
                    }
                    accumulate(&mut grads[a.0], delta);
                }
                Op::SoftmaxRows(a, tau) => {
                    let p = &node.value;
                    let cols = p.cols();
                    let mut delta = grad;
                    for r in 0..p.rows() {
                        let pr = p.row(r);
                        let gr = &delta.data()[r * cols..(r + 1) * cols];
                        let inner: f64 = gr.iter().zip(pr).map(|(g, p)| g * p).sum();
                        let drow = &mut delta.data_mut()[r * cols..(r + 1) * cols];
                        for (c, d) in drow.iter_mut().enumerate() {
                            *d = pr[c] * (*d - inner) / tau;
                        }
                    }
                    accumulate(&mut grads[a.0], delta);
                }
                Op::Ln(a) => {
                    let x = &self.nodes[a.0].value;
                    let mut delta = grad;
                    for (d, xv) in delta.data_mut().iter_mut().zip(x.data()) {
                        *d /= xv;
                    }
                    accumulate(&mut grads[a.0], delta);
                }
                Op::SumAll(a) => {
                    let x = &self.nodes[a.0].value;
                    accumulate(&mut grads[a.0], FeatureMatrix::filled(x.rows(), x.cols(), grad.scalar()));
                }
                Op::MeanRows(a) => {
                    let x = &self.nodes[a.0].value;
                    let inv = 1.0 / x.rows() as f64;
                    let mut delta = FeatureMatrix::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        for c in 0..x.cols() {
                            delta.set(r, c, grad.get(0, c) * inv);
                        }
                    }
                    accumulate(&mut grads[a.0], delta);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.nodes[p.0].value.rows();
                        if self.needs(p) {
                            accumulate(&mut grads[p.0], grad.slice_rows(offset, rows)?);
                        }
                        offset += rows;
                    }
                }
                Op::SliceRows(a, start) => {
                    let x = &self.nodes[a.0].value;
                    let mut delta = FeatureMatrix::zeros(x.rows(), x.cols());
                    let cols = x.cols();
                    for r in 0..grad.rows() {
                        let src = grad.row(r);
                        let dst = &mut delta.data_mut()[(start + r) * cols..(start + r + 1) * cols];
                        dst.copy_from_slice(src);
                    }
                    accumulate(&mut grads[a.0], delta);
                }
                Op::GatherRows(a, indices) => {
                    let x = &self.nodes[a.0].value;
                    let cols = x.cols();
                    let mut delta = FeatureMatrix::zeros(x.rows(), x.cols());
                    for (r, &src_row) in indices.iter().enumerate() {
                        let g = grad.row(r);
                        let dst = &mut delta.data_mut()[src_row * cols..(src_row + 1) * cols];
                        for (d, gv) in dst.iter_mut().zip(g) {
                            *d += gv;
                        }
                    }
                    accumulate(&mut grads[a.0], delta);
                }
            }
        }

        let mut out = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { name, frozen } = &node.op {
                let grad = if *frozen {
                    FeatureMatrix::zeros(node.value.rows(), node.value.cols())
                } else {
                    grads
                        .get(idx)
                        .and_then(|g| g.clone())
                        .unwrap_or_else(|| FeatureMatrix::zeros(node.value.rows(), node.value.cols()))
                };
                out.insert(name.clone(), grad);
            }
        }
        Ok(Gradients { map: out })
    }
}

fn accumulate(slot: &mut Option<FeatureMatrix>, delta: FeatureMatrix) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        None => *slot = Some(delta),
    }
}
