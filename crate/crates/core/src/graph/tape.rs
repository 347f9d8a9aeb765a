use std::fmt;

use super::{GraphError, ParamId, ParamStore, Result, Tensor};

/// Lower/upper clamp applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Public classification of a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Input,
    Param,
    EmbedLookup,
    Sum,
    Add,
    ElementwiseProduct,
    BiInteraction,
    Affine,
    Concat,
    Slice,
    Sigmoid,
    SoftmaxXent,
    BinaryXent,
    Grl,
    StopGrad,
    Scale,
    Mean,
    SumSquares,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeKind::Input => "input",
            NodeKind::Param => "param",
            NodeKind::EmbedLookup => "embed-lookup",
            NodeKind::Sum => "sum",
            NodeKind::Add => "add",
            NodeKind::ElementwiseProduct => "elementwise-product",
            NodeKind::BiInteraction => "bi-interaction",
            NodeKind::Affine => "affine",
            NodeKind::Concat => "concat",
            NodeKind::Slice => "slice",
            NodeKind::Sigmoid => "sigmoid",
            NodeKind::SoftmaxXent => "softmax-xent",
            NodeKind::BinaryXent => "binary-xent",
            NodeKind::Grl => "grl",
            NodeKind::StopGrad => "stop-grad",
            NodeKind::Scale => "scale",
            NodeKind::Mean => "mean",
            NodeKind::SumSquares => "sum-squares",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Embed {
        param: ParamId,
        rows: Vec<usize>,
        weights: Vec<f64>,
    },
    SumFields(NodeId),
    BiInteraction(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Affine {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Concat(NodeId, NodeId),
    Slice {
        x: NodeId,
        start: usize,
    },
    Sigmoid(NodeId),
    Grl(NodeId),
    StopGrad(NodeId),
    BinaryXent {
        p: NodeId,
        targets: Vec<f64>,
    },
    SoftXent {
        logits: NodeId,
        targets: Vec<f64>,
        softmax: Vec<f64>,
    },
    Mean {
        x: NodeId,
        weights: Option<Vec<f64>>,
    },
    SumSquares(NodeId),
}

impl Op {
    fn kind(&self) -> NodeKind {
        match self {
            Op::Input => NodeKind::Input,
            Op::Param(_) => NodeKind::Param,
            Op::Embed { .. } => NodeKind::EmbedLookup,
            Op::SumFields(_) => NodeKind::Sum,
            Op::BiInteraction(_) => NodeKind::BiInteraction,
            Op::Add(..) => NodeKind::Add,
            Op::Mul(..) => NodeKind::ElementwiseProduct,
            Op::Scale(..) => NodeKind::Scale,
            Op::Affine { .. } => NodeKind::Affine,
            Op::Concat(..) => NodeKind::Concat,
            Op::Slice { .. } => NodeKind::Slice,
            Op::Sigmoid(_) => NodeKind::Sigmoid,
            Op::Grl(_) => NodeKind::Grl,
            Op::StopGrad(_) => NodeKind::StopGrad,
            Op::BinaryXent { .. } => NodeKind::BinaryXent,
            Op::SoftXent { .. } => NodeKind::SoftmaxXent,
            Op::Mean { .. } => NodeKind::Mean,
            Op::SumSquares(_) => NodeKind::SumSquares,
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Ordered record of executed primitives.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order and `backward` visits it once in reverse.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a node's value, if any flowed there.
    pub fn get(&self, node: NodeId) -> Option<&[f64]> {
        self.grads[node.0].as_deref()
    }

    /// Like [`get`](Self::get) but unreached nodes report zeros.
    pub fn get_or_zero(&self, tape: &Tape, node: NodeId) -> Vec<f64> {
        match self.get(node) {
            Some(g) => g.to_vec(),
            None => vec![0.0; tape.value(node).len()],
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `−[y ln p + (1−y) ln(1−p)]` with `p` clamped to `[1e-7, 1−1e-7]`.
pub fn binary_xent(p: f64, y: f64) -> f64 {
    let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
}

/// Soft-target cross-entropy `−Σ t_j ln softmax(logits)_j`, max-stabilized.
pub fn soft_xent(logits: &[f64], target: &[f64]) -> f64 {
    let (loss, _) = soft_xent_with_softmax(logits, target);
    loss
}

fn soft_xent_with_softmax(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let log_z = max + sum_exp.ln();
    let softmax: Vec<f64> = logits.iter().map(|l| (l - log_z).exp()).collect();
    let loss = -logits
        .iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(l, t)| t * (l - log_z))
        .sum::<f64>();
    (loss, softmax)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, node: NodeId) -> &Tensor {
        &self.nodes[node.0].value
    }

    pub fn kind(&self, node: NodeId) -> NodeKind {
        self.nodes[node.0].op.kind()
    }

    /// Nodes this node reads from, in argument order.
    pub fn inputs(&self, node: NodeId) -> Vec<NodeId> {
        match &self.nodes[node.0].op {
            Op::Input | Op::Param(_) | Op::Embed { .. } => vec![],
            Op::SumFields(x)
            | Op::BiInteraction(x)
            | Op::Scale(x, _)
            | Op::Slice { x, .. }
            | Op::Sigmoid(x)
            | Op::Grl(x)
            | Op::StopGrad(x)
            | Op::BinaryXent { p: x, .. }
            | Op::SoftXent { logits: x, .. }
            | Op::Mean { x, .. }
            | Op::SumSquares(x) => vec![*x],
            Op::Add(a, b) | Op::Mul(a, b) | Op::Concat(a, b) => vec![*a, *b],
            Op::Affine { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn shape_err(&self, kind: NodeKind, detail: String) -> GraphError {
        GraphError::Shape {
            node: format!("#{} {}", self.nodes.len(), kind),
            detail,
        }
    }

    /// A constant leaf; receives no parameter gradient.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value)
    }

    /// A leaf bound to a parameter; its gradient accumulates into the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let value = store.get(id).tensor();
        self.push(Op::Param(id), value)
    }

    /// Gathers `weights[k] * table[rows[k]]` into a `[batch, fields, width]` bag.
    pub fn embed(
        &mut self,
        store: &ParamStore,
        id: ParamId,
        rows: Vec<usize>,
        weights: Vec<f64>,
        fields: usize,
    ) -> Result<NodeId> {
        let table = store.get(id);
        if rows.len() != weights.len() || fields == 0 || !rows.len().is_multiple_of(fields) {
            return Err(self.shape_err(
                NodeKind::EmbedLookup,
                format!(
                    "{} rows, {} weights, {} fields",
                    rows.len(),
                    weights.len(),
                    fields
                ),
            ));
        }
        let width = table.cols();
        let n_rows = table.rows();
        let mut data = Vec::with_capacity(rows.len() * width);
        for (&r, &w) in rows.iter().zip(&weights) {
            if r >= n_rows {
                return Err(GraphError::RowOutOfRange {
                    param: table.name.clone(),
                    row: r,
                    rows: n_rows,
                });
            }
            data.extend(table.row(r).iter().map(|v| w * v));
        }
        let batch = rows.len() / fields;
        let value = Tensor::new(vec![batch, fields, width], data);
        Ok(self.push(
            Op::Embed {
                param: id,
                rows,
                weights,
            },
            value,
        ))
    }

    fn bag_dims(&self, x: NodeId, kind: NodeKind) -> Result<(usize, usize, usize)> {
        let s = self.value(x).shape();
        if s.len() != 3 {
            return Err(self.shape_err(kind, format!("expected [batch, fields, width], got {s:?}")));
        }
        Ok((s[0], s[1], s[2]))
    }

    /// Sums a `[batch, fields, width]` bag over its field axis.
    pub fn sum_fields(&mut self, x: NodeId) -> Result<NodeId> {
        let (b, f, w) = self.bag_dims(x, NodeKind::Sum)?;
        let v = self.value(x).data();
        let mut out = vec![0.0; b * w];
        for bi in 0..b {
            for fi in 0..f {
                let src = &v[(bi * f + fi) * w..(bi * f + fi + 1) * w];
                for (o, s) in out[bi * w..(bi + 1) * w].iter_mut().zip(src) {
                    *o += s;
                }
            }
        }
        Ok(self.push(Op::SumFields(x), Tensor::matrix(b, w, out)))
    }

    /// `0.5 [(Σ_f v_f)² − Σ_f v_f²]` elementwise over a bag.
    pub fn bi_interaction(&mut self, x: NodeId) -> Result<NodeId> {
        let (b, f, w) = self.bag_dims(x, NodeKind::BiInteraction)?;
        let v = self.value(x).data();
        let mut out = vec![0.0; b * w];
        let mut sum = vec![0.0; w];
        let mut sq = vec![0.0; w];
        for bi in 0..b {
            sum.iter_mut().for_each(|s| *s = 0.0);
            sq.iter_mut().for_each(|s| *s = 0.0);
            for fi in 0..f {
                let src = &v[(bi * f + fi) * w..(bi * f + fi + 1) * w];
                for k in 0..w {
                    sum[k] += src[k];
                    sq[k] += src[k] * src[k];
                }
            }
            for k in 0..w {
                out[bi * w + k] = 0.5 * (sum[k] * sum[k] - sq[k]);
            }
        }
        Ok(self.push(Op::BiInteraction(x), Tensor::matrix(b, w, out)))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, kind: NodeKind) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(self.shape_err(kind, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, NodeKind::Add)?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data);
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, NodeKind::ElementwiseProduct)?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data);
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let vx = self.value(x);
        let value = Tensor::new(vx.shape().to_vec(), vx.data().iter().map(|v| c * v).collect());
        self.push(Op::Scale(x, c), value)
    }

    /// `x · w + b` for `x: [batch, n]`, `w: [n, m]`, `b: [m]` or `[1, m]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        let sw = self.value(w).shape().to_vec();
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(self.shape_err(NodeKind::Affine, format!("x {sx:?} times w {sw:?}")));
        }
        let (batch, n, m) = (sx[0], sx[1], sw[1]);
        if let Some(b) = b {
            if self.value(b).len() != m {
                return Err(self.shape_err(
                    NodeKind::Affine,
                    format!("bias {:?} for output width {m}", self.value(b).shape()),
                ));
            }
        }
        let vx = self.value(x).data();
        let vw = self.value(w).data();
        let mut out = vec![0.0; batch * m];
        for r in 0..batch {
            let row = &mut out[r * m..(r + 1) * m];
            if let Some(b) = b {
                row.copy_from_slice(self.value(b).data());
            }
            for i in 0..n {
                let xi = vx[r * n + i];
                if xi == 0.0 {
                    continue;
                }
                for (o, wij) in row.iter_mut().zip(&vw[i * m..(i + 1) * m]) {
                    *o += xi * wij;
                }
            }
        }
        Ok(self.push(Op::Affine { x, w, b }, Tensor::matrix(batch, m, out)))
    }

    /// Concatenates two `[batch, *]` matrices along the trailing axis.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(self.shape_err(NodeKind::Concat, format!("{sa:?} with {sb:?}")));
        }
        let (rows, ca, cb) = (sa[0], sa[1], sb[1]);
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            out.extend_from_slice(self.value(a).row(r));
            out.extend_from_slice(self.value(b).row(r));
        }
        Ok(self.push(Op::Concat(a, b), Tensor::matrix(rows, ca + cb, out)))
    }

    /// Columns `start..start+len` of a `[batch, n]` matrix.
    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 2 || start + len > s[1] {
            return Err(self.shape_err(
                NodeKind::Slice,
                format!("columns {start}..{} of {s:?}", start + len),
            ));
        }
        let mut out = Vec::with_capacity(s[0] * len);
        for r in 0..s[0] {
            out.extend_from_slice(&self.value(x).row(r)[start..start + len]);
        }
        Ok(self.push(Op::Slice { x, start }, Tensor::matrix(s[0], len, out)))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x);
        let value = Tensor::new(vx.shape().to_vec(), vx.data().iter().map(|&v| sigmoid(v)).collect());
        self.push(Op::Sigmoid(x), value)
    }

    /// Gradient reverse layer: identity forward, negated gradient backward.
    pub fn grl(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).clone();
        self.push(Op::Grl(x), value)
    }

    /// Identity forward, no gradient backward.
    pub fn stop_grad(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).clone();
        self.push(Op::StopGrad(x), value)
    }

    /// Per-element binary cross-entropy against `targets`.
    pub fn binary_xent(&mut self, p: NodeId, targets: &[f64]) -> Result<NodeId> {
        let vp = self.value(p);
        if vp.len() != targets.len() {
            return Err(self.shape_err(
                NodeKind::BinaryXent,
                format!("{} probabilities vs {} targets", vp.len(), targets.len()),
            ));
        }
        let data = vp.data().iter().zip(targets).map(|(&p, &y)| binary_xent(p, y)).collect();
        let value = Tensor::new(vp.shape().to_vec(), data);
        Ok(self.push(
            Op::BinaryXent {
                p,
                targets: targets.to_vec(),
            },
            value,
        ))
    }

    /// Row-wise soft-target cross-entropy; `targets` is `[batch, K]` row-major.
    pub fn soft_xent(&mut self, logits: NodeId, targets: &[f64]) -> Result<NodeId> {
        let vl = self.value(logits);
        let s = vl.shape().to_vec();
        if s.len() != 2 || targets.len() != vl.len() {
            return Err(self.shape_err(
                NodeKind::SoftmaxXent,
                format!("logits {s:?} vs {} targets", targets.len()),
            ));
        }
        let (rows, k) = (s[0], s[1]);
        let mut losses = Vec::with_capacity(rows);
        let mut softmax = Vec::with_capacity(rows * k);
        for r in 0..rows {
            let (loss, sm) = soft_xent_with_softmax(vl.row(r), &targets[r * k..(r + 1) * k]);
            losses.push(loss);
            softmax.extend(sm);
        }
        Ok(self.push(
            Op::SoftXent {
                logits,
                targets: targets.to_vec(),
                softmax,
            },
            Tensor::matrix(rows, 1, losses),
        ))
    }

    /// Mean over all entries, producing a scalar.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let n = v.len().max(1) as f64;
        let value = Tensor::scalar(v.data().iter().sum::<f64>() / n);
        self.push(Op::Mean { x, weights: None }, value)
    }

    /// `Σ w_k x_k / n`: per-example weights applied before averaging.
    pub fn weighted_mean(&mut self, x: NodeId, weights: &[f64]) -> Result<NodeId> {
        let v = self.value(x);
        if v.len() != weights.len() {
            return Err(self.shape_err(
                NodeKind::Mean,
                format!("{} values vs {} weights", v.len(), weights.len()),
            ));
        }
        let n = v.len().max(1) as f64;
        let s: f64 = v.data().iter().zip(weights).map(|(a, w)| a * w).sum();
        Ok(self.push(
            Op::Mean {
                x,
                weights: Some(weights.to_vec()),
            },
            Tensor::scalar(s / n),
        ))
    }

    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Op::SumSquares(x), Tensor::scalar(s))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Parameter gradients are accumulated into `store`; the returned
    /// [`Gradients`] expose the gradient at every node for inspection.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(GraphError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], node: NodeId, len: usize) -> &mut Vec<f64> {
            grads[node.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    for (pg, gi) in p.grad.iter_mut().zip(&g) {
                        *pg += gi;
                    }
                }
                Op::Embed {
                    param,
                    rows,
                    weights,
                } => {
                    let p = store.get_mut(*param);
                    let w = p.cols();
                    for (k, (&r, &wt)) in rows.iter().zip(weights).enumerate() {
                        if wt == 0.0 {
                            continue;
                        }
                        let dst = &mut p.grad[r * w..(r + 1) * w];
                        for (d, gi) in dst.iter_mut().zip(&g[k * w..(k + 1) * w]) {
                            *d += wt * gi;
                        }
                    }
                }
                Op::SumFields(x) => {
                    let s = self.value(*x).shape().to_vec();
                    let (b, f, w) = (s[0], s[1], s[2]);
                    let gx = acc(&mut grads, *x, b * f * w);
                    for bi in 0..b {
                        for fi in 0..f {
                            let base = (bi * f + fi) * w;
                            for k in 0..w {
                                gx[base + k] += g[bi * w + k];
                            }
                        }
                    }
                }
                Op::BiInteraction(x) => {
                    let vx = self.value(*x);
                    let s = vx.shape();
                    let (b, f, w) = (s[0], s[1], s[2]);
                    let v = vx.data();
                    let gx = acc(&mut grads, *x, b * f * w);
                    let mut sum = vec![0.0; w];
                    for bi in 0..b {
                        sum.iter_mut().for_each(|s| *s = 0.0);
                        for fi in 0..f {
                            for k in 0..w {
                                sum[k] += v[(bi * f + fi) * w + k];
                            }
                        }
                        for fi in 0..f {
                            let base = (bi * f + fi) * w;
                            for k in 0..w {
                                gx[base + k] += g[bi * w + k] * (sum[k] - v[base + k]);
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for t in [*a, *b] {
                        let gt = acc(&mut grads, t, g.len());
                        for (d, gi) in gt.iter_mut().zip(&g) {
                            *d += gi;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    {
                        let ga = acc(&mut grads, *a, g.len());
                        for ((d, gi), y) in ga.iter_mut().zip(&g).zip(vb) {
                            *d += gi * y;
                        }
                    }
                    let gb = acc(&mut grads, *b, g.len());
                    for ((d, gi), x) in gb.iter_mut().zip(&g).zip(va) {
                        *d += gi * x;
                    }
                }
                Op::Scale(x, c) => {
                    let gx = acc(&mut grads, *x, g.len());
                    for (d, gi) in gx.iter_mut().zip(&g) {
                        *d += c * gi;
                    }
                }
                Op::Affine { x, w, b } => {
                    let vx = self.value(*x);
                    let vw = self.value(*w);
                    let (batch, n) = (vx.shape()[0], vx.shape()[1]);
                    let m = vw.shape()[1];
                    {
                        let gx = acc(&mut grads, *x, batch * n);
                        for r in 0..batch {
                            let gr = &g[r * m..(r + 1) * m];
                            for i in 0..n {
                                let wrow = &vw.data()[i * m..(i + 1) * m];
                                gx[r * n + i] += gr.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                    {
                        let gw = acc(&mut grads, *w, n * m);
                        for r in 0..batch {
                            let gr = &g[r * m..(r + 1) * m];
                            for i in 0..n {
                                let xi = vx.data()[r * n + i];
                                if xi == 0.0 {
                                    continue;
                                }
                                for (d, gj) in gw[i * m..(i + 1) * m].iter_mut().zip(gr) {
                                    *d += xi * gj;
                                }
                            }
                        }
                    }
                    if let Some(b) = b {
                        let gb = acc(&mut grads, *b, m);
                        for r in 0..batch {
                            for (d, gj) in gb.iter_mut().zip(&g[r * m..(r + 1) * m]) {
                                *d += gj;
                            }
                        }
                    }
                }
                Op::Concat(a, b) => {
                    let rows = node.value.shape()[0];
                    let ca = self.value(*a).shape()[1];
                    let cb = self.value(*b).shape()[1];
                    {
                        let ga = acc(&mut grads, *a, rows * ca);
                        for r in 0..rows {
                            for k in 0..ca {
                                ga[r * ca + k] += g[r * (ca + cb) + k];
                            }
                        }
                    }
                    let gb = acc(&mut grads, *b, rows * cb);
                    for r in 0..rows {
                        for k in 0..cb {
                            gb[r * cb + k] += g[r * (ca + cb) + ca + k];
                        }
                    }
                }
                Op::Slice { x, start } => {
                    let sx = self.value(*x).shape().to_vec();
                    let (rows, n) = (sx[0], sx[1]);
                    let len = node.value.shape()[1];
                    let gx = acc(&mut grads, *x, rows * n);
                    for r in 0..rows {
                        for k in 0..len {
                            gx[r * n + start + k] += g[r * len + k];
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let gx = acc(&mut grads, *x, g.len());
                    for ((d, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
                Op::Grl(x) => {
                    let gx = acc(&mut grads, *x, g.len());
                    for (d, gi) in gx.iter_mut().zip(&g) {
                        *d -= gi;
                    }
                }
                Op::StopGrad(_) => {}
                Op::BinaryXent { p, targets } => {
                    let vp = self.value(*p).data();
                    let gp = acc(&mut grads, *p, g.len());
                    for k in 0..g.len() {
                        let pk = vp[k];
                        if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&pk) {
                            continue;
                        }
                        let y = targets[k];
                        gp[k] += g[k] * (-y / pk + (1.0 - y) / (1.0 - pk));
                    }
                }
                Op::SoftXent {
                    logits,
                    targets,
                    softmax,
                } => {
                    let s = self.value(*logits).shape().to_vec();
                    let (rows, k) = (s[0], s[1]);
                    let gl = acc(&mut grads, *logits, rows * k);
                    for r in 0..rows {
                        let t = &targets[r * k..(r + 1) * k];
                        let mass: f64 = t.iter().sum();
                        for j in 0..k {
                            gl[r * k + j] += g[r] * (softmax[r * k + j] * mass - t[j]);
                        }
                    }
                }
                Op::Mean { x, weights } => {
                    let n = self.value(*x).len();
                    let scale = g[0] / n.max(1) as f64;
                    let gx = acc(&mut grads, *x, n);
                    match weights {
                        Some(w) => {
                            for (d, wi) in gx.iter_mut().zip(w) {
                                *d += scale * wi;
                            }
                        }
                        None => gx.iter_mut().for_each(|d| *d += scale),
                    }
                }
                Op::SumSquares(x) => {
                    let vx = self.value(*x).data();
                    let gx = acc(&mut grads, *x, vx.len());
                    for (d, v) in gx.iter_mut().zip(vx) {
                        *d += 2.0 * g[0] * v;
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}
