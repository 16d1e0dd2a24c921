//! Reverse-mode autodiff tape over `f64` ndarrays.
//!
//! Every differentiable computation in this crate is expressed as a [`Graph`]
//! of primitive ops. Nodes are appended in topological order, so the backward
//! pass is a single reverse sweep. All arrays are owned, contiguous,
//! standard-layout `ArrayD<f64>`; scalars are 0-d arrays.
//!
//! The engine is deliberately small: only the ops the toy video model needs,
//! each with a hand-written adjoint that is checked against central finite
//! differences in the test suite (see [`check`]).

mod conv;
pub mod check;
pub mod optim;

use ndarray::{ArrayD, Axis, Ix2, IxDyn, Slice};

pub use conv::Conv3dSpec;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    /// Leaf with gradient tracking.
    Input,
    /// Leaf without gradient tracking.
    Constant,
    Add,
    Sub,
    Mul,
    AddScalar,
    MulScalar(f64),
    /// Axis permutation (generalized transpose).
    Permute { axes: Vec<usize> },
    /// `x [.., D] + b [D]`, broadcast over leading axes.
    AddBias,
    /// `x [.., D] * w [D]`, broadcast over leading axes.
    MulBias,
    /// `x [C, ..] + b [C]`, broadcast over trailing axes.
    AddChanBias,
    /// 2-D matrix product `[m, k] x [k, n]`.
    MatMul,
    Transpose2d,
    Reshape { from: Vec<usize> },
    SliceAxis { axis: usize, start: usize, len: usize },
    Concat { axis: usize, sizes: Vec<usize> },
    /// Row lookup into a `[V, D]` table.
    Embed { ids: Vec<usize> },
    Conv3d { spec: Conv3dSpec },
    /// Nearest-neighbour 2x spatial upsampling of `[C, T, H, W]`.
    Upsample2x,
    /// Causal temporal upsampling `[C, T, H, W] -> [C, 2T-1, H, W]`:
    /// slot 0 stays single, every later slot is repeated twice.
    RepeatCausalTemporal,
    Silu,
    Sigmoid,
    Square,
    /// Root-mean-square normalization over the last axis.
    RmsNorm { eps: f64 },
    /// Softmax over the last axis.
    Softmax,
    /// Sum of all elements -> 0-d scalar.
    Sum,
    /// Euclidean norm of all elements -> 0-d scalar. Subgradient 0 at 0.
    L2Norm,
    /// Identity forward, blocks gradient flow.
    Detach,
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
    parents: Vec<NodeId>,
    requires_grad: bool,
}

/// A tape of primitive ops, built forward and differentiated backward.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a node.
    pub fn value(&self, id: NodeId) -> &ArrayD<f64> {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 0-d node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = &self.nodes[id.0].value;
        debug_assert!(v.len() == 1, "scalar() on non-scalar node");
        v.iter().next().copied().unwrap()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op, parents: Vec<NodeId>) -> NodeId {
        let requires_grad = match op {
            Op::Input => true,
            Op::Constant => false,
            Op::Detach => false,
            _ => parents.iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            parents,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Gradient-tracked leaf.
    pub fn input(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(value, Op::Input, vec![])
    }

    /// Untracked leaf.
    pub fn constant(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(value, Op::Constant, vec![])
    }

    pub fn scalar_constant(&mut self, value: f64) -> NodeId {
        self.constant(ArrayD::from_elem(IxDyn(&[]), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.nodes[a.0].value.shape(),
            self.nodes[b.0].value.shape(),
            "add: shape mismatch"
        );
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.nodes[a.0].value.shape(),
            self.nodes[b.0].value.shape(),
            "sub: shape mismatch"
        );
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub, vec![a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.nodes[a.0].value.shape(),
            self.nodes[b.0].value.shape(),
            "mul: shape mismatch"
        );
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul, vec![a, b])
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = &self.nodes[a.0].value + s;
        self.push(v, Op::AddScalar, vec![a])
    }

    pub fn mul_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = &self.nodes[a.0].value * s;
        self.push(v, Op::MulScalar(s), vec![a])
    }

    /// Axis permutation, e.g. `[C, T, H, W] -> [T, H, W, C]` with `[1, 2, 3, 0]`.
    pub fn permute(&mut self, a: NodeId, axes: &[usize]) -> NodeId {
        let v = self.nodes[a.0]
            .value
            .view()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .to_owned();
        self.push(v, Op::Permute { axes: axes.to_vec() }, vec![a])
    }

    /// `x [.., D] + b [D]`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let d = *self.nodes[x.0].value.shape().last().expect("add_bias: 0-d x");
        assert_eq!(self.nodes[b.0].value.shape(), [d], "add_bias: bias shape");
        let bv = self.nodes[b.0].value.clone();
        let mut v = self.nodes[x.0].value.clone();
        for mut row in v.rows_mut() {
            row += &bv.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        }
        self.push(v, Op::AddBias, vec![x, b])
    }

    /// `x [.., D] * w [D]`.
    pub fn mul_bias(&mut self, x: NodeId, w: NodeId) -> NodeId {
        let d = *self.nodes[x.0].value.shape().last().expect("mul_bias: 0-d x");
        assert_eq!(self.nodes[w.0].value.shape(), [d], "mul_bias: weight shape");
        let wv = self.nodes[w.0].value.clone();
        let mut v = self.nodes[x.0].value.clone();
        for mut row in v.rows_mut() {
            row *= &wv.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        }
        self.push(v, Op::MulBias, vec![x, w])
    }

    /// `x [C, ..] + b [C]`.
    pub fn add_chan_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let c = self.nodes[x.0].value.shape()[0];
        assert_eq!(self.nodes[b.0].value.shape(), [c], "add_chan_bias: bias shape");
        let bv = self.nodes[b.0].value.clone();
        let mut v = self.nodes[x.0].value.clone();
        for (ci, mut lane) in v.axis_iter_mut(Axis(0)).enumerate() {
            lane += bv[[ci]];
        }
        self.push(v, Op::AddChanBias, vec![x, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.nodes[a.0]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul: a not 2-d");
        let bv = self.nodes[b.0]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul: b not 2-d");
        assert_eq!(av.shape()[1], bv.shape()[0], "matmul: inner dims");
        let v = av.dot(&bv).into_dyn();
        self.push(v, Op::MatMul, vec![a, b])
    }

    pub fn transpose2d(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("transpose2d: not 2-d")
            .t()
            .as_standard_layout()
            .to_owned()
            .into_dyn();
        self.push(v, Op::Transpose2d, vec![a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let from = self.nodes[a.0].value.shape().to_vec();
        let v = self.nodes[a.0]
            .value
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: element count mismatch");
        self.push(v, Op::Reshape { from }, vec![a])
    }

    pub fn slice_axis(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> NodeId {
        let v = self.nodes[a.0]
            .value
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .as_standard_layout()
            .to_owned();
        self.push(v, Op::SliceAxis { axis, start, len }, vec![a])
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> NodeId {
        assert!(!parts.is_empty(), "concat: no parts");
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views)
            .expect("concat: incompatible shapes")
            .as_standard_layout()
            .to_owned();
        let sizes = parts
            .iter()
            .map(|p| self.nodes[p.0].value.shape()[axis])
            .collect();
        self.push(v, Op::Concat { axis, sizes }, parts.to_vec())
    }

    /// Row lookup: `table [V, D]` -> `[ids.len(), D]`.
    pub fn embed(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = self.nodes[table.0]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("embed: table not 2-d");
        let d = t.shape()[1];
        let mut v = ndarray::Array2::<f64>::zeros((ids.len(), d));
        for (r, &id) in ids.iter().enumerate() {
            assert!(id < t.shape()[0], "embed: id out of range");
            v.row_mut(r).assign(&t.row(id));
        }
        self.push(v.into_dyn(), Op::Embed { ids: ids.to_vec() }, vec![table])
    }

    /// Causal 3-D convolution. `x [C, T, H, W]`, `kernel [O, C, kt, kh, kw]`.
    /// Temporal padding is left-only (`kt - 1` zeros); spatial padding is
    /// symmetric `(k - 1) / 2` (odd kernels).
    pub fn conv3d(&mut self, x: NodeId, kernel: NodeId, stride: (usize, usize, usize)) -> NodeId {
        let spec = Conv3dSpec::infer(
            self.nodes[x.0].value.shape(),
            self.nodes[kernel.0].value.shape(),
            stride,
        );
        let v = conv::conv3d_forward(&self.nodes[x.0].value, &self.nodes[kernel.0].value, &spec);
        self.push(v, Op::Conv3d { spec }, vec![x, kernel])
    }

    pub fn upsample2x(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let (c, t, h, w) = dims4(xv.shape());
        let mut v = ArrayD::<f64>::zeros(IxDyn(&[c, t, 2 * h, 2 * w]));
        for ci in 0..c {
            for ti in 0..t {
                for y in 0..h {
                    for xw in 0..w {
                        let val = xv[[ci, ti, y, xw]];
                        v[[ci, ti, 2 * y, 2 * xw]] = val;
                        v[[ci, ti, 2 * y, 2 * xw + 1]] = val;
                        v[[ci, ti, 2 * y + 1, 2 * xw]] = val;
                        v[[ci, ti, 2 * y + 1, 2 * xw + 1]] = val;
                    }
                }
            }
        }
        self.push(v, Op::Upsample2x, vec![x])
    }

    pub fn repeat_causal_temporal(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let (c, t, h, w) = dims4(xv.shape());
        assert!(t >= 1);
        let to = 2 * t - 1;
        let mut v = ArrayD::<f64>::zeros(IxDyn(&[c, to, h, w]));
        for ci in 0..c {
            for ti in 0..to {
                let src = ti.div_ceil(2);
                for y in 0..h {
                    for xw in 0..w {
                        v[[ci, ti, y, xw]] = xv[[ci, src, y, xw]];
                    }
                }
            }
        }
        self.push(v, Op::RepeatCausalTemporal, vec![x])
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.mapv(|x| x * sigmoid(x));
        self.push(v, Op::Silu, vec![a])
    }

    pub fn sigmoid_op(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.mapv(sigmoid);
        self.push(v, Op::Sigmoid, vec![a])
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.mapv(|x| x * x);
        self.push(v, Op::Square, vec![a])
    }

    pub fn rms_norm(&mut self, a: NodeId, eps: f64) -> NodeId {
        let mut v = self.nodes[a.0].value.clone();
        for mut row in v.rows_mut() {
            let d = row.len() as f64;
            let ms = row.iter().map(|x| x * x).sum::<f64>() / d;
            let inv = 1.0 / (ms + eps).sqrt();
            row.mapv_inplace(|x| x * inv);
        }
        self.push(v, Op::RmsNorm { eps }, vec![a])
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.nodes[a.0].value.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum: f64 = row.iter().sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v, Op::Softmax, vec![a])
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a.0].value.sum();
        self.push(ArrayD::from_elem(IxDyn(&[]), s), Op::Sum, vec![a])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a.0].value.len() as f64;
        let s = self.sum(a);
        self.mul_scalar(s, 1.0 / n)
    }

    /// Euclidean norm of all elements, as a 0-d scalar.
    pub fn l2_norm(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a.0]
            .value
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        self.push(ArrayD::from_elem(IxDyn(&[]), n), Op::L2Norm, vec![a])
    }

    pub fn detach(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.clone();
        self.push(v, Op::Detach, vec![a])
    }

    /// Mean squared error over all elements of two same-shape nodes.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        let sq = self.square(d);
        self.mean(sq)
    }

    /// Reverse sweep from a scalar `loss`. Returns per-node gradients; leaves
    /// that do not require grad (and non-contributing nodes) hold `None`.
    pub fn backward(&mut self, loss: NodeId) -> Gradients {
        assert!(
            self.nodes[loss.0].value.len() == 1,
            "backward: loss must be scalar"
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(ArrayD::from_elem(self.nodes[loss.0].value.raw_dim(), 1.0));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, id: usize, g: &ArrayD<f64>, grads: &mut [Option<ArrayD<f64>>]) {
        let node = &self.nodes[id];
        let parents = &node.parents;
        let parent_rg: Vec<bool> = parents
            .iter()
            .map(|p| self.nodes[p.0].requires_grad)
            .collect();
        let mut acc = |pid: NodeId, delta: ArrayD<f64>| {
            let slot = &mut grads[pid.0];
            match slot {
                Some(existing) => *existing += &delta,
                None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Input | Op::Constant | Op::Detach => {}
            Op::Add => {
                if parent_rg[0] {
                    acc(parents[0], g.clone());
                }
                if parent_rg[1] {
                    acc(parents[1], g.clone());
                }
            }
            Op::Sub => {
                if parent_rg[0] {
                    acc(parents[0], g.clone());
                }
                if parent_rg[1] {
                    acc(parents[1], -g.clone());
                }
            }
            Op::Mul => {
                if parent_rg[0] {
                    acc(parents[0], g * &self.nodes[parents[1].0].value);
                }
                if parent_rg[1] {
                    acc(parents[1], g * &self.nodes[parents[0].0].value);
                }
            }
            Op::AddScalar => {
                if parent_rg[0] {
                    acc(parents[0], g.clone());
                }
            }
            Op::MulScalar(s) => {
                if parent_rg[0] {
                    acc(parents[0], g * *s);
                }
            }
            Op::Permute { axes } => {
                if parent_rg[0] {
                    let mut inverse = vec![0usize; axes.len()];
                    for (i, &a) in axes.iter().enumerate() {
                        inverse[a] = i;
                    }
                    let back = g
                        .view()
                        .permuted_axes(IxDyn(&inverse))
                        .as_standard_layout()
                        .to_owned();
                    acc(parents[0], back);
                }
            }
            Op::AddBias => {
                if parent_rg[0] {
                    acc(parents[0], g.clone());
                }
                if parent_rg[1] {
                    let d = *g.shape().last().unwrap();
                    let mut gb = ndarray::Array1::<f64>::zeros(d);
                    for row in g.rows() {
                        gb += &row;
                    }
                    acc(parents[1], gb.into_dyn());
                }
            }
            Op::MulBias => {
                let w = &self.nodes[parents[1].0].value;
                let x = &self.nodes[parents[0].0].value;
                if parent_rg[0] {
                    let mut gx = g.clone();
                    let wv = w.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                    for mut row in gx.rows_mut() {
                        row *= &wv;
                    }
                    acc(parents[0], gx);
                }
                if parent_rg[1] {
                    let d = *g.shape().last().unwrap();
                    let mut gw = ndarray::Array1::<f64>::zeros(d);
                    for (grow, xrow) in g.rows().into_iter().zip(x.rows()) {
                        for i in 0..d {
                            gw[i] += grow[i] * xrow[i];
                        }
                    }
                    acc(parents[1], gw.into_dyn());
                }
            }
            Op::AddChanBias => {
                if parent_rg[0] {
                    acc(parents[0], g.clone());
                }
                if parent_rg[1] {
                    let c = g.shape()[0];
                    let mut gb = ndarray::Array1::<f64>::zeros(c);
                    for (ci, lane) in g.axis_iter(Axis(0)).enumerate() {
                        gb[ci] = lane.sum();
                    }
                    acc(parents[1], gb.into_dyn());
                }
            }
            Op::MatMul => {
                let a = self.nodes[parents[0].0]
                    .value
                    .view()
                    .into_dimensionality::<Ix2>()
                    .unwrap();
                let b = self.nodes[parents[1].0]
                    .value
                    .view()
                    .into_dimensionality::<Ix2>()
                    .unwrap();
                let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                if parent_rg[0] {
                    acc(parents[0], gv.dot(&b.t()).into_dyn());
                }
                if parent_rg[1] {
                    acc(parents[1], a.t().dot(&gv).into_dyn());
                }
            }
            Op::Transpose2d => {
                if parent_rg[0] {
                    let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                    acc(
                        parents[0],
                        gv.t().as_standard_layout().to_owned().into_dyn(),
                    );
                }
            }
            Op::Reshape { from } => {
                if parent_rg[0] {
                    let back = g
                        .clone()
                        .into_shape_with_order(IxDyn(from))
                        .expect("reshape backward");
                    acc(parents[0], back);
                }
            }
            Op::SliceAxis { axis, start, len } => {
                if parent_rg[0] {
                    let mut full = ArrayD::<f64>::zeros(self.nodes[parents[0].0].value.raw_dim());
                    full.slice_axis_mut(Axis(*axis), Slice::from(*start..start + len))
                        .assign(g);
                    acc(parents[0], full);
                }
            }
            Op::Concat { axis, sizes } => {
                let mut offset = 0;
                for (i, &sz) in sizes.iter().enumerate() {
                    if parent_rg[i] {
                        let part = g
                            .slice_axis(Axis(*axis), Slice::from(offset..offset + sz))
                            .as_standard_layout()
                            .to_owned();
                        acc(parents[i], part);
                    }
                    offset += sz;
                }
            }
            Op::Embed { ids } => {
                if parent_rg[0] {
                    let mut gt = ArrayD::<f64>::zeros(self.nodes[parents[0].0].value.raw_dim());
                    let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = gt.index_axis_mut(Axis(0), id);
                        row += &gv.row(r);
                    }
                    acc(parents[0], gt);
                }
            }
            Op::Conv3d { spec } => {
                let x = &self.nodes[parents[0].0].value;
                let k = &self.nodes[parents[1].0].value;
                let (gx, gk) = conv::conv3d_backward(x, k, g, spec, parent_rg[0], parent_rg[1]);
                if let Some(gx) = gx {
                    acc(parents[0], gx);
                }
                if let Some(gk) = gk {
                    acc(parents[1], gk);
                }
            }
            Op::Upsample2x => {
                if parent_rg[0] {
                    let (c, t, h2, w2) = dims4(g.shape());
                    let (h, w) = (h2 / 2, w2 / 2);
                    let mut gx = ArrayD::<f64>::zeros(IxDyn(&[c, t, h, w]));
                    for ci in 0..c {
                        for ti in 0..t {
                            for y in 0..h {
                                for xw in 0..w {
                                    gx[[ci, ti, y, xw]] = g[[ci, ti, 2 * y, 2 * xw]]
                                        + g[[ci, ti, 2 * y, 2 * xw + 1]]
                                        + g[[ci, ti, 2 * y + 1, 2 * xw]]
                                        + g[[ci, ti, 2 * y + 1, 2 * xw + 1]];
                                }
                            }
                        }
                    }
                    acc(parents[0], gx);
                }
            }
            Op::RepeatCausalTemporal => {
                if parent_rg[0] {
                    let (c, to, h, w) = dims4(g.shape());
                    let t = (to + 1) / 2;
                    let mut gx = ArrayD::<f64>::zeros(IxDyn(&[c, t, h, w]));
                    for ci in 0..c {
                        for ti in 0..to {
                            let src = ti.div_ceil(2);
                            for y in 0..h {
                                for xw in 0..w {
                                    gx[[ci, src, y, xw]] += g[[ci, ti, y, xw]];
                                }
                            }
                        }
                    }
                    acc(parents[0], gx);
                }
            }
            Op::Silu => {
                if parent_rg[0] {
                    let x = &self.nodes[parents[0].0].value;
                    let dv = x.mapv(|x| {
                        let s = sigmoid(x);
                        s + x * s * (1.0 - s)
                    });
                    acc(parents[0], g * &dv);
                }
            }
            Op::Sigmoid => {
                if parent_rg[0] {
                    let y = &node.value;
                    let dv = y.mapv(|y| y * (1.0 - y));
                    acc(parents[0], g * &dv);
                }
            }
            Op::Square => {
                if parent_rg[0] {
                    let x = &self.nodes[parents[0].0].value;
                    acc(parents[0], 2.0 * g * x);
                }
            }
            Op::RmsNorm { eps } => {
                if parent_rg[0] {
                    let x = &self.nodes[parents[0].0].value;
                    let mut gx = ArrayD::<f64>::zeros(x.raw_dim());
                    let d = *x.shape().last().unwrap() as f64;
                    for ((xrow, grow), mut orow) in
                        x.rows().into_iter().zip(g.rows()).zip(gx.rows_mut())
                    {
                        let ms = xrow.iter().map(|v| v * v).sum::<f64>() / d;
                        let inv = 1.0 / (ms + eps).sqrt();
                        let dot: f64 = xrow.iter().zip(grow.iter()).map(|(x, g)| x * g).sum();
                        let k = dot * inv * inv * inv / d;
                        for ((o, &xv), &gv) in orow.iter_mut().zip(xrow.iter()).zip(grow.iter()) {
                            *o = gv * inv - xv * k;
                        }
                    }
                    acc(parents[0], gx);
                }
            }
            Op::Softmax => {
                if parent_rg[0] {
                    let y = &node.value;
                    let mut gx = ArrayD::<f64>::zeros(y.raw_dim());
                    for ((yrow, grow), mut orow) in
                        y.rows().into_iter().zip(g.rows()).zip(gx.rows_mut())
                    {
                        let dot: f64 = yrow.iter().zip(grow.iter()).map(|(y, g)| y * g).sum();
                        for ((o, &yv), &gv) in orow.iter_mut().zip(yrow.iter()).zip(grow.iter()) {
                            *o = (gv - dot) * yv;
                        }
                    }
                    acc(parents[0], gx);
                }
            }
            Op::Sum => {
                if parent_rg[0] {
                    let gs = g.iter().next().copied().unwrap();
                    let shape = self.nodes[parents[0].0].value.raw_dim();
                    acc(parents[0], ArrayD::from_elem(shape, gs));
                }
            }
            Op::L2Norm => {
                if parent_rg[0] {
                    let n = node.value.iter().next().copied().unwrap();
                    let gs = g.iter().next().copied().unwrap();
                    let x = &self.nodes[parents[0].0].value;
                    let gx = if n > 0.0 {
                        x * (gs / n)
                    } else {
                        ArrayD::zeros(x.raw_dim())
                    };
                    acc(parents[0], gx);
                }
            }
        }
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Gradient with respect to a node, if any flowed to it.
    pub fn get(&self, id: NodeId) -> Option<&ArrayD<f64>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `id`, zeros if none flowed.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> ArrayD<f64> {
        match self.get(id) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(IxDyn(shape)),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected 4-d tensor, got {shape:?}");
    (shape[0], shape[1], shape[2], shape[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn matmul_forward_and_backward() {
        let mut g = Graph::new();
        let a = g.input(arr2(&[[1.0, 2.0], [3.0, 4.0]]).into_dyn());
        let b = g.input(arr2(&[[5.0, 6.0], [7.0, 8.0]]).into_dyn());
        let c = g.matmul(a, b);
        assert_eq!(g.value(c), &arr2(&[[19.0, 22.0], [43.0, 50.0]]).into_dyn());
        let loss = g.sum(c);
        let grads = g.backward(loss);
        // d(sum(AB))/dA = ones . B^T
        assert_eq!(
            grads.get(a).unwrap(),
            &arr2(&[[11.0, 15.0], [11.0, 15.0]]).into_dyn()
        );
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let a = g.input(ArrayD::from_elem(IxDyn(&[3]), 2.0));
        let d = g.detach(a);
        let b = g.square(d);
        let loss = g.sum(b);
        let grads = g.backward(loss);
        assert!(grads.get(a).is_none());
    }

    #[test]
    fn l2_norm_zero_has_zero_subgradient() {
        let mut g = Graph::new();
        let a = g.input(ArrayD::zeros(IxDyn(&[4])));
        let n = g.l2_norm(a);
        let grads = g.backward(n);
        let ga = grads.get(a).unwrap();
        assert!(ga.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn repeat_causal_temporal_lengths() {
        let mut g = Graph::new();
        let x = g.input(ArrayD::from_shape_fn(IxDyn(&[1, 3, 1, 1]), |ix| ix[1] as f64));
        let y = g.repeat_causal_temporal(x);
        let v = g.value(y);
        assert_eq!(v.shape(), &[1, 5, 1, 1]);
        let seq: Vec<f64> = (0..5).map(|t| v[[0, t, 0, 0]]).collect();
        assert_eq!(seq, vec![0.0, 1.0, 1.0, 2.0, 2.0]);
    }
}
