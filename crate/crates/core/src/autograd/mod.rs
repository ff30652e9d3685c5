//! Tape-based reverse-mode automatic differentiation over f64 tensors.
//!
//! Every operation appends a node whose value is computed eagerly. `grad`
//! walks the tape backwards and emits the vector-Jacobian products as new
//! tape nodes, so the result of one differentiation is itself a
//! differentiable expression. That property is load-bearing: the critic's
//! gradient penalty takes the gradient of an input gradient's norm with
//! respect to the critic weights.
//!
//! Broadcasting is explicit (`bcast_*` ops) and elementwise arithmetic
//! requires exactly matching shapes, which turns silent shape bugs into
//! immediate panics.

pub mod kernels;

use ndarray::{ArrayD, Axis, Ix2, Ix4, IxDyn};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    SumAll(NodeId),
    BcastAll(NodeId),
    SumSamples(NodeId),
    BcastSamples(NodeId),
    SumAxis1(NodeId),
    BcastAxis1(NodeId),
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Reshape(NodeId),
    ConcatC(Vec<NodeId>),
    SliceC { x: NodeId, from: usize },
    EmbedC { x: NodeId, from: usize },
    Conv { x: NodeId, w: NodeId, stride: usize, pad: usize },
    ConvGx { gy: NodeId, w: NodeId, stride: usize, pad: usize },
    ConvGw { x: NodeId, gy: NodeId, stride: usize, pad: usize },
    PixelShuffle(NodeId, usize),
    PixelUnshuffle(NodeId, usize),
}

struct Node {
    op: Op,
    value: ArrayD<f64>,
}

/// Append-only computation record.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn as4(v: &ArrayD<f64>) -> ndarray::ArrayView4<'_, f64> {
    v.view().into_dimensionality::<Ix4>().expect("node value must be 4-D")
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

    pub fn value(&self, id: NodeId) -> &ArrayD<f64> {
        &self.nodes[id.0].value
    }

    /// Value of a node that must hold exactly one element.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "scalar_value on node with {} elements", v.len());
        *v.iter().next().unwrap()
    }

    fn shape(&self, id: NodeId) -> Vec<usize> {
        self.value(id).shape().to_vec()
    }

    fn push(&mut self, op: Op, value: ArrayD<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert an input node: a parameter, data tensor, or stop-gradient
    /// constant. The tape does not distinguish; `grad` returns gradients for
    /// whichever leaves are asked about.
    pub fn leaf(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.leaf(ArrayD::from_elem(IxDyn(&[]), v))
    }

    fn binary_same_shape(&self, a: NodeId, b: NodeId, what: &str) {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "{what} operands differ in shape"
        );
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, "add");
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, "sub");
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, "mul");
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, "div");
        let v = &self.nodes[a.0].value / &self.nodes[b.0].value;
        self.push(Op::Div(a, b), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a.0].value.mapv(|x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a.0].value.mapv(|x| x + c);
        self.push(Op::AddScalar(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.mapv(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.mapv(f64::ln);
        self.push(Op::Ln(a), v)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.mapv(f64::sqrt);
        self.push(Op::Sqrt(a), v)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.mul(a, a)
    }

    /// Sum of all elements, as a 0-D node.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = ArrayD::from_elem(IxDyn(&[]), self.nodes[a.0].value.sum());
        self.push(Op::SumAll(a), v)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len();
        assert!(n > 0, "mean_all over empty tensor");
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Broadcast a 0-D node to an arbitrary shape.
    pub fn bcast_all(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let s = self.scalar_value(a);
        let v = ArrayD::from_elem(IxDyn(shape), s);
        self.push(Op::BcastAll(a), v)
    }

    /// Per-sample reduction: sum over every axis except 0, yielding shape (N,).
    pub fn sum_samples(&mut self, a: NodeId) -> NodeId {
        let val = &self.nodes[a.0].value;
        assert!(val.ndim() >= 1, "sum_samples needs a leading sample axis");
        let v: Vec<f64> = val.outer_iter().map(|s| s.sum()).collect();
        let v = ArrayD::from_shape_vec(IxDyn(&[val.len_of(Axis(0))]), v).unwrap();
        self.push(Op::SumSamples(a), v)
    }

    /// Broadcast a (N,) node along every trailing axis of `shape`.
    pub fn bcast_samples(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let src = &self.nodes[a.0].value;
        assert_eq!(src.ndim(), 1, "bcast_samples source must be 1-D");
        assert_eq!(src.len(), shape[0], "bcast_samples leading axis mismatch");
        let mut v = ArrayD::zeros(IxDyn(shape));
        for (mut lane, &s) in v.outer_iter_mut().zip(src.iter()) {
            lane.fill(s);
        }
        self.push(Op::BcastSamples(a), v)
    }

    /// Per-channel reduction: sum over every axis except 1, yielding shape (C,).
    pub fn sum_axis1(&mut self, a: NodeId) -> NodeId {
        let val = &self.nodes[a.0].value;
        assert!(val.ndim() >= 2, "sum_axis1 needs at least two axes");
        let v: Vec<f64> = val.axis_iter(Axis(1)).map(|s| s.sum()).collect();
        let v = ArrayD::from_shape_vec(IxDyn(&[val.len_of(Axis(1))]), v).unwrap();
        self.push(Op::SumAxis1(a), v)
    }

    /// Broadcast a (C,) node along every other axis of `shape`.
    pub fn bcast_axis1(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let src = &self.nodes[a.0].value;
        assert_eq!(src.ndim(), 1, "bcast_axis1 source must be 1-D");
        assert!(shape.len() >= 2 && src.len() == shape[1], "bcast_axis1 channel mismatch");
        let mut v = ArrayD::zeros(IxDyn(shape));
        for (mut lane, &s) in v.axis_iter_mut(Axis(1)).zip(src.iter()) {
            lane.fill(s);
        }
        self.push(Op::BcastAxis1(a), v)
    }

    /// 2-D matrix product with optional operand transposes.
    pub fn matmul(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> NodeId {
        let av = self.value(a).view().into_dimensionality::<Ix2>().expect("matmul lhs must be 2-D");
        let bv = self.value(b).view().into_dimensionality::<Ix2>().expect("matmul rhs must be 2-D");
        let av = if ta { av.reversed_axes() } else { av };
        let bv = if tb { bv.reversed_axes() } else { bv };
        assert_eq!(av.ncols(), bv.nrows(), "matmul inner dimension mismatch");
        let v = av.dot(&bv).as_standard_layout().into_owned().into_dyn();
        self.push(Op::MatMul { a, b, ta, tb }, v)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let val = &self.nodes[a.0].value;
        assert_eq!(val.len(), shape.iter().product::<usize>(), "reshape changes element count");
        let v = val
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape of standard-layout value");
        self.push(Op::Reshape(a), v)
    }

    /// Concatenate 4-D nodes along the channel axis.
    pub fn concat_channels(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let views: Vec<_> = parts.iter().map(|&p| as4(self.value(p))).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_channels shape mismatch").into_dyn();
        self.push(Op::ConcatC(parts.to_vec()), v)
    }

    /// Channel range [from, to) of a 4-D node.
    pub fn slice_channels(&mut self, x: NodeId, from: usize, to: usize) -> NodeId {
        let v4 = as4(self.value(x));
        assert!(from < to && to <= v4.dim().1, "slice_channels range out of bounds");
        let v = v4.slice(ndarray::s![.., from..to, .., ..]).to_owned().into_dyn();
        self.push(Op::SliceC { x, from }, v)
    }

    /// Place a 4-D node into channels [from, from+c) of a zero tensor with
    /// `total` channels: the adjoint of `slice_channels`.
    pub fn embed_channels(&mut self, x: NodeId, from: usize, total: usize) -> NodeId {
        let v4 = as4(self.value(x));
        let (n, c, h, w) = v4.dim();
        assert!(from + c <= total, "embed_channels range out of bounds");
        let mut v = ndarray::Array4::<f64>::zeros((n, total, h, w));
        v.slice_mut(ndarray::s![.., from..from + c, .., ..]).assign(&v4);
        self.push(Op::EmbedC { x, from }, v.into_dyn())
    }

    pub fn conv(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> NodeId {
        let v = kernels::conv2d(&as4(self.value(x)), &as4(self.value(w)), stride, pad).into_dyn();
        self.push(Op::Conv { x, w, stride, pad }, v)
    }

    pub fn conv_input_grad(&mut self, gy: NodeId, w: NodeId, stride: usize, pad: usize, hw: (usize, usize)) -> NodeId {
        let v = kernels::conv2d_input_grad(&as4(self.value(gy)), &as4(self.value(w)), stride, pad, hw).into_dyn();
        self.push(Op::ConvGx { gy, w, stride, pad }, v)
    }

    pub fn conv_weight_grad(&mut self, x: NodeId, gy: NodeId, stride: usize, pad: usize, k: usize) -> NodeId {
        let v = kernels::conv2d_weight_grad(&as4(self.value(x)), &as4(self.value(gy)), stride, pad, k).into_dyn();
        self.push(Op::ConvGw { x, gy, stride, pad }, v)
    }

    pub fn pixel_shuffle(&mut self, x: NodeId, r: usize) -> NodeId {
        let v = kernels::pixel_shuffle(&as4(self.value(x)), r).into_dyn();
        self.push(Op::PixelShuffle(x, r), v)
    }

    pub fn pixel_unshuffle(&mut self, x: NodeId, r: usize) -> NodeId {
        let v = kernels::pixel_unshuffle(&as4(self.value(x)), r).into_dyn();
        self.push(Op::PixelUnshuffle(x, r), v)
    }

    fn accumulate(&mut self, adj: &mut [Option<NodeId>], target: NodeId, contribution: NodeId) {
        adj[target.0] = Some(match adj[target.0] {
            None => contribution,
            Some(prev) => self.add(prev, contribution),
        });
    }

    /// Reverse-mode gradients of the scalar node `y` with respect to `wrt`.
    ///
    /// The returned nodes live on this tape, so they can be reduced, combined
    /// into new losses, and differentiated again. Entries are `None` when `y`
    /// does not depend on the corresponding input.
    pub fn grad(&mut self, y: NodeId, wrt: &[NodeId]) -> Vec<Option<NodeId>> {
        assert_eq!(self.value(y).len(), 1, "grad target must be scalar");
        let mut adj: Vec<Option<NodeId>> = vec![None; self.nodes.len()];
        let seed_shape = self.shape(y);
        adj[y.0] = Some(self.leaf(ArrayD::from_elem(IxDyn(&seed_shape), 1.0)));

        for id in (0..=y.0).rev() {
            let Some(u) = adj[id] else { continue };
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(&mut adj, a, u);
                    self.accumulate(&mut adj, b, u);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut adj, a, u);
                    let nb = self.scale(u, -1.0);
                    self.accumulate(&mut adj, b, nb);
                }
                Op::Mul(a, b) => {
                    let ga = self.mul(u, b);
                    let gb = self.mul(u, a);
                    self.accumulate(&mut adj, a, ga);
                    self.accumulate(&mut adj, b, gb);
                }
                Op::Div(a, b) => {
                    let ga = self.div(u, b);
                    self.accumulate(&mut adj, a, ga);
                    // d(a/b)/db = -(a/b)/b, reusing this node's own value.
                    let uy = self.mul(u, NodeId(id));
                    let gb = self.div(uy, b);
                    let gb = self.scale(gb, -1.0);
                    self.accumulate(&mut adj, b, gb);
                }
                Op::Scale(a, c) => {
                    let ga = self.scale(u, c);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::AddScalar(a) => {
                    self.accumulate(&mut adj, a, u);
                }
                Op::Exp(a) => {
                    let ga = self.mul(u, NodeId(id));
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Ln(a) => {
                    let ga = self.div(u, a);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Sqrt(a) => {
                    let half = self.scale(u, 0.5);
                    let ga = self.div(half, NodeId(id));
                    self.accumulate(&mut adj, a, ga);
                }
                Op::SumAll(a) => {
                    let sh = self.shape(a);
                    let ga = self.bcast_all(u, &sh);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::BcastAll(a) => {
                    let ga = self.sum_all(u);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::SumSamples(a) => {
                    let sh = self.shape(a);
                    let ga = self.bcast_samples(u, &sh);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::BcastSamples(a) => {
                    let ga = self.sum_samples(u);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::SumAxis1(a) => {
                    let sh = self.shape(a);
                    let ga = self.bcast_axis1(u, &sh);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::BcastAxis1(a) => {
                    let ga = self.sum_axis1(u);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::MatMul { a, b, ta, tb } => {
                    let ga = if ta {
                        self.matmul(b, u, tb, true)
                    } else {
                        self.matmul(u, b, false, !tb)
                    };
                    self.accumulate(&mut adj, a, ga);
                    let gb = if tb {
                        self.matmul(u, a, true, ta)
                    } else {
                        self.matmul(a, u, !ta, false)
                    };
                    self.accumulate(&mut adj, b, gb);
                }
                Op::Reshape(a) => {
                    let sh = self.shape(a);
                    let ga = self.reshape(u, &sh);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::ConcatC(parts) => {
                    let mut from = 0;
                    for p in parts {
                        let c = self.value(p).shape()[1];
                        let gp = self.slice_channels(u, from, from + c);
                        self.accumulate(&mut adj, p, gp);
                        from += c;
                    }
                }
                Op::SliceC { x, from } => {
                    let total = self.value(x).shape()[1];
                    let gx = self.embed_channels(u, from, total);
                    self.accumulate(&mut adj, x, gx);
                }
                Op::EmbedC { x, from } => {
                    let c = self.value(x).shape()[1];
                    let gx = self.slice_channels(u, from, from + c);
                    self.accumulate(&mut adj, x, gx);
                }
                Op::Conv { x, w, stride, pad } => {
                    let xs = self.shape(x);
                    let gx = self.conv_input_grad(u, w, stride, pad, (xs[2], xs[3]));
                    self.accumulate(&mut adj, x, gx);
                    let k = self.shape(w)[2];
                    let gw = self.conv_weight_grad(x, u, stride, pad, k);
                    self.accumulate(&mut adj, w, gw);
                }
                Op::ConvGx { gy, w, stride, pad } => {
                    let ggy = self.conv(u, w, stride, pad);
                    self.accumulate(&mut adj, gy, ggy);
                    let k = self.shape(w)[2];
                    let gw = self.conv_weight_grad(u, gy, stride, pad, k);
                    self.accumulate(&mut adj, w, gw);
                }
                Op::ConvGw { x, gy, stride, pad } => {
                    let xs = self.shape(x);
                    let gx = self.conv_input_grad(gy, u, stride, pad, (xs[2], xs[3]));
                    self.accumulate(&mut adj, x, gx);
                    let ggy = self.conv(x, u, stride, pad);
                    self.accumulate(&mut adj, gy, ggy);
                }
                Op::PixelShuffle(a, r) => {
                    let ga = self.pixel_unshuffle(u, r);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::PixelUnshuffle(a, r) => {
                    let ga = self.pixel_shuffle(u, r);
                    self.accumulate(&mut adj, a, ga);
                }
            }
        }

        wrt.iter().map(|x| adj[x.0]).collect()
    }
}

/// Numerical differentiation utilities, used by tests at every level of the
/// stack to validate analytic gradients.
pub mod check {
    use ndarray::ArrayD;

    /// Central-difference gradient of a scalar function of several tensors.
    pub fn finite_diff_grad<F>(mut f: F, xs: &[ArrayD<f64>], h: f64) -> Vec<ArrayD<f64>>
    where
        F: FnMut(&[ArrayD<f64>]) -> f64,
    {
        let mut grads = Vec::with_capacity(xs.len());
        let mut work: Vec<ArrayD<f64>> = xs.to_vec();
        for i in 0..xs.len() {
            let mut g = ArrayD::zeros(xs[i].raw_dim());
            for idx in 0..xs[i].len() {
                let orig = work[i].as_slice().unwrap()[idx];
                work[i].as_slice_mut().unwrap()[idx] = orig + h;
                let fp = f(&work);
                work[i].as_slice_mut().unwrap()[idx] = orig - h;
                let fm = f(&work);
                work[i].as_slice_mut().unwrap()[idx] = orig;
                g.as_slice_mut().unwrap()[idx] = (fp - fm) / (2.0 * h);
            }
            grads.push(g);
        }
        grads
    }

    /// Worst-case elementwise deviation, normalized by max(1, |a|, |b|) so it
    /// reads as absolute error for small gradients and relative for large.
    pub fn max_relative_error(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
        assert_eq!(a.shape(), b.shape(), "gradient shape mismatch");
        a.iter()
            .zip(b.iter())
            .map(|(&x, &y)| (x - y).abs() / 1.0_f64.max(x.abs()).max(y.abs()))
            .fold(0.0, f64::max)
    }
}

pub use check::{finite_diff_grad, max_relative_error};
