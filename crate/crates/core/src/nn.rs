//! Layer primitives: convolution and linear layers with their parameters,
//! activations, initialization, and the graph helpers shared by all three
//! networks.
//!
//! A layer owns plain f64 arrays. `stage` pushes them onto a tape as leaves
//! and returns a staged handle whose `apply` extends the graph; the leaf ids
//! come back in the same order as `param_names`/`params`, which is the
//! contract optimizers and checkpoints rely on.

use ndarray::{Array1, ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{NodeId, Tape};

/// Post-convolution nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// Learned per-channel negative slope.
    PRelu,
    /// Fixed negative slope.
    LeakyRelu(f64),
    /// Identity.
    Linear,
}

/// He-style normal initialization: std = sqrt(2 / fan_in).
pub fn he_normal(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || normal.sample(rng))
}

/// y = max(x, 0) + slope * min(x, 0), with the sign mask captured as a
/// constant of the current values (exact except on the measure-zero kink).
pub fn leaky_relu(t: &mut Tape, x: NodeId, slope: f64) -> NodeId {
    let blend = t.value(x).mapv(|v| if v > 0.0 { 1.0 } else { slope });
    let blend = t.leaf(blend);
    t.mul(x, blend)
}

/// PReLU with learned per-channel slopes `a` of shape (C,) on a 4-D input.
pub fn prelu(t: &mut Tape, x: NodeId, a: NodeId) -> NodeId {
    let pos_mask = t.value(x).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let neg_mask = pos_mask.mapv(|m| 1.0 - m);
    let shape = t.value(x).shape().to_vec();
    let pos_mask = t.leaf(pos_mask);
    let neg_mask = t.leaf(neg_mask);
    let pos = t.mul(x, pos_mask);
    let neg = t.mul(x, neg_mask);
    let slopes = t.bcast_axis1(a, &shape);
    let scaled_neg = t.mul(slopes, neg);
    t.add(pos, scaled_neg)
}

/// Clamp to [lo, hi] with pass-through gradient inside the range and zero
/// gradient outside (masks captured as constants of the current values).
pub fn clamp(t: &mut Tape, x: NodeId, lo: f64, hi: f64) -> NodeId {
    let v = t.value(x);
    let inside = v.mapv(|u| if u > lo && u < hi { 1.0 } else { 0.0 });
    let edges = v.mapv(|u| {
        if u <= lo {
            lo
        } else if u >= hi {
            hi
        } else {
            0.0
        }
    });
    let inside = t.leaf(inside);
    let edges = t.leaf(edges);
    let kept = t.mul(x, inside);
    t.add(kept, edges)
}

/// Mean over the spatial axes of a 4-D node: (N, C, H, W) -> (N, C).
pub fn global_avg_pool(t: &mut Tape, x: NodeId) -> NodeId {
    let shape = t.value(x).shape().to_vec();
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let merged = t.reshape(x, &[n * c, h * w]);
    let sums = t.sum_samples(merged); // (N*C,)
    let sums = t.reshape(sums, &[n, c]);
    t.scale(sums, 1.0 / (h * w) as f64)
}

/// Row-wise L2 normalization of a 2-D node. Callers must reject degenerate
/// rows beforehand; this divides unconditionally.
pub fn l2_normalize_rows(t: &mut Tape, x: NodeId) -> NodeId {
    let shape = t.value(x).shape().to_vec();
    let sq = t.mul(x, x);
    let row_sums = t.sum_samples(sq); // (R,)
    let norms = t.sqrt(row_sums);
    let norms = t.bcast_samples(norms, &shape);
    t.div(x, norms)
}

/// Convolution layer: kernel, bias, geometry, activation.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub w: ArrayD<f64>,
    pub b: ArrayD<f64>,
    pub a: Option<ArrayD<f64>>,
    pub stride: usize,
    pub pad: usize,
    pub act: Activation,
}

/// Tape handles for one staged convolution layer.
#[derive(Debug, Clone, Copy)]
pub struct StagedConv {
    pub w: NodeId,
    pub b: NodeId,
    pub a: Option<NodeId>,
    stride: usize,
    pad: usize,
    act: Activation,
}

impl ConvLayer {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        act: Activation,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        ConvLayer {
            w: he_normal(rng, &[out_channels, in_channels, kernel, kernel], fan_in),
            b: ArrayD::zeros(IxDyn(&[out_channels])),
            a: matches!(act, Activation::PRelu)
                .then(|| ArrayD::from_elem(IxDyn(&[out_channels]), 0.25)),
            stride,
            pad,
            act,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.w.shape()[1]
    }

    /// Push parameters onto the tape; leaf order matches `params`.
    pub fn stage(&self, t: &mut Tape) -> StagedConv {
        StagedConv {
            w: t.leaf(self.w.clone()),
            b: t.leaf(self.b.clone()),
            a: self.a.as_ref().map(|a| t.leaf(a.clone())),
            stride: self.stride,
            pad: self.pad,
            act: self.act,
        }
    }

    pub fn params(&self) -> Vec<&ArrayD<f64>> {
        let mut p = vec![&self.w, &self.b];
        p.extend(self.a.as_ref());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut ArrayD<f64>> {
        match self.a.as_mut() {
            Some(a) => vec![&mut self.w, &mut self.b, a],
            None => vec![&mut self.w, &mut self.b],
        }
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut names = vec![format!("{prefix}.w"), format!("{prefix}.b")];
        if self.a.is_some() {
            names.push(format!("{prefix}.a"));
        }
        names
    }
}

impl StagedConv {
    pub fn leaf_ids(&self) -> Vec<NodeId> {
        let mut ids = vec![self.w, self.b];
        ids.extend(self.a);
        ids
    }

    /// conv -> +bias -> activation.
    pub fn apply(&self, t: &mut Tape, x: NodeId) -> NodeId {
        let y = t.conv(x, self.w, self.stride, self.pad);
        let shape = t.value(y).shape().to_vec();
        let bias = t.bcast_axis1(self.b, &shape);
        let y = t.add(y, bias);
        match self.act {
            Activation::PRelu => prelu(t, y, self.a.expect("PReLU layer staged slopes")),
            Activation::LeakyRelu(slope) => leaky_relu(t, y, slope),
            Activation::Linear => y,
        }
    }
}

/// Fully-connected layer: w is (out, in).
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub w: ArrayD<f64>,
    pub b: ArrayD<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct StagedLinear {
    pub w: NodeId,
    pub b: NodeId,
}

impl LinearLayer {
    pub fn new(rng: &mut ChaCha8Rng, in_features: usize, out_features: usize) -> Self {
        LinearLayer {
            w: he_normal(rng, &[out_features, in_features], in_features),
            b: ArrayD::zeros(IxDyn(&[out_features])),
        }
    }

    pub fn stage(&self, t: &mut Tape) -> StagedLinear {
        StagedLinear {
            w: t.leaf(self.w.clone()),
            b: t.leaf(self.b.clone()),
        }
    }

    pub fn params(&self) -> Vec<&ArrayD<f64>> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut ArrayD<f64>> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        vec![format!("{prefix}.w"), format!("{prefix}.b")]
    }
}

impl StagedLinear {
    pub fn leaf_ids(&self) -> Vec<NodeId> {
        vec![self.w, self.b]
    }

    /// x (N, in) -> x w^T + b.
    pub fn apply(&self, t: &mut Tape, x: NodeId) -> NodeId {
        let y = t.matmul(x, self.w, false, true);
        let shape = t.value(y).shape().to_vec();
        let bias = t.bcast_axis1(self.b, &shape);
        t.add(y, bias)
    }
}

/// Mean-squared error with the mean over every element (batch and feature
/// axes alike), so loss weights are independent of resolution.
pub fn mse_mean(t: &mut Tape, a: NodeId, b: NodeId) -> NodeId {
    let d = t.sub(a, b);
    let sq = t.mul(d, d);
    t.mean_all(sq)
}

/// One-hot rows as a stop-gradient constant: (N, num_classes).
pub fn one_hot(t: &mut Tape, labels: &[usize], num_classes: usize) -> NodeId {
    let mut m = ndarray::Array2::<f64>::zeros((labels.len(), num_classes));
    for (i, &l) in labels.iter().enumerate() {
        assert!(l < num_classes, "label {l} out of range for {num_classes} classes");
        m[[i, l]] = 1.0;
    }
    t.leaf(m.into_dyn())
}

/// Row maxima of a 2-D node, as a stop-gradient constant (N,). Used to
/// stabilize log-sum-exp; the detachment does not change any derivative.
pub fn row_max_const(t: &mut Tape, x: NodeId) -> NodeId {
    let v = t.value(x);
    assert_eq!(v.ndim(), 2, "row_max_const needs a matrix");
    let m: Vec<f64> = v
        .outer_iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let m = Array1::from_vec(m).into_dyn();
    t.leaf(m)
}

/// Numerically stable per-row log-sum-exp of a 2-D node: (N, K) -> (N,).
pub fn log_sum_exp_rows(t: &mut Tape, x: NodeId) -> NodeId {
    let shape = t.value(x).shape().to_vec();
    let m = row_max_const(t, x);
    let m_full = t.bcast_samples(m, &shape);
    let shifted = t.sub(x, m_full);
    let e = t.exp(shifted);
    let sums = t.sum_samples(e);
    let ln = t.ln(sums);
    t.add(ln, m)
}
