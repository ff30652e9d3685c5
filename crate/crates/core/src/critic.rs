//! Wasserstein critic with gradient penalty.
//!
//! A stack of stride-2 convolutions (no normalization, leaky ReLU) followed
//! by a linear head produces one unbounded score per image. Training pushes
//! real scores up and generated scores down; the 1-Lipschitz constraint is
//! enforced softly by penalizing the deviation of the input-gradient norm
//! from 1 at points interpolated between real and generated images. That
//! penalty differentiates a gradient, which the tape supports natively.

use ndarray::{Array1, ArrayD, Axis};

use crate::autograd::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::nn::{Activation, ConvLayer, LinearLayer, StagedConv, StagedLinear};
use crate::rng;

/// Guard inside the gradient-norm square root; keeps the derivative finite
/// at exactly-zero gradients without visibly perturbing realistic norms.
pub const NORM_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CriticSpec {
    /// Output channels of each convolution, input is always 3.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub leaky_slope: f64,
    /// Side length of the (square) images the critic scores; the linear
    /// head's width depends on it.
    pub input_size: usize,
}

impl Default for CriticSpec {
    /// Full-scale configuration for 112x112 inputs: five stride-2
    /// convolutions take the image to 3x3 spatial extent.
    fn default() -> Self {
        CriticSpec {
            channels: vec![64, 128, 256, 512, 512],
            kernel: 4,
            stride: 2,
            pad: 1,
            leaky_slope: 0.2,
            input_size: 112,
        }
    }
}

impl CriticSpec {
    pub fn tiny() -> Self {
        CriticSpec {
            channels: vec![8, 16, 32, 64, 64],
            ..CriticSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Shape("critic needs at least one convolution".into()));
        }
        if self.stride == 0 || self.kernel == 0 || self.input_size == 0 {
            return Err(Error::Shape(format!("critic spec fields must be positive: {self:?}")));
        }
        let (h, _) = self.spatial_extents()?;
        if h == 0 {
            return Err(Error::Shape("critic convolutions consume the whole image".into()));
        }
        Ok(())
    }

    /// Spatial extent after the last convolution, and the flattened head width.
    fn spatial_extents(&self) -> Result<(usize, usize)> {
        let mut s = self.input_size;
        for _ in &self.channels {
            if s + 2 * self.pad < self.kernel {
                return Err(Error::Shape(format!(
                    "critic input {} too small for its convolution stack",
                    self.input_size
                )));
            }
            s = (s + 2 * self.pad - self.kernel) / self.stride + 1;
        }
        Ok((s, self.channels.last().unwrap() * s * s))
    }
}

#[derive(Debug, Clone)]
pub struct Critic {
    pub spec: CriticSpec,
    convs: Vec<ConvLayer>,
    head: LinearLayer,
}

pub struct StagedCritic {
    input_size: usize,
    convs: Vec<StagedConv>,
    head: StagedLinear,
}

impl Critic {
    pub fn new(spec: CriticSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut convs = Vec::with_capacity(spec.channels.len());
        let mut in_c = 3;
        for (i, &out_c) in spec.channels.iter().enumerate() {
            let mut r = rng::stream(seed, &format!("critic.conv{i}"), &[]);
            convs.push(ConvLayer::new(
                &mut r,
                in_c,
                out_c,
                spec.kernel,
                spec.stride,
                spec.pad,
                Activation::LeakyRelu(spec.leaky_slope),
            ));
            in_c = out_c;
        }
        let (_, head_in) = spec.spatial_extents()?;
        let mut r = rng::stream(seed, "critic.head", &[]);
        let head = LinearLayer::new(&mut r, head_in, 1);
        Ok(Critic { spec, convs, head })
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .convs
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.param_names(&format!("critic.conv{i}")))
            .collect();
        names.extend(self.head.param_names("critic.head"));
        names
    }

    pub fn params(&self) -> Vec<&ArrayD<f64>> {
        let mut p: Vec<&ArrayD<f64>> = self.convs.iter().flat_map(|c| c.params()).collect();
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut ArrayD<f64>> {
        let mut p: Vec<&mut ArrayD<f64>> = self.convs.iter_mut().flat_map(|c| c.params_mut()).collect();
        p.extend(self.head.params_mut());
        p
    }

    pub fn stage(&self, t: &mut Tape) -> StagedCritic {
        StagedCritic {
            input_size: self.spec.input_size,
            convs: self.convs.iter().map(|c| c.stage(t)).collect(),
            head: self.head.stage(t),
        }
    }
}

impl StagedCritic {
    pub fn leaf_ids(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self.convs.iter().flat_map(|c| c.leaf_ids()).collect();
        ids.extend(self.head.leaf_ids());
        ids
    }

    /// Per-image scores: (N, 3, s, s) -> (N, 1).
    pub fn score(&self, t: &mut Tape, x: NodeId) -> Result<NodeId> {
        let shape = t.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1] != 3 || shape[2] != self.input_size || shape[3] != self.input_size {
            return Err(Error::Shape(format!(
                "critic expects (N, 3, {0}, {0}), got {shape:?}",
                self.input_size
            )));
        }
        let mut h = x;
        for conv in &self.convs {
            h = conv.apply(t, h);
        }
        let hs = t.value(h).shape().to_vec();
        let flat = t.reshape(h, &[hs[0], hs[1] * hs[2] * hs[3]]);
        Ok(self.head.apply(t, flat))
    }
}

/// Critic objective on already-scored batches: mean(fake) - mean(real).
/// Minimizing it maximizes the Wasserstein separation.
pub fn critic_loss(t: &mut Tape, real_scores: NodeId, fake_scores: NodeId) -> NodeId {
    let mf = t.mean_all(fake_scores);
    let mr = t.mean_all(real_scores);
    t.sub(mf, mr)
}

/// Per-sample convex blend of real and generated images:
/// out_i = eps_i * real_i + (1 - eps_i) * fake_i.
pub fn interpolate(real: &ArrayD<f64>, fake: &ArrayD<f64>, eps: &[f64]) -> ArrayD<f64> {
    assert_eq!(real.shape(), fake.shape(), "interpolate shape mismatch");
    assert_eq!(real.shape()[0], eps.len(), "one epsilon per sample");
    let mut out = real.clone();
    for ((mut lane, fake_lane), &e) in out.outer_iter_mut().zip(fake.outer_iter()).zip(eps.iter()) {
        lane.zip_mut_with(&fake_lane, |r, &f| *r = e * *r + (1.0 - e) * f);
    }
    out
}

/// Gradient penalty at the given points: lambda * mean((||d score/d x|| - 1)^2).
///
/// `score` maps an image node to (N, 1) scores. The returned node depends on
/// the scoring parameters through the input gradient, so differentiating it
/// again (as the critic step does) exercises double backprop.
pub fn gradient_penalty<F>(t: &mut Tape, score: F, x: NodeId, lambda: f64) -> Result<NodeId>
where
    F: FnOnce(&mut Tape, NodeId) -> Result<NodeId>,
{
    let scores = score(t, x)?;
    // Scores are per-sample, so the gradient of their sum stacks the
    // per-sample input gradients.
    let total = t.sum_all(scores);
    let g = t.grad(total, &[x])[0]
        .ok_or_else(|| Error::Train("penalty point does not influence the score".into()))?;
    let gsq = t.mul(g, g);
    let per_sample = t.sum_samples(gsq);
    let guarded = t.add_scalar(per_sample, NORM_GUARD);
    let norms = t.sqrt(guarded);
    let dev = t.add_scalar(norms, -1.0);
    let dev2 = t.mul(dev, dev);
    let mean = t.mean_all(dev2);
    Ok(t.scale(mean, lambda))
}

/// Per-sample gradient norms of a scoring function at given points; the
/// diagnostic counterpart of `gradient_penalty`.
pub fn input_gradient_norms<F>(t: &mut Tape, score: F, x: NodeId) -> Result<Array1<f64>>
where
    F: FnOnce(&mut Tape, NodeId) -> Result<NodeId>,
{
    let scores = score(t, x)?;
    let total = t.sum_all(scores);
    let g = t.grad(total, &[x])[0]
        .ok_or_else(|| Error::Train("point does not influence the score".into()))?;
    let v = t.value(g);
    Ok(Array1::from_iter(
        v.axis_iter(Axis(0)).map(|s| s.iter().map(|x| x * x).sum::<f64>().sqrt()),
    ))
}
