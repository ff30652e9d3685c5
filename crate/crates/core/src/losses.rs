//! Generator objective: weighted sum of pixel, perceptual, adversarial, and
//! identity terms.
//!
//! Every distance term is a mean over all elements (batch and features), so
//! the weights mean the same thing at any resolution or batch size. A term
//! with weight zero is skipped entirely — its networks are never evaluated —
//! and reported as exactly 0, which is what makes ablations honest.

use ndarray::ArrayD;

use crate::autograd::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::nn::{mse_mean, Activation, ConvLayer};
use crate::rng;

/// Weights of the four generator loss components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub pixel: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub identity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            pixel: 1.0,
            perceptual: 0.05,
            adversarial: 0.001,
            identity: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.pixel, self.perceptual, self.adversarial, self.identity];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::Config("all loss weights are zero; nothing to optimize".into()));
        }
        Ok(())
    }
}

/// Component values of one composite loss evaluation. Skipped components are 0.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LossBreakdown {
    pub pixel: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub identity: f64,
    pub total: f64,
}

/// Mean squared error between generated and reference images.
pub fn pixel_loss(t: &mut Tape, sr: NodeId, hr: NodeId) -> NodeId {
    mse_mean(t, sr, hr)
}

/// Mean squared error in a feature space.
pub fn perceptual_loss(t: &mut Tape, extractor: &dyn FeatureExtractor, sr: NodeId, hr: NodeId) -> Result<NodeId> {
    let fs = extractor.features(t, sr)?;
    let fh = extractor.features(t, hr)?;
    Ok(mse_mean(t, fs, fh))
}

/// Generator's adversarial term: the negated mean critic score, so lowering
/// it means producing images the critic rates as more real.
pub fn adversarial_generator_loss(t: &mut Tape, fake_scores: NodeId) -> NodeId {
    let m = t.mean_all(fake_scores);
    t.scale(m, -1.0)
}

/// Mean squared distance between the embeddings of generated and reference
/// faces. On unit-normalized d-dim embeddings the value lies in [0, 4/d].
pub fn identity_loss(t: &mut Tape, emb_sr: NodeId, emb_hr: NodeId) -> NodeId {
    mse_mean(t, emb_sr, emb_hr)
}

/// Weighted combination. A `None` component is allowed only when its weight
/// is zero; it contributes exactly 0 to both the sum and the breakdown.
pub fn combine(
    t: &mut Tape,
    weights: &LossWeights,
    pixel: Option<NodeId>,
    perceptual: Option<NodeId>,
    adversarial: Option<NodeId>,
    identity: Option<NodeId>,
) -> Result<(NodeId, LossBreakdown)> {
    weights.validate()?;
    let mut total: Option<NodeId> = None;
    let mut values = [0.0; 4];
    let parts = [
        ("pixel", weights.pixel, pixel),
        ("perceptual", weights.perceptual, perceptual),
        ("adversarial", weights.adversarial, adversarial),
        ("identity", weights.identity, identity),
    ];
    for (i, (name, w, node)) in parts.into_iter().enumerate() {
        match node {
            Some(node) if w > 0.0 => {
                values[i] = t.scalar_value(node);
                let scaled = t.scale(node, w);
                total = Some(match total {
                    None => scaled,
                    Some(acc) => t.add(acc, scaled),
                });
            }
            Some(_) => {
                return Err(Error::Train(format!(
                    "{name} component computed although its weight is zero"
                )));
            }
            None if w > 0.0 => {
                return Err(Error::Train(format!(
                    "{name} weight is {w} but the component was not provided"
                )));
            }
            None => {}
        }
    }
    let total = total.expect("validate guarantees at least one active component");
    let breakdown = LossBreakdown {
        pixel: values[0],
        perceptual: values[1],
        adversarial: values[2],
        identity: values[3],
        total: t.scalar_value(total),
    };
    Ok((total, breakdown))
}

/// Feature map used by the perceptual term.
pub trait FeatureExtractor {
    fn features(&self, t: &mut Tape, x: NodeId) -> Result<NodeId>;
    fn name(&self) -> &'static str;
}

/// Raw pixels as features: perceptual distance degenerates to pixel distance.
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn features(&self, _t: &mut Tape, x: NodeId) -> Result<NodeId> {
        Ok(x)
    }

    fn name(&self) -> &'static str {
        "identity"
    }
}

/// Frozen random convolutional features: two stride-2 leaky-ReLU
/// convolutions with weights fixed at construction. Random projections
/// preserve distances well enough to serve as a deterministic, dependency-
/// free stand-in for pretrained perceptual features.
pub struct ConvExtractor {
    layers: Vec<ConvLayer>,
}

impl ConvExtractor {
    pub fn new(seed: u64) -> Self {
        let mut r0 = rng::stream(seed, "perceptual.conv0", &[]);
        let mut r1 = rng::stream(seed, "perceptual.conv1", &[]);
        ConvExtractor {
            layers: vec![
                ConvLayer::new(&mut r0, 3, 8, 3, 2, 1, Activation::LeakyRelu(0.2)),
                ConvLayer::new(&mut r1, 8, 16, 3, 2, 1, Activation::LeakyRelu(0.2)),
            ],
        }
    }
}

impl FeatureExtractor for ConvExtractor {
    fn features(&self, t: &mut Tape, x: NodeId) -> Result<NodeId> {
        let shape = t.value(x).shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Shape(format!(
                "feature extractor expects (N, 3, h, w), got {shape:?}"
            )));
        }
        let mut h = x;
        for l in &self.layers {
            let staged = l.stage(t);
            h = staged.apply(t, h);
        }
        Ok(h)
    }

    fn name(&self) -> &'static str {
        "conv"
    }
}

/// Detached copy of a node's current value, entering the graph as a leaf.
pub fn detach(t: &mut Tape, x: NodeId) -> NodeId {
    let v: ArrayD<f64> = t.value(x).clone();
    t.leaf(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::check;
    use ndarray::{arr1, arr2, Array, IxDyn};
    use rand_distr::{Distribution, Normal};

    fn randn(seed: u64, shape: &[usize]) -> ArrayD<f64> {
        let mut r = rng::stream(seed, "loss-test", &[]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        Array::from_shape_simple_fn(IxDyn(shape), || normal.sample(&mut r))
    }

    #[test]
    fn pixel_loss_frozen_example() {
        let mut t = Tape::new();
        let sr = t.leaf(arr1(&[0.0, 1.0]).into_dyn());
        let hr = t.leaf(arr1(&[1.0, 3.0]).into_dyn());
        let l = pixel_loss(&mut t, sr, hr);
        assert_eq!(t.scalar_value(l), 2.5);
    }

    #[test]
    fn adversarial_loss_frozen_example() {
        // Fake scores {1, 3}: loss = -mean = -2.
        let mut t = Tape::new();
        let s = t.leaf(arr2(&[[1.0], [3.0]]).into_dyn());
        let l = adversarial_generator_loss(&mut t, s);
        assert_eq!(t.scalar_value(l), -2.0);
    }

    #[test]
    fn identity_loss_of_opposed_unit_embeddings_is_four_over_d() {
        let mut t = Tape::new();
        let e = t.leaf(arr2(&[[1.0, 0.0, 0.0, 0.0]]).into_dyn());
        let ne = t.leaf(arr2(&[[-1.0, 0.0, 0.0, 0.0]]).into_dyn());
        let l = identity_loss(&mut t, e, ne);
        assert_eq!(t.scalar_value(l), 4.0 / 4.0);
    }

    #[test]
    fn combine_frozen_example() {
        // Components (2, 4, -1, 0.5) with weights (1, 0.5, 0.1, 2) total 4.9.
        let mut t = Tape::new();
        let p = t.scalar(2.0);
        let pc = t.scalar(4.0);
        let a = t.scalar(-1.0);
        let i = t.scalar(0.5);
        let w = LossWeights {
            pixel: 1.0,
            perceptual: 0.5,
            adversarial: 0.1,
            identity: 2.0,
        };
        let (total, bd) = combine(&mut t, &w, Some(p), Some(pc), Some(a), Some(i)).unwrap();
        assert!((t.scalar_value(total) - 4.9).abs() < 1e-15);
        assert_eq!(bd.pixel, 2.0);
        assert_eq!(bd.perceptual, 4.0);
        assert_eq!(bd.adversarial, -1.0);
        assert_eq!(bd.identity, 0.5);
        assert!((bd.total - 4.9).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_component_is_skipped_and_reported_zero() {
        let mut t = Tape::new();
        let p = t.scalar(2.0);
        let w = LossWeights {
            pixel: 1.0,
            perceptual: 0.0,
            adversarial: 0.0,
            identity: 0.0,
        };
        let (total, bd) = combine(&mut t, &w, Some(p), None, None, None).unwrap();
        assert_eq!(t.scalar_value(total), 2.0);
        assert_eq!(bd.perceptual, 0.0);
        assert_eq!(bd.identity, 0.0);
    }

    #[test]
    fn missing_component_with_positive_weight_is_an_error() {
        let mut t = Tape::new();
        let p = t.scalar(2.0);
        let w = LossWeights::default(); // all four positive
        let err = combine(&mut t, &w, Some(p), None, None, None).unwrap_err();
        assert!(err.to_string().contains("perceptual"), "FAIL: wrong error: {err}");
    }

    #[test]
    fn provided_component_with_zero_weight_is_an_error() {
        let mut t = Tape::new();
        let p = t.scalar(2.0);
        let x = t.scalar(1.0);
        let w = LossWeights {
            pixel: 1.0,
            perceptual: 0.0,
            adversarial: 0.0,
            identity: 0.0,
        };
        assert!(combine(&mut t, &w, Some(p), Some(x), None, None).is_err());
    }

    #[test]
    fn all_zero_weights_rejected() {
        let w = LossWeights {
            pixel: 0.0,
            perceptual: 0.0,
            adversarial: 0.0,
            identity: 0.0,
        };
        assert!(w.validate().is_err());
    }

    #[test]
    fn identity_extractor_makes_perceptual_equal_pixel() {
        let mut t = Tape::new();
        let sr = t.leaf(randn(1, &[2, 3, 8, 8]));
        let hr = t.leaf(randn(2, &[2, 3, 8, 8]));
        let pl = pixel_loss(&mut t, sr, hr);
        let pc = perceptual_loss(&mut t, &IdentityExtractor, sr, hr).unwrap();
        assert_eq!(t.scalar_value(pl), t.scalar_value(pc));
    }

    #[test]
    fn conv_extractor_is_deterministic_and_discriminative() {
        let fx1 = ConvExtractor::new(9);
        let fx2 = ConvExtractor::new(9);
        let a = randn(3, &[1, 3, 16, 16]);
        let b = randn(4, &[1, 3, 16, 16]);
        let mut t = Tape::new();
        let aid = t.leaf(a.clone());
        let bid = t.leaf(b.clone());
        let fa1 = fx1.features(&mut t, aid).unwrap();
        let fa2 = fx2.features(&mut t, aid).unwrap();
        assert_eq!(t.value(fa1), t.value(fa2), "FAIL: same-seed extractors disagree");
        let d = perceptual_loss(&mut t, &fx1, aid, bid).unwrap();
        assert!(t.scalar_value(d) > 0.0, "FAIL: distinct images mapped to identical features");
        let same = perceptual_loss(&mut t, &fx1, aid, aid).unwrap();
        assert_eq!(t.scalar_value(same), 0.0);
    }

    #[test]
    fn perceptual_gradient_flows_to_generated_image() {
        let fx = ConvExtractor::new(5);
        let sr_v = randn(6, &[1, 3, 8, 8]);
        let hr_v = randn(7, &[1, 3, 8, 8]);
        let mut t = Tape::new();
        let sr = t.leaf(sr_v.clone());
        let hr = t.leaf(hr_v.clone());
        let l = perceptual_loss(&mut t, &fx, sr, hr).unwrap();
        let g = t.grad(l, &[sr])[0].expect("gradient reaches the generated image");
        let fd = check::finite_diff_grad(
            |xs| {
                let mut t = Tape::new();
                let sr = t.leaf(xs[0].clone());
                let hr = t.leaf(hr_v.clone());
                let l = perceptual_loss(&mut t, &fx, sr, hr).unwrap();
                t.scalar_value(l)
            },
            &[sr_v],
            1e-6,
        );
        let err = check::max_relative_error(t.value(g), &fd[0]);
        assert!(err < 1e-6, "FAIL: perceptual gradient off by {err}");
    }

    #[test]
    fn detach_blocks_gradient_but_keeps_value() {
        let mut t = Tape::new();
        let x = t.leaf(arr1(&[2.0, 3.0]).into_dyn());
        let y = t.mul(x, x);
        let d = detach(&mut t, y);
        assert_eq!(t.value(d), t.value(y));
        let s = t.sum_all(d);
        let g = t.grad(s, &[x]);
        assert!(g[0].is_none(), "FAIL: gradient leaked through detach");
    }
}
