//! Super-resolution generator.
//!
//! Two low-level feature convolutions feed a chain of sparse-aggregation
//! blocks. Inside a block, layer `l` sees the concatenated outputs of the
//! layers at exponential offsets (see [`crate::topology`]); across blocks,
//! each block sees the low-level features plus every preceding block's
//! output. A 1x1 bottleneck fuses the aggregate, one convolution expands to
//! `upsample_channels * r^2` maps, and a single sub-pixel shuffle brings the
//! image to target resolution before the linear reconstruction convolution.
//!
//! The network is fully convolutional: any input size works, output is
//! exactly `r` times larger.

use ndarray::{ArrayD, Axis, Ix4};

use crate::autograd::{kernels, NodeId, Tape};
use crate::error::{Error, Result};
use crate::nn::{Activation, ConvLayer, StagedConv};
use crate::rng;
use crate::topology::{build_plan, AggregationPlan, NetworkSpec};

/// Generator parameters.
#[derive(Debug, Clone)]
pub struct Generator {
    pub spec: NetworkSpec,
    pub plan: AggregationPlan,
    llfe0: ConvLayer,
    llfe1: ConvLayer,
    blocks: Vec<Vec<ConvLayer>>,
    bottleneck: ConvLayer,
    upsample: ConvLayer,
    reconstruct: ConvLayer,
}

/// Tape handles for a staged generator.
pub struct StagedGenerator {
    plan: AggregationPlan,
    upscale: usize,
    llfe0: StagedConv,
    llfe1: StagedConv,
    blocks: Vec<Vec<StagedConv>>,
    bottleneck: StagedConv,
    upsample: StagedConv,
    reconstruct: StagedConv,
}

/// Node handles recorded during one staged forward pass, for wiring probes.
pub struct GeneratorTrace {
    pub blocks: Vec<BlockTrace>,
}

pub struct BlockTrace {
    pub input: NodeId,
    pub layer_outputs: Vec<NodeId>,
}

impl Generator {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let plan = build_plan(spec.block.num_layers, spec.aggregation_base)?;
        let k = spec.block.kernel_size;
        let pad = k / 2;
        let conv = |label: &str, in_c: usize, out_c: usize, k: usize, pad: usize, act: Activation| {
            let mut r = rng::stream(seed, label, &[]);
            ConvLayer::new(&mut r, in_c, out_c, k, 1, pad, act)
        };

        let mut blocks = Vec::with_capacity(spec.num_blocks);
        for b in 0..spec.num_blocks {
            let bs = spec.block_at(b);
            let mut layers = Vec::with_capacity(bs.num_layers);
            for l in 1..=bs.num_layers {
                let in_c = crate::topology::layer_input_channels(&plan, &bs, l)?;
                layers.push(conv(
                    &format!("gen.block{b}.layer{l}"),
                    in_c,
                    bs.growth_rate,
                    k,
                    pad,
                    Activation::PRelu,
                ));
            }
            blocks.push(layers);
        }

        let r2 = spec.upscale_factor * spec.upscale_factor;
        Ok(Generator {
            llfe0: conv("gen.llfe0", 3, spec.llfe_channels, k, pad, Activation::PRelu),
            llfe1: conv("gen.llfe1", spec.llfe_channels, spec.llfe_channels, k, pad, Activation::PRelu),
            blocks,
            bottleneck: conv(
                "gen.bottleneck",
                crate::topology::bottleneck_input_channels(&spec),
                spec.bottleneck_channels,
                1,
                0,
                Activation::PRelu,
            ),
            upsample: conv(
                "gen.upsample",
                spec.bottleneck_channels,
                spec.upsample_channels * r2,
                k,
                pad,
                Activation::PRelu,
            ),
            reconstruct: conv("gen.reconstruct", spec.upsample_channels, 3, k, pad, Activation::Linear),
            spec,
            plan,
        })
    }

    fn layers(&self) -> Vec<(&'static str, String, &ConvLayer)> {
        // (kind marker unused, prefix, layer) in canonical order.
        let mut out: Vec<(&'static str, String, &ConvLayer)> = vec![
            ("c", "gen.llfe0".into(), &self.llfe0),
            ("c", "gen.llfe1".into(), &self.llfe1),
        ];
        for (b, layers) in self.blocks.iter().enumerate() {
            for (li, layer) in layers.iter().enumerate() {
                out.push(("c", format!("gen.block{b}.layer{}", li + 1), layer));
            }
        }
        out.push(("c", "gen.bottleneck".into(), &self.bottleneck));
        out.push(("c", "gen.upsample".into(), &self.upsample));
        out.push(("c", "gen.reconstruct".into(), &self.reconstruct));
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut ConvLayer> {
        let mut out: Vec<&mut ConvLayer> = vec![&mut self.llfe0, &mut self.llfe1];
        for layers in self.blocks.iter_mut() {
            out.extend(layers.iter_mut());
        }
        out.push(&mut self.bottleneck);
        out.push(&mut self.upsample);
        out.push(&mut self.reconstruct);
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layers()
            .into_iter()
            .flat_map(|(_, prefix, l)| l.param_names(&prefix))
            .collect()
    }

    pub fn params(&self) -> Vec<&ArrayD<f64>> {
        self.layers().into_iter().flat_map(|(_, _, l)| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ArrayD<f64>> {
        self.layers_mut().into_iter().flat_map(|l| l.params_mut()).collect()
    }

    /// Kernel parameters only (biases and activation slopes excluded), the
    /// quantity the sparse-vs-dense accounting in `topology` talks about.
    pub fn kernel_parameter_count(&self) -> usize {
        self.layers().into_iter().map(|(_, _, l)| l.w.len()).sum()
    }

    pub fn stage(&self, t: &mut Tape) -> StagedGenerator {
        StagedGenerator {
            plan: self.plan.clone(),
            upscale: self.spec.upscale_factor,
            llfe0: self.llfe0.stage(t),
            llfe1: self.llfe1.stage(t),
            blocks: self
                .blocks
                .iter()
                .map(|ls| ls.iter().map(|l| l.stage(t)).collect())
                .collect(),
            bottleneck: self.bottleneck.stage(t),
            upsample: self.upsample.stage(t),
            reconstruct: self.reconstruct.stage(t),
        }
    }

    /// Plain inference: upscale a (N, 3, h, w) batch to (N, 3, r*h, r*w).
    pub fn hallucinate(&self, lr: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let mut t = Tape::new();
        let staged = self.stage(&mut t);
        let x = t.leaf(lr.clone());
        let y = staged.forward(&mut t, x)?;
        Ok(t.value(y).clone())
    }

    /// Pre-activation of one block layer, recomputed from recorded
    /// predecessor outputs rather than by re-running the network.
    ///
    /// `layer_outputs[i]` is the recorded output of layer `i+1`; index 0 in
    /// `override_output` refers to the block input. Overriding lets a test
    /// substitute (for example, zero) one upstream output and observe whether
    /// the target layer's pre-activation consumes it at all.
    pub fn layer_preactivation(
        &self,
        block: usize,
        target_layer: usize,
        block_input: &ArrayD<f64>,
        layer_outputs: &[ArrayD<f64>],
        override_output: Option<(usize, &ArrayD<f64>)>,
    ) -> Result<ArrayD<f64>> {
        if block >= self.blocks.len() {
            return Err(Error::Shape(format!("block {block} out of range")));
        }
        if target_layer < 1 || target_layer > self.plan.num_layers {
            return Err(Error::Shape(format!("layer {target_layer} out of range")));
        }
        let pick = |idx: usize| -> &ArrayD<f64> {
            if let Some((o, arr)) = override_output {
                if o == idx {
                    return arr;
                }
            }
            if idx == 0 {
                block_input
            } else {
                &layer_outputs[idx - 1]
            }
        };
        let parts: Vec<_> = self
            .plan
            .set(target_layer)
            .iter()
            .map(|&p| {
                pick(p)
                    .view()
                    .into_dimensionality::<Ix4>()
                    .map_err(|_| Error::Shape("recorded output must be 4-D".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let cat = ndarray::concatenate(Axis(1), &parts)
            .map_err(|e| Error::Shape(format!("probe concat: {e}")))?;
        let layer = &self.blocks[block][target_layer - 1];
        let w = layer.w.view().into_dimensionality::<Ix4>().expect("conv kernel is 4-D");
        let mut pre = kernels::conv2d(&cat.view(), &w, 1, layer.w.shape()[2] / 2);
        for (mut plane, &bias) in pre.axis_iter_mut(Axis(1)).zip(layer.b.iter()) {
            plane.mapv_inplace(|v| v + bias);
        }
        Ok(pre.into_dyn())
    }
}

impl StagedGenerator {
    /// Leaf ids in the same order as `Generator::params`.
    pub fn leaf_ids(&self) -> Vec<NodeId> {
        let mut ids = Vec::new();
        ids.extend(self.llfe0.leaf_ids());
        ids.extend(self.llfe1.leaf_ids());
        for layers in &self.blocks {
            for l in layers {
                ids.extend(l.leaf_ids());
            }
        }
        ids.extend(self.bottleneck.leaf_ids());
        ids.extend(self.upsample.leaf_ids());
        ids.extend(self.reconstruct.leaf_ids());
        ids
    }

    pub fn forward(&self, t: &mut Tape, x: NodeId) -> Result<NodeId> {
        self.forward_traced(t, x).map(|(y, _)| y)
    }

    /// Forward pass that records every block-layer output node.
    pub fn forward_traced(&self, t: &mut Tape, x: NodeId) -> Result<(NodeId, GeneratorTrace)> {
        let shape = t.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Shape(format!(
                "generator input must be (N, 3, h, w), got {shape:?}"
            )));
        }
        let y0 = self.llfe0.apply(t, x);
        let y1 = self.llfe1.apply(t, y0);

        let mut trace = GeneratorTrace { blocks: Vec::new() };
        let mut feats = vec![y1];
        for layers in &self.blocks {
            let input = if feats.len() == 1 {
                feats[0]
            } else {
                t.concat_channels(&feats)
            };
            let mut outs: Vec<NodeId> = Vec::with_capacity(layers.len());
            for (li, layer) in layers.iter().enumerate() {
                let set = self.plan.set(li + 1);
                let parts: Vec<NodeId> = set
                    .iter()
                    .map(|&p| if p == 0 { input } else { outs[p - 1] })
                    .collect();
                let cat = if parts.len() == 1 {
                    parts[0]
                } else {
                    t.concat_channels(&parts)
                };
                outs.push(layer.apply(t, cat));
            }
            feats.push(*outs.last().expect("block has layers"));
            trace.blocks.push(BlockTrace {
                input,
                layer_outputs: outs,
            });
        }

        let fused_in = if feats.len() == 1 {
            feats[0]
        } else {
            t.concat_channels(&feats)
        };
        let fused = self.bottleneck.apply(t, fused_in);
        let up = self.upsample.apply(t, fused);
        let up = t.pixel_shuffle(up, self.upscale);
        let y = self.reconstruct.apply(t, up);
        Ok((y, trace))
    }
}
