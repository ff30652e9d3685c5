//! Sparse-aggregation connectivity and parameter accounting.
//!
//! Layers inside a block are numbered 1..=L; index 0 denotes the block input.
//! Layer `l` concatenates the outputs of layers at exponential offsets
//! `l - c^j` for every `j >= 0` with `c^j <= l`, so the number of incoming
//! links grows logarithmically with depth instead of linearly.

use crate::error::{Error, Result};

/// Per-layer predecessor index sets for one block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregationPlan {
    pub num_layers: usize,
    pub base: usize,
    /// `predecessors[l - 1]` is S(l), sorted by descending index.
    pub predecessors: Vec<Vec<usize>>,
}

/// Geometry of a single sparse block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub num_layers: usize,
    pub growth_rate: usize,
    pub input_channels: usize,
    pub kernel_size: usize,
}

impl BlockSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.growth_rate == 0 || self.input_channels == 0 {
            return Err(Error::Shape(format!(
                "block spec fields must be positive: {self:?}"
            )));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::Shape(format!(
                "kernel size must be odd for same-padding convolutions, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }
}

/// Geometry of the full generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkSpec {
    pub num_blocks: usize,
    pub llfe_channels: usize,
    pub bottleneck_channels: usize,
    pub upscale_factor: usize,
    pub upsample_channels: usize,
    pub aggregation_base: usize,
    pub block: BlockSpec,
}

impl Default for NetworkSpec {
    /// The full-scale configuration: 6 blocks of 6 layers, growth rate 32,
    /// 64 low-level channels, 128 bottleneck channels, 4x upscaling.
    fn default() -> Self {
        NetworkSpec {
            num_blocks: 6,
            llfe_channels: 64,
            bottleneck_channels: 128,
            upscale_factor: 4,
            upsample_channels: 16,
            aggregation_base: 2,
            block: BlockSpec {
                num_layers: 6,
                growth_rate: 32,
                input_channels: 64,
                kernel_size: 3,
            },
        }
    }
}

impl NetworkSpec {
    /// Small configuration for CPU-scale experiments and tests.
    pub fn tiny() -> Self {
        NetworkSpec {
            num_blocks: 2,
            llfe_channels: 16,
            bottleneck_channels: 16,
            upscale_factor: 4,
            upsample_channels: 4,
            aggregation_base: 2,
            block: BlockSpec {
                num_layers: 3,
                growth_rate: 8,
                input_channels: 16,
                kernel_size: 3,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.block.validate()?;
        if self.llfe_channels == 0
            || self.bottleneck_channels == 0
            || self.upsample_channels == 0
            || self.upscale_factor == 0
        {
            return Err(Error::Shape(format!(
                "network spec fields must be positive: {self:?}"
            )));
        }
        if self.block.input_channels != self.llfe_channels {
            return Err(Error::Shape(format!(
                "first block input channels {} must equal llfe channels {}",
                self.block.input_channels, self.llfe_channels
            )));
        }
        if self.aggregation_base < 2 {
            return Err(Error::Shape(format!(
                "aggregation base must be >= 2, got {}",
                self.aggregation_base
            )));
        }
        Ok(())
    }

    /// Input channel count of block `b` (0-based): low-level features plus one
    /// growth-rate-sized output per preceding block.
    pub fn block_input_channels(&self, block_index: usize) -> usize {
        self.llfe_channels + block_index * self.block.growth_rate
    }

    /// Block spec with the input channels block `b` actually sees.
    pub fn block_at(&self, block_index: usize) -> BlockSpec {
        BlockSpec {
            input_channels: self.block_input_channels(block_index),
            ..self.block
        }
    }
}

/// Link pattern selector for parameter accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Exponential-offset predecessors.
    Sparse,
    /// All-predecessors baseline: S(l) = {0 .. l-1}.
    Dense,
}

/// S(l) = { l - c^j : j >= 0, c^j <= l }, sorted by descending index.
///
/// Index 0 is the block input; the offset c^0 = 1 always applies, so l-1 is
/// always a member.
pub fn predecessors(layer: usize, base: usize) -> Result<Vec<usize>> {
    if layer < 1 {
        return Err(Error::Shape(format!("layer index must be >= 1, got {layer}")));
    }
    if base < 2 {
        return Err(Error::Shape(format!(
            "aggregation base must be >= 2, got {base} (base 1 collapses all offsets)"
        )));
    }
    let mut set = Vec::new();
    let mut offset = 1usize;
    while offset <= layer {
        set.push(layer - offset);
        match offset.checked_mul(base) {
            Some(next) => offset = next,
            None => break,
        }
    }
    Ok(set)
}

/// Predecessor sets for layers 1..=num_layers.
pub fn build_plan(num_layers: usize, base: usize) -> Result<AggregationPlan> {
    if num_layers < 1 {
        return Err(Error::Shape(format!(
            "plan needs at least one layer, got {num_layers}"
        )));
    }
    let predecessors = (1..=num_layers)
        .map(|l| predecessors(l, base))
        .collect::<Result<Vec<_>>>()?;
    Ok(AggregationPlan {
        num_layers,
        base,
        predecessors,
    })
}

impl AggregationPlan {
    pub fn set(&self, layer: usize) -> &[usize] {
        &self.predecessors[layer - 1]
    }

    /// Dense counterpart with the same layer count: S(l) = {l-1, ..., 0}.
    pub fn dense(num_layers: usize) -> AggregationPlan {
        AggregationPlan {
            num_layers,
            base: 1,
            predecessors: (1..=num_layers).map(|l| (0..l).rev().collect()).collect(),
        }
    }
}

/// Channels entering layer `l`: the block input contributes C_in, every other
/// predecessor contributes the growth rate.
pub fn layer_input_channels(plan: &AggregationPlan, block: &BlockSpec, layer: usize) -> Result<usize> {
    if layer < 1 || layer > plan.num_layers {
        return Err(Error::Shape(format!(
            "layer {layer} out of range 1..={}",
            plan.num_layers
        )));
    }
    Ok(plan
        .set(layer)
        .iter()
        .map(|&p| if p == 0 { block.input_channels } else { block.growth_rate })
        .sum())
}

fn block_kernel_params(block: &BlockSpec, plan: &AggregationPlan) -> Result<usize> {
    let k2 = block.kernel_size * block.kernel_size;
    let mut total = 0usize;
    for l in 1..=block.num_layers {
        total += k2 * layer_input_channels(plan, block, l)? * block.growth_rate;
    }
    Ok(total)
}

/// Kernel parameters of one block (biases excluded).
pub fn block_parameter_count(block: &BlockSpec, base: usize, mode: Aggregation) -> Result<usize> {
    block.validate()?;
    let plan = match mode {
        Aggregation::Sparse => build_plan(block.num_layers, base)?,
        Aggregation::Dense => AggregationPlan::dense(block.num_layers),
    };
    block_kernel_params(block, &plan)
}

/// Kernel parameters of the whole generator (biases excluded): the two
/// low-level extraction convolutions, every block layer, the 1x1 bottleneck,
/// the upsampling convolution, and the reconstruction convolution.
pub fn network_parameter_count(spec: &NetworkSpec, mode: Aggregation) -> Result<usize> {
    spec.validate()?;
    let k2 = spec.block.kernel_size * spec.block.kernel_size;
    let mut total = k2 * 3 * spec.llfe_channels + k2 * spec.llfe_channels * spec.llfe_channels;
    for b in 0..spec.num_blocks {
        total += block_parameter_count(&spec.block_at(b), spec.aggregation_base, mode)?;
    }
    let r2 = spec.upscale_factor * spec.upscale_factor;
    total += bottleneck_input_channels(spec) * spec.bottleneck_channels; // 1x1 kernel
    total += k2 * spec.bottleneck_channels * (spec.upsample_channels * r2);
    total += k2 * spec.upsample_channels * 3;
    Ok(total)
}

/// Layer-count accounting: two low-level extraction convolutions, B*L block
/// convolutions, bottleneck, upsampling convolution, reconstruction.
pub fn depth_accounting(spec: &NetworkSpec) -> usize {
    2 + spec.num_blocks * spec.block.num_layers + 3
}

/// Channels entering the bottleneck: low-level features plus one
/// growth-rate-sized output per block.
pub fn bottleneck_input_channels(spec: &NetworkSpec) -> usize {
    spec.llfe_channels + spec.num_blocks * spec.block.growth_rate
}
