//! Run configuration: a flat `key = value` text format with documented
//! defaults, strict parsing (unknown or repeated keys are errors), and a
//! canonical serialization that round-trips exactly — the text embedded in
//! checkpoints and echoed into output directories.

use crate::critic::CriticSpec;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::SsimWindow;
use crate::recognizer::RecognizerSpec;
use crate::topology::{BlockSpec, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerceptualExtractor {
    /// Fixed random convolutional features.
    Conv,
    /// Raw pixels (collapses the perceptual distance onto the pixel one).
    Identity,
}

/// Everything a run needs besides the dataset path and output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub input_size: usize,
    pub upscale: usize,
    // Generator topology.
    pub blocks: usize,
    pub layers_per_block: usize,
    pub growth: usize,
    pub llfe_channels: usize,
    pub bottleneck_channels: usize,
    pub upsample_channels: usize,
    pub kernel: usize,
    pub aggregation_base: usize,
    // Critic.
    pub critic_channels: Vec<usize>,
    pub critic_kernel: usize,
    pub critic_leaky_slope: f64,
    // Recognizer and its angular-margin head.
    pub fr_widths: Vec<usize>,
    pub embedding_dim: usize,
    pub arcface_scale: f64,
    pub arcface_margin: f64,
    /// 0 means "derive from the training manifest".
    pub num_classes: usize,
    // Loss weighting.
    pub lambda_pixel: f64,
    pub lambda_perceptual: f64,
    pub lambda_adversarial: f64,
    pub lambda_identity: f64,
    pub gp_lambda: f64,
    pub perceptual_extractor: PerceptualExtractor,
    // Optimization.
    pub batch_size: usize,
    pub n_critic: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub fr_momentum: f64,
    pub gan_lr: f64,
    pub fr_lr: f64,
    pub joint_lr: f64,
    pub gan_iters: u64,
    pub fr_epochs: u64,
    pub joint_epochs: u64,
    // Bookkeeping.
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub ssim_window: SsimWindow,
    /// 0 disables verification during evaluation.
    pub verify_pairs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            input_size: 112,
            upscale: 4,
            blocks: 6,
            layers_per_block: 6,
            growth: 32,
            llfe_channels: 64,
            bottleneck_channels: 128,
            upsample_channels: 16,
            kernel: 3,
            aggregation_base: 2,
            critic_channels: vec![64, 128, 256, 512, 512],
            critic_kernel: 4,
            critic_leaky_slope: 0.2,
            fr_widths: vec![16, 32, 64],
            embedding_dim: 512,
            arcface_scale: 64.0,
            arcface_margin: 0.5,
            num_classes: 0,
            lambda_pixel: 1.0,
            lambda_perceptual: 0.05,
            lambda_adversarial: 0.001,
            lambda_identity: 0.01,
            gp_lambda: 10.0,
            perceptual_extractor: PerceptualExtractor::Conv,
            batch_size: 128,
            n_critic: 1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            fr_momentum: 0.9,
            gan_lr: 1e-3,
            fr_lr: 1e-2,
            joint_lr: 1e-4,
            gan_iters: 56_000,
            fr_epochs: 20,
            joint_epochs: 4,
            checkpoint_every: 0,
            log_every: 1,
            ssim_window: SsimWindow::Gaussian11,
            verify_pairs: 200,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{v}'")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|p| parse_num(key, p.trim()))
        .collect()
}

fn fmt_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parse defaults overridden by `key = value` lines. `#` starts a
    /// comment; blank lines are skipped; unknown or repeated keys are errors
    /// that cite the 1-based line number.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {lineno}: expected 'key = value', got '{raw}'"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {lineno}: key '{key}' repeated")));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {lineno}: {e}")))?;
        }
        Ok(cfg)
    }

    /// Load and parse a configuration file.
    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "input_size" => self.input_size = parse_num(key, v)?,
            "upscale" => self.upscale = parse_num(key, v)?,
            "blocks" => self.blocks = parse_num(key, v)?,
            "layers_per_block" => self.layers_per_block = parse_num(key, v)?,
            "growth" => self.growth = parse_num(key, v)?,
            "llfe_channels" => self.llfe_channels = parse_num(key, v)?,
            "bottleneck_channels" => self.bottleneck_channels = parse_num(key, v)?,
            "upsample_channels" => self.upsample_channels = parse_num(key, v)?,
            "kernel" => self.kernel = parse_num(key, v)?,
            "aggregation_base" => self.aggregation_base = parse_num(key, v)?,
            "critic_channels" => self.critic_channels = parse_list(key, v)?,
            "critic_kernel" => self.critic_kernel = parse_num(key, v)?,
            "critic_leaky_slope" => self.critic_leaky_slope = parse_num(key, v)?,
            "fr_widths" => self.fr_widths = parse_list(key, v)?,
            "embedding_dim" => self.embedding_dim = parse_num(key, v)?,
            "arcface_scale" => self.arcface_scale = parse_num(key, v)?,
            "arcface_margin" => self.arcface_margin = parse_num(key, v)?,
            "num_classes" => self.num_classes = parse_num(key, v)?,
            "lambda_pixel" => self.lambda_pixel = parse_num(key, v)?,
            "lambda_perceptual" => self.lambda_perceptual = parse_num(key, v)?,
            "lambda_adversarial" => self.lambda_adversarial = parse_num(key, v)?,
            "lambda_identity" => self.lambda_identity = parse_num(key, v)?,
            "gp_lambda" => self.gp_lambda = parse_num(key, v)?,
            "perceptual_extractor" => {
                self.perceptual_extractor = match v {
                    "conv" => PerceptualExtractor::Conv,
                    "identity" => PerceptualExtractor::Identity,
                    _ => {
                        return Err(Error::Config(format!(
                            "key '{key}': '{v}' is not one of conv, identity"
                        )))
                    }
                }
            }
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "n_critic" => self.n_critic = parse_num(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse_num(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse_num(key, v)?,
            "adam_eps" => self.adam_eps = parse_num(key, v)?,
            "fr_momentum" => self.fr_momentum = parse_num(key, v)?,
            "gan_lr" => self.gan_lr = parse_num(key, v)?,
            "fr_lr" => self.fr_lr = parse_num(key, v)?,
            "joint_lr" => self.joint_lr = parse_num(key, v)?,
            "gan_iters" => self.gan_iters = parse_num(key, v)?,
            "fr_epochs" => self.fr_epochs = parse_num(key, v)?,
            "joint_epochs" => self.joint_epochs = parse_num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "log_every" => self.log_every = parse_num(key, v)?,
            "ssim_window" => {
                self.ssim_window = match v {
                    "gaussian11" => SsimWindow::Gaussian11,
                    "uniform8" => SsimWindow::Uniform8,
                    _ => {
                        return Err(Error::Config(format!(
                            "key '{key}': '{v}' is not one of gaussian11, uniform8"
                        )))
                    }
                }
            }
            "verify_pairs" => self.verify_pairs = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Canonical text form: every key, fixed order, full precision.
    /// `parse(canonical_text()) == self`.
    pub fn canonical_text(&self) -> String {
        let ext = match self.perceptual_extractor {
            PerceptualExtractor::Conv => "conv",
            PerceptualExtractor::Identity => "identity",
        };
        let win = match self.ssim_window {
            SsimWindow::Gaussian11 => "gaussian11",
            SsimWindow::Uniform8 => "uniform8",
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("seed", self.seed.to_string());
        kv("input_size", self.input_size.to_string());
        kv("upscale", self.upscale.to_string());
        kv("blocks", self.blocks.to_string());
        kv("layers_per_block", self.layers_per_block.to_string());
        kv("growth", self.growth.to_string());
        kv("llfe_channels", self.llfe_channels.to_string());
        kv("bottleneck_channels", self.bottleneck_channels.to_string());
        kv("upsample_channels", self.upsample_channels.to_string());
        kv("kernel", self.kernel.to_string());
        kv("aggregation_base", self.aggregation_base.to_string());
        kv("critic_channels", fmt_list(&self.critic_channels));
        kv("critic_kernel", self.critic_kernel.to_string());
        kv("critic_leaky_slope", self.critic_leaky_slope.to_string());
        kv("fr_widths", fmt_list(&self.fr_widths));
        kv("embedding_dim", self.embedding_dim.to_string());
        kv("arcface_scale", self.arcface_scale.to_string());
        kv("arcface_margin", self.arcface_margin.to_string());
        kv("num_classes", self.num_classes.to_string());
        kv("lambda_pixel", self.lambda_pixel.to_string());
        kv("lambda_perceptual", self.lambda_perceptual.to_string());
        kv("lambda_adversarial", self.lambda_adversarial.to_string());
        kv("lambda_identity", self.lambda_identity.to_string());
        kv("gp_lambda", self.gp_lambda.to_string());
        kv("perceptual_extractor", ext.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("n_critic", self.n_critic.to_string());
        kv("adam_beta1", self.adam_beta1.to_string());
        kv("adam_beta2", self.adam_beta2.to_string());
        kv("adam_eps", self.adam_eps.to_string());
        kv("fr_momentum", self.fr_momentum.to_string());
        kv("gan_lr", self.gan_lr.to_string());
        kv("fr_lr", self.fr_lr.to_string());
        kv("joint_lr", self.joint_lr.to_string());
        kv("gan_iters", self.gan_iters.to_string());
        kv("fr_epochs", self.fr_epochs.to_string());
        kv("joint_epochs", self.joint_epochs.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("log_every", self.log_every.to_string());
        kv("ssim_window", win.to_string());
        kv("verify_pairs", self.verify_pairs.to_string());
        s
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec {
            num_blocks: self.blocks,
            llfe_channels: self.llfe_channels,
            bottleneck_channels: self.bottleneck_channels,
            upscale_factor: self.upscale,
            upsample_channels: self.upsample_channels,
            aggregation_base: self.aggregation_base,
            block: BlockSpec {
                num_layers: self.layers_per_block,
                growth_rate: self.growth,
                input_channels: self.llfe_channels,
                kernel_size: self.kernel,
            },
        }
    }

    pub fn critic_spec(&self) -> CriticSpec {
        CriticSpec {
            channels: self.critic_channels.clone(),
            kernel: self.critic_kernel,
            leaky_slope: self.critic_leaky_slope,
            input_size: self.input_size,
            ..CriticSpec::default()
        }
    }

    pub fn recognizer_spec(&self) -> RecognizerSpec {
        RecognizerSpec {
            widths: self.fr_widths.clone(),
            embedding_dim: self.embedding_dim,
            input_size: self.input_size,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            pixel: self.lambda_pixel,
            perceptual: self.lambda_perceptual,
            adversarial: self.lambda_adversarial,
            identity: self.lambda_identity,
        }
    }

    /// Cross-field checks beyond what each spec validates on construction.
    pub fn validate(&self) -> Result<()> {
        self.network_spec().validate()?;
        self.critic_spec().validate()?;
        self.recognizer_spec().validate()?;
        self.loss_weights().validate()?;
        if self.input_size % self.upscale != 0 {
            return Err(Error::Config(format!(
                "input_size {} is not divisible by upscale {}",
                self.input_size, self.upscale
            )));
        }
        if self.batch_size == 0 || self.n_critic == 0 || self.log_every == 0 {
            return Err(Error::Config(
                "batch_size, n_critic and log_every must be positive".into(),
            ));
        }
        for (name, v) in [
            ("gan_lr", self.gan_lr),
            ("fr_lr", self.fr_lr),
            ("joint_lr", self.joint_lr),
            ("adam_eps", self.adam_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a positive finite number")));
            }
        }
        for (name, v) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
            ("fr_momentum", self.fr_momentum),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if self.gp_lambda < 0.0 {
            return Err(Error::Config("gp_lambda must be non-negative".into()));
        }
        if self.verify_pairs % 2 != 0 {
            return Err(Error::Config(format!(
                "verify_pairs must be even for balanced pairs, got {}",
                self.verify_pairs
            )));
        }
        Ok(())
    }
}
