//! Implementations behind the command-line binary. Each command is a plain
//! function over paths plus a resolved configuration, so behavior is testable
//! without spawning a process; the binary only parses arguments and prints.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array3, Axis};

use crate::config::RunConfig;
use crate::data::{self, Dataset};
use crate::engine::{Phase, Trainer};
use crate::error::{Error, Result};
use crate::metrics::{self, BilinearBaseline, Hallucinator, MetricReport, VerificationScore};
use crate::topology::{self, Aggregation};

/// Options shared by every command that builds a fresh configuration.
#[derive(Debug, Default)]
pub struct CommonOpts {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// File defaults, overridden by flags, then validated.
pub fn resolve_config(opts: &CommonOpts) -> Result<RunConfig> {
    let mut cfg = match &opts.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Connectivity, channel, and parameter accounting for the generator
/// described by `cfg`.
pub fn topology_report(cfg: &RunConfig) -> Result<String> {
    let spec = cfg.network_spec();
    spec.validate()?;
    let mut s = String::new();
    let mut line = |t: String| {
        s.push_str(&t);
        s.push('\n');
    };
    line("sparse-aggregation generator topology".into());
    line(format!(
        "blocks {}  layers per block {}  growth rate {}  aggregation base {}",
        spec.num_blocks, spec.block.num_layers, spec.block.growth_rate, spec.aggregation_base
    ));
    line(format!(
        "low-level channels {}  bottleneck channels {}  upsample channels {}  upscale {}x",
        spec.llfe_channels, spec.bottleneck_channels, spec.upsample_channels, spec.upscale_factor
    ));
    line(format!(
        "depth: {} layers (2 low-level + {}x{} block + bottleneck + upsample + reconstruction)",
        topology::depth_accounting(&spec),
        spec.num_blocks,
        spec.block.num_layers
    ));
    line(format!(
        "bottleneck input channels: {}",
        topology::bottleneck_input_channels(&spec)
    ));

    if spec.num_blocks > 0 {
        line(String::new());
        line("predecessor sets (0 = block input):".into());
        let plan = topology::build_plan(spec.block.num_layers, spec.aggregation_base)?;
        for l in 1..=spec.block.num_layers {
            line(format!("  layer {l} <- {:?}", plan.set(l)));
        }
        line(String::new());
        line("per-layer input channels by block:".into());
        for b in 0..spec.num_blocks {
            let block = spec.block_at(b);
            let chans: Vec<usize> = (1..=block.num_layers)
                .map(|l| topology::layer_input_channels(&plan, &block, l))
                .collect::<Result<_>>()?;
            line(format!("  block {b} (input {}): {chans:?}", block.input_channels));
        }
        line(String::new());
        line("kernel parameters, sparse vs dense aggregation (biases excluded):".into());
        for b in 0..spec.num_blocks {
            let block = spec.block_at(b);
            let sp = topology::block_parameter_count(&block, spec.aggregation_base, Aggregation::Sparse)?;
            let de = topology::block_parameter_count(&block, spec.aggregation_base, Aggregation::Dense)?;
            line(format!(
                "  block {b}: sparse {sp}  dense {de}  ratio {:.3}",
                sp as f64 / de as f64
            ));
        }
    }
    let sp = topology::network_parameter_count(&spec, Aggregation::Sparse)?;
    let de = topology::network_parameter_count(&spec, Aggregation::Dense)?;
    line(format!(
        "network: sparse {sp}  dense {de}  ratio {:.3}",
        sp as f64 / de as f64
    ));
    Ok(s)
}

/// Build the report, optionally writing it to `<out>/topology.txt`.
pub fn cmd_topology(cfg: &RunConfig, out: Option<&Path>) -> Result<String> {
    let text = topology_report(cfg)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("topology.txt"), &text)?;
    }
    Ok(text)
}

/// Run one training phase end to end: load or build the trainer, echo the
/// effective configuration into the output directory, stream one JSON log
/// record per step, write periodic checkpoints, and always leave a final
/// checkpoint. Returns the final checkpoint path.
pub fn cmd_train(
    opts: &CommonOpts,
    phase: Phase,
    manifest: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<PathBuf> {
    let (mut trainer, ds) = match checkpoint {
        Some(p) => {
            if opts.config.is_some() || opts.seed.is_some() {
                return Err(Error::Config(
                    "--config/--seed cannot be combined with --checkpoint; \
                     a checkpoint carries its configuration"
                        .into(),
                ));
            }
            let trainer = Trainer::load(p)?;
            let ds = Dataset::load(manifest, trainer.cfg.input_size, trainer.cfg.upscale)?;
            (trainer, ds)
        }
        None => {
            let cfg = resolve_config(opts)?;
            let ds = Dataset::load(manifest, cfg.input_size, cfg.upscale)?;
            let trainer = Trainer::new(cfg, ds.num_classes)?;
            (trainer, ds)
        }
    };
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), trainer.cfg.canonical_text())?;
    let log_path = out.join(format!("train_{}.jsonl", phase.as_str()));
    let mut log = BufWriter::new(File::create(&log_path)?);
    let every = trainer.cfg.checkpoint_every;
    trainer.run_phase(
        &ds,
        phase,
        &mut |r| {
            let line = serde_json::to_string(r)
                .map_err(|e| Error::Train(format!("cannot serialize log record: {e}")))?;
            log.write_all(line.as_bytes())?;
            log.write_all(b"\n")?;
            Ok(())
        },
        Some((out, every)),
    )?;
    log.flush()?;
    let final_path = out.join(format!("{}_final.fgcp", phase.as_str()));
    trainer.save(&final_path)?;
    Ok(final_path)
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn load_png(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?
        .to_rgb8();
    Ok(data::image_to_array(&img))
}

fn save_png(arr: &Array3<f64>, path: &Path) -> Result<()> {
    data::array_to_image(&arr.view().into_dyn())?
        .save(path)
        .map_err(Error::from)
}

/// Upscale every PNG in `input` with the checkpointed generator, writing the
/// results under the same file names in `out`. With `grid`, each image also
/// gets a `<stem>_grid.png` panel: plain bilinear upscaling | model output |
/// the matching high-resolution file from `hr` when one exists. An empty
/// input directory is a warning, not an error. Returns the output count.
pub fn cmd_hallucinate(
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    grid: bool,
    hr: Option<&Path>,
) -> Result<usize> {
    let trainer = Trainer::load(checkpoint)?;
    let files = png_files(input)?;
    fs::create_dir_all(out)?;
    if files.is_empty() {
        eprintln!("warning: no .png files in {}; nothing to do", input.display());
        return Ok(0);
    }
    let factor = trainer.cfg.upscale;
    let mut written = 0;
    for path in &files {
        let name = path.file_name().expect("png_files yields plain files");
        let lr = load_png(path)?;
        let sr = trainer.gen.upscale(&lr)?;
        save_png(&sr, &out.join(name))?;
        written += 1;
        if grid {
            let mut panels = vec![data::bilinear_upsample(&lr, factor), sr];
            if let Some(hr_dir) = hr {
                let hr_path = hr_dir.join(name);
                if hr_path.is_file() {
                    panels.push(load_png(&hr_path)?);
                }
            }
            let views: Vec<_> = panels.iter().map(|p| p.view()).collect();
            let panel = concatenate(Axis(2), &views)
                .map_err(|e| Error::Shape(format!("grid panels disagree on size: {e}")))?;
            let stem = path.file_stem().unwrap_or_default().to_string_lossy();
            save_png(&panel, &out.join(format!("{stem}_grid.png")))?;
        }
    }
    Ok(written)
}

fn split_indices<'d>(ds: &'d Dataset, split: &str) -> Result<&'d [usize]> {
    let indices = match split {
        "train" => &ds.train_indices,
        "val" => &ds.val_indices,
        other => {
            return Err(Error::Config(format!(
                "split must be 'train' or 'val', got '{other}'"
            )))
        }
    };
    if indices.is_empty() {
        return Err(Error::Data(format!("manifest has no {split} records")));
    }
    Ok(indices)
}

/// Score the checkpointed generator and the bilinear baseline over one
/// manifest split; write `report.json` and `report.txt` under `out`.
pub fn cmd_evaluate(checkpoint: &Path, manifest: &Path, out: &Path, split: &str) -> Result<MetricReport> {
    let trainer = Trainer::load(checkpoint)?;
    let ds = Dataset::load(manifest, trainer.cfg.input_size, trainer.cfg.upscale)?;
    let indices = split_indices(&ds, split)?;
    let baseline = BilinearBaseline { factor: trainer.cfg.upscale };
    let scores = metrics::evaluate_sr(&ds, indices, &[&trainer.gen, &baseline], trainer.cfg.ssim_window)?;
    let report = MetricReport::new(trainer.cfg.ssim_window, scores, None);
    fs::create_dir_all(out)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Metric(format!("cannot serialize report: {e}")))?;
    fs::write(out.join("report.json"), json)?;
    fs::write(out.join("report.txt"), render_report(&report))?;
    Ok(report)
}

/// Human-readable form of a metric report.
pub fn render_report(report: &MetricReport) -> String {
    let mut s = String::new();
    s.push_str(report.conventions);
    s.push('\n');
    s.push_str(&format!(
        "{:<12} {:>8} {:>16} {:>11}\n",
        "upscaler", "images", "mean psnr (dB)", "mean ssim"
    ));
    for row in &report.sr {
        s.push_str(&format!(
            "{:<12} {:>8} {:>16.4} {:>11.4}\n",
            row.label, row.n_images, row.psnr_db, row.ssim
        ));
    }
    if let Some(v) = &report.verification {
        s.push_str(&format!(
            "verification: accuracy {:.4} at threshold {:.4} ({} pairs)\n",
            v.accuracy, v.threshold, v.n_pairs
        ));
    }
    s
}

/// Face-verification accuracy on seeded genuine/impostor pairs drawn from
/// the validation split, embedding the model's reconstructions. Writes
/// `verification.json` under `out`.
pub fn cmd_verify(checkpoint: &Path, manifest: &Path, out: &Path) -> Result<VerificationScore> {
    let trainer = Trainer::load(checkpoint)?;
    let ds = Dataset::load(manifest, trainer.cfg.input_size, trainer.cfg.upscale)?;
    let pairs = data::make_verification_pairs(&ds, trainer.cfg.seed, trainer.cfg.verify_pairs)?;
    let scores = metrics::verification_scores(&trainer.rec, &trainer.gen, &ds, &pairs)?;
    let (accuracy, threshold) = metrics::verification_accuracy(&scores)?;
    let score = VerificationScore {
        accuracy,
        threshold,
        n_pairs: pairs.len(),
    };
    fs::create_dir_all(out)?;
    let json = serde_json::to_string_pretty(&score)
        .map_err(|e| Error::Metric(format!("cannot serialize score: {e}")))?;
    fs::write(out.join("verification.json"), json)?;
    Ok(score)
}

/// Write a small synthetic identity dataset plus manifest; returns the
/// manifest path.
pub fn cmd_synth_toy(out: &Path, identities: usize, per_identity: usize, size: usize, seed: u64) -> Result<PathBuf> {
    data::synth_toy_dataset(out, identities, per_identity, size, seed)
}
