//! Command-line entry point: argument parsing and printing only; all
//! behavior lives in the library's `cli` module.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use facegan::cli::{self, CommonOpts};
use facegan::engine::Phase;

#[derive(Parser)]
#[command(name = "facegan", version, about = "Identity-preserving 4x face super-resolution")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print generator connectivity, channels, and parameter accounting
    Topology {
        /// Configuration file (key = value lines); defaults if omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the configured seed
        #[arg(long)]
        seed: Option<u64>,
        /// Also write topology.txt into this directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one training phase, writing logs and checkpoints
    Train {
        /// fr_pretrain, gan_pretrain, or joint
        #[arg(long)]
        phase: String,
        /// Dataset manifest (path,identity_id,split)
        #[arg(long)]
        manifest: PathBuf,
        /// Configuration file; incompatible with --checkpoint
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the configured seed; incompatible with --checkpoint
        #[arg(long)]
        seed: Option<u64>,
        /// Resume from this checkpoint instead of initializing fresh
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output directory for logs, config echo, and checkpoints
        #[arg(long)]
        out: PathBuf,
    },
    /// Upscale a directory of PNGs with a trained generator
    Hallucinate {
        /// Checkpoint holding the generator
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of low-resolution input PNGs
        #[arg(long)]
        input: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Also write side-by-side panels (bilinear | model | reference)
        #[arg(long)]
        grid: bool,
        /// Directory of matching high-resolution references for the grid
        #[arg(long)]
        hr: Option<PathBuf>,
    },
    /// Score the model and the bilinear baseline on a manifest split
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Which manifest split to score
        #[arg(long, default_value = "val")]
        split: String,
    },
    /// Face-verification accuracy over seeded genuine/impostor pairs
    Verify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic identity dataset for desk-scale experiments
    SynthToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        identities: usize,
        #[arg(long, default_value_t = 3)]
        per_identity: usize,
        /// High-resolution image side length
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cmd: Cmd) -> facegan::Result<()> {
    match cmd {
        Cmd::Topology { config, seed, out } => {
            let cfg = cli::resolve_config(&CommonOpts { config, seed })?;
            print!("{}", cli::cmd_topology(&cfg, out.as_deref())?);
        }
        Cmd::Train { phase, manifest, config, seed, checkpoint, out } => {
            let phase = Phase::parse(&phase)?;
            let opts = CommonOpts { config, seed };
            let final_ckpt = cli::cmd_train(&opts, phase, &manifest, checkpoint.as_deref(), &out)?;
            println!("final checkpoint: {}", final_ckpt.display());
        }
        Cmd::Hallucinate { checkpoint, input, out, grid, hr } => {
            let n = cli::cmd_hallucinate(&checkpoint, &input, &out, grid, hr.as_deref())?;
            println!("wrote {n} upscaled image(s) to {}", out.display());
        }
        Cmd::Evaluate { checkpoint, manifest, out, split } => {
            let report = cli::cmd_evaluate(&checkpoint, &manifest, &out, &split)?;
            print!("{}", cli::render_report(&report));
        }
        Cmd::Verify { checkpoint, manifest, out } => {
            let v = cli::cmd_verify(&checkpoint, &manifest, &out)?;
            println!(
                "verification accuracy {:.4} at threshold {:.4} ({} pairs)",
                v.accuracy, v.threshold, v.n_pairs
            );
        }
        Cmd::SynthToy { out, identities, per_identity, size, seed } => {
            let manifest = cli::cmd_synth_toy(&out, identities, per_identity, size, seed)?;
            println!("manifest: {}", manifest.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
