use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hsisr::{Pipeline, PipelineConfig, PipelineError};

#[derive(Parser)]
#[command(name = "hsisr", version, about = "Unmixing-based hyperspectral super-resolution pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Blur and decimate the reference cube into hsi_lr.npy
    Degrade(Common),
    /// Extract endmembers and abundances from the low-resolution cube
    Unmix(Common),
    /// Generate the dead-leaves training corpus
    Synth(Common),
    /// Score bicubic upsampling of the low-resolution cube
    Baseline(Common),
    /// Mix super-resolved abundances back into a cube
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Super-resolved abundances (N x H x W NPY); bicubic a_lr if absent
        #[arg(long)]
        a_sr: Option<PathBuf>,
    },
    /// Score an estimate cube against the reference
    Eval {
        #[command(flatten)]
        common: Common,
        /// Cube to score; defaults to hsi_sr.npy in the work dir
        #[arg(long)]
        estimate: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Override base_seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override corpus_count
    #[arg(long)]
    count: Option<usize>,
    /// Override work_dir
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn pipeline(&self) -> Result<Pipeline, PipelineError> {
        let mut cfg = PipelineConfig::from_file(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.base_seed = seed;
        }
        if let Some(count) = self.count {
            cfg.corpus_count = count;
        }
        if let Some(out) = &self.out {
            cfg.work_dir = out.clone();
        }
        Pipeline::new(cfg)
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value).context("formatting summary")?);
    Ok(())
}

fn run(cli: Cli) -> Result<anyhow::Result<()>, PipelineError> {
    Ok(match cli.command {
        Command::Degrade(c) => print_json(&c.pipeline()?.cmd_degrade()?),
        Command::Unmix(c) => print_json(&c.pipeline()?.cmd_unmix()?),
        Command::Synth(c) => {
            let manifest = c.pipeline()?.cmd_synth()?;
            println!(
                "wrote {} pairs ({:?} -> {:?}), base seed {}",
                manifest.count, manifest.hr_shape, manifest.lr_shape, manifest.base_seed
            );
            Ok(())
        }
        Command::Baseline(c) => print_json(&c.pipeline()?.cmd_baseline()?),
        Command::Reconstruct { common, a_sr } => {
            let mut p = common.pipeline()?;
            if a_sr.is_some() {
                p = Pipeline::new(PipelineConfig { a_sr, ..p.config().clone() })?;
            }
            print_json(&p.cmd_reconstruct()?)
        }
        Command::Eval { common, estimate } => {
            let mut p = common.pipeline()?;
            if estimate.is_some() {
                p = Pipeline::new(PipelineConfig { estimate, ..p.config().clone() })?;
            }
            print_json(&p.cmd_eval()?)
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(hsisr::error::EXIT_VALIDATION as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
