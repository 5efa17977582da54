//! `sobtrack`: batch shape and radiance tracking.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::ParamArgs;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "sobtrack", version, about = "Track the shape and radiance of an object through an image sequence")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    BetaO,
    BetaD,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Track through a sequence from an initial mask.
    Track {
        /// Frame directory or numbered pattern such as seq/%04d.png.
        #[arg(long)]
        frames: Option<String>,
        /// Mask of the object in the first frame.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Ground-truth masks, one per frame, for eval.csv.
        #[arg(long)]
        gt: Option<String>,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Warp a region from one frame onto the next and estimate its occlusion.
    Match {
        #[arg(long)]
        first: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        second: PathBuf,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Detect dis-occlusions around a co-visible region.
    Disocclude {
        #[arg(long)]
        image: PathBuf,
        /// The co-visible part of the warped region.
        #[arg(long)]
        region: PathBuf,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Precision, recall and F-measure of predicted masks.
    Eval {
        /// Predicted mask directory or pattern.
        #[arg(long)]
        pred: String,
        /// Ground-truth mask directory or pattern.
        #[arg(long)]
        truth: String,
        /// CSV destination; printed to stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Skip this many leading truth masks, e.g. 1 when the first is the
        /// initial mask and predictions start at the second frame.
        #[arg(long, default_value_t = 0)]
        offset: usize,
    },
    /// Precision/recall as a threshold sweeps its range on one frame pair.
    Sweep {
        #[arg(long)]
        first: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        second: PathBuf,
        /// True object mask in the second frame.
        #[arg(long)]
        truth: PathBuf,
        /// True occlusion (newly hidden pixels) in the second frame.
        #[arg(long)]
        truth_occlusion: Option<PathBuf>,
        /// True dis-occlusion in the second frame.
        #[arg(long)]
        truth_disocclusion: Option<PathBuf>,
        #[arg(long, value_enum)]
        param: SweepKind,
        #[arg(long, default_value_t = sobolev_track::eval::SWEEP_SAMPLES)]
        samples: usize,
        /// CSV destination.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Render a synthetic sequence with its ground truth.
    Synth {
        /// Script file; the built-in default scene when absent.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
    },
    /// Colour-code a .flo flow file.
    Flowviz {
        #[arg(long)]
        input: PathBuf,
        /// PNG destination.
        #[arg(long)]
        output: PathBuf,
    },
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Track {
            frames,
            mask,
            output,
            gt,
            params,
        } => {
            let mut cfg = params.resolve()?;
            for (k, v) in [("frames", frames), ("gt", gt)] {
                if let Some(v) = v {
                    cfg.set(k, &v)?;
                }
            }
            if let Some(m) = mask {
                cfg.mask = Some(m);
            }
            if let Some(o) = output {
                cfg.output = Some(o);
            }
            commands::track(&cfg)
        }
        Cmd::Match {
            first,
            mask,
            second,
            output,
            params,
        } => commands::match_pair(&first, &mask, &second, &output, &params.resolve()?),
        Cmd::Disocclude {
            image,
            region,
            output,
            params,
        } => commands::disocclude(&image, &region, &output, &params.resolve()?),
        Cmd::Eval {
            pred,
            truth,
            output,
            offset,
        } => commands::eval(&pred, &truth, output.as_deref(), offset),
        Cmd::Sweep {
            first,
            mask,
            second,
            truth,
            truth_occlusion,
            truth_disocclusion,
            param,
            samples,
            output,
            params,
        } => commands::sweep(
            &commands::SweepInputs {
                first,
                mask,
                second,
                truth,
                truth_occlusion,
                truth_disocclusion,
            },
            param,
            samples,
            &output,
            &params.resolve()?,
        ),
        Cmd::Synth { script, output } => commands::synth(script.as_deref(), &output),
        Cmd::Flowviz { input, output } => commands::flowviz(&input, &output),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sobtrack: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
