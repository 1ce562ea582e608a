//! `rtune`: profile a model, tune its routine path, run it, and check the
//! tuner against exhaustive search.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "rtune", version, about = "Profile-driven hybrid routine selection for small CNNs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
pub struct Shared {
    /// Discarded runs before measuring.
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    /// Measured runs per routine or inference.
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    /// Comma-separated schema set.
    #[arg(long, value_delimiter = ',', default_value = "cpu,cpu:qint8")]
    pub schemas: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print reports as JSON.
    #[arg(long)]
    pub json: bool,
    /// Routines kept per layer and schema for integrated profiling.
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    #[arg(long, default_value_t = 2)]
    pub max_passes: usize,
    /// Deterministic hashed clock instead of wall time.
    #[arg(long)]
    pub fake_timer: bool,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ZooNet {
    TinyCnn,
    Vgg16Toy,
    ConvDiamond,
    Diamond,
    NestedBranches,
    Chain,
}

#[derive(Subcommand)]
enum Cmd {
    /// Unit (and optionally integrated) profiling of every routine.
    Profile {
        model: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        integrated: bool,
        #[command(flatten)]
        shared: Shared,
    },
    /// Select the fastest routine path from a profile.
    Tune {
        model: PathBuf,
        profile: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, group = "mode")]
        float32_only: bool,
        #[arg(long, group = "mode")]
        qint8_only: bool,
        #[arg(long, group = "mode")]
        hybrid: bool,
        /// Calibration input tensor; defaults to the seeded synthetic input.
        #[arg(long)]
        calib: Option<PathBuf>,
        #[command(flatten)]
        shared: Shared,
    },
    /// Run inference with a tuned path next to the untuned float path.
    Run {
        model: PathBuf,
        /// Tuned routine path.
        path: PathBuf,
        input: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        shared: Shared,
    },
    /// Compare the tuner against exhaustive search on the same costs.
    OracleCheck {
        model: PathBuf,
        profile: PathBuf,
        /// Deliberately corrupt the DP (negative control).
        #[arg(long, hide = true)]
        inject_fault: bool,
        #[command(flatten)]
        shared: Shared,
    },
    /// Write a bundled net (and optionally a seeded input) to disk.
    Zoo {
        #[arg(value_enum)]
        net: ZooNet,
        #[arg(short, long)]
        out: PathBuf,
        /// Layer count for `chain`.
        #[arg(long, default_value_t = 10)]
        layers: usize,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Profile {
            model,
            out,
            integrated,
            shared,
        } => commands::profile(&model, &out, integrated, &shared),
        Cmd::Tune {
            model,
            profile,
            out,
            float32_only,
            qint8_only,
            hybrid: _,
            calib,
            shared,
        } => {
            let mode = if float32_only {
                commands::Mode::Float32
            } else if qint8_only {
                commands::Mode::Qint8
            } else {
                commands::Mode::Hybrid
            };
            commands::tune(&model, &profile, &out, mode, calib.as_deref(), &shared)
        }
        Cmd::Run {
            model,
            path,
            input,
            out,
            shared,
        } => commands::run(&model, &path, &input, out.as_deref(), &shared),
        Cmd::OracleCheck {
            model,
            profile,
            inject_fault,
            shared,
        } => commands::oracle_check(&model, &profile, inject_fault, &shared),
        Cmd::Zoo {
            net,
            out,
            layers,
            input,
            seed,
        } => commands::zoo(net, layers, &out, input.as_deref(), seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
