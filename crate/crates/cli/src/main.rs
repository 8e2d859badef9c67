//! `halo`: canonicalize skeletons, train and evaluate occupancy models,
//! extract surfaces and refine hand-object scenes.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    CanonicalizeArgs, EvalArgs, GenCorpusArgs, GradcheckArgs, NoiseSweepArgs, RefineArgs, SurfaceArgs, TrainArgs,
};

#[derive(Parser)]
#[command(name = "halo", version, about = "Keypoint-driven articulated hand occupancy")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML or JSON settings for the command; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-bone canonicalizing transforms and angles of a skeleton.
    Canonicalize(CanonicalizeArgs),
    /// Extract the hand surface of a skeleton as an OBJ mesh.
    Surface(SurfaceArgs),
    /// Generate a capsule-hand corpus directory.
    GenCorpus(GenCorpusArgs),
    /// Train an occupancy model.
    Train(TrainArgs),
    /// IoU, Chamfer-L1 and normal consistency on a corpus' held-out split.
    Eval(EvalArgs),
    /// Translate a hand out of an object.
    Refine(RefineArgs),
    /// Compare keypoint gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Reconstruction IoU under keypoint noise.
    NoiseSweep(NoiseSweepArgs),
}

/// A failed command: process exit code and a one-line message.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

impl Failure {
    pub fn new(code: u8, msg: impl Into<String>) -> Self {
        Failure { code, msg: msg.into() }
    }
}

impl From<halo_core::Error> for Failure {
    fn from(e: halo_core::Error) -> Self {
        use halo_core::Error as E;
        let code = match &e {
            E::Parse { .. } | E::Format(_) | E::Config(_) | E::Skeleton(_) | E::Canonicalization(_) => 2,
            E::Mismatch(_) | E::ShapeMismatch { .. } | E::PartIndexOutOfRange(_) => 3,
            E::Io { .. } => 4,
            _ => 1,
        };
        Failure::new(code, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = config::Context {
        seed: cli.seed,
        file: cli.config,
    };
    let result = match cli.command {
        Command::Canonicalize(a) => commands::canonicalize(&a),
        Command::Surface(a) => commands::surface(&ctx, &a),
        Command::GenCorpus(a) => commands::gen_corpus(&ctx, &a),
        Command::Train(a) => commands::train(&ctx, &a),
        Command::Eval(a) => commands::eval(&ctx, &a),
        Command::Refine(a) => commands::refine(&ctx, &a),
        Command::Gradcheck(a) => commands::gradcheck(&ctx, &a),
        Command::NoiseSweep(a) => commands::noise_sweep(&ctx, &a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg: Vec<&str> = f.msg.split_whitespace().collect();
            eprintln!("error: {}", msg.join(" "));
            ExitCode::from(f.code)
        }
    }
}
