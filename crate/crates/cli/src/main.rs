//! `flowshape`: theorem checks, training runs, sweeps, flow parsing and batch
//! plans over small enumerable environments.
//!
//! Exit codes: 0 success, 1 a check failed, 2 bad usage or input.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod manifest;
mod numfmt;

#[derive(Parser, Debug)]
#[command(name = "flowshape", version, about = "Perceptual-flow reward shaping at tabular scale")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for sampling, scorers and env generation.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for sweep and verify; 0 uses every core.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the partition, proportionality, bound and calibration identities on an env.
    VerifyTheorems {
        /// Env JSON path, or a bundled name (t1, r1, r2).
        #[arg(long)]
        env: String,
        #[arg(long, default_value = "log:0.001:40:20")]
        lambda: String,
        #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
        eps: String,
    },
    /// Train a tabular policy with SubTB and write per-step metrics as CSV.
    Train {
        #[arg(long)]
        env: String,
        /// Shaping intensity, or `star` for the calibrated value.
        #[arg(long, default_value = "4.5")]
        lambda: String,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long, default_value = "exact")]
        mode: String,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0.1)]
        step_size: f64,
        /// Flows per step in sampled mode.
        #[arg(long, default_value_t = 16)]
        group_size: usize,
    },
    /// Bound and exact TV over a (lambda, eps) grid as CSV.
    Sweep {
        #[arg(long)]
        env: String,
        #[arg(long, default_value = "log:0.001:40:20")]
        lambda: String,
        #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
        eps: String,
    },
    /// Parse flow text into JSON.
    ParseFlow {
        /// Input file; stdin when absent or `-`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Render flow JSON (as produced by parse-flow) back to canonical text.
    RenderFlow {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Classify verification records (k_pass_without,k_pass_with[,budget]).
    Classify {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Plan shared-prefix probes for a flow and compare with naive scoring.
    PlanBatch {
        /// Flow text file; stdin when absent or `-`.
        #[arg(long)]
        flow: Option<PathBuf>,
        /// Answer text to probe after every prefix.
        #[arg(long, conflicts_with = "terminal")]
        answer: Option<String>,
        /// Probe the stop action instead of an answer.
        #[arg(long)]
        terminal: bool,
    },
    /// Write a bundled randomized env, or a custom one from `--seed`.
    GenEnv {
        /// `r1` or `r2`; omit to build from the flags below.
        name: Option<String>,
        #[arg(long, default_value_t = 8)]
        candidates: usize,
        #[arg(long, default_value_t = 4)]
        bags: usize,
        #[arg(long, default_value_t = 2)]
        flow_len: usize,
        #[arg(long, default_value_t = 2)]
        captions: usize,
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
    },
}

/// How a command finished when it did not hit an input error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    CheckFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let c = &cli.common;
    let res = match cli.command {
        Command::VerifyTheorems { env, lambda, eps } => commands::verify_theorems(c, &env, &lambda, &eps),
        Command::Train {
            env,
            lambda,
            eps,
            mode,
            steps,
            step_size,
            group_size,
        } => commands::train(c, &env, &lambda, eps, &mode, steps, step_size, group_size),
        Command::Sweep { env, lambda, eps } => commands::sweep(c, &env, &lambda, &eps),
        Command::ParseFlow { input } => commands::parse_flow(c, input.as_deref()),
        Command::RenderFlow { input } => commands::render_flow(c, input.as_deref()),
        Command::Classify { input } => commands::classify(c, input.as_deref()),
        Command::PlanBatch { flow, answer, terminal } => commands::plan_batch(c, flow.as_deref(), answer.as_deref(), terminal),
        Command::GenEnv {
            name,
            candidates,
            bags,
            flow_len,
            captions,
            sigma,
        } => commands::gen_env(
            c,
            name.as_deref(),
            flowshape::env::RandomEnvConfig {
                candidates,
                bags,
                flow_len,
                captions,
                sigma,
            },
        ),
    };
    match res {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
