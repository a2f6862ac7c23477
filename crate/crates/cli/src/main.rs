//! `layoutmv`: command-line surface for the layout-conditioned multi-view
//! scene toolkit. Exit codes: 0 ok, 1 internal error, 2 bad input.

mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;

#[derive(Parser)]
#[command(
    name = "layoutmv",
    about = "Deterministic geometry engine and generation harness for layout-conditioned multi-view indoor scenes",
    disable_help_subcommand = true
)]
struct Cli {
    /// Emit structured JSON records, one per step, on stdout.
    #[arg(long, global = true)]
    json_logs: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render multi-layer semantic/depth and spatial condition stacks.
    Rasterize(RasterizeArgs),
    /// Rectify a depth map against the scene layout.
    AlignDepth(AlignDepthArgs),
    /// Forward-warp an image with depth into another view.
    Warp(WarpArgs),
    /// Compute layout-aware epipolar attention masks.
    Epimask(EpimaskArgs),
    /// Plan object-focused camera trajectories and the dense view set.
    PlanTraj(PlanTrajArgs),
    /// Render a PLY point cloud into a camera view.
    RenderPc(RenderPcArgs),
    /// Emit a synthetic fixture scene (and optionally sample cameras).
    Fixture(FixtureArgs),
    /// Run recursive scene generation end to end.
    Generate(GenerateArgs),
}

/// Errors carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad input: missing files, schema violations, invalid flags (exit 2).
    Input(String),
    /// Internal failure (exit 1).
    Internal(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Internal(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult = Result<(), CliError>;

pub fn input_err(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

pub fn internal_err(msg: impl Into<String>) -> CliError {
    CliError::Internal(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let logs = Logger {
        enabled: cli.json_logs,
    };
    let result = match cli.command {
        Command::Rasterize(a) => cmd_rasterize(a, &logs),
        Command::AlignDepth(a) => cmd_align_depth(a, &logs),
        Command::Warp(a) => cmd_warp(a, &logs),
        Command::Epimask(a) => cmd_epimask(a, &logs),
        Command::PlanTraj(a) => cmd_plan_traj(a, &logs),
        Command::RenderPc(a) => cmd_render_pc(a, &logs),
        Command::Fixture(a) => cmd_fixture(a, &logs),
        Command::Generate(a) => cmd_generate(a, &logs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(m)) => {
            eprintln!("layoutmv: input error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(m)) => {
            eprintln!("layoutmv: error: {m}");
            ExitCode::from(1)
        }
    }
}

/// Structured step logging (`--json-logs`).
pub struct Logger {
    enabled: bool,
}

impl Logger {
    pub fn step(&self, record: serde_json::Value) {
        if self.enabled {
            println!("{record}");
        }
    }
}
