use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::app::Profile;

#[derive(Debug, Parser)]
#[command(name = "mdforge", version, about = "Generate, run and score LAMMPS input scripts")]
pub struct Cli {
    /// Config file (default: $MDFORGE_CONFIG, else built-in defaults).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Runner and model backend (default: $MDFORGE_RUNNER_PROFILE, else stub).
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Overrides registry.potentials_dir.
    #[arg(long, global = true)]
    pub potentials: Option<PathBuf>,
    /// Overrides runner.workdir_root.
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One-shot drafts for a task, linted and checked against the registry.
    Generate(GenerateArgs),
    /// A full closed-loop session.
    Loop(LoopArgs),
    /// Execute a script file.
    Run(RunArgs),
    /// Score a script against the log of a run that already happened.
    Evaluate(EvaluateArgs),
    /// Inspect the potential registry.
    #[command(subcommand)]
    Potentials(PotentialsCommand),
    /// Benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// HTTP service for sessions, event streams and resumes.
    Serve(ServeArgs),
    /// SVG charts of the thermo columns of a log.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub task: String,
    /// Number of drafts.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Also execute every draft.
    #[arg(long)]
    pub execute: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HitlArg {
    Off,
    PauseBeforeRun,
    PauseEachStep,
}

#[derive(Debug, Args)]
pub struct LoopArgs {
    #[arg(long)]
    pub task: String,
    /// Session id (default: a fresh UUID).
    #[arg(long)]
    pub session_id: Option<String>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// Pause points; resumes are read from stdin.
    #[arg(long, value_enum)]
    pub hitl: Option<HitlArg>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub script: PathBuf,
    /// Short launch probe instead of a full run.
    #[arg(long)]
    pub probe: bool,
    /// Overrides runner.timeout_s.
    #[arg(long)]
    pub timeout_s: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Script file, or a full model response with an answer block.
    #[arg(long)]
    pub script: PathBuf,
    #[arg(long)]
    pub log: PathBuf,
    /// Task the script was written for (seen by the judge).
    #[arg(long, default_value = "")]
    pub task: String,
    /// Print format, lint and quality reports along with the reward.
    #[arg(long)]
    pub detail: bool,
}

#[derive(Debug, Subcommand)]
pub enum PotentialsCommand {
    /// Every potential file in the registry.
    List,
    /// Metadata and the first lines of one file.
    Info {
        name: String,
        #[arg(long, default_value_t = 10)]
        lines: usize,
    },
    /// Closest registry entries to a file name.
    Find {
        query: String,
        /// Defaults to registry.top_k.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Which potentials a script needs and whether they are available.
    Check { script: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MultiArg {
    Jaccard,
    Strict,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Knowledge and syntax items.
    Qa {
        #[arg(required = true)]
        items: Vec<PathBuf>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long, value_enum)]
        multi_mode: Option<MultiArg>,
    },
    /// Exec-Success@k over codegen items.
    Codegen {
        #[arg(required = true)]
        items: Vec<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        /// JSON object of item id to human score in [0, 10].
        #[arg(long)]
        human: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Overrides service.listen.
    #[arg(long)]
    pub listen: Option<String>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    pub log: PathBuf,
    #[arg(long, default_value = "plots")]
    pub out: PathBuf,
}
