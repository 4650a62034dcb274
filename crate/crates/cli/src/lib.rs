//! Command-line driver: pre-training, the three counting studies, the
//! distance and set-size analyses, scene rendering, and statistics recomputed
//! from emitted CSV files.

mod commands;
mod error;
mod layout;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pointcount_core::config::RunConfig;

pub use commands::{analyze, pretrain, render, stats, study};
pub use error::CliError;
pub use layout::Layout;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "POINTCOUNT_OUT";
pub const DEFAULT_OUT: &str = "pointcount-out";

#[derive(Debug, Parser)]
#[command(name = "pointcount", version, about = "Train and analyze the counting-and-pointing network")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by every subcommand. Precedence: flags, then `--set`
/// overrides, then the config file, then built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Flat `key = value` run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed list: `1,2,3`, a range `1-5`, or `count:N`.
    #[arg(long, global = true)]
    pub seeds: Option<String>,
    /// Worker threads for seed- and trial-level parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output root (default: $POINTCOUNT_OUT, else ./pointcount-out).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub study: Option<u8>,
    /// End point of the Study-3 skill schedule: `paper`, `alt`, or three probabilities.
    #[arg(long, global = true)]
    pub schedule_end: Option<String>,
    #[arg(long, global = true)]
    pub iterations_gesture: Option<usize>,
    /// Any config key, as `key=value`; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Rows {
    Low,
    High,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gesture then recitation pre-training; writes both checkpoints and curves.
    Pretrain,
    /// Main training of one study from the pre-training checkpoints.
    Study {
        /// Start from a fresh initialization when no checkpoints exist.
        #[arg(long)]
        force_fresh: bool,
    },
    /// Distance and set-size analyses of the Study-3 checkpoints.
    Analyze {
        #[arg(long, value_enum, default_value_t = Rows::Both)]
        rows: Rows,
    },
    /// Writes a scene such as `balls=2:1,7:3 hand=2 trigger=1` as a binary PGM.
    Render {
        spec: String,
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Recomputes statistics from the CSV files of earlier runs.
    Stats,
}

impl Common {
    /// Resolves the effective configuration.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                RunConfig::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if cfg.out.is_none() {
            cfg.out = Some(std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from));
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{kv}`")))?;
            cfg.apply(k.trim(), v.trim())?;
        }
        let flags: [(&str, Option<String>); 6] = [
            ("seeds", self.seeds.clone()),
            ("jobs", self.jobs.map(|j| j.to_string())),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
            ("study", self.study.map(|s| s.to_string())),
            ("schedule_end", self.schedule_end.clone()),
            ("iterations_gesture", self.iterations_gesture.map(|n| n.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.apply(key, &v)?;
            }
        }
        Ok(cfg)
    }
}

/// Parses `args` and runs the command, reporting errors on stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.common.resolve()?;
    match &cli.command {
        Command::Pretrain => pretrain(&cfg),
        Command::Study { force_fresh } => study(&cfg, *force_fresh),
        Command::Analyze { rows } => analyze(&cfg, *rows),
        Command::Render { spec, output } => render(&cfg, spec, output.as_deref()),
        Command::Stats => stats(&cfg),
    }
}
