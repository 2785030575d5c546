use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use gmcf::config::{load_config_as, Experiment};
use gmcf::run::run;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Flow,
    Steady,
    Continuation,
    Barrier,
    Comparison,
    Viscosity,
    Liouville,
}

impl From<Command> for Experiment {
    fn from(c: Command) -> Self {
        match c {
            Command::Flow => Experiment::Flow,
            Command::Steady => Experiment::Steady,
            Command::Continuation => Experiment::Continuation,
            Command::Barrier => Experiment::Barrier,
            Command::Comparison => Experiment::Comparison,
            Command::Viscosity => Experiment::Viscosity,
            Command::Liouville => Experiment::Liouville,
        }
    }
}

/// Regularized forced mean curvature flow experiments.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// Experiment to run; overrides the `experiment` key in each config.
    #[arg(value_enum)]
    command: Command,
    /// One or more config files.
    #[arg(long, num_args = 1.., required = true)]
    config: Vec<PathBuf>,
    /// Output directory; defaults to `run.out` from the config, then `out`.
    /// With several configs each run writes to a subdirectory named after
    /// its config file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of configs run concurrently.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn out_dir(cli: &Cli, path: &std::path::Path, configured: Option<&PathBuf>) -> PathBuf {
    let base = cli.out.clone().or_else(|| configured.cloned()).unwrap_or_else(|| PathBuf::from("out"));
    if cli.config.len() == 1 {
        base
    } else {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
        base.join(stem)
    }
}

/// Ok(true) when every property held.
fn run_one(cli: &Cli, path: &std::path::Path) -> Result<bool, String> {
    let mut cfg = load_config_as(path, Some(cli.command.into())).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let dir = out_dir(cli, path, cfg.out.as_ref());
    let summary = run(&cfg, &dir).map_err(|e| format!("{}: {e}", path.display()))?;
    let text = summary.render();
    print!("{text}");
    Ok(summary.all_pass())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let batch = cli.batch.max(1);
    let mut ok = true;
    for chunk in cli.config.chunks(batch) {
        let results: Vec<Result<bool, String>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|p| s.spawn(|| run_one(&cli, p))).collect();
            handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("run panicked".into()))).collect()
        });
        for r in results {
            match r {
                Ok(pass) => ok &= pass,
                Err(e) => {
                    eprintln!("error: {e}");
                    ok = false;
                }
            }
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
