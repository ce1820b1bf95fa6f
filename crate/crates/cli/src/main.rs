use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use feedaxis_core::optim::ConstraintMode;

mod commands;
mod config;
mod output;

use commands::{Cell, SweepArgs, TuneArgs};
use config::{load_config, AlgorithmChoice, RunConfig};

/// Ball-screw feed axis simulation, servo tuning and motor capacity sweeps.
#[derive(Parser)]
#[command(name = "feedaxis", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory, overriding `output.directory`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Suppress the resolved-config log on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct CellArgs {
    /// Catalog motor id; defaults to `mechanical.motor`.
    #[arg(long)]
    motor: Option<String>,
    /// Cruise speed, mm/s; defaults to the first configured speed.
    #[arg(long)]
    speed: Option<f64>,
    /// Acceleration, m/s²; defaults to the first configured acceleration.
    #[arg(long)]
    accel: Option<f64>,
}

impl From<CellArgs> for Cell {
    fn from(a: CellArgs) -> Self {
        Cell {
            motor: a.motor,
            speed: a.speed,
            accel: a.accel,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Unconstrained,
    Constrained,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<ConstraintMode> {
        match self {
            ModeArg::Unconstrained => vec![ConstraintMode::Unconstrained],
            ModeArg::Constrained => vec![ConstraintMode::StabilityConstrained],
            ModeArg::Both => vec![ConstraintMode::Unconstrained, ConstraintMode::StabilityConstrained],
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TuneMode {
    Unconstrained,
    Constrained,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    #[value(name = "fwa")]
    Fireworks,
    #[value(name = "ga")]
    IslandGa,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Plan the reciprocating command trajectory for one process cell.
    Plan {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: CellArgs,
    },
    /// Simulate the closed loop and score it.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: CellArgs,
        /// kp,kvp,kvi,kfv; defaults to the config's [gains] table.
        #[arg(long, value_delimiter = ',', num_args = 4)]
        gains: Option<Vec<f64>>,
    },
    /// Loop frequency response and stability margins.
    Bode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        motor: Option<String>,
        #[arg(long, value_delimiter = ',', num_args = 4)]
        gains: Option<Vec<f64>>,
    },
    /// Tune the controller gains for one motor and process cell.
    Tune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long, value_enum, default_value = "unconstrained")]
        mode: TuneMode,
        #[arg(long, value_enum)]
        algorithm: Option<AlgorithmArg>,
        /// Evaluations per optimizer run.
        #[arg(long)]
        budget: Option<usize>,
        /// Defaults to `optimizer.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Tune every catalog motor over the whole process grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        modes: Option<ModeArg>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write per-process (capacity, W) series for plotting.
        #[arg(long)]
        emit_plotdata: bool,
    },
    /// Recompute catalog ratio and capacity columns and compare with the declared ones.
    Validate {
        #[arg(long, short, required_unless_present = "catalog")]
        config: Option<PathBuf>,
        /// Catalog file to check instead of the config's catalog.
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        load_inertia_kgcm2: Option<f64>,
    },
}

fn load(path: &Path, quiet: bool) -> anyhow::Result<RunConfig> {
    let parsed = load_config(path)?;
    if !quiet {
        for line in &parsed.provenance {
            eprintln!("config: {line}");
        }
    }
    Ok(parsed.config)
}

fn seed_or_default(cfg: &RunConfig, flag: Option<u64>) -> u64 {
    flag.unwrap_or_else(|| {
        eprintln!("seed: {} (from config)", cfg.optimizer.seed);
        cfg.optimizer.seed
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Plan { common, cell } => {
            let cfg = load(&common.config, common.quiet)?;
            commands::plan_cmd(&cfg, &cell.into(), common.out_dir.as_deref())
        }
        Command::Simulate { common, cell, gains } => {
            let cfg = load(&common.config, common.quiet)?;
            commands::simulate_cmd(&cfg, &cell.into(), gains.as_deref(), common.out_dir.as_deref())
        }
        Command::Bode { common, motor, gains } => {
            let cfg = load(&common.config, common.quiet)?;
            commands::bode_cmd(&cfg, motor.as_deref(), gains.as_deref(), common.out_dir.as_deref())
        }
        Command::Tune {
            common,
            cell,
            mode,
            algorithm,
            budget,
            seed,
        } => {
            let cfg = load(&common.config, common.quiet)?;
            let mode = match mode {
                TuneMode::Unconstrained => ConstraintMode::Unconstrained,
                TuneMode::Constrained => ConstraintMode::StabilityConstrained,
            };
            let args = TuneArgs {
                cell: cell.into(),
                mode,
                algorithm: algorithm.map(|a| match a {
                    AlgorithmArg::Fireworks => AlgorithmChoice::Fireworks,
                    AlgorithmArg::IslandGa => AlgorithmChoice::IslandGa,
                    AlgorithmArg::Both => AlgorithmChoice::Both,
                }),
                budget,
                seed: seed_or_default(&cfg, seed),
            };
            commands::tune_cmd(&cfg, &args, common.out_dir.as_deref())
        }
        Command::Sweep {
            common,
            modes,
            budget,
            seed,
            emit_plotdata,
        } => {
            let cfg = load(&common.config, common.quiet)?;
            let args = SweepArgs {
                modes: modes.map(ModeArg::modes),
                budget,
                seed: seed_or_default(&cfg, seed),
                emit_plotdata,
            };
            commands::sweep_cmd(&cfg, &args, common.out_dir.as_deref())
        }
        Command::Validate {
            config,
            catalog,
            load_inertia_kgcm2,
        } => {
            let cfg = config.as_deref().map(|p| load(p, true)).transpose()?;
            commands::validate_cmd(cfg.as_ref(), catalog.as_deref(), load_inertia_kgcm2)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
