use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use feedaxis_core::freq::{analyze, bode_rows, loop_response, FrequencyGrid, StabilityReport};
use feedaxis_core::metrics::evaluate;
use feedaxis_core::motion::{plan, reciprocate, CommandTrajectory, MotionProfile};
use feedaxis_core::optim::{cross_validate, tune, Algorithm, ConstraintMode, CrossValidation, Tuned, TuningScenario};
use feedaxis_core::sim::run_closed_loop;
use feedaxis_core::sweep::{run_sweep, trend_report, validate_catalog, CatalogCheck, SweepResult, SweepSettings, TrendReport};
use feedaxis_core::{ControlGains, MechanicalParams};
use serde::Serialize;

use crate::config::{read_catalog, AlgorithmChoice, RunConfig};
use crate::output::{fmt9, write_json, Meta, Table};

/// Shared selection of one process cell and motor.
#[derive(Debug, Clone, Default)]
pub struct Cell {
    pub motor: Option<String>,
    pub speed: Option<f64>,
    pub accel: Option<f64>,
}

impl Cell {
    fn process(&self, cfg: &RunConfig) -> (f64, f64) {
        let speed = self.speed.unwrap_or(cfg.process.speeds[0]);
        let accel = self.accel.unwrap_or(cfg.process.accelerations[0]);
        (speed, accel)
    }
}

fn trajectory(cfg: &RunConfig, speed: f64, accel: f64) -> Result<(MotionProfile, CommandTrajectory)> {
    let profile = plan(cfg.process.stroke, speed, accel * 1000.0)?;
    let mut traj = reciprocate(&profile, cfg.process.cycles, cfg.process.dwell, cfg.simulation.dt_s)?;
    traj.label = format!("v{speed}_a{accel}");
    Ok((profile, traj))
}

fn out_path(cfg: &RunConfig, out_dir: Option<&Path>, name: &str) -> PathBuf {
    out_dir.unwrap_or(&cfg.output.directory).join(name)
}

fn resolve_gains(cfg: &RunConfig, flag: Option<&[f64]>) -> Result<ControlGains> {
    match flag {
        Some(g) => Ok(ControlGains::from_slice(g)).and_then(|g| g.validate().map(|_| g).map_err(Into::into)),
        None => cfg.gains().context("no gains given: pass --gains or add a [gains] table to the config"),
    }
}

pub fn plan_cmd(cfg: &RunConfig, cell: &Cell, out_dir: Option<&Path>) -> Result<()> {
    let (speed, accel) = cell.process(cfg);
    let (profile, traj) = trajectory(cfg, speed, accel)?;
    println!(
        "{:?} profile: t1 = {} s, t2 = {} s, t3 = {} s, peak velocity = {} mm/s",
        profile.shape,
        fmt9(profile.t1),
        fmt9(profile.t2),
        fmt9(profile.t3),
        fmt9(profile.peak_velocity)
    );
    let mut table = Table::new(&["t_s", "position_mm", "velocity_mm_per_s", "acceleration_mm_per_s2"]);
    for (t, s) in traj.times().zip(&traj.samples) {
        table.push(vec![fmt9(t), fmt9(s.position), fmt9(s.velocity), fmt9(s.acceleration)]);
    }
    let path = out_path(cfg, out_dir, "plan.csv");
    table.write(&path, &Meta::new("plan", None, &cfg.to_toml()))?;
    println!("wrote {} samples to {}", traj.len(), path.display());
    Ok(())
}

fn print_stability(s: &StabilityReport) {
    println!(
        "Am = {} dB, Pm = {} deg, Mr = {}, stable = {}, feasible = {}",
        fmt9(s.gain_margin_db),
        fmt9(s.phase_margin_deg),
        fmt9(s.resonance_peak),
        s.stable,
        s.feasible
    );
}

pub fn simulate_cmd(cfg: &RunConfig, cell: &Cell, gains: Option<&[f64]>, out_dir: Option<&Path>) -> Result<()> {
    let params = cfg.params(cell.motor.as_deref())?;
    let gains = resolve_gains(cfg, gains)?;
    let (speed, accel) = cell.process(cfg);
    let (_, traj) = trajectory(cfg, speed, accel)?;
    let trace = run_closed_loop(&params, &gains, &traj, &cfg.sim())?;
    let report = evaluate(&trace)?;
    println!(
        "W = {}, max|Err_p| = {} mm, max|Err_v| = {} mm/s, Var(Err_v) = {}",
        fmt9(report.w),
        fmt9(report.max_err_p),
        fmt9(report.max_err_v),
        fmt9(report.vars_v)
    );
    let mut table = Table::new(&[
        "t_s",
        "pos_cmd_mm",
        "vel_cmd_mm_per_s",
        "pos_actual_mm",
        "vel_actual_mm_per_s",
        "torque_cmd_Nm",
        "torque_applied_Nm",
    ]);
    for s in &trace.samples {
        table.push(
            [s.t, s.pos_cmd, s.vel_cmd, s.pos_actual, s.vel_actual, s.torque_cmd, s.torque_applied]
                .into_iter()
                .map(fmt9)
                .collect(),
        );
    }
    let path = out_path(cfg, out_dir, "trace.csv");
    table.write(&path, &Meta::new("simulate", None, &cfg.to_toml()))?;
    println!("wrote {} samples to {}", trace.samples.len(), path.display());
    Ok(())
}

pub fn bode_cmd(cfg: &RunConfig, motor: Option<&str>, gains: Option<&[f64]>, out_dir: Option<&Path>) -> Result<()> {
    let params = cfg.params(motor)?;
    let gains = resolve_gains(cfg, gains)?;
    let grid = FrequencyGrid::default();
    let response = loop_response(&params, &gains, &grid);
    print_stability(&analyze(&params, &gains, &grid));
    let mut table = Table::new(&["omega_rad_per_s", "magnitude_db", "phase_deg"]);
    for (w, mag, phase) in bode_rows(&grid, &response) {
        table.push(vec![fmt9(w), fmt9(mag), fmt9(phase)]);
    }
    let path = out_path(cfg, out_dir, "bode.csv");
    table.write(&path, &Meta::new("bode", None, &cfg.to_toml()))?;
    println!("wrote {} points to {}", grid.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct TuneOutput {
    motor_id: String,
    speed_mm_per_s: f64,
    accel_m_per_s2: f64,
    mode: ConstraintMode,
    budget: usize,
    runs: Vec<Tuned>,
    cross_validation: Option<CrossValidation>,
}

pub struct TuneArgs {
    pub cell: Cell,
    pub mode: ConstraintMode,
    pub algorithm: Option<AlgorithmChoice>,
    pub budget: Option<usize>,
    pub seed: u64,
}

pub fn tune_cmd(cfg: &RunConfig, args: &TuneArgs, out_dir: Option<&Path>) -> Result<()> {
    let motor = cfg.motor(args.cell.motor.as_deref())?;
    let params: MechanicalParams = motor.apply(&cfg.template()?)?;
    let (speed, accel) = args.cell.process(cfg);
    let (_, traj) = trajectory(cfg, speed, accel)?;
    let scenario = TuningScenario::new(params, traj, cfg.sim(), args.mode);
    let budget = args.budget.unwrap_or(cfg.optimizer.budget_per_run);
    let tuner = cfg.tuner()?;
    let algorithms = match args.algorithm.unwrap_or(cfg.optimizer.algorithm) {
        AlgorithmChoice::Fireworks => vec![Algorithm::Fireworks],
        AlgorithmChoice::IslandGa => vec![Algorithm::IslandGa],
        AlgorithmChoice::Both => vec![Algorithm::Fireworks, Algorithm::IslandGa],
    };
    let runs = algorithms
        .iter()
        .enumerate()
        .map(|(i, &a)| tune(&scenario, a, budget, args.seed.wrapping_add(i as u64), &tuner))
        .collect::<Result<Vec<_>, _>>()?;
    for run in &runs {
        let g = run.best.gains;
        println!(
            "{:?}: objective = {}, W = {}, gains kp = {}, kvp = {}, kvi = {}, kfv = {}",
            run.result.algorithm,
            fmt9(run.result.best_value),
            fmt9(run.best.w),
            fmt9(g.kp),
            fmt9(g.kvp),
            fmt9(g.kvi),
            fmt9(g.kfv)
        );
        print_stability(&run.best.stability);
    }
    let cross_validation = match runs.as_slice() {
        [a, b] => {
            let cv = cross_validate(&a.result, &b.result, feedaxis_core::optim::CROSS_VALIDATION_TOLERANCE)?;
            println!(
                "cross-validation: gap = {}, agree = {}, consensus = {:?}",
                fmt9(cv.relative_gap),
                cv.agree,
                cv.consensus
            );
            Some(cv)
        }
        _ => None,
    };
    let output = TuneOutput {
        motor_id: motor.id.clone(),
        speed_mm_per_s: speed,
        accel_m_per_s2: accel,
        mode: args.mode,
        budget,
        runs,
        cross_validation,
    };
    let meta = Meta::new("tune", Some(args.seed), &cfg.to_toml());
    let mut history = Table::new(&["algorithm", "generation", "best_objective"]);
    for run in &output.runs {
        let name = match run.result.algorithm {
            Algorithm::Fireworks => "fwa",
            Algorithm::IslandGa => "ga",
        };
        for (k, v) in run.result.history.iter().enumerate() {
            history.push(vec![name.to_owned(), k.to_string(), fmt9(*v)]);
        }
    }
    let path = out_path(cfg, out_dir, "tune.json");
    write_json(&path, &meta, &output)?;
    history.write(&out_path(cfg, out_dir, "tune_history.csv"), &meta)?;
    println!("wrote {} and tune_history.csv", path.display());
    Ok(())
}

pub struct SweepArgs {
    pub modes: Option<Vec<ConstraintMode>>,
    pub budget: Option<usize>,
    pub seed: u64,
    pub emit_plotdata: bool,
}

const SWEEP_COLUMNS: [&str; 26] = [
    "motor_id",
    "speed_mm_per_s",
    "accel_m_per_s2",
    "capacity_Nm_per_kgcm2",
    "capacity_table_m_per_s2",
    "inertia_ratio",
    "mode",
    "kp",
    "kvp",
    "kvi",
    "kfv",
    "w",
    "max_err_p_mm",
    "max_err_v_mm_per_s",
    "vars_v",
    "gain_margin_db",
    "phase_margin_deg",
    "resonance_peak",
    "stable",
    "feasible",
    "diverged",
    "fallback",
    "cv_agree",
    "cv_gap",
    "seed",
    "error",
];

pub fn sweep_table(result: &SweepResult) -> Table {
    let mut table = Table::new(&SWEEP_COLUMNS);
    for r in &result.rows {
        let g = r.gains;
        table.push(vec![
            r.motor_id.clone(),
            fmt9(r.speed),
            fmt9(r.acceleration),
            fmt9(r.capacity),
            fmt9(r.capacity_table),
            fmt9(r.inertia_ratio),
            r.mode.as_str().to_owned(),
            fmt9(g.kp),
            fmt9(g.kvp),
            fmt9(g.kvi),
            fmt9(g.kfv),
            fmt9(r.w),
            fmt9(r.max_err_p),
            fmt9(r.max_err_v),
            fmt9(r.vars_v),
            fmt9(r.gain_margin_db),
            fmt9(r.phase_margin_deg),
            fmt9(r.resonance_peak),
            r.stable.to_string(),
            r.feasible.to_string(),
            r.diverged.to_string(),
            r.fallback.to_string(),
            r.cv_agree.to_string(),
            fmt9(r.cv_gap),
            r.seed.to_string(),
            r.error.clone().unwrap_or_default(),
        ]);
    }
    table
}

fn write_plotdata(dir: &Path, sweep: &SweepResult, trend: &TrendReport, meta: &Meta) -> Result<usize> {
    let mut written = 0;
    for e in &trend.entries {
        let mut t = Table::new(&["motor_id", "capacity_Nm_per_kgcm2", "capacity_table_m_per_s2", "w", "gain_margin_db"]);
        for (id, &cap) in e.motor_ids.iter().zip(&e.capacities) {
            let row = sweep
                .rows
                .iter()
                .find(|r| &r.motor_id == id && r.speed == e.speed && r.acceleration == e.acceleration && r.mode == e.mode)
                .expect("trend entries come from sweep rows");
            t.push(vec![id.clone(), fmt9(cap), fmt9(row.capacity_table), fmt9(row.w), fmt9(row.gain_margin_db)]);
        }
        let name = format!("w_vs_capacity_v{}_a{}_{}.csv", e.speed, e.acceleration, e.mode.as_str());
        t.write(&dir.join(name), meta)?;
        written += 1;
    }
    let mut cells: Vec<(f64, f64)> = Vec::new();
    for c in &trend.relative_changes {
        if !cells.contains(&(c.speed, c.acceleration)) {
            cells.push((c.speed, c.acceleration));
        }
    }
    for (speed, accel) in cells {
        let mut t = Table::new(&["motor_id", "capacity_table_m_per_s2", "w_stable", "w_unstable", "relative_change"]);
        let mut entries: Vec<_> = trend
            .relative_changes
            .iter()
            .filter(|c| c.speed == speed && c.acceleration == accel)
            .filter_map(|c| {
                let row = sweep.rows.iter().find(|r| r.motor_id == c.motor_id && r.speed == speed && r.acceleration == accel)?;
                Some((row.capacity_table, c))
            })
            .collect();
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (cap, c) in entries {
            t.push(vec![
                c.motor_id.clone(),
                fmt9(cap),
                fmt9(c.w_stable),
                fmt9(c.w_unstable),
                c.relative_change.map(fmt9).unwrap_or_default(),
            ]);
        }
        t.write(&dir.join(format!("relative_change_v{speed}_a{accel}.csv")), meta)?;
        written += 1;
    }
    Ok(written)
}

pub fn sweep_cmd(cfg: &RunConfig, args: &SweepArgs, out_dir: Option<&Path>) -> Result<()> {
    let settings = SweepSettings {
        budget: args.budget.unwrap_or(cfg.optimizer.budget_per_run),
        master_seed: args.seed,
        modes: args.modes.clone().unwrap_or_else(|| cfg.optimizer.modes.clone()),
        protocol: cfg.optimizer.protocol,
        sim: cfg.sim(),
        tuner: cfg.tuner()?,
        ..SweepSettings::default()
    };
    let result = run_sweep(&cfg.catalog.motors, &cfg.template()?, &cfg.process, &settings)?;
    let trend = trend_report(&result);
    let meta = Meta::new("sweep", Some(args.seed), &cfg.to_toml());
    let dir = out_dir.unwrap_or(&cfg.output.directory);
    sweep_table(&result).write(&dir.join("sweep.csv"), &meta)?;
    write_json(&dir.join("trend.json"), &meta, &trend)?;
    for e in &trend.entries {
        println!("v = {} mm/s, a = {} m/s², {}: {:?}", e.speed, e.acceleration, e.mode.as_str(), e.shape);
    }
    let failed = result.rows.iter().filter(|r| r.error.is_some()).count();
    println!("wrote {} rows to {}", result.rows.len(), dir.join("sweep.csv").display());
    if args.emit_plotdata {
        let n = write_plotdata(&dir.join("plotdata"), &result, &trend, &meta)?;
        println!("wrote {n} plot-data files to {}", dir.join("plotdata").display());
    }
    if failed > 0 {
        eprintln!("warning: {failed} rows could not be run; see the error column");
    }
    Ok(())
}

fn print_checks(checks: &[CatalogCheck]) -> bool {
    println!("id  ratio  declared  capacity  declared  ok");
    for c in checks {
        let declared = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), fmt9);
        println!(
            "{}  {}  {}  {}  {}  {}",
            c.id,
            fmt9(c.inertia_ratio),
            declared(c.declared_inertia_ratio),
            fmt9(c.capacity),
            declared(c.declared_capacity),
            if c.ok() { "yes" } else { "NO" }
        );
    }
    checks.iter().all(CatalogCheck::ok)
}

pub fn validate_cmd(cfg: Option<&RunConfig>, catalog: Option<&Path>, load_inertia: Option<f64>) -> Result<()> {
    let (motors, load) = match (catalog, cfg) {
        (Some(path), _) => {
            let file = read_catalog(path)?;
            let load = load_inertia
                .or(file.load_inertia_kgcm2)
                .or(cfg.map(|c| c.mechanical.load_inertia_kgcm2))
                .context("no load inertia: pass --load-inertia-kgcm2 or set it in the catalog file")?;
            (file.motors, load)
        }
        (None, Some(cfg)) => (
            cfg.catalog.motors.clone(),
            load_inertia.unwrap_or(cfg.mechanical.load_inertia_kgcm2),
        ),
        (None, None) => bail!("nothing to validate"),
    };
    println!("load inertia {} kg·cm²", fmt9(load));
    if !print_checks(&validate_catalog(&motors, load)) {
        bail!("catalog rows disagree with their declared values");
    }
    Ok(())
}
