//! Motor catalog × motion process sweeps and the analyses built on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::ControlGains;
use crate::error::{Error, Result};
use crate::motion::{plan, reciprocate};
use crate::optim::{
    cross_validate, tune_with, Algorithm, ConstraintMode, CrossValidation, Evaluation, ScenarioObjective,
    TunerSettings, TuningScenario, CROSS_VALIDATION_TOLERANCE,
};
use crate::plant::{acceleration_capacity, MechanicalParams, KG_CM2};
use crate::sim::SimConfig;

/// A catalog motor, in catalog units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorSpec {
    pub id: String,
    #[serde(default)]
    pub model: String,
    #[serde(rename = "max_torque_Nm")]
    pub max_torque: f64,
    #[serde(rename = "rotor_inertia_kgcm2")]
    pub rotor_inertia: f64,
    #[serde(default, rename = "rated_power_kW", skip_serializing_if = "Option::is_none")]
    pub rated_power: Option<f64>,
    /// Printed Jl/Jm, checked by [`validate_catalog`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_inertia_ratio: Option<f64>,
    /// Printed T/(Jm+Jl) in N·m per kg·cm², checked by [`validate_catalog`].
    #[serde(default, rename = "declared_capacity_Nm_per_kgcm2", skip_serializing_if = "Option::is_none")]
    pub declared_capacity: Option<f64>,
}

impl MotorSpec {
    pub fn new(id: impl Into<String>, model: impl Into<String>, max_torque: f64, rotor_inertia: f64) -> Self {
        MotorSpec {
            id: id.into(),
            model: model.into(),
            max_torque,
            rotor_inertia,
            rated_power: None,
            declared_inertia_ratio: None,
            declared_capacity: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_torque.is_finite() && self.max_torque > 0.0) {
            return Err(Error::domain(format!("motor {}: max torque must be positive", self.id)));
        }
        if !(self.rotor_inertia.is_finite() && self.rotor_inertia > 0.0) {
            return Err(Error::domain(format!("motor {}: rotor inertia must be positive", self.id)));
        }
        Ok(())
    }

    /// The mechanical template with this motor's rotor inertia and torque limit.
    pub fn apply(&self, template: &MechanicalParams) -> Result<MechanicalParams> {
        self.validate()?;
        let mut p = *template;
        p.motor_inertia = self.rotor_inertia * KG_CM2;
        p.max_torque = self.max_torque;
        p.validate()?;
        Ok(p)
    }
}

/// The six-motor catalog driving a 45.5 kg·cm² load, with its printed ratio and capacity columns.
pub fn standard_catalog() -> Vec<MotorSpec> {
    let rows = [
        ("1", "ISMH3-44C15CD", 71.1, 88.9, 0.5, 0.53),
        ("2", "ISMH3-29C15CD", 37.2, 55.0, 0.8, 0.37),
        ("3", "ISMH3-18C15CD", 28.75, 25.5, 1.8, 0.40),
        ("4", "ISMH3-13C15CD", 20.85, 19.3, 2.4, 0.32),
        ("5", "ISMH3-85B15CD", 13.5, 13.0, 3.5, 0.23),
        ("6", "1MH3-50B15CB", 9.6, 11.01, 4.1, 0.17),
    ];
    rows.iter()
        .map(|&(id, model, t, jm, r, c)| MotorSpec {
            declared_inertia_ratio: Some(r),
            declared_capacity: Some(c),
            ..MotorSpec::new(id, model, t, jm)
        })
        .collect()
}

/// Three motors of the bench rig driving a 48 kg·cm² load, with printed capacities.
pub fn bench_catalog() -> Vec<MotorSpec> {
    [("A", 37.2, 55.0, 0.36), ("B", 28.75, 25.5, 0.40), ("C", 13.5, 13.0, 0.22)]
        .iter()
        .map(|&(id, t, jm, c)| MotorSpec {
            declared_capacity: Some(c),
            ..MotorSpec::new(id, "", t, jm)
        })
        .collect()
}

/// r = Jl/Jm.
pub fn inertia_ratio(motor: &MotorSpec, load_inertia_kgcm2: f64) -> Result<f64> {
    if !(motor.rotor_inertia > 0.0 && load_inertia_kgcm2 > 0.0) {
        return Err(Error::domain("inertias must be positive"));
    }
    Ok(load_inertia_kgcm2 / motor.rotor_inertia)
}

/// (T/Jm)/(r + 1), which equals T/(Jm + Jl) when r = Jl/Jm.
pub fn capacity_from_ratio(torque_over_jm: f64, ratio: f64) -> Result<f64> {
    if !(ratio >= 0.0) {
        return Err(Error::domain(format!("inertia ratio must be non-negative, got {ratio}")));
    }
    Ok(torque_over_jm / (ratio + 1.0))
}

/// Largest tolerated gap between a printed capacity and its recomputed value.
pub const CATALOG_TOLERANCE: f64 = 0.015;
/// Inertia ratios are printed to one decimal, so half a unit in that place.
pub const RATIO_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogCheck {
    pub id: String,
    pub inertia_ratio: f64,
    pub capacity: f64,
    pub declared_inertia_ratio: Option<f64>,
    pub declared_capacity: Option<f64>,
    pub ratio_ok: bool,
    pub capacity_ok: bool,
}

impl CatalogCheck {
    pub fn ok(&self) -> bool {
        self.ratio_ok && self.capacity_ok
    }
}

/// Recomputes ratio and capacity per row and compares with the printed values.
pub fn validate_catalog(catalog: &[MotorSpec], load_inertia_kgcm2: f64) -> Vec<CatalogCheck> {
    let within = |declared: Option<f64>, actual: f64, tol: f64| declared.is_none_or(|d| (d - actual).abs() <= tol);
    catalog
        .iter()
        .map(|m| {
            let ratio = load_inertia_kgcm2 / m.rotor_inertia;
            let capacity = m.max_torque / (m.rotor_inertia + load_inertia_kgcm2);
            CatalogCheck {
                id: m.id.clone(),
                inertia_ratio: ratio,
                capacity,
                declared_inertia_ratio: m.declared_inertia_ratio,
                declared_capacity: m.declared_capacity,
                ratio_ok: within(m.declared_inertia_ratio, ratio, RATIO_TOLERANCE) && ratio.is_finite(),
                capacity_ok: within(m.declared_capacity, capacity, CATALOG_TOLERANCE) && capacity.is_finite(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessGrid {
    #[serde(rename = "speeds_mm_per_s")]
    pub speeds: Vec<f64>,
    #[serde(rename = "accelerations_m_per_s2")]
    pub accelerations: Vec<f64>,
    #[serde(rename = "stroke_mm")]
    pub stroke: f64,
    pub cycles: usize,
    #[serde(rename = "dwell_s")]
    pub dwell: f64,
}

impl Default for ProcessGrid {
    fn default() -> Self {
        ProcessGrid {
            speeds: vec![100.0, 200.0, 400.0],
            accelerations: vec![1.0, 2.0, 5.0],
            stroke: 200.0,
            cycles: 1,
            dwell: 0.2,
        }
    }
}

impl ProcessGrid {
    pub fn validate(&self) -> Result<()> {
        if self.speeds.is_empty() || self.accelerations.is_empty() {
            return Err(Error::domain("process grid needs at least one speed and one acceleration"));
        }
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        if !self.speeds.iter().all(positive) || !self.accelerations.iter().all(positive) || !positive(&self.stroke) {
            return Err(Error::domain("speeds, accelerations and stroke must be positive"));
        }
        if self.cycles == 0 || !(self.dwell.is_finite() && self.dwell >= 0.0) {
            return Err(Error::domain("need at least one cycle and a non-negative dwell"));
        }
        Ok(())
    }

    /// (speed mm/s, acceleration m/s²) pairs, speeds outermost.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.speeds
            .iter()
            .flat_map(|&v| self.accelerations.iter().map(move |&a| (v, a)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.speeds.len() * self.accelerations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How the two constraint modes obtain their candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepProtocol {
    /// Every mode's searches feed one pool per cell; each mode selects from the pool.
    SharedPool,
    /// Each mode keeps only the results of its own searches.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    /// Evaluations per optimizer run.
    pub budget: usize,
    pub master_seed: u64,
    pub modes: Vec<ConstraintMode>,
    pub protocol: SweepProtocol,
    pub sim: SimConfig,
    pub tuner: TunerSettings,
    pub tolerance: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            budget: 3000,
            master_seed: 1,
            modes: vec![ConstraintMode::Unconstrained, ConstraintMode::StabilityConstrained],
            protocol: SweepProtocol::SharedPool,
            sim: SimConfig::default(),
            tuner: TunerSettings::default(),
            tolerance: CROSS_VALIDATION_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub motor_id: String,
    pub speed: f64,
    pub acceleration: f64,
    /// T/(Jm+Jl), N·m per kg·cm².
    pub capacity: f64,
    /// Capacity times R, as table acceleration in m/s².
    pub capacity_table: f64,
    pub inertia_ratio: f64,
    pub mode: ConstraintMode,
    pub gains: ControlGains,
    pub w: f64,
    pub max_err_p: f64,
    pub max_err_v: f64,
    pub vars_v: f64,
    #[serde(with = "crate::serde_inf")]
    pub gain_margin_db: f64,
    #[serde(with = "crate::serde_inf")]
    pub phase_margin_deg: f64,
    #[serde(with = "crate::serde_inf")]
    pub resonance_peak: f64,
    pub stable: bool,
    pub feasible: bool,
    pub diverged: bool,
    /// Constrained row with no feasible candidate: best penalized value used instead.
    pub fallback: bool,
    pub cv_agree: bool,
    pub cv_gap: f64,
    pub seed: u64,
    /// Set when the cell could not be run at all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub master_seed: u64,
    pub budget: usize,
    pub protocol: SweepProtocol,
}

impl SweepResult {
    pub fn rows_for(&self, mode: ConstraintMode) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(move |r| r.mode == mode)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed for stream `stream` of cell `cell`.
pub fn derive_seed(master: u64, cell: usize, stream: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(cell as u64)) ^ stream)
}

struct ModeRuns {
    mode: ConstraintMode,
    cv: CrossValidation,
    consensus: Evaluation,
    archive: Vec<Evaluation>,
}

fn row_from(
    motor: &MotorSpec,
    params: &MechanicalParams,
    load_inertia_kgcm2: f64,
    (speed, acceleration): (f64, f64),
    mode: ConstraintMode,
    seed: u64,
) -> SweepRow {
    let cap = acceleration_capacity(motor.max_torque, motor.rotor_inertia, load_inertia_kgcm2, params.drive_coeff)
        .map(|c| (c.rotor, c.table_m_per_s2()))
        .unwrap_or((f64::NAN, f64::NAN));
    SweepRow {
        motor_id: motor.id.clone(),
        speed,
        acceleration,
        capacity: cap.0,
        capacity_table: cap.1,
        inertia_ratio: load_inertia_kgcm2 / motor.rotor_inertia,
        mode,
        gains: ControlGains::ZERO,
        w: f64::NAN,
        max_err_p: f64::NAN,
        max_err_v: f64::NAN,
        vars_v: f64::NAN,
        gain_margin_db: f64::NAN,
        phase_margin_deg: f64::NAN,
        resonance_peak: f64::NAN,
        stable: false,
        feasible: false,
        diverged: false,
        fallback: false,
        cv_agree: false,
        cv_gap: f64::NAN,
        seed,
        error: None,
    }
}

fn fill(row: &mut SweepRow, e: &Evaluation, cv: &CrossValidation) {
    row.gains = e.gains;
    row.w = e.w;
    if let Some(p) = &e.performance {
        row.max_err_p = p.max_err_p;
        row.max_err_v = p.max_err_v;
        row.vars_v = p.vars_v;
    }
    row.gain_margin_db = e.stability.gain_margin_db;
    row.phase_margin_deg = e.stability.phase_margin_deg;
    row.resonance_peak = e.stability.resonance_peak;
    row.stable = e.stability.stable;
    row.feasible = e.feasible;
    row.diverged = e.diverged_at.is_some();
    row.cv_agree = cv.agree;
    row.cv_gap = cv.relative_gap;
}

fn by_value(a: f64, b: f64) -> std::cmp::Ordering {
    a.total_cmp(&b)
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    motor: &MotorSpec,
    template: &MechanicalParams,
    grid: &ProcessGrid,
    process: (f64, f64),
    cell: usize,
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>> {
    let params = motor.apply(template)?;
    let load_kgcm2 = template.load_inertia / KG_CM2;
    let profile = plan(grid.stroke, process.0, process.1 * 1000.0)?;
    let mut trajectory = reciprocate(&profile, grid.cycles, grid.dwell, settings.sim.dt)?;
    trajectory.label = format!("v{}_a{}", process.0, process.1);
    let cell_seed = derive_seed(settings.master_seed, cell, 0);
    let record = settings.protocol == SweepProtocol::SharedPool && settings.modes.len() > 1;

    let mut runs = Vec::with_capacity(settings.modes.len());
    for (m, &mode) in settings.modes.iter().enumerate() {
        let scenario = TuningScenario::new(params, trajectory.clone(), settings.sim, mode);
        let objective = if record {
            ScenarioObjective::recording(&scenario)
        } else {
            ScenarioObjective::new(&scenario)
        };
        let fwa = tune_with(&objective, Algorithm::Fireworks, settings.budget, derive_seed(cell_seed, m, 1), &settings.tuner)?;
        let ga = tune_with(&objective, Algorithm::IslandGa, settings.budget, derive_seed(cell_seed, m, 2), &settings.tuner)?;
        let cv = cross_validate(&fwa.result, &ga.result, settings.tolerance)?;
        let consensus = if cv.consensus == Algorithm::Fireworks { fwa.best } else { ga.best };
        runs.push(ModeRuns {
            mode,
            cv,
            consensus,
            archive: objective.into_archive(),
        });
    }

    let pool: Vec<&Evaluation> = runs.iter().flat_map(|r| r.archive.iter()).collect();
    let mut rows = Vec::with_capacity(runs.len());
    for run in &runs {
        let mut row = row_from(motor, &params, load_kgcm2, process, run.mode, cell_seed);
        if !record {
            fill(&mut row, &run.consensus, &run.cv);
            row.fallback = run.mode == ConstraintMode::StabilityConstrained && !run.consensus.feasible;
        } else {
            let chosen = match run.mode {
                ConstraintMode::Unconstrained => pool.iter().min_by(|a, b| by_value(a.w, b.w)).copied(),
                ConstraintMode::StabilityConstrained => {
                    let feasible = pool.iter().filter(|e| e.feasible).min_by(|a, b| by_value(a.w, b.w)).copied();
                    row.fallback = feasible.is_none();
                    feasible.or_else(|| pool.iter().min_by(|a, b| by_value(a.penalized(), b.penalized())).copied())
                }
            };
            let chosen = chosen.unwrap_or(&run.consensus);
            fill(&mut row, chosen, &run.cv);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Tunes every (motor, process) cell in every requested mode. Cells run on the
/// rayon pool; rows come back in catalog × speed × acceleration × mode order.
pub fn run_sweep(
    catalog: &[MotorSpec],
    template: &MechanicalParams,
    grid: &ProcessGrid,
    settings: &SweepSettings,
) -> Result<SweepResult> {
    if catalog.is_empty() {
        return Err(Error::domain("catalog is empty"));
    }
    grid.validate()?;
    template.validate()?;
    settings.sim.validate()?;
    if settings.modes.is_empty() {
        return Err(Error::domain("at least one constraint mode is required"));
    }
    let processes = grid.cells();
    let jobs: Vec<(usize, &MotorSpec, (f64, f64))> = catalog
        .iter()
        .flat_map(|m| processes.iter().map(move |&p| (m, p)))
        .enumerate()
        .map(|(i, (m, p))| (i, m, p))
        .collect();

    let per_cell: Vec<Vec<SweepRow>> = jobs
        .par_iter()
        .map(|&(cell, motor, process)| {
            run_cell(motor, template, grid, process, cell, settings).unwrap_or_else(|e| {
                let load = template.load_inertia / KG_CM2;
                let seed = derive_seed(settings.master_seed, cell, 0);
                settings
                    .modes
                    .iter()
                    .map(|&mode| SweepRow {
                        error: Some(e.to_string()),
                        ..row_from(motor, template, load, process, mode, seed)
                    })
                    .collect()
            })
        })
        .collect();

    Ok(SweepResult {
        rows: per_cell.into_iter().flatten().collect(),
        master_seed: settings.master_seed,
        budget: settings.budget,
        protocol: settings.protocol,
    })
}

/// (W_stable − W_unstable)/W_unstable.
pub fn relative_change(w_stable: f64, w_unstable: f64) -> Result<f64> {
    if w_unstable == 0.0 {
        return Err(Error::domain("relative change is undefined for W_unstable = 0"));
    }
    if !(w_unstable > 0.0) {
        return Err(Error::domain(format!("W_unstable must be positive, got {w_unstable}")));
    }
    Ok((w_stable - w_unstable) / w_unstable)
}

/// Relative flatness band used by the shape classifier.
pub const FLATNESS_BAND: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendShape {
    ImprovingThenFlat,
    InteriorMinimum,
    Monotone,
    Irregular,
    Inconclusive,
}

/// Classifies W over rising capacity.
///
/// Points within `band` of the minimum count as flat. The curve improves then
/// flattens when it starts outside the band and, from its first in-band point
/// on, stays inside it for at least two points. It has an interior minimum
/// when both ends sit outside the band.
pub fn classify(w: &[f64], band: f64) -> TrendShape {
    if w.len() < 3 || w.iter().any(|v| !v.is_finite()) {
        return TrendShape::Inconclusive;
    }
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    let limit = min + band * min.abs();
    let flat = |v: f64| v <= limit;
    if w.iter().all(|&v| flat(v)) {
        return TrendShape::Monotone;
    }
    let first_flat = w.iter().position(|&v| flat(v)).expect("the minimum is in band");
    if first_flat > 0 && w.len() - first_flat >= 2 && w[first_flat..].iter().all(|&v| flat(v)) {
        return TrendShape::ImprovingThenFlat;
    }
    let non_increasing = w.windows(2).all(|p| p[1] <= p[0]);
    let non_decreasing = w.windows(2).all(|p| p[1] >= p[0]);
    if non_increasing || non_decreasing {
        return TrendShape::Monotone;
    }
    if !flat(w[0]) && !flat(w[w.len() - 1]) {
        return TrendShape::InteriorMinimum;
    }
    TrendShape::Irregular
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendEntry {
    pub speed: f64,
    pub acceleration: f64,
    pub mode: ConstraintMode,
    pub shape: TrendShape,
    pub motor_ids: Vec<String>,
    pub capacities: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeChangeEntry {
    pub motor_id: String,
    pub speed: f64,
    pub acceleration: f64,
    pub w_stable: f64,
    pub w_unstable: f64,
    pub relative_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub band: f64,
    pub entries: Vec<TrendEntry>,
    pub relative_changes: Vec<RelativeChangeEntry>,
}

impl TrendReport {
    pub fn entry(&self, speed: f64, acceleration: f64, mode: ConstraintMode) -> Option<&TrendEntry> {
        self.entries
            .iter()
            .find(|e| e.speed == speed && e.acceleration == acceleration && e.mode == mode)
    }
}

/// Per (process, mode) curve shapes plus per-cell relative changes between modes.
pub fn trend_report(sweep: &SweepResult) -> TrendReport {
    let mut keys: Vec<(f64, f64, ConstraintMode)> = Vec::new();
    for r in &sweep.rows {
        let key = (r.speed, r.acceleration, r.mode);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let entries = keys
        .into_iter()
        .map(|(speed, acceleration, mode)| {
            let mut rows: Vec<&SweepRow> = sweep
                .rows
                .iter()
                .filter(|r| r.speed == speed && r.acceleration == acceleration && r.mode == mode && r.error.is_none())
                .collect();
            rows.sort_by(|a, b| a.capacity.total_cmp(&b.capacity));
            let w: Vec<f64> = rows.iter().map(|r| r.w).collect();
            TrendEntry {
                speed,
                acceleration,
                mode,
                shape: classify(&w, FLATNESS_BAND),
                motor_ids: rows.iter().map(|r| r.motor_id.clone()).collect(),
                capacities: rows.iter().map(|r| r.capacity).collect(),
                w,
            }
        })
        .collect();

    let relative_changes = sweep
        .rows_for(ConstraintMode::StabilityConstrained)
        .filter_map(|stable| {
            let free = sweep.rows_for(ConstraintMode::Unconstrained).find(|r| {
                r.motor_id == stable.motor_id && r.speed == stable.speed && r.acceleration == stable.acceleration
            })?;
            Some(RelativeChangeEntry {
                motor_id: stable.motor_id.clone(),
                speed: stable.speed,
                acceleration: stable.acceleration,
                w_stable: stable.w,
                w_unstable: free.w,
                relative_change: relative_change(stable.w, free.w).ok(),
            })
        })
        .collect();

    TrendReport {
        band: FLATNESS_BAND,
        entries,
        relative_changes,
    }
}
