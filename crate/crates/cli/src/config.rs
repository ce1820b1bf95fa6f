//! Run configuration: one TOML document with unit-bearing key names.
//!
//! Every optional key that is left out gets a default, and each resolved
//! value is recorded in a provenance log so a run can be reproduced exactly.

// Field names carry their units, e.g. `screw_stiffness_Nm_per_rad`.
#![allow(non_snake_case)]

use std::f64::consts::PI;
use std::fmt::Debug;
use std::path::{Path, PathBuf};

use feedaxis_core::optim::{ConstraintMode, SearchSpace, TunerSettings};
use feedaxis_core::plant::KG_CM2;
use feedaxis_core::sweep::{MotorSpec, ProcessGrid, SweepProtocol};
use feedaxis_core::{ControlGains, Error, MechanicalParams, Result, SimConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmChoice {
    Fireworks,
    IslandGa,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mechanical {
    pub screw_stiffness_Nm_per_rad: f64,
    pub load_inertia_kgcm2: f64,
    pub damping_Nms_per_rad: f64,
    pub screw_lead_mm: f64,
    /// Catalog id used by single-motor commands.
    pub motor: String,
}

impl Mechanical {
    /// Table travel per screw radian, mm/rad.
    pub fn drive_coeff(&self) -> f64 {
        self.screw_lead_mm / (2.0 * PI)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub motors: Vec<MotorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Simulation {
    pub dt_s: f64,
    pub settle_tail_s: f64,
    pub encoder_counts_per_rev: u32,
    pub load_torque_Nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Optimizer {
    pub algorithm: AlgorithmChoice,
    pub budget_per_run: usize,
    pub seed: u64,
    pub modes: Vec<ConstraintMode>,
    pub protocol: SweepProtocol,
    /// kp, kvp, kvi, kfv.
    pub lower_bounds: Vec<f64>,
    pub upper_bounds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    pub kp: f64,
    pub kvp: f64,
    pub kvi: f64,
    pub kfv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    pub directory: PathBuf,
}

/// A fully resolved configuration. Serializing it gives a document that
/// parses back to the same value with nothing left to default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mechanical: Mechanical,
    pub catalog: Catalog,
    pub process: ProcessGrid,
    pub simulation: Simulation,
    pub optimizer: Optimizer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<Gains>,
    pub output: Output,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mechanical: Option<RawMechanical>,
    catalog: Option<RawCatalog>,
    process: Option<RawProcess>,
    simulation: Option<RawSimulation>,
    optimizer: Option<RawOptimizer>,
    gains: Option<Gains>,
    output: Option<RawOutput>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMechanical {
    screw_stiffness_Nm_per_rad: Option<f64>,
    load_inertia_kgcm2: Option<f64>,
    damping_Nms_per_rad: Option<f64>,
    screw_lead_mm: Option<f64>,
    motor: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCatalog {
    file: Option<PathBuf>,
    motors: Option<Vec<MotorSpec>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProcess {
    speeds_mm_per_s: Option<Vec<f64>>,
    accelerations_m_per_s2: Option<Vec<f64>>,
    stroke_mm: Option<f64>,
    cycles: Option<usize>,
    dwell_s: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    dt_s: Option<f64>,
    settle_tail_s: Option<f64>,
    encoder_counts_per_rev: Option<u32>,
    load_torque_Nm: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptimizer {
    algorithm: Option<AlgorithmChoice>,
    budget_per_run: Option<usize>,
    seed: Option<u64>,
    modes: Option<Vec<ConstraintMode>>,
    protocol: Option<SweepProtocol>,
    lower_bounds: Option<Vec<f64>>,
    upper_bounds: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    directory: Option<PathBuf>,
}

/// A catalog document: motors plus, optionally, the load their printed columns assume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_inertia_kgcm2: Option<f64>,
    pub motors: Vec<MotorSpec>,
}

pub fn read_catalog(path: &Path) -> Result<CatalogFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), format!("cannot read catalog: {e}")))?;
    let catalog: CatalogFile =
        toml::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.message().to_owned()))?;
    if let Some(jl) = catalog.load_inertia_kgcm2 {
        positive("load_inertia_kgcm2", jl)?;
    }
    check_motors("motors", &catalog.motors)?;
    Ok(catalog)
}

/// Resolved configuration plus one line per resolved key.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub config: RunConfig,
    pub provenance: Vec<String>,
}

struct Log(Vec<String>);

impl Log {
    fn pick<T: Debug>(&mut self, key: &str, value: Option<T>, default: impl FnOnce() -> T) -> T {
        match value {
            Some(v) => {
                self.0.push(format!("{key} = {v:?}"));
                v
            }
            None => {
                let v = default();
                self.0.push(format!("{key} = {v:?} (default)"));
                v
            }
        }
    }

    fn require<T: Debug>(&mut self, key: &str, value: Option<T>) -> Result<T> {
        let v = value.ok_or_else(|| Error::config(key, "missing required field"))?;
        self.0.push(format!("{key} = {v:?}"));
        Ok(v)
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be positive, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be non-negative, got {v}")))
    }
}

fn check_motors(key: &str, motors: &[MotorSpec]) -> Result<()> {
    if motors.is_empty() {
        return Err(Error::config(key, "catalog has no motors"));
    }
    for (i, m) in motors.iter().enumerate() {
        positive(&format!("{key}[{i}].max_torque_Nm"), m.max_torque)?;
        positive(&format!("{key}[{i}].rotor_inertia_kgcm2"), m.rotor_inertia)?;
        if motors[..i].iter().any(|o| o.id == m.id) {
            return Err(Error::config(format!("{key}[{i}].id"), format!("duplicate motor id {:?}", m.id)));
        }
    }
    Ok(())
}

/// Parses a config document. Relative catalog paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<Parsed> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::config("<document>", e.to_string().trim().to_owned()))?;
    let mut log = Log(Vec::new());

    let m = raw.mechanical.ok_or_else(|| Error::config("mechanical", "missing required table"))?;
    let stiffness = log.require("mechanical.screw_stiffness_Nm_per_rad", m.screw_stiffness_Nm_per_rad)?;
    positive("mechanical.screw_stiffness_Nm_per_rad", stiffness)?;
    let load = log.require("mechanical.load_inertia_kgcm2", m.load_inertia_kgcm2)?;
    positive("mechanical.load_inertia_kgcm2", load)?;
    let damping = log.require("mechanical.damping_Nms_per_rad", m.damping_Nms_per_rad)?;
    non_negative("mechanical.damping_Nms_per_rad", damping)?;
    let lead = log.require("mechanical.screw_lead_mm", m.screw_lead_mm)?;
    positive("mechanical.screw_lead_mm", lead)?;
    log.0.push(format!("drive coefficient R = screw_lead_mm / 2π = {} mm/rad", lead / (2.0 * PI)));

    let c = raw.catalog.ok_or_else(|| Error::config("catalog", "missing required table"))?;
    let motors = match (c.file, c.motors) {
        (Some(_), Some(_)) => return Err(Error::config("catalog", "give either `file` or `motors`, not both")),
        (None, None) => return Err(Error::config("catalog", "missing `file` or `motors`")),
        (None, Some(motors)) => {
            check_motors("catalog.motors", &motors)?;
            log.0.push(format!("catalog.motors = {} inline rows", motors.len()));
            motors
        }
        (Some(file), None) => {
            let path = base_dir.join(&file);
            if !path.is_file() {
                return Err(Error::config("catalog.file", format!("{} does not exist", path.display())));
            }
            let catalog = read_catalog(&path)?;
            log.0.push(format!("catalog.file = {:?} ({} rows)", file, catalog.motors.len()));
            catalog.motors
        }
    };
    let first = motors[0].id.clone();
    let motor = log.pick("mechanical.motor", m.motor, || first);
    if !motors.iter().any(|x| x.id == motor) {
        return Err(Error::config("mechanical.motor", format!("no catalog motor with id {motor:?}")));
    }

    let p = raw.process.unwrap_or_default();
    let d = ProcessGrid::default();
    let process = ProcessGrid {
        speeds: log.pick("process.speeds_mm_per_s", p.speeds_mm_per_s, || d.speeds.clone()),
        accelerations: log.pick("process.accelerations_m_per_s2", p.accelerations_m_per_s2, || d.accelerations.clone()),
        stroke: log.pick("process.stroke_mm", p.stroke_mm, || d.stroke),
        cycles: log.pick("process.cycles", p.cycles, || d.cycles),
        dwell: log.pick("process.dwell_s", p.dwell_s, || d.dwell),
    };
    if process.speeds.is_empty() || process.accelerations.is_empty() {
        return Err(Error::config("process", "speeds and accelerations must not be empty"));
    }
    for (i, v) in process.speeds.iter().enumerate() {
        positive(&format!("process.speeds_mm_per_s[{i}]"), *v)?;
    }
    for (i, a) in process.accelerations.iter().enumerate() {
        positive(&format!("process.accelerations_m_per_s2[{i}]"), *a)?;
    }
    positive("process.stroke_mm", process.stroke)?;
    non_negative("process.dwell_s", process.dwell)?;
    if process.cycles == 0 {
        return Err(Error::config("process.cycles", "must be at least 1"));
    }

    let s = raw.simulation.unwrap_or_default();
    let ds = SimConfig::default();
    let simulation = Simulation {
        dt_s: log.pick("simulation.dt_s", s.dt_s, || ds.dt),
        settle_tail_s: log.pick("simulation.settle_tail_s", s.settle_tail_s, || ds.settle_tail),
        encoder_counts_per_rev: log.pick("simulation.encoder_counts_per_rev", s.encoder_counts_per_rev, || {
            ds.encoder_counts_per_rev
        }),
        load_torque_Nm: log.pick("simulation.load_torque_Nm", s.load_torque_Nm, || ds.load_torque),
    };
    positive("simulation.dt_s", simulation.dt_s)?;
    non_negative("simulation.settle_tail_s", simulation.settle_tail_s)?;
    if !simulation.load_torque_Nm.is_finite() {
        return Err(Error::config("simulation.load_torque_Nm", "must be finite"));
    }

    let o = raw.optimizer.unwrap_or_default();
    let space = SearchSpace::gains();
    let optimizer = Optimizer {
        algorithm: log.pick("optimizer.algorithm", o.algorithm, || AlgorithmChoice::Both),
        budget_per_run: log.pick("optimizer.budget_per_run", o.budget_per_run, || 3000),
        seed: log.pick("optimizer.seed", o.seed, || 1),
        modes: log.pick("optimizer.modes", o.modes, || {
            vec![ConstraintMode::Unconstrained, ConstraintMode::StabilityConstrained]
        }),
        protocol: log.pick("optimizer.protocol", o.protocol, || SweepProtocol::SharedPool),
        lower_bounds: log.pick("optimizer.lower_bounds", o.lower_bounds, || space.lower.clone()),
        upper_bounds: log.pick("optimizer.upper_bounds", o.upper_bounds, || space.upper.clone()),
    };
    if optimizer.budget_per_run == 0 {
        return Err(Error::config("optimizer.budget_per_run", "must be positive"));
    }
    if optimizer.modes.is_empty() {
        return Err(Error::config("optimizer.modes", "must list at least one mode"));
    }

    if let Some(g) = &raw.gains {
        log.0.push(format!("gains = {g:?}"));
    }
    let out = raw.output.unwrap_or_default();
    let output = Output {
        directory: log.pick("output.directory", out.directory, || PathBuf::from("out")),
    };

    let config = RunConfig {
        mechanical: Mechanical {
            screw_stiffness_Nm_per_rad: stiffness,
            load_inertia_kgcm2: load,
            damping_Nms_per_rad: damping,
            screw_lead_mm: lead,
            motor,
        },
        catalog: Catalog { motors },
        process,
        simulation,
        optimizer,
        gains: raw.gains,
        output,
    };
    config.search_space().map_err(|e| Error::config("optimizer.lower_bounds", e.to_string()))?;
    if let Some(g) = &config.gains {
        ControlGains::new(g.kp, g.kvp, g.kvi, g.kfv).map_err(|e| Error::config("gains", e.to_string()))?;
    }
    Ok(Parsed {
        config,
        provenance: log.0,
    })
}

pub fn load_config(path: &Path) -> Result<Parsed> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), format!("cannot read config: {e}")))?;
    parse_config(&text, path.parent().unwrap_or(Path::new(".")))
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config values are always representable")
    }

    pub fn motor(&self, id: Option<&str>) -> Result<&MotorSpec> {
        let id = id.unwrap_or(&self.mechanical.motor);
        self.catalog
            .motors
            .iter()
            .find(|m| m.id == id)
            .ok_or_else(|| Error::Domain(format!("no catalog motor with id {id:?}")))
    }

    /// Mechanical parameters with a placeholder motor; see [`MotorSpec::apply`].
    pub fn template(&self) -> Result<MechanicalParams> {
        let m = &self.mechanical;
        MechanicalParams::new(
            m.screw_stiffness_Nm_per_rad,
            m.load_inertia_kgcm2 * KG_CM2,
            m.load_inertia_kgcm2 * KG_CM2,
            m.damping_Nms_per_rad,
            m.drive_coeff(),
            1.0,
        )
    }

    pub fn params(&self, motor: Option<&str>) -> Result<MechanicalParams> {
        self.motor(motor)?.apply(&self.template()?)
    }

    pub fn sim(&self) -> SimConfig {
        let s = &self.simulation;
        SimConfig {
            dt: s.dt_s,
            settle_tail: s.settle_tail_s,
            encoder_counts_per_rev: s.encoder_counts_per_rev,
            load_torque: s.load_torque_Nm,
        }
    }

    pub fn search_space(&self) -> Result<SearchSpace> {
        let o = &self.optimizer;
        SearchSpace::new(o.lower_bounds.clone(), o.upper_bounds.clone())?
            .with_log_scale(SearchSpace::gains().log_scale)
    }

    pub fn tuner(&self) -> Result<TunerSettings> {
        Ok(TunerSettings {
            space: self.search_space()?,
            ..TunerSettings::default()
        })
    }

    pub fn gains(&self) -> Option<ControlGains> {
        self.gains
            .as_ref()
            .and_then(|g| ControlGains::new(g.kp, g.kvp, g.kvi, g.kfv).ok())
    }
}
