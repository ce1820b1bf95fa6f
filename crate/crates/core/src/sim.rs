//! Closed-loop simulation: command trajectory in, trace out.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::controller::{control_step, ControlGains, ControllerState, Kinematics};
use crate::error::{Error, Result};
use crate::metrics::{MetricsAccumulator, PerformanceReport};
use crate::motion::{CommandSample, CommandTrajectory};
use crate::plant::{MechanicalParams, PlantState, Rk4Propagator};

/// A run is declared divergent once the table strays this many strokes away.
pub const DIVERGENCE_STROKES: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Integration and controller step, s.
    pub dt: f64,
    /// Extra time simulated after the trajectory with the final command held, s.
    pub settle_tail: f64,
    /// Quadrature encoder lines per screw revolution; 0 means ideal feedback.
    pub encoder_counts_per_rev: u32,
    /// Constant load torque opposing the table, N·m.
    pub load_torque: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-4,
            settle_tail: 0.0,
            encoder_counts_per_rev: 0,
            load_torque: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::domain(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.settle_tail.is_finite() && self.settle_tail >= 0.0) {
            return Err(Error::domain("settle_tail must be non-negative"));
        }
        if !self.load_torque.is_finite() {
            return Err(Error::domain("load_torque must be finite"));
        }
        Ok(())
    }
}

/// One row of a trace. `motor_velocity` (rad/s) is kept in memory only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub pos_cmd: f64,
    pub vel_cmd: f64,
    pub pos_actual: f64,
    pub vel_actual: f64,
    pub torque_cmd: f64,
    pub torque_applied: f64,
    pub motor_velocity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub gains: Option<ControlGains>,
    pub params: Option<MechanicalParams>,
    pub profile: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub dt: f64,
    pub samples: Vec<TraceSample>,
    pub meta: TraceMeta,
    /// Plant state after the last sample's torque has been applied for one step.
    pub final_state: PlantState,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DivergenceVerdict {
    Ok,
    Diverged { time: f64, reason: String },
}

fn sample_problem(s: &TraceSample, stroke: f64) -> Option<String> {
    let values = [s.pos_actual, s.vel_actual, s.torque_cmd, s.torque_applied, s.motor_velocity];
    if values.iter().any(|v| !v.is_finite()) {
        return Some("non-finite state".to_owned());
    }
    let bound = DIVERGENCE_STROKES * stroke.abs().max(1.0);
    if s.pos_actual.abs() > bound {
        return Some(format!(
            "table position {:.3e} mm exceeds {bound} mm",
            s.pos_actual
        ));
    }
    None
}

/// Scans samples in time order and reports the first divergent one.
pub fn check_divergence(samples: &[TraceSample], stroke: f64) -> DivergenceVerdict {
    samples
        .iter()
        .find_map(|s| {
            sample_problem(s, stroke).map(|reason| DivergenceVerdict::Diverged { time: s.t, reason })
        })
        .unwrap_or(DivergenceVerdict::Ok)
}

struct Encoder {
    quantum: f64,
    last_angle: Option<f64>,
}

impl Encoder {
    fn new(counts_per_rev: u32) -> Option<Self> {
        (counts_per_rev > 0).then(|| Encoder {
            quantum: 2.0 * PI / (4.0 * counts_per_rev as f64),
            last_angle: None,
        })
    }

    /// Quantized angle and its backward-difference rate.
    fn read(&mut self, angle: f64, dt: f64) -> (f64, f64) {
        let q = (angle / self.quantum).round() * self.quantum;
        let rate = self.last_angle.map_or(0.0, |prev| (q - prev) / dt);
        self.last_angle = Some(q);
        (q, rate)
    }
}

/// Steps the loop and hands every sample to `sink`; returns the final plant state.
fn drive(
    params: &MechanicalParams,
    gains: &ControlGains,
    trajectory: &CommandTrajectory,
    config: &SimConfig,
    mut sink: impl FnMut(&TraceSample),
) -> Result<PlantState> {
    params.validate()?;
    gains.validate()?;
    config.validate()?;
    if trajectory.is_empty() {
        return Err(Error::domain("trajectory has no samples"));
    }
    if (trajectory.dt - config.dt).abs() > 1e-12 * config.dt {
        return Err(Error::domain(format!(
            "trajectory dt {} does not match simulation dt {}",
            trajectory.dt, config.dt
        )));
    }

    let dt = config.dt;
    let tail = (config.settle_tail / dt).round() as usize;
    let held = *trajectory.samples.last().expect("non-empty");
    let commands = trajectory
        .samples
        .iter()
        .copied()
        .chain(std::iter::repeat_n(
            CommandSample {
                acceleration: 0.0,
                ..held
            },
            tail,
        ));

    let propagator = Rk4Propagator::new(params, dt);
    let mut encoder = Encoder::new(config.encoder_counts_per_rev);
    let mut plant = PlantState::REST;
    let mut ctl = ControllerState::default();
    for (k, cmd) in commands.enumerate() {
        let t = k as f64 * dt;
        let feedback = match encoder.as_mut() {
            Some(enc) => {
                let (angle, rate) = enc.read(plant.theta_l, dt);
                Kinematics {
                    position: params.drive_coeff * angle,
                    velocity: params.drive_coeff * rate,
                }
            }
            None => Kinematics {
                position: plant.table_position(params),
                velocity: plant.table_velocity(params),
            },
        };
        let command = Kinematics {
            position: cmd.position,
            velocity: cmd.velocity,
        };
        let out = control_step(command, feedback, gains, ctl, dt, params);
        ctl = out.state;

        let sample = TraceSample {
            t,
            pos_cmd: cmd.position,
            vel_cmd: cmd.velocity,
            pos_actual: plant.table_position(params),
            vel_actual: plant.table_velocity(params),
            torque_cmd: out.torque_cmd,
            torque_applied: out.saturated_torque,
            motor_velocity: plant.omega_m,
        };
        if let Some(reason) = sample_problem(&sample, trajectory.stroke) {
            return Err(Error::Diverged { time: t, reason });
        }
        sink(&sample);
        plant = propagator.step(&plant, out.saturated_torque, config.load_torque);
    }
    Ok(plant)
}

/// Runs the loop from rest and records every sample.
pub fn run_closed_loop(
    params: &MechanicalParams,
    gains: &ControlGains,
    trajectory: &CommandTrajectory,
    config: &SimConfig,
) -> Result<Trace> {
    let tail = (config.settle_tail / config.dt).round() as usize;
    let mut samples = Vec::with_capacity(trajectory.len() + tail);
    let final_state = drive(params, gains, trajectory, config, |s| samples.push(*s))?;
    Ok(Trace {
        dt: config.dt,
        samples,
        meta: TraceMeta {
            gains: Some(*gains),
            params: Some(*params),
            profile: trajectory.label.clone(),
            seed: None,
        },
        final_state,
    })
}

/// Same loop as [`run_closed_loop`] but only accumulates the performance metrics.
pub fn simulate_performance(
    params: &MechanicalParams,
    gains: &ControlGains,
    trajectory: &CommandTrajectory,
    config: &SimConfig,
) -> Result<PerformanceReport> {
    let mut acc = MetricsAccumulator::default();
    drive(params, gains, trajectory, config, |s| acc.push(s))?;
    acc.finish()
}

impl Trace {
    pub fn duration(&self) -> f64 {
        self.dt * self.samples.len() as f64
    }

    /// Largest |Δ(Jm·ωm + Jl·ωl) − ∫(T − D)dt| over all samples, relative to ∫|T|dt.
    pub fn momentum_residual(&self, params: &MechanicalParams, load_torque: f64) -> f64 {
        let momentum = |motor_velocity: f64, table_velocity: f64| {
            params.motor_inertia * motor_velocity
                + params.load_inertia * table_velocity / params.drive_coeff
        };
        let Some(first) = self.samples.first() else {
            return 0.0;
        };
        let p0 = momentum(first.motor_velocity, first.vel_actual);
        let mut impulse = 0.0;
        let mut scale = 0.0;
        let mut worst: f64 = 0.0;
        for s in &self.samples {
            let p = momentum(s.motor_velocity, s.vel_actual);
            worst = worst.max((p - p0 - impulse).abs());
            impulse += (s.torque_applied - load_torque) * self.dt;
            scale += s.torque_applied.abs() * self.dt;
        }
        worst = worst.max((self.final_state.momentum(params) - p0 - impulse).abs());
        if scale > 0.0 {
            worst / scale
        } else {
            worst
        }
    }

    /// Largest |torque_applied| over the trace.
    pub fn peak_applied_torque(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.torque_applied.abs())
            .fold(0.0, f64::max)
    }
}
