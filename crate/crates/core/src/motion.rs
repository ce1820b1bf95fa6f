//! Trapezoidal velocity planning and reciprocating command trajectories.
//!
//! Distances are in mm, velocities in mm/s, accelerations in mm/s².

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileShape {
    Trapezoidal,
    /// Stroke too short to reach the cruise velocity.
    Triangular,
}

/// A single point-to-point move starting and ending at rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    pub distance: f64,
    pub cruise_velocity: f64,
    pub acceleration: f64,
    /// End of the acceleration phase, s.
    pub t1: f64,
    /// End of the cruise phase, s.
    pub t2: f64,
    /// End of motion, s.
    pub t3: f64,
    pub shape: ProfileShape,
    pub peak_velocity: f64,
}

/// Commanded kinematics at one instant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandSample {
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

impl CommandSample {
    fn mirrored(self, distance: f64) -> Self {
        CommandSample {
            position: distance - self.position,
            velocity: -self.velocity,
            acceleration: -self.acceleration,
        }
    }
}

pub fn plan(distance: f64, velocity: f64, acceleration: f64) -> Result<MotionProfile> {
    for (name, v) in [
        ("distance", distance),
        ("velocity", velocity),
        ("acceleration", acceleration),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::domain(format!("{name} must be positive, got {v}")));
        }
    }
    let ramp_distance = velocity * velocity / acceleration;
    if ramp_distance <= distance {
        let t1 = velocity / acceleration;
        let cruise = (distance - ramp_distance) / velocity;
        Ok(MotionProfile {
            distance,
            cruise_velocity: velocity,
            acceleration,
            t1,
            t2: t1 + cruise,
            t3: 2.0 * t1 + cruise,
            shape: ProfileShape::Trapezoidal,
            peak_velocity: velocity,
        })
    } else {
        let peak = (acceleration * distance).sqrt();
        let t1 = peak / acceleration;
        Ok(MotionProfile {
            distance,
            cruise_velocity: velocity,
            acceleration,
            t1,
            t2: t1,
            t3: 2.0 * t1,
            shape: ProfileShape::Triangular,
            peak_velocity: peak,
        })
    }
}

impl MotionProfile {
    /// Distance covered while accelerating (equal to the braking distance).
    pub fn ramp_distance(&self) -> f64 {
        0.5 * self.acceleration * self.t1 * self.t1
    }

    pub fn cruise_distance(&self) -> f64 {
        self.peak_velocity * (self.t2 - self.t1)
    }

    /// Position, velocity and acceleration at time `t`; holds at `distance` after `t3`.
    pub fn sample(&self, t: f64) -> CommandSample {
        let a = self.acceleration;
        let t = t.max(0.0);
        if t < self.t1 {
            CommandSample {
                position: 0.5 * a * t * t,
                velocity: a * t,
                acceleration: a,
            }
        } else if t < self.t2 {
            CommandSample {
                position: self.ramp_distance() + self.peak_velocity * (t - self.t1),
                velocity: self.peak_velocity,
                acceleration: 0.0,
            }
        } else if t < self.t3 {
            let remaining = self.t3 - t;
            CommandSample {
                position: self.distance - 0.5 * a * remaining * remaining,
                velocity: a * remaining,
                acceleration: -a,
            }
        } else {
            CommandSample {
                position: self.distance,
                velocity: 0.0,
                acceleration: 0.0,
            }
        }
    }
}

/// A command sampled on the simulation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandTrajectory {
    pub dt: f64,
    pub samples: Vec<CommandSample>,
    /// Sample indices at which a new stroke starts after a reversal.
    pub stroke_markers: Vec<usize>,
    /// Stroke length, mm.
    pub stroke: f64,
    pub label: String,
}

impl CommandTrajectory {
    pub fn duration(&self) -> f64 {
        self.dt * (self.samples.len().saturating_sub(1)) as f64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(|k| k as f64 * self.dt)
    }
}

/// Forward stroke, dwell, mirrored return stroke, dwell; repeated `cycles` times.
pub fn reciprocate(
    profile: &MotionProfile,
    cycles: usize,
    dwell: f64,
    dt: f64,
) -> Result<CommandTrajectory> {
    if cycles == 0 {
        return Err(Error::domain("cycles must be at least 1"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::domain(format!("dt must be positive, got {dt}")));
    }
    if !(dwell.is_finite() && dwell >= 0.0) {
        return Err(Error::domain(format!("dwell must be non-negative, got {dwell}")));
    }
    let leg = profile.t3 + dwell;
    let period = 2.0 * leg;
    let total = cycles as f64 * period;
    let n = (total / dt).round() as usize;

    let mut samples = Vec::with_capacity(n + 1);
    let mut stroke_markers = Vec::with_capacity(2 * cycles);
    let mut last_leg = 0usize;
    for k in 0..=n {
        let t = k as f64 * dt;
        // Grid times carry rounding noise; snap boundaries within a tiny fraction of dt.
        let eps = 1e-6 * dt;
        let cycle = (((t + eps) / period).floor() as usize).min(cycles - 1);
        let phase = t - cycle as f64 * period;
        let returning = phase >= leg - eps;
        let leg_index = 2 * cycle + usize::from(returning);
        if leg_index != last_leg {
            stroke_markers.push(k);
            last_leg = leg_index;
        }
        let sample = if !returning {
            profile.sample(phase)
        } else {
            profile.sample(phase - leg).mirrored(profile.distance)
        };
        samples.push(sample);
    }
    // Close the path exactly regardless of grid alignment.
    if let Some(last) = samples.last_mut() {
        *last = CommandSample::default();
    }

    Ok(CommandTrajectory {
        dt,
        samples,
        stroke_markers,
        stroke: profile.distance,
        label: format!(
            "d{}_v{}_a{}_c{}",
            profile.distance, profile.cruise_velocity, profile.acceleration, cycles
        ),
    })
}
