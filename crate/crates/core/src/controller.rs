//! Cascaded position/velocity servo loop with velocity feedforward.
//!
//! The position loop is proportional, the velocity loop PI; the current loop
//! is treated as ideal so the velocity controller output is motor torque.
//! Both loops close on table (load-side) feedback. Linear quantities are
//! converted to screw angles through the drive coefficient before use.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{saturate_torque, MechanicalParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlGains {
    /// Position-loop gain, 1/s.
    pub kp: f64,
    /// Velocity-loop proportional gain, N·m·s/rad.
    pub kvp: f64,
    /// Velocity-loop integral gain, N·m/rad.
    pub kvi: f64,
    /// Velocity feedforward fraction, 0..=1.
    pub kfv: f64,
}

impl ControlGains {
    pub const ZERO: ControlGains = ControlGains {
        kp: 0.0,
        kvp: 0.0,
        kvi: 0.0,
        kfv: 0.0,
    };

    pub fn new(kp: f64, kvp: f64, kvi: f64, kfv: f64) -> Result<Self> {
        let g = ControlGains { kp, kvp, kvi, kfv };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kp", self.kp), ("kvp", self.kvp), ("kvi", self.kvi)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.kfv) {
            return Err(Error::domain(format!("kfv must lie in [0, 1], got {}", self.kfv)));
        }
        Ok(())
    }

    /// Search-vector layout used by the optimizers: `[kp, kvp, kvi, kfv]`.
    pub fn to_array(&self) -> [f64; 4] {
        [self.kp, self.kvp, self.kvi, self.kfv]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        ControlGains {
            kp: x[0],
            kvp: x[1],
            kvi: x[2],
            kfv: x[3],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    /// Integral of the velocity error, rad.
    pub velocity_integrator: f64,
}

/// Position (mm) and velocity (mm/s) pair, either commanded or measured.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Kinematics {
    pub position: f64,
    pub velocity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub torque_cmd: f64,
    pub saturated_torque: f64,
    pub state: ControllerState,
}

pub fn control_step(
    command: Kinematics,
    feedback: Kinematics,
    gains: &ControlGains,
    state: ControllerState,
    dt: f64,
    params: &MechanicalParams,
) -> ControlOutput {
    let r = params.drive_coeff;
    let position_error = (command.position - feedback.position) / r;
    let velocity_ref = gains.kp * position_error + gains.kfv * command.velocity / r;
    let velocity_error = velocity_ref - feedback.velocity / r;

    let torque_cmd = gains.kvp * velocity_error + gains.kvi * state.velocity_integrator;
    let saturated_torque = saturate_torque(torque_cmd, params);

    // Conditional integration: freeze while saturated unless the error unwinds it.
    let saturated = torque_cmd != saturated_torque;
    let unwinding = velocity_error * torque_cmd < 0.0;
    let velocity_integrator = if !saturated || unwinding {
        state.velocity_integrator + velocity_error * dt
    } else {
        state.velocity_integrator
    };

    ControlOutput {
        torque_cmd,
        saturated_torque,
        state: ControllerState {
            velocity_integrator,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{step_rk4, PlantState, KG_CM2};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params() -> MechanicalParams {
        MechanicalParams::new(612.0, 88.9 * KG_CM2, 45.5 * KG_CM2, 0.0288, 1.0, 71.1).unwrap()
    }

    #[test]
    fn null_input_gives_zero_torque() {
        let g = ControlGains::new(10.0, 2.0, 50.0, 1.0).unwrap();
        let out = control_step(
            Kinematics::default(),
            Kinematics::default(),
            &g,
            ControllerState::default(),
            1e-4,
            &params(),
        );
        assert_eq!(out.torque_cmd, 0.0);
        assert_eq!(out.saturated_torque, 0.0);
        assert_eq!(out.state.velocity_integrator, 0.0);
    }

    #[test]
    fn signal_path_arithmetic() {
        // R = 1 mm/rad so mm and rad coincide.
        let g = ControlGains::new(10.0, 2.0, 0.0, 0.0).unwrap();
        let out = control_step(
            Kinematics {
                position: 0.5,
                velocity: 0.0,
            },
            Kinematics::default(),
            &g,
            ControllerState::default(),
            1e-4,
            &params(),
        );
        assert_relative_eq!(out.torque_cmd, 10.0);
        assert_relative_eq!(out.saturated_torque, 10.0);
    }

    #[test]
    fn gain_validation() {
        assert!(ControlGains::new(-1.0, 1.0, 1.0, 0.5).is_err());
        assert!(ControlGains::new(1.0, 1.0, 1.0, 1.5).is_err());
        assert!(ControlGains::new(1.0, 1.0, f64::NAN, 0.5).is_err());
    }

    #[test]
    fn integrator_freezes_in_saturation() {
        let g = ControlGains::new(0.0, 2.0, 100.0, 0.0).unwrap();
        let p = params();
        let state = ControllerState {
            velocity_integrator: 0.5,
        };
        // e_v = 75 rad/s → torque_cmd = 150 + 50 = 200 > Tmax
        let out = control_step(
            Kinematics::default(),
            Kinematics {
                position: 0.0,
                velocity: -75.0,
            },
            &g,
            state,
            1e-3,
            &p,
        );
        assert_relative_eq!(out.torque_cmd, 200.0);
        assert_eq!(out.saturated_torque, 71.1);
        assert_eq!(out.state, state);

        // error reversing sign unwinds the integrator even while saturated
        let state = ControllerState {
            velocity_integrator: 3.0,
        };
        let out = control_step(
            Kinematics::default(),
            Kinematics {
                position: 0.0,
                velocity: 10.0,
            },
            &g,
            state,
            1e-3,
            &p,
        );
        assert!(out.torque_cmd > p.max_torque);
        assert_relative_eq!(out.state.velocity_integrator, 3.0 - 10.0 * 1e-3);
    }

    /// Step response against a saturated rigid axis, with and without anti-windup.
    fn overshoot(anti_windup: bool) -> (f64, f64) {
        let p = params().with_stiffness_scaled(1.0);
        let g = ControlGains::new(30.0, 0.5, 20.0, 0.0).unwrap();
        let target = Kinematics {
            position: 20.0,
            velocity: 0.0,
        };
        let dt = 1e-4;
        let mut plant = PlantState::REST;
        let mut ctl = ControllerState::default();
        let mut peak: f64 = 0.0;
        let mut max_integrator: f64 = 0.0;
        for _ in 0..30_000 {
            let fb = Kinematics {
                position: plant.table_position(&p),
                velocity: plant.table_velocity(&p),
            };
            let out = control_step(target, fb, &g, ctl, dt, &p);
            ctl = if anti_windup {
                out.state
            } else {
                let r = p.drive_coeff;
                let e_v = g.kp * (target.position - fb.position) / r - fb.velocity / r;
                ControllerState {
                    velocity_integrator: ctl.velocity_integrator + e_v * dt,
                }
            };
            max_integrator = max_integrator.max(ctl.velocity_integrator.abs());
            plant = step_rk4(&plant, out.saturated_torque, dt, &p);
            peak = peak.max(plant.table_position(&p));
        }
        (peak - target.position, max_integrator)
    }

    #[test]
    fn anti_windup_bounds_overshoot() {
        let (with, int_with) = overshoot(true);
        let (without, int_without) = overshoot(false);
        assert!(int_with < int_without, "{int_with} vs {int_without}");
        assert!(with < without, "overshoot {with} vs unclamped {without}");
    }

    proptest! {
        #[test]
        fn linear_below_saturation(pos in -1.0f64..1.0, vel in -1.0f64..1.0, fpos in -1.0f64..1.0,
                                   fvel in -1.0f64..1.0, alpha in 0.1f64..3.0) {
            let g = ControlGains::new(20.0, 0.3, 40.0, 0.7).unwrap();
            let p = params();
            let cmd = Kinematics { position: pos, velocity: vel };
            let fb = Kinematics { position: fpos, velocity: fvel };
            let a = control_step(cmd, fb, &g, ControllerState::default(), 1e-4, &p);
            let scale = |k: Kinematics| Kinematics { position: alpha * k.position, velocity: alpha * k.velocity };
            let b = control_step(scale(cmd), scale(fb), &g, ControllerState::default(), 1e-4, &p);
            prop_assert!((b.torque_cmd - alpha * a.torque_cmd).abs() <= 1e-9 * (1.0 + a.torque_cmd.abs()));
            let again = control_step(cmd, fb, &g, ControllerState::default(), 1e-4, &p);
            prop_assert_eq!(a, again);
        }

        #[test]
        fn integrator_bounded_after_saturation(errors in prop::collection::vec(50.0f64..200.0, 1..100)) {
            let g = ControlGains::new(0.0, 1.0, 100.0, 0.0).unwrap();
            let p = params();
            let dt = 1e-3;
            let mut state = ControllerState::default();
            let mut entry: Option<f64> = None;
            for e in errors {
                let out = control_step(Kinematics::default(), Kinematics { position: 0.0, velocity: -e }, &g, state, dt, &p);
                let saturated = out.torque_cmd != out.saturated_torque;
                if !saturated {
                    entry = None;
                } else if entry.is_none() {
                    entry = Some(state.velocity_integrator);
                }
                state = out.state;
                if let Some(at_entry) = entry {
                    prop_assert!(state.velocity_integrator.abs() <= at_entry.abs() + 200.0 * dt);
                }
            }
        }
    }
}
