//! Lumped two-inertia model of a ball-screw feed axis.
//!
//! The motor rotor and the reflected load are two rigid inertias joined by
//! the torsional screw stiffness with a viscous damper in parallel:
//!
//! ```text
//! Jm·ω̇m = T − K(θm − θl) − B(ωm − ωl)
//! Jl·ω̇l =     K(θm − θl) + B(ωm − ωl) − D
//! ```
//!
//! `T` is the (saturated) motor torque and `D` an optional load torque.
//! Everything inside this module is SI; catalog values in kg·cm² are
//! converted with [`KG_CM2`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One kg·cm² in kg·m².
pub const KG_CM2: f64 = 1e-4;

/// Physical constants of the axis together with the selected drive motor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanicalParams {
    /// Torsional screw stiffness, N·m/rad.
    pub screw_stiffness: f64,
    /// Rotor inertia, kg·m².
    pub motor_inertia: f64,
    /// Load inertia reflected to the screw axis, kg·m².
    pub load_inertia: f64,
    /// Transmission damping across the coupling, N·m·s/rad.
    pub damping: f64,
    /// Table travel per radian of screw rotation, mm/rad.
    pub drive_coeff: f64,
    /// Motor peak torque, N·m.
    pub max_torque: f64,
}

impl MechanicalParams {
    pub fn new(
        screw_stiffness: f64,
        motor_inertia: f64,
        load_inertia: f64,
        damping: f64,
        drive_coeff: f64,
        max_torque: f64,
    ) -> Result<Self> {
        let p = Self {
            screw_stiffness,
            motor_inertia,
            load_inertia,
            damping,
            drive_coeff,
            max_torque,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("screw_stiffness", self.screw_stiffness),
            ("motor_inertia", self.motor_inertia),
            ("load_inertia", self.load_inertia),
            ("drive_coeff", self.drive_coeff),
            ("max_torque", self.max_torque),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.damping.is_finite() && self.damping >= 0.0) {
            return Err(Error::domain(format!(
                "damping must be non-negative, got {}",
                self.damping
            )));
        }
        Ok(())
    }

    pub fn total_inertia(&self) -> f64 {
        self.motor_inertia + self.load_inertia
    }

    /// Stiffness multiplied by `factor`; used for rigid-body surrogates.
    pub fn with_stiffness_scaled(mut self, factor: f64) -> Self {
        self.screw_stiffness *= factor;
        self
    }
}

/// Angles in rad, velocities in rad/s. Load-side angle is the screw angle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub theta_m: f64,
    pub omega_m: f64,
    pub theta_l: f64,
    pub omega_l: f64,
}

impl PlantState {
    pub const REST: PlantState = PlantState {
        theta_m: 0.0,
        omega_m: 0.0,
        theta_l: 0.0,
        omega_l: 0.0,
    };

    /// Table position, mm.
    pub fn table_position(&self, params: &MechanicalParams) -> f64 {
        params.drive_coeff * self.theta_l
    }

    /// Table velocity, mm/s.
    pub fn table_velocity(&self, params: &MechanicalParams) -> f64 {
        params.drive_coeff * self.omega_l
    }

    /// Total angular momentum Jm·ωm + Jl·ωl.
    pub fn momentum(&self, params: &MechanicalParams) -> f64 {
        params.motor_inertia * self.omega_m + params.load_inertia * self.omega_l
    }

    /// Kinetic plus spring energy.
    pub fn energy(&self, params: &MechanicalParams) -> f64 {
        let twist = self.theta_m - self.theta_l;
        0.5 * params.motor_inertia * self.omega_m * self.omega_m
            + 0.5 * params.load_inertia * self.omega_l * self.omega_l
            + 0.5 * params.screw_stiffness * twist * twist
    }

    pub fn is_finite(&self) -> bool {
        self.theta_m.is_finite()
            && self.omega_m.is_finite()
            && self.theta_l.is_finite()
            && self.omega_l.is_finite()
    }

    fn axpy(&self, h: f64, rate: &PlantState) -> PlantState {
        PlantState {
            theta_m: self.theta_m + h * rate.theta_m,
            omega_m: self.omega_m + h * rate.omega_m,
            theta_l: self.theta_l + h * rate.theta_l,
            omega_l: self.omega_l + h * rate.omega_l,
        }
    }
}

pub fn saturate_torque(commanded: f64, params: &MechanicalParams) -> f64 {
    commanded.clamp(-params.max_torque, params.max_torque)
}

/// Time derivative of the state under motor torque `torque` (already saturated).
pub fn state_derivative(state: &PlantState, torque: f64, params: &MechanicalParams) -> PlantState {
    loaded_derivative(state, torque, 0.0, params)
}

/// As [`state_derivative`] with a load torque `load_torque` opposing the table.
pub fn loaded_derivative(
    state: &PlantState,
    torque: f64,
    load_torque: f64,
    params: &MechanicalParams,
) -> PlantState {
    let coupling = params.screw_stiffness * (state.theta_m - state.theta_l)
        + params.damping * (state.omega_m - state.omega_l);
    PlantState {
        theta_m: state.omega_m,
        omega_m: (torque - coupling) / params.motor_inertia,
        theta_l: state.omega_l,
        omega_l: (coupling - load_torque) / params.load_inertia,
    }
}

/// One classical RK4 step with the torque held over the whole step.
pub fn step_rk4(state: &PlantState, torque: f64, dt: f64, params: &MechanicalParams) -> PlantState {
    step_rk4_loaded(state, torque, 0.0, dt, params)
}

pub fn step_rk4_loaded(
    state: &PlantState,
    torque: f64,
    load_torque: f64,
    dt: f64,
    params: &MechanicalParams,
) -> PlantState {
    let f = |s: &PlantState| loaded_derivative(s, torque, load_torque, params);
    let k1 = f(state);
    let k2 = f(&state.axpy(0.5 * dt, &k1));
    let k3 = f(&state.axpy(0.5 * dt, &k2));
    let k4 = f(&state.axpy(dt, &k3));
    let w = dt / 6.0;
    PlantState {
        theta_m: state.theta_m + w * (k1.theta_m + 2.0 * k2.theta_m + 2.0 * k3.theta_m + k4.theta_m),
        omega_m: state.omega_m + w * (k1.omega_m + 2.0 * k2.omega_m + 2.0 * k3.omega_m + k4.omega_m),
        theta_l: state.theta_l + w * (k1.theta_l + 2.0 * k2.theta_l + 2.0 * k3.theta_l + k4.theta_l),
        omega_l: state.omega_l + w * (k1.omega_l + 2.0 * k2.omega_l + 2.0 * k3.omega_l + k4.omega_l),
    }
}

/// RK4 step of the linear plant folded into one affine map.
///
/// For a linear system with the torque held across the step, the four RK4
/// stages collapse to `x' = Φx + Γ_T·T + Γ_D·D` with
/// `Φ = Σ_{n≤4} (hA)ⁿ/n!` and `Γ = h·Σ_{n≤3} (hA)ⁿ/(n+1)!·b`. This is the same
/// update as [`step_rk4_loaded`] up to rounding, at a fraction of the cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rk4Propagator {
    phi: [[f64; 4]; 4],
    gamma_torque: [f64; 4],
    gamma_load: [f64; 4],
}

type Mat4 = [[f64; 4]; 4];

fn mat_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(a: &Mat4, x: &[f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = a[i][0] * x[0] + a[i][1] * x[1] + a[i][2] * x[2] + a[i][3] * x[3];
    }
    out
}

impl Rk4Propagator {
    pub fn new(params: &MechanicalParams, dt: f64) -> Self {
        let (jm, jl) = (params.motor_inertia, params.load_inertia);
        let (k, b) = (params.screw_stiffness, params.damping);
        // state order: θm, ωm, θl, ωl
        let ha: Mat4 = [
            [0.0, dt, 0.0, 0.0],
            [-k / jm * dt, -b / jm * dt, k / jm * dt, b / jm * dt],
            [0.0, 0.0, 0.0, dt],
            [k / jl * dt, b / jl * dt, -k / jl * dt, -b / jl * dt],
        ];
        let ha2 = mat_mul(&ha, &ha);
        let ha3 = mat_mul(&ha2, &ha);
        let ha4 = mat_mul(&ha3, &ha);
        let mut phi = [[0.0; 4]; 4];
        let mut series = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                let eye = if i == j { 1.0 } else { 0.0 };
                phi[i][j] = eye + ha[i][j] + ha2[i][j] / 2.0 + ha3[i][j] / 6.0 + ha4[i][j] / 24.0;
                series[i][j] = dt * (eye + ha[i][j] / 2.0 + ha2[i][j] / 6.0 + ha3[i][j] / 24.0);
            }
        }
        Rk4Propagator {
            phi,
            gamma_torque: mat_vec(&series, &[0.0, 1.0 / jm, 0.0, 0.0]),
            gamma_load: mat_vec(&series, &[0.0, 0.0, 0.0, -1.0 / jl]),
        }
    }

    pub fn step(&self, state: &PlantState, torque: f64, load_torque: f64) -> PlantState {
        let x = [state.theta_m, state.omega_m, state.theta_l, state.omega_l];
        let y = mat_vec(&self.phi, &x);
        PlantState {
            theta_m: y[0] + self.gamma_torque[0] * torque + self.gamma_load[0] * load_torque,
            omega_m: y[1] + self.gamma_torque[1] * torque + self.gamma_load[1] * load_torque,
            theta_l: y[2] + self.gamma_torque[2] * torque + self.gamma_load[2] * load_torque,
            omega_l: y[3] + self.gamma_torque[3] * torque + self.gamma_load[3] * load_torque,
        }
    }
}

/// Acceleration/deceleration capacity of a motor driving a load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelCapacity {
    /// T/(Jm + Jl) in catalog units, N·m per kg·cm².
    pub rotor: f64,
    /// `rotor` multiplied by the drive coefficient R (mm/rad).
    pub table: f64,
}

impl AccelCapacity {
    /// Rotor-side capacity in rad/s².
    pub fn rotor_rad_per_s2(&self) -> f64 {
        self.rotor / KG_CM2
    }

    /// Table-side capacity in m/s².
    pub fn table_m_per_s2(&self) -> f64 {
        self.table / KG_CM2 / 1000.0
    }
}

/// `torque` in N·m, inertias in kg·cm², `drive_coeff` in mm/rad.
pub fn acceleration_capacity(
    torque: f64,
    motor_inertia_kgcm2: f64,
    load_inertia_kgcm2: f64,
    drive_coeff: f64,
) -> Result<AccelCapacity> {
    if !(motor_inertia_kgcm2 > 0.0 && load_inertia_kgcm2 > 0.0) {
        return Err(Error::domain("inertias must be positive"));
    }
    let rotor = torque / (motor_inertia_kgcm2 + load_inertia_kgcm2);
    Ok(AccelCapacity {
        rotor,
        table: rotor * drive_coeff,
    })
}

/// Undamped natural frequency of the two-inertia mode, rad/s.
pub fn resonance_frequency(params: &MechanicalParams) -> f64 {
    let (jm, jl) = (params.motor_inertia, params.load_inertia);
    (params.screw_stiffness * (jm + jl) / (jm * jl)).sqrt()
}
