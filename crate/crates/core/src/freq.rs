//! Small-signal frequency analysis of the cascaded position loop.
//!
//! Both loops close on the same measured table motion, so the loop is broken
//! at that measurement. Saturation is ignored and velocity feedforward drops
//! out because it sits outside the feedback path. The open loop is
//!
//! ```text
//! L(s) = C(s)·(1 + kp/s)·G(s),   C(s) = kvp + kvi/s,
//! G(s) = (Bs + K) / (s·(Jm·Jl·s² + (Jm + Jl)(Bs + K)))
//! ```
//!
//! where `G` maps motor torque to load angular velocity. Breaking only the
//! `kp` path would leave the inner loop inside the "open" loop, and its own
//! instability (or a lightly damped integral path) would not show up in the
//! margins.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::controller::ControlGains;
use crate::error::{Error, Result};
use crate::plant::MechanicalParams;

pub const MIN_GAIN_MARGIN_DB: f64 = 6.0;
pub const MIN_PHASE_MARGIN_DEG: f64 = 30.0;
pub const MAX_RESONANCE_PEAK: f64 = 1.4;

/// Log-spaced angular frequencies, rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    omegas: Vec<f64>,
}

impl FrequencyGrid {
    pub fn log(min: f64, max: f64, count: usize) -> Result<Self> {
        if !(min > 0.0 && max > min && max.is_finite()) {
            return Err(Error::domain(format!("invalid grid range [{min}, {max}]")));
        }
        if count < 2 {
            return Err(Error::domain("grid needs at least two points"));
        }
        let (lo, hi) = (min.log10(), max.log10());
        let step = (hi - lo) / (count - 1) as f64;
        let omegas = (0..count)
            .map(|i| 10f64.powf(lo + step * i as f64))
            .collect();
        Ok(FrequencyGrid { omegas })
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.omegas[0]
    }

    pub fn max(&self) -> f64 {
        self.omegas[self.omegas.len() - 1]
    }
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        FrequencyGrid::log(1e-1, 1e5, 2000).expect("valid default grid")
    }
}

/// Torque → load angular velocity.
pub fn plant_velocity_response(params: &MechanicalParams, s: Complex64) -> Complex64 {
    let (jm, jl) = (params.motor_inertia, params.load_inertia);
    let coupling = s * params.damping + params.screw_stiffness;
    coupling / (s * (s * s * (jm * jl) + coupling * (jm + jl)))
}

/// Velocity-reference → load velocity with the PI loop closed.
pub fn velocity_loop_response(params: &MechanicalParams, gains: &ControlGains, s: Complex64) -> Complex64 {
    let open = (Complex64::from(gains.kvp) + gains.kvi / s) * plant_velocity_response(params, s);
    open / (open + 1.0)
}

/// Loop transfer around the table measurement.
pub fn open_loop_at(params: &MechanicalParams, gains: &ControlGains, s: Complex64) -> Complex64 {
    let pi = Complex64::from(gains.kvp) + gains.kvi / s;
    pi * (gains.kp / s + 1.0) * plant_velocity_response(params, s)
}

/// Complementary sensitivity L/(1+L): command → position when the reference
/// enters at the measurement point.
pub fn closed_loop_at(params: &MechanicalParams, gains: &ControlGains, s: Complex64) -> Complex64 {
    let l = open_loop_at(params, gains, s);
    l / (l + 1.0)
}

pub fn loop_response(params: &MechanicalParams, gains: &ControlGains, grid: &FrequencyGrid) -> Vec<Complex64> {
    grid.omegas()
        .iter()
        .map(|&w| open_loop_at(params, gains, Complex64::new(0.0, w)))
        .collect()
}

/// Phase in degrees, unwrapped along the grid starting from the first point.
pub fn unwrapped_phase_deg(response: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(response.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for z in response {
        let raw = z.arg().to_degrees();
        if let Some(p) = prev {
            let mut candidate = raw + offset;
            while candidate - p > 180.0 {
                offset -= 360.0;
                candidate -= 360.0;
            }
            while candidate - p < -180.0 {
                offset += 360.0;
                candidate += 360.0;
            }
        }
        let value = raw + offset;
        out.push(value);
        prev = Some(value);
    }
    out
}

/// Bode rows: (ω rad/s, |L| dB, unwrapped phase deg).
pub fn bode_rows(grid: &FrequencyGrid, response: &[Complex64]) -> Vec<(f64, f64, f64)> {
    let phase = unwrapped_phase_deg(response);
    grid.omegas()
        .iter()
        .zip(response)
        .zip(phase)
        .map(|((&w, z), p)| (w, 20.0 * z.norm().log10(), p))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    /// dB; +∞ when the phase never reaches −180°.
    #[serde(with = "crate::serde_inf")]
    pub gain_margin_db: f64,
    /// Degrees; +∞ when |L| never crosses unity.
    #[serde(with = "crate::serde_inf")]
    pub phase_margin_deg: f64,
    pub gain_crossover: Option<f64>,
    pub phase_crossover: Option<f64>,
}

fn wrap_deg(x: f64) -> f64 {
    // into (-180, 180]
    let r = (x + 180.0).rem_euclid(360.0) - 180.0;
    if r == -180.0 {
        180.0
    } else {
        r
    }
}

/// Gain and phase margins with log-linear interpolation between grid points.
/// With several crossings the smallest margin of each kind is reported.
///
/// Only crossings where the phase falls through −180° count towards the gain
/// margin. A rising crossing (phase climbing back from below −180° at low
/// frequency, as in any loop with more than two integrators) bounds how far
/// the gain may be *reduced*, not raised.
pub fn margins(omegas: &[f64], response: &[Complex64]) -> Result<Margins> {
    if omegas.len() != response.len() {
        return Err(Error::domain("frequency and response lengths differ"));
    }
    if response.len() < 2 {
        return Err(Error::domain("margins need at least two response points"));
    }
    let log_w: Vec<f64> = omegas.iter().map(|w| w.ln()).collect();
    let log_mag: Vec<f64> = response.iter().map(|z| z.norm().ln()).collect();
    let phase = unwrapped_phase_deg(response);

    let mut best_pm = f64::INFINITY;
    let mut gain_crossover = None;
    let mut best_gm = f64::INFINITY;
    let mut phase_crossover = None;

    for i in 0..response.len() - 1 {
        let (m0, m1) = (log_mag[i], log_mag[i + 1]);
        let interp_w = |f: f64| (log_w[i] + f * (log_w[i + 1] - log_w[i])).exp();

        if m0 == 0.0 || (m0 > 0.0) != (m1 > 0.0) && m1 != 0.0 {
            let f = if m0 == m1 { 0.0 } else { m0 / (m0 - m1) };
            let ph = phase[i] + f * (phase[i + 1] - phase[i]);
            let pm = wrap_deg(ph + 180.0);
            if pm < best_pm {
                best_pm = pm;
                gain_crossover = Some(interp_w(f));
            }
        }

        let (p0, p1) = (phase[i], phase[i + 1]);
        let (lo, hi) = (p0.min(p1), p0.max(p1));
        // levels −180 − 360k inside [lo, hi]
        let k_min = ((-180.0 - hi) / 360.0).ceil() as i64;
        let k_max = ((-180.0 - lo) / 360.0).floor() as i64;
        for k in k_min..=k_max {
            let level = -180.0 - 360.0 * k as f64;
            // a level hit exactly at the right endpoint is handled by the next interval
            if level == p1 && i + 2 < response.len() {
                continue;
            }
            if p1 >= p0 {
                continue;
            }
            let f = if p1 == p0 { 0.0 } else { (level - p0) / (p1 - p0) };
            let mag = m0 + f * (m1 - m0);
            let gm = -20.0 * mag / std::f64::consts::LN_10;
            if gm < best_gm {
                best_gm = gm;
                phase_crossover = Some(interp_w(f));
            }
        }
    }

    Ok(Margins {
        gain_margin_db: best_gm,
        phase_margin_deg: best_pm,
        gain_crossover,
        phase_crossover,
    })
}

/// Peak of |T(jω)| over the grid relative to the lowest-frequency magnitude.
/// The grid maximum is polished with a golden-section search between its neighbours.
pub fn peak_ratio(closed_loop: impl Fn(f64) -> Complex64, grid: &FrequencyGrid) -> f64 {
    let w = grid.omegas();
    let mags: Vec<f64> = w.iter().map(|&x| closed_loop(x).norm()).collect();
    let dc = mags[0];
    if !(dc > 0.0) {
        return f64::INFINITY;
    }
    let (imax, &grid_max) = mags
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid");
    let mut peak = grid_max;
    if imax > 0 && imax + 1 < w.len() {
        let (mut a, mut b) = (w[imax - 1].ln(), w[imax + 1].ln());
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let f = |x: f64| closed_loop(x.exp()).norm();
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..60 {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = f(d);
            }
        }
        peak = peak.max(fc).max(fd);
    }
    peak / dc
}

/// Closed-loop state matrix of the linearized loop (saturation and feedforward removed).
pub fn closed_loop_matrix(params: &MechanicalParams, gains: &ControlGains) -> DMatrix<f64> {
    let (jm, jl) = (params.motor_inertia, params.load_inertia);
    let (k, b) = (params.screw_stiffness, params.damping);
    let with_integrator = gains.kvi != 0.0;
    let n = if with_integrator { 5 } else { 4 };
    let mut a = DMatrix::zeros(n, n);
    // states: θm, ωm, θl, ωl, [z]; torque = kvp·(−kp·θl − ωl) + kvi·z
    a[(0, 1)] = 1.0;
    a[(2, 3)] = 1.0;
    a[(1, 0)] = -k / jm;
    a[(1, 1)] = -b / jm;
    a[(1, 2)] = (k - gains.kvp * gains.kp) / jm;
    a[(1, 3)] = (b - gains.kvp) / jm;
    a[(3, 0)] = k / jl;
    a[(3, 1)] = b / jl;
    a[(3, 2)] = -k / jl;
    a[(3, 3)] = -b / jl;
    if with_integrator {
        a[(1, 4)] = gains.kvi / jm;
        a[(4, 2)] = -gains.kp;
        a[(4, 3)] = -1.0;
    }
    a
}

/// True when no closed-loop pole lies in the open right half-plane.
pub fn closed_loop_stable(params: &MechanicalParams, gains: &ControlGains) -> bool {
    let eig = closed_loop_matrix(params, gains).complex_eigenvalues();
    let scale = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    eig.iter().all(|z| z.re <= 1e-9 * (1.0 + scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    #[serde(with = "crate::serde_inf")]
    pub gain_margin_db: f64,
    #[serde(with = "crate::serde_inf")]
    pub phase_margin_deg: f64,
    /// Relative closed-loop resonance peak; +∞ when the loop is unstable.
    #[serde(with = "crate::serde_inf")]
    pub resonance_peak: f64,
    pub gain_crossover: Option<f64>,
    pub phase_crossover: Option<f64>,
    pub stable: bool,
    pub feasible: bool,
}

/// Relative resonance peak and the closed-loop stability flag.
pub fn resonance_peak(params: &MechanicalParams, gains: &ControlGains, grid: &FrequencyGrid) -> (f64, bool) {
    if !closed_loop_stable(params, gains) {
        return (f64::INFINITY, false);
    }
    let mr = peak_ratio(|w| closed_loop_at(params, gains, Complex64::new(0.0, w)), grid);
    (mr, true)
}

pub fn analyze(params: &MechanicalParams, gains: &ControlGains, grid: &FrequencyGrid) -> StabilityReport {
    let response = loop_response(params, gains, grid);
    let m = margins(grid.omegas(), &response).expect("grid has at least two points");
    let (mr, stable) = resonance_peak(params, gains, grid);
    let mut report = StabilityReport {
        gain_margin_db: m.gain_margin_db,
        phase_margin_deg: m.phase_margin_deg,
        resonance_peak: mr,
        gain_crossover: m.gain_crossover,
        phase_crossover: m.phase_crossover,
        stable,
        feasible: false,
    };
    report.feasible = check_constraints(&report).feasible;
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityThresholds {
    pub min_gain_margin_db: f64,
    pub min_phase_margin_deg: f64,
    pub max_resonance_peak: f64,
}

impl Default for StabilityThresholds {
    fn default() -> Self {
        StabilityThresholds {
            min_gain_margin_db: MIN_GAIN_MARGIN_DB,
            min_phase_margin_deg: MIN_PHASE_MARGIN_DEG,
            max_resonance_peak: MAX_RESONANCE_PEAK,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub feasible: bool,
    /// Normalized shortfalls (gain margin, phase margin, resonance peak); zero when met.
    pub violations: [f64; 3],
}

impl ConstraintCheck {
    pub fn violated_count(&self) -> usize {
        self.violations.iter().filter(|v| **v > 0.0).count()
    }
}

pub fn check_constraints(report: &StabilityReport) -> ConstraintCheck {
    check_constraints_with(report, &StabilityThresholds::default())
}

/// Strict inequalities: a report sitting exactly on a threshold is infeasible.
pub fn check_constraints_with(report: &StabilityReport, limits: &StabilityThresholds) -> ConstraintCheck {
    let am = report.gain_margin_db;
    let pm = report.phase_margin_deg;
    let mr = report.resonance_peak;
    let violations = [
        ((limits.min_gain_margin_db - am) / limits.min_gain_margin_db).max(0.0),
        ((limits.min_phase_margin_deg - pm) / limits.min_phase_margin_deg).max(0.0),
        ((mr - limits.max_resonance_peak) / limits.max_resonance_peak).max(0.0),
    ];
    let feasible = report.stable
        && am > limits.min_gain_margin_db
        && pm > limits.min_phase_margin_deg
        && mr < limits.max_resonance_peak;
    ConstraintCheck {
        feasible,
        violations,
    }
}
