use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::Objective;
use crate::controller::ControlGains;
use crate::error::Error;
use crate::freq::{analyze, check_constraints, FrequencyGrid, StabilityReport};
use crate::metrics::PerformanceReport;
use crate::motion::CommandTrajectory;
use crate::plant::MechanicalParams;
use crate::sim::{simulate_performance, SimConfig};

/// Weight on the squared normalized constraint violations.
pub const PENALTY_WEIGHT: f64 = 1e4;
/// Base value returned for a simulation that blew up.
pub const DIVERGENCE_PENALTY: f64 = 1e6;
/// Extra penalty scale for blowing up early rather than late.
const BLOW_UP_TIME_PENALTY: f64 = 1e5;
/// Cap on each normalized violation so an unstable loop (infinite peak) stays finite.
const MAX_VIOLATION: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    Unconstrained,
    StabilityConstrained,
}

impl ConstraintMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConstraintMode::Unconstrained => "unconstrained",
            ConstraintMode::StabilityConstrained => "stability_constrained",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningScenario {
    pub params: MechanicalParams,
    pub trajectory: CommandTrajectory,
    pub sim: SimConfig,
    pub mode: ConstraintMode,
    pub grid: FrequencyGrid,
}

impl TuningScenario {
    pub fn new(
        params: MechanicalParams,
        trajectory: CommandTrajectory,
        sim: SimConfig,
        mode: ConstraintMode,
    ) -> Self {
        TuningScenario {
            params,
            trajectory,
            sim,
            mode,
            grid: FrequencyGrid::default(),
        }
    }

    /// Stable textual identity of everything that affects the objective, mode excluded.
    pub fn plant_id(&self) -> String {
        let p = &self.params;
        format!(
            "{}|K={:e}|Jm={:e}|Jl={:e}|B={:e}|R={:e}|T={:e}|dt={:e}|tail={:e}|enc={}|D={:e}|n={}",
            self.trajectory.label,
            p.screw_stiffness,
            p.motor_inertia,
            p.load_inertia,
            p.damping,
            p.drive_coeff,
            p.max_torque,
            self.sim.dt,
            self.sim.settle_tail,
            self.sim.encoder_counts_per_rev,
            self.sim.load_torque,
            self.trajectory.len(),
        )
    }

    pub fn id(&self) -> String {
        format!("{}|{}", self.plant_id(), self.mode.as_str())
    }
}

/// Everything known about one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub gains: ControlGains,
    /// Plain W, or the divergence penalty when the run blew up.
    pub w: f64,
    pub performance: Option<PerformanceReport>,
    pub diverged_at: Option<f64>,
    pub stability: StabilityReport,
    pub feasible: bool,
    /// Stability penalty this candidate carries in constrained mode.
    pub penalty: f64,
    /// Objective value under the scenario's constraint mode.
    pub objective: f64,
}

impl Evaluation {
    /// The constrained-mode objective, whatever mode produced this evaluation.
    pub fn penalized(&self) -> f64 {
        self.w + self.penalty
    }
}

fn divergence_value(time: f64, duration: f64) -> f64 {
    let early = if duration > 0.0 {
        (1.0 - time / duration).clamp(0.0, 1.0)
    } else {
        1.0
    };
    DIVERGENCE_PENALTY + BLOW_UP_TIME_PENALTY * early
}

fn penalty(stability: &StabilityReport) -> f64 {
    let check = check_constraints(stability);
    PENALTY_WEIGHT
        * check
            .violations
            .iter()
            .map(|v| {
                let v = v.min(MAX_VIOLATION);
                v * v
            })
            .sum::<f64>()
}

/// Full assessment of one gain vector: simulation, margins and both objective values.
pub fn assess(gains: &ControlGains, scenario: &TuningScenario) -> Evaluation {
    let duration = scenario.trajectory.duration() + scenario.sim.settle_tail;
    let (w, performance, diverged_at) =
        match simulate_performance(&scenario.params, gains, &scenario.trajectory, &scenario.sim) {
            Ok(report) => (report.w, Some(report), None),
            Err(Error::Diverged { time, .. }) => (divergence_value(time, duration), None, Some(time)),
            // Anything else means the inputs are unusable; treat like an immediate blow-up.
            Err(_) => (divergence_value(0.0, duration), None, Some(0.0)),
        };
    let stability = analyze(&scenario.params, gains, &scenario.grid);
    let feasible = stability.feasible && diverged_at.is_none();
    let penalty = penalty(&stability);
    let objective = match scenario.mode {
        ConstraintMode::Unconstrained => w,
        ConstraintMode::StabilityConstrained => w + penalty,
    };
    Evaluation {
        gains: *gains,
        w,
        performance,
        diverged_at,
        stability,
        feasible,
        penalty,
        objective,
    }
}

/// W, plus the quadratic stability penalty in constrained mode. Never fails.
pub fn penalized_objective(gains: &ControlGains, scenario: &TuningScenario) -> f64 {
    assess(gains, scenario).objective
}

/// Objective adapter over a scenario that keeps every evaluation it sees.
pub struct ScenarioObjective<'a> {
    scenario: &'a TuningScenario,
    archive: Option<Mutex<Vec<Evaluation>>>,
}

impl<'a> ScenarioObjective<'a> {
    pub fn new(scenario: &'a TuningScenario) -> Self {
        ScenarioObjective {
            scenario,
            archive: None,
        }
    }

    pub fn recording(scenario: &'a TuningScenario) -> Self {
        ScenarioObjective {
            scenario,
            archive: Some(Mutex::new(Vec::new())),
        }
    }

    pub fn scenario(&self) -> &TuningScenario {
        self.scenario
    }

    /// Recorded evaluations in a canonical order (by gain vector), independent of
    /// the order in which concurrent evaluations finished.
    pub fn into_archive(self) -> Vec<Evaluation> {
        let mut archive = self
            .archive
            .map(|m| m.into_inner().unwrap_or_else(|e| e.into_inner()))
            .unwrap_or_default();
        archive.sort_by(|a, b| {
            let (a, b) = (a.gains.to_array(), b.gains.to_array());
            a.iter()
                .zip(&b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        archive
    }
}

impl Objective for ScenarioObjective<'_> {
    fn evaluate(&self, x: &[f64]) -> f64 {
        let gains = ControlGains::from_slice(x);
        let evaluation = assess(&gains, self.scenario);
        let value = evaluation.objective;
        if let Some(archive) = &self.archive {
            archive
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .push(evaluation);
        }
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{plan, reciprocate};
    use crate::plant::KG_CM2;
    use proptest::prelude::*;

    fn scenario(mode: ConstraintMode) -> TuningScenario {
        let params = MechanicalParams::new(
            612.0,
            25.5 * KG_CM2,
            45.5 * KG_CM2,
            0.0288,
            10.0 / (2.0 * std::f64::consts::PI),
            28.75,
        )
        .unwrap();
        let profile = plan(200.0, 400.0, 5000.0).unwrap();
        let traj = reciprocate(&profile, 1, 0.2, 1e-4).unwrap();
        TuningScenario::new(params, traj, SimConfig::default(), mode)
    }

    #[test]
    fn unconstrained_value_is_plain_w() {
        let s = scenario(ConstraintMode::Unconstrained);
        let g = ControlGains::new(20.0, 0.5, 5.0, 1.0).unwrap();
        let e = assess(&g, &s);
        assert_eq!(e.objective, e.w);
        assert_eq!(e.w, e.performance.unwrap().w);
    }

    #[test]
    fn penalty_arithmetic() {
        let mut report = StabilityReport {
            gain_margin_db: 3.0,
            phase_margin_deg: 45.0,
            resonance_peak: 1.2,
            gain_crossover: Some(10.0),
            phase_crossover: Some(100.0),
            stable: true,
            feasible: false,
        };
        assert!((penalty(&report) - 2500.0).abs() < 1e-9);
        report.gain_margin_db = 10.0;
        report.feasible = true;
        assert_eq!(penalty(&report), 0.0);
        report.resonance_peak = f64::INFINITY;
        report.stable = false;
        assert_eq!(penalty(&report), PENALTY_WEIGHT * MAX_VIOLATION * MAX_VIOLATION);
    }

    #[test]
    fn divergence_value_is_large_and_prefers_late_blow_up() {
        assert!(divergence_value(0.0, 1.0) >= DIVERGENCE_PENALTY);
        assert!(divergence_value(0.9, 1.0) < divergence_value(0.1, 1.0));
        assert!(divergence_value(2.0, 1.0) >= DIVERGENCE_PENALTY);
    }

    #[test]
    fn scenario_ids_distinguish_mode() {
        let a = scenario(ConstraintMode::Unconstrained);
        let b = scenario(ConstraintMode::StabilityConstrained);
        assert_ne!(a.id(), b.id());
        assert_eq!(a.plant_id(), b.plant_id());
    }

    #[test]
    fn archive_records_every_call() {
        let s = scenario(ConstraintMode::StabilityConstrained);
        let obj = ScenarioObjective::recording(&s);
        let v1 = obj.evaluate(&[30.0, 1.0, 10.0, 1.0]);
        let v2 = obj.evaluate(&[10.0, 0.2, 1.0, 0.5]);
        let archive = obj.into_archive();
        assert_eq!(archive.len(), 2);
        assert_eq!(archive[0].gains.kp, 10.0);
        assert_eq!(archive[0].objective, v2);
        assert_eq!(archive[1].objective, v1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn constrained_never_below_unconstrained(kp in 0.1f64..500.0, kvp in 0.01f64..200.0,
                                                 kvi in 0.1f64..5000.0, kfv in 0.0f64..1.0) {
            let g = ControlGains::new(kp, kvp, kvi, kfv).unwrap();
            let free = assess(&g, &scenario(ConstraintMode::Unconstrained));
            let bound = assess(&g, &scenario(ConstraintMode::StabilityConstrained));
            prop_assert_eq!(free.w, bound.w);
            prop_assert!(bound.objective >= free.objective);
            if bound.feasible {
                prop_assert_eq!(bound.objective, free.objective);
            } else {
                let violated = check_constraints(&bound.stability).violated_count() > 0;
                prop_assert_eq!(bound.objective > free.objective, violated);
            }
        }
    }
}
