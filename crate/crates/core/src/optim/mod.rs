//! Gain tuning: bounded black-box minimisation with two independent
//! metaheuristics whose results are checked against each other.

mod fireworks;
mod island_ga;
mod scenario;

pub use fireworks::{fireworks_search, FireworksSettings};
pub use island_ga::{island_ga_search, IslandGaSettings};
pub use scenario::{
    assess, penalized_objective, ConstraintMode, Evaluation, ScenarioObjective, TuningScenario,
    DIVERGENCE_PENALTY, PENALTY_WEIGHT,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::ControlGains;
use crate::error::{Error, Result};

/// Something to minimise over a box.
pub trait Objective: Sync {
    fn evaluate(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> Objective for F {
    fn evaluate(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Per-dimension bounds of the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Dimensions searched in log10 coordinates (bounds must be positive).
    #[serde(default)]
    pub log_scale: Vec<bool>,
}

impl SearchSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::domain("bounds must be non-empty and equally long"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::domain("every lower bound must be below its upper bound"));
        }
        let log_scale = vec![false; lower.len()];
        Ok(SearchSpace {
            lower,
            upper,
            log_scale,
        })
    }

    /// Marks dimensions to be searched logarithmically.
    pub fn with_log_scale(mut self, log_scale: Vec<bool>) -> Result<Self> {
        if log_scale.len() != self.dim() {
            return Err(Error::domain("log_scale needs one flag per dimension"));
        }
        if log_scale.iter().zip(&self.lower).any(|(log, l)| *log && *l <= 0.0) {
            return Err(Error::domain("log-scaled dimensions need positive bounds"));
        }
        self.log_scale = log_scale;
        Ok(self)
    }

    /// Default box for `[kp, kvp, kvi, kfv]`; the three loop gains span decades
    /// and are searched on a log scale.
    pub fn gains() -> Self {
        SearchSpace::new(vec![0.1, 0.01, 0.1, 0.0], vec![500.0, 200.0, 5000.0, 1.0])
            .and_then(|s| s.with_log_scale(vec![true, true, true, false]))
            .expect("default gain bounds are valid")
    }

    fn is_log(&self, d: usize) -> bool {
        self.log_scale.get(d).copied().unwrap_or(false)
    }

    /// The box the optimizers actually move in.
    pub(crate) fn encoded(&self) -> SearchSpace {
        let map = |d: usize, v: f64| if self.is_log(d) { v.log10() } else { v };
        SearchSpace {
            lower: (0..self.dim()).map(|d| map(d, self.lower[d])).collect(),
            upper: (0..self.dim()).map(|d| map(d, self.upper[d])).collect(),
            log_scale: vec![false; self.dim()],
        }
    }

    /// Maps an encoded point back to gain units, inside the bounds.
    pub(crate) fn decode(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(d, &v)| {
                let v = if self.is_log(d) { 10f64.powf(v) } else { v };
                self.clip(d, v)
            })
            .collect()
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        SearchSpace::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn range(&self, d: usize) -> f64 {
        self.upper[d] - self.lower[d]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub(crate) fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.dim()).map(|d| self.draw(d, rng)).collect()
    }

    pub(crate) fn draw(&self, d: usize, rng: &mut ChaCha8Rng) -> f64 {
        rng.random_range(self.lower[d]..=self.upper[d])
    }

    pub(crate) fn clip(&self, d: usize, v: f64) -> f64 {
        v.clamp(self.lower[d], self.upper[d])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Fireworks,
    IslandGa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerResult {
    pub algorithm: Algorithm,
    pub best_x: Vec<f64>,
    pub best_value: f64,
    pub evaluations_used: usize,
    /// Best value so far after each generation.
    pub history: Vec<f64>,
    pub seed: u64,
    /// Identifies what was optimised; results are only comparable when equal.
    pub scenario_id: String,
}

impl OptimizerResult {
    pub fn best_gains(&self) -> ControlGains {
        ControlGains::from_slice(&self.best_x)
    }
}

/// Shared bookkeeping: budget accounting, best-so-far and history.
pub(crate) struct Tracker<'a, O: Objective + ?Sized> {
    objective: &'a O,
    space: &'a SearchSpace,
    budget: usize,
    used: usize,
    best_x: Vec<f64>,
    best_value: f64,
    history: Vec<f64>,
}

impl<'a, O: Objective + ?Sized> Tracker<'a, O> {
    pub(crate) fn new(objective: &'a O, space: &'a SearchSpace, budget: usize) -> Self {
        Tracker {
            objective,
            space,
            budget,
            used: 0,
            best_x: Vec::new(),
            best_value: f64::INFINITY,
            history: Vec::new(),
        }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.budget - self.used
    }

    /// Evaluates as many of the encoded points `zs` as the budget allows; returns
    /// the values of those evaluated.
    pub(crate) fn evaluate_batch(&mut self, zs: &mut Vec<Vec<f64>>) -> Vec<f64> {
        zs.truncate(self.remaining());
        let xs: Vec<Vec<f64>> = zs.iter().map(|z| self.space.decode(z)).collect();
        let values: Vec<f64> = {
            use rayon::prelude::*;
            let objective = self.objective;
            xs.par_iter().map(|x| sanitize(objective.evaluate(x))).collect()
        };
        self.used += xs.len();
        for (x, &v) in xs.into_iter().zip(&values) {
            // strict improvement keeps the earliest of equal candidates
            if v < self.best_value {
                self.best_value = v;
                self.best_x = x;
            }
        }
        values
    }

    pub(crate) fn end_generation(&mut self) {
        self.history.push(self.best_value);
    }

    pub(crate) fn finish(self, algorithm: Algorithm, seed: u64) -> OptimizerResult {
        OptimizerResult {
            algorithm,
            best_x: self.best_x,
            best_value: self.best_value,
            evaluations_used: self.used,
            history: self.history,
            seed,
            scenario_id: String::new(),
        }
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Search box and algorithm constants used when tuning a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerSettings {
    pub space: SearchSpace,
    pub fireworks: FireworksSettings,
    pub island_ga: IslandGaSettings,
}

impl Default for TunerSettings {
    fn default() -> Self {
        TunerSettings {
            space: SearchSpace::gains(),
            fireworks: FireworksSettings::default(),
            island_ga: IslandGaSettings::default(),
        }
    }
}

/// A search result together with the full assessment of its best gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuned {
    pub result: OptimizerResult,
    pub best: Evaluation,
}

/// Runs one algorithm on a scenario through `objective`, which may be recording.
pub fn tune_with(
    objective: &ScenarioObjective<'_>,
    algorithm: Algorithm,
    budget: usize,
    seed: u64,
    settings: &TunerSettings,
) -> Result<Tuned> {
    let mut result = match algorithm {
        Algorithm::Fireworks => fireworks_search(objective, &settings.space, budget, seed, &settings.fireworks)?,
        Algorithm::IslandGa => island_ga_search(objective, &settings.space, budget, seed, &settings.island_ga)?,
    };
    result.scenario_id = objective.scenario().id();
    let best = assess(&result.best_gains(), objective.scenario());
    Ok(Tuned { result, best })
}

pub fn tune(scenario: &TuningScenario, algorithm: Algorithm, budget: usize, seed: u64, settings: &TunerSettings) -> Result<Tuned> {
    tune_with(&ScenarioObjective::new(scenario), algorithm, budget, seed, settings)
}

/// Outcome of comparing the two optimizers on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub agree: bool,
    pub relative_gap: f64,
    pub tolerance: f64,
    pub fireworks_value: f64,
    pub fireworks_x: Vec<f64>,
    pub island_ga_value: f64,
    pub island_ga_x: Vec<f64>,
    /// The better of the two.
    pub consensus: Algorithm,
    pub consensus_value: f64,
    pub consensus_x: Vec<f64>,
}

pub const CROSS_VALIDATION_TOLERANCE: f64 = 0.05;

pub fn cross_validate(fwa: &OptimizerResult, ga: &OptimizerResult, tolerance: f64) -> Result<CrossValidation> {
    if fwa.scenario_id != ga.scenario_id {
        return Err(Error::domain(format!(
            "results come from different scenarios ({:?} vs {:?})",
            fwa.scenario_id, ga.scenario_id
        )));
    }
    let (a, b) = (fwa.best_value, ga.best_value);
    let gap = (a - b).abs() / a.min(b).max(1e-9);
    let gap = if gap.is_nan() { 0.0 } else { gap };
    let fwa_wins = a <= b;
    let winner = if fwa_wins { fwa } else { ga };
    Ok(CrossValidation {
        agree: gap <= tolerance,
        relative_gap: gap,
        tolerance,
        fireworks_value: a,
        fireworks_x: fwa.best_x.clone(),
        island_ga_value: b,
        island_ga_x: ga.best_x.clone(),
        consensus: winner.algorithm,
        consensus_value: winner.best_value,
        consensus_x: winner.best_x.clone(),
    })
}

#[cfg(test)]
pub(crate) mod benchmarks {
    pub fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    pub fn rastrigin(x: &[f64]) -> f64 {
        10.0 * x.len() as f64
            + x.iter()
                .map(|v| v * v - 10.0 * (2.0 * std::f64::consts::PI * v).cos())
                .sum::<f64>()
    }
}
