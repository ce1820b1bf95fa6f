//! Tracking-performance evaluation of a closed-loop trace.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Trace, TraceSample};

/// Weights of the combined score.
pub const WEIGHT_POSITION: f64 = 0.5;
pub const WEIGHT_VELOCITY: f64 = 0.25;
pub const WEIGHT_FLUCTUATION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    /// Largest absolute following error, mm.
    pub max_err_p: f64,
    /// Largest absolute velocity error, mm/s.
    pub max_err_v: f64,
    /// Population variance of the velocity error, (mm/s)².
    pub vars_v: f64,
    /// Weighted score; the units are deliberately mixed.
    #[serde(rename = "W")]
    pub w: f64,
}

impl PerformanceReport {
    pub fn from_terms(max_err_p: f64, max_err_v: f64, vars_v: f64) -> Self {
        PerformanceReport {
            max_err_p,
            max_err_v,
            vars_v,
            w: WEIGHT_POSITION * max_err_p + WEIGHT_VELOCITY * max_err_v + WEIGHT_FLUCTUATION * vars_v,
        }
    }

    pub const PERFECT: PerformanceReport = PerformanceReport {
        max_err_p: 0.0,
        max_err_v: 0.0,
        vars_v: 0.0,
        w: 0.0,
    };
}

/// Streaming maxima and Welford variance; shared by trace and in-loop evaluation
/// so both produce bit-identical reports.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    count: u64,
    max_err_p: f64,
    max_err_v: f64,
    mean_v: f64,
    m2_v: f64,
}

impl MetricsAccumulator {
    pub fn push_errors(&mut self, err_p: f64, err_v: f64) {
        self.count += 1;
        self.max_err_p = self.max_err_p.max(err_p.abs());
        self.max_err_v = self.max_err_v.max(err_v.abs());
        let delta = err_v - self.mean_v;
        self.mean_v += delta / self.count as f64;
        self.m2_v += delta * (err_v - self.mean_v);
    }

    pub fn push(&mut self, sample: &TraceSample) {
        self.push_errors(
            sample.pos_cmd - sample.pos_actual,
            sample.vel_cmd - sample.vel_actual,
        );
    }

    pub fn finish(&self) -> Result<PerformanceReport> {
        if self.count == 0 {
            return Err(Error::domain("cannot evaluate an empty trace"));
        }
        let vars_v = (self.m2_v / self.count as f64).max(0.0);
        Ok(PerformanceReport::from_terms(self.max_err_p, self.max_err_v, vars_v))
    }
}

pub fn evaluate(trace: &Trace) -> Result<PerformanceReport> {
    let mut acc = MetricsAccumulator::default();
    trace.samples.iter().for_each(|s| acc.push(s));
    acc.finish()
}

/// Lower score first; ties broken on following error.
pub fn compare(a: &PerformanceReport, b: &PerformanceReport) -> Ordering {
    a.w.total_cmp(&b.w).then(a.max_err_p.total_cmp(&b.max_err_p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::TraceMeta;
    use proptest::prelude::*;

    fn trace_from(errors: &[(f64, f64)]) -> Trace {
        let samples = errors
            .iter()
            .enumerate()
            .map(|(k, &(ep, ev))| TraceSample {
                t: k as f64 * 1e-3,
                pos_cmd: 10.0 + k as f64,
                vel_cmd: 50.0,
                pos_actual: 10.0 + k as f64 - ep,
                vel_actual: 50.0 - ev,
                ..TraceSample::default()
            })
            .collect();
        Trace {
            dt: 1e-3,
            samples,
            meta: TraceMeta::default(),
            final_state: Default::default(),
        }
    }

    #[test]
    fn perfect_tracking_scores_zero() {
        let r = evaluate(&trace_from(&[(0.0, 0.0); 50])).unwrap();
        assert_eq!(r, PerformanceReport::PERFECT);
    }

    #[test]
    fn formula_arithmetic() {
        let r = PerformanceReport::from_terms(2.0, 4.0, 4.0);
        assert_eq!(r.w, 3.0);
    }

    #[test]
    fn constant_velocity_offset() {
        let errs: Vec<_> = (0..100).map(|k| (0.01 * k as f64, -3.0)).collect();
        let r = evaluate(&trace_from(&errs)).unwrap();
        assert!((r.max_err_v - 3.0).abs() < 1e-12);
        assert!(r.vars_v.abs() < 1e-12);
        assert!((r.max_err_p - 0.99).abs() < 1e-9);
    }

    #[test]
    fn empty_trace_is_an_error() {
        assert!(evaluate(&trace_from(&[])).is_err());
    }

    #[test]
    fn ordering() {
        let a = PerformanceReport::from_terms(0.0, 0.0, 4.0);
        let b = PerformanceReport::from_terms(0.0, 0.0, 8.0);
        assert_eq!(compare(&a, &b), Ordering::Less);
        let c = PerformanceReport { max_err_p: 0.1, max_err_v: 0.0, vars_v: 0.0, w: 1.0 };
        let d = PerformanceReport { max_err_p: 0.2, max_err_v: 0.0, vars_v: 0.0, w: 1.0 };
        assert_eq!(compare(&c, &d), Ordering::Less);
        assert_eq!(compare(&c, &c), Ordering::Equal);
    }

    proptest! {
        #[test]
        fn matches_two_pass_definition(errs in prop::collection::vec((-5.0f64..5.0, -50.0f64..50.0), 1..300)) {
            let r = evaluate(&trace_from(&errs)).unwrap();
            let n = errs.len() as f64;
            let max_p = errs.iter().map(|e| e.0.abs()).fold(0.0, f64::max);
            let max_v = errs.iter().map(|e| e.1.abs()).fold(0.0, f64::max);
            let mean = errs.iter().map(|e| e.1).sum::<f64>() / n;
            let var = errs.iter().map(|e| (e.1 - mean).powi(2)).sum::<f64>() / n;
            // pos_actual is reconstructed through an addition, so allow rounding there.
            prop_assert!((r.max_err_p - max_p).abs() < 1e-9);
            prop_assert!((r.max_err_v - max_v).abs() < 1e-9);
            prop_assert!((r.vars_v - var).abs() <= 1e-9 * (1.0 + var));
            prop_assert_eq!(r.w, 0.5 * r.max_err_p + 0.25 * r.max_err_v + 0.25 * r.vars_v);
            prop_assert!(r.max_err_p >= 0.0 && r.max_err_v >= 0.0 && r.vars_v >= 0.0);
        }

        #[test]
        fn time_reversal_invariant(errs in prop::collection::vec((-5.0f64..5.0, -50.0f64..50.0), 1..200)) {
            let fwd = evaluate(&trace_from(&errs)).unwrap();
            let rev: Vec<_> = errs.iter().rev().copied().collect();
            let back = evaluate(&trace_from(&rev)).unwrap();
            prop_assert!((fwd.w - back.w).abs() <= 1e-9 * (1.0 + fwd.w));
            prop_assert_eq!(evaluate(&trace_from(&errs)).unwrap(), fwd);
        }

        #[test]
        fn dominated_errors_never_raise_maxima(errs in prop::collection::vec((-5.0f64..5.0, -50.0f64..50.0), 1..200),
                                               shrink in 0.0f64..1.0) {
            let small: Vec<_> = errs.iter().map(|&(p, v)| (p * shrink, v * shrink)).collect();
            let a = evaluate(&trace_from(&errs)).unwrap();
            let b = evaluate(&trace_from(&small)).unwrap();
            prop_assert!(b.max_err_p <= a.max_err_p + 1e-9);
            prop_assert!(b.max_err_v <= a.max_err_v + 1e-9);
        }
    }
}
