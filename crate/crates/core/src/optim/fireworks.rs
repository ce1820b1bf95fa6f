use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Algorithm, Objective, OptimizerResult, SearchSpace, Tracker};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FireworksSettings {
    pub fireworks: usize,
    /// Explosion sparks shared out per generation before clamping.
    pub total_sparks: usize,
    pub min_sparks: usize,
    pub max_sparks: usize,
    /// Largest explosion amplitude as a fraction of each dimension's range.
    pub max_amplitude: f64,
    /// Amplitude floor at the start and end of the budget, fraction of range.
    pub initial_min_amplitude: f64,
    pub final_min_amplitude: f64,
    pub gaussian_sparks: usize,
    /// Allocate sparks and amplitudes from fitness ranks instead of raw values,
    /// so a single huge penalty cannot flatten every other amplitude to the floor.
    pub rank_fitness: bool,
}

impl Default for FireworksSettings {
    fn default() -> Self {
        FireworksSettings {
            fireworks: 5,
            total_sparks: 50,
            min_sparks: 2,
            max_sparks: 20,
            max_amplitude: 0.8,
            initial_min_amplitude: 0.05,
            final_min_amplitude: 0.001,
            gaussian_sparks: 5,
            rank_fitness: true,
        }
    }
}

impl FireworksSettings {
    pub fn validate(&self) -> Result<()> {
        if self.fireworks == 0 || self.min_sparks == 0 || self.min_sparks > self.max_sparks {
            return Err(Error::domain("fireworks and spark counts must be positive and ordered"));
        }
        let fractions = [self.max_amplitude, self.initial_min_amplitude, self.final_min_amplitude];
        if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0 && *f <= 1.0)) {
            return Err(Error::domain("amplitudes must be fractions in (0, 1]"));
        }
        Ok(())
    }
}

const TINY: f64 = f64::EPSILON;

/// Minimum amplitude, shrinking non-linearly as the budget is spent.
fn amplitude_floor(s: &FireworksSettings, used: usize, budget: usize) -> f64 {
    let (e, emax) = (used as f64, budget as f64);
    let progress = ((2.0 * emax - e) * e).max(0.0).sqrt() / emax;
    s.initial_min_amplitude - (s.initial_min_amplitude - s.final_min_amplitude) * progress
}

fn redraw_if_outside(space: &SearchSpace, d: usize, v: f64, rng: &mut ChaCha8Rng) -> f64 {
    if v < space.lower[d] || v > space.upper[d] || !v.is_finite() {
        space.draw(d, rng)
    } else {
        v
    }
}

/// Dimensions to perturb: each with probability 1/2, at least one.
fn pick_dims(dim: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let dims: Vec<usize> = (0..dim).filter(|_| rng.random_bool(0.5)).collect();
    if dims.is_empty() {
        vec![rng.random_range(0..dim)]
    } else {
        dims
    }
}

pub fn fireworks_search<O: Objective + ?Sized>(
    objective: &O,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    settings: &FireworksSettings,
) -> Result<OptimizerResult> {
    settings.validate()?;
    let n = settings.fireworks;
    if budget < n {
        return Err(Error::domain(format!("budget {budget} is below the population of {n}")));
    }
    let dim = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tracker = Tracker::new(objective, space, budget);
    // the search itself runs in encoded (partly logarithmic) coordinates
    let encoded = space.encoded();
    let space = &encoded;

    let mut positions: Vec<Vec<f64>> = (0..n).map(|_| space.sample(&mut rng)).collect();
    let mut fitness = tracker.evaluate_batch(&mut positions);
    tracker.end_generation();

    while tracker.remaining() > 0 {
        let score: Vec<f64> = if settings.rank_fitness {
            fitness
                .iter()
                .map(|f| fitness.iter().filter(|g| *g < f).count() as f64)
                .collect()
        } else {
            fitness.clone()
        };
        let fmin = score.iter().copied().fold(f64::INFINITY, f64::min);
        let fmax = score.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let worse_sum: f64 = score.iter().map(|f| fmax - f + TINY).sum();
        let better_sum: f64 = score.iter().map(|f| f - fmin + TINY).sum();
        let floor = amplitude_floor(settings, budget - tracker.remaining(), budget);

        let mut candidates: Vec<Vec<f64>> = Vec::new();
        for (x, f) in positions.iter().zip(&score) {
            let share = (fmax - f + TINY) / worse_sum;
            let count = ((settings.total_sparks as f64 * share).round() as usize)
                .clamp(settings.min_sparks, settings.max_sparks);
            let amplitude = (settings.max_amplitude * (f - fmin + TINY) / better_sum).max(floor);
            for _ in 0..count {
                let mut spark = x.clone();
                for d in pick_dims(dim, &mut rng) {
                    let offset = amplitude * space.range(d) * rng.random_range(-1.0..=1.0);
                    spark[d] = redraw_if_outside(space, d, spark[d] + offset, &mut rng);
                }
                candidates.push(spark);
            }
        }

        let best = &positions[fitness
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)];
        for _ in 0..settings.gaussian_sparks {
            let x = &positions[rng.random_range(0..n)];
            let mut spark = x.clone();
            let e: f64 = rng.sample(StandardNormal);
            for d in pick_dims(dim, &mut rng) {
                let v = x[d] + (best[d] - x[d]) * e;
                spark[d] = redraw_if_outside(space, d, v, &mut rng);
            }
            candidates.push(spark);
        }

        let values = tracker.evaluate_batch(&mut candidates);

        // Elitist selection: keep the best overall, fill the rest at random.
        let mut pool_x = std::mem::take(&mut positions);
        pool_x.extend(candidates);
        let mut pool_f = std::mem::take(&mut fitness);
        pool_f.extend(values);
        let best_index = pool_f
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let others: Vec<usize> = (0..pool_x.len()).filter(|&i| i != best_index).collect();
        let fill = (n - 1).min(others.len());
        let chosen = std::iter::once(best_index)
            .chain(sample_indices(&mut rng, others.len(), fill).into_iter().map(|k| others[k]));
        for i in chosen {
            positions.push(pool_x[i].clone());
            fitness.push(pool_f[i]);
        }
        tracker.end_generation();
    }
    Ok(tracker.finish(Algorithm::Fireworks, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::benchmarks::sphere;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    fn space() -> SearchSpace {
        SearchSpace::uniform(4, -5.0, 5.0).unwrap()
    }

    #[test]
    fn solves_sphere() {
        for seed in 0..3 {
            let r = fireworks_search(&sphere, &space(), 5000, seed, &FireworksSettings::default()).unwrap();
            assert!(r.best_value < 1e-2, "seed {seed}: {}", r.best_value);
            assert_eq!(r.evaluations_used, 5000);
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let s = FireworksSettings::default();
        let a = fireworks_search(&sphere, &space(), 700, 42, &s).unwrap();
        let b = fireworks_search(&sphere, &space(), 700, 42, &s).unwrap();
        assert_eq!(a, b);
        let c = fireworks_search(&sphere, &space(), 700, 43, &s).unwrap();
        assert_ne!(a.best_x, c.best_x);
    }

    #[test]
    fn budget_is_exact() {
        let calls = AtomicUsize::new(0);
        let counted = |x: &[f64]| {
            calls.fetch_add(1, Ordering::Relaxed);
            sphere(x)
        };
        for budget in [5, 7, 30, 61, 1234] {
            calls.store(0, Ordering::Relaxed);
            let r = fireworks_search(&counted, &space(), budget, 1, &FireworksSettings::default()).unwrap();
            assert_eq!(r.evaluations_used, budget);
            assert_eq!(calls.load(Ordering::Relaxed), budget);
        }
        assert!(fireworks_search(&sphere, &space(), 4, 1, &FireworksSettings::default()).is_err());
    }

    #[test]
    fn candidates_stay_in_bounds_and_history_never_rises() {
        let bounds = SearchSpace::new(vec![-1.0, 0.0, 2.0], vec![1.0, 0.5, 3.0]).unwrap();
        let seen = Mutex::new(Vec::new());
        let f = |x: &[f64]| {
            seen.lock().unwrap().push(x.to_vec());
            // optimum outside the box pushes sparks against the bounds
            x.iter().map(|v| (v - 10.0).powi(2)).sum::<f64>()
        };
        let r = fireworks_search(&f, &bounds, 2000, 9, &FireworksSettings::default()).unwrap();
        assert!(seen.lock().unwrap().iter().all(|x| bounds.contains(x)));
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn floor_decreases_over_budget() {
        let s = FireworksSettings::default();
        assert!((amplitude_floor(&s, 0, 100) - 0.05).abs() < 1e-12);
        assert!((amplitude_floor(&s, 100, 100) - 0.001).abs() < 1e-12);
        assert!(amplitude_floor(&s, 30, 100) > amplitude_floor(&s, 60, 100));
    }
}
