use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Algorithm, Objective, OptimizerResult, SearchSpace, Tracker};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IslandGaSettings {
    pub islands: usize,
    pub island_size: usize,
    pub tournament_size: usize,
    pub blend_alpha: f64,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    /// Mutation standard deviation as a fraction of each dimension's range.
    pub mutation_sigma: f64,
    /// Generations between migrations; 0 disables migration.
    pub migration_interval: usize,
    pub migrants: usize,
    pub elites: usize,
}

impl Default for IslandGaSettings {
    fn default() -> Self {
        IslandGaSettings {
            islands: 4,
            island_size: 20,
            tournament_size: 2,
            blend_alpha: 0.5,
            crossover_rate: 0.9,
            mutation_rate: 0.1,
            mutation_sigma: 0.1,
            migration_interval: 10,
            migrants: 2,
            elites: 1,
        }
    }
}

impl IslandGaSettings {
    pub fn validate(&self) -> Result<()> {
        if self.islands == 0 || self.island_size < 2 || self.tournament_size == 0 {
            return Err(Error::domain("need at least one island of two individuals"));
        }
        if self.elites >= self.island_size || self.migrants >= self.island_size {
            return Err(Error::domain("elites and migrants must be fewer than the island size"));
        }
        for (name, p) in [("crossover_rate", self.crossover_rate), ("mutation_rate", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::domain(format!("{name} must be a probability")));
            }
        }
        if !(self.blend_alpha >= 0.0 && self.mutation_sigma >= 0.0) {
            return Err(Error::domain("blend_alpha and mutation_sigma must be non-negative"));
        }
        Ok(())
    }

    pub fn population(&self) -> usize {
        self.islands * self.island_size
    }
}

#[derive(Clone)]
struct Individual {
    x: Vec<f64>,
    f: f64,
}

fn sort_island(island: &mut [Individual]) {
    island.sort_by(|a, b| a.f.total_cmp(&b.f));
}

fn tournament<'a>(island: &'a [Individual], size: usize, rng: &mut ChaCha8Rng) -> &'a Individual {
    let mut best = &island[rng.random_range(0..island.len())];
    for _ in 1..size {
        let other = &island[rng.random_range(0..island.len())];
        if other.f < best.f {
            best = other;
        }
    }
    best
}

fn offspring(
    island: &[Individual],
    space: &SearchSpace,
    s: &IslandGaSettings,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let a = tournament(island, s.tournament_size, rng);
    let b = tournament(island, s.tournament_size, rng);
    let mut child = a.x.clone();
    if rng.random_bool(s.crossover_rate) {
        for (d, c) in child.iter_mut().enumerate() {
            let (lo, hi) = (a.x[d].min(b.x[d]), a.x[d].max(b.x[d]));
            let spread = s.blend_alpha * (hi - lo);
            let v = if spread > 0.0 || hi > lo {
                rng.random_range(lo - spread..=hi + spread)
            } else {
                lo
            };
            *c = space.clip(d, v);
        }
    }
    for (d, c) in child.iter_mut().enumerate() {
        if rng.random_bool(s.mutation_rate) {
            let z: f64 = rng.sample(StandardNormal);
            *c = space.clip(d, *c + z * s.mutation_sigma * space.range(d));
        }
    }
    child
}

pub fn island_ga_search<O: Objective + ?Sized>(
    objective: &O,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    settings: &IslandGaSettings,
) -> Result<OptimizerResult> {
    settings.validate()?;
    let total = settings.population();
    if budget < total {
        return Err(Error::domain(format!("budget {budget} is below the population of {total}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tracker = Tracker::new(objective, space, budget);
    // the search itself runs in encoded (partly logarithmic) coordinates
    let encoded = space.encoded();
    let space = &encoded;

    let mut initial: Vec<Vec<f64>> = (0..total).map(|_| space.sample(&mut rng)).collect();
    let values = tracker.evaluate_batch(&mut initial);
    let mut islands: Vec<Vec<Individual>> = initial
        .into_iter()
        .zip(values)
        .map(|(x, f)| Individual { x, f })
        .collect::<Vec<_>>()
        .chunks(settings.island_size)
        .map(|c| {
            let mut island = c.to_vec();
            sort_island(&mut island);
            island
        })
        .collect();
    tracker.end_generation();

    let children_per_island = settings.island_size - settings.elites;
    let mut generation = 0usize;
    while tracker.remaining() > 0 {
        let mut children: Vec<Vec<f64>> = Vec::with_capacity(settings.islands * children_per_island);
        for island in &islands {
            for _ in 0..children_per_island {
                children.push(offspring(island, space, settings, &mut rng));
            }
        }
        let values = tracker.evaluate_batch(&mut children);
        let mut evaluated = children.into_iter().zip(values);
        for island in islands.iter_mut() {
            // islands are sorted, so the first `elites` are the best
            let mut next: Vec<Individual> = island[..settings.elites].to_vec();
            next.extend(
                evaluated
                    .by_ref()
                    .take(children_per_island)
                    .map(|(x, f)| Individual { x, f }),
            );
            // a truncated final batch leaves the island topped up from its old members
            next.extend(island[settings.elites..].iter().take(settings.island_size - next.len()).cloned());
            sort_island(&mut next);
            *island = next;
        }
        generation += 1;

        if generation.is_multiple_of(settings.migration_interval) && islands.len() > 1 {
            let emigrants: Vec<Vec<Individual>> = islands
                .iter()
                .map(|island| island[..settings.migrants].to_vec())
                .collect();
            let count = islands.len();
            for (i, group) in emigrants.into_iter().enumerate() {
                let target = &mut islands[(i + 1) % count];
                let len = target.len();
                for (slot, migrant) in target[len - settings.migrants..].iter_mut().zip(group) {
                    *slot = migrant;
                }
                sort_island(target);
            }
        }
        tracker.end_generation();
    }
    Ok(tracker.finish(Algorithm::IslandGa, seed))
}
