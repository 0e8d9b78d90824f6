//! Independent runs over many seeds.
//!
//! Each seed builds and runs its own scenario, so runs share nothing and the
//! results come back in seed order whichever executor is used. With the
//! `parallel` feature the seeds fan out over the rayon pool.

use crate::config::ScenarioConfig;
use crate::engine::{Architecture, RunLog, Scenario};
use crate::error::SimError;
use crate::metrics::{compare, score, ComparisonReport, Metrics};

/// Maps `f` over `seeds` on the calling thread.
pub fn map_seeds_sequential<T, F>(seeds: &[u64], f: F) -> Vec<T>
where
    F: Fn(u64) -> T,
{
    seeds.iter().map(|&s| f(s)).collect()
}

/// Maps `f` over `seeds`, in parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub fn map_seeds<T, F>(seeds: &[u64], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    use rayon::prelude::*;
    seeds.par_iter().map(|&s| f(s)).collect()
}

/// Maps `f` over `seeds`, in parallel when the `parallel` feature is on.
#[cfg(not(feature = "parallel"))]
pub fn map_seeds<T, F>(seeds: &[u64], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    map_seeds_sequential(seeds, f)
}

pub fn run_seed(config: &ScenarioConfig, seed: u64, arch: Architecture) -> Result<RunLog, SimError> {
    Scenario::build(&config.with_seed(seed))?.run(arch)
}

/// Scored HOD run, flat run and their comparison for one seed.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub hod: Metrics,
    pub flat: Metrics,
    pub comparison: ComparisonReport,
}

pub fn compare_seed(config: &ScenarioConfig, seed: u64) -> Result<SeedOutcome, SimError> {
    let sc = Scenario::build(&config.with_seed(seed))?;
    let hod = score(&sc.run(Architecture::Hod)?).expect("engine logs carry ground truth");
    let flat = score(&sc.run(Architecture::Flat)?).expect("engine logs carry ground truth");
    let comparison = compare(&hod, &flat, config.baseline.detection_tolerance).expect("same scenario");
    Ok(SeedOutcome { seed, hod, flat, comparison })
}

/// Scores one architecture for every seed.
pub fn score_seeds(config: &ScenarioConfig, seeds: &[u64], arch: Architecture) -> Result<Vec<Metrics>, SimError> {
    map_seeds(seeds, |s| run_seed(config, s, arch).map(|log| score(&log).expect("engine logs carry ground truth")))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn executors_agree() {
        let mut c = ScenarioConfig::default();
        c.topology.rings = 1;
        c.topology.sensors_per_cell = 3;
        c.workload.windows = 4;
        let seeds: Vec<u64> = (0..6).collect();
        let f = |s| score(&run_seed(&c, s, Architecture::Hod).unwrap()).unwrap();
        assert_eq!(map_seeds(&seeds, f), map_seeds_sequential(&seeds, f));
    }
}
