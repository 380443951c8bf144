use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ScenarioConfig;
use crate::error::{Error, Result};
use crate::executor::{run_episode, EpisodeRecord, NRule};
use crate::ikinqp::{Corrector, QpCorrector};
use crate::sim::SimEnv;

/// Seed for episode `index`: a SplitMix64 step from the experiment seed, so
/// every episode's randomness is independent of scheduling.
pub fn episode_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub corrector_enabled: bool,
    pub episodes: usize,
    pub seed: u64,
    /// Collision buffer the run was configured with (m).
    pub buffer_m: f64,
    /// Percent of episodes that ended in contact.
    pub collision_rate: f64,
    pub success_rate: f64,
    pub collisions: usize,
    pub successes: usize,
    /// Episodes whose clearance dipped under the buffer at any substep.
    pub buffer_violations: usize,
    pub failed_episodes: usize,
    #[serde(with = "crate::executor::infinite_as_null")]
    pub min_proximity_overall: f64,
    /// Mean simulated episode length (s).
    pub mean_episode_time: f64,
    pub mean_corrector_time: f64,
    pub records: Vec<EpisodeRecord>,
}

/// Runs `config.episodes` episodes on up to `jobs` threads. Results do not
/// depend on `jobs`.
pub fn run_experiment(config: &ScenarioConfig, jobs: usize) -> Result<ExperimentSummary> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    let records: Vec<EpisodeRecord> = pool.install(|| {
        (0..config.episodes)
            .into_par_iter()
            .map(|i| {
                one_episode(config, i).unwrap_or_else(|e| EpisodeRecord::failed(i, &e))
            })
            .collect()
    });
    Ok(summarize(config, records))
}

fn one_episode(config: &ScenarioConfig, index: usize) -> Result<EpisodeRecord> {
    let seed = episode_seed(config.seed, index);
    let mut env = SimEnv::new(
        config.model.clone(),
        config.scene.clone(),
        config.start_pose.clone(),
        config.env.clone(),
    )?;
    env.reset(seed)?;
    let mut policy = config.make_policy(seed)?;
    let mut corrector = QpCorrector::new(config.model.clone(), config.scene.clone(), config.corrector.clone())?;
    let corrector: Option<&mut dyn Corrector> = if config.corrector_enabled { Some(&mut corrector) } else { None };
    Ok(run_episode(index, policy.as_mut(), &mut env, corrector, &config.failsafe, &config.executor))
}

/// Folds per-episode records (in episode order) into a summary.
pub fn summarize(config: &ScenarioConfig, records: Vec<EpisodeRecord>) -> ExperimentSummary {
    let n = records.len().max(1) as f64;
    let buffer = config.corrector.d_coll_buff;
    let collisions = records.iter().filter(|r| r.collided).count();
    let successes = records.iter().filter(|r| r.success).count();
    let calls: usize = records.iter().map(|r| r.corrector_calls).sum();
    let corrector_time: f64 = records.iter().map(|r| r.mean_corrector_time * r.corrector_calls as f64).sum();
    ExperimentSummary {
        name: config.name.clone(),
        corrector_enabled: config.corrector_enabled,
        episodes: records.len(),
        seed: config.seed,
        buffer_m: buffer,
        collision_rate: 100.0 * collisions as f64 / n,
        success_rate: 100.0 * successes as f64 / n,
        collisions,
        successes,
        buffer_violations: records.iter().filter(|r| r.min_proximity < buffer).count(),
        failed_episodes: records.iter().filter(|r| r.error.is_some()).count(),
        min_proximity_overall: records.iter().map(|r| r.min_proximity).fold(f64::INFINITY, f64::min),
        mean_episode_time: records.iter().map(|r| r.wall_time).sum::<f64>() / n,
        mean_corrector_time: if calls > 0 { corrector_time / calls as f64 } else { 0.0 },
        records,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub collision_rate: f64,
    pub success_rate: f64,
    pub mean_episode_time: f64,
    #[serde(with = "crate::executor::infinite_as_null")]
    pub min_proximity: f64,
    pub buffer_violations: usize,
    /// Sends every waypoint, or let the arm under the buffer.
    pub risk: bool,
}

/// One experiment per `n` with a fixed batch size.
pub fn n_sweep(config: &ScenarioConfig, n_values: &[usize], jobs: usize) -> Result<Vec<SweepRow>> {
    let m = config.corrector.num_points();
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        if n == 0 || n > m {
            return Err(Error::Usage(format!("n = {n} is outside 1..={m}")));
        }
        let mut c = config.clone();
        c.executor.n_rule = NRule::Fixed(n);
        let s = run_experiment(&c, jobs)?;
        rows.push(SweepRow {
            n,
            collision_rate: s.collision_rate,
            success_rate: s.success_rate,
            mean_episode_time: s.mean_episode_time,
            min_proximity: s.min_proximity_overall,
            buffer_violations: s.buffer_violations,
            risk: n == m || s.buffer_violations > 0 || s.collisions > 0,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: ExperimentSummary,
    pub corrected: ExperimentSummary,
}

/// The same episodes with the corrector off and on.
pub fn compare(config: &ScenarioConfig, jobs: usize) -> Result<Comparison> {
    let mut c = config.clone();
    c.corrector_enabled = false;
    let baseline = run_experiment(&c, jobs)?;
    c.corrector_enabled = true;
    let corrected = run_experiment(&c, jobs)?;
    Ok(Comparison { baseline, corrected })
}
