//! Policy evaluation: seeded rollouts, SR / TTS / NP metrics, and JSONL
//! episode logs for the reference-metric oracle.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::demos::{projection_matrix, transform_embedding, EmbedConfig};
use super::env::{Action, GridWorld};
use super::policy::Policy;
use super::{derive_seed, NpBaseline};
use crate::data::DataResult;

/// Outcome of one evaluation rollout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub trial: u32,
    pub start: (u32, u32),
    pub success: bool,
    /// Env steps taken (meaningful when success).
    pub steps: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalMetrics {
    pub n_trials: usize,
    pub success_rate: f64,
    /// Mean / std of steps-to-goal over successful trials; absent when no
    /// trial succeeded.
    pub tts_mean: Option<f64>,
    pub tts_std: Option<f64>,
    /// Normalized proficiency; can exceed 1.0 when the policy beats the best
    /// demonstrator.
    pub np: Option<f64>,
}

/// Compute SR / TTS / NP from episode records.
pub fn metrics_from_records(
    records: &[EpisodeRecord],
    baseline: Option<&NpBaseline>,
) -> EvalMetrics {
    let n = records.len();
    let successes: Vec<f64> = records
        .iter()
        .filter(|r| r.success)
        .map(|r| f64::from(r.steps))
        .collect();
    let success_rate = successes.len() as f64 / n as f64;
    let (tts_mean, tts_std, np) = if successes.is_empty() {
        (None, None, None)
    } else {
        let mean = successes.iter().sum::<f64>() / successes.len() as f64;
        let var = successes.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>()
            / successes.len() as f64;
        let np = baseline.map(|b| {
            (b.worst_mean_tts - mean) / (b.worst_mean_tts - b.best_mean_tts)
        });
        (Some(mean), Some(var.sqrt()), np)
    };
    EvalMetrics {
        n_trials: n,
        success_rate,
        tts_mean,
        tts_std,
        np,
    }
}

/// Roll the policy out `n_trials` times from seeded random starts.
/// Observation embeddings go through the same transform the dataset used
/// (per-trial RNG drives the observation noise). Trials run in parallel;
/// per-trial seeds are derived from (seed, trial), so scheduling cannot
/// change results.
pub fn evaluate<P: Policy>(
    policy: &P,
    env: &GridWorld,
    embed: &EmbedConfig,
    n_trials: usize,
    seed: u64,
    baseline: Option<&NpBaseline>,
) -> (EvalMetrics, Vec<EpisodeRecord>) {
    let matrix = projection_matrix(embed);
    let records: Vec<EpisodeRecord> = (0..n_trials as u32)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::from(trial)));
            let start = env.start_region[rng.gen_range(0..env.start_region.len())];
            let mut cell = start;
            let mut steps = 0u32;
            let mut success = env.is_goal(cell);
            while !success && (steps as usize) < env.max_horizon {
                let obs = transform_embedding(
                    &env.embed(cell),
                    matrix.as_ref(),
                    embed.noise_sigma,
                    &mut rng,
                );
                let action = Action::from_index(policy.act(&obs));
                cell = env.step(cell, action);
                steps += 1;
                success = env.is_goal(cell);
            }
            EpisodeRecord {
                trial,
                start,
                success,
                steps,
            }
        })
        .collect();
    (metrics_from_records(&records, baseline), records)
}

/// Episode logs as JSON lines.
pub fn write_episodes_jsonl(records: &[EpisodeRecord], path: &Path) -> DataResult<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).expect("record serializes");
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_episodes_jsonl(path: &Path) -> DataResult<Vec<EpisodeRecord>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("episode record parses"))
        .collect())
}
