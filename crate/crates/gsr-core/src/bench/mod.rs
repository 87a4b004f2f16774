//! Synthetic benchmark harness: gridworld environments, suboptimal
//! demonstrators, a weighted nearest-neighbor policy, and SR / TTS / NP
//! evaluation. Verifies end to end, at desk scale, that graph-search
//! reweighting improves over uniform behavior cloning.

pub mod demos;
pub mod env;
pub mod eval;
pub mod policy;
pub mod sweep;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{build_graph, EdgeKind, GraphConfig};
use crate::reweight::{
    flat_weights, reallocate, weight_stats, ReweightConfig, ReweightError, WeightStats,
    WeightTable,
};
use crate::value::ValueTable;
use demos::{generate_demos, DemoSpec, DemoStats, EmbedConfig};
use env::GridWorld;
use eval::{evaluate, EpisodeRecord, EvalMetrics};
use policy::fit_weighted_knn_policy;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("demonstrator '{profile}' could not reach the goal within the retry budget")]
    GenerationTimeout { profile: String },
    #[error("invalid bench spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Reweight(#[from] ReweightError),
}

/// Demonstrator TTS extremes recorded at generation time; the NP anchors
/// (best = 1.0, worst = 0.0).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NpBaseline {
    pub best_mean_tts: f64,
    pub worst_mean_tts: f64,
}

/// SplitMix64 step; the hash behind every derived seed in the bench.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Re-seed a spec template from a master seed (profile i gets stream 100+i).
pub fn seeded_specs(templates: &[DemoSpec], master: u64) -> Vec<DemoSpec> {
    templates
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let mut s = *spec;
            s.profile.seed = derive_seed(master, 100 + i as u64);
            s
        })
        .collect()
}

/// Everything one GSR-vs-uniform comparison needs.
#[derive(Debug, Clone)]
pub struct BenchRunConfig {
    pub env: GridWorld,
    pub specs: Vec<DemoSpec>,
    pub embed: EmbedConfig,
    pub graph: GraphConfig,
    pub reweight: ReweightConfig,
    pub k_policy: usize,
    pub n_trials: usize,
    pub eval_seed: u64,
}

/// Results of one comparison run.
pub struct BenchOutcome {
    pub dataset: crate::data::DemoDataset,
    pub demo_stats: DemoStats,
    pub baseline: NpBaseline,
    pub weights: WeightTable,
    pub weight_stats: WeightStats,
    pub n_augmented_edges: usize,
    pub gsr: EvalMetrics,
    pub gsr_records: Vec<EpisodeRecord>,
    pub uniform: EvalMetrics,
    pub uniform_records: Vec<EpisodeRecord>,
}

/// Generate demos, run the full reweighting pipeline, fit GSR-weighted and
/// uniform-weighted policies, and evaluate both under the same seeds.
pub fn run_comparison(cfg: &BenchRunConfig) -> Result<BenchOutcome, BenchError> {
    let (dataset, demo_stats) = generate_demos(&cfg.env, &cfg.specs, &cfg.embed)?;
    let baseline = demo_stats.np_baseline();

    let graph = build_graph(&dataset, &cfg.graph);
    let values = ValueTable::compute(&graph);
    let weights = reallocate(&graph, &values, &cfg.reweight)?;
    let n_augmented_edges = graph
        .edges
        .iter()
        .filter(|e| e.kind == EdgeKind::Augmented)
        .count();

    let gsr_policy = fit_weighted_knn_policy(&dataset, &weights.step_weight, cfg.k_policy)?;
    let uniform_weights: Vec<Vec<f64>> = dataset
        .trajectories
        .iter()
        .map(|t| vec![1.0; t.steps.len()])
        .collect();
    let uniform_policy = fit_weighted_knn_policy(&dataset, &uniform_weights, cfg.k_policy)?;

    let (gsr, gsr_records) = evaluate(
        &gsr_policy,
        &cfg.env,
        &cfg.embed,
        cfg.n_trials,
        cfg.eval_seed,
        Some(&baseline),
    );
    let (uniform, uniform_records) = evaluate(
        &uniform_policy,
        &cfg.env,
        &cfg.embed,
        cfg.n_trials,
        cfg.eval_seed,
        Some(&baseline),
    );

    let stats = weight_stats("gsr", &flat_weights(&weights.step_weight));
    Ok(BenchOutcome {
        dataset,
        demo_stats,
        baseline,
        weights,
        weight_stats: stats,
        n_augmented_edges,
        gsr,
        gsr_records,
        uniform,
        uniform_records,
    })
}
