//! End-to-end orchestration: ingest -> graph -> values -> weights, with
//! on-disk artifacts and a run manifest. Stages exchange files so external
//! trainers can pick up `weights.csv` directly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{self, DataError, LoadOptions};
use crate::graph::{build_graph, write_graph_exports, DemoGraph, GraphConfig, GraphMeta};
use crate::reweight::{reallocate, write_weights_csv, ReweightConfig, ReweightError, WeightTable};
use crate::value::{write_values_csv, ValueTable};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Reweight(#[from] ReweightError),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

/// Named hyperparameter presets (beta1, beta2, alpha).
pub const PRESETS: &[(&str, f64, f64, f64)] = &[
    ("can", 2.0, 1.0, 1.0),
    ("nut-assembly", 2.0, 0.33, 1.0),
    ("transport", 2.0, 0.25, 1.0),
    ("pushing", 1.0, 0.25, 1.0),
    ("spoon", 1.0, 0.25, 1.0),
    ("band-tying", 1.0, 0.25, 1.25),
    ("tweezer", 1.0, 0.25, 1.25),
];

pub fn preset(name: &str) -> Option<(f64, f64, f64)> {
    PRESETS
        .iter()
        .find(|(n, _, _, _)| *n == name)
        .map(|&(_, b1, b2, a)| (b1, b2, a))
}

/// Full configuration of one pipeline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub preset: Option<String>,
    pub graph: GraphConfig,
    pub reweight: ReweightConfig,
    pub allow_failures: bool,
    /// Recorded for provenance; the pipeline itself is deterministic.
    pub seed: u64,
}

/// The semantic inputs that determine output bytes; hashed into config_hash.
#[derive(Serialize)]
struct ConfigFingerprint<'a> {
    input_sha256: &'a str,
    graph: &'a GraphConfig,
    reweight: &'a ReweightConfig,
    allow_failures: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: u64,
}

/// Written as `manifest.json`; replaying it reproduces byte-identical CSVs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: RunConfig,
    /// Hash of (input hash, graph config, reweight config, allow_failures):
    /// everything that determines output bytes.
    pub config_hash: String,
    pub input_sha256: String,
    pub n_vertices: usize,
    pub n_edges: usize,
    pub n_augmented_edges: usize,
    pub degenerate_tolerance_count: usize,
    pub allocating_sources: usize,
    pub stages: Vec<StageTiming>,
    /// Relative output path -> sha256 of the file bytes.
    pub outputs: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String, DataError> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(data::hex_string(&hasher.finalize()))
}

fn sha256_str(s: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(s.as_bytes());
    data::hex_string(&hasher.finalize())
}

/// Run build-graph -> values -> reweight, writing all artifacts under
/// `cfg.out_dir` and returning the manifest (also written there).
pub fn run_pipeline(cfg: &RunConfig) -> Result<Manifest, PipelineError> {
    let mut stages = Vec::new();

    let t = Instant::now();
    let input_sha256 = sha256_file(&cfg.input)?;
    let ds = data::load_dataset_opts(
        &cfg.input,
        LoadOptions {
            allow_failures: cfg.allow_failures,
        },
    )?;
    push_stage(&mut stages, "load", t);

    let t = Instant::now();
    let mut graph = build_graph(&ds, &cfg.graph);
    graph.dataset_ref.path = Some(cfg.input.display().to_string());
    push_stage(&mut stages, "build-graph", t);

    let t = Instant::now();
    let values = ValueTable::compute(&graph);
    push_stage(&mut stages, "values", t);

    let t = Instant::now();
    let weights = reallocate(&graph, &values, &cfg.reweight)?;
    push_stage(&mut stages, "weigh", t);
    check_conservation(&weights)?;
    log_weight_extremes(&graph, &weights);

    let t = Instant::now();
    std::fs::create_dir_all(&cfg.out_dir).map_err(DataError::from)?;
    let graph_dir = cfg.out_dir.join("graph");
    write_graph_exports(&graph, &graph_dir)?;
    write_values_csv(&graph, &values, &cfg.out_dir.join("values.csv"))?;
    write_weights_csv(&weights.step_weight, &cfg.out_dir.join("weights.csv"))?;
    push_stage(&mut stages, "export", t);

    let mut outputs = BTreeMap::new();
    for rel in [
        "graph/edges.txt",
        "graph/vertices.csv",
        "values.csv",
        "weights.csv",
    ] {
        outputs.insert(rel.to_string(), sha256_file(&cfg.out_dir.join(rel))?);
    }

    let fingerprint = ConfigFingerprint {
        input_sha256: &input_sha256,
        graph: &cfg.graph,
        reweight: &cfg.reweight,
        allow_failures: cfg.allow_failures,
    };
    let manifest = Manifest {
        format: "gsr-run/v1".to_string(),
        config: cfg.clone(),
        config_hash: sha256_str(&serde_json::to_string(&fingerprint).expect("serializes")),
        input_sha256,
        n_vertices: graph.vertices.len(),
        n_edges: graph.edges.len(),
        n_augmented_edges: graph
            .edges
            .iter()
            .filter(|e| e.kind == crate::graph::EdgeKind::Augmented)
            .count(),
        degenerate_tolerance_count: graph.degenerate_tolerance.len(),
        allocating_sources: weights.allocating_sources,
        stages,
        outputs,
    };
    std::fs::write(
        cfg.out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(DataError::from)?;
    Ok(manifest)
}

fn push_stage(stages: &mut Vec<StageTiming>, stage: &str, start: Instant) {
    stages.push(StageTiming {
        stage: stage.to_string(),
        millis: start.elapsed().as_millis() as u64,
    });
}

fn check_conservation(weights: &WeightTable) -> Result<(), PipelineError> {
    let total: f64 = weights.vertex_weight.iter().sum();
    let expect = weights.allocating_sources as f64;
    if (total - expect).abs() > 1e-9 {
        return Err(PipelineError::Invariant(format!(
            "weight conservation violated: sum {total} vs {expect} sources"
        )));
    }
    Ok(())
}

/// Fig. 5-style qualitative inspection hook: log which transitions were
/// strengthened or weakened most.
fn log_weight_extremes(graph: &DemoGraph, weights: &WeightTable) {
    let n = weights.vertex_weight.len();
    if n == 0 {
        return;
    }
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| {
        weights.vertex_weight[a as usize]
            .total_cmp(&weights.vertex_weight[b as usize])
            .then(a.cmp(&b))
    });
    let decile = (n / 10).max(1);
    let bottom_mean: f64 = order[..decile]
        .iter()
        .map(|&v| weights.vertex_weight[v as usize])
        .sum::<f64>()
        / decile as f64;
    let top_mean: f64 = order[n - decile..]
        .iter()
        .map(|&v| weights.vertex_weight[v as usize])
        .sum::<f64>()
        / decile as f64;
    log::info!("weight deciles: bottom mean {bottom_mean:.4}, top mean {top_mean:.4}");
    for &vid in order.iter().take(5) {
        let v = &graph.vertices[vid as usize];
        log::info!(
            "weakened: vertex {vid} (traj {}, frames {}..{}) w={:.4}",
            v.traj_id,
            v.raw_start,
            v.raw_end,
            weights.vertex_weight[vid as usize]
        );
    }
    for &vid in order.iter().rev().take(5) {
        let v = &graph.vertices[vid as usize];
        log::info!(
            "strengthened: vertex {vid} (traj {}, frames {}..{}) w={:.4}",
            v.traj_id,
            v.raw_start,
            v.raw_end,
            weights.vertex_weight[vid as usize]
        );
    }
}

/// Reload a graph from an export directory by rebuilding it from the source
/// dataset referenced in `meta.json` (verified by content hash).
pub fn load_graph_dir(dir: &Path) -> Result<(DemoGraph, GraphMeta), PipelineError> {
    let meta_text = std::fs::read_to_string(dir.join("meta.json")).map_err(DataError::from)?;
    let meta: GraphMeta = serde_json::from_str(&meta_text)
        .map_err(|e| DataError::MalformedFile(format!("meta.json: {e}")))?;
    let path = meta.dataset.path.clone().ok_or_else(|| {
        DataError::MalformedFile("meta.json has no dataset path to rebuild from".into())
    })?;
    let ds = data::load_dataset_opts(
        Path::new(&path),
        LoadOptions {
            allow_failures: true,
        },
    )?;
    if ds.content_hash() != meta.dataset.sha256 {
        return Err(PipelineError::Invariant(format!(
            "dataset at {path} no longer matches the graph export (content hash changed)"
        )));
    }
    let mut graph = build_graph(&ds, &meta.config);
    graph.dataset_ref.path = Some(path);
    if graph.edges.len() != meta.n_edges || graph.vertices.len() != meta.n_vertices {
        return Err(PipelineError::Invariant(
            "rebuilt graph differs from the exported one".into(),
        ));
    }
    Ok((graph, meta))
}

/// Re-execute a recorded run into `out_dir`; returns (recorded, new)
/// manifests so callers can compare output hashes.
pub fn replay_manifest(
    manifest_path: &Path,
    out_dir: &Path,
) -> Result<(Manifest, Manifest), PipelineError> {
    let text = std::fs::read_to_string(manifest_path).map_err(DataError::from)?;
    let recorded: Manifest = serde_json::from_str(&text)
        .map_err(|e| DataError::MalformedFile(format!("manifest: {e}")))?;
    let mut cfg = recorded.config.clone();
    cfg.out_dir = out_dir.to_path_buf();
    let new = run_pipeline(&cfg)?;
    Ok((recorded, new))
}
