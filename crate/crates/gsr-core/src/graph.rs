//! Demonstration graph construction.
//!
//! Each trajectory is subsampled into vertices (raw indices 0, n, 2n, ...,
//! always including the final observation), consecutive vertices are joined
//! by weight-1 dataset edges, every success trajectory's last vertex is
//! linked to a single virtual goal vertex, and embedding-similar vertices
//! across the dataset are joined by bidirectional augmented edges gated by
//! the neighborhood tolerance rule.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DataResult, DemoDataset};
use crate::knn::{euclidean, KnnIndex};

/// Similarity between two embeddings: negative L2 distance.
pub fn similarity(a: &[f64], b: &[f64]) -> f64 {
    -euclidean(a, b)
}

/// Graph construction parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Subsample stride n: vertices at raw indices 0, n, 2n, ...
    pub stride_n: usize,
    /// M: size of the feature-space neighbor set that smooths Tol_raw.
    pub tol_neighbors_m: usize,
    /// Tolerance multiplier gating augmented edges.
    pub alpha: f64,
    /// Weight carried by each augmented edge (dataset edges are fixed at 1).
    pub augmented_edge_weight: f64,
    /// Lower bound on |Tol|, guarding division by zero when consecutive
    /// frames coincide.
    pub tol_floor_eps: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            stride_n: 5,
            tol_neighbors_m: 10,
            alpha: 1.0,
            augmented_edge_weight: 1.0,
            tol_floor_eps: 1e-9,
        }
    }
}

/// A subsampled observation (or the virtual goal).
#[derive(Debug, Clone)]
pub struct Vertex {
    pub id: u32,
    pub traj_id: u32,
    /// Position along the subsampled trajectory.
    pub vertex_index: u32,
    /// First raw step this vertex owns.
    pub raw_start: u32,
    /// One past the last raw step this vertex owns.
    pub raw_end: u32,
    /// Empty for the goal vertex.
    pub embedding: Vec<f64>,
    /// min over temporal neighbors of sim; nonpositive.
    pub tol_raw: f64,
    /// Smoothed tolerance; nonpositive with |tol| >= tol_floor_eps.
    pub tol: f64,
    pub is_goal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    Dataset,
    GoalLink,
    Augmented,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Dataset => "dataset",
            EdgeKind::GoalLink => "goal",
            EdgeKind::Augmented => "augmented",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: u32,
    pub to: u32,
    pub weight: f64,
    pub kind: EdgeKind,
}

/// Provenance of the dataset a graph was built from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: Option<String>,
    pub sha256: String,
    pub n_trajectories: usize,
    pub n_steps: usize,
    pub embedding_dim: usize,
    pub action_dim: usize,
}

/// The demonstration graph: subsampled vertices plus dataset, goal-link, and
/// augmented edges. Immutable once built.
#[derive(Debug, Clone)]
pub struct DemoGraph {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    pub config: GraphConfig,
    pub dataset_ref: DatasetRef,
    /// Id of the unique goal vertex (always the last vertex).
    pub goal_id: u32,
    /// Raw step count (T+1) per trajectory.
    pub traj_len: Vec<u32>,
    pub traj_success: Vec<bool>,
    /// Vertices whose tolerance hit the epsilon floor (degenerate
    /// consecutive embeddings). Informational, not fatal.
    pub degenerate_tolerance: Vec<u32>,
}

impl DemoGraph {
    /// Number of vertices excluding the goal.
    pub fn n_non_goal(&self) -> usize {
        self.vertices.len() - 1
    }

    /// The vertex reached by following `vid`'s dataset transition: the next
    /// vertex on the same trajectory, the goal for a success trajectory's
    /// last vertex, and None for a failure trajectory's last vertex.
    pub fn dataset_successor(&self, vid: u32) -> Option<u32> {
        let v = &self.vertices[vid as usize];
        if v.is_goal {
            return None;
        }
        if v.raw_end < self.traj_len[v.traj_id as usize] {
            Some(vid + 1)
        } else if self.traj_success[v.traj_id as usize] {
            Some(self.goal_id)
        } else {
            None
        }
    }

    /// Flat row-major copy of all non-goal embeddings, suitable for KnnIndex.
    pub fn non_goal_embeddings(&self) -> Vec<f64> {
        let dim = self.dataset_ref.embedding_dim;
        let mut flat = Vec::with_capacity(self.n_non_goal() * dim);
        for v in &self.vertices[..self.n_non_goal()] {
            flat.extend_from_slice(&v.embedding);
        }
        flat
    }
}

/// Subsampled raw indices for a trajectory with last index `t`: multiples of
/// the stride, plus `t` itself when it is not a multiple.
pub fn subsample_indices(t: usize, stride: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..=t).step_by(stride).collect();
    if *idx.last().unwrap() != t {
        idx.push(t);
    }
    idx
}

/// Build the vertex list (goal vertex appended last). Tolerances are zero
/// until `compute_tolerances` fills them in.
pub fn build_vertices(ds: &DemoDataset, cfg: &GraphConfig) -> Vec<Vertex> {
    let mut vertices = Vec::new();
    for (ti, traj) in ds.trajectories.iter().enumerate() {
        let t = traj.last_raw_index();
        let idx = subsample_indices(t, cfg.stride_n);
        for (vi, &raw) in idx.iter().enumerate() {
            let raw_end = if vi + 1 < idx.len() { idx[vi + 1] } else { t + 1 };
            vertices.push(Vertex {
                id: vertices.len() as u32,
                traj_id: ti as u32,
                vertex_index: vi as u32,
                raw_start: raw as u32,
                raw_end: raw_end as u32,
                embedding: traj.steps[raw].embedding.clone(),
                tol_raw: 0.0,
                tol: 0.0,
                is_goal: false,
            });
        }
    }
    vertices.push(Vertex {
        id: vertices.len() as u32,
        traj_id: 0,
        vertex_index: 0,
        raw_start: 0,
        raw_end: 0,
        embedding: Vec::new(),
        tol_raw: 0.0,
        tol: 0.0,
        is_goal: true,
    });
    vertices
}

/// Fill in tol_raw and tol for every non-goal vertex; returns the ids whose
/// tolerance hit the epsilon floor.
pub fn compute_tolerances(vertices: &mut [Vertex], cfg: &GraphConfig) -> Vec<u32> {
    let n = vertices.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    let dim = vertices[0].embedding.len();
    let mut flat = Vec::with_capacity(n * dim);
    for v in &vertices[..n] {
        flat.extend_from_slice(&v.embedding);
    }
    let index = KnnIndex::build(dim, flat);
    compute_tolerances_with_index(vertices, cfg, &index)
}

pub(crate) fn compute_tolerances_with_index(
    vertices: &mut [Vertex],
    cfg: &GraphConfig,
    index: &KnnIndex,
) -> Vec<u32> {
    let n = vertices.len() - 1;
    // Tol_raw = min over temporal-neighbor similarities; boundary vertices
    // use the single neighbor they have.
    let raw: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let v = &vertices[i];
            let mut tol_raw = f64::INFINITY;
            // Temporal neighbors live adjacent in the id layout.
            if v.vertex_index > 0 {
                tol_raw = tol_raw.min(similarity(&v.embedding, &vertices[i - 1].embedding));
            }
            let next = i + 1;
            if next < n && vertices[next].traj_id == v.traj_id {
                tol_raw = tol_raw.min(similarity(&v.embedding, &vertices[next].embedding));
            }
            debug_assert!(tol_raw.is_finite(), "every trajectory has >= 2 vertices");
            tol_raw
        })
        .collect();

    let tols: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let v = &vertices[i];
            let m = cfg.tol_neighbors_m;
            let mut sum = raw[i];
            let mut count = 1usize;
            if m > 1 {
                for &(_, nb) in &index.k_nearest(&v.embedding, m - 1, Some(v.id)) {
                    sum += raw[nb as usize];
                    count += 1;
                }
            }
            sum / count as f64
        })
        .collect();

    let mut degenerate = Vec::new();
    for i in 0..n {
        vertices[i].tol_raw = raw[i];
        if tols[i] > -cfg.tol_floor_eps {
            vertices[i].tol = -cfg.tol_floor_eps;
            degenerate.push(vertices[i].id);
        } else {
            vertices[i].tol = tols[i];
        }
    }
    degenerate
}

/// Augmented edges per the tolerance rule: an unordered non-goal pair (u, v)
/// that is not dataset-adjacent is joined bidirectionally iff
/// dist(u, v) < alpha * min(|tol(u)|, |tol(v)|).
pub fn build_augmented_edges(vertices: &[Vertex], cfg: &GraphConfig) -> Vec<Edge> {
    let n = vertices.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    let dim = vertices[0].embedding.len();
    let mut flat = Vec::with_capacity(n * dim);
    for v in &vertices[..n] {
        flat.extend_from_slice(&v.embedding);
    }
    let index = KnnIndex::build(dim, flat);
    build_augmented_edges_with_index(vertices, cfg, &index)
}

pub(crate) fn build_augmented_edges_with_index(
    vertices: &[Vertex],
    cfg: &GraphConfig,
    index: &KnnIndex,
) -> Vec<Edge> {
    let n = vertices.len() - 1;
    let pairs: Vec<Vec<(u32, u32)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let u = &vertices[i];
            let radius = cfg.alpha * u.tol.abs();
            let mut found = Vec::new();
            for &(d, j) in &index.within_radius(&u.embedding, radius) {
                if j as usize <= i {
                    continue;
                }
                let v = &vertices[j as usize];
                // Skip pairs already joined by a dataset edge.
                if v.traj_id == u.traj_id && v.vertex_index == u.vertex_index + 1 {
                    continue;
                }
                if d < cfg.alpha * v.tol.abs() {
                    found.push((u.id, j));
                }
            }
            found
        })
        .collect();

    let mut edges = Vec::new();
    for (a, b) in pairs.into_iter().flatten() {
        edges.push(Edge {
            from: a,
            to: b,
            weight: cfg.augmented_edge_weight,
            kind: EdgeKind::Augmented,
        });
        edges.push(Edge {
            from: b,
            to: a,
            weight: cfg.augmented_edge_weight,
            kind: EdgeKind::Augmented,
        });
    }
    edges
}

/// Build the full demonstration graph. Deterministic given (ds, cfg),
/// independent of thread count.
pub fn build_graph(ds: &DemoDataset, cfg: &GraphConfig) -> DemoGraph {
    let mut vertices = build_vertices(ds, cfg);
    let n = vertices.len() - 1;
    let goal_id = n as u32;

    let dim = ds.embedding_dim;
    let mut flat = Vec::with_capacity(n * dim);
    for v in &vertices[..n] {
        flat.extend_from_slice(&v.embedding);
    }
    let index = KnnIndex::build(dim, flat);

    let degenerate = compute_tolerances_with_index(&mut vertices, cfg, &index);

    let traj_len: Vec<u32> = ds.trajectories.iter().map(|t| t.steps.len() as u32).collect();
    let traj_success: Vec<bool> = ds.trajectories.iter().map(|t| t.success).collect();

    let mut edges = Vec::new();
    for v in &vertices[..n] {
        let last = v.raw_end == traj_len[v.traj_id as usize];
        if !last {
            edges.push(Edge {
                from: v.id,
                to: v.id + 1,
                weight: 1.0,
                kind: EdgeKind::Dataset,
            });
        } else if traj_success[v.traj_id as usize] {
            edges.push(Edge {
                from: v.id,
                to: goal_id,
                weight: 1.0,
                kind: EdgeKind::GoalLink,
            });
        }
    }
    edges.extend(build_augmented_edges_with_index(&vertices, cfg, &index));
    edges.sort_unstable_by_key(|e| (e.from, e.to, e.kind));

    DemoGraph {
        vertices,
        edges,
        config: cfg.clone(),
        dataset_ref: DatasetRef {
            path: None,
            sha256: ds.content_hash(),
            n_trajectories: ds.trajectories.len(),
            n_steps: ds.total_steps(),
            embedding_dim: ds.embedding_dim,
            action_dim: ds.action_dim,
        },
        goal_id,
        traj_len,
        traj_success,
        degenerate_tolerance: degenerate,
    }
}

/// Metadata persisted next to the graph exports so downstream commands can
/// rebuild the graph deterministically from the source dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphMeta {
    pub format: String,
    pub config: GraphConfig,
    pub dataset: DatasetRef,
    pub n_vertices: usize,
    pub n_edges: usize,
    pub goal_vertex_id: u32,
    pub degenerate_tolerance_count: usize,
}

impl GraphMeta {
    pub fn of(graph: &DemoGraph) -> Self {
        GraphMeta {
            format: "gsr-graph/v1".to_string(),
            config: graph.config.clone(),
            dataset: graph.dataset_ref.clone(),
            n_vertices: graph.vertices.len(),
            n_edges: graph.edges.len(),
            goal_vertex_id: graph.goal_id,
            degenerate_tolerance_count: graph.degenerate_tolerance.len(),
        }
    }
}

/// Write `edges.txt` (from_id to_id weight kind), `vertices.csv`
/// (id,traj_id,raw_start,raw_end,tol; the goal row leaves all but id empty),
/// and `meta.json` into `dir`.
pub fn write_graph_exports(graph: &DemoGraph, dir: &Path) -> DataResult<()> {
    std::fs::create_dir_all(dir)?;

    let mut edges = std::io::BufWriter::new(std::fs::File::create(dir.join("edges.txt"))?);
    for e in &graph.edges {
        writeln!(edges, "{} {} {} {}", e.from, e.to, e.weight, e.kind.as_str())?;
    }
    edges.flush()?;

    let mut verts = std::io::BufWriter::new(std::fs::File::create(dir.join("vertices.csv"))?);
    writeln!(verts, "id,traj_id,raw_start,raw_end,tol")?;
    for v in &graph.vertices {
        if v.is_goal {
            writeln!(verts, "{},,,,", v.id)?;
        } else {
            writeln!(
                verts,
                "{},{},{},{},{}",
                v.id, v.traj_id, v.raw_start, v.raw_end, v.tol
            )?;
        }
    }
    verts.flush()?;

    let meta = serde_json::to_string_pretty(&GraphMeta::of(graph)).expect("meta serializes");
    std::fs::write(dir.join("meta.json"), meta)?;
    Ok(())
}
