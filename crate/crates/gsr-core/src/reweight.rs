//! Retrieval-based weight reallocation.
//!
//! Every non-goal vertex starts with one unit of training weight and
//! redistributes it over itself plus its K nearest neighbors via a softmax
//! over beta1 * S(u, v) + beta2 * Q(u), where S is the tolerance-normalized
//! feature similarity. Accumulated vertex weights are then copied onto the
//! raw steps each vertex owns, producing the per-(observation, action)
//! weights consumed by weighted behavior cloning.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, DataResult};
use crate::graph::{similarity, DemoGraph, Vertex};
use crate::knn::KnnIndex;
use crate::value::ValueTable;

#[derive(Debug, Error)]
pub enum ReweightError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Reallocation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReweightConfig {
    /// K: neighbors retrieved per source vertex.
    pub k_retrieve: usize,
    /// Similarity temperature.
    pub beta1: f64,
    /// Value temperature.
    pub beta2: f64,
    /// Pure behavior cloning: every vertex keeps its unit weight (K = 0).
    pub bc_mode: bool,
    /// Drop same-trajectory temporal neighbors (vertex index +-1) from the
    /// retrieved set.
    pub exclude_temporal_neighbors: bool,
}

impl Default for ReweightConfig {
    fn default() -> Self {
        ReweightConfig {
            k_retrieve: 10,
            beta1: 1.0,
            beta2: 0.25,
            bc_mode: false,
            exclude_temporal_neighbors: false,
        }
    }
}

impl ReweightConfig {
    pub fn validate(&self) -> Result<(), ReweightError> {
        if self.k_retrieve == 0 && !self.bc_mode {
            return Err(ReweightError::InvalidConfig(
                "k_retrieve = 0 is only valid in bc_mode".into(),
            ));
        }
        if self.beta1 < 0.0 || self.beta2 < 0.0 {
            return Err(ReweightError::InvalidConfig(
                "temperatures must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    fn effective_k(&self) -> usize {
        if self.bc_mode {
            0
        } else {
            self.k_retrieve
        }
    }
}

/// Accumulated per-vertex weights and the induced per-raw-step weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    /// Indexed by non-goal vertex id.
    pub vertex_weight: Vec<f64>,
    /// step_weight[traj][raw_index].
    pub step_weight: Vec<Vec<f64>>,
    /// Sources that allocated their unit of weight; the conservation
    /// reference. Differs from the vertex count only when allow_failures
    /// produced sources whose whole candidate set is unreachable.
    pub allocating_sources: usize,
}

/// Tolerance-normalized similarity (Eq. 7): nonpositive, zero iff the
/// embeddings coincide. Tolerances are floored at graph build time, so the
/// division is always finite.
pub fn normalized_similarity(u: &Vertex, v: &Vertex) -> f64 {
    0.5 * (1.0 / u.tol.abs() + 1.0 / v.tol.abs()) * similarity(&u.embedding, &v.embedding)
}

/// Run the reallocation loop and map vertex weights onto raw steps.
/// Deterministic given inputs, independent of thread count: per-source
/// allocations are computed in parallel but reduced in source order.
pub fn reallocate(
    graph: &DemoGraph,
    values: &ValueTable,
    cfg: &ReweightConfig,
) -> Result<WeightTable, ReweightError> {
    cfg.validate()?;
    let n = graph.n_non_goal();
    let k = cfg.effective_k();
    let index = if k > 0 {
        Some(KnnIndex::build(
            graph.dataset_ref.embedding_dim,
            graph.non_goal_embeddings(),
        ))
    } else {
        None
    };

    // Each entry: allocations of one source, or None when every candidate
    // (including the source) has Q = -inf.
    let per_source: Vec<Option<Vec<(u32, f64)>>> = (0..n as u32)
        .into_par_iter()
        .map(|vid| {
            let v = &graph.vertices[vid as usize];
            let mut candidates: Vec<u32> = vec![vid];
            if let Some(index) = &index {
                let extra = if cfg.exclude_temporal_neighbors { 2 } else { 0 };
                let found = index.k_nearest(&v.embedding, k + extra, Some(vid));
                let mut taken = 0;
                for &(_, u) in &found {
                    if taken == k {
                        break;
                    }
                    if cfg.exclude_temporal_neighbors {
                        let uv = &graph.vertices[u as usize];
                        if uv.traj_id == v.traj_id
                            && uv.vertex_index.abs_diff(v.vertex_index) <= 1
                        {
                            continue;
                        }
                    }
                    candidates.push(u);
                    taken += 1;
                }
            }
            // Stabilized softmax over finite-valued candidates.
            let scores: Vec<f64> = candidates
                .iter()
                .map(|&u| {
                    let q = values.q_tilde[u as usize];
                    if q == f64::NEG_INFINITY {
                        f64::NEG_INFINITY
                    } else {
                        cfg.beta1 * normalized_similarity(&graph.vertices[u as usize], v)
                            + cfg.beta2 * q
                    }
                })
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return None;
            }
            let exps: Vec<f64> = scores
                .iter()
                .map(|s| if *s == f64::NEG_INFINITY { 0.0 } else { (s - max).exp() })
                .collect();
            let denom: f64 = exps.iter().sum();
            Some(
                candidates
                    .iter()
                    .zip(&exps)
                    .filter(|(_, e)| **e > 0.0)
                    .map(|(&u, &e)| (u, e / denom))
                    .collect(),
            )
        })
        .collect();

    let mut vertex_weight = vec![0.0; n];
    let mut allocating_sources = 0;
    for allocations in per_source.iter().flatten() {
        allocating_sources += 1;
        for &(u, w) in allocations {
            vertex_weight[u as usize] += w;
        }
    }

    let step_weight = weights_to_steps(graph, &vertex_weight);
    Ok(WeightTable {
        vertex_weight,
        step_weight,
        allocating_sources,
    })
}

/// Copy each vertex's weight onto the raw steps in its span. Spans partition
/// every trajectory, so the result covers every step exactly once.
pub fn weights_to_steps(graph: &DemoGraph, vertex_weight: &[f64]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = graph
        .traj_len
        .iter()
        .map(|&len| vec![0.0; len as usize])
        .collect();
    for v in &graph.vertices[..graph.n_non_goal()] {
        let w = vertex_weight[v.id as usize];
        for t in v.raw_start..v.raw_end {
            out[v.traj_id as usize][t as usize] = w;
        }
    }
    out
}

/// Write `weights.csv`: traj_id,raw_index,weight.
pub fn write_weights_csv(step_weight: &[Vec<f64>], path: &Path) -> DataResult<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "traj_id,raw_index,weight")?;
    for (ti, steps) in step_weight.iter().enumerate() {
        for (si, weight) in steps.iter().enumerate() {
            writeln!(w, "{ti},{si},{weight}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a `weights.csv` back into (traj_id, raw_index, weight) rows.
pub fn read_weights_csv(path: &Path) -> DataResult<Vec<(u32, u32, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |s: Option<&str>| -> DataResult<f64> {
            s.and_then(|x| x.trim().parse::<f64>().ok())
                .ok_or_else(|| DataError::MalformedFile(format!("weights csv line {}", ln + 1)))
        };
        let t = parse(parts.next())? as u32;
        let r = parse(parts.next())? as u32;
        let weight = parse(parts.next())?;
        rows.push((t, r, weight));
    }
    Ok(rows)
}

/// Probabilities at which the empirical CDF is sampled for reports.
pub const QUANTILE_PROBS: [f64; 21] = [
    0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70,
    0.75, 0.80, 0.85, 0.90, 0.95, 1.0,
];

/// Summary of one weight distribution: CDF sample points plus the contrast
/// statistics (how much mass sits away from weight 1).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightStats {
    pub label: String,
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    /// Fraction of steps with weight < 0.5.
    pub frac_below_half: f64,
    /// Fraction of steps with weight > 1.5.
    pub frac_above_threshold: f64,
    /// Empirical quantiles at QUANTILE_PROBS.
    pub quantiles: Vec<f64>,
}

impl WeightStats {
    /// Mass away from weight 1; grows as the reallocation sharpens.
    pub fn contrast(&self) -> f64 {
        self.frac_below_half + self.frac_above_threshold
    }
}

pub fn weight_stats(label: &str, weights: &[f64]) -> WeightStats {
    assert!(!weights.is_empty(), "no weights to summarize");
    let n = weights.len();
    let mean = weights.iter().sum::<f64>() / n as f64;
    let variance = weights.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n as f64;
    let below = weights.iter().filter(|w| **w < 0.5).count() as f64 / n as f64;
    let above = weights.iter().filter(|w| **w > 1.5).count() as f64 / n as f64;
    let mut sorted = weights.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantiles = QUANTILE_PROBS
        .iter()
        .map(|p| sorted[((p * (n - 1) as f64).round() as usize).min(n - 1)])
        .collect();
    WeightStats {
        label: label.to_string(),
        count: n,
        mean,
        variance,
        frac_below_half: below,
        frac_above_threshold: above,
        quantiles,
    }
}

/// Flatten a step-weight table for reporting.
pub fn flat_weights(step_weight: &[Vec<f64>]) -> Vec<f64> {
    step_weight.iter().flatten().copied().collect()
}

/// Write per-configuration CDF/statistics rows as CSV.
pub fn write_report_csv(stats: &[WeightStats], path: &Path) -> DataResult<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(w, "label,count,mean,variance,frac_below_0.5,frac_above_1.5")?;
    for p in QUANTILE_PROBS {
        write!(w, ",q{:02}", (p * 100.0).round() as u32)?;
    }
    writeln!(w)?;
    for s in stats {
        write!(
            w,
            "{},{},{},{},{},{}",
            s.label, s.count, s.mean, s.variance, s.frac_below_half, s.frac_above_threshold
        )?;
        for q in &s.quantiles {
            write!(w, ",{q}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Write a small self-contained HTML report: a stats table plus an inline
/// SVG of each configuration's CDF.
pub fn write_report_html(stats: &[WeightStats], path: &Path) -> DataResult<()> {
    let mut body = String::new();
    body.push_str("<html><head><title>weight report</title></head><body>\n");
    body.push_str("<h1>Step weight distributions</h1>\n<table border=\"1\" cellpadding=\"4\">\n");
    body.push_str(
        "<tr><th>label</th><th>count</th><th>mean</th><th>variance</th>\
         <th>frac &lt; 0.5</th><th>frac &gt; 1.5</th><th>contrast</th></tr>\n",
    );
    for s in stats {
        body.push_str(&format!(
            "<tr><td>{}</td><td>{}</td><td>{:.4}</td><td>{:.4}</td><td>{:.4}</td><td>{:.4}</td><td>{:.4}</td></tr>\n",
            s.label, s.count, s.mean, s.variance, s.frac_below_half, s.frac_above_threshold,
            s.contrast()
        ));
    }
    body.push_str("</table>\n");

    let (w, h) = (640.0, 360.0);
    let max_weight = stats
        .iter()
        .flat_map(|s| s.quantiles.last().copied())
        .fold(1.0f64, f64::max);
    body.push_str(&format!(
        "<h2>Empirical CDF</h2>\n<svg width=\"{w}\" height=\"{h}\" \
         style=\"border:1px solid #999;background:#fff\">\n"
    ));
    let colors = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    for (si, s) in stats.iter().enumerate() {
        let color = colors[si % colors.len()];
        let pts: Vec<String> = s
            .quantiles
            .iter()
            .zip(QUANTILE_PROBS.iter())
            .map(|(q, p)| {
                let x = (q / max_weight).min(1.0) * (w - 40.0) + 20.0;
                let y = h - 20.0 - p * (h - 40.0);
                format!("{x:.1},{y:.1}")
            })
            .collect();
        body.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        body.push_str(&format!(
            "<text x=\"30\" y=\"{}\" fill=\"{color}\" font-size=\"12\">{}</text>\n",
            20.0 + 14.0 * si as f64,
            s.label
        ));
    }
    body.push_str("</svg>\n</body></html>\n");
    std::fs::write(path, body)?;
    Ok(())
}
