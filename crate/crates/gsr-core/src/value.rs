//! Goal distances and transition values via graph search.
//!
//! A single reverse search from the virtual goal yields d(v, g) for every
//! vertex: BFS when all edge weights are 1, Dijkstra otherwise. The value of
//! following a vertex's dataset transition is Q(v) = -1 - d(successor, g).
//! Unreachable vertices carry d = +inf and Q = -inf, which downstream
//! softmax arithmetic turns into zero weight.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::data::DataResult;
use crate::graph::DemoGraph;

#[derive(Debug, Error)]
pub enum ValueError {
    #[error("dataset is not tabular: every state appears once, so every candidate set is a singleton")]
    NotTabular,
}

/// Per-vertex goal distances and per-transition values.
#[derive(Debug, Clone)]
pub struct ValueTable {
    /// Indexed by vertex id (goal included, always 0); +inf = unreachable.
    pub dist_to_goal: Vec<f64>,
    /// Indexed by non-goal vertex id; -inf when the successor is missing or
    /// unreachable.
    pub q_tilde: Vec<f64>,
}

impl ValueTable {
    pub fn compute(graph: &DemoGraph) -> Self {
        let dist_to_goal = shortest_distances(graph);
        let q_tilde = transition_values(graph, &dist_to_goal);
        ValueTable {
            dist_to_goal,
            q_tilde,
        }
    }
}

/// Weighted shortest-path distance from every vertex to the goal, computed
/// as one reverse search from the goal.
pub fn shortest_distances(graph: &DemoGraph) -> Vec<f64> {
    let n = graph.vertices.len();
    let mut reverse_adj: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    let mut uniform = true;
    for e in &graph.edges {
        reverse_adj[e.to as usize].push((e.from, e.weight));
        if e.weight != 1.0 {
            uniform = false;
        }
    }
    let goal = graph.goal_id as usize;
    let mut dist = vec![f64::INFINITY; n];
    dist[goal] = 0.0;

    if uniform {
        let mut queue = VecDeque::new();
        queue.push_back(goal as u32);
        while let Some(v) = queue.pop_front() {
            let d = dist[v as usize];
            for &(u, _) in &reverse_adj[v as usize] {
                if dist[u as usize].is_infinite() {
                    dist[u as usize] = d + 1.0;
                    queue.push_back(u);
                }
            }
        }
    } else {
        #[derive(PartialEq)]
        struct Entry(f64, u32);
        impl Eq for Entry {}
        impl Ord for Entry {
            fn cmp(&self, other: &Self) -> std::cmp::Ordering {
                self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
            }
        }
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(other))
            }
        }
        let mut heap = BinaryHeap::new();
        heap.push(Reverse(Entry(0.0, goal as u32)));
        while let Some(Reverse(Entry(d, v))) = heap.pop() {
            if d > dist[v as usize] {
                continue;
            }
            for &(u, w) in &reverse_adj[v as usize] {
                let cand = d + w;
                if cand < dist[u as usize] {
                    dist[u as usize] = cand;
                    heap.push(Reverse(Entry(cand, u)));
                }
            }
        }
    }
    dist
}

/// Q(v) = -1 - d(successor(v), g) for every non-goal vertex.
pub fn transition_values(graph: &DemoGraph, dist_to_goal: &[f64]) -> Vec<f64> {
    (0..graph.n_non_goal() as u32)
        .map(|vid| match graph.dataset_successor(vid) {
            Some(succ) => {
                let d = dist_to_goal[succ as usize];
                if d.is_finite() {
                    -1.0 - d
                } else {
                    f64::NEG_INFINITY
                }
            }
            None => f64::NEG_INFINITY,
        })
        .collect()
}

/// Weighting mode for the tabular case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TabularMode {
    /// Keep exactly the transitions whose successor distance is minimal.
    Hard,
    /// w = exp(-d(successor)) normalized within each state's candidate set.
    Soft,
}

/// Per-transition weights for tabular datasets, where identical states recur
/// bit-exactly. Transitions are grouped by exact embedding identity; within
/// each group the successor distance ranks the candidate actions.
/// Candidates whose successor is unreachable get weight 0 in both modes.
pub fn tabular_weights(
    graph: &DemoGraph,
    values: &ValueTable,
    mode: TabularMode,
) -> Result<Vec<f64>, ValueError> {
    let n = graph.n_non_goal();
    let mut groups: HashMap<Vec<u64>, Vec<u32>> = HashMap::new();
    for v in &graph.vertices[..n] {
        let key: Vec<u64> = v.embedding.iter().map(|x| x.to_bits()).collect();
        groups.entry(key).or_default().push(v.id);
    }
    if groups.values().all(|g| g.len() == 1) {
        return Err(ValueError::NotTabular);
    }

    let succ_dist = |vid: u32| -> f64 {
        match graph.dataset_successor(vid) {
            Some(s) => values.dist_to_goal[s as usize],
            None => f64::INFINITY,
        }
    };

    let mut weights = vec![0.0; n];
    for members in groups.values() {
        let dists: Vec<f64> = members.iter().map(|&v| succ_dist(v)).collect();
        let best = dists.iter().copied().fold(f64::INFINITY, f64::min);
        if best.is_infinite() {
            continue; // no reachable successor anywhere in this state
        }
        match mode {
            TabularMode::Hard => {
                for (&v, &d) in members.iter().zip(&dists) {
                    if d == best {
                        weights[v as usize] = 1.0;
                    }
                }
            }
            TabularMode::Soft => {
                // exp(-d)/Z, stabilized by the minimum distance.
                let z: f64 = dists
                    .iter()
                    .filter(|d| d.is_finite())
                    .map(|d| (-(d - best)).exp())
                    .sum();
                for (&v, &d) in members.iter().zip(&dists) {
                    if d.is_finite() {
                        weights[v as usize] = (-(d - best)).exp() / z;
                    }
                }
            }
        }
    }
    Ok(weights)
}

/// Write `values.csv` with one row per vertex: vertex_id, dist, q_tilde
/// (the goal row leaves q_tilde empty).
pub fn write_values_csv(graph: &DemoGraph, values: &ValueTable, path: &Path) -> DataResult<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "vertex_id,dist,q_tilde")?;
    for (vid, d) in values.dist_to_goal.iter().enumerate() {
        if vid == graph.goal_id as usize {
            writeln!(w, "{vid},{d},")?;
        } else {
            writeln!(w, "{vid},{d},{}", values.q_tilde[vid])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, EdgeKind, GraphConfig, build_graph};
    use crate::data::{DemoDataset, LoadOptions, Step, Trajectory};

    /// Chain dataset: embeddings spaced far apart so no augmented edges form.
    fn chain_dataset(len: usize) -> DemoDataset {
        let traj = Trajectory {
            success: true,
            steps: (0..len)
                .map(|t| Step {
                    embedding: vec![t as f64 * 10.0, 0.0],
                    action: vec![0.0],
                    raw_index: t,
                })
                .collect(),
        };
        DemoDataset::new(vec![traj], 2, 1, LoadOptions::default()).unwrap()
    }

    fn stride1() -> GraphConfig {
        GraphConfig { stride_n: 1, ..GraphConfig::default() }
    }

    #[test]
    fn chain_distances_and_values() {
        let graph = build_graph(&chain_dataset(3), &stride1());
        let dist = shortest_distances(&graph);
        assert_eq!(dist, vec![3.0, 2.0, 1.0, 0.0]);
        let q = transition_values(&graph, &dist);
        assert_eq!(q, vec![-3.0, -2.0, -1.0]);
    }

    #[test]
    fn augmented_shortcut_reduces_fork_distance() {
        // Long branch L0..L5 -> g and short branch S0..S2 -> g with one
        // augmented edge L1 <-> S1. By hand: d(S1) = 2, so d(L1) = 3.
        let ds2 = {
            let mk = |len: usize, offset: f64| Trajectory {
                success: true,
                steps: (0..len)
                    .map(|t| Step {
                        embedding: vec![t as f64 * 10.0, offset],
                        action: vec![0.0],
                        raw_index: t,
                    })
                    .collect(),
            };
            DemoDataset::new(vec![mk(6, 0.0), mk(3, 1000.0)], 2, 1, LoadOptions::default())
                .unwrap()
        };
        let mut graph = build_graph(&ds2, &stride1());
        assert!(graph.edges.iter().all(|e| e.kind != EdgeKind::Augmented));
        let l1 = 1u32;
        let s1 = 7u32; // second trajectory starts at id 6
        graph.edges.push(Edge { from: l1, to: s1, weight: 1.0, kind: EdgeKind::Augmented });
        graph.edges.push(Edge { from: s1, to: l1, weight: 1.0, kind: EdgeKind::Augmented });

        let dist = shortest_distances(&graph);
        assert_eq!(dist[s1 as usize], 2.0);
        assert_eq!(dist[l1 as usize], 3.0); // min(5, 1 + 2)
        assert_eq!(dist[0], 4.0);
    }

    #[test]
    fn failure_trajectory_is_unreachable_without_stitching() {
        let mut ds = chain_dataset(3);
        ds.trajectories[0].success = false;
        ds.validate(LoadOptions { allow_failures: true }).unwrap();
        let graph = build_graph(&ds, &stride1());
        let values = ValueTable::compute(&graph);
        assert!(values.dist_to_goal[0].is_infinite());
        assert_eq!(values.q_tilde[2], f64::NEG_INFINITY);
    }

    #[test]
    fn bellman_optimality_holds_on_random_graphs() {
        for seed in 0..10u64 {
            let ds = crate::data::tests::random_dataset(seed, 3, 1, 8);
            // Odd seeds carry non-unit augmented weights to exercise Dijkstra.
            let aug_weight = if seed % 2 == 0 { 1.0 } else { 0.5 };
            let cfg = GraphConfig {
                stride_n: 2,
                alpha: 2.0,
                augmented_edge_weight: aug_weight,
                ..GraphConfig::default()
            };
            let graph = build_graph(&ds, &cfg);
            let dist = shortest_distances(&graph);
            let mut tight = vec![false; graph.vertices.len()];
            tight[graph.goal_id as usize] = true;
            for e in &graph.edges {
                let du = dist[e.from as usize];
                let dv = dist[e.to as usize];
                assert!(du <= e.weight + dv + 1e-12, "triangle violated");
                if du == e.weight + dv {
                    tight[e.from as usize] = true;
                }
            }
            for (v, d) in dist.iter().enumerate() {
                if d.is_finite() {
                    assert!(tight[v], "no tight outgoing edge at {v}");
                }
            }
            // Q <= -1 everywhere, equality exactly at terminal success vertices.
            let q = transition_values(&graph, &dist);
            for (vid, &qv) in q.iter().enumerate() {
                assert!(qv <= -1.0);
                let terminal = graph.dataset_successor(vid as u32) == Some(graph.goal_id);
                assert_eq!(qv == -1.0, terminal);
            }
        }
    }

    #[test]
    fn augmented_edges_never_increase_distances() {
        let ds = crate::data::tests::random_dataset(5, 2, 1, 10);
        let base = GraphConfig { stride_n: 2, ..GraphConfig::default() };
        let without = shortest_distances(&build_graph(
            &ds,
            &GraphConfig { alpha: 0.0, ..base.clone() },
        ));
        let with = shortest_distances(&build_graph(&ds, &base));
        for (a, b) in with.iter().zip(&without) {
            assert!(a <= b);
        }
    }

    fn two_action_state() -> DemoGraph {
        // Two trajectories leave the same embedding; successor distances
        // differ (2 vs 5 hops to goal). Branches sit 1000 apart so the only
        // augmented edge joins the duplicate state itself.
        let mk = |len: usize, tag: f64| Trajectory {
            success: true,
            steps: (0..len)
                .map(|t| Step {
                    embedding: if t == 0 {
                        vec![0.0, 0.0]
                    } else {
                        vec![t as f64 * 10.0, tag]
                    },
                    action: vec![tag],
                    raw_index: t,
                })
                .collect(),
        };
        let ds = DemoDataset::new(vec![mk(3, 0.0), mk(6, 1000.0)], 2, 1, LoadOptions::default())
            .unwrap();
        // M = 1 keeps each branch's tolerance local, so only the duplicate
        // state itself gets an augmented edge.
        let cfg = GraphConfig { stride_n: 1, tol_neighbors_m: 1, ..GraphConfig::default() };
        build_graph(&ds, &cfg)
    }

    #[test]
    fn tabular_hard_and_soft_match_closed_forms() {
        let graph = two_action_state();
        let values = ValueTable::compute(&graph);
        // Sanity: the duplicate state's two successors sit at d = 2 and 5.
        assert_eq!(values.dist_to_goal[1], 2.0);
        assert_eq!(values.dist_to_goal[4], 5.0);

        let hard = tabular_weights(&graph, &values, TabularMode::Hard).unwrap();
        assert_eq!(hard[0], 1.0);
        assert_eq!(hard[3], 0.0);

        let soft = tabular_weights(&graph, &values, TabularMode::Soft).unwrap();
        let expect = (-2.0f64).exp() / ((-2.0f64).exp() + (-5.0f64).exp());
        assert!((soft[0] - expect).abs() < 1e-15);
        assert!((soft[3] - (1.0 - expect)).abs() < 1e-15);
        assert!((expect - 0.9526).abs() < 1e-4);
        // Singleton states keep weight 1 in both modes.
        assert_eq!(hard[1], 1.0);
        assert_eq!(soft[1], 1.0);
    }

    #[test]
    fn all_unique_states_are_not_tabular() {
        let graph = build_graph(&chain_dataset(4), &stride1());
        let values = ValueTable::compute(&graph);
        assert!(matches!(
            tabular_weights(&graph, &values, TabularMode::Hard),
            Err(ValueError::NotTabular)
        ));
    }
}
