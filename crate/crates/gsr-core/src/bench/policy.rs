//! Weighted nonparametric policy: the desk-scale stand-in for a deep
//! weighted-BC model. Actions are chosen by a kernel-and-weight vote over
//! the k nearest dataset steps.

use super::env::ACTIONS;
use super::BenchError;
use crate::data::DemoDataset;
use crate::knn::KnnIndex;

/// A policy maps an observation embedding to an action index.
pub trait Policy: Sync {
    fn act(&self, embedding: &[f64]) -> usize;
}

impl<F: Fn(&[f64]) -> usize + Sync> Policy for F {
    fn act(&self, embedding: &[f64]) -> usize {
        self(embedding)
    }
}

/// Weight on the dataset-level action prior mixed into every vote. A fitted
/// model interpolates toward its global behavior wherever local training
/// mass vanishes; this term reproduces that failure mode when reweighting
/// suppresses a region's weight below numerical significance, while being
/// invisible (9+ orders below the kernel scale) anywhere training signal
/// exists.
const PRIOR_MIX: f64 = 1e-9;

pub struct WeightedKnnPolicy {
    index: KnnIndex,
    /// Action label (argmax of the stored action vector) per dataset step.
    actions: Vec<usize>,
    /// Training weight per dataset step.
    weights: Vec<f64>,
    /// Weighted global action frequencies (the fit's behavior prior).
    action_prior: Vec<f64>,
    pub bandwidth: f64,
    pub k: usize,
    n_actions: usize,
}

/// Fit the policy: index every dataset step, label it with its action, and
/// keep its training weight. The kernel bandwidth is the median 1-NN
/// distance between dataset steps (floored when duplicates drive it to 0,
/// which turns the kernel into an exact-match vote).
pub fn fit_weighted_knn_policy(
    ds: &DemoDataset,
    step_weights: &[Vec<f64>],
    k_policy: usize,
) -> Result<WeightedKnnPolicy, BenchError> {
    if ds.trajectories.is_empty() || k_policy == 0 {
        return Err(BenchError::InvalidSpec(
            "policy needs a dataset and k >= 1".into(),
        ));
    }
    let mut flat = Vec::with_capacity(ds.total_steps() * ds.embedding_dim);
    let mut actions = Vec::new();
    let mut weights = Vec::new();
    for (ti, traj) in ds.trajectories.iter().enumerate() {
        for (si, step) in traj.steps.iter().enumerate() {
            flat.extend_from_slice(&step.embedding);
            let label = step
                .action
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            actions.push(label);
            weights.push(step_weights[ti][si]);
        }
    }
    let index = KnnIndex::build(ds.embedding_dim, flat);

    // Median 1-NN distance over all steps.
    let mut nn: Vec<f64> = (0..index.len() as u32)
        .map(|i| {
            let query = index.point(i).to_vec();
            index
                .k_nearest(&query, 1, Some(i))
                .first()
                .map_or(f64::INFINITY, |&(d, _)| d)
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    let bandwidth = nn[(nn.len() - 1) / 2].max(1e-12);

    let mut action_prior = vec![0.0; ACTIONS.len()];
    for (a, w) in actions.iter().zip(&weights) {
        action_prior[*a] += w;
    }
    let total: f64 = action_prior.iter().sum();
    if total > 0.0 {
        for p in &mut action_prior {
            *p /= total;
        }
    }

    Ok(WeightedKnnPolicy {
        index,
        actions,
        weights,
        action_prior,
        bandwidth,
        k: k_policy,
        n_actions: ACTIONS.len(),
    })
}

impl WeightedKnnPolicy {
    /// Kernel value at distance d.
    fn kernel(&self, d: f64) -> f64 {
        let z = d / self.bandwidth;
        (-0.5 * z * z).exp()
    }

    /// Weighted vote over the k nearest steps plus the faint global prior;
    /// ties resolve to the lowest action index.
    pub fn vote(&self, embedding: &[f64]) -> Vec<f64> {
        let mut scores: Vec<f64> = self.action_prior.iter().map(|p| PRIOR_MIX * p).collect();
        for &(d, id) in &self.index.k_nearest(embedding, self.k, None) {
            scores[self.actions[id as usize]] += self.weights[id as usize] * self.kernel(d);
        }
        scores
    }
}

impl Policy for WeightedKnnPolicy {
    fn act(&self, embedding: &[f64]) -> usize {
        let scores = self.vote(embedding);
        let mut best = 0;
        for (i, s) in scores.iter().enumerate().skip(1) {
            if *s > scores[best] {
                best = i;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::demos::{generate_demos, DemoSpec, DemonstratorProfile, EmbedConfig, ProfileKind};
    use crate::bench::env::{Action, GridWorld};
    use crate::data::{LoadOptions, Step, Trajectory};

    fn toy_dataset(points: &[(f64, f64, Action)]) -> DemoDataset {
        // Two-step trajectories so every (point, action) is a step with a
        // throwaway terminal far out of the query range.
        let trajectories = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y, a))| Trajectory {
                success: true,
                steps: vec![
                    Step { embedding: vec![x, y], action: a.one_hot(), raw_index: 0 },
                    Step {
                        embedding: vec![1000.0 + i as f64, 1000.0],
                        action: Action::Stay.one_hot(),
                        raw_index: 1,
                    },
                ],
            })
            .collect();
        DemoDataset::new(trajectories, 2, 5, LoadOptions::default()).unwrap()
    }

    #[test]
    fn unanimous_neighbors_win() {
        let ds = toy_dataset(&[
            (0.0, 0.0, Action::Right),
            (0.1, 0.0, Action::Right),
            (0.0, 0.1, Action::Right),
        ]);
        let weights: Vec<Vec<f64>> = ds.trajectories.iter().map(|t| vec![1.0; t.steps.len()]).collect();
        let policy = fit_weighted_knn_policy(&ds, &weights, 3).unwrap();
        assert_eq!(policy.act(&[0.02, 0.02]), Action::Right.index());
    }

    #[test]
    fn weighted_vote_beats_count() {
        // Two equidistant neighbors with opposing actions, weights 3 vs 1.
        let ds = toy_dataset(&[(-1.0, 0.0, Action::Left), (1.0, 0.0, Action::Right)]);
        let weights = vec![vec![3.0, 1.0], vec![1.0, 1.0]];
        let policy = fit_weighted_knn_policy(&ds, &weights, 2).unwrap();
        assert_eq!(policy.act(&[0.0, 0.0]), Action::Left.index());

        let weights = vec![vec![1.0, 1.0], vec![3.0, 1.0]];
        let policy = fit_weighted_knn_policy(&ds, &weights, 2).unwrap();
        assert_eq!(policy.act(&[0.0, 0.0]), Action::Right.index());
    }

    #[test]
    fn zero_weight_suppresses_bounce_actions() {
        // A pre-bounce state demonstrated twice: once bouncing Left, once
        // moving Right. Zeroing the bounce step's weight must silence it.
        let env = GridWorld::grid10();
        let (ds, _) = generate_demos(
            &env,
            &[DemoSpec { profile: DemonstratorProfile::new(ProfileKind::Retry, 5), count: 20 }],
            &EmbedConfig::exact(),
        )
        .unwrap();
        let field = env.distance_field();
        // Zero out every step whose action does not reduce goal distance.
        let mut weights: Vec<Vec<f64>> = ds
            .trajectories
            .iter()
            .map(|t| vec![1.0; t.steps.len()])
            .collect();
        for (ti, traj) in ds.trajectories.iter().enumerate() {
            for (si, step) in traj.steps.iter().enumerate() {
                let cell = env.cell_from_embedding(&step.embedding).unwrap();
                if env.is_goal(cell) {
                    continue;
                }
                let a = Action::from_index(
                    step.action.iter().position(|&v| v == 1.0).unwrap(),
                );
                let t = env.step(cell, a);
                if t == cell || env.field_at(&field, t) >= env.field_at(&field, cell) {
                    weights[ti][si] = 0.0;
                }
            }
        }
        let policy = fit_weighted_knn_policy(&ds, &weights, 8).unwrap();
        // At every demonstrated non-goal state the policy must move closer.
        for traj in &ds.trajectories {
            for step in &traj.steps {
                let cell = env.cell_from_embedding(&step.embedding).unwrap();
                if env.is_goal(cell) {
                    continue;
                }
                let a = Action::from_index(policy.act(&step.embedding));
                let t = env.step(cell, a);
                assert!(
                    env.field_at(&field, t) < env.field_at(&field, cell),
                    "policy bounced at {cell:?}"
                );
            }
        }
    }
}
