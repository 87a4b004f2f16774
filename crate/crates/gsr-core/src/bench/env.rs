//! Deterministic gridworld environment for desk-scale verification.

use std::collections::HashSet;

/// Grid cell, (x, y) with x growing right and y growing up.
pub type Cell = (u32, u32);

/// Discrete action set. The order is fixed: it defines one-hot encoding and
/// vote tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

pub const ACTIONS: [Action; 5] = [
    Action::Up,
    Action::Down,
    Action::Left,
    Action::Right,
    Action::Stay,
];

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
            Action::Stay => 4,
        }
    }

    pub fn from_index(i: usize) -> Action {
        ACTIONS[i]
    }

    /// One-hot encoding over the fixed action order.
    pub fn one_hot(self) -> Vec<f64> {
        let mut v = vec![0.0; ACTIONS.len()];
        v[self.index()] = 1.0;
        v
    }

    /// The action leading back where this one came from (Stay is its own
    /// reverse).
    pub fn reverse(self) -> Action {
        match self {
            Action::Up => Action::Down,
            Action::Down => Action::Up,
            Action::Left => Action::Right,
            Action::Right => Action::Left,
            Action::Stay => Action::Stay,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridWorld {
    pub width: u32,
    pub height: u32,
    pub start_region: Vec<Cell>,
    pub goal_region: Vec<Cell>,
    pub obstacles: HashSet<Cell>,
    pub max_horizon: usize,
}

impl GridWorld {
    /// The standard 10x10 scenario: start anywhere on the left column, goal
    /// at the top-right corner, no obstacles.
    pub fn grid10() -> Self {
        let start_region = (0..10).map(|y| (0, y)).collect();
        GridWorld {
            width: 10,
            height: 10,
            start_region,
            goal_region: vec![(9, 9)],
            obstacles: HashSet::new(),
            max_horizon: 100,
        }
    }

    /// Named environments accepted by the CLI.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "grid10" => Some(Self::grid10()),
            _ => {
                // "gridW" square grids with the same layout convention.
                let n: u32 = name.strip_prefix("grid")?.parse().ok()?;
                if n < 2 {
                    return None;
                }
                let start_region = (0..n).map(|y| (0, y)).collect();
                Some(GridWorld {
                    width: n,
                    height: n,
                    start_region,
                    goal_region: vec![(n - 1, n - 1)],
                    obstacles: HashSet::new(),
                    max_horizon: (10 * n as usize).max(100),
                })
            }
        }
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.0 < self.width && c.1 < self.height
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.obstacles.contains(&c)
    }

    pub fn is_goal(&self, c: Cell) -> bool {
        self.goal_region.contains(&c)
    }

    /// Target cell of an action before wall/obstacle clamping; None when the
    /// move leaves the grid.
    fn target(&self, c: Cell, a: Action) -> Option<Cell> {
        let (x, y) = c;
        let t = match a {
            Action::Up => (x, y.checked_add(1)?),
            Action::Down => (x, y.checked_sub(1)?),
            Action::Left => (x.checked_sub(1)?, y),
            Action::Right => (x.checked_add(1)?, y),
            Action::Stay => (x, y),
        };
        Some(t)
    }

    /// Deterministic transition; moves into walls or obstacles are no-ops.
    pub fn step(&self, c: Cell, a: Action) -> Cell {
        match self.target(c, a) {
            Some(t) if self.is_free(t) => t,
            _ => c,
        }
    }

    /// Normalized (x, y) embedding of a cell, quantized to f32 so datasets
    /// round-trip bit-exactly through the on-disk format.
    pub fn embed(&self, c: Cell) -> Vec<f64> {
        let nx = if self.width > 1 {
            f64::from(c.0) / f64::from(self.width - 1)
        } else {
            0.0
        };
        let ny = if self.height > 1 {
            f64::from(c.1) / f64::from(self.height - 1)
        } else {
            0.0
        };
        vec![(nx as f32) as f64, (ny as f32) as f64]
    }

    /// Invert `embed` for exact (unprojected, noise-free) embeddings.
    pub fn cell_from_embedding(&self, e: &[f64]) -> Option<Cell> {
        if e.len() != 2 {
            return None;
        }
        let x = (e[0] * f64::from(self.width - 1)).round() as i64;
        let y = (e[1] * f64::from(self.height - 1)).round() as i64;
        if x < 0 || y < 0 {
            return None;
        }
        let c = (x as u32, y as u32);
        (self.in_bounds(c) && self.embed(c) == e).then_some(c)
    }

    fn cell_index(&self, c: Cell) -> usize {
        (c.1 * self.width + c.0) as usize
    }

    /// BFS distance from every free cell to the nearest goal cell; the true
    /// environment optimum used as an oracle. u32::MAX marks unreachable.
    pub fn distance_field(&self) -> Vec<u32> {
        let mut dist = vec![u32::MAX; (self.width * self.height) as usize];
        let mut queue = std::collections::VecDeque::new();
        for &g in &self.goal_region {
            if self.is_free(g) {
                dist[self.cell_index(g)] = 0;
                queue.push_back(g);
            }
        }
        while let Some(c) = queue.pop_front() {
            let d = dist[self.cell_index(c)];
            for a in [Action::Up, Action::Down, Action::Left, Action::Right] {
                if let Some(t) = self.target(c, a) {
                    if self.is_free(t) && dist[self.cell_index(t)] == u32::MAX {
                        dist[self.cell_index(t)] = d + 1;
                        queue.push_back(t);
                    }
                }
            }
        }
        dist
    }

    /// Distance lookup into a precomputed field.
    pub fn field_at(&self, field: &[u32], c: Cell) -> u32 {
        field[self.cell_index(c)]
    }

    /// Actions that strictly reduce the distance to goal under `field`.
    pub fn optimal_actions(&self, field: &[u32], c: Cell) -> Vec<Action> {
        let d = self.field_at(field, c);
        ACTIONS
            .iter()
            .copied()
            .filter(|&a| {
                let t = self.step(c, a);
                t != c && self.field_at(field, t) < d
            })
            .collect()
    }

    /// Every start must reach the goal.
    pub fn validate(&self) -> bool {
        let field = self.distance_field();
        !self.start_region.is_empty()
            && !self.goal_region.is_empty()
            && self
                .start_region
                .iter()
                .all(|&s| self.is_free(s) && self.field_at(&field, s) != u32::MAX)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walls_and_obstacles_are_no_ops() {
        let mut env = GridWorld::grid10();
        env.obstacles.insert((1, 0));
        assert_eq!(env.step((0, 0), Action::Down), (0, 0));
        assert_eq!(env.step((0, 0), Action::Left), (0, 0));
        assert_eq!(env.step((0, 0), Action::Right), (0, 0)); // obstacle
        assert_eq!(env.step((0, 0), Action::Up), (0, 1));
        assert_eq!(env.step((5, 5), Action::Stay), (5, 5));
    }

    #[test]
    fn distance_field_is_manhattan_on_open_grid() {
        let env = GridWorld::grid10();
        let field = env.distance_field();
        for x in 0..10u32 {
            for y in 0..10u32 {
                let manhattan = (9 - x) + (9 - y);
                assert_eq!(env.field_at(&field, (x, y)), manhattan);
            }
        }
        assert!(env.validate());
    }

    #[test]
    fn optimal_actions_point_toward_goal() {
        let env = GridWorld::grid10();
        let field = env.distance_field();
        let acts = env.optimal_actions(&field, (0, 0));
        assert_eq!(acts.len(), 2);
        assert!(acts.contains(&Action::Up) && acts.contains(&Action::Right));
        let acts = env.optimal_actions(&field, (9, 0));
        assert_eq!(acts, vec![Action::Up]);
    }
}
