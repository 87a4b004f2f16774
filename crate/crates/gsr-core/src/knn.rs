//! Exact nearest-neighbor retrieval over embedding vectors.
//!
//! A bucketed k-d tree (median split on the widest-spread dimension) with a
//! brute-force path for small point sets. Results are exact and
//! deterministic: ties are broken by ascending point id everywhere, and the
//! same distance expression is used on every path so equal inputs produce
//! bit-equal outputs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Below this many points a linear scan beats the tree.
pub const BRUTE_FORCE_LIMIT: usize = 2048;

const LEAF_SIZE: usize = 32;

/// Euclidean distance, accumulated in ascending dimension order.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

#[inline]
fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist_sq: f64,
    id: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Keeps the k smallest candidates by (distance, id).
struct KBest {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl KBest {
    fn new(k: usize) -> Self {
        KBest {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(worst) = self.heap.peek() {
            if c < *worst {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    /// A subtree with minimum squared distance `bound` may still contain a
    /// candidate that displaces the current worst (ids break exact ties).
    #[inline]
    fn may_improve(&self, bound: f64) -> bool {
        match self.heap.peek() {
            Some(worst) if self.heap.len() == self.k => bound <= worst.dist_sq,
            _ => true,
        }
    }

    fn into_sorted(self) -> Vec<(f64, u32)> {
        let mut v: Vec<Candidate> = self.heap.into_vec();
        v.sort_unstable();
        v.into_iter().map(|c| (c.dist_sq.sqrt(), c.id)).collect()
    }
}

enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        dim: u32,
        value: f64,
        left: u32,
        right: u32,
    },
}

/// Exact k-NN / radius index over a fixed set of points.
pub struct KnnIndex {
    dim: usize,
    n: usize,
    points: Vec<f64>,
    nodes: Vec<Node>,
    order: Vec<u32>,
    root: u32,
}

impl KnnIndex {
    /// Build over `n` points stored row-major in `points` (`n * dim` values).
    /// Point ids are row positions.
    pub fn build(dim: usize, points: Vec<f64>) -> Self {
        assert!(dim > 0, "dimension must be positive");
        assert_eq!(points.len() % dim, 0, "points length must be n * dim");
        let n = points.len() / dim;
        let mut index = KnnIndex {
            dim,
            n,
            points,
            nodes: Vec::new(),
            order: (0..n as u32).collect(),
            root: 0,
        };
        if n > BRUTE_FORCE_LIMIT {
            index.root = index.build_node(0, n);
        }
        index
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// The stored coordinates of point `id`.
    #[inline]
    pub fn point(&self, id: u32) -> &[f64] {
        let base = id as usize * self.dim;
        &self.points[base..base + self.dim]
    }

    fn build_node(&mut self, start: usize, end: usize) -> u32 {
        let len = end - start;
        let (split_dim, spread) = self.widest_dimension(start, end);
        if len <= LEAF_SIZE || spread == 0.0 {
            self.nodes.push(Node::Leaf {
                start: start as u32,
                end: end as u32,
            });
            return (self.nodes.len() - 1) as u32;
        }
        let mid = len / 2;
        let dim = self.dim;
        {
            let points = std::mem::take(&mut self.points);
            self.order[start..end].select_nth_unstable_by(mid, |&a, &b| {
                let ca = points[a as usize * dim + split_dim];
                let cb = points[b as usize * dim + split_dim];
                ca.total_cmp(&cb).then(a.cmp(&b))
            });
            self.points = points;
        }
        let pivot = self.order[start + mid];
        let value = self.points[pivot as usize * dim + split_dim];
        let left = self.build_node(start, start + mid);
        let right = self.build_node(start + mid, end);
        self.nodes.push(Node::Split {
            dim: split_dim as u32,
            value,
            left,
            right,
        });
        (self.nodes.len() - 1) as u32
    }

    fn widest_dimension(&self, start: usize, end: usize) -> (usize, f64) {
        let mut best_dim = 0;
        let mut best_spread = -1.0;
        for d in 0..self.dim {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &id in &self.order[start..end] {
                let v = self.points[id as usize * self.dim + d];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let spread = hi - lo;
            if spread > best_spread {
                best_spread = spread;
                best_dim = d;
            }
        }
        (best_dim, best_spread.max(0.0))
    }

    /// The `k` nearest points to `query`, sorted by (distance, id).
    /// `exclude` removes one id from consideration (typically the query's own
    /// point); exact duplicates of it still count.
    pub fn k_nearest(&self, query: &[f64], k: usize, exclude: Option<u32>) -> Vec<(f64, u32)> {
        assert_eq!(query.len(), self.dim);
        if k == 0 || self.n == 0 {
            return Vec::new();
        }
        let mut best = KBest::new(k);
        if self.nodes.is_empty() {
            for id in 0..self.n as u32 {
                if Some(id) == exclude {
                    continue;
                }
                best.offer(Candidate {
                    dist_sq: dist_sq(query, self.point(id)),
                    id,
                });
            }
        } else {
            let mut offsets = vec![0.0; self.dim];
            self.knn_rec(self.root, query, 0.0, &mut offsets, exclude, &mut best);
        }
        best.into_sorted()
    }

    fn knn_rec(
        &self,
        node: u32,
        query: &[f64],
        cell_dist_sq: f64,
        offsets: &mut [f64],
        exclude: Option<u32>,
        best: &mut KBest,
    ) {
        match &self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &id in &self.order[*start as usize..*end as usize] {
                    if Some(id) == exclude {
                        continue;
                    }
                    best.offer(Candidate {
                        dist_sq: dist_sq(query, self.point(id)),
                        id,
                    });
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let d = *dim as usize;
                let off = query[d] - *value;
                let (near, far) = if off < 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.knn_rec(near, query, cell_dist_sq, offsets, exclude, best);
                let old = offsets[d];
                let far_dist_sq = cell_dist_sq - old * old + off * off;
                if best.may_improve(far_dist_sq) {
                    offsets[d] = off;
                    self.knn_rec(far, query, far_dist_sq, offsets, exclude, best);
                    offsets[d] = old;
                }
            }
        }
    }

    /// All points with distance strictly below `radius`, sorted by
    /// (distance, id).
    pub fn within_radius(&self, query: &[f64], radius: f64) -> Vec<(f64, u32)> {
        assert_eq!(query.len(), self.dim);
        let mut out = Vec::new();
        if self.n == 0 || radius <= 0.0 {
            return out;
        }
        if self.nodes.is_empty() {
            for id in 0..self.n as u32 {
                let d = euclidean(query, self.point(id));
                if d < radius {
                    out.push((d, id));
                }
            }
        } else {
            let mut offsets = vec![0.0; self.dim];
            self.radius_rec(self.root, query, 0.0, &mut offsets, radius, &mut out);
            out.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        out
    }

    fn radius_rec(
        &self,
        node: u32,
        query: &[f64],
        cell_dist_sq: f64,
        offsets: &mut [f64],
        radius: f64,
        out: &mut Vec<(f64, u32)>,
    ) {
        match &self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &id in &self.order[*start as usize..*end as usize] {
                    let d = dist_sq(query, self.point(id)).sqrt();
                    if d < radius {
                        out.push((d, id));
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let d = *dim as usize;
                let off = query[d] - *value;
                let (near, far) = if off < 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.radius_rec(near, query, cell_dist_sq, offsets, radius, out);
                let old = offsets[d];
                let far_dist_sq = cell_dist_sq - old * old + off * off;
                // Points in the far cell satisfy dist >= sqrt(far_dist_sq).
                if far_dist_sq.sqrt() < radius {
                    offsets[d] = off;
                    self.radius_rec(far, query, far_dist_sq, offsets, radius, out);
                    offsets[d] = old;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_knn(
        points: &[Vec<f64>],
        query: &[f64],
        k: usize,
        exclude: Option<u32>,
    ) -> Vec<(f64, u32)> {
        let mut all: Vec<(f64, u32)> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i as u32) != exclude)
            .map(|(i, p)| (euclidean(query, p), i as u32))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all
    }

    fn flat(points: &[Vec<f64>]) -> Vec<f64> {
        points.iter().flatten().copied().collect()
    }

    #[test]
    fn tree_matches_brute_force_with_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dim = 4;
        // Force the tree path and include heavy duplication for tie handling.
        let n = BRUTE_FORCE_LIMIT + 500;
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..dim)
                    .map(|_| f64::from(rng.gen_range(-3i32..=3)) * 0.5)
                    .collect()
            })
            .collect();
        let index = KnnIndex::build(dim, flat(&points));
        assert!(!index.nodes.is_empty());
        for qi in 0..40 {
            let query: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let k = 1 + qi % 12;
            let got = index.k_nearest(&query, k, Some(qi as u32));
            let want = brute_knn(&points, &query, k, Some(qi as u32));
            assert_eq!(got, want, "query {qi}");
        }
    }

    #[test]
    fn radius_matches_brute_force_and_is_strict() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dim = 3;
        let n = BRUTE_FORCE_LIMIT + 100;
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let index = KnnIndex::build(dim, flat(&points));
        for _ in 0..30 {
            let query: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let radius = rng.gen_range(0.05..0.6);
            let got = index.within_radius(&query, radius);
            let mut want: Vec<(f64, u32)> = points
                .iter()
                .enumerate()
                .map(|(i, p)| (euclidean(&query, p), i as u32))
                .filter(|(d, _)| *d < radius)
                .collect();
            want.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            assert_eq!(got, want);
        }
        // A point exactly at the radius is excluded.
        let index = KnnIndex::build(1, vec![0.0, 1.0]);
        assert_eq!(index.within_radius(&[0.0], 1.0), vec![(0.0, 0)]);
    }

    #[test]
    fn small_sets_use_linear_scan() {
        let points = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]];
        let index = KnnIndex::build(2, flat(&points));
        assert!(index.nodes.is_empty());
        assert_eq!(
            index.k_nearest(&[0.1, 0.0], 2, None),
            brute_knn(&points, &[0.1, 0.0], 2, None)
        );
        assert_eq!(index.k_nearest(&[0.0, 0.0], 10, None).len(), 3);
        assert!(index.k_nearest(&[0.0, 0.0], 0, None).is_empty());
    }

    #[test]
    fn equal_distance_ties_prefer_lower_ids() {
        // Four corners of a square, query at the center.
        let points = vec![
            vec![1.0, 1.0],
            vec![-1.0, 1.0],
            vec![-1.0, -1.0],
            vec![1.0, -1.0],
        ];
        let index = KnnIndex::build(2, flat(&points));
        let got = index.k_nearest(&[0.0, 0.0], 2, None);
        assert_eq!(got.iter().map(|&(_, i)| i).collect::<Vec<_>>(), vec![0, 1]);
    }
}
