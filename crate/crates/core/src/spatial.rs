//! A static k-d tree over 3D points.
//!
//! All distance decisions go through [`sq_dist`], so callers that need to
//! reproduce a query by brute force get bit-identical comparisons.

use nalgebra::Vector3;

/// Squared Euclidean distance. The single source of truth for every
/// within-radius and nearest-neighbour decision in the crate.
#[inline]
pub fn sq_dist(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split along the axis of largest extent
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis]
                .total_cmp(&points[b][axis])
                .then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Calls `visit(index, squared_distance)` for every point with
    /// `sq_dist(query, p) <= radius²`.
    pub fn for_each_within<F: FnMut(usize, f64)>(&self, query: &Vector3<f64>, radius: f64, mut visit: F) {
        if self.nodes.is_empty() {
            return;
        }
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            match self.nodes[id] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let d2 = sq_dist(query, &self.points[i]);
                        if d2 <= r2 {
                            visit(i, d2);
                        }
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let diff = query[axis] - value;
                    // points equal to the split value can sit on either side
                    let margin = diff * diff;
                    if diff <= 0.0 {
                        stack.push(left);
                        if margin <= r2 {
                            stack.push(right);
                        }
                    } else {
                        stack.push(right);
                        if margin <= r2 {
                            stack.push(left);
                        }
                    }
                }
            }
        }
    }

    pub fn within(&self, query: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(query, radius, |i, _| out.push(i));
        out.sort_unstable();
        out
    }

    pub fn any_within(&self, query: &Vector3<f64>, radius: f64) -> bool {
        // early exit is not worth the extra traversal code at these sizes
        let mut found = false;
        self.for_each_within(query, radius, |_, _| found = true);
        found
    }

    /// Nearest point as `(index, squared distance)`; ties go to the lowest index.
    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        self.k_nearest(query, 1).into_iter().next()
    }

    /// The `k` nearest points sorted by `(squared distance, index)`.
    pub fn k_nearest(&self, query: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        if self.nodes.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        self.knn_visit(0, query, k, &mut best);
        best
    }

    fn knn_visit(&self, id: usize, query: &Vector3<f64>, k: usize, best: &mut Vec<(usize, f64)>) {
        match self.nodes[id] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = sq_dist(query, &self.points[i]);
                    let worse = |e: &(usize, f64)| (e.1, e.0) > (d2, i);
                    if best.len() < k || best.last().is_some_and(worse) {
                        let pos = best.partition_point(|e| (e.1, e.0) < (d2, i));
                        best.insert(pos, (i, d2));
                        best.truncate(k);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.knn_visit(near, query, k, best);
                if best.len() < k || diff * diff <= best[best.len() - 1].1 {
                    self.knn_visit(far, query, k, best);
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

    fn random_points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()))
            .collect()
    }

    #[test]
    fn radius_query_matches_brute_force() {
        let pts = random_points(500, 1);
        let tree = KdTree::new(&pts);
        for q in random_points(50, 2) {
            let expected: Vec<usize> = (0..pts.len()).filter(|&i| sq_dist(&q, &pts[i]) <= 0.04).collect();
            assert_eq!(tree.within(&q, 0.2), expected);
        }
    }

    #[test]
    fn knn_matches_brute_force() {
        let pts = random_points(300, 3);
        let tree = KdTree::new(&pts);
        for q in random_points(30, 4) {
            let mut all: Vec<(usize, f64)> = pts.iter().enumerate().map(|(i, p)| (i, sq_dist(&q, p))).collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            all.truncate(7);
            assert_eq!(tree.k_nearest(&q, 7), all);
        }
    }

    #[test]
    fn duplicate_points_on_split_plane_are_found() {
        let pts = vec![Vector3::new(1.0, 0.0, 0.0); 40];
        let tree = KdTree::new(&pts);
        assert_eq!(tree.within(&Vector3::new(1.0, 0.0, 0.0), 0.0).len(), 40);
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(&[]);
        assert!(tree.nearest(&Vector3::zeros()).is_none());
        assert!(!tree.any_within(&Vector3::zeros(), 1.0));
    }
}
