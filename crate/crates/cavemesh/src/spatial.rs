//! Exact nearest-neighbor search over 3D points.
//!
//! A median-split kd-tree with deterministic construction (ties broken
//! by point index). Metric code requires exact results, so every query
//! is exhaustive within its pruning bounds; there is no approximation.

use crate::geometry::Point3;

#[derive(Debug, Clone)]
struct Node {
    /// Index into `points`.
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    nodes: Vec<Node>,
    root: i32,
}

impl KdTree {
    pub fn build(points: &[Point3]) -> KdTree {
        let mut tree = KdTree {
            points: points.to_vec(),
            nodes: Vec::with_capacity(points.len()),
            root: -1,
        };
        let mut indices: Vec<u32> = (0..points.len() as u32).collect();
        tree.root = tree.build_rec(&mut indices, 0);
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_rec(&mut self, indices: &mut [u32], depth: usize) -> i32 {
        if indices.is_empty() {
            return -1;
        }
        let axis = (depth % 3) as u8;
        let mid = indices.len() / 2;
        indices.select_nth_unstable_by(mid, |&a, &b| {
            let ca = self.points[a as usize][axis as usize];
            let cb = self.points[b as usize][axis as usize];
            ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
        });
        let point = indices[mid];
        let node_idx = self.nodes.len() as i32;
        self.nodes.push(Node {
            point,
            axis,
            left: -1,
            right: -1,
        });
        let (lo, rest) = indices.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = self.build_rec(lo, depth + 1);
        let right = self.build_rec(hi, depth + 1);
        self.nodes[node_idx as usize].left = left;
        self.nodes[node_idx as usize].right = right;
        node_idx
    }

    /// Index and distance of the nearest point, `None` on an empty tree.
    /// Distance ties resolve to the lowest index.
    pub fn nearest(&self, query: &Point3) -> Option<(usize, f64)> {
        if self.root < 0 {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(self.root, query, &mut best);
        Some((best.0, best.1.sqrt()))
    }

    fn nearest_rec(&self, node_idx: i32, query: &Point3, best: &mut (usize, f64)) {
        if node_idx < 0 {
            return;
        }
        let node = &self.nodes[node_idx as usize];
        let p = &self.points[node.point as usize];
        let d2 = (p - query).norm_squared();
        if d2 < best.1 || (d2 == best.1 && (node.point as usize) < best.0) {
            *best = (node.point as usize, d2);
        }
        let axis = node.axis as usize;
        let diff = query[axis] - p[axis];
        let (near, far) = if diff <= 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.nearest_rec(near, query, best);
        if diff * diff <= best.1 {
            self.nearest_rec(far, query, best);
        }
    }

    /// All points within `radius`, sorted by (distance, index).
    pub fn within_radius(&self, query: &Point3, radius: f64) -> Vec<(usize, f64)> {
        let mut hits = Vec::new();
        if self.root >= 0 {
            self.radius_rec(self.root, query, radius * radius, &mut hits);
        }
        hits.sort_unstable_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        for hit in &mut hits {
            hit.1 = hit.1.sqrt();
        }
        hits
    }

    fn radius_rec(&self, node_idx: i32, query: &Point3, r2: f64, hits: &mut Vec<(usize, f64)>) {
        if node_idx < 0 {
            return;
        }
        let node = &self.nodes[node_idx as usize];
        let p = &self.points[node.point as usize];
        let d2 = (p - query).norm_squared();
        if d2 <= r2 {
            hits.push((node.point as usize, d2));
        }
        let axis = node.axis as usize;
        let diff = query[axis] - p[axis];
        let (near, far) = if diff <= 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.radius_rec(near, query, r2, hits);
        if diff * diff <= r2 {
            self.radius_rec(far, query, r2, hits);
        }
    }

    /// Up to `k` nearest points within `radius`, sorted by (distance, index).
    pub fn knn_within(&self, query: &Point3, k: usize, radius: f64) -> Vec<(usize, f64)> {
        let mut hits = self.within_radius(query, radius);
        hits.truncate(k);
        hits
    }
}
