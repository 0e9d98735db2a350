//! Normal estimation and orientation for scanblocks.
//!
//! PCA normals from radius neighborhoods, oriented by flipping toward a
//! multi-segment centroid polyline, then smoothed by the L0 scheme in
//! [`l0`].

pub mod l0;

use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{bounding_box, Point3, ScanBlock, Vec3};
use crate::spatial::KdTree;

/// Per-point neighbor lists within radius `r`, capped at `k_max`,
/// sorted by (distance, index), self excluded.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    pub neighbors: Vec<Vec<u32>>,
}

impl NeighborGraph {
    pub fn build(points: &[Point3], radius: f64, k_max: usize) -> NeighborGraph {
        let tree = KdTree::build(points);
        let neighbors = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                tree.knn_within(p, k_max + 1, radius)
                    .into_iter()
                    .filter(|(j, _)| *j != i)
                    .take(k_max)
                    .map(|(j, _)| j as u32)
                    .collect()
            })
            .collect();
        NeighborGraph { neighbors }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }
}

/// Parameters for estimation, orientation, and L0 smoothing.
#[derive(Debug, Clone)]
pub struct SmoothingConfig {
    pub radius: f64,
    pub k_max: usize,
    pub beta: f64,
    pub eta: f64,
    pub beta_max: f64,
    pub n_segments: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            radius: 2.0,
            k_max: 20,
            beta: 1.0,
            eta: 0.1,
            beta_max: 64.0,
            n_segments: 5,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::Config("smoothing radius must be positive".into()));
        }
        if self.k_max < 3 {
            return Err(Error::Config("k_max must be at least 3".into()));
        }
        if !(self.beta > 0.0) || !(self.eta > 0.0) {
            return Err(Error::Config("beta and eta must be positive".into()));
        }
        if !(self.beta_max > self.beta) {
            return Err(Error::Config("beta_max must exceed beta".into()));
        }
        if self.n_segments < 2 {
            return Err(Error::Config("need at least 2 segments".into()));
        }
        Ok(())
    }
}

/// Normal estimate with per-point status flags.
#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub normals: Vec<Vec3>,
    /// Too few neighbors for PCA; excluded from smoothing and sampling.
    pub degenerate: Vec<bool>,
    /// Zero projection during orientation; direction is arbitrary.
    pub unoriented: Vec<bool>,
}

impl NormalEstimate {
    pub fn usable(&self, i: usize) -> bool {
        !self.degenerate[i]
    }
}

/// PCA normals: the eigenvector with the smallest eigenvalue of the
/// neighborhood covariance. Sign is arbitrary at this stage. Points
/// with fewer than 2 neighbors are flagged degenerate.
pub fn estimate_normals_pca(
    block: &ScanBlock,
    graph: &NeighborGraph,
    _cfg: &SmoothingConfig,
) -> Result<NormalEstimate> {
    let points = &block.cloud.points;
    if points.len() < 3 {
        return Err(Error::InvalidInput("need at least 3 points for normals".into()));
    }
    let mut normals = vec![Vec3::new(0.0, 0.0, 1.0); points.len()];
    let mut degenerate = vec![false; points.len()];

    for i in 0..points.len() {
        let nbrs = &graph.neighbors[i];
        if nbrs.len() < 2 {
            degenerate[i] = true;
            continue;
        }
        let mut mean = points[i].coords;
        for &j in nbrs {
            mean += points[j as usize].coords;
        }
        mean /= (nbrs.len() + 1) as f64;

        let mut cov = Matrix3::zeros();
        let d0 = points[i].coords - mean;
        cov += d0 * d0.transpose();
        for &j in nbrs {
            let d = points[j as usize].coords - mean;
            cov += d * d.transpose();
        }
        cov /= (nbrs.len() + 1) as f64;

        // Pick the eigenvector column by its Rayleigh quotient rather
        // than the reported eigenvalue order: nalgebra can return the
        // columns permuted against the eigenvalues on near-diagonal
        // input.
        let eigen = SymmetricEigen::new(cov);
        let mut min_idx = 0;
        let mut min_q = f64::INFINITY;
        for k in 0..3 {
            let v = eigen.eigenvectors.column(k);
            let q = (cov * v).dot(&v);
            if q < min_q {
                min_q = q;
                min_idx = k;
            }
        }
        let n = eigen.eigenvectors.column(min_idx).into_owned();
        let norm = n.norm();
        if norm < 1e-12 {
            degenerate[i] = true;
            continue;
        }
        normals[i] = n / norm;
    }

    Ok(NormalEstimate {
        normals,
        degenerate,
        unoriented: vec![false; points.len()],
    })
}

/// The centroid polyline used for orientation: per-point projection
/// targets are the closest points on the polyline segments adjacent to
/// the point's slab.
#[derive(Debug, Clone)]
pub struct CentroidPolyline {
    /// Axis with the longest bounding-box edge (0, 1, or 2).
    pub primary_axis: usize,
    /// Mass centroids of the non-empty slabs, in slab order.
    pub centroids: Vec<Point3>,
    /// For each point, index into `centroids` for its slab.
    pub slab_of_point: Vec<usize>,
}

/// Splits the block into `n_segments` equal slabs along the longest
/// bounding-box edge and computes per-slab mass centroids. Empty slabs
/// contribute no centroid; their extent is absorbed by neighbors.
pub fn centroid_polyline(block: &ScanBlock, cfg: &SmoothingConfig) -> Result<CentroidPolyline> {
    let points = &block.cloud.points;
    let (min, max) = bounding_box(points)
        .ok_or_else(|| Error::InvalidInput("empty block".into()))?;
    let extents = max - min;
    let mut primary_axis = 0;
    for a in 1..3 {
        if extents[a] > extents[primary_axis] {
            primary_axis = a;
        }
    }
    let span = extents[primary_axis].max(1e-12);
    let slab_width = span / cfg.n_segments as f64;

    let mut sums = vec![Vec3::zeros(); cfg.n_segments];
    let mut counts = vec![0usize; cfg.n_segments];
    let mut raw_slab = Vec::with_capacity(points.len());
    for p in points {
        let u = (p[primary_axis] - min[primary_axis]) / slab_width;
        let s = (u.floor() as isize).clamp(0, cfg.n_segments as isize - 1) as usize;
        sums[s] += p.coords;
        counts[s] += 1;
        raw_slab.push(s);
    }

    // Non-empty slabs form the polyline; empty slabs map to the nearest
    // non-empty one.
    let mut centroids = Vec::new();
    let mut rank_of_slab = vec![usize::MAX; cfg.n_segments];
    for s in 0..cfg.n_segments {
        if counts[s] > 0 {
            rank_of_slab[s] = centroids.len();
            centroids.push(Point3::from(sums[s] / counts[s] as f64));
        }
    }
    if centroids.is_empty() {
        return Err(Error::InvalidInput("no occupied slabs".into()));
    }

    let slab_of_point = raw_slab
        .iter()
        .map(|&s| {
            if rank_of_slab[s] != usize::MAX {
                return rank_of_slab[s];
            }
            // nearest non-empty slab by index distance
            let mut best = usize::MAX;
            let mut best_dist = usize::MAX;
            for t in 0..cfg.n_segments {
                if rank_of_slab[t] != usize::MAX {
                    let dist = s.abs_diff(t);
                    if dist < best_dist {
                        best_dist = dist;
                        best = rank_of_slab[t];
                    }
                }
            }
            best
        })
        .collect();

    Ok(CentroidPolyline {
        primary_axis,
        centroids,
        slab_of_point,
    })
}

fn closest_point_on_segment(p: &Point3, a: &Point3, b: &Point3) -> Point3 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 < 1e-24 {
        return *a;
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    Point3::from(a.coords + ab * t)
}

impl CentroidPolyline {
    /// Vector from point `i` at `p` to its closest point on the polyline
    /// segments adjacent to its slab centroid.
    pub fn projection_vector(&self, i: usize, p: &Point3) -> Vec3 {
        let j = self.slab_of_point[i];
        let mut best = self.centroids[j];
        let mut best_d2 = (best - p).norm_squared();
        if j > 0 {
            let c = closest_point_on_segment(p, &self.centroids[j - 1], &self.centroids[j]);
            let d2 = (c - p).norm_squared();
            if d2 < best_d2 {
                best_d2 = d2;
                best = c;
            }
        }
        if j + 1 < self.centroids.len() {
            let c = closest_point_on_segment(p, &self.centroids[j], &self.centroids[j + 1]);
            let d2 = (c - p).norm_squared();
            if d2 < best_d2 {
                best = c;
            }
        }
        best - p
    }
}

/// Flips each normal toward the centroid polyline: `n` is kept when
/// `n · proj/‖proj‖ ≥ 0` and negated otherwise. Points whose projection
/// is zero keep their direction and are flagged.
pub fn orient_normals_msc_nvo(
    block: &ScanBlock,
    estimate: &NormalEstimate,
    cfg: &SmoothingConfig,
) -> Result<NormalEstimate> {
    let polyline = centroid_polyline(block, cfg)?;
    let mut out = estimate.clone();
    for (i, p) in block.cloud.points.iter().enumerate() {
        if out.degenerate[i] {
            continue;
        }
        let proj = polyline.projection_vector(i, p);
        let norm = proj.norm();
        if norm < 1e-12 {
            out.unoriented[i] = true;
            continue;
        }
        if out.normals[i].dot(&proj) / norm < 0.0 {
            out.normals[i] = -out.normals[i];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PointCloud, Pose};
    use approx::assert_relative_eq;

    pub(crate) fn block_from_points(points: Vec<Point3>) -> ScanBlock {
        let n = points.len();
        ScanBlock {
            base_pose: Pose::identity(),
            cloud: PointCloud::new(points),
            frame_count: 1,
            sensor_origins: vec![Point3::origin()],
            frame_of_point: vec![0; n],
        }
    }

    fn plane_grid(n: usize, spacing: f64) -> Vec<Point3> {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Point3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
            }
        }
        pts
    }

    pub(crate) fn cylinder_points(
        radius: f64,
        length: f64,
        n_axial: usize,
        n_angular: usize,
    ) -> Vec<Point3> {
        let mut pts = Vec::new();
        for i in 0..n_axial {
            let x = length * i as f64 / (n_axial - 1) as f64;
            for j in 0..n_angular {
                let a = std::f64::consts::TAU * j as f64 / n_angular as f64;
                pts.push(Point3::new(x, radius * a.cos(), radius * a.sin()));
            }
        }
        pts
    }

    #[test]
    fn planar_points_get_z_normals() {
        let block = block_from_points(plane_grid(12, 0.3));
        let cfg = SmoothingConfig::default();
        let graph = NeighborGraph::build(&block.cloud.points, cfg.radius, cfg.k_max);
        let est = estimate_normals_pca(&block, &graph, &cfg).unwrap();
        for (i, n) in est.normals.iter().enumerate() {
            assert!(!est.degenerate[i]);
            assert!(n.z.abs() > 1.0 - 1e-6, "normal {n:?} not ±z");
            assert_relative_eq!(n.norm(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn cylinder_normals_are_radial_within_two_degrees() {
        // near-isotropic 0.1 m sampling keeps the PCA patch symmetric
        let block = block_from_points(cylinder_points(3.0, 6.0, 60, 188));
        let cfg = SmoothingConfig {
            radius: 0.5,
            ..SmoothingConfig::default()
        };
        let graph = NeighborGraph::build(&block.cloud.points, cfg.radius, cfg.k_max);
        let est = estimate_normals_pca(&block, &graph, &cfg).unwrap();
        let tol = (2.0f64).to_radians().cos();
        for (i, p) in block.cloud.points.iter().enumerate() {
            let radial = Vec3::new(0.0, p.y, p.z).normalize();
            let align = est.normals[i].dot(&radial).abs();
            assert!(align >= tol, "point {i} normal off radial: cos={align}");
        }
    }

    #[test]
    fn isolated_point_is_degenerate() {
        let mut pts = plane_grid(6, 0.3);
        pts.push(Point3::new(100.0, 100.0, 100.0));
        let block = block_from_points(pts);
        let cfg = SmoothingConfig::default();
        let graph = NeighborGraph::build(&block.cloud.points, cfg.radius, cfg.k_max);
        let est = estimate_normals_pca(&block, &graph, &cfg).unwrap();
        assert!(est.degenerate[est.degenerate.len() - 1]);
    }

    #[test]
    fn graph_excludes_self_and_respects_radius() {
        let pts = plane_grid(8, 0.5);
        let graph = NeighborGraph::build(&pts, 1.0, 6);
        for (i, nbrs) in graph.neighbors.iter().enumerate() {
            assert!(!nbrs.contains(&(i as u32)));
            assert!(nbrs.len() <= 6);
            for &j in nbrs {
                assert!((pts[i] - pts[j as usize]).norm() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn hollow_cylinder_normals_point_inward() {
        let block = block_from_points(cylinder_points(3.0, 20.0, 80, 40));
        let cfg = SmoothingConfig {
            radius: 1.0,
            ..SmoothingConfig::default()
        };
        let graph = NeighborGraph::build(&block.cloud.points, cfg.radius, cfg.k_max);
        let est = estimate_normals_pca(&block, &graph, &cfg).unwrap();
        let oriented = orient_normals_msc_nvo(&block, &est, &cfg).unwrap();
        for (i, p) in block.cloud.points.iter().enumerate() {
            if oriented.degenerate[i] || oriented.unoriented[i] {
                continue;
            }
            // toward the axis: n · (axis_point − p) ≥ 0
            let to_axis = Vec3::new(0.0, -p.y, -p.z);
            assert!(
                oriented.normals[i].dot(&to_axis) >= 0.0,
                "point {i} normal points outward"
            );
        }
    }

    #[test]
    fn orientation_postcondition_holds() {
        let block = block_from_points(cylinder_points(2.0, 15.0, 50, 30));
        let cfg = SmoothingConfig::default();
        let graph = NeighborGraph::build(&block.cloud.points, cfg.radius, cfg.k_max);
        let est = estimate_normals_pca(&block, &graph, &cfg).unwrap();
        let oriented = orient_normals_msc_nvo(&block, &est, &cfg).unwrap();
        let polyline = centroid_polyline(&block, &cfg).unwrap();
        for (i, p) in block.cloud.points.iter().enumerate() {
            if oriented.degenerate[i] || oriented.unoriented[i] {
                continue;
            }
            let proj = polyline.projection_vector(i, p);
            assert!(oriented.normals[i].dot(&proj.normalize()) >= 0.0);
        }
    }

    #[test]
    fn zero_projection_flags_point() {
        // a point exactly on the centroid line
        let mut pts = cylinder_points(1.0, 10.0, 40, 20);
        pts.push(Point3::new(5.0, 0.0, 0.0));
        let idx = pts.len() - 1;
        let block = block_from_points(pts);
        let cfg = SmoothingConfig::default();
        let graph = NeighborGraph::build(&block.cloud.points, cfg.radius, cfg.k_max);
        let est = estimate_normals_pca(&block, &graph, &cfg).unwrap();
        let before = est.normals[idx];
        let oriented = orient_normals_msc_nvo(&block, &est, &cfg).unwrap();
        assert!(oriented.unoriented[idx]);
        assert_eq!(oriented.normals[idx], before);
    }

    #[test]
    fn boundary_dot_zero_keeps_normal() {
        // Eq-boundary: a normal orthogonal to its projection stays put.
        let block = block_from_points(cylinder_points(2.0, 10.0, 30, 20));
        let cfg = SmoothingConfig::default();
        let graph = NeighborGraph::build(&block.cloud.points, cfg.radius, cfg.k_max);
        let mut est = estimate_normals_pca(&block, &graph, &cfg).unwrap();
        let polyline = centroid_polyline(&block, &cfg).unwrap();
        let p = block.cloud.points[0];
        let proj = polyline.projection_vector(0, &p).normalize();
        // build a unit vector orthogonal to proj
        let mut orth = proj.cross(&Vec3::new(0.0, 0.0, 1.0));
        if orth.norm() < 1e-6 {
            orth = proj.cross(&Vec3::new(0.0, 1.0, 0.0));
        }
        est.normals[0] = orth.normalize();
        let oriented = orient_normals_msc_nvo(&block, &est, &cfg).unwrap();
        assert_relative_eq!(
            oriented.normals[0].dot(&est.normals[0]),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn empty_slabs_are_merged() {
        // two clusters far apart leave middle slabs empty
        let mut pts = plane_grid(5, 0.2);
        for p in plane_grid(5, 0.2) {
            pts.push(Point3::new(p.x + 30.0, p.y, p.z));
        }
        let block = block_from_points(pts);
        let cfg = SmoothingConfig::default();
        let polyline = centroid_polyline(&block, &cfg).unwrap();
        assert!(polyline.centroids.len() >= 2);
        assert!(polyline.slab_of_point.iter().all(|&s| s < polyline.centroids.len()));
    }
}
