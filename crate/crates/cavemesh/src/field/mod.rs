//! Point-based neural signed distance field.
//!
//! The map keeps one neural point per grid cell at pitch `ρ`. A query
//! gathers the nearest points within `2ρ`, decodes each from
//! `[feature ‖ (x − position)/ρ]`, and blends the outputs with
//! inverse-distance weights. Training fits decoder weights and touched
//! features against normal-guided SDF labels.

pub mod decoder;
pub mod sampling;
pub mod train;

use std::collections::HashMap;

use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{Point3, ScanBlock, Vec3};
use crate::rng::{rng_for, Stream};

pub use decoder::{Decoder, FEATURE_DIM};

/// Neighbors gathered for interpolation.
pub const K_QUERY: usize = 6;

/// Map primitive: a position with a latent feature conditioning the
/// decoder.
#[derive(Debug, Clone)]
pub struct NeuralPoint {
    pub position: Point3,
    pub feature: [f64; FEATURE_DIM],
    pub update_count: u64,
}

/// One field evaluation.
#[derive(Debug, Clone, Copy)]
pub struct FieldSample {
    pub value: f64,
    pub valid: bool,
    /// Neural points within the query radius (not capped at the
    /// interpolation count).
    pub support: usize,
}

/// Anything the mesher can sample. Implemented by the neural map and by
/// analytic test fields.
pub trait SdfField {
    fn sample_at(&self, p: &Point3) -> FieldSample;
    /// Support count without evaluating the field.
    fn support_at(&self, p: &Point3) -> usize {
        self.sample_at(p).support
    }
    /// Support counts for a whole extraction lattice:
    /// `origin + (ix, iy, iz)·voxel` flattened as `(ix·ny + iy)·nz + iz`.
    fn support_grid(&self, origin: &Point3, dims: [usize; 3], voxel: f64) -> Vec<usize> {
        let mut out = vec![0; dims[0] * dims[1] * dims[2]];
        let mut i = 0;
        for ix in 0..dims[0] {
            for iy in 0..dims[1] {
                for iz in 0..dims[2] {
                    out[i] = self.support_at(&Point3::new(
                        origin.x + ix as f64 * voxel,
                        origin.y + iy as f64 * voxel,
                        origin.z + iz as f64 * voxel,
                    ));
                    i += 1;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct NeuralPointMap {
    pub pitch: f64,
    pub truncation: f64,
    pub points: Vec<NeuralPoint>,
    pub decoder: Decoder,
    cells: HashMap<(i64, i64, i64), u32>,
    init_rng: ChaCha12Rng,
}

const WEIGHT_EPS: f64 = 1e-9;

impl NeuralPointMap {
    pub fn new(pitch: f64, truncation: f64, seed: u64) -> NeuralPointMap {
        let mut init_rng = rng_for(seed, Stream::FieldInit);
        let decoder = Decoder::init(&mut init_rng);
        NeuralPointMap {
            pitch,
            truncation,
            points: Vec::new(),
            decoder,
            cells: HashMap::new(),
            init_rng,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn set_truncation(&mut self, tr: f64) {
        self.truncation = tr;
    }

    fn cell_of(&self, p: &Point3) -> (i64, i64, i64) {
        crate::geometry::voxel_key(p, self.pitch)
    }

    /// Inserts a neural point for every newly touched cell, keeps
    /// existing features, and bumps `update_count` once per touched
    /// cell. The block must be in world coordinates.
    pub fn update(&mut self, block: &ScanBlock) {
        let gauss = Normal::new(0.0, 0.01).unwrap();
        let mut touched: Vec<u32> = Vec::new();
        for p in &block.cloud.points {
            let key = self.cell_of(p);
            let idx = match self.cells.get(&key) {
                Some(&idx) => idx,
                None => {
                    let mut feature = [0.0; FEATURE_DIM];
                    for v in &mut feature {
                        *v = gauss.sample(&mut self.init_rng);
                    }
                    let idx = self.points.len() as u32;
                    self.points.push(NeuralPoint {
                        position: *p,
                        feature,
                        update_count: 0,
                    });
                    self.cells.insert(key, idx);
                    idx
                }
            };
            touched.push(idx);
        }
        touched.sort_unstable();
        touched.dedup();
        for idx in touched {
            self.points[idx as usize].update_count += 1;
        }
    }

    /// Exact nearest neural points within `2ρ`, sorted by (distance,
    /// index), truncated to `k`. Returns the uncapped in-radius count
    /// alongside.
    pub fn gather(&self, x: &Point3, k: usize) -> (Vec<(u32, f64)>, usize) {
        let radius = 2.0 * self.pitch;
        let r2 = radius * radius;
        let c = self.cell_of(x);
        let mut hits: Vec<(u32, f64)> = Vec::new();
        for dx in -2..=2i64 {
            for dy in -2..=2i64 {
                for dz in -2..=2i64 {
                    if let Some(&idx) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                        let d2 = (self.points[idx as usize].position - x).norm_squared();
                        if d2 <= r2 {
                            hits.push((idx, d2));
                        }
                    }
                }
            }
        }
        hits.sort_unstable_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        let support = hits.len();
        hits.truncate(k);
        for h in &mut hits {
            h.1 = h.1.sqrt();
        }
        (hits, support)
    }

    /// Support count alone, without sorting or decoding.
    pub fn support_count(&self, x: &Point3) -> usize {
        let radius = 2.0 * self.pitch;
        let r2 = radius * radius;
        let c = self.cell_of(x);
        let mut count = 0;
        for dx in -2..=2i64 {
            for dy in -2..=2i64 {
                for dz in -2..=2i64 {
                    if let Some(&idx) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                        if (self.points[idx as usize].position - x).norm_squared() <= r2 {
                            count += 1;
                        }
                    }
                }
            }
        }
        count
    }

    fn decode_neighbor(&self, idx: u32, x: &Point3) -> f64 {
        let np = &self.points[idx as usize];
        let offset = (x - np.position) / self.pitch;
        self.decoder
            .forward(&np.feature, &[offset.x, offset.y, offset.z])
            .output
    }

    /// Field value at `x`: inverse-distance blend of decoded neighbor
    /// outputs. With no neighbors in radius the value is `+truncation`
    /// and the sample is invalid.
    pub fn query(&self, x: &Point3) -> FieldSample {
        let (neighbors, support) = self.gather(x, K_QUERY);
        if neighbors.is_empty() {
            return FieldSample {
                value: self.truncation,
                valid: false,
                support,
            };
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for &(idx, d) in &neighbors {
            let w = 1.0 / (d + WEIGHT_EPS);
            num += w * self.decode_neighbor(idx, x);
            den += w;
        }
        FieldSample {
            value: num / den,
            valid: true,
            support,
        }
    }

    /// Analytic spatial gradient of [`Self::query`], differentiating
    /// both the decoder inputs and the inverse-distance weights.
    /// `None` when the query has no neighbors.
    pub fn query_gradient(&self, x: &Point3) -> Option<Vec3> {
        let (neighbors, _) = self.gather(x, K_QUERY);
        if neighbors.is_empty() {
            return None;
        }
        let mut outputs = Vec::with_capacity(neighbors.len());
        let mut weights = Vec::with_capacity(neighbors.len());
        let mut value_grads = Vec::with_capacity(neighbors.len());
        let mut weight_grads = Vec::with_capacity(neighbors.len());
        let mut num = 0.0;
        let mut den = 0.0;
        for &(idx, d) in &neighbors {
            let np = &self.points[idx as usize];
            let offset = (x - np.position) / self.pitch;
            let acts = self.decoder.forward(&np.feature, &[offset.x, offset.y, offset.z]);
            let og = self.decoder.offset_gradient(&acts);
            let dy_dx = Vec3::new(og[0], og[1], og[2]) / self.pitch;
            let w = 1.0 / (d + WEIGHT_EPS);
            let dw_dx = if d > 1e-12 {
                -(x - np.position) / (d * (d + WEIGHT_EPS) * (d + WEIGHT_EPS))
            } else {
                Vec3::zeros()
            };
            num += w * acts.output;
            den += w;
            outputs.push(acts.output);
            weights.push(w);
            value_grads.push(dy_dx);
            weight_grads.push(dw_dx);
        }
        let pred = num / den;
        let mut grad = Vec3::zeros();
        for i in 0..outputs.len() {
            grad += weight_grads[i] * (outputs[i] - pred) + value_grads[i] * weights[i];
        }
        Some(grad / den)
    }
}

impl SdfField for NeuralPointMap {
    fn sample_at(&self, p: &Point3) -> FieldSample {
        self.query(p)
    }

    fn support_at(&self, p: &Point3) -> usize {
        self.support_count(p)
    }

    /// Splats each neural point onto the lattice nodes it supports;
    /// node-for-node identical to [`Self::support_count`] but one pass
    /// over the map instead of a neighborhood scan per node.
    fn support_grid(&self, origin: &Point3, dims: [usize; 3], voxel: f64) -> Vec<usize> {
        let mut out = vec![0usize; dims[0] * dims[1] * dims[2]];
        let radius = 2.0 * self.pitch;
        let r2 = radius * radius;
        for np in &self.points {
            let p = np.position;
            let lo = [
                (((p.x - radius - origin.x) / voxel).ceil().max(0.0)) as usize,
                (((p.y - radius - origin.y) / voxel).ceil().max(0.0)) as usize,
                (((p.z - radius - origin.z) / voxel).ceil().max(0.0)) as usize,
            ];
            let hi = [
                (((p.x + radius - origin.x) / voxel).floor()).min(dims[0] as f64 - 1.0),
                (((p.y + radius - origin.y) / voxel).floor()).min(dims[1] as f64 - 1.0),
                (((p.z + radius - origin.z) / voxel).floor()).min(dims[2] as f64 - 1.0),
            ];
            if hi.iter().any(|&h| h < 0.0) {
                continue;
            }
            let hi = [hi[0] as usize, hi[1] as usize, hi[2] as usize];
            for ix in lo[0]..=hi[0] {
                let dx = origin.x + ix as f64 * voxel - p.x;
                for iy in lo[1]..=hi[1] {
                    let dy = origin.y + iy as f64 * voxel - p.y;
                    let dxy = dx * dx + dy * dy;
                    if dxy > r2 {
                        continue;
                    }
                    for iz in lo[2]..=hi[2] {
                        let dz = origin.z + iz as f64 * voxel - p.z;
                        if dxy + dz * dz <= r2 {
                            out[(ix * dims[1] + iy) * dims[2] + iz] += 1;
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PointCloud, Pose};
    use approx::assert_relative_eq;
    use rand::Rng;

    pub(crate) fn block_of(points: Vec<Point3>) -> ScanBlock {
        let n = points.len();
        ScanBlock {
            base_pose: Pose::identity(),
            cloud: PointCloud::new(points),
            frame_count: 1,
            sensor_origins: vec![Point3::origin()],
            frame_of_point: vec![0; n],
        }
    }

    #[test]
    fn single_point_creates_one_neural_point() {
        let mut map = NeuralPointMap::new(0.3, 0.15, 1);
        map.update(&block_of(vec![Point3::new(0.1, 0.1, 0.1)]));
        assert_eq!(map.len(), 1);
        assert_eq!(map.points[0].update_count, 1);
    }

    #[test]
    fn repeated_block_doubles_update_count_only() {
        let mut map = NeuralPointMap::new(0.3, 0.15, 1);
        let block = block_of(vec![
            Point3::new(0.1, 0.1, 0.1),
            Point3::new(0.12, 0.1, 0.1),
            Point3::new(1.0, 1.0, 1.0),
        ]);
        map.update(&block);
        let count_after_one = map.len();
        let features: Vec<_> = map.points.iter().map(|p| p.feature).collect();
        map.update(&block);
        assert_eq!(map.len(), count_after_one);
        for (np, f) in map.points.iter().zip(features.iter()) {
            assert_eq!(np.feature, *f);
            assert_eq!(np.update_count, 2);
        }
    }

    #[test]
    fn tube_shell_point_count_tracks_area_estimate() {
        // tube radius 2, length 20, pitch 0.3: shell area ≈ 2π·2·20
        let mut pts = Vec::new();
        for i in 0..400 {
            let x = 20.0 * i as f64 / 399.0;
            for j in 0..120 {
                let a = std::f64::consts::TAU * j as f64 / 120.0;
                pts.push(Point3::new(x, 2.0 * a.cos(), 2.0 * a.sin()));
            }
        }
        let mut map = NeuralPointMap::new(0.3, 0.15, 2);
        map.update(&block_of(pts));
        let estimate = std::f64::consts::TAU * 2.0 * 20.0 / (0.3 * 0.3);
        let n = map.len() as f64;
        assert!(n < 2.0 * estimate, "{n} vs estimate {estimate}");
        assert!(n > estimate / 2.0, "{n} vs estimate {estimate}");
    }

    #[test]
    fn query_at_lone_point_is_decoder_output_at_zero_offset() {
        let mut map = NeuralPointMap::new(0.3, 0.15, 3);
        let p = Point3::new(0.05, 0.05, 0.05);
        map.update(&block_of(vec![p]));
        let direct = map.decode_neighbor(0, &p);
        let sample = map.query(&p);
        assert!(sample.valid);
        assert_eq!(sample.support, 1);
        assert_relative_eq!(sample.value, direct, epsilon = 1e-12);
    }

    #[test]
    fn query_without_neighbors_is_invalid_truncation() {
        let mut map = NeuralPointMap::new(0.3, 0.15, 4);
        map.update(&block_of(vec![Point3::origin()]));
        let sample = map.query(&Point3::new(10.0, 0.0, 0.0));
        assert!(!sample.valid);
        assert_eq!(sample.support, 0);
        assert_eq!(sample.value, 0.15);
    }

    #[test]
    fn query_is_deterministic() {
        let mut map = NeuralPointMap::new(0.3, 0.15, 5);
        let pts: Vec<Point3> = (0..50)
            .map(|i| Point3::new((i % 10) as f64 * 0.2, (i / 10) as f64 * 0.2, 0.0))
            .collect();
        map.update(&block_of(pts));
        let q = Point3::new(0.7, 0.3, 0.1);
        assert_eq!(map.query(&q).value, map.query(&q).value);
    }

    #[test]
    fn gather_matches_brute_force() {
        let mut map = NeuralPointMap::new(0.3, 0.15, 6);
        let mut rng = rng_for(6, Stream::Test(20));
        let pts: Vec<Point3> = (0..300)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                )
            })
            .collect();
        map.update(&block_of(pts));
        for _ in 0..50 {
            let q = Point3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let (hits, support) = map.gather(&q, K_QUERY);
            let mut brute: Vec<(u32, f64)> = map
                .points
                .iter()
                .enumerate()
                .map(|(i, np)| (i as u32, (np.position - q).norm()))
                .filter(|(_, d)| *d <= 0.6)
                .collect();
            brute.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            assert_eq!(support, brute.len());
            brute.truncate(K_QUERY);
            assert_eq!(hits.len(), brute.len());
            for (a, b) in hits.iter().zip(brute.iter()) {
                assert_eq!(a.0, b.0);
                assert_relative_eq!(a.1, b.1, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn support_grid_matches_per_node_counts() {
        let mut map = NeuralPointMap::new(0.3, 0.15, 8);
        let mut rng = rng_for(8, Stream::Test(22));
        let pts: Vec<Point3> = (0..150)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        map.update(&block_of(pts));
        let origin = Point3::new(-1.3, -1.2, -1.1);
        let dims = [9usize, 8, 7];
        let voxel = 0.31;
        let grid = map.support_grid(&origin, dims, voxel);
        let mut i = 0;
        for ix in 0..dims[0] {
            for iy in 0..dims[1] {
                for iz in 0..dims[2] {
                    let p = Point3::new(
                        origin.x + ix as f64 * voxel,
                        origin.y + iy as f64 * voxel,
                        origin.z + iz as f64 * voxel,
                    );
                    assert_eq!(grid[i], map.support_count(&p), "node {ix},{iy},{iz}");
                    i += 1;
                }
            }
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut map = NeuralPointMap::new(0.3, 0.15, 7);
        let mut rng = rng_for(7, Stream::Test(21));
        let pts: Vec<Point3> = (0..200)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                )
            })
            .collect();
        map.update(&block_of(pts));

        let mut checked = 0;
        while checked < 100 {
            let q = Point3::new(
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
            );
            let Some(grad) = map.query_gradient(&q) else {
                continue;
            };
            let h = 1e-6;
            let mut fd = Vec3::zeros();
            let mut stable = true;
            let (center_set, _) = map.gather(&q, K_QUERY);
            for a in 0..3 {
                let mut qp = q;
                let mut qm = q;
                qp[a] += h;
                qm[a] -= h;
                // skip points whose neighbor set changes inside the stencil
                let (sp, _) = map.gather(&qp, K_QUERY);
                let (sm, _) = map.gather(&qm, K_QUERY);
                let same = |s: &Vec<(u32, f64)>| {
                    s.len() == center_set.len()
                        && s.iter().zip(center_set.iter()).all(|(a, b)| a.0 == b.0)
                };
                if !same(&sp) || !same(&sm) {
                    stable = false;
                    break;
                }
                fd[a] = (map.query(&qp).value - map.query(&qm).value) / (2.0 * h);
            }
            if !stable {
                continue;
            }
            let rel = (grad - fd).norm() / grad.norm().max(fd.norm()).max(1e-12);
            assert!(rel < 1e-4, "relative error {rel} at {q:?}");
            checked += 1;
        }
    }
}
