//! Point clouds, rigid poses, and scanblocks.
//!
//! A scanblock fuses `k` consecutive frames into the first frame's
//! coordinate system, densifying the observation before normal
//! estimation. All types are immutable after construction and all
//! operations are pure.

pub mod io;

use std::collections::HashMap;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = Vector3<f64>;

pub fn point_is_finite(p: &Point3) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.z.is_finite()
}

/// Rigid transform: proper rotation plus translation.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose from a raw rotation matrix, checking orthonormality
    /// and det = +1 within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if ortho_err > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "rotation is not orthonormal (max residual {ortho_err:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "rotation determinant {det} is not +1"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("pose translation".into()));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    /// Scalar-last quaternion (x, y, z, w); renormalized before use.
    pub fn from_quaternion(t: Vec3, qx: f64, qy: f64, qz: f64, qw: f64) -> Result<Self> {
        let norm = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::InvalidInput("quaternion has near-zero norm".into()));
        }
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(qw, qx, qy, qz));
        Pose::new(q.to_rotation_matrix().into_inner(), t)
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation about the z axis, for tests and simple trajectories.
    pub fn from_rotation_z(angle: f64) -> Self {
        Pose {
            rotation: nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), angle).into_inner(),
            translation: Vec3::zeros(),
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// self ∘ other: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }
}

/// Points with optional unit normals, plus the sensor origin they were
/// measured from (in the same frame as the points).
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub normals: Option<Vec<Vec3>>,
    pub sensor_origin: Point3,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        PointCloud {
            points,
            normals: None,
            sensor_origin: Point3::origin(),
        }
    }

    pub fn with_origin(points: Vec<Point3>, origin: Point3) -> Self {
        PointCloud {
            points,
            normals: None,
            sensor_origin: origin,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks finiteness, normal count, and unit norm within 1e-6.
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !point_is_finite(p) {
                return Err(Error::NonFinite(format!("point {i}")));
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.points.len() {
                return Err(Error::InvalidInput(format!(
                    "normal count {} does not match point count {}",
                    normals.len(),
                    self.points.len()
                )));
            }
            for (i, n) in normals.iter().enumerate() {
                if !n.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite(format!("normal {i}")));
                }
                if (n.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidInput(format!(
                        "normal {i} has norm {}",
                        n.norm()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Maps every point to `R·p + t`, normals to `R·n`, and the sensor
/// origin along with them.
pub fn transform_cloud(cloud: &PointCloud, pose: &Pose) -> PointCloud {
    PointCloud {
        points: cloud
            .points
            .iter()
            .map(|p| pose.transform_point(p))
            .collect(),
        normals: cloud
            .normals
            .as_ref()
            .map(|ns| ns.iter().map(|n| pose.transform_vector(n)).collect()),
        sensor_origin: pose.transform_point(&cloud.sensor_origin),
    }
}

/// A group of consecutive frames fused into the first frame's
/// coordinate system.
#[derive(Debug, Clone)]
pub struct ScanBlock {
    pub base_pose: Pose,
    pub cloud: PointCloud,
    pub frame_count: usize,
    /// One origin per contributing frame, in the block frame.
    pub sensor_origins: Vec<Point3>,
    /// Index of the contributing frame for every point in `cloud`.
    pub frame_of_point: Vec<u32>,
}

impl ScanBlock {
    /// Origin of the frame that measured point `i`.
    pub fn origin_of_point(&self, i: usize) -> Point3 {
        self.sensor_origins[self.frame_of_point[i] as usize]
    }

    /// The same block expressed in world coordinates.
    pub fn to_world(&self) -> ScanBlock {
        let cloud = transform_cloud(&self.cloud, &self.base_pose);
        ScanBlock {
            base_pose: self.base_pose.clone(),
            cloud,
            frame_count: self.frame_count,
            sensor_origins: self
                .sensor_origins
                .iter()
                .map(|o| self.base_pose.transform_point(o))
                .collect(),
            frame_of_point: self.frame_of_point.clone(),
        }
    }
}

/// Fuses up to `k` frames: frame 0 is kept as-is, frame i is mapped by
/// `T_0^{-1}·T_i` so everything lands in frame 0's coordinates.
pub fn build_scanblock(frames: &[(Pose, PointCloud)], k: usize) -> Result<ScanBlock> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("scanblock needs at least one frame".into()));
    }
    if frames.len() > k {
        return Err(Error::InvalidInput(format!(
            "got {} frames for scanblock size {k}",
            frames.len()
        )));
    }
    let base_pose = frames[0].0.clone();
    let base_inv = base_pose.inverse();

    let mut points = Vec::new();
    let mut normals: Option<Vec<Vec3>> = frames[0].1.normals.as_ref().map(|_| Vec::new());
    let mut sensor_origins = Vec::with_capacity(frames.len());
    let mut frame_of_point = Vec::new();

    for (i, (pose, cloud)) in frames.iter().enumerate() {
        let rel = base_inv.compose(pose);
        let mapped = transform_cloud(cloud, &rel);
        frame_of_point.extend(std::iter::repeat(i as u32).take(mapped.points.len()));
        points.extend_from_slice(&mapped.points);
        match (&mut normals, &mapped.normals) {
            (Some(acc), Some(ns)) => acc.extend_from_slice(ns),
            (Some(_), None) => normals = None,
            _ => {}
        }
        sensor_origins.push(mapped.sensor_origin);
    }
    if points.is_empty() {
        return Err(Error::InvalidInput("scanblock cloud is empty".into()));
    }

    Ok(ScanBlock {
        base_pose,
        cloud: PointCloud {
            points,
            normals,
            sensor_origin: sensor_origins[0],
        },
        frame_count: frames.len(),
        sensor_origins,
        frame_of_point,
    })
}

pub(crate) fn voxel_key(p: &Point3, voxel: f64) -> (i64, i64, i64) {
    (
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    )
}

/// Replaces each occupied voxel with the centroid of its points.
/// Normals are averaged and renormalized. Output order follows sorted
/// voxel keys so results never depend on hash order.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel > 0.0) {
        return Err(Error::InvalidInput(format!("voxel size {voxel} must be positive")));
    }
    struct Cell {
        sum: Vec3,
        normal_sum: Vec3,
        count: usize,
        first: usize,
    }
    let mut cells: HashMap<(i64, i64, i64), Cell> = HashMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let key = voxel_key(p, voxel);
        let cell = cells.entry(key).or_insert(Cell {
            sum: Vec3::zeros(),
            normal_sum: Vec3::zeros(),
            count: 0,
            first: i,
        });
        cell.sum += p.coords;
        if let Some(ns) = &cloud.normals {
            cell.normal_sum += ns[i];
        }
        cell.count += 1;
    }

    let mut keys: Vec<_> = cells.keys().copied().collect();
    keys.sort_unstable();

    let mut points = Vec::with_capacity(keys.len());
    let mut normals = cloud.normals.as_ref().map(|_| Vec::with_capacity(keys.len()));
    for key in keys {
        let cell = &cells[&key];
        points.push(Point3::from(cell.sum / cell.count as f64));
        if let Some(acc) = &mut normals {
            let n = cell.normal_sum;
            let norm = n.norm();
            if norm > 1e-9 {
                acc.push(n / norm);
            } else {
                // cancelling normals in one voxel: fall back to the first
                acc.push(cloud.normals.as_ref().unwrap()[cell.first]);
            }
        }
    }

    Ok(PointCloud {
        points,
        normals,
        sensor_origin: cloud.sensor_origin,
    })
}

/// Axis-aligned bounds of a point set.
pub fn bounding_box(points: &[Point3]) -> Option<(Point3, Point3)> {
    let first = points.first()?;
    let mut min = *first;
    let mut max = *first;
    for p in points {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        min.z = min.z.min(p.z);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
        max.z = max.z.max(p.z);
    }
    Some((min, max))
}

/// Groups a frame sequence into scanblocks of `k` frames, emitting a
/// partial trailing block when the trajectory length is not a multiple
/// of `k`.
pub fn partition_into_blocks(frames: &[(Pose, PointCloud)], k: usize) -> Result<Vec<ScanBlock>> {
    if k == 0 {
        return Err(Error::InvalidInput("scanblock size must be positive".into()));
    }
    frames.chunks(k).map(|chunk| build_scanblock(chunk, k)).collect()
}
