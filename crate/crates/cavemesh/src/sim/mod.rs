//! Synthetic unexposed scenes and a virtual scanner.
//!
//! A scene is an implicit cavity: distance to a piecewise-cubic
//! centerline minus a perturbed radius, optionally unioned with
//! spherical chambers for cave-like variation. Negative values are
//! inside the cavity. Ground truth is sampled on the zero level set and
//! refined by bisection, the scanner ray-marches the same field, so
//! hits, truth, and the inside test always agree.

pub mod env;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bounding_box, Point3, PointCloud, Pose, Vec3};
use crate::rng::{rng_for, Stream};

/// Scene family: regular tunnels or chambered caves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Tube,
    Cave,
}

/// Generator parameters for one synthetic scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub kind: SceneKind,
    /// Centerline control points for the piecewise-cubic spline.
    pub control_points: Vec<[f64; 3]>,
    pub base_radius: f64,
    /// Amplitude of the slow per-station radius modulation.
    pub station_amplitude: f64,
    /// Spatial frequency (1/m) of the station modulation.
    pub station_frequency: f64,
    /// Amplitude of the lattice-noise surface displacement.
    pub noise_amplitude: f64,
    /// Spatial frequency (1/m) of the surface displacement.
    pub noise_frequency: f64,
    /// Chambers unioned into cave scenes.
    pub chamber_count: usize,
    pub seed: u64,
}

impl SceneSpec {
    /// A gently varying straight tunnel.
    pub fn tube_default(seed: u64) -> SceneSpec {
        SceneSpec {
            kind: SceneKind::Tube,
            control_points: vec![
                [-2.0, 0.0, 0.0],
                [4.0, 0.5, 0.1],
                [9.0, -0.4, -0.1],
                [14.0, 0.3, 0.2],
                [20.0, 0.0, 0.0],
            ],
            base_radius: 2.5,
            station_amplitude: 0.25,
            station_frequency: 0.15,
            noise_amplitude: 0.10,
            noise_frequency: 1.2,
            chamber_count: 0,
            seed,
        }
    }

    /// A curved cave with chambers and stronger relief.
    pub fn cave_default(seed: u64) -> SceneSpec {
        SceneSpec {
            kind: SceneKind::Cave,
            control_points: vec![
                [-2.0, 0.0, 0.0],
                [3.0, 1.5, 0.3],
                [8.0, -1.0, -0.3],
                [13.0, 1.0, 0.4],
                [19.0, -0.5, 0.0],
            ],
            base_radius: 2.5,
            station_amplitude: 0.45,
            station_frequency: 0.20,
            noise_amplitude: 0.30,
            noise_frequency: 0.9,
            chamber_count: 2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.control_points.len() < 2 {
            return Err(Error::Config("need at least two centerline control points".into()));
        }
        if !(self.base_radius > 0.0) {
            return Err(Error::Config("base radius must be positive".into()));
        }
        let reach = self.station_amplitude + self.noise_amplitude;
        if self.base_radius <= 2.0 * reach {
            return Err(Error::Config(format!(
                "base radius {} must exceed twice the perturbation reach {reach}",
                self.base_radius
            )));
        }
        Ok(())
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn lattice_value(seed: u64, ix: i64, iy: i64, iz: i64) -> f64 {
    let h = splitmix(
        seed ^ (ix as u64).wrapping_mul(0x8da6_b343)
            ^ (iy as u64).wrapping_mul(0xd816_3841)
            ^ (iz as u64).wrapping_mul(0xcb1a_b31f),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smooth lattice noise in [−1, 1], trilinear with smoothstep fade.
pub fn value_noise3(seed: u64, p: &Point3) -> f64 {
    let fx = p.x.floor();
    let fy = p.y.floor();
    let fz = p.z.floor();
    let (ix, iy, iz) = (fx as i64, fy as i64, fz as i64);
    let tx = smoothstep(p.x - fx);
    let ty = smoothstep(p.y - fy);
    let tz = smoothstep(p.z - fz);
    let mut acc = 0.0;
    for dx in 0..2i64 {
        let wx = if dx == 0 { 1.0 - tx } else { tx };
        for dy in 0..2i64 {
            let wy = if dy == 0 { 1.0 - ty } else { ty };
            for dz in 0..2i64 {
                let wz = if dz == 0 { 1.0 - tz } else { tz };
                acc += wx * wy * wz * lattice_value(seed, ix + dx, iy + dy, iz + dz);
            }
        }
    }
    acc
}

/// One-dimensional smooth lattice noise in [−1, 1].
pub fn value_noise1(seed: u64, x: f64) -> f64 {
    let fx = x.floor();
    let ix = fx as i64;
    let t = smoothstep(x - fx);
    (1.0 - t) * lattice_value(seed, ix, 0, 0) + t * lattice_value(seed, ix + 1, 0, 0)
}

#[derive(Debug, Clone)]
struct Chamber {
    center: Point3,
    radius: f64,
}

/// A generated scene: centerline polyline, radius field, chambers, and
/// the spatial index for nearest-segment lookups.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    /// Polyline samples at ~0.1 m arc-length spacing.
    stations: Vec<Point3>,
    /// Cumulative arc length per station.
    arc: Vec<f64>,
    chambers: Vec<Chamber>,
    /// Segment indices per culling-grid cell.
    grid: std::collections::HashMap<(i64, i64, i64), Vec<u32>>,
    grid_cell: f64,
    /// Maximum distance from the centerline still considered near.
    reach: f64,
}

/// Distance beyond which the field is reported as this constant.
pub const FAR_FIELD: f64 = 1.0e3;

impl Scene {
    pub fn generate(spec: &SceneSpec) -> Result<Scene> {
        spec.validate()?;
        let stations = sample_centerline(&spec.control_points, 0.1);
        if stations.len() < 2 {
            return Err(Error::Config("centerline is too short".into()));
        }
        let mut arc = Vec::with_capacity(stations.len());
        let mut acc = 0.0;
        arc.push(0.0);
        for w in stations.windows(2) {
            acc += (w[1] - w[0]).norm();
            arc.push(acc);
        }

        // self-intersection check: far-apart stations must not come
        // within two radii
        for i in 0..stations.len() {
            for j in (i + 1)..stations.len() {
                if (arc[j] - arc[i]).abs() > 4.0 * spec.base_radius
                    && (stations[j] - stations[i]).norm() < 2.0 * spec.base_radius
                {
                    return Err(Error::Config(format!(
                        "centerline self-intersects near stations {i} and {j}"
                    )));
                }
            }
        }

        let mut chambers = Vec::new();
        if spec.kind == SceneKind::Cave && spec.chamber_count > 0 {
            let mut rng = rng_for(spec.seed, Stream::SceneGeometry);
            let total = *arc.last().unwrap();
            for k in 0..spec.chamber_count {
                let s = total * (k as f64 + 0.7) / (spec.chamber_count as f64 + 0.4)
                    + rng.gen_range(-0.5..0.5);
                let idx = station_at(&arc, s.clamp(0.0, total));
                let offset = Vec3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(0.0..0.8),
                );
                chambers.push(Chamber {
                    center: Point3::from(stations[idx].coords + offset),
                    radius: spec.base_radius * rng.gen_range(1.2..1.6),
                });
            }
        }

        let chamber_reach = chambers.iter().map(|c| c.radius).fold(0.0, f64::max);
        let reach =
            (spec.base_radius + spec.station_amplitude + spec.noise_amplitude).max(chamber_reach)
                + 1.0;

        let grid_cell = spec.base_radius.max(1.0);
        let mut grid: std::collections::HashMap<(i64, i64, i64), Vec<u32>> =
            std::collections::HashMap::new();
        for (i, w) in stations.windows(2).enumerate() {
            let lo = Point3::new(
                w[0].x.min(w[1].x) - reach,
                w[0].y.min(w[1].y) - reach,
                w[0].z.min(w[1].z) - reach,
            );
            let hi = Point3::new(
                w[0].x.max(w[1].x) + reach,
                w[0].y.max(w[1].y) + reach,
                w[0].z.max(w[1].z) + reach,
            );
            let c_lo = crate::geometry::voxel_key(&lo, grid_cell);
            let c_hi = crate::geometry::voxel_key(&hi, grid_cell);
            for cx in c_lo.0..=c_hi.0 {
                for cy in c_lo.1..=c_hi.1 {
                    for cz in c_lo.2..=c_hi.2 {
                        grid.entry((cx, cy, cz)).or_default().push(i as u32);
                    }
                }
            }
        }

        Ok(Scene {
            spec: spec.clone(),
            stations,
            arc,
            chambers,
            grid,
            grid_cell,
            reach,
        })
    }

    /// Nearest point on the centerline: (arc length, point, distance).
    fn nearest_station(&self, p: &Point3) -> Option<(f64, Point3, f64)> {
        let key = crate::geometry::voxel_key(p, self.grid_cell);
        let segments = self.grid.get(&key)?;
        let mut best: Option<(f64, Point3, f64)> = None;
        for &i in segments {
            let a = self.stations[i as usize];
            let b = self.stations[i as usize + 1];
            let ab = b - a;
            let len2 = ab.norm_squared();
            let t = if len2 > 1e-24 {
                ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = Point3::from(a.coords + ab * t);
            let d = (q - p).norm();
            let s = self.arc[i as usize] + t * len2.sqrt();
            if best.map(|(_, _, bd)| d < bd).unwrap_or(true) {
                best = Some((s, q, d));
            }
        }
        best
    }

    /// Local cavity radius at the axis point for the direction `dir`.
    /// Both modulation terms are functions of position, not arc length;
    /// the field stays continuous where nearest-segment assignment
    /// switches.
    fn radius_at(&self, axis_point: &Point3, dir: &Vec3) -> f64 {
        let probe = Point3::from(axis_point.coords + dir * self.spec.base_radius);
        self.spec.base_radius
            + self.spec.station_amplitude
                * value_noise3(
                    self.spec.seed ^ 0x51a7,
                    &Point3::from(axis_point.coords * self.spec.station_frequency),
                )
            + self.spec.noise_amplitude
                * value_noise3(
                    self.spec.seed ^ 0xf00d,
                    &Point3::from(probe.coords * self.spec.noise_frequency),
                )
    }

    /// Implicit cavity field: negative inside, approximately the
    /// distance to the surface near it, `FAR_FIELD` far away.
    pub fn field(&self, p: &Point3) -> f64 {
        let tube = match self.nearest_station(p) {
            Some((_, q, d)) => {
                if d > self.reach {
                    FAR_FIELD
                } else {
                    let dir = if d > 1e-9 {
                        (p - q) / d
                    } else {
                        Vec3::new(0.0, 0.0, 1.0)
                    };
                    d - self.radius_at(&q, &dir)
                }
            }
            None => FAR_FIELD,
        };
        let chambers = self
            .chambers
            .iter()
            .map(|c| (p - c.center).norm() - c.radius)
            .fold(f64::INFINITY, f64::min);
        tube.min(chambers)
    }

    pub fn inside(&self, p: &Point3) -> bool {
        self.field(p) < 0.0
    }

    pub fn arc_length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    pub fn station_point(&self, s: f64) -> Point3 {
        let idx = station_at(&self.arc, s.clamp(0.0, self.arc_length()));
        self.stations[idx]
    }

    /// Tangent direction at arc position `s`.
    pub fn station_tangent(&self, s: f64) -> Vec3 {
        let idx = station_at(&self.arc, s.clamp(0.0, self.arc_length())).min(self.stations.len() - 2);
        (self.stations[idx + 1] - self.stations[idx]).normalize()
    }

    /// Refines a point onto the zero level set along `dir` by
    /// bisection: `origin + lo·dir` must be inside, `origin + hi·dir`
    /// outside.
    fn refine_root(&self, origin: &Point3, dir: &Vec3, mut lo: f64, mut hi: f64) -> Option<Point3> {
        let f_lo = self.field(&Point3::from(origin.coords + dir.scale(lo)));
        let f_hi = self.field(&Point3::from(origin.coords + dir.scale(hi)));
        if !(f_lo < 0.0 && f_hi >= 0.0) {
            return None;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.field(&Point3::from(origin.coords + dir.scale(mid))) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-10 {
                break;
            }
        }
        Some(Point3::from(origin.coords + dir.scale(0.5 * (lo + hi))))
    }
}

fn station_at(arc: &[f64], s: f64) -> usize {
    match arc.binary_search_by(|a| a.partial_cmp(&s).unwrap()) {
        Ok(i) => i,
        Err(i) => i.saturating_sub(1).min(arc.len() - 1),
    }
}

/// Catmull-Rom spline through the control points, resampled to roughly
/// uniform arc-length spacing.
fn sample_centerline(control: &[[f64; 3]], spacing: f64) -> Vec<Point3> {
    let pts: Vec<Vec3> = control.iter().map(|c| Vec3::new(c[0], c[1], c[2])).collect();
    if pts.len() == 2 {
        let len = (pts[1] - pts[0]).norm();
        let n = (len / spacing).ceil().max(1.0) as usize;
        return (0..=n)
            .map(|i| Point3::from(pts[0] + (pts[1] - pts[0]) * (i as f64 / n as f64)))
            .collect();
    }
    let mut padded = Vec::with_capacity(pts.len() + 2);
    padded.push(pts[0] * 2.0 - pts[1]);
    padded.extend(pts.iter().copied());
    padded.push(pts[pts.len() - 1] * 2.0 - pts[pts.len() - 2]);

    let catmull = |p0: Vec3, p1: Vec3, p2: Vec3, p3: Vec3, t: f64| -> Vec3 {
        let t2 = t * t;
        let t3 = t2 * t;
        0.5 * (2.0 * p1
            + (p2 - p0) * t
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2
            + (3.0 * p1 - 3.0 * p2 - p0 + p3) * t3)
    };

    let mut dense = Vec::new();
    for seg in 0..pts.len() - 1 {
        let p0 = padded[seg];
        let p1 = padded[seg + 1];
        let p2 = padded[seg + 2];
        let p3 = padded[seg + 3];
        let steps = 200;
        for i in 0..steps {
            let t = i as f64 / steps as f64;
            dense.push(catmull(p0, p1, p2, p3, t));
        }
    }
    dense.push(pts[pts.len() - 1]);

    let mut out = vec![Point3::from(dense[0])];
    let mut acc = 0.0;
    for w in dense.windows(2) {
        acc += (w[1] - w[0]).norm();
        if acc >= spacing {
            out.push(Point3::from(w[1]));
            acc = 0.0;
        }
    }
    if (out[out.len() - 1] - Point3::from(dense[dense.len() - 1])).norm() > spacing / 2.0 {
        out.push(Point3::from(dense[dense.len() - 1]));
    }
    out
}

/// Dense reference surface with the analytic inside test of its scene.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub points: Vec<Point3>,
    pub resolution: f64,
}

impl GroundTruth {
    pub fn bounding_box(&self) -> Option<(Point3, Point3)> {
        bounding_box(&self.points)
    }
}

/// Samples the cavity surface at the given resolution. Tube walls are
/// swept in (arc length, angle); chamber shells add their own points.
/// Every output point is refined onto the zero level set.
pub fn generate_ground_truth(scene: &Scene, resolution: f64) -> Result<GroundTruth> {
    let mut points = Vec::new();
    let total = scene.arc_length();
    let mut s = 0.0;
    while s <= total {
        let axis = scene.station_point(s);
        let tangent = scene.station_tangent(s);
        let up = if tangent.z.abs() < 0.9 {
            Vec3::new(0.0, 0.0, 1.0)
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        let u = tangent.cross(&up).normalize();
        let v = tangent.cross(&u).normalize();
        let circumference = std::f64::consts::TAU * scene.spec.base_radius;
        let n_angular = (circumference / resolution).ceil() as usize;
        for k in 0..n_angular {
            let angle = std::f64::consts::TAU * k as f64 / n_angular as f64;
            let dir = u * angle.cos() + v * angle.sin();
            if let Some(p) = scene.refine_root(&axis, &dir, 0.0, scene.reach) {
                points.push(p);
            }
        }
        s += resolution;
    }
    // end caps: the field rounds off into domes beyond the centerline
    // ends; sweep outward-facing directions from each end station
    for (end_s, sign) in [(0.0, -1.0), (total, 1.0)] {
        let axis = scene.station_point(end_s);
        let tangent = scene.station_tangent(end_s) * sign;
        let dome_r = scene.spec.base_radius;
        let n = ((2.0 * std::f64::consts::PI * dome_r * dome_r) / (resolution * resolution))
            .ceil() as usize;
        let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
        for k in 0..n {
            let z = (k as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * k as f64;
            // hemisphere around the outward tangent
            let up = if tangent.z.abs() < 0.9 {
                Vec3::new(0.0, 0.0, 1.0)
            } else {
                Vec3::new(0.0, 1.0, 0.0)
            };
            let u = tangent.cross(&up).normalize();
            let v = tangent.cross(&u).normalize();
            let dir = tangent * z + u * (r * a.cos()) + v * (r * a.sin());
            if let Some(p) = scene.refine_root(&axis, &dir, 0.0, scene.reach) {
                points.push(p);
            }
        }
    }
    // chamber shells beyond the tube
    for chamber in &scene.chambers {
        let n = ((4.0 * std::f64::consts::PI * chamber.radius * chamber.radius)
            / (resolution * resolution))
            .ceil() as usize;
        let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
        for k in 0..n {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * k as f64;
            let dir = Vec3::new(r * a.cos(), r * a.sin(), z);
            if let Some(p) = scene.refine_root(&chamber.center, &dir, 0.0, chamber.radius + 1.0) {
                if (p - chamber.center).norm() > chamber.radius - 1e-6 {
                    points.push(p);
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::Numerical("ground truth came out empty".into()));
    }
    Ok(GroundTruth { points, resolution })
}

/// Virtual scanner parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScannerSpec {
    pub rays_per_frame: usize,
    pub max_range: f64,
    pub range_sigma: f64,
    /// Frames per second; paired with the trajectory speed it sets the
    /// frame spacing.
    pub frame_rate: f64,
}

impl Default for ScannerSpec {
    fn default() -> Self {
        ScannerSpec {
            rays_per_frame: 400,
            max_range: 12.0,
            range_sigma: 0.01,
            frame_rate: 10.0,
        }
    }
}

impl ScannerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rays_per_frame == 0 || !(self.max_range > 0.0) || !(self.frame_rate > 0.0) {
            return Err(Error::Config("scanner values must be positive".into()));
        }
        if self.range_sigma < 0.0 {
            return Err(Error::Config("range sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Spherical Fibonacci directions with a per-frame azimuth offset, a
/// deterministic stand-in for a repetitive non-uniform scan pattern.
fn scan_directions(n: usize, azimuth_offset: f64) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * k as f64 + azimuth_offset;
            Vec3::new(r * a.cos(), r * a.sin(), z)
        })
        .collect()
}

/// Casts one frame from `pose`: ray-march to the first surface crossing
/// within range, bisect, add range noise. Returns hits in world
/// coordinates with the sensor origin set to the pose translation.
pub fn scan_frame(
    scene: &Scene,
    scanner: &ScannerSpec,
    pose: &Pose,
    frame_seed: u64,
    frame_idx: u64,
) -> Result<PointCloud> {
    let origin = Point3::from(pose.translation);
    if !scene.inside(&origin) {
        return Err(Error::InvalidInput(format!(
            "scanner pose {origin:?} is outside the cavity"
        )));
    }
    let mut rng = rng_for(frame_seed, Stream::ScannerFrame(frame_idx));
    let azimuth: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let directions = scan_directions(scanner.rays_per_frame, azimuth);

    const STEP: f64 = 0.05;
    let mut points = Vec::new();
    for dir_local in directions {
        let dir = pose.rotation * dir_local;
        let mut prev_t = 0.0;
        let mut prev_f = scene.field(&origin);
        let mut hit = None;
        let mut t = STEP;
        while t <= scanner.max_range {
            let f = scene.field(&Point3::from(origin.coords + dir * t));
            if prev_f < 0.0 && f >= 0.0 {
                let mut lo = prev_t;
                let mut hi = t;
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    if scene.field(&Point3::from(origin.coords + dir * mid)) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hit = Some(0.5 * (lo + hi));
                break;
            }
            prev_t = t;
            prev_f = f;
            t += STEP;
        }
        if let Some(t_hit) = hit {
            let noise = if scanner.range_sigma > 0.0 {
                use rand_distr::Distribution;
                rand_distr::Normal::new(0.0, scanner.range_sigma)
                    .unwrap()
                    .sample(&mut rng)
            } else {
                0.0
            };
            let t_noisy = (t_hit + noise).max(0.0);
            points.push(Point3::from(origin.coords + dir * t_noisy));
        }
    }
    Ok(PointCloud {
        points,
        normals: None,
        sensor_origin: origin,
    })
}

/// Poses along the centerline at a fixed vertical offset and constant
/// speed, facing the local tangent.
pub fn build_trajectory(
    scene: &Scene,
    speed: f64,
    frame_rate: f64,
    sensor_height: f64,
) -> Result<Vec<(f64, Pose)>> {
    if !(speed > 0.0 && frame_rate > 0.0) {
        return Err(Error::Config("speed and frame rate must be positive".into()));
    }
    let total = scene.arc_length();
    let margin = 1.0;
    if total <= 2.0 * margin {
        return Err(Error::Config("scene is too short for a trajectory".into()));
    }
    // height above the floor, clamped inside the cavity
    let z_offset = (sensor_height - scene.spec.base_radius).clamp(
        -0.6 * scene.spec.base_radius,
        0.6 * scene.spec.base_radius,
    );
    let spacing = speed / frame_rate;
    let mut poses = Vec::new();
    let mut s = margin;
    let mut t = 0.0;
    while s <= total - margin {
        let base = scene.station_point(s);
        let tangent = scene.station_tangent(s);
        let position = Vec3::new(base.x, base.y, base.z + z_offset);
        // forward = tangent, up toward +z
        let forward = tangent.normalize();
        let mut up = Vec3::new(0.0, 0.0, 1.0);
        let right = forward.cross(&up);
        let right = if right.norm() > 1e-9 {
            right.normalize()
        } else {
            Vec3::new(0.0, -1.0, 0.0)
        };
        up = right.cross(&forward).normalize();
        let rotation = nalgebra::Matrix3::from_columns(&[forward, -right, up]);
        let pose = Pose::new(rotation, position)
            .map_err(|e| Error::Numerical(format!("trajectory rotation: {e}")))?;
        poses.push((t, pose));
        s += spacing;
        t += 1.0 / frame_rate;
    }
    if poses.is_empty() {
        return Err(Error::Config("trajectory has no frames".into()));
    }
    Ok(poses)
}
