//! Marching-cubes extraction over an SDF with neural-point support
//! gating, mesh export, and enclosed-volume computation.

pub mod io;
pub mod tables;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::field::{FieldSample, SdfField};
use crate::geometry::{Point3, Vec3};
use tables::{CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRIANGLE_TABLE};

/// Indexed triangle surface. Triangles wind counterclockwise seen from
/// outside (positive signed volume for a closed surface around a
/// negative-inside SDF).
#[derive(Debug, Clone, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vec3>>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for t in &self.triangles {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::InvalidInput(format!("triangle index out of range: {t:?}")));
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.vertices.len() {
                return Err(Error::InvalidInput("normal count mismatch".into()));
            }
        }
        Ok(())
    }

    pub fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let a = self.vertices[t[0] as usize];
        let b = self.vertices[t[1] as usize];
        let c = self.vertices[t[2] as usize];
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }

    /// Undirected edges used by exactly one triangle. Empty for a
    /// watertight surface.
    pub fn boundary_edges(&self) -> Vec<(u32, u32)> {
        let mut counts: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let key = (a.min(b), a.max(b));
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        let mut edges: Vec<(u32, u32)> = counts
            .into_iter()
            .filter(|&(_, c)| c == 1)
            .map(|(e, _)| e)
            .collect();
        edges.sort_unstable();
        edges
    }
}

/// Axis-aligned extraction region with its sampling voxel.
#[derive(Debug, Clone)]
pub struct MeshingRegion {
    pub min: Point3,
    pub max: Point3,
    pub voxel: f64,
}

impl MeshingRegion {
    pub fn new(min: Point3, max: Point3, voxel: f64) -> Result<MeshingRegion> {
        if !(voxel > 0.0) {
            return Err(Error::InvalidInput("voxel must be positive".into()));
        }
        if !(max.x > min.x && max.y > min.y && max.z > min.z) {
            return Err(Error::InvalidInput("region max must exceed min per axis".into()));
        }
        Ok(MeshingRegion { min, max, voxel })
    }

    /// Bounding box inflated by `margin` on every side.
    pub fn around(min: Point3, max: Point3, margin: f64, voxel: f64) -> Result<MeshingRegion> {
        let m = Vec3::new(margin, margin, margin);
        MeshingRegion::new(Point3::from(min.coords - m), Point3::from(max.coords + m), voxel)
    }

    fn grid_dims(&self) -> Result<[usize; 3]> {
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let extent = self.max[a] - self.min[a];
            dims[a] = (extent / self.voxel).ceil() as usize + 1;
            if dims[a] < 2 {
                dims[a] = 2;
            }
        }
        let total = dims[0] * dims[1] * dims[2];
        if total > 100_000_000 {
            return Err(Error::InvalidInput(format!(
                "extraction grid of {total} points is too large"
            )));
        }
        Ok(dims)
    }
}

/// An analytic field for tests and offline extraction, bypassing the
/// neural map. Support is unbounded so gating never rejects cells.
pub struct AnalyticField<F: Fn(&Point3) -> f64> {
    pub sdf: F,
}

impl<F: Fn(&Point3) -> f64> SdfField for AnalyticField<F> {
    fn sample_at(&self, p: &Point3) -> FieldSample {
        FieldSample {
            value: (self.sdf)(p),
            valid: true,
            support: usize::MAX,
        }
    }

    fn support_at(&self, _p: &Point3) -> usize {
        usize::MAX
    }
}

/// Marching cubes with support gating: a cell is processed only when
/// all eight corners are valid and carry at least `n_nn` neural points.
/// Vertices are shared across cells through global edge keys, cells are
/// traversed lexicographically, and zero-area triangles are dropped.
pub fn extract_mesh<F: SdfField>(field: &F, region: &MeshingRegion, n_nn: usize) -> Result<TriangleMesh> {
    let dims = region.grid_dims()?;
    let [nx, ny, nz] = dims;
    let grid_index = |ix: usize, iy: usize, iz: usize| (ix * ny + iy) * nz + iz;
    let grid_point = |ix: usize, iy: usize, iz: usize| {
        Point3::new(
            region.min.x + ix as f64 * region.voxel,
            region.min.y + iy as f64 * region.voxel,
            region.min.z + iz as f64 * region.voxel,
        )
    };

    // support pass: cheap, no field evaluation
    let needed_support = n_nn.max(1);
    let supported: Vec<bool> = field
        .support_grid(&region.min, dims, region.voxel)
        .into_iter()
        .map(|s| s >= needed_support)
        .collect();

    // evaluate the field only at corners of fully supported cells
    let mut values = vec![f64::NAN; nx * ny * nz];
    let mut active_cells: Vec<(usize, usize, usize)> = Vec::new();
    for ix in 0..nx - 1 {
        for iy in 0..ny - 1 {
            for iz in 0..nz - 1 {
                let all_supported = CORNER_OFFSETS.iter().all(|o| {
                    supported[grid_index(
                        ix + o[0] as usize,
                        iy + o[1] as usize,
                        iz + o[2] as usize,
                    )]
                });
                if !all_supported {
                    continue;
                }
                active_cells.push((ix, iy, iz));
                for o in &CORNER_OFFSETS {
                    let gi = grid_index(ix + o[0] as usize, iy + o[1] as usize, iz + o[2] as usize);
                    if values[gi].is_nan() {
                        values[gi] = field.sample_at(&grid_point(
                            ix + o[0] as usize,
                            iy + o[1] as usize,
                            iz + o[2] as usize,
                        ))
                        .value;
                    }
                }
            }
        }
    }

    let mut mesh = TriangleMesh::default();
    let mut edge_vertex: HashMap<(usize, usize, usize, u8), u32> = HashMap::new();

    for (ix, iy, iz) in active_cells {
        let mut corner_values = [0.0; 8];
        let mut corner_points = [Point3::origin(); 8];
        let mut case_index = 0usize;
        for (ci, o) in CORNER_OFFSETS.iter().enumerate() {
            let gx = ix + o[0] as usize;
            let gy = iy + o[1] as usize;
            let gz = iz + o[2] as usize;
            let v = values[grid_index(gx, gy, gz)];
            corner_values[ci] = v;
            corner_points[ci] = grid_point(gx, gy, gz);
            if v < 0.0 {
                case_index |= 1 << ci;
            }
        }
        if EDGE_TABLE[case_index] == 0 {
            continue;
        }

        let mut edge_vertices = [u32::MAX; 12];
        for edge in 0..12 {
            if EDGE_TABLE[case_index] & (1 << edge) == 0 {
                continue;
            }
            let [c0, c1] = EDGE_CORNERS[edge];
            // canonical global key: lower corner grid coords + axis
            let o0 = CORNER_OFFSETS[c0];
            let o1 = CORNER_OFFSETS[c1];
            let lo = if o0 <= o1 { o0 } else { o1 };
            let axis = axis_of(&o0, &o1);
            let key = (
                ix + lo[0] as usize,
                iy + lo[1] as usize,
                iz + lo[2] as usize,
                axis,
            );
            let idx = *edge_vertex.entry(key).or_insert_with(|| {
                let v0 = corner_values[c0];
                let v1 = corner_values[c1];
                let t = if (v1 - v0).abs() < 1e-15 {
                    0.5
                } else {
                    (v0 / (v0 - v1)).clamp(0.0, 1.0)
                };
                let p = Point3::from(
                    corner_points[c0].coords
                        + t * (corner_points[c1].coords - corner_points[c0].coords),
                );
                let idx = mesh.vertices.len() as u32;
                mesh.vertices.push(p);
                idx
            });
            edge_vertices[edge] = idx;
        }

        let tri_row = &TRIANGLE_TABLE[case_index];
        let mut t = 0;
        while tri_row[t] >= 0 {
            // table order winds inward under the value<0 corner bit;
            // swap to keep normals outward
            let a = edge_vertices[tri_row[t] as usize];
            let b = edge_vertices[tri_row[t + 2] as usize];
            let c = edge_vertices[tri_row[t + 1] as usize];
            let tri = [a, b, c];
            if a != b && b != c && a != c && mesh.triangle_area(&tri) > 1e-12 {
                mesh.triangles.push(tri);
            }
            t += 3;
        }
    }

    Ok(mesh)
}

fn axis_of(a: &[i64; 3], b: &[i64; 3]) -> u8 {
    for i in 0..3 {
        if a[i] != b[i] {
            return i as u8;
        }
    }
    0
}

/// Signed enclosed volume by the divergence theorem: the sum of
/// `det(v0, v1, v2)/6` over triangles. Positive for closed meshes with
/// outward orientation.
pub fn mesh_volume(mesh: &TriangleMesh) -> f64 {
    mesh.triangles
        .iter()
        .map(|t| {
            let a = mesh.vertices[t[0] as usize].coords;
            let b = mesh.vertices[t[1] as usize].coords;
            let c = mesh.vertices[t[2] as usize].coords;
            a.dot(&b.cross(&c)) / 6.0
        })
        .sum()
}
