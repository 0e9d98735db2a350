//! ASCII readers and writers: PLY and XYZ point clouds, pose
//! trajectories (`timestamp tx ty tz qx qy qz qw`, scalar-last unit
//! quaternion, one frame per line).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Point3, PointCloud, Pose, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct PlyElement {
    pub name: String,
    pub count: usize,
    pub properties: Vec<String>,
}

#[derive(Debug, Clone)]
pub(crate) struct PlyHeader {
    pub elements: Vec<PlyElement>,
    pub lines_consumed: usize,
}

pub(crate) fn parse_ply_header(lines: &[String], path: &Path) -> Result<PlyHeader> {
    if lines.first().map(|l| l.trim()) != Some("ply") {
        return Err(Error::parse(path, 1, "missing 'ply' magic"));
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    for (idx, line) in lines.iter().enumerate().skip(1) {
        let line_no = idx + 1;
        let trimmed = line.trim();
        let mut tokens = trimmed.split_whitespace();
        match tokens.next() {
            Some("format") => {
                if tokens.next() != Some("ascii") {
                    return Err(Error::parse(path, line_no, "only ascii PLY is supported"));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let name = tokens
                    .next()
                    .ok_or_else(|| Error::parse(path, line_no, "element without name"))?;
                let count: usize = tokens
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::parse(path, line_no, "element without count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, line_no, "property before element"))?;
                let rest: Vec<&str> = tokens.collect();
                let prop_name = rest
                    .last()
                    .ok_or_else(|| Error::parse(path, line_no, "property without name"))?;
                element.properties.push(prop_name.to_string());
            }
            Some("end_header") => {
                if !saw_format {
                    return Err(Error::parse(path, line_no, "missing format line"));
                }
                return Ok(PlyHeader {
                    elements,
                    lines_consumed: line_no,
                });
            }
            Some(other) => {
                return Err(Error::parse(path, line_no, format!("unexpected header token '{other}'")));
            }
            None => {}
        }
    }
    Err(Error::parse(path, lines.len(), "header never ended"))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

fn parse_coord(token: &str, path: &Path, line_no: usize, what: &str) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| Error::parse(path, line_no, format!("bad {what} value '{token}'")))?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!(
            "{} at {}:{line_no}",
            what,
            path.display()
        )));
    }
    Ok(v)
}

/// Loads an ASCII PLY or whitespace XYZ[+normal] file. Normals, when
/// present, are renormalized to unit length.
pub fn load_point_cloud(path: &Path) -> Result<PointCloud> {
    let lines = read_lines(path)?;
    if lines.first().map(|l| l.trim() == "ply").unwrap_or(false) {
        load_ply_points(path, &lines)
    } else {
        load_xyz(path, &lines)
    }
}

fn load_ply_points(path: &Path, lines: &[String]) -> Result<PointCloud> {
    let header = parse_ply_header(lines, path)?;
    let mut cursor = header.lines_consumed;
    let mut points = Vec::new();
    let mut normals: Option<Vec<Vec3>> = None;

    for element in &header.elements {
        if element.name != "vertex" {
            cursor += element.count;
            continue;
        }
        let col = |name: &str| element.properties.iter().position(|p| p == name);
        let (xc, yc, zc) = match (col("x"), col("y"), col("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err(Error::parse(path, cursor, "vertex element lacks x y z")),
        };
        let normal_cols = match (col("nx"), col("ny"), col("nz")) {
            (Some(a), Some(b), Some(c)) => Some((a, b, c)),
            _ => None,
        };
        if normal_cols.is_some() {
            normals = Some(Vec::with_capacity(element.count));
        }
        for i in 0..element.count {
            let line_no = cursor + i + 1;
            let line = lines
                .get(cursor + i)
                .ok_or_else(|| Error::parse(path, line_no, "unexpected end of file"))?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() < element.properties.len() {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("expected {} values, got {}", element.properties.len(), tokens.len()),
                ));
            }
            let x = parse_coord(tokens[xc], path, line_no, "x")?;
            let y = parse_coord(tokens[yc], path, line_no, "y")?;
            let z = parse_coord(tokens[zc], path, line_no, "z")?;
            points.push(Point3::new(x, y, z));
            if let (Some((a, b, c)), Some(acc)) = (normal_cols, normals.as_mut()) {
                let n = Vec3::new(
                    parse_coord(tokens[a], path, line_no, "nx")?,
                    parse_coord(tokens[b], path, line_no, "ny")?,
                    parse_coord(tokens[c], path, line_no, "nz")?,
                );
                acc.push(renormalize(n, path, line_no)?);
            }
        }
        cursor += element.count;
    }

    Ok(PointCloud {
        points,
        normals,
        sensor_origin: Point3::origin(),
    })
}

fn renormalize(n: Vec3, path: &Path, line_no: usize) -> Result<Vec3> {
    let norm = n.norm();
    if norm < 1e-12 {
        return Err(Error::parse(path, line_no, "zero-length normal"));
    }
    Ok(n / norm)
}

fn load_xyz(path: &Path, lines: &[String]) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut normals: Option<Vec<Vec3>> = None;
    for (idx, line) in lines.iter().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.len() != 3 && tokens.len() != 6 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 3 or 6 columns, got {}", tokens.len()),
            ));
        }
        let x = parse_coord(tokens[0], path, line_no, "x")?;
        let y = parse_coord(tokens[1], path, line_no, "y")?;
        let z = parse_coord(tokens[2], path, line_no, "z")?;
        if points.is_empty() {
            normals = (tokens.len() == 6).then(Vec::new);
        } else if normals.is_some() != (tokens.len() == 6) {
            return Err(Error::parse(path, line_no, "inconsistent column count"));
        }
        points.push(Point3::new(x, y, z));
        if let Some(acc) = normals.as_mut() {
            let n = Vec3::new(
                parse_coord(tokens[3], path, line_no, "nx")?,
                parse_coord(tokens[4], path, line_no, "ny")?,
                parse_coord(tokens[5], path, line_no, "nz")?,
            );
            acc.push(renormalize(n, path, line_no)?);
        }
    }
    if points.is_empty() {
        return Err(Error::parse(path, 1, "no points in file"));
    }
    Ok(PointCloud {
        points,
        normals,
        sensor_origin: Point3::origin(),
    })
}

/// Writes a point cloud as ASCII PLY, including normals when present.
pub fn save_point_cloud_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let has_normals = cloud.normals.is_some();
    let mut header = String::new();
    header.push_str("ply\nformat ascii 1.0\n");
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if has_normals {
        header.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(|e| Error::io(path, e))?;
    for (i, p) in cloud.points.iter().enumerate() {
        let line = if let Some(ns) = &cloud.normals {
            let n = ns[i];
            format!("{} {} {} {} {} {}\n", p.x, p.y, p.z, n.x, n.y, n.z)
        } else {
            format!("{} {} {}\n", p.x, p.y, p.z)
        };
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a trajectory file: `timestamp tx ty tz qx qy qz qw` per line.
pub fn load_trajectory(path: &Path) -> Result<Vec<(f64, Pose)>> {
    let lines = read_lines(path)?;
    let mut out = Vec::new();
    for (idx, line) in lines.iter().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.len() != 8 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 8 columns, got {}", tokens.len()),
            ));
        }
        let mut v = [0.0; 8];
        for (k, tok) in tokens.iter().enumerate() {
            v[k] = parse_coord(tok, path, line_no, "trajectory field")?;
        }
        let pose = Pose::from_quaternion(Vec3::new(v[1], v[2], v[3]), v[4], v[5], v[6], v[7])
            .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        out.push((v[0], pose));
    }
    if out.is_empty() {
        return Err(Error::parse(path, 1, "no poses in trajectory"));
    }
    Ok(out)
}

/// Writes a trajectory in the same format `load_trajectory` reads.
pub fn save_trajectory(poses: &[(f64, Pose)], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (t, pose) in poses {
        let q = nalgebra::UnitQuaternion::from_matrix(&pose.rotation);
        let tr = pose.translation;
        let line = format!(
            "{} {} {} {} {} {} {} {}\n",
            t, tr.x, tr.y, tr.z, q.i, q.j, q.k, q.w
        );
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
