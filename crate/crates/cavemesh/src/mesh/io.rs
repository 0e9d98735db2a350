//! OBJ and ASCII PLY mesh writers and readers.
//!
//! Coordinates are written with Rust's shortest-roundtrip float
//! formatting, so exports are byte-stable across runs and re-import
//! reproduces coordinates exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::geometry::{io::parse_ply_header, Point3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<MeshFormat> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::Ply),
            other => Err(Error::InvalidInput(format!(
                "unsupported mesh extension {other:?} (use .obj or .ply)"
            ))),
        }
    }
}

pub fn save_mesh(mesh: &TriangleMesh, path: &Path, format: MeshFormat) -> Result<()> {
    mesh.validate()?;
    match format {
        MeshFormat::Obj => save_obj(mesh, path),
        MeshFormat::Ply => save_ply(mesh, path),
    }
}

fn save_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z).map_err(io)?;
    }
    if let Some(normals) = &mesh.normals {
        for n in normals {
            writeln!(w, "vn {} {} {}", n.x, n.y, n.z).map_err(io)?;
        }
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn save_ply(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let has_normals = mesh.normals.is_some();
    writeln!(w, "ply").map_err(io)?;
    writeln!(w, "format ascii 1.0").map_err(io)?;
    writeln!(w, "element vertex {}", mesh.vertices.len()).map_err(io)?;
    writeln!(w, "property double x").map_err(io)?;
    writeln!(w, "property double y").map_err(io)?;
    writeln!(w, "property double z").map_err(io)?;
    if has_normals {
        writeln!(w, "property double nx").map_err(io)?;
        writeln!(w, "property double ny").map_err(io)?;
        writeln!(w, "property double nz").map_err(io)?;
    }
    writeln!(w, "element face {}", mesh.triangles.len()).map_err(io)?;
    writeln!(w, "property list uchar int vertex_indices").map_err(io)?;
    writeln!(w, "end_header").map_err(io)?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        if let Some(normals) = &mesh.normals {
            let n = normals[i];
            writeln!(w, "{} {} {} {} {} {}", v.x, v.y, v.z, n.x, n.y, n.z).map_err(io)?;
        } else {
            writeln!(w, "{} {} {}", v.x, v.y, v.z).map_err(io)?;
        }
    }
    for t in &mesh.triangles {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2]).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    match MeshFormat::from_path(path)? {
        MeshFormat::Obj => load_obj(path),
        MeshFormat::Ply => load_ply(path),
    }
}

fn load_obj(path: &Path) -> Result<TriangleMesh> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut mesh = TriangleMesh::default();
    let mut normals = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_no = idx + 1;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0; 3];
                for c in &mut coords {
                    *c = tokens
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::parse(path, line_no, "bad vertex"))?;
                }
                mesh.vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("vn") => {
                let mut coords = [0.0; 3];
                for c in &mut coords {
                    *c = tokens
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::parse(path, line_no, "bad normal"))?;
                }
                normals.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut ids = [0u32; 3];
                for v in &mut ids {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| Error::parse(path, line_no, "face needs 3 indices"))?;
                    let first = tok.split('/').next().unwrap_or(tok);
                    let one_based: i64 = first
                        .parse()
                        .map_err(|_| Error::parse(path, line_no, "bad face index"))?;
                    if one_based < 1 {
                        return Err(Error::parse(path, line_no, "negative face index"));
                    }
                    *v = (one_based - 1) as u32;
                }
                if tokens.next().is_some() {
                    return Err(Error::parse(path, line_no, "only triangles are supported"));
                }
                mesh.triangles.push(ids);
            }
            _ => {}
        }
    }
    if !normals.is_empty() {
        if normals.len() != mesh.vertices.len() {
            return Err(Error::parse(path, 0, "normal count mismatch"));
        }
        mesh.normals = Some(normals);
    }
    mesh.validate()?;
    Ok(mesh)
}

fn load_ply(path: &Path) -> Result<TriangleMesh> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))?;
    let header = parse_ply_header(&lines, path)?;
    let mut cursor = header.lines_consumed;
    let mut mesh = TriangleMesh::default();
    for element in &header.elements {
        match element.name.as_str() {
            "vertex" => {
                let col = |name: &str| element.properties.iter().position(|p| p == name);
                let (xc, yc, zc) = match (col("x"), col("y"), col("z")) {
                    (Some(x), Some(y), Some(z)) => (x, y, z),
                    _ => return Err(Error::parse(path, cursor, "vertex element lacks x y z")),
                };
                let normal_cols = match (col("nx"), col("ny"), col("nz")) {
                    (Some(a), Some(b), Some(c)) => Some((a, b, c)),
                    _ => None,
                };
                let mut normals = normal_cols.map(|_| Vec::with_capacity(element.count));
                for i in 0..element.count {
                    let line_no = cursor + i + 1;
                    let line = lines
                        .get(cursor + i)
                        .ok_or_else(|| Error::parse(path, line_no, "unexpected end of file"))?;
                    let tokens: Vec<&str> = line.split_whitespace().collect();
                    let get = |c: usize| -> Result<f64> {
                        tokens
                            .get(c)
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| Error::parse(path, line_no, "bad vertex value"))
                    };
                    mesh.vertices.push(Point3::new(get(xc)?, get(yc)?, get(zc)?));
                    if let (Some((a, b, c)), Some(acc)) = (normal_cols, normals.as_mut()) {
                        acc.push(Vec3::new(get(a)?, get(b)?, get(c)?));
                    }
                }
                mesh.normals = normals;
                cursor += element.count;
            }
            "face" => {
                for i in 0..element.count {
                    let line_no = cursor + i + 1;
                    let line = lines
                        .get(cursor + i)
                        .ok_or_else(|| Error::parse(path, line_no, "unexpected end of file"))?;
                    let tokens: Vec<&str> = line.split_whitespace().collect();
                    if tokens.first() != Some(&"3") || tokens.len() != 4 {
                        return Err(Error::parse(path, line_no, "only triangles are supported"));
                    }
                    let mut ids = [0u32; 3];
                    for (k, v) in ids.iter_mut().enumerate() {
                        *v = tokens[k + 1]
                            .parse()
                            .map_err(|_| Error::parse(path, line_no, "bad face index"))?;
                    }
                    mesh.triangles.push(ids);
                }
                cursor += element.count;
            }
            _ => cursor += element.count,
        }
    }
    mesh.validate()?;
    Ok(mesh)
}
