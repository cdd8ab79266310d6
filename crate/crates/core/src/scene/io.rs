//! ASCII XYZ and PLY readers/writers.
//!
//! Coordinates are written with Rust's shortest round-trip formatting, so a
//! write followed by a read reproduces every `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geom::{GeomError, PointCloud};

#[derive(Error, Debug)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse { path: path.display().to_string(), line, message: message.into() }
}

fn parse_xyz(path: &Path, line_no: usize, tokens: &[&str]) -> Result<Vector3<f64>, IoError> {
    let mut xyz = [0.0; 3];
    for (slot, tok) in xyz.iter_mut().zip(tokens) {
        *slot = tok.parse::<f64>().map_err(|_| parse_err(path, line_no, format!("not a number: {tok:?}")))?;
        if !slot.is_finite() {
            return Err(parse_err(path, line_no, format!("non-finite coordinate {tok:?}")));
        }
    }
    Ok(Vector3::from(xyz))
}

fn finish(path: &Path, points: Vec<Vector3<f64>>, last_line: usize) -> Result<PointCloud, IoError> {
    PointCloud::new(points).map_err(|e| match e {
        GeomError::EmptyCloud => parse_err(path, last_line, "file contains no points"),
        other => parse_err(path, last_line, other.to_string()),
    })
}

/// Reads a point cloud; `.ply` files go through [`read_ply`], anything else
/// is parsed as XYZ (one `x y z` per line, `#` starts a comment).
pub fn read_cloud(path: &Path) -> Result<PointCloud, IoError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")) {
        return Ok(read_ply(path)?.cloud);
    }
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut points = Vec::new();
    let mut last = 0;
    for (i, raw) in text.lines().enumerate() {
        last = i + 1;
        let line = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 3 {
            return Err(parse_err(path, i + 1, format!("expected 3 values, found {}", tokens.len())));
        }
        points.push(parse_xyz(path, i + 1, &tokens)?);
    }
    finish(path, points, last)
}

pub fn write_cloud(cloud: &PointCloud, path: &Path) -> Result<(), IoError> {
    let mut out = String::with_capacity(cloud.len() * 64);
    for p in cloud.points() {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyCloud {
    pub cloud: PointCloud,
    pub expert: Option<Vec<i64>>,
}

/// Writes an ASCII PLY with an optional integer `expert` vertex property.
pub fn write_ply(path: &Path, cloud: &PointCloud, expert: Option<&[i64]>) -> Result<(), IoError> {
    if let Some(e) = expert {
        assert_eq!(e.len(), cloud.len(), "one expert label per vertex");
    }
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if expert.is_some() {
        out.push_str("property int expert\n");
    }
    out.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        match expert {
            Some(e) => {
                let _ = writeln!(out, "{} {} {} {}", p.x, p.y, p.z, e[i]);
            }
            None => {
                let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
            }
        }
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads the ASCII PLY subset produced by [`write_ply`]: one vertex element
/// whose first three properties are `x y z`, plus an optional `expert`.
pub fn read_ply(path: &Path) -> Result<PlyCloud, IoError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(path, 1, "missing 'ply' magic")),
    }
    let mut vertex_count = None;
    let mut properties: Vec<String> = Vec::new();
    let mut header_end = None;
    for (i, line) in lines.by_ref() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(parse_err(path, i + 1, "only ascii PLY is supported")),
            ["comment", ..] | [] => {}
            ["element", "vertex", n] => {
                vertex_count = Some(n.parse::<usize>().map_err(|_| parse_err(path, i + 1, "bad vertex count"))?);
            }
            ["element", ..] => return Err(parse_err(path, i + 1, "only a vertex element is supported")),
            ["property", _, name] => properties.push(name.to_string()),
            ["end_header"] => {
                header_end = Some(i + 1);
                break;
            }
            _ => return Err(parse_err(path, i + 1, format!("unexpected header line {line:?}"))),
        }
    }
    let header_end = header_end.ok_or_else(|| parse_err(path, 1, "missing end_header"))?;
    let count = vertex_count.ok_or_else(|| parse_err(path, header_end, "missing vertex element"))?;
    if properties.len() < 3 || properties[..3] != ["x", "y", "z"] {
        return Err(parse_err(path, header_end, "vertex properties must start with x y z"));
    }
    let expert_col = properties.iter().position(|p| p == "expert");
    let mut points = Vec::with_capacity(count);
    let mut experts = expert_col.map(|_| Vec::with_capacity(count));
    for (i, line) in lines.take(count) {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != properties.len() {
            return Err(parse_err(path, i + 1, format!("expected {} values, found {}", properties.len(), tokens.len())));
        }
        points.push(parse_xyz(path, i + 1, &tokens[..3])?);
        if let (Some(col), Some(out)) = (expert_col, experts.as_mut()) {
            out.push(tokens[col].parse::<i64>().map_err(|_| parse_err(path, i + 1, "expert must be an integer"))?);
        }
    }
    if points.len() != count {
        return Err(parse_err(path, header_end + points.len(), format!("expected {count} vertices, found {}", points.len())));
    }
    Ok(PlyCloud { cloud: finish(path, points, header_end)?, expert: experts })
}
