//! Binary (`PCB1`) and plain-text point cloud files.
//!
//! Binary layout: magic `PCB1`, little-endian `u32` point count, `u32` label,
//! then `count × 3` little-endian `f32` coordinates. The sample id is the file
//! stem.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Point, PointCloud};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PCB1";
const HEADER: usize = 12;

pub fn encode_cloud(pc: &PointCloud) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER + pc.len() * 12);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(pc.len() as u32).to_le_bytes());
    buf.extend_from_slice(&pc.label.to_le_bytes());
    for p in &pc.points {
        for v in p {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode_cloud(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    if bytes.len() < HEADER {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let n = word(4) as usize;
    let label = word(8);
    let payload = &bytes[HEADER..];
    if payload.len() != n * 12 {
        return Err(Error::format(
            path,
            format!("point count {n} needs {} payload bytes, found {}", n * 12, payload.len()),
        ));
    }
    let points: Vec<Point> = payload
        .chunks_exact(12)
        .map(|c| [0, 1, 2].map(|k| f32::from_le_bytes(c[k * 4..k * 4 + 4].try_into().unwrap())))
        .collect();
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::format(path, "non-finite coordinate"));
    }
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    PointCloud::new(points, label, id).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_cloud(path: &Path, pc: &PointCloud) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_cloud(pc)).map_err(|e| Error::io(path, e))
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cloud(&bytes, path)
}

/// One `x y z` line per point. Labels are not stored.
pub fn save_cloud_text(path: &Path, pc: &PointCloud) -> Result<()> {
    let mut out = Vec::new();
    for p in &pc.points {
        writeln!(out, "{} {} {}", p[0], p[1], p[2]).expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_cloud_text(path: &Path, label: u32) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f32> = line
            .split_whitespace()
            .map(|t| t.parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e}", ln + 1)))?;
        if vals.len() != 3 || vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(path, format!("line {}: expected three finite values", ln + 1)));
        }
        points.push([vals[0], vals[1], vals[2]]);
    }
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    PointCloud::new(points, label, id).map_err(|e| Error::format(path, e.to_string()))
}
