//! Point clouds and the geometric machinery around them.

mod dataset;
mod io;
mod sampling;
mod shapes;

pub use dataset::{generate_dataset, load_split, DatasetConfig, DatasetManifest, SampleEntry, MANIFEST_FILE};
pub use io::{load_cloud, load_cloud_text, save_cloud, save_cloud_text, MAGIC as CLOUD_MAGIC};
pub use sampling::{fps, knn_group, nearest, PatchSet};
pub use shapes::{gen_shape, raw_shape, ShapeClass, CLASS_NAMES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f32; 3];

/// Smallest cloud the generators and CLI accept.
pub const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub label: u32,
    pub id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, label: u32, id: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Count { requested: 1, available: 0 });
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Contract("point coordinates must be finite".into()));
        }
        Ok(PointCloud { points, label, id: id.into() })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_points(&self, points: Vec<Point>) -> PointCloud {
        PointCloud { points, label: self.label, id: self.id.clone() }
    }

    pub fn centroid(&self) -> [f64; 3] {
        centroid(&self.points)
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(norm).fold(0.0, f64::max)
    }
}

pub fn norm(p: &Point) -> f64 {
    let [x, y, z] = p.map(|v| v as f64);
    (x * x + y * y + z * z).sqrt()
}

pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] as f64 - b[0] as f64;
    let dy = a[1] as f64 - b[1] as f64;
    let dz = a[2] as f64 - b[2] as f64;
    dx * dx + dy * dy + dz * dz
}

pub fn centroid(points: &[Point]) -> [f64; 3] {
    let mut c = [0.0f64; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k] as f64;
        }
    }
    c.map(|v| v / points.len() as f64)
}

/// Center at the origin and scale so the farthest point has norm 1.
///
/// Coordinates are stored as `f32`; the scale is nudged down when rounding
/// would push the farthest point past 1.
pub fn normalize_unit_sphere(pc: &PointCloud) -> Result<PointCloud> {
    normalize_points(&pc.points).map(|pts| pc.with_points(pts))
}

pub(crate) fn normalize_points(points: &[Point]) -> Result<Vec<Point>> {
    let c = centroid(points);
    let centered: Vec<[f64; 3]> = points
        .iter()
        .map(|p| [p[0] as f64 - c[0], p[1] as f64 - c[1], p[2] as f64 - c[2]])
        .collect();
    let max = centered
        .iter()
        .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
        .fold(0.0, f64::max);
    if max <= f64::EPSILON * 16.0 {
        return Err(Error::DegenerateCloud);
    }
    let mut scale = 1.0 / max;
    loop {
        let out: Vec<Point> = centered
            .iter()
            .map(|v| [(v[0] * scale) as f32, (v[1] * scale) as f32, (v[2] * scale) as f32])
            .collect();
        if out.iter().map(norm).fold(0.0, f64::max) <= 1.0 {
            return Ok(out);
        }
        scale *= 1.0 - 1e-7;
    }
}
