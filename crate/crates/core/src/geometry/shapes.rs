//! Procedural shape classes standing in for a real-world object dataset.

use std::f64::consts::{PI, TAU};

use super::{normalize_points, Point, PointCloud};
use crate::error::{Error, Result};
use crate::rng::{self, Rng, StreamKey};

pub const CLASS_NAMES: [&str; 8] = ["sphere", "cube", "cylinder", "cone", "torus", "table", "pyramid", "helix"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Table,
    Pyramid,
    Helix,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 8] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Cone,
        ShapeClass::Torus,
        ShapeClass::Table,
        ShapeClass::Pyramid,
        ShapeClass::Helix,
    ];

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL.get(id).copied().ok_or(Error::Class(id))
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self as usize]
    }
}

pub const TORUS_MAJOR: f64 = 0.7;
pub const TORUS_MINOR: f64 = 0.3;

/// Points on the canonical (un-posed, un-normalized) surface of a class.
pub fn raw_shape(class: ShapeClass, rng: &mut Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n).map(|_| sample_surface(class, rng)).collect()
}

fn sample_surface(class: ShapeClass, rng: &mut Rng) -> [f64; 3] {
    let u = |rng: &mut Rng, lo: f64, hi: f64| rng::uniform(rng, lo, hi);
    match class {
        ShapeClass::Sphere => rng::unit_vector(rng),
        ShapeClass::Cube => {
            let face = rng::index(rng, 6);
            let (a, b) = (u(rng, -1.0, 1.0), u(rng, -1.0, 1.0));
            let s = if face % 2 == 0 { 1.0 } else { -1.0 };
            match face / 2 {
                0 => [s, a, b],
                1 => [a, s, b],
                _ => [a, b, s],
            }
        }
        ShapeClass::Cylinder => {
            let (r, h) = (0.6, 0.8);
            let lateral = TAU * r * 2.0 * h;
            let caps = 2.0 * PI * r * r;
            if rng::unit01(rng) * (lateral + caps) < lateral {
                let t = u(rng, 0.0, TAU);
                [r * t.cos(), r * t.sin(), u(rng, -h, h)]
            } else {
                let (rr, t) = (r * rng::unit01(rng).sqrt(), u(rng, 0.0, TAU));
                let z = if rng::unit01(rng) < 0.5 { h } else { -h };
                [rr * t.cos(), rr * t.sin(), z]
            }
        }
        ShapeClass::Cone => {
            let (r, z0, z1): (f64, f64, f64) = (0.8, -0.6, 1.0);
            let slant = (r * r + (z1 - z0) * (z1 - z0)).sqrt();
            let lateral = PI * r * slant;
            let base = PI * r * r;
            let t = u(rng, 0.0, TAU);
            if rng::unit01(rng) * (lateral + base) < lateral {
                let s = rng::unit01(rng).sqrt();
                [r * s * t.cos(), r * s * t.sin(), z1 - (z1 - z0) * s]
            } else {
                let rr = r * rng::unit01(rng).sqrt();
                [rr * t.cos(), rr * t.sin(), z0]
            }
        }
        ShapeClass::Torus => loop {
            // area-uniform via rejection on the tube angle
            let (a, b) = (u(rng, 0.0, TAU), u(rng, 0.0, TAU));
            let ring = TORUS_MAJOR + TORUS_MINOR * b.cos();
            if rng::unit01(rng) * (TORUS_MAJOR + TORUS_MINOR) <= ring {
                break [ring * a.cos(), ring * a.sin(), TORUS_MINOR * b.sin()];
            }
        },
        ShapeClass::Table => {
            if rng::unit01(rng) < 0.6 {
                [u(rng, -0.8, 0.8), u(rng, -0.5, 0.5), 0.4]
            } else {
                let leg = rng::index(rng, 4);
                let (cx, cy) = ([0.7, -0.7][leg % 2], [0.4, -0.4][leg / 2]);
                let t = u(rng, 0.0, TAU);
                [cx + 0.05 * t.cos(), cy + 0.05 * t.sin(), u(rng, -0.8, 0.4)]
            }
        }
        ShapeClass::Pyramid => {
            let h: f64 = 0.7;
            let (zb, apex) = (-0.6, [0.0, 0.0, 0.9]);
            let corners = [[h, h, zb], [-h, h, zb], [-h, -h, zb], [h, -h, zb]];
            let side = {
                let slant = (h * h + (apex[2] - zb) * (apex[2] - zb)).sqrt();
                0.5 * 2.0 * h * slant
            };
            let base = 4.0 * h * h;
            let pick = rng::unit01(rng) * (4.0 * side + base);
            if pick < 4.0 * side {
                let f = ((pick / side) as usize).min(3);
                triangle(rng, corners[f], corners[(f + 1) % 4], apex)
            } else {
                [u(rng, -h, h), u(rng, -h, h), zb]
            }
        }
        ShapeClass::Helix => {
            let t = u(rng, 0.0, 2.0 * TAU);
            let c = [0.6 * t.cos(), 0.6 * t.sin(), -0.9 + 1.8 * t / (2.0 * TAU)];
            let o = rng::unit_vector(rng);
            [c[0] + 0.08 * o[0], c[1] + 0.08 * o[1], c[2] + 0.08 * o[2]]
        }
    }
}

fn triangle(rng: &mut Rng, a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    let (r1, r2) = (rng::unit01(rng).sqrt(), rng::unit01(rng));
    let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
    [0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k])
}

/// Deterministic sample of one class: surface points, a random turn about the
/// vertical (z) axis, per-axis scale jitter in [0.9, 1.1], then unit-sphere
/// normalization.
pub fn gen_shape(class_id: usize, seed: u64, n_points: usize) -> Result<PointCloud> {
    let class = ShapeClass::from_id(class_id)?;
    if n_points < super::MIN_POINTS {
        return Err(Error::Count { requested: super::MIN_POINTS, available: n_points });
    }
    let mut rng = StreamKey::new(seed).with(class_id as u64).with(n_points as u64).rng();
    let raw = raw_shape(class, &mut rng, n_points);
    let theta = rng::uniform(&mut rng, 0.0, TAU);
    let scale = [0; 3].map(|_: u8| rng::uniform(&mut rng, 0.9, 1.1));
    let (s, c) = theta.sin_cos();
    let posed: Vec<Point> = raw
        .iter()
        .map(|p| {
            let x = c * p[0] - s * p[1];
            let y = s * p[0] + c * p[1];
            [(x * scale[0]) as f32, (y * scale[1]) as f32, (p[2] * scale[2]) as f32]
        })
        .collect();
    let points = normalize_points(&posed)?;
    PointCloud::new(points, class_id as u32, format!("{}_{seed:016x}", class.name()))
}
