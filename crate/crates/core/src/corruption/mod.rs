//! Seven atomic point cloud corruptions at five severity levels.

mod suite;

pub use suite::{build_suite, SuiteCell, SuiteManifest, SuiteSample, SUITE_MANIFEST_FILE};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{nearest, normalize_points, Point, PointCloud};
use crate::rng::{self, Rng};

pub const SEVERITIES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    Scale,
    Rotate,
    Jitter,
    DropGlobal,
    DropLocal,
    AddGlobal,
    AddLocal,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 7] = [
        CorruptionKind::Scale,
        CorruptionKind::Rotate,
        CorruptionKind::Jitter,
        CorruptionKind::DropGlobal,
        CorruptionKind::DropLocal,
        CorruptionKind::AddGlobal,
        CorruptionKind::AddLocal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::Scale => "scale",
            CorruptionKind::Rotate => "rotate",
            CorruptionKind::Jitter => "jitter",
            CorruptionKind::DropGlobal => "drop_global",
            CorruptionKind::DropLocal => "drop_local",
            CorruptionKind::AddGlobal => "add_global",
            CorruptionKind::AddLocal => "add_local",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).unwrap()
    }

    /// Directory name of one suite cell, e.g. `drop_local_3`.
    pub fn cell_name(self, severity: u8) -> String {
        format!("{}_{severity}", self.name())
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL.iter().copied().find(|k| k.name() == norm).ok_or_else(|| {
            let valid: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
            Error::Spec(format!("unknown corruption `{s}`; valid kinds: {}", valid.join(", ")))
        })
    }
}

/// Severity parameters per level (index 0 is level 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityTable {
    pub scale_max_factor: [f64; 5],
    pub rotate_max_degrees: [f64; 5],
    pub jitter_sigma: [f64; 5],
    pub jitter_clip: f64,
    pub drop_global_ratio: [f64; 5],
    pub drop_local_ratio: [f64; 5],
    pub add_global_ratio: [f64; 5],
    pub add_local_ratio: [f64; 5],
    pub add_local_sigma: f64,
    pub max_clusters: usize,
}

impl Default for SeverityTable {
    fn default() -> Self {
        SeverityTable {
            scale_max_factor: [1.2, 1.4, 1.6, 1.8, 2.0],
            rotate_max_degrees: [6.0, 12.0, 18.0, 24.0, 30.0],
            jitter_sigma: [0.01, 0.02, 0.03, 0.04, 0.05],
            jitter_clip: 0.05,
            drop_global_ratio: [0.25, 0.375, 0.5, 0.625, 0.75],
            drop_local_ratio: [0.1, 0.15, 0.2, 0.25, 0.3],
            add_global_ratio: [0.1, 0.2, 0.3, 0.4, 0.5],
            add_local_ratio: [0.1, 0.15, 0.2, 0.25, 0.3],
            add_local_sigma: 0.075,
            max_clusters: 8,
        }
    }
}

pub fn table() -> SeverityTable {
    SeverityTable::default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        check_severity(severity)?;
        Ok(CorruptionSpec { kind, severity, seed })
    }
}

fn check_severity(severity: u8) -> Result<usize> {
    if (1..=SEVERITIES as u8).contains(&severity) {
        Ok(severity as usize - 1)
    } else {
        Err(Error::Spec(format!("severity {severity} outside 1..=5")))
    }
}

fn ratio_count(n: usize, r: f64) -> usize {
    (n as f64 * r).round() as usize
}

/// Apply one corruption. A pure function of `(pc, spec)`.
pub fn corrupt(pc: &PointCloud, spec: &CorruptionSpec) -> Result<PointCloud> {
    check_severity(spec.severity)?;
    let mut rng = rng::rng_from_seed(spec.seed);
    let s = spec.severity;
    match spec.kind {
        CorruptionKind::Scale => scale_anisotropic(pc, s, &mut rng),
        CorruptionKind::Rotate => rotate_small(pc, s, &mut rng),
        CorruptionKind::Jitter => jitter_gaussian(pc, s, &mut rng),
        CorruptionKind::DropGlobal => drop_global(pc, s, &mut rng),
        CorruptionKind::DropLocal => drop_local(pc, s, &mut rng),
        CorruptionKind::AddGlobal => add_global(pc, s, &mut rng),
        CorruptionKind::AddLocal => add_local(pc, s, &mut rng),
    }
}

pub fn scale_anisotropic(pc: &PointCloud, severity: u8, rng: &mut Rng) -> Result<PointCloud> {
    let s = table().scale_max_factor[check_severity(severity)?];
    let factors = scale_factors(s, rng);
    apply_scale(pc, factors)
}

/// Per-axis factors, log-uniform in `[1/s, s]`.
pub fn scale_factors(s: f64, rng: &mut Rng) -> [f64; 3] {
    let l = s.ln();
    [0; 3].map(|_: u8| rng::uniform(rng, -l, l).exp())
}

/// Scale each axis, then renormalize to the unit sphere.
pub fn apply_scale(pc: &PointCloud, factors: [f64; 3]) -> Result<PointCloud> {
    let scaled: Vec<Point> = pc
        .points
        .iter()
        .map(|p| [0, 1, 2].map(|k| (p[k] as f64 * factors[k]) as f32))
        .collect();
    Ok(pc.with_points(normalize_points(&scaled)?))
}

pub fn rotate_small(pc: &PointCloud, severity: u8, rng: &mut Rng) -> Result<PointCloud> {
    let max_deg = table().rotate_max_degrees[check_severity(severity)?];
    let r = rotation_sample(max_deg, rng);
    Ok(apply_rotation(pc, &r))
}

/// Rotation by an angle uniform in `[0, max_deg]` about a uniform random axis.
pub fn rotation_sample(max_deg: f64, rng: &mut Rng) -> [[f64; 3]; 3] {
    let axis = rng::unit_vector(rng);
    let angle = rng::uniform(rng, 0.0, max_deg * PI / 180.0);
    axis_angle(axis, angle)
}

pub fn axis_angle(u: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let [x, y, z] = u;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

pub fn apply_rotation(pc: &PointCloud, r: &[[f64; 3]; 3]) -> PointCloud {
    let pts = pc
        .points
        .iter()
        .map(|p| {
            let v = p.map(|x| x as f64);
            [0, 1, 2].map(|i| (r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2]) as f32)
        })
        .collect();
    pc.with_points(pts)
}

pub fn jitter_gaussian(pc: &PointCloud, severity: u8, rng: &mut Rng) -> Result<PointCloud> {
    let t = table();
    let sigma = t.jitter_sigma[check_severity(severity)?];
    Ok(jitter_with(pc, sigma, t.jitter_clip, rng))
}

/// Add i.i.d. `N(0, sigma²)` offsets to every coordinate, each clipped to `±clip`.
pub fn jitter_with(pc: &PointCloud, sigma: f64, clip: f64, rng: &mut Rng) -> PointCloud {
    let pts = pc
        .points
        .iter()
        .map(|p| p.map(|x| (x as f64 + (sigma * rng::gaussian(rng)).clamp(-clip, clip)) as f32))
        .collect();
    pc.with_points(pts)
}

pub fn drop_global(pc: &PointCloud, severity: u8, rng: &mut Rng) -> Result<PointCloud> {
    let r = table().drop_global_ratio[check_severity(severity)?];
    let keep = ratio_count(pc.len(), 1.0 - r);
    let mut idx: Vec<usize> = (0..pc.len()).collect();
    // partial Fisher–Yates: the first `keep` slots become a uniform subset
    for i in 0..keep {
        let j = i + rng::index(rng, pc.len() - i);
        idx.swap(i, j);
    }
    let mut kept = idx[..keep].to_vec();
    kept.sort_unstable();
    Ok(pc.with_points(kept.into_iter().map(|i| pc.points[i]).collect()))
}

pub fn drop_local(pc: &PointCloud, severity: u8, rng: &mut Rng) -> Result<PointCloud> {
    let t = table();
    let total = ratio_count(pc.len(), t.drop_local_ratio[check_severity(severity)?]);
    let clusters = 1 + rng::index(rng, t.max_clusters);
    drop_local_clusters(pc, total, clusters, rng).map(|(out, _)| out)
}

/// Sizes of `clusters` groups summing to `total` that differ by at most one.
pub fn cluster_sizes(total: usize, clusters: usize) -> Vec<usize> {
    let c = clusters.min(total).max(1);
    (0..c).map(|i| total / c + usize::from(i < total % c)).collect()
}

/// Remove `total` points as kNN neighborhoods around random anchors.
///
/// Each cluster is the nearest-neighbor set of an anchor drawn from the
/// points still present. Returns the removed original indices per cluster.
pub fn drop_local_clusters(
    pc: &PointCloud,
    total: usize,
    clusters: usize,
    rng: &mut Rng,
) -> Result<(PointCloud, Vec<Vec<usize>>)> {
    if total > pc.len() {
        return Err(Error::Count { requested: total, available: pc.len() });
    }
    let mut alive: Vec<usize> = (0..pc.len()).collect();
    let mut removed = Vec::new();
    if total == 0 {
        return Ok((pc.clone(), removed));
    }
    for size in cluster_sizes(total, clusters) {
        let live_pts: Vec<Point> = alive.iter().map(|&i| pc.points[i]).collect();
        let anchor = live_pts[rng::index(rng, live_pts.len())];
        let local = nearest(&live_pts, &anchor, size)?;
        let mut gone: Vec<usize> = local.iter().map(|&l| alive[l]).collect();
        gone.sort_unstable();
        alive.retain(|i| gone.binary_search(i).is_err());
        removed.push(gone);
    }
    Ok((pc.with_points(alive.iter().map(|&i| pc.points[i]).collect()), removed))
}

pub fn add_global(pc: &PointCloud, severity: u8, rng: &mut Rng) -> Result<PointCloud> {
    let r = table().add_global_ratio[check_severity(severity)?];
    let extra = ratio_count(pc.len(), r);
    let mut pts = pc.points.clone();
    pts.extend((0..extra).map(|_| uniform_ball(rng)));
    Ok(pc.with_points(pts))
}

/// Uniform point in the unit ball by rejection from the enclosing cube.
pub fn uniform_ball(rng: &mut Rng) -> Point {
    loop {
        let v = [0; 3].map(|_: u8| rng::uniform(rng, -1.0, 1.0));
        if v[0] * v[0] + v[1] * v[1] + v[2] * v[2] <= 1.0 {
            let p = v.map(|x| x as f32);
            if crate::geometry::norm(&p) <= 1.0 {
                return p;
            }
        }
    }
}

pub fn add_local(pc: &PointCloud, severity: u8, rng: &mut Rng) -> Result<PointCloud> {
    let t = table();
    let extra = ratio_count(pc.len(), t.add_local_ratio[check_severity(severity)?]);
    let clusters = 1 + rng::index(rng, t.max_clusters);
    Ok(add_local_clusters(pc, extra, clusters, t.add_local_sigma, rng).0)
}

/// Append `extra` points in Gaussian blobs around anchors drawn from the cloud.
/// Returns the anchor index of every appended point.
pub fn add_local_clusters(
    pc: &PointCloud,
    extra: usize,
    clusters: usize,
    sigma: f64,
    rng: &mut Rng,
) -> (PointCloud, Vec<usize>) {
    let mut pts = pc.points.clone();
    let mut anchors = Vec::with_capacity(extra);
    if extra > 0 {
        for size in cluster_sizes(extra, clusters) {
            let a = rng::index(rng, pc.len());
            let c = pc.points[a];
            for _ in 0..size {
                pts.push(c.map(|x| (x as f64 + sigma * rng::gaussian(rng)) as f32));
                anchors.push(a);
            }
        }
    }
    (pc.with_points(pts), anchors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{dist2, gen_shape};

    fn cloud(n: usize) -> PointCloud {
        gen_shape(4, 17, n).unwrap()
    }

    fn spec(kind: CorruptionKind, severity: u8) -> CorruptionSpec {
        CorruptionSpec::new(kind, severity, 99).unwrap()
    }

    #[test]
    fn names_round_trip_and_unknown_kind_lists_valid_ones() {
        for k in CorruptionKind::ALL {
            assert_eq!(k.name().parse::<CorruptionKind>().unwrap(), k);
        }
        assert_eq!("Drop-Global".parse::<CorruptionKind>().unwrap(), CorruptionKind::DropGlobal);
        let err = "blur".parse::<CorruptionKind>().unwrap_err().to_string();
        assert!(err.contains("jitter") && err.contains("add_local"));
        assert!(CorruptionSpec::new(CorruptionKind::Jitter, 0, 1).is_err());
        assert!(CorruptionSpec::new(CorruptionKind::Jitter, 6, 1).is_err());
    }

    #[test]
    fn worked_counts() {
        let pc = cloud(256);
        assert_eq!(corrupt(&pc, &spec(CorruptionKind::DropGlobal, 3)).unwrap().len(), 128);
        assert_eq!(corrupt(&pc, &spec(CorruptionKind::AddGlobal, 1)).unwrap().len(), 282);
    }

    #[test]
    fn count_exactness_everywhere() {
        let t = table();
        for n in [64, 256, 1024] {
            let pc = cloud(n);
            for s in 1..=5u8 {
                let i = s as usize - 1;
                let c = |k| corrupt(&pc, &spec(k, s)).unwrap().len();
                assert_eq!(c(CorruptionKind::DropGlobal), (n as f64 * (1.0 - t.drop_global_ratio[i])).round() as usize);
                assert_eq!(c(CorruptionKind::DropLocal), n - (n as f64 * t.drop_local_ratio[i]).round() as usize);
                assert_eq!(c(CorruptionKind::AddGlobal), n + (n as f64 * t.add_global_ratio[i]).round() as usize);
                assert_eq!(c(CorruptionKind::AddLocal), n + (n as f64 * t.add_local_ratio[i]).round() as usize);
                for k in [CorruptionKind::Scale, CorruptionKind::Rotate, CorruptionKind::Jitter] {
                    assert_eq!(c(k), n);
                }
            }
        }
    }

    #[test]
    fn determinism_and_identity_preservation() {
        let pc = cloud(256);
        for k in CorruptionKind::ALL {
            let a = corrupt(&pc, &spec(k, 2)).unwrap();
            let b = corrupt(&pc, &spec(k, 2)).unwrap();
            assert_eq!(a, b);
            assert_eq!((a.label, &a.id), (pc.label, &pc.id));
            let c = corrupt(&pc, &CorruptionSpec::new(k, 2, 100).unwrap()).unwrap();
            assert_ne!(a.points, c.points, "{k}");
        }
    }

    #[test]
    fn scale_reflects_factors_and_renormalizes() {
        let pc = cloud(256);
        let mut rng = rng::rng_from_seed(5);
        let f = scale_factors(2.0, &mut rng);
        assert!(f.iter().all(|&x| (0.5..=2.0).contains(&x)));
        let out = apply_scale(&pc, f).unwrap();
        assert!((out.max_norm() - 1.0).abs() < 1e-6);
        // per-axis extents scale by the factors up to one common renormalization
        let extent = |c: &PointCloud, k: usize| {
            let (lo, hi) = c.points.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| {
                (lo.min(p[k] as f64), hi.max(p[k] as f64))
            });
            hi - lo
        };
        let ratios: Vec<f64> = (0..3).map(|k| extent(&out, k) / (extent(&pc, k) * f[k])).collect();
        for r in &ratios {
            assert!((r / ratios[0] - 1.0).abs() < 1e-5, "{ratios:?}");
        }
        let same = apply_scale(&pc, [1.0; 3]).unwrap();
        for (a, b) in pc.points.iter().zip(&same.points) {
            assert!(dist2(a, b).sqrt() < 1e-6);
        }
        for s in 1..=5 {
            let o = corrupt(&pc, &spec(CorruptionKind::Scale, s)).unwrap();
            assert!((o.max_norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rotation_is_an_isometry() {
        let pc = cloud(128);
        let mut rng = rng::rng_from_seed(6);
        for s in 1..=5u8 {
            let r = rotation_sample(table().rotate_max_degrees[s as usize - 1], &mut rng);
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                    assert!((dot - f64::from(i == j)).abs() < 1e-6);
                }
            }
            let out = apply_rotation(&pc, &r);
            for i in (0..128).step_by(7) {
                for j in (0..128).step_by(5) {
                    let d0 = dist2(&pc.points[i], &pc.points[j]).sqrt();
                    let d1 = dist2(&out.points[i], &out.points[j]).sqrt();
                    assert!((d0 - d1).abs() < 1e-5);
                }
            }
            let c0 = pc.centroid();
            let c1 = out.centroid();
            let n = |c: [f64; 3]| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
            assert!((n(c0) - n(c1)).abs() < 1e-6);
        }
    }

    #[test]
    fn jitter_statistics_and_clip() {
        let pc = cloud(1024);
        let mut rng = rng::rng_from_seed(7);
        let mut diffs = Vec::new();
        while diffs.len() < 100_000 {
            let out = jitter_gaussian(&pc, 1, &mut rng).unwrap();
            for (a, b) in pc.points.iter().zip(&out.points) {
                for k in 0..3 {
                    diffs.push(b[k] as f64 - a[k] as f64);
                }
            }
        }
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std / 0.01 - 1.0).abs() < 0.05, "{std}");

        let out = jitter_gaussian(&pc, 5, &mut rng).unwrap();
        for (a, b) in pc.points.iter().zip(&out.points) {
            for k in 0..3 {
                assert!((b[k] - a[k]).abs() <= 0.05 + 1e-6);
            }
        }
    }

    #[test]
    fn drop_global_inclusion_frequency() {
        let pc = cloud(64);
        let mut rng = rng::rng_from_seed(8);
        let mut hits = vec![0usize; 64];
        let trials = 10_000;
        for _ in 0..trials {
            let out = drop_global(&pc, 2, &mut rng).unwrap();
            for p in &out.points {
                hits[pc.points.iter().position(|q| q == p).unwrap()] += 1;
            }
        }
        for h in hits {
            assert!((h as f64 / trials as f64 - 0.625).abs() < 0.02);
        }
    }

    #[test]
    fn drop_local_clusters_are_knn_neighborhoods() {
        let pc = cloud(256);
        let mut rng = rng::rng_from_seed(9);
        let (out, clusters) = drop_local_clusters(&pc, 51, 4, &mut rng).unwrap();
        assert_eq!(out.len(), 256 - 51);
        let sizes: Vec<usize> = clusters.iter().map(|c| c.len()).collect();
        assert_eq!(sizes, vec![13, 13, 13, 12]);
        // replay: each cluster must be the full-sort kNN set, among the points
        // alive at that round, of one of its own members
        let mut alive: Vec<usize> = (0..256).collect();
        for cl in &clusters {
            let found = cl.iter().any(|&a| {
                let mut by_dist = alive.clone();
                by_dist.sort_by(|&i, &j| {
                    dist2(&pc.points[i], &pc.points[a])
                        .partial_cmp(&dist2(&pc.points[j], &pc.points[a]))
                        .unwrap()
                        .then(i.cmp(&j))
                });
                let mut knn = by_dist[..cl.len()].to_vec();
                knn.sort_unstable();
                &knn == cl
            });
            assert!(found);
            alive.retain(|i| !cl.contains(i));
        }
    }

    #[test]
    fn single_cluster_equals_anchor_knn() {
        let pc = cloud(256);
        let mut rng = rng::rng_from_seed(10);
        let mut probe = rng.clone();
        let anchor = rng::index(&mut probe, 256);
        let (_, clusters) = drop_local_clusters(&pc, 40, 1, &mut rng).unwrap();
        let mut expect = nearest(&pc.points, &pc.points[anchor], 40).unwrap();
        expect.sort_unstable();
        assert_eq!(clusters[0], expect);
    }

    #[test]
    fn add_global_moments() {
        let mut rng = rng::rng_from_seed(11);
        let pts: Vec<Point> = (0..100_000).map(|_| uniform_ball(&mut rng)).collect();
        assert!(pts.iter().all(|p| crate::geometry::norm(p) <= 1.0));
        let mean = pts.iter().map(crate::geometry::norm).sum::<f64>() / pts.len() as f64;
        assert!((mean - 0.75).abs() < 0.02, "{mean}");
        let pc = cloud(256);
        let out = add_global(&pc, 3, &mut rng).unwrap();
        assert_eq!(&out.points[..256], &pc.points[..]);
    }

    #[test]
    fn add_local_offsets() {
        let pc = cloud(256);
        let mut rng = rng::rng_from_seed(12);
        let mut sq = 0.0;
        let mut count = 0usize;
        while count < 100_000 {
            let clusters = 1 + rng::index(&mut rng, 8);
            let (out, anchors) = add_local_clusters(&pc, 77, clusters, 0.075, &mut rng);
            for (p, &a) in out.points[256..].iter().zip(&anchors) {
                sq += dist2(p, &pc.points[a]);
                count += 1;
            }
        }
        let rms = (sq / count as f64).sqrt();
        let expect = 0.075 * 3f64.sqrt();
        assert!((rms / expect - 1.0).abs() < 0.05, "{rms}");
        assert_eq!(cluster_sizes(7, 3), vec![3, 2, 2]);
        assert_eq!(cluster_sizes(2, 8), vec![1, 1]);
    }
}
