use super::{dist2, Point};
use crate::error::{Error, Result};

/// Patch centers (as indices and coordinates) with their kNN member groups.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub center_indices: Vec<usize>,
    pub centers: Vec<Point>,
    pub member_indices: Vec<Vec<usize>>,
}

impl PatchSet {
    pub fn group_size(&self) -> usize {
        self.member_indices.first().map_or(0, |g| g.len())
    }
}

/// Greedy farthest-point sampling starting at `start`.
///
/// Each pick maximizes the distance to the nearest already-selected point;
/// ties go to the smallest index.
pub fn fps(points: &[Point], n: usize, start: usize) -> Result<Vec<usize>> {
    if n > points.len() {
        return Err(Error::Count { requested: n, available: points.len() });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if start >= points.len() {
        return Err(Error::Contract(format!("start index {start} outside {} points", points.len())));
    }
    let mut min_d = vec![f64::INFINITY; points.len()];
    let mut chosen = Vec::with_capacity(n);
    let mut current = start;
    for _ in 0..n {
        chosen.push(current);
        min_d[current] = -1.0;
        let c = &points[current];
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if min_d[i] < 0.0 {
                continue;
            }
            let d = dist2(p, c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(chosen)
}

/// Indices of the `g` points nearest to `query`, nearest first; ties by index.
pub fn nearest(points: &[Point], query: &Point, g: usize) -> Result<Vec<usize>> {
    if g > points.len() {
        return Err(Error::Count { requested: g, available: points.len() });
    }
    let mut keyed: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (dist2(p, query), i)).collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if g < keyed.len() && g > 0 {
        keyed.select_nth_unstable_by(g - 1, cmp);
        keyed.truncate(g);
    }
    keyed.sort_unstable_by(cmp);
    keyed.truncate(g);
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}

/// kNN groups of size `g` around each center. Points may belong to several groups.
pub fn knn_group(points: &[Point], centers: &[Point], g: usize) -> Result<PatchSet> {
    let member_indices = centers
        .iter()
        .map(|c| nearest(points, c, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(PatchSet { center_indices: Vec::new(), centers: centers.to_vec(), member_indices })
}
