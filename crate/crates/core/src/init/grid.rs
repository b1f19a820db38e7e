//! Uniform spatial hash grid over 2D points.

use std::collections::HashMap;

#[derive(Clone, Debug)]
pub struct SpatialGrid {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<u32>>,
    points: Vec<[f64; 2]>,
    lo: (i64, i64),
    hi: (i64, i64),
}

impl SpatialGrid {
    pub fn new(cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell size must be positive");
        Self {
            cell,
            cells: HashMap::new(),
            points: Vec::new(),
            lo: (i64::MAX, i64::MAX),
            hi: (i64::MIN, i64::MIN),
        }
    }

    pub fn from_points(cell: f64, points: &[[f64; 2]]) -> Self {
        let mut g = Self::new(cell);
        for &p in points {
            g.insert(p);
        }
        g
    }

    #[inline]
    fn key(&self, p: [f64; 2]) -> (i64, i64) {
        ((p[0] / self.cell).floor() as i64, (p[1] / self.cell).floor() as i64)
    }

    pub fn insert(&mut self, p: [f64; 2]) -> usize {
        let id = self.points.len();
        let k = self.key(p);
        self.cells.entry(k).or_default().push(id as u32);
        self.lo = (self.lo.0.min(k.0), self.lo.1.min(k.1));
        self.hi = (self.hi.0.max(k.0), self.hi.1.max(k.1));
        self.points.push(p);
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Distance to the nearest stored point if one lies within `cell` of `p`.
    pub fn nearest_within_cell(&self, p: [f64; 2]) -> Option<f64> {
        let (kx, ky) = self.key(p);
        let mut best: Option<f64> = None;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let Some(ids) = self.cells.get(&(kx + dx, ky + dy)) else {
                    continue;
                };
                for &id in ids {
                    let d = dist(p, self.points[id as usize]);
                    if d <= self.cell && best.map_or(true, |b| d < b) {
                        best = Some(d);
                    }
                }
            }
        }
        best
    }

    /// Squared distances from stored point `query` to its `k` nearest other
    /// stored points, ascending. Returns fewer than `k` only when the grid
    /// holds fewer than `k + 1` points.
    pub fn knn_sq_excluding(&self, query: usize, k: usize) -> Vec<f64> {
        let p = self.points[query];
        let (kx, ky) = self.key(p);
        let mut best: Vec<f64> = Vec::with_capacity(k + 1);
        let max_ring = (kx - self.lo.0)
            .max(self.hi.0 - kx)
            .max(ky - self.lo.1)
            .max(self.hi.1 - ky)
            .max(0);
        let mut ring = 0i64;
        loop {
            for (cx, cy) in ring_cells(kx, ky, ring) {
                let Some(ids) = self.cells.get(&(cx, cy)) else {
                    continue;
                };
                for &id in ids {
                    if id as usize == query {
                        continue;
                    }
                    let q = self.points[id as usize];
                    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                    if best.len() < k || d2 < best[k - 1] {
                        let at = best.partition_point(|&b| b <= d2);
                        best.insert(at, d2);
                        best.truncate(k);
                    }
                }
            }
            // Anything outside rings 0..=ring is at least `ring * cell` away.
            let reach = ring as f64 * self.cell;
            if (best.len() == k && best[k - 1] <= reach * reach) || ring >= max_ring {
                break;
            }
            ring += 1;
        }
        best
    }
}

#[inline]
pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Cells at Chebyshev distance exactly `ring` from `(kx, ky)`.
fn ring_cells(kx: i64, ky: i64, ring: i64) -> Vec<(i64, i64)> {
    if ring == 0 {
        return vec![(kx, ky)];
    }
    let mut out = Vec::with_capacity(8 * ring as usize);
    for dx in -ring..=ring {
        out.push((kx + dx, ky - ring));
        out.push((kx + dx, ky + ring));
    }
    for dy in -ring + 1..ring {
        out.push((kx - ring, ky + dy));
        out.push((kx + ring, ky + dy));
    }
    out
}
