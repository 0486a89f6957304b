//! Exact nearest-neighbor queries over a uniform grid.
//!
//! Cells are visited in growing Chebyshev shells around the query's cell.
//! Every point beyond shell `r` is at least `r * cell` away, so the search
//! stops once the k-th best distance is below that. Ties resolve to the lower
//! point index, matching a brute-force scan.

use crate::geometry::{sq_dist, Point3};

pub struct GridIndex<'a> {
    points: &'a [Point3],
    min: Point3,
    cell: f64,
    dims: [i64; 3],
    /// CSR layout: points of cell `c` are `order[start[c]..start[c + 1]]`.
    start: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> GridIndex<'a> {
    pub fn new(points: &'a [Point3]) -> Self {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        if points.is_empty() {
            min = [0.0; 3];
            max = [0.0; 3];
        }
        let extent = (0..3).map(|a| max[a] - min[a]).fold(0.0, f64::max);
        // roughly two points per cell for volume-filling clouds
        let per_axis = ((points.len() as f64 / 2.0).cbrt().ceil()).clamp(1.0, 256.0);
        let cell = if extent > 0.0 { extent / per_axis } else { 1.0 };
        let dims = [0, 1, 2].map(|a| (((max[a] - min[a]) / cell).floor() as i64 + 1).max(1));
        let mut grid = Self {
            points,
            min,
            cell,
            dims,
            start: Vec::new(),
            order: Vec::new(),
        };
        let ncells = (dims[0] * dims[1] * dims[2]) as usize;
        let ids: Vec<usize> = points
            .iter()
            .map(|p| grid.flat(grid.clamp(grid.coord(p))))
            .collect();
        let mut start = vec![0usize; ncells + 1];
        for &c in &ids {
            start[c + 1] += 1;
        }
        for c in 0..ncells {
            start[c + 1] += start[c];
        }
        let mut fill = start.clone();
        let mut order = vec![0usize; points.len()];
        for (i, &c) in ids.iter().enumerate() {
            order[fill[c]] = i;
            fill[c] += 1;
        }
        grid.start = start;
        grid.order = order;
        grid
    }

    fn coord(&self, p: &Point3) -> [i64; 3] {
        [0, 1, 2].map(|a| ((p[a] - self.min[a]) / self.cell).floor() as i64)
    }

    fn clamp(&self, c: [i64; 3]) -> [i64; 3] {
        [0, 1, 2].map(|a| c[a].clamp(0, self.dims[a] - 1))
    }

    fn flat(&self, c: [i64; 3]) -> usize {
        ((c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]) as usize
    }

    fn visit_cell(&self, c: [i64; 3], mut f: impl FnMut(usize)) {
        let id = self.flat(c);
        for &i in &self.order[self.start[id]..self.start[id + 1]] {
            f(i);
        }
    }

    /// Calls `f` for every in-grid cell at Chebyshev distance exactly `r`.
    fn shell(&self, q: [i64; 3], r: i64, mut f: impl FnMut([i64; 3])) {
        let range = |a: usize| (q[a] - r).max(0)..=(q[a] + r).min(self.dims[a] - 1);
        for z in range(2) {
            let zr = (z - q[2]).abs() == r;
            for y in range(1) {
                let yr = zr || (y - q[1]).abs() == r;
                if yr {
                    for x in range(0) {
                        f([x, y, z]);
                    }
                } else {
                    // r > 0 here, so the two faces are distinct
                    for x in [q[0] - r, q[0] + r] {
                        if x >= 0 && x < self.dims[0] {
                            f([x, y, z]);
                        }
                    }
                }
            }
        }
    }

    fn max_shell(&self, q: [i64; 3]) -> i64 {
        (0..3)
            .map(|a| q[a].abs().max((self.dims[a] - 1 - q[a]).abs()))
            .max()
            .unwrap_or(0)
    }

    /// Nearest point index and squared distance.
    pub fn nearest(&self, query: &Point3) -> Option<(usize, f64)> {
        Some(*self.knn(query, 1).first()?)
    }

    /// The `k` nearest points as `(index, squared distance)`, closest first.
    pub fn knn(&self, query: &Point3, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let q = self.coord(query);
        let last = self.max_shell(q);
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        let better = |a: &(usize, f64), b: &(usize, f64)| a.1 < b.1 || (a.1 == b.1 && a.0 < b.0);
        // shells entirely outside the grid contribute nothing
        let first = (0..3)
            .map(|a| (-q[a]).max(q[a] - (self.dims[a] - 1)).max(0))
            .max()
            .unwrap_or(0);
        for r in first..=last {
            if best.len() == k {
                let bound = (r - 1) as f64 * self.cell;
                if bound > 0.0 && best[k - 1].1 < bound * bound {
                    break;
                }
            }
            self.shell(q, r, |c| {
                self.visit_cell(c, |i| {
                    let cand = (i, sq_dist(&self.points[i], query));
                    if best.len() < k || better(&cand, &best[k - 1]) {
                        let pos = best.partition_point(|b| better(b, &cand));
                        best.insert(pos, cand);
                        best.truncate(k);
                    }
                });
            });
        }
        best
    }
}
