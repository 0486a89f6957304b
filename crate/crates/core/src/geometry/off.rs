//! OFF mesh loading and area-weighted surface sampling.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GeometryError, Point3, PointCloud, Result};

/// A triangle soup; polygons from the source file are fan-triangulated.
#[derive(Clone, Debug)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let cross = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        0.5 * (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt()
    }
}

fn parse_off(text: &str, path: &Path) -> Result<TriangleMesh> {
    let err = |line: usize, message: &str| GeometryError::Parse {
        path: path.to_path_buf(),
        location: format!("line {line}"),
        message: message.to_string(),
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (first_no, first) = lines.next().ok_or_else(|| err(1, "empty file"))?;
    let rest = first
        .strip_prefix("OFF")
        .ok_or_else(|| err(first_no, "missing OFF magic"))?
        .trim();
    // some ModelNet files glue the counts onto the magic ("OFF490 518 0")
    let (counts_no, counts) = if rest.is_empty() {
        lines
            .next()
            .ok_or_else(|| err(first_no + 1, "missing element counts"))?
    } else {
        (first_no, rest)
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| err(counts_no, "element counts are not integers"))?;
    if counts.len() < 2 {
        return Err(err(counts_no, "expected vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (no, line) = lines
            .next()
            .ok_or_else(|| err(counts_no, "fewer vertices than declared"))?;
        let v: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(no, "invalid vertex coordinate"))?;
        if v.len() != 3 || v.iter().any(|c| !c.is_finite()) {
            return Err(err(no, "vertex needs three finite coordinates"));
        }
        vertices.push([v[0], v[1], v[2]]);
    }

    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (no, line) = lines
            .next()
            .ok_or_else(|| err(counts_no, "fewer faces than declared"))?;
        let idx: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(no, "invalid face index"))?;
        let n = *idx.first().ok_or_else(|| err(no, "empty face line"))?;
        if n < 3 || idx.len() < n + 1 {
            return Err(err(no, "face needs at least three vertex indices"));
        }
        let face = &idx[1..=n];
        if face.iter().any(|&i| i >= nv) {
            return Err(err(no, "face index out of range"));
        }
        for j in 1..n - 1 {
            triangles.push([face[0], face[j], face[j + 1]]);
        }
    }
    if triangles.is_empty() {
        return Err(err(counts_no, "mesh has no faces"));
    }
    Ok(TriangleMesh {
        vertices,
        triangles,
    })
}

pub fn load_off(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GeometryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_off(&text, path)
}

/// Draws `n` points on the mesh surface, choosing triangles with probability
/// proportional to their area.
pub fn sample_mesh(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(GeometryError::Degenerate);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        let t = cumulative
            .partition_point(|&c| c <= target)
            .min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangles[t].map(|i| mesh.vertices[i]);
        let r1 = rng.random::<f64>().sqrt();
        let r2 = rng.random::<f64>();
        let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
        points.push([
            wa * a[0] + wb * b[0] + wc * c[0],
            wa * a[1] + wb * b[1] + wc * c[1],
            wa * a[2] + wb * b[2] + wc * c[2],
        ]);
    }
    PointCloud::new(points)
}

pub fn load_off_and_sample(path: impl AsRef<Path>, n: usize, seed: u64) -> Result<PointCloud> {
    sample_mesh(&load_off(path)?, n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mesh(text: &str) -> Result<TriangleMesh> {
        parse_off(text, Path::new("mem.off"))
    }

    #[test]
    fn unit_triangle_samples_stay_inside() {
        let m = mesh("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        let c = sample_mesh(&m, 100, 5).unwrap();
        assert_eq!(c.len(), 100);
        for p in c.points() {
            assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] + p[1] <= 1.0 + 1e-12);
            assert_eq!(p[2], 0.0);
        }
    }

    #[test]
    fn area_weighted_counts() {
        // area 1 triangle in z=0, area 3 triangle in z=1
        let m = mesh(
            "OFF\n6 2 0\n0 0 0\n2 0 0\n0 1 0\n0 0 1\n3 0 1\n0 2 1\n3 0 1 2\n3 3 4 5\n",
        )
        .unwrap();
        assert_eq!(m.triangle_area(0), 1.0);
        assert_eq!(m.triangle_area(1), 3.0);
        let c = sample_mesh(&m, 4000, 11).unwrap();
        let low = c.points().iter().filter(|p| p[2] == 0.0).count();
        // binomial sd = sqrt(4000 * 0.25 * 0.75) ~ 27.4, 3 sigma ~ 80
        assert!((low as i64 - 1000).abs() <= 80, "{low}");
        assert!(((4000 - low) as i64 - 3000).abs() <= 80);
    }

    #[test]
    fn polygons_are_fan_triangulated() {
        let m = mesh("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn glued_header_counts() {
        let m = mesh("OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(m.vertices.len(), 3);
    }

    #[test]
    fn zero_faces_is_an_error() {
        assert!(mesh("OFF\n3 0 0\n0 0 0\n1 0 0\n0 1 0\n").is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let m = mesh("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(
            sample_mesh(&m, 50, 3).unwrap(),
            sample_mesh(&m, 50, 3).unwrap()
        );
        assert_ne!(
            sample_mesh(&m, 50, 3).unwrap(),
            sample_mesh(&m, 50, 4).unwrap()
        );
    }
}
