//! Reconstruction quality: D1 (point-to-point) and D2 (point-to-plane)
//! symmetric PSNR, Chamfer distance and normal estimation.

mod grid;

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

pub use grid::GridIndex;

use crate::geometry::{Point3, PointCloud};

/// Coordinate range of the normalized box.
pub const DEFAULT_PEAK: f64 = 64.0;
/// Reported for (near) lossless pairs.
pub const PSNR_CAP: f64 = 100.0;
pub const DEFAULT_NORMAL_NEIGHBORS: usize = 16;
pub const QUALITY_CSV_HEADER: &str = "file,bpp,d1_psnr,d2_psnr,chamfer";

// eigenvalue ratio below which a neighborhood is treated as rank deficient
const RANK_TOLERANCE: f64 = 1e-10;
const ORIENT_EPS: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("point cloud is empty")]
    Empty,
    #[error("need at least {needed} points for {needed}-NN normals, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("normal neighborhood size must be at least 3, got {0}")]
    NeighborCount(usize),
    #[error("{normals} normals for {points} reference points")]
    NormalCount { normals: usize, points: usize },
    #[error("no valid reference normals")]
    NoValidNormals,
    #[error("peak must be positive and finite, got {0}")]
    Peak(f64),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QualityReport {
    pub d1_psnr: f64,
    pub d2_psnr: f64,
    pub chamfer: f64,
    pub bpp: Option<f64>,
    pub peak: f64,
}

impl QualityReport {
    pub fn lossless(&self) -> bool {
        self.d1_psnr >= PSNR_CAP
    }

    /// `file,bpp,d1_psnr,d2_psnr,chamfer`; bpp is blank when unknown.
    pub fn csv_row(&self, file: &str) -> String {
        let bpp = self.bpp.map(|b| format!("{b}")).unwrap_or_default();
        format!("{file},{bpp},{},{},{}", self.d1_psnr, self.d2_psnr, self.chamfer)
    }
}

/// Unit normals from the smallest-eigenvalue eigenvector of each point's
/// `k`-NN covariance, oriented toward +z (then +x, then +y). `None` marks a
/// rank-deficient neighborhood.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<Vec<Option<Point3>>> {
    if k < 3 {
        return Err(MetricsError::NeighborCount(k));
    }
    let pts = cloud.points();
    if pts.len() < k {
        return Err(MetricsError::TooFewPoints {
            needed: k,
            got: pts.len(),
        });
    }
    let grid = GridIndex::new(pts);
    Ok(pts
        .par_iter()
        .map(|p| {
            let nn = grid.knn(p, k);
            plane_normal(nn.iter().map(|&(i, _)| &pts[i]))
        })
        .collect())
}

fn plane_normal<'a>(points: impl Iterator<Item = &'a Point3> + Clone) -> Option<Point3> {
    let n = points.clone().count() as f64;
    let mut mean = [0.0; 3];
    for p in points.clone() {
        for a in 0..3 {
            mean[a] += p[a] / n;
        }
    }
    let mut cov = Matrix3::<f64>::zeros();
    for p in points {
        let d = nalgebra::Vector3::new(p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]);
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, top) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(top > 0.0) || mid <= RANK_TOLERANCE * top {
        return None;
    }
    let v = eig.eigenvectors.column(order[0]);
    let norm = v.norm();
    let mut out = [v[0] / norm, v[1] / norm, v[2] / norm];
    let flip = if out[2].abs() > ORIENT_EPS {
        out[2] < 0.0
    } else if out[0].abs() > ORIENT_EPS {
        out[0] < 0.0
    } else {
        out[1] < 0.0
    };
    if flip {
        out = out.map(|c| -c);
    }
    Some(out)
}

fn check_pair(a: &PointCloud, b: &PointCloud, peak: f64) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty);
    }
    if !(peak.is_finite() && peak > 0.0) {
        return Err(MetricsError::Peak(peak));
    }
    Ok(())
}

/// `10 log10(peak^2 / mse)`, capped.
pub fn psnr(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
}

/// Nearest neighbor in `to` of every point of `from`.
fn nearest_all(from: &[Point3], to: &GridIndex) -> Vec<(usize, f64)> {
    from.par_iter()
        .map(|p| to.nearest(p).expect("non-empty target"))
        .collect()
}

/// Mean squared nearest-neighbor distance from `a` to `b`.
pub fn p2point_mse(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check_pair(a, b, 1.0)?;
    let grid = GridIndex::new(b.points());
    let nn = nearest_all(a.points(), &grid);
    Ok(nn.iter().map(|x| x.1).sum::<f64>() / a.len() as f64)
}

/// Symmetric D1 PSNR (max of the two directional MSEs).
pub fn p2point_psnr(reference: &PointCloud, degraded: &PointCloud, peak: f64) -> Result<f64> {
    check_pair(reference, degraded, peak)?;
    let mse = p2point_mse(degraded, reference)?.max(p2point_mse(reference, degraded)?);
    Ok(psnr(mse, peak))
}

/// Both directional point-to-plane MSEs `(deg -> ref, ref -> deg)`, with each
/// error vector projected on the normal of the reference point of its pair.
pub fn p2plane_mse(
    reference: &PointCloud,
    degraded: &PointCloud,
    normals: &[Option<Point3>],
) -> Result<(f64, f64)> {
    check_pair(reference, degraded, 1.0)?;
    if normals.len() != reference.len() {
        return Err(MetricsError::NormalCount {
            normals: normals.len(),
            points: reference.len(),
        });
    }
    let (r, d) = (reference.points(), degraded.points());
    let proj = |x: &Point3, y: &Point3, n: &Point3| {
        let e = (x[0] - y[0]) * n[0] + (x[1] - y[1]) * n[1] + (x[2] - y[2]) * n[2];
        e * e
    };
    let mean = |errs: Vec<Option<f64>>| {
        let valid: Vec<f64> = errs.into_iter().flatten().collect();
        if valid.is_empty() {
            Err(MetricsError::NoValidNormals)
        } else {
            Ok(valid.iter().sum::<f64>() / valid.len() as f64)
        }
    };
    let rg = GridIndex::new(r);
    let dg = GridIndex::new(d);
    let forward = nearest_all(d, &rg)
        .iter()
        .zip(d)
        .map(|(&(j, _), p)| normals[j].map(|n| proj(p, &r[j], &n)))
        .collect();
    let backward = nearest_all(r, &dg)
        .iter()
        .zip(r)
        .zip(normals)
        .map(|((&(j, _), p), n)| n.map(|n| proj(p, &d[j], &n)))
        .collect();
    Ok((mean(forward)?, mean(backward)?))
}

/// Symmetric D2 PSNR using normals estimated on the reference.
pub fn p2plane_psnr(reference: &PointCloud, degraded: &PointCloud, peak: f64) -> Result<f64> {
    check_pair(reference, degraded, peak)?;
    let normals = estimate_normals(reference, DEFAULT_NORMAL_NEIGHBORS.min(reference.len()).max(3))?;
    p2plane_psnr_with_normals(reference, degraded, &normals, peak)
}

pub fn p2plane_psnr_with_normals(
    reference: &PointCloud,
    degraded: &PointCloud,
    normals: &[Option<Point3>],
    peak: f64,
) -> Result<f64> {
    check_pair(reference, degraded, peak)?;
    let (f, b) = p2plane_mse(reference, degraded, normals)?;
    Ok(psnr(f.max(b), peak))
}

/// Mean squared NN distance `a -> b` plus `b -> a`.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(p2point_mse(a, b)? + p2point_mse(b, a)?)
}

pub fn evaluate(
    reference: &PointCloud,
    degraded: &PointCloud,
    peak: f64,
    bpp: Option<f64>,
) -> Result<QualityReport> {
    Ok(QualityReport {
        d1_psnr: p2point_psnr(reference, degraded, peak)?,
        d2_psnr: p2plane_psnr(reference, degraded, peak)?,
        chamfer: chamfer_distance(reference, degraded)?,
        bpp,
        peak,
    })
}
