//! Point cloud representation, coordinate normalization and dataset sources.

mod off;
mod ply;
mod shapes;

pub use off::{load_off, load_off_and_sample, sample_mesh, TriangleMesh};
pub use ply::{load_ply, read_ply, save_ply, write_ply, PlyFormat};
pub use shapes::{synth_shape, ShapeKind, ShapeSpec};

use std::path::PathBuf;

/// A point in world (or normalized) coordinates.
pub type Point3 = [f64; 3];

/// Side length of the cube every cloud is normalized into.
pub const BOX_EXTENT: f64 = 64.0;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("point cloud is empty")]
    Empty,
    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },
    #[error("cannot normalize a degenerate cloud (all points identical or fewer than 2)")]
    Degenerate,
    #[error("{path}: parse error at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },
    #[error("unknown shape kind `{0}`")]
    UnknownShape(String),
    #[error("shape needs at least 8 points, got {0}")]
    TooFewPoints(usize),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// An ordered, non-empty set of finite 3D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(GeometryError::Empty);
        }
        if let Some(index) = points
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(GeometryError::NonFinite { index });
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> (Point3, Point3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    pub fn map(&self, f: impl Fn(&Point3) -> Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(f).collect(),
        }
    }
}

/// The affine map `normalized = (world - offset) * scale` applied by
/// [`normalize_to_box`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleParams {
    pub offset: Point3,
    pub scale: f64,
}

impl ScaleParams {
    pub fn identity() -> Self {
        Self {
            offset: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        [
            (p[0] - self.offset[0]) * self.scale,
            (p[1] - self.offset[1]) * self.scale,
            (p[2] - self.offset[2]) * self.scale,
        ]
    }

    pub fn invert(&self, p: &Point3) -> Point3 {
        [
            p[0] / self.scale + self.offset[0],
            p[1] / self.scale + self.offset[1],
            p[2] / self.scale + self.offset[2],
        ]
    }

    pub fn normalize(&self, cloud: &PointCloud) -> PointCloud {
        cloud.map(|p| self.apply(p))
    }

    pub fn denormalize(&self, cloud: &PointCloud) -> PointCloud {
        cloud.map(|p| self.invert(p))
    }
}

/// Uniformly scales and translates `cloud` so its bounding box sits in
/// `[0, 64]^3` with the longest axis spanning the whole range.
pub fn normalize_to_box(cloud: &PointCloud) -> Result<(PointCloud, ScaleParams)> {
    if cloud.len() < 2 {
        return Err(GeometryError::Degenerate);
    }
    let (lo, hi) = cloud.bounds();
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if !(extent > 0.0) {
        return Err(GeometryError::Degenerate);
    }
    let params = ScaleParams {
        offset: lo,
        scale: BOX_EXTENT / extent,
    };
    let mut out = params.normalize(cloud);
    // rounding can push the far corner a hair past the box
    for p in &mut out.points {
        for c in p.iter_mut() {
            *c = c.clamp(0.0, BOX_EXTENT);
        }
    }
    Ok((out, params))
}

pub(crate) fn sq_dist(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
