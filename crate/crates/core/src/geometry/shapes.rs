//! Synthetic surface shapes used as a desk-scale training corpus.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{GeometryError, Point3, PointCloud, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    Torus,
    CubeSurface,
    Cylinder,
    TwoSpheres,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Sphere,
        ShapeKind::Torus,
        ShapeKind::CubeSurface,
        ShapeKind::Cylinder,
        ShapeKind::TwoSpheres,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Torus => "torus",
            ShapeKind::CubeSurface => "cube_surface",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::TwoSpheres => "two_spheres",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .or(match s {
                "cube" => Some(ShapeKind::CubeSurface),
                _ => None,
            })
            .ok_or_else(|| GeometryError::UnknownShape(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub n: usize,
    pub seed: u64,
}

const TORUS_MAJOR: f64 = 1.0;
const TORUS_MINOR: f64 = 0.35;
const CYLINDER_RADIUS: f64 = 0.5;
const CYLINDER_HALF_HEIGHT: f64 = 1.0;
const TWIN_OFFSET: f64 = 1.5;

fn unit_sphere(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-12 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

fn torus(rng: &mut ChaCha8Rng) -> Point3 {
    // rejection on the tube angle makes the density uniform in area
    let tube = loop {
        let t = rng.random::<f64>() * 2.0 * PI;
        let accept = (TORUS_MAJOR + TORUS_MINOR * t.cos()) / (TORUS_MAJOR + TORUS_MINOR);
        if rng.random::<f64>() < accept {
            break t;
        }
    };
    let around = rng.random::<f64>() * 2.0 * PI;
    let ring = TORUS_MAJOR + TORUS_MINOR * tube.cos();
    [ring * around.cos(), ring * around.sin(), TORUS_MINOR * tube.sin()]
}

fn cube_surface(rng: &mut ChaCha8Rng) -> Point3 {
    let face = rng.random_range(0..6usize);
    let u = rng.random::<f64>() * 2.0 - 1.0;
    let v = rng.random::<f64>() * 2.0 - 1.0;
    let side = if face % 2 == 0 { 1.0 } else { -1.0 };
    match face / 2 {
        0 => [side, u, v],
        1 => [u, side, v],
        _ => [u, v, side],
    }
}

fn cylinder(rng: &mut ChaCha8Rng) -> Point3 {
    let lateral = 2.0 * PI * CYLINDER_RADIUS * 2.0 * CYLINDER_HALF_HEIGHT;
    let cap = PI * CYLINDER_RADIUS * CYLINDER_RADIUS;
    let pick = rng.random::<f64>() * (lateral + 2.0 * cap);
    let angle = rng.random::<f64>() * 2.0 * PI;
    if pick < lateral {
        let z = (rng.random::<f64>() * 2.0 - 1.0) * CYLINDER_HALF_HEIGHT;
        [
            CYLINDER_RADIUS * angle.cos(),
            CYLINDER_RADIUS * angle.sin(),
            z,
        ]
    } else {
        let r = CYLINDER_RADIUS * rng.random::<f64>().sqrt();
        let z = if pick < lateral + cap {
            CYLINDER_HALF_HEIGHT
        } else {
            -CYLINDER_HALF_HEIGHT
        };
        [r * angle.cos(), r * angle.sin(), z]
    }
}

/// Samples `spec.n` points approximately uniformly over the shape's surface.
/// The result is a pure function of `spec`.
pub fn synth_shape(spec: &ShapeSpec) -> Result<PointCloud> {
    if spec.n < 8 {
        return Err(GeometryError::TooFewPoints(spec.n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let points = (0..spec.n)
        .map(|_| match spec.kind {
            ShapeKind::Sphere => unit_sphere(&mut rng),
            ShapeKind::Torus => torus(&mut rng),
            ShapeKind::CubeSurface => cube_surface(&mut rng),
            ShapeKind::Cylinder => cylinder(&mut rng),
            ShapeKind::TwoSpheres => {
                let p = unit_sphere(&mut rng);
                let shift = if rng.random::<bool>() {
                    TWIN_OFFSET
                } else {
                    -TWIN_OFFSET
                };
                [p[0] + shift, p[1], p[2]]
            }
        })
        .collect();
    PointCloud::new(points)
}
