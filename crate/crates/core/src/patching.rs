//! Patch division by farthest point sampling + exact KNN, and reassembly of
//! decoded patches around their centroids.

use num_traits::Float;

use crate::geometry::{Point3, PointCloud};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PatchError {
    #[error("requested {requested} points but the cloud only has {available}")]
    TooMany { requested: usize, available: usize },
    #[error("count must be at least 1")]
    ZeroCount,
    #[error("start index {start} out of range for {n} points")]
    BadStart { start: usize, n: usize },
    #[error("invalid patch configuration: {0}")]
    Config(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
}

pub type Result<T> = std::result::Result<T, PatchError>;

/// Patch geometry resolved for one cloud: `patches * patch_points == alpha * n`
/// and `decoded_points == patch_points / alpha`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchConfig {
    pub patches: usize,
    pub patch_points: usize,
    pub alpha: usize,
    pub decoded_points: usize,
}

impl PatchConfig {
    /// Derives the patch count `S = alpha * n / K`.
    pub fn for_cloud(n: usize, alpha: usize, patch_points: usize) -> Result<Self> {
        if patch_points == 0 || n == 0 {
            return Err(PatchError::ZeroCount);
        }
        if alpha < 2 {
            return Err(PatchError::Config(format!(
                "alpha must be greater than 1, got {alpha}"
            )));
        }
        if (alpha * n) % patch_points != 0 {
            return Err(PatchError::Config(format!(
                "alpha*N = {} is not divisible by K = {patch_points}",
                alpha * n
            )));
        }
        Self::checked(n, (alpha * n) / patch_points, patch_points, alpha)
    }

    /// Derives `alpha = S * K / n`, which must be an integer greater than 1.
    pub fn from_counts(n: usize, patches: usize, patch_points: usize) -> Result<Self> {
        if patch_points == 0 || n == 0 || patches == 0 {
            return Err(PatchError::ZeroCount);
        }
        let total = patches * patch_points;
        if total % n != 0 || total / n < 2 {
            return Err(PatchError::Config(format!(
                "S*K = {total} must be an integer multiple (> 1) of N = {n}"
            )));
        }
        Self::checked(n, patches, patch_points, total / n)
    }

    fn checked(n: usize, patches: usize, patch_points: usize, alpha: usize) -> Result<Self> {
        if patch_points % alpha != 0 {
            return Err(PatchError::Config(format!(
                "K = {patch_points} is not divisible by alpha = {alpha}"
            )));
        }
        if patch_points > n {
            return Err(PatchError::TooMany {
                requested: patch_points,
                available: n,
            });
        }
        if patches > n {
            return Err(PatchError::TooMany {
                requested: patches,
                available: n,
            });
        }
        Ok(Self {
            patches,
            patch_points,
            alpha,
            decoded_points: patch_points / alpha,
        })
    }

    /// Number of points produced by decoding: `S * k`.
    pub fn output_points(&self) -> usize {
        self.patches * self.decoded_points
    }
}

/// Sampled patch centers, in FPS emission order.
#[derive(Clone, Debug, PartialEq)]
pub struct Centroids {
    pub indices: Vec<usize>,
    pub positions: Vec<Point3>,
}

/// Patches in centroid-relative coordinates, plus the source indices of their
/// points.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub patches: Vec<Vec<Point3>>,
    pub neighbors: Vec<Vec<usize>>,
}

fn sq_dist<T: Float>(a: &[T; 3], b: &[T; 3]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Greedy farthest point sampling starting at `start`. Each new index maximizes
/// the squared distance to the already emitted set; ties go to the lowest index.
pub fn farthest_point_sample(points: &[Point3], count: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if count == 0 {
        return Err(PatchError::ZeroCount);
    }
    if count > n {
        return Err(PatchError::TooMany {
            requested: count,
            available: n,
        });
    }
    if start >= n {
        return Err(PatchError::BadStart { start, n });
    }
    let mut selected = Vec::with_capacity(count);
    let mut taken = vec![false; n];
    let mut min_dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[start])).collect();
    selected.push(start);
    taken[start] = true;
    while selected.len() < count {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_dist.iter().enumerate() {
            if !taken[i] && d > best_d {
                best = i;
                best_d = d;
            }
        }
        selected.push(best);
        taken[best] = true;
        let p = points[best];
        for (d, q) in min_dist.iter_mut().zip(points) {
            let nd = sq_dist(q, &p);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(selected)
}

/// Exact `k` nearest neighbors of `query`, ordered by ascending squared
/// distance with ties broken by lowest index.
pub fn knn<T: Float>(points: &[[T; 3]], query: &[T; 3], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(PatchError::ZeroCount);
    }
    if k > points.len() {
        return Err(PatchError::TooMany {
            requested: k,
            available: points.len(),
        });
    }
    let mut keyed: Vec<(T, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (sq_dist(p, query), i))
        .collect();
    let order = |a: &(T, usize), b: &(T, usize)| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    };
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k - 1, order);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(order);
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}

/// FPS centroids followed by `patch_points`-NN grouping, with each patch
/// expressed relative to its centroid.
pub fn extract_patches_with(
    cloud: &PointCloud,
    patches: usize,
    patch_points: usize,
    start: usize,
) -> Result<(PatchSet, Centroids)> {
    let points = cloud.points();
    if patch_points > points.len() {
        return Err(PatchError::TooMany {
            requested: patch_points,
            available: points.len(),
        });
    }
    let indices = farthest_point_sample(points, patches, start)?;
    let positions: Vec<Point3> = indices.iter().map(|&i| points[i]).collect();
    let mut set = PatchSet {
        patches: Vec::with_capacity(patches),
        neighbors: Vec::with_capacity(patches),
    };
    for c in &positions {
        let nn = knn(points, c, patch_points)?;
        set.patches.push(
            nn.iter()
                .map(|&j| {
                    let p = points[j];
                    [p[0] - c[0], p[1] - c[1], p[2] - c[2]]
                })
                .collect(),
        );
        set.neighbors.push(nn);
    }
    Ok((set, Centroids { indices, positions }))
}

pub fn extract_patches(
    cloud: &PointCloud,
    cfg: &PatchConfig,
    start: usize,
) -> Result<(PatchSet, Centroids)> {
    if cfg.patches * cfg.patch_points != cfg.alpha * cloud.len() {
        return Err(PatchError::Config(format!(
            "S*K = {} does not equal alpha*N = {}",
            cfg.patches * cfg.patch_points,
            cfg.alpha * cloud.len()
        )));
    }
    extract_patches_with(cloud, cfg.patches, cfg.patch_points, start)
}

/// Shifts each decoded patch back to its centroid and concatenates them in
/// centroid order. Duplicates are kept.
pub fn assemble(decoded: &[Vec<Point3>], centroids: &[Point3]) -> Result<PointCloud> {
    if decoded.len() != centroids.len() {
        return Err(PatchError::SizeMismatch(format!(
            "{} decoded patches for {} centroids",
            decoded.len(),
            centroids.len()
        )));
    }
    let per_patch = decoded.first().map_or(0, Vec::len);
    if per_patch == 0 {
        return Err(PatchError::ZeroCount);
    }
    let mut out = Vec::with_capacity(decoded.len() * per_patch);
    for (i, (patch, c)) in decoded.iter().zip(centroids).enumerate() {
        if patch.len() != per_patch {
            return Err(PatchError::SizeMismatch(format!(
                "patch {i} has {} points, expected {per_patch}",
                patch.len()
            )));
        }
        out.extend(
            patch
                .iter()
                .map(|p| [p[0] + c[0], p[1] + c[1], p[2] + c[2]]),
        );
    }
    PointCloud::new(out).map_err(|e| PatchError::SizeMismatch(e.to_string()))
}

/// Fraction of cloud points that appear in at least one of the `patches`
/// KNN groups of size `patch_points`.
pub fn coverage_fraction(cloud: &PointCloud, patches: usize, patch_points: usize) -> Result<f64> {
    let (set, _) = extract_patches_with(cloud, patches, patch_points, 0)?;
    let mut seen = vec![false; cloud.len()];
    for nn in &set.neighbors {
        for &j in nn {
            seen[j] = true;
        }
    }
    Ok(seen.iter().filter(|&&s| s).count() as f64 / cloud.len() as f64)
}
