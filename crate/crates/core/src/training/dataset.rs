use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{Result, TrainingError};
use crate::geometry::{
    load_off_and_sample, load_ply, normalize_to_box, synth_shape, Point3, PointCloud, ShapeSpec,
};
use crate::patching::{extract_patches, PatchConfig};

/// Where training clouds come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Shapes(Vec<ShapeSpec>),
    /// `.off` meshes (sampled to `points` each) and `.ply` clouds (which must
    /// already hold `points` points), in file-name order.
    MeshDir {
        path: PathBuf,
        points: usize,
        seed: u64,
    },
}

/// Every patch of every training cloud, normalized and centroid-relative.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub shapes: Vec<Vec<Array2<f32>>>,
}

pub fn patch_matrix(patch: &[Point3]) -> Array2<f32> {
    Array2::from_shape_fn((patch.len(), 3), |(i, a)| patch[i][a] as f32)
}

pub fn mesh_dir_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|source| TrainingError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("off" | "ply")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

impl DatasetSpec {
    /// Raw (unnormalized) clouds.
    pub fn clouds(&self) -> Result<Vec<PointCloud>> {
        let clouds = match self {
            DatasetSpec::Shapes(specs) => specs
                .iter()
                .map(synth_shape)
                .collect::<std::result::Result<Vec<_>, _>>()?,
            DatasetSpec::MeshDir { path, points, seed } => {
                let mut out = Vec::new();
                for (i, file) in mesh_dir_files(path)?.iter().enumerate() {
                    let is_off = file
                        .extension()
                        .is_some_and(|e| e.eq_ignore_ascii_case("off"));
                    let cloud = if is_off {
                        load_off_and_sample(file, *points, seed.wrapping_add(i as u64))?
                    } else {
                        load_ply(file)?
                    };
                    if cloud.len() != *points {
                        return Err(TrainingError::Dataset(format!(
                            "{} has {} points, expected {points}",
                            file.display(),
                            cloud.len()
                        )));
                    }
                    out.push(cloud);
                }
                out
            }
        };
        if clouds.is_empty() {
            return Err(TrainingError::Dataset("dataset is empty".into()));
        }
        Ok(clouds)
    }
}

impl Dataset {
    pub fn load(spec: &DatasetSpec, patch: &PatchConfig) -> Result<Self> {
        Self::from_clouds(&spec.clouds()?, patch)
    }

    pub fn from_clouds(clouds: &[PointCloud], patch: &PatchConfig) -> Result<Self> {
        if clouds.is_empty() {
            return Err(TrainingError::Dataset("dataset is empty".into()));
        }
        let mut shapes = Vec::with_capacity(clouds.len());
        for cloud in clouds {
            let (norm, _) = normalize_to_box(cloud)?;
            let (set, _) = extract_patches(&norm, patch, 0)?;
            shapes.push(set.patches.iter().map(|p| patch_matrix(p)).collect());
        }
        Ok(Self { shapes })
    }

    pub fn num_patches(&self) -> usize {
        self.shapes.iter().map(Vec::len).sum()
    }

    pub fn all_patches(&self) -> impl Iterator<Item = &Array2<f32>> {
        self.shapes.iter().flatten()
    }
}
