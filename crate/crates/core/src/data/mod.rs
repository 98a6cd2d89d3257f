//! Cloud files, pose manifests and the synthetic LiDAR dataset.

pub mod cloud_io;
pub mod manifest;
pub mod synth;

use rayon::prelude::*;

pub use cloud_io::{load_cloud, save_cloud};
pub use manifest::{load_manifest, write_manifest, DatasetManifest, LoadReport, ManifestRecord, Split};
pub use synth::{
    build_synthetic_dataset, generate_scene, sample_trajectory, simulate_scan, Aabb, ScanConfig, SynthConfig,
    SyntheticScene,
};

use crate::error::Result;
use crate::geometry::Pose;
use crate::sampling::{derive_seed, random_downsample, PointCloud};
use crate::scalar::Scalar;

/// File name of the manifest written next to the `clouds/` directory.
pub const MANIFEST_NAME: &str = "manifest.csv";

/// A cloud resampled to the network input size, with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T> {
    /// Position of the record in the manifest.
    pub index: usize,
    pub cloud: PointCloud<T>,
    pub pose: Pose<T>,
}

pub fn pose_from_f64<T: Scalar>(p: &Pose<f64>) -> Pose<T> {
    Pose {
        t: p.t.map(T::lit),
        q: p.q.map(T::lit),
    }
}

/// Loads and resamples the frames of `split` (all frames for `None`). The
/// resampling seed of each frame depends only on `seed` and the frame's
/// manifest position, so training and evaluation see identical inputs.
pub fn load_frames<T: Scalar>(
    manifest: &DatasetManifest,
    split: Option<Split>,
    n_points: usize,
    seed: u64,
) -> Result<Vec<Frame<T>>> {
    let chosen: Vec<(usize, &ManifestRecord)> = manifest
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| split.is_none_or(|s| r.split == s))
        .collect();
    chosen
        .par_iter()
        .map(|&(index, r)| {
            let raw: PointCloud<T> = load_cloud(&manifest.resolve(r))?;
            Ok(Frame {
                index,
                cloud: random_downsample(&raw, n_points, derive_seed(seed, index as u64))?,
                pose: pose_from_f64(&r.pose),
            })
        })
        .collect()
}
