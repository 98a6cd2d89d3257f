//! Box-world LiDAR simulator: a closed room with furniture-like boxes, a
//! smooth sensor trajectory and a spinning multi-beam scanner.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::cloud_io::save_cloud;
use super::manifest::{write_manifest, DatasetManifest, ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::geometry::{quat_from_axis_angle, quat_mul, quat_rotate, Pose, Vec3};
use crate::sampling::{derive_seed, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3<f64>,
    pub max: Vec3<f64>,
}

impl Aabb {
    pub fn contains(&self, p: Vec3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|i| other.min[i] >= self.min[i] && other.max[i] <= self.max[i])
    }

    /// Entry distance of a ray starting outside the box, if it hits.
    fn ray_entry(&self, o: Vec3<f64>, d: Vec3<f64>) -> Option<f64> {
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..3 {
            if d[i] == 0.0 {
                if o[i] < self.min[i] || o[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let a = (self.min[i] - o[i]) / d[i];
            let b = (self.max[i] - o[i]) / d[i];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1 && t0 > 0.0).then_some(t0)
    }

    /// Exit distance of a ray starting inside the box.
    fn ray_exit(&self, o: Vec3<f64>, d: Vec3<f64>) -> f64 {
        (0..3)
            .filter(|&i| d[i] != 0.0)
            .map(|i| {
                let wall = if d[i] > 0.0 { self.max[i] } else { self.min[i] };
                (wall - o[i]) / d[i]
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub room: Aabb,
    pub boxes: Vec<Aabb>,
    /// Region kept clear of boxes for the sensor to move through.
    pub free_zone: Aabb,
    pub seed: u64,
}

pub const ROOM_SIZE: Vec3<f64> = [4.0, 5.0, 3.0];

impl SyntheticScene {
    /// Room walls plus boxes.
    pub fn surface_count(&self) -> usize {
        1 + self.boxes.len()
    }

    /// True when `p` is strictly inside the room and outside every box.
    pub fn is_free(&self, p: Vec3<f64>) -> bool {
        let r = &self.room;
        (0..3).all(|i| p[i] > r.min[i] && p[i] < r.max[i]) && !self.boxes.iter().any(|b| b.contains(p))
    }

    /// Distance to the first surface along the unit direction `d`.
    pub fn cast(&self, o: Vec3<f64>, d: Vec3<f64>) -> f64 {
        self.boxes
            .iter()
            .filter_map(|b| b.ray_entry(o, d))
            .fold(self.room.ray_exit(o, d), f64::min)
    }
}

/// A 4 m × 5 m × 3 m room centered on the origin in x/y with the floor at
/// z = 0, holding 6 to 12 boxes outside a central free zone.
pub fn generate_scene(seed: u64) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [sx, sy, sz] = ROOM_SIZE;
    let room = Aabb {
        min: [-sx / 2.0, -sy / 2.0, 0.0],
        max: [sx / 2.0, sy / 2.0, sz],
    };
    let free_zone = Aabb {
        min: [-1.0, -1.5, 0.0],
        max: [1.0, 1.5, sz],
    };
    let n = rng.random_range(6..=12);
    let mut boxes = Vec::with_capacity(n);
    while boxes.len() < n {
        let size = [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.3..2.2)];
        let x = rng.random_range(room.min[0]..room.max[0] - size[0]);
        let y = rng.random_range(room.min[1]..room.max[1] - size[1]);
        let z = if rng.random_bool(0.25) { rng.random_range(0.5..sz - size[2].min(2.0)) } else { 0.0 };
        let b = Aabb {
            min: [x, y, z],
            max: [x + size[0], y + size[1], (z + size[2]).min(sz)],
        };
        let clear = b.max[0] <= free_zone.min[0]
            || b.min[0] >= free_zone.max[0]
            || b.max[1] <= free_zone.min[1]
            || b.min[1] >= free_zone.max[1];
        if clear && room.contains_box(&b) {
            boxes.push(b);
        }
    }
    SyntheticScene {
        room,
        boxes,
        free_zone,
        seed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    pub beams: usize,
    pub azimuth_steps: usize,
    pub noise_sigma: f64,
    /// Half of the vertical field of view, in degrees.
    pub half_fov_deg: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            beams: 32,
            azimuth_steps: 360,
            noise_sigma: 0.01,
            half_fov_deg: 20.0,
        }
    }
}

/// Unit sensor-frame direction of beam `b`, azimuth column `a`.
pub fn beam_direction(scan: &ScanConfig, b: usize, a: usize) -> Vec3<f64> {
    let el = if scan.beams == 1 {
        0.0
    } else {
        (-scan.half_fov_deg + 2.0 * scan.half_fov_deg * b as f64 / (scan.beams - 1) as f64).to_radians()
    };
    let az = 2.0 * PI * a as f64 / scan.azimuth_steps as f64;
    [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
}

/// Casts every beam from `pose` and returns first hits in the sensor frame.
/// Range noise is Gaussian, truncated at three standard deviations.
pub fn simulate_scan(scene: &SyntheticScene, pose: &Pose<f64>, scan: &ScanConfig, seed: u64) -> Result<PointCloud<f64>> {
    if scan.beams == 0 || scan.azimuth_steps == 0 {
        return Err(Error::InvalidArgument("beams and azimuth_steps must be positive".into()));
    }
    if !(scan.noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument("noise_sigma must be non-negative".into()));
    }
    if !scene.is_free(pose.t) {
        return Err(Error::PoseOutsideRoom { position: pose.t });
    }
    let noise = Normal::new(0.0, scan.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let bound = 3.0 * scan.noise_sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(scan.beams * scan.azimuth_steps);
    for b in 0..scan.beams {
        for a in 0..scan.azimuth_steps {
            let d = beam_direction(scan, b, a);
            let range = scene.cast(pose.t, quat_rotate(pose.q, d));
            if !range.is_finite() {
                continue;
            }
            let mut e = 0.0;
            if scan.noise_sigma > 0.0 {
                e = noise.sample(&mut rng);
                while e.abs() > bound {
                    e = noise.sample(&mut rng);
                }
            }
            let r = range + e;
            points.push([d[0] * r, d[1] * r, d[2] * r]);
        }
    }
    PointCloud::new(points)
}

/// Smooth closed-form path through the free zone: Lissajous-style position,
/// yaw within ±75°, a few degrees of roll and pitch.
pub fn sample_trajectory(scene: &SyntheticScene, frames: usize, seed: u64) -> Vec<Pose<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wave = |amp: f64| {
        let freq = rng.random_range(0.4..0.9);
        let phase = rng.random_range(0.0..2.0 * PI);
        move |s: f64| amp * (2.0 * PI * freq * s + phase).sin()
    };
    let fz = &scene.free_zone;
    let cx = 0.5 * (fz.min[0] + fz.max[0]);
    let cy = 0.5 * (fz.min[1] + fz.max[1]);
    let x = wave(0.4 * (fz.max[0] - fz.min[0]));
    let y = wave(0.4 * (fz.max[1] - fz.min[1]));
    let z = wave(0.15);
    let yaw = wave(1.1);
    let roll = wave(0.05);
    let pitch = wave(0.05);
    let yaw0 = rng.random_range(-0.2..0.2);
    (0..frames)
        .map(|i| {
            let s = if frames > 1 { i as f64 / (frames - 1) as f64 } else { 0.0 };
            let q = quat_mul(
                quat_from_axis_angle([0.0, 0.0, 1.0], yaw0 + yaw(s)),
                quat_mul(
                    quat_from_axis_angle([0.0, 1.0, 0.0], pitch(s)),
                    quat_from_axis_angle([1.0, 0.0, 0.0], roll(s)),
                ),
            );
            Pose::new([cx + x(s), cy + y(s), 1.2 + z(s)], q).expect("unit quaternion")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub frames: usize,
    pub seed: u64,
    pub scan: ScanConfig,
    /// Train, val and test shares of the trajectory, in that order.
    pub split_fractions: [f64; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 64,
            seed: 0,
            scan: ScanConfig::default(),
            split_fractions: [0.7, 0.1, 0.2],
        }
    }
}

/// Contiguous segment sizes for the three splits; they sum to `frames`.
pub fn split_sizes(frames: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || !(total > 0.0) {
        return Err(Error::InvalidArgument("split fractions must be non-negative with a positive sum".into()));
    }
    let share = |f: f64| (frames as f64 * f / total).round() as usize;
    let train = share(fractions[0]).min(frames);
    let val = share(fractions[1]).min(frames - train);
    Ok([train, val, frames - train - val])
}

/// One scene, one trajectory, one cloud file per pose and a manifest whose
/// splits are consecutive trajectory segments with distinct sequence tags.
pub fn build_synthetic_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    if cfg.frames == 0 {
        return Err(Error::InvalidArgument("at least one frame required".into()));
    }
    let sizes = split_sizes(cfg.frames, cfg.split_fractions)?;
    let scene = generate_scene(derive_seed(cfg.seed, 0));
    let poses = sample_trajectory(&scene, cfg.frames, derive_seed(cfg.seed, 1));
    let scan_seed = derive_seed(cfg.seed, 2);
    std::fs::create_dir_all(out_dir.join("clouds"))?;
    let splits = Split::ALL.iter().zip(sizes).flat_map(|(&s, n)| std::iter::repeat_n(s, n));
    let mut records = Vec::with_capacity(cfg.frames);
    for (i, (pose, split)) in poses.iter().zip(splits).enumerate() {
        let cloud = simulate_scan(&scene, pose, &cfg.scan, derive_seed(scan_seed, i as u64))?;
        let rel = Path::new("clouds").join(format!("frame_{i:05}.pcld"));
        save_cloud(&out_dir.join(&rel), &cloud)?;
        records.push(ManifestRecord {
            cloud_path: rel,
            pose: *pose,
            sequence: format!("synth{}-{split}", cfg.seed),
            split,
        });
    }
    write_manifest(&out_dir.join(super::MANIFEST_NAME), &records)?;
    DatasetManifest::new(out_dir.to_path_buf(), records)
}
