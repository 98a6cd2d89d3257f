//! Point selection kernels: fixed-size resampling, farthest point sampling,
//! ball-query neighborhoods and center-relative grouping.

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::Scalar;

/// N×3 sensor-frame coordinates in meters; never empty, always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    points: Vec<Vec3<T>>,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(points: Vec<Vec3<T>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if !points.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "point cloud" });
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            points: idx.iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn translated(&self, by: Vec3<T>) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + by[0], p[1] + by[1], p[2] + by[2]])
                .collect(),
        }
    }

    /// Coordinates as an N×3 tensor.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(vec![self.len(), 3], self.points.iter().flatten().copied().collect())
            .expect("finite non-empty cloud")
    }
}

/// Ball-query result: `indices` is M×K row-major. In row `j` the first
/// `valid_counts[j]` entries are in-radius points in ascending order and the
/// rest repeat the first of them.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex<T> {
    pub centers: Vec<Vec3<T>>,
    pub indices: Vec<usize>,
    pub k: usize,
    pub valid_counts: Vec<usize>,
}

impl<T> NeighborIndex<T> {
    pub fn row(&self, j: usize) -> &[usize] {
        &self.indices[j * self.k..(j + 1) * self.k]
    }

    pub fn len(&self) -> usize {
        self.valid_counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid_counts.is_empty()
    }
}

#[inline]
fn dist2<T: Scalar>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

/// A child seed for item `index` of a seeded process, taken from its own
/// ChaCha stream so neighboring indices are unrelated.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng.next_u64()
}

/// Resamples to exactly `n_target` points. Larger clouds are sampled without
/// replacement, smaller ones keep every point and top up with uniform draws
/// with replacement; an exact fit is returned unchanged.
pub fn random_downsample<T: Scalar>(cloud: &PointCloud<T>, n_target: usize, seed: u64) -> Result<PointCloud<T>> {
    if n_target == 0 {
        return Err(Error::InvalidArgument("n_target must be at least 1".into()));
    }
    let n = cloud.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    if n == n_target {
        return Ok(cloud.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = if n > n_target {
        let mut picked = index::sample(&mut rng, n, n_target).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..n)
            .chain((n..n_target).map(|_| rng.random_range(0..n)))
            .collect()
    };
    Ok(cloud.select(&idx))
}

/// Greedy max-min selection of `m` indices. The first pick is the point
/// farthest from the centroid; ties always go to the lowest index.
pub fn farthest_point_sample<T: Scalar>(points: &[Vec3<T>], m: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "cannot pick {m} of {n} points by farthest point sampling"
        )));
    }
    let inv = T::one() / T::from_usize(n).expect("count fits the scalar type");
    let mut centroid = [T::zero(); 3];
    for p in points {
        for a in 0..3 {
            centroid[a] += p[a];
        }
    }
    let centroid = centroid.map(|c| c * inv);

    let mut first = 0;
    let mut best = T::neg_infinity();
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, &centroid);
        if d > best {
            best = d;
            first = i;
        }
    }

    let mut picks = Vec::with_capacity(m);
    picks.push(first);
    let mut min_d = vec![T::infinity(); n];
    let mut last = first;
    while picks.len() < m {
        let anchor = points[last];
        let mut next = 0;
        let mut best = T::neg_infinity();
        for (i, (p, md)) in points.iter().zip(min_d.iter_mut()).enumerate() {
            let d = dist2(p, &anchor);
            if d < *md {
                *md = d;
            }
            if *md > best {
                best = *md;
                next = i;
            }
        }
        picks.push(next);
        last = next;
    }
    Ok(picks)
}

/// Up to `k` in-radius points per center, listed in ascending index order.
/// When more than `k` points fall inside the ball the `k` nearest are kept
/// (equal distances go to the lower index), so the selected set does not
/// depend on the order of `points`.
pub fn ball_query<T: Scalar>(points: &[Vec3<T>], centers: &[Vec3<T>], radius: T, k: usize) -> Result<NeighborIndex<T>> {
    if !(radius > T::zero()) || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "ball query needs radius > 0 and k >= 1 (got {radius}, {k})"
        )));
    }
    let r2 = radius * radius;
    let mut indices = Vec::with_capacity(centers.len() * k);
    let mut valid_counts = Vec::with_capacity(centers.len());
    let mut inside: Vec<(T, usize)> = Vec::new();
    for (j, c) in centers.iter().enumerate() {
        inside.clear();
        inside.extend(
            points
                .iter()
                .enumerate()
                .map(|(i, p)| (dist2(p, c), i))
                .filter(|&(d, _)| d <= r2),
        );
        if inside.is_empty() {
            return Err(Error::EmptyNeighborhood { center: j });
        }
        if inside.len() > k {
            let by_distance = |a: &(T, usize), b: &(T, usize)| {
                a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1))
            };
            inside.select_nth_unstable_by(k - 1, by_distance);
            inside.truncate(k);
            inside.sort_unstable_by_key(|&(_, i)| i);
        }
        let start = indices.len();
        indices.extend(inside.iter().map(|&(_, i)| i));
        valid_counts.push(inside.len());
        let pad = indices[start];
        indices.resize(start + k, pad);
    }
    Ok(NeighborIndex {
        centers: centers.to_vec(),
        indices,
        k,
        valid_counts,
    })
}

/// Builds the M×K×(3+C) grouped input: slot `(j, s)` holds the offset of
/// neighbor `s` from center `j`, followed by that neighbor's `C` features
/// (given row-major as `(data, C)`).
pub fn group_relative<T: Scalar>(
    points: &[Vec3<T>],
    features: Option<(&[T], usize)>,
    nbr: &NeighborIndex<T>,
) -> Result<Tensor<T>> {
    let n = points.len();
    let c = features.map_or(0, |(_, c)| c);
    if let Some((f, c)) = features {
        if f.len() != n * c {
            return Err(Error::shape("group_relative", &[n, c], &[f.len()]));
        }
    }
    let m = nbr.len();
    let mut out = Vec::with_capacity(m * nbr.k * (3 + c));
    for (j, center) in nbr.centers.iter().enumerate() {
        for &i in nbr.row(j) {
            let p = points.get(i).ok_or(Error::IndexOutOfRange { index: i, len: n })?;
            out.extend_from_slice(&[p[0] - center[0], p[1] - center[1], p[2] - center[2]]);
            if let Some((f, c)) = features {
                out.extend_from_slice(&f[i * c..(i + 1) * c]);
            }
        }
    }
    Tensor::new(vec![m, nbr.k, 3 + c], out)
}
