//! Cloud file: `PCLD`, version (u32 LE), point count (u32 LE), then
//! `count × 3` little-endian f32 coordinates.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::checkpoint::write_atomic;
use crate::sampling::PointCloud;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"PCLD";
pub const VERSION: u32 = 1;
const HEADER: usize = 12;

pub fn encode_cloud<T: Scalar>(cloud: &PointCloud<T>) -> Result<Vec<u8>> {
    let n = u32::try_from(cloud.len()).map_err(|_| Error::InvalidArgument("cloud too large".into()))?;
    let mut out = Vec::with_capacity(HEADER + cloud.len() * 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    for p in cloud.points() {
        for &c in p {
            let v = c.to_f32().filter(|v| v.is_finite()).ok_or(Error::NonFinite { op: "save_cloud" })?;
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_cloud<T: Scalar>(bytes: &[u8], path: &Path) -> Result<PointCloud<T>> {
    let err = |offset: usize, msg: String| Error::CloudParse {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg,
    };
    if bytes.len() < HEADER {
        return Err(err(bytes.len(), "truncated header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(err(0, "bad magic bytes".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != VERSION {
        return Err(err(4, format!("unsupported version {version}")));
    }
    let count = word(8) as usize;
    if count == 0 {
        return Err(err(8, "cloud has no points".into()));
    }
    let payload = bytes.len() - HEADER;
    if payload != count * 12 {
        return Err(err(
            HEADER + payload.min(count * 12),
            format!("header declares {count} points but payload holds {payload} bytes"),
        ));
    }
    let mut points = Vec::with_capacity(count);
    for (i, chunk) in bytes[HEADER..].chunks_exact(12).enumerate() {
        let mut p = [T::zero(); 3];
        for (k, c) in p.iter_mut().enumerate() {
            let v = f32::from_le_bytes(chunk[4 * k..4 * k + 4].try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(err(HEADER + 12 * i + 4 * k, format!("non-finite coordinate {v}")));
            }
            *c = T::from_f32(v).expect("f32 converts");
        }
        points.push(p);
    }
    PointCloud::new(points)
}

pub fn save_cloud<T: Scalar>(path: &Path, cloud: &PointCloud<T>) -> Result<()> {
    write_atomic(path, &encode_cloud(cloud)?)
}

pub fn load_cloud<T: Scalar>(path: &Path) -> Result<PointCloud<T>> {
    decode_cloud(&fs::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts: Vec<[f32; 3]> = (0..500).map(|_| std::array::from_fn(|_| rng.random_range(-50.0..50.0))).collect();
        let cloud = PointCloud::new(pts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pcld");
        save_cloud(&path, &cloud).unwrap();
        assert_eq!(load_cloud::<f32>(&path).unwrap(), cloud);
        let wide: PointCloud<f64> = load_cloud(&path).unwrap();
        assert_eq!(wide.points()[7][2], cloud.points()[7][2] as f64);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let p = Path::new("x.pcld");
        let good = encode_cloud(&PointCloud::new(vec![[1.0f32, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap()).unwrap();
        assert!(decode_cloud::<f32>(&good, p).is_ok());

        let mut empty = good[..HEADER].to_vec();
        empty[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_cloud::<f32>(&empty, p), Err(Error::CloudParse { offset: 8, .. })));

        let mut wrong_count = good.clone();
        wrong_count[8..12].copy_from_slice(&3u32.to_le_bytes());
        assert!(decode_cloud::<f32>(&wrong_count, p).is_err());
        assert!(decode_cloud::<f32>(&good[..good.len() - 2], p).is_err());

        let mut magic = good.clone();
        magic[1] = b'X';
        assert!(matches!(decode_cloud::<f32>(&magic, p), Err(Error::CloudParse { offset: 0, .. })));

        let mut nan = good.clone();
        nan[HEADER + 16..HEADER + 20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_cloud::<f32>(&nan, p), Err(Error::CloudParse { offset: 28, .. })));
        assert!(decode_cloud::<f32>(&good[..5], p).is_err());
    }
}
