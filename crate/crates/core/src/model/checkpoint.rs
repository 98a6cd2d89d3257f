//! Binary tensor container: `PLOC`, format version (u32 LE), record count
//! (u32 LE), then per record the name length, name bytes, rank, dims (all
//! u32 LE) and an f64 LE payload. Records are written in name order.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::params::ModelParams;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"PLOC";
pub const VERSION: u32 = 1;

/// One named tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_records(records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, records.len())?;
    for r in records {
        if r.shape.iter().product::<usize>() != r.data.len() {
            return Err(Error::Checkpoint(format!("record {} has inconsistent shape", r.name)));
        }
        put_u32(&mut out, r.name.len())?;
        out.extend_from_slice(r.name.as_bytes());
        put_u32(&mut out, r.shape.len())?;
        for &d in &r.shape {
            put_u32(&mut out, d)?;
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated file at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode_records(buf: &[u8]) -> Result<Vec<Record>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = r.u32()?;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("record {name} is too large")))?;
        let bytes = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("overflow".into()))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        records.push(Record { name, shape, data });
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(records)
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    write_atomic(path, &encode_records(records)?)
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    decode_records(&fs::read(path)?)
}

pub fn tensor_record<T: Scalar>(name: &str, t: &Tensor<T>) -> Record {
    Record {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        data: t.data().iter().map(|v| v.as_f64()).collect(),
    }
}

pub fn record_tensor<T: Scalar>(r: &Record) -> Result<Tensor<T>> {
    let data = r.data.iter().map(|&v| T::lit(v)).collect();
    Tensor::new(r.shape.clone(), data).map_err(|e| Error::Checkpoint(format!("record {}: {e}", r.name)))
}

pub fn params_to_records<T: Scalar>(params: &ModelParams<T>) -> Vec<Record> {
    params.iter().map(|(n, t)| tensor_record(n, t)).collect()
}

/// Builds parameters from the records whose name passes `keep`.
pub fn params_from_records<T: Scalar>(records: &[Record], keep: impl Fn(&str) -> bool) -> Result<ModelParams<T>> {
    let mut params = ModelParams::empty();
    for r in records.iter().filter(|r| keep(&r.name)) {
        if params.insert(r.name.clone(), record_tensor(r)?).is_some() {
            return Err(Error::Checkpoint(format!("duplicate record {}", r.name)));
        }
    }
    Ok(params)
}

/// Parameter names never start with these prefixes.
pub fn is_param_name(name: &str) -> bool {
    !(name.starts_with("adam.") || name.starts_with("train."))
}

pub fn save_checkpoint<T: Scalar>(path: &Path, params: &ModelParams<T>) -> Result<()> {
    write_records(path, &params_to_records(params))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    params_from_records(&read_records(path)?, is_param_name)
}
