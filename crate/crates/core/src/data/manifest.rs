//! Pose manifest: one comma-separated record per line,
//! `cloud_path, tx, ty, tz, qw, qx, qy, qz, sequence_tag, split`. Fields
//! are trimmed and may not contain commas.
//! Lines starting with `#` are comments; cloud paths are relative to the
//! manifest's directory unless absolute.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{quat_canonicalize, quat_normalize, Pose};
use crate::model::checkpoint::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, val or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    /// Path as written in the manifest.
    pub cloud_path: PathBuf,
    pub pose: Pose<f64>,
    pub sequence: String,
    pub split: Split,
}

/// Findings that do not stop a load.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    /// Manifest lines whose quaternion was not unit length.
    pub normalized_lines: Vec<usize>,
    /// Cloud paths listed more than once.
    pub duplicate_paths: Vec<PathBuf>,
}

impl LoadReport {
    pub fn warnings(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .duplicate_paths
            .iter()
            .map(|p| format!("duplicate frame path {}", p.display()))
            .collect();
        if !self.normalized_lines.is_empty() {
            out.push(format!("normalized non-unit quaternions on lines {:?}", self.normalized_lines));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub base_dir: PathBuf,
    pub records: Vec<ManifestRecord>,
    pub report: LoadReport,
}

/// Quaternions this close to unit length are kept bit for bit.
const UNIT_TOLERANCE: f64 = 1e-12;

impl DatasetManifest {
    pub fn new(base_dir: PathBuf, records: Vec<ManifestRecord>) -> Result<Self> {
        let m = Self {
            base_dir,
            records,
            report: LoadReport::default(),
        };
        m.check_disjoint(Path::new("<memory>"))?;
        Ok(m)
    }

    /// Records of `split` with their index in the manifest.
    pub fn split(&self, split: Split) -> Vec<(usize, &ManifestRecord)> {
        self.records.iter().enumerate().filter(|(_, r)| r.split == split).collect()
    }

    pub fn frame_count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    pub fn sequences(&self, split: Split) -> BTreeSet<&str> {
        self.records.iter().filter(|r| r.split == split).map(|r| r.sequence.as_str()).collect()
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        self.base_dir.join(&record.cloud_path)
    }

    fn check_disjoint(&self, path: &Path) -> Result<()> {
        let mut owner: BTreeMap<&str, Split> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            match owner.insert(&r.sequence, r.split) {
                Some(prev) if prev != r.split => {
                    return Err(Error::Manifest {
                        path: path.to_path_buf(),
                        line: i + 1,
                        msg: format!("sequence {:?} appears in both {prev} and {}", r.sequence, r.split),
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn parse_record(fields: &[&str], err: &dyn Fn(String) -> Error, report: &mut LoadReport, line: usize) -> Result<ManifestRecord> {
    if fields.len() != 10 {
        return Err(err(format!("expected 10 fields, found {}", fields.len())));
    }
    let num = |i: usize| -> Result<f64> {
        let v: f64 = fields[i].parse().map_err(|_| err(format!("field {} is not a number: {:?}", i + 1, fields[i])))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(err(format!("field {} is not finite", i + 1)))
        }
    };
    let t = [num(1)?, num(2)?, num(3)?];
    let q = [num(4)?, num(5)?, num(6)?, num(7)?];
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let q = if (norm - 1.0).abs() <= UNIT_TOLERANCE {
        quat_canonicalize(q)
    } else {
        report.normalized_lines.push(line);
        quat_canonicalize(quat_normalize(q).map_err(|e| err(e.to_string()))?)
    };
    if fields[0].is_empty() || fields[8].is_empty() {
        return Err(err("empty path or sequence tag".into()));
    }
    Ok(ManifestRecord {
        cloud_path: PathBuf::from(fields[0]),
        pose: Pose { t, q },
        sequence: fields[8].to_string(),
        split: fields[9].parse().map_err(err)?,
    })
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<DatasetManifest> {
    let mut records = Vec::new();
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let line = i + 1;
        let err = |msg: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let fields: Vec<&str> = content.split(',').map(str::trim).collect();
        let rec = parse_record(&fields, &err, &mut report, line)?;
        if !seen.insert(rec.cloud_path.clone()) {
            report.duplicate_paths.push(rec.cloud_path.clone());
        }
        records.push(rec);
    }
    let manifest = DatasetManifest {
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        records,
        report,
    };
    manifest.check_disjoint(path)?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text, path)
}

pub fn format_manifest(records: &[ManifestRecord]) -> Result<String> {
    let mut text = String::from("# cloud_path,tx,ty,tz,qw,qx,qy,qz,sequence,split\n");
    let plain = |s: &str| !s.is_empty() && !s.contains([',', '\n', '\r']) && s.trim() == s;
    for r in records {
        let path = r.cloud_path.to_str().filter(|p| plain(p) && !p.starts_with('#'));
        let path = path.ok_or_else(|| Error::InvalidArgument(format!("path {:?} cannot be stored in a manifest", r.cloud_path)))?;
        if !plain(&r.sequence) {
            return Err(Error::InvalidArgument(format!("sequence tag {:?} cannot be stored in a manifest", r.sequence)));
        }
        let (t, q) = (r.pose.t, r.pose.q);
        text.push_str(&format!(
            "{path},{},{},{},{},{},{},{},{},{}\n",
            t[0], t[1], t[2], q[0], q[1], q[2], q[3], r.sequence, r.split
        ));
    }
    Ok(text)
}

/// Writes the manifest through a temporary file, so a failed write never
/// leaves a partial manifest behind.
pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    write_atomic(path, format_manifest(records)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(path: &str, seq: &str, split: Split) -> ManifestRecord {
        ManifestRecord {
            cloud_path: path.into(),
            pose: Pose::new([0.1, 0.2, 0.3], [0.9, 0.1, -0.2, 0.3]).unwrap(),
            sequence: seq.into(),
            split,
        }
    }

    #[test]
    fn table_like_split_by_sequence() {
        let mut recs = Vec::new();
        for (i, day) in ["a", "b", "c", "d"].iter().enumerate() {
            recs.push(rec(&format!("tr{i}.pcld"), &format!("train-{day}"), Split::Train));
            recs.push(rec(&format!("te{i}.pcld"), &format!("test-{day}"), Split::Test));
        }
        let text = format_manifest(&recs).unwrap();
        let m = parse_manifest(&text, Path::new("/d/manifest.csv")).unwrap();
        assert_eq!(m.sequences(Split::Train).len(), 4);
        assert_eq!(m.sequences(Split::Test).len(), 4);
        assert_eq!(m.frame_count(Split::Train), 4);
        assert_eq!(m.records, recs);
        assert_eq!(m.resolve(&m.records[0]), PathBuf::from("/d/tr0.pcld"));
    }

    #[test]
    fn sequence_in_two_splits_is_an_error() {
        let text = format_manifest(&[rec("a", "s1", Split::Train), rec("b", "s1", Split::Test)]).unwrap();
        assert!(matches!(
            parse_manifest(&text, Path::new("m.csv")),
            Err(Error::Manifest { line: 2, .. })
        ));
    }

    #[test]
    fn duplicates_warn_and_quaternions_normalize() {
        let text = "# comment\n\
                    a.pcld, 1, 2, 3, 2, 0, 0, 0, s, train\n\
                    a.pcld, 1, 2, 3, -0.6, 0.8, 0, 0, s, train\n";
        let m = parse_manifest(text, Path::new("m.csv")).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.report.duplicate_paths, vec![PathBuf::from("a.pcld")]);
        assert_eq!(m.report.normalized_lines, vec![2]);
        assert_eq!(m.records[0].pose.q, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.records[1].pose.q, [0.6, -0.8, 0.0, 0.0]);
        assert_eq!(m.report.warnings().len(), 2);
    }

    #[test]
    fn malformed_lines_report_their_position() {
        for bad in [
            "a, 1, 2, 3, 1, 0, 0, 0, s\n",
            "a, 1, x, 3, 1, 0, 0, 0, s, train\n",
            "a, 1, 2, 3, 0, 0, 0, 0, s, train\n",
            "a, 1, 2, 3, 1, 0, 0, 0, s, holdout\n",
        ] {
            let text = format!("# header\n{bad}");
            match parse_manifest(&text, Path::new("m.csv")) {
                Err(Error::Manifest { line, .. }) => assert_eq!(line, 2, "{bad}"),
                other => panic!("{bad}: {other:?}"),
            }
        }
    }

    #[test]
    fn unit_quaternions_are_kept_bitwise() {
        let q = quat_normalize([0.3, 0.1, -0.7, 0.2]).unwrap();
        let r = ManifestRecord {
            cloud_path: "x".into(),
            pose: Pose { t: [0.1, 1e-17, 3.0], q },
            sequence: "s".into(),
            split: Split::Val,
        };
        let m = parse_manifest(&format_manifest(&[r.clone()]).unwrap(), Path::new("m")).unwrap();
        assert_eq!(m.records[0], r);
        assert!(m.report.normalized_lines.is_empty());
    }
}
