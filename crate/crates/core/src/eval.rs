//! Pose error metrics, evaluation reports and trajectory export.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::Frame;
use crate::error::{Error, Result};
use crate::geometry::{quat_canonicalize, quat_exp, quat_normalize, rotation_error_deg, translation_error_m, LogPose, Pose};
use crate::model::checkpoint::write_atomic;
use crate::model::{predict, AttentionMode, ModelParams, PointLocConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregate {
    Mean,
    #[default]
    Median,
}

impl FromStr for Aggregate {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => Ok(Aggregate::Mean),
            "median" => Ok(Aggregate::Median),
            other => Err(format!("unknown aggregate {other:?} (expected mean or median)")),
        }
    }
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregate::Mean => "mean",
            Aggregate::Median => "median",
        })
    }
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Middle element, or the average of the two middle elements.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub split: String,
    pub aggregate: Aggregate,
    pub translation_errors: Vec<f64>,
    pub rotation_errors: Vec<f64>,
    pub translation_mean: f64,
    pub translation_median: f64,
    pub rotation_mean: f64,
    pub rotation_median: f64,
}

impl EvalReport {
    pub fn from_errors(split: &str, aggregate: Aggregate, translation: Vec<f64>, rotation: Vec<f64>) -> Result<Self> {
        if translation.is_empty() {
            return Err(Error::EmptySplit(split.to_string()));
        }
        if translation.len() != rotation.len() {
            return Err(Error::shape("EvalReport", &[translation.len()], &[rotation.len()]));
        }
        Ok(Self {
            split: split.to_string(),
            aggregate,
            translation_mean: mean(&translation).expect("non-empty"),
            translation_median: median(&translation).expect("non-empty"),
            rotation_mean: mean(&rotation).expect("non-empty"),
            rotation_median: median(&rotation).expect("non-empty"),
            translation_errors: translation,
            rotation_errors: rotation,
        })
    }

    /// Errors of `predictions` against `truth`, frame by frame.
    pub fn compare(split: &str, aggregate: Aggregate, truth: &[Pose<f64>], predictions: &[Pose<f64>]) -> Result<Self> {
        if truth.len() != predictions.len() {
            return Err(Error::shape("evaluate", &[truth.len()], &[predictions.len()]));
        }
        let (t, r) = truth
            .iter()
            .zip(predictions)
            .map(|(g, p)| (translation_error_m(g.t, p.t), rotation_error_deg(g.q, p.q)))
            .unzip();
        Self::from_errors(split, aggregate, t, r)
    }

    pub fn frames(&self) -> usize {
        self.translation_errors.len()
    }

    /// The translation and rotation figures selected by `aggregate`.
    pub fn highlighted(&self) -> (f64, f64) {
        match self.aggregate {
            Aggregate::Mean => (self.translation_mean, self.rotation_mean),
            Aggregate::Median => (self.translation_median, self.rotation_median),
        }
    }

    /// Machine-readable `key: value` lines.
    pub fn to_key_values(&self) -> String {
        let (t, r) = self.highlighted();
        let mut s = String::new();
        let _ = writeln!(s, "split: {}", self.split);
        let _ = writeln!(s, "frames: {}", self.frames());
        let _ = writeln!(s, "aggregate: {}", self.aggregate);
        let _ = writeln!(s, "translation_mean_m: {}", self.translation_mean);
        let _ = writeln!(s, "translation_median_m: {}", self.translation_median);
        let _ = writeln!(s, "rotation_mean_deg: {}", self.rotation_mean);
        let _ = writeln!(s, "rotation_median_deg: {}", self.rotation_median);
        let _ = writeln!(s, "translation_m: {t}");
        let _ = writeln!(s, "rotation_deg: {r}");
        s
    }

    /// Human-readable summary; the requested aggregate is marked.
    pub fn to_table(&self) -> String {
        let mark = |a: Aggregate| if a == self.aggregate { "*" } else { " " };
        let mut s = String::new();
        let _ = writeln!(s, "split {} ({} frames)", self.split, self.frames());
        let _ = writeln!(s, "  aggregate   translation (m)   rotation (deg)");
        let _ = writeln!(
            s,
            "{} mean        {:>15.4}   {:>14.3}",
            mark(Aggregate::Mean),
            self.translation_mean,
            self.rotation_mean
        );
        let _ = writeln!(
            s,
            "{} median      {:>15.4}   {:>14.3}",
            mark(Aggregate::Median),
            self.translation_median,
            self.rotation_median
        );
        s
    }
}

/// Rotation of a predicted log-quaternion. Predictions beyond the valid
/// log range still describe a rotation, so they are mapped instead of
/// rejected.
pub fn predicted_pose(log: &LogPose<f64>) -> Result<Pose<f64>> {
    let q = match quat_exp(log.w) {
        Ok(q) => q,
        Err(Error::RotationOutOfRange { .. }) => {
            let w = log.w;
            let n = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
            let s = n.sin() / n;
            quat_normalize([n.cos(), w[0] * s, w[1] * s, w[2] * s])?
        }
        Err(e) => return Err(e),
    };
    Ok(Pose {
        t: log.t,
        q: quat_canonicalize(q),
    })
}

/// Runs the network over `frames` in parallel and scores the predictions.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    config: &PointLocConfig,
    frames: &[Frame<T>],
    split: &str,
    aggregate: Aggregate,
    mode: AttentionMode,
) -> Result<(EvalReport, Vec<Pose<f64>>)> {
    if frames.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let predictions: Vec<Pose<f64>> = frames
        .par_iter()
        .map(|f| {
            let out = predict(params, config, &f.cloud, mode)?;
            predicted_pose(&LogPose {
                t: out.t.map(|v| v.as_f64()),
                w: out.w.map(|v| v.as_f64()),
            })
        })
        .collect::<Result<_>>()?;
    let truth: Vec<Pose<f64>> = frames
        .iter()
        .map(|f| Pose {
            t: f.pose.t.map(|v| v.as_f64()),
            q: f.pose.q.map(|v| v.as_f64()),
        })
        .collect();
    let report = EvalReport::compare(split, aggregate, &truth, &predictions)?;
    Ok((report, predictions))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub index: usize,
    pub truth: Pose<f64>,
    pub prediction: Pose<f64>,
    pub translation_error: f64,
    pub rotation_error: f64,
}

pub const TRAJECTORY_HEADER: &str =
    "# index gt_tx gt_ty gt_tz gt_qw gt_qx gt_qy gt_qz pred_tx pred_ty pred_tz pred_qw pred_qx pred_qy pred_qz terr_m rerr_deg";

/// One whitespace-separated line per frame after a `#` header.
pub fn format_trajectory(report: &EvalReport, truth: &[Pose<f64>], predictions: &[Pose<f64>]) -> Result<String> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("no predictions to export".into()));
    }
    if truth.len() != predictions.len() || report.frames() != predictions.len() {
        return Err(Error::shape("export_trajectory", &[truth.len(), report.frames()], &[predictions.len()]));
    }
    let mut s = String::from(TRAJECTORY_HEADER);
    s.push('\n');
    for (i, (g, p)) in truth.iter().zip(predictions).enumerate() {
        let _ = write!(s, "{i}");
        for v in g.t.iter().chain(&g.q).chain(&p.t).chain(&p.q) {
            let _ = write!(s, " {v}");
        }
        let _ = writeln!(s, " {} {}", report.translation_errors[i], report.rotation_errors[i]);
    }
    Ok(s)
}

pub fn export_trajectory(report: &EvalReport, truth: &[Pose<f64>], predictions: &[Pose<f64>], path: &Path) -> Result<()> {
    write_atomic(path, format_trajectory(report, truth, predictions)?.as_bytes())
}

pub fn parse_trajectory(text: &str) -> Result<Vec<TrajectoryRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| Error::InvalidArgument(format!("trajectory line {}: {msg}", n + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 17 {
            return Err(bad("expected 17 fields"));
        }
        let v: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("not a number"))?;
        rows.push(TrajectoryRow {
            index: fields[0].parse().map_err(|_| bad("bad index"))?,
            truth: Pose {
                t: [v[0], v[1], v[2]],
                q: [v[3], v[4], v[5], v[6]],
            },
            prediction: Pose {
                t: [v[7], v[8], v[9]],
                q: [v[10], v[11], v[12], v[13]],
            },
            translation_error: v[14],
            rotation_error: v[15],
        });
    }
    Ok(rows)
}
