//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pointloc::autodiff::{Tape, Tensor};
use pointloc::data::{load_frames, load_manifest, Frame, Split};
use pointloc::geometry::{quat_canonicalize, quat_exp, quat_log, quat_normalize, rotation_error_deg, LogPose, Quat};
use pointloc::loss::{pose_loss, LogPoseVar, LossFactors};
use pointloc::model::{
    forward_planned, init_params, load_checkpoint, plan_sampling, predict, AttentionMode, ModelParams, ModelScale,
    PointLocConfig, ShapeTrace,
};
use pointloc::sampling::{ball_query, farthest_point_sample, PointCloud};

type Verdict = Result<String, String>;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pointloc"))
}

fn run(args: &[&str]) -> Result<String, String> {
    let out = bin().args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        let err = String::from_utf8_lossy(&out.stderr);
        let tail: Vec<&str> = err.lines().rev().take(3).collect();
        Err(format!("pointloc {} exited {:?}: {}", args.join(" "), out.status.code(), tail.join(" | ")))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<[f64; 3]> {
    (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-half..half))).collect()
}

// ---------------------------------------------------------------- gradients

fn gradient_integrity() -> Verdict {
    let start = Instant::now();
    let out = run(&["gradcheck"])?;
    let secs = start.elapsed().as_secs_f64();
    let summary = out.lines().last().unwrap_or_default().to_string();
    let fails = out.lines().filter(|l| l.ends_with("FAIL")).count();
    let rows = out.lines().filter(|l| l.ends_with("PASS")).count();
    let detail = format!("{rows} tensors < 1e-4 in f64, {secs:.1}s ({summary})");
    if fails == 0 && rows > 0 && secs < 120.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- overfit

const OVERFIT_CONFIG: &str = "frames = 32
train_fraction = 1.0
val_fraction = 0.0
test_fraction = 0.0
model_scale = \"tiny\"
lr = 0.001
batch_size = 32
epochs = 2000
max_steps = 2000
checkpoint_every = 0
split = \"train\"
aggregate = \"median\"
";

struct OverfitRun {
    secs: f64,
    report: BTreeMap<String, String>,
    loss: Vec<f64>,
    checkpoint: PathBuf,
}

impl OverfitRun {
    fn value(&self, key: &str) -> f64 {
        self.report[key].parse().expect("numeric report value")
    }

    fn summary(&self) -> String {
        format!(
            "median {:.4} m / {:.3} deg, mean {:.4} m / {:.3} deg, loss {:.3} -> {:.3}, {} steps in {:.0}s",
            self.value("translation_median_m"),
            self.value("rotation_median_deg"),
            self.value("translation_mean_m"),
            self.value("rotation_mean_deg"),
            self.loss.first().copied().unwrap_or(f64::NAN),
            self.loss.last().copied().unwrap_or(f64::NAN),
            self.loss.len(),
            self.secs
        )
    }

    fn meets_thresholds(&self) -> bool {
        self.value("translation_median_m") < 0.05 && self.value("rotation_median_deg") < 2.0 && self.secs < 900.0
    }
}

fn overfit_dataset(dir: &Path) -> Result<(PathBuf, PathBuf), String> {
    let cfg = dir.join("overfit.toml");
    fs::write(&cfg, OVERFIT_CONFIG).map_err(|e| e.to_string())?;
    let data = dir.join("overfit_data");
    run(&["synth", "--config", p(&cfg), "--seed", "7", "--out", p(&data)])?;
    Ok((cfg, data))
}

fn overfit_run(cfg: &Path, data: &Path, out: &Path, attention: &str) -> Result<OverfitRun, String> {
    let start = Instant::now();
    let common = ["--config", p(cfg), "--seed", "0", "--attention", attention, "--data", p(data), "--out", p(out)];
    run(&[&["train"], &common[..]].concat())?;
    let secs = start.elapsed().as_secs_f64();
    run(&[&["eval"], &common[..]].concat())?;
    let report = fs::read_to_string(out.join("report.txt"))
        .map_err(|e| e.to_string())?
        .lines()
        .filter_map(|l| l.split_once(": "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let loss = fs::read_to_string(out.join("loss.tsv"))
        .map_err(|e| e.to_string())?
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').nth(1).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN))
        .collect();
    Ok(OverfitRun {
        secs,
        report,
        loss,
        checkpoint: out.join("checkpoint.ploc"),
    })
}

fn overfit_verdict(r: &Result<OverfitRun, String>) -> Verdict {
    let r = r.as_ref().map_err(Clone::clone)?;
    let s = format!("32 frames, tiny, lr 1e-3, full batch: {}", r.summary());
    if r.meets_thresholds() && r.loss.len() <= 2000 {
        Ok(s)
    } else {
        Err(s)
    }
}

// ---------------------------------------------------------------- ablation

fn forced_ones_matches_disabled(checkpoint: &Path, frames: &[Frame<f64>]) -> Verdict {
    let net = PointLocConfig::from_scale(&ModelScale::tiny());
    let trained: ModelParams<f64> = load_checkpoint(checkpoint).map_err(|e| e.to_string())?;
    let fresh = init_params::<f64>(11, &ModelScale::tiny());
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut clouds: Vec<PointCloud<f64>> = frames.iter().map(|f| f.cloud.clone()).collect();
    for _ in 0..8 {
        clouds.push(PointCloud::new(random_cloud(&mut rng, net.input_points, 3.0)).unwrap());
    }
    let mut compared = 0;
    for params in [&trained, &fresh] {
        for c in &clouds {
            let a = predict(params, &net, c, AttentionMode::ForcedOnes).map_err(|e| e.to_string())?;
            let b = predict(params, &net, c, AttentionMode::Disabled).map_err(|e| e.to_string())?;
            let bits = |l: &LogPose<f64>| l.t.iter().chain(&l.w).map(|v| v.to_bits()).collect::<Vec<_>>();
            if bits(&a) != bits(&b) {
                return Err(format!("outputs differ: {a:?} vs {b:?}"));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} forward passes bitwise equal (trained and fresh weights)"))
}

// ---------------------------------------------------------------- quaternions

fn quaternion_algebra() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut worst, mut n) = (0.0f64, 0);
    while n < 1000 {
        let raw: Quat<f64> = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let norm2: f64 = raw.iter().map(|v| v * v).sum();
        if !(0.01..=1.0).contains(&norm2) {
            continue;
        }
        let q = quat_canonicalize(quat_normalize(raw).unwrap());
        let back = quat_canonicalize(quat_exp(quat_log(q)).map_err(|e| e.to_string())?);
        for i in 0..4 {
            worst = worst.max((back[i] - q[i]).abs());
        }
        let neg = q.map(|v| -v);
        if rotation_error_deg(q, neg) != 0.0 {
            return Err(format!("rotation_error_deg(q, -q) = {} for {q:?}", rotation_error_deg(q, neg)));
        }
        n += 1;
    }
    let detail = format!("1000 round trips, max deviation {worst:.2e}; rotation_error(q, -q) = 0 exactly");
    if worst <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- loss

fn loss_value(pred: &LogPose<f64>, target: &LogPose<f64>, beta: f64, gamma: f64) -> (f64, f64, f64) {
    let mut tape = Tape::new();
    let p = LogPoseVar::constant(&mut tape, pred).unwrap();
    let factors = LossFactors {
        beta: tape.param(Tensor::new(vec![1], vec![beta]).unwrap()),
        gamma: tape.param(Tensor::new(vec![1], vec![gamma]).unwrap()),
    };
    let l = pose_loss(&mut tape, p, target, factors).unwrap();
    tape.backward(l).unwrap();
    let value = tape.value(l).data()[0];
    (value, tape.grad(factors.beta).unwrap()[0], tape.grad(factors.gamma).unwrap()[0])
}

fn loss_sanity() -> Verdict {
    let target = LogPose {
        t: [1.5, -0.25, 0.75],
        w: [0.1, -0.2, 0.3],
    };
    let (zero, _, _) = loss_value(&target, &target, 0.0, -3.0);
    if zero != -3.0 {
        return Err(format!("zero-residual loss {zero} != -3"));
    }
    let pred = LogPose {
        t: [1.0, 0.5, 0.0],
        w: [0.3, 0.1, -0.2],
    };
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (beta, gamma) in [(0.0, -3.0), (0.7, -1.2), (-0.4, 0.5)] {
        let (_, db, dg) = loss_value(&pred, &target, beta, gamma);
        let fd_b = (loss_value(&pred, &target, beta + h, gamma).0 - loss_value(&pred, &target, beta - h, gamma).0) / (2.0 * h);
        let fd_g = (loss_value(&pred, &target, beta, gamma + h).0 - loss_value(&pred, &target, beta, gamma - h).0) / (2.0 * h);
        worst = worst.max((db - fd_b).abs()).max((dg - fd_g).abs());
    }
    let detail = format!("L(0 residual) = -3 exactly; dL/dbeta, dL/dgamma vs finite differences: max gap {worst:.2e}");
    if worst <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- shapes

fn shape_conformance() -> Verdict {
    let scale = ModelScale::full();
    let net = PointLocConfig::from_scale(&scale);
    let params = init_params::<f64>(0, &scale);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cloud = PointCloud::new(random_cloud(&mut rng, net.input_points, 20.0)).unwrap();
    let start = Instant::now();
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let plan = plan_sampling(&net, &cloud).map_err(|e| e.to_string())?;
    let mut trace = ShapeTrace::new();
    forward_planned(&mut tape, &vars, &net, &plan, AttentionMode::Learned, Some(&mut trace)).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let expected: Vec<(&str, Vec<usize>)> = vec![
        ("input", vec![20480, 3]),
        ("sa1", vec![2048, 128]),
        ("sa2", vec![1024, 256]),
        ("sa3", vec![512, 256]),
        ("sa4", vec![256, 256]),
        ("attention", vec![256, 256]),
        ("group_all", vec![1024]),
        ("t", vec![3]),
        ("log_q", vec![3]),
    ];
    let got: Vec<(&str, Vec<usize>)> = trace.iter().map(|(n, s)| (n.as_str(), s.clone())).collect();
    let chain: Vec<String> = got.iter().map(|(_, s)| format!("{s:?}")).collect();
    let detail = format!("{} in {secs:.1}s", chain.join(" -> "));
    if got == expected && secs < 60.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- permutation

fn permutation_invariance() -> Verdict {
    let scale = ModelScale::tiny();
    let net = PointLocConfig::from_scale(&scale);
    let params = init_params::<f64>(41, &scale);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        // continuous coordinates: equal distances have probability zero
        let pts = random_cloud(&mut rng, net.input_points, 4.0);
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.shuffle(&mut rng);
        let shuffled: Vec<[f64; 3]> = order.iter().map(|&i| pts[i]).collect();
        let a = predict(&params, &net, &PointCloud::new(pts).unwrap(), AttentionMode::Learned).map_err(|e| e.to_string())?;
        let b = predict(&params, &net, &PointCloud::new(shuffled).unwrap(), AttentionMode::Learned)
            .map_err(|e| e.to_string())?;
        for (x, y) in a.t.iter().chain(&a.w).zip(b.t.iter().chain(&b.w)) {
            worst = worst.max((x - y).abs());
        }
    }
    let detail = format!("10 clouds, tiny model, max element gap {worst:.2e}");
    if worst <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- sampling oracles

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

/// Greedy max-min selection, recomputing every distance from scratch.
fn fps_oracle(pts: &[[f64; 3]], m: usize) -> Vec<usize> {
    let n = pts.len() as f64;
    let c: [f64; 3] = std::array::from_fn(|k| pts.iter().map(|p| p[k]).sum::<f64>() / n);
    let mut picks = vec![0];
    for i in 1..pts.len() {
        if d2(&pts[i], &c) > d2(&pts[picks[0]], &c) {
            picks[0] = i;
        }
    }
    while picks.len() < m {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..pts.len() {
            if picks.contains(&i) {
                continue;
            }
            let gap = picks.iter().map(|&j| d2(&pts[i], &pts[j])).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, g)| gap > g) {
                best = Some((i, gap));
            }
        }
        picks.push(best.expect("candidates remain").0);
    }
    picks
}

/// Full distance scan: the k nearest in-radius points, listed by index,
/// padded with the first.
fn ball_oracle(pts: &[[f64; 3]], center: &[f64; 3], r: f64, k: usize) -> (Vec<usize>, usize) {
    let mut inside: Vec<(f64, usize)> = pts
        .iter()
        .enumerate()
        .map(|(i, q)| (d2(q, center).sqrt(), i))
        .filter(|(d, _)| *d <= r)
        .collect();
    inside.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = inside.iter().take(k).map(|&(_, i)| i).collect();
    chosen.sort_unstable();
    let valid = chosen.len();
    while chosen.len() < k {
        chosen.push(chosen[0]);
    }
    (chosen, valid)
}

fn sampling_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for case in 0..20 {
        let pts = random_cloud(&mut rng, 50, 1.0);
        let m = rng.random_range(2..=20);
        let got = farthest_point_sample(&pts, m).map_err(|e| e.to_string())?;
        if got != fps_oracle(&pts, m) {
            return Err(format!("FPS cloud {case} differs from the max-min oracle"));
        }
    }
    let mut full_rows = 0;
    for case in 0..100 {
        let n = rng.random_range(10..200);
        let pts = random_cloud(&mut rng, n, 1.0);
        let centers: Vec<[f64; 3]> = (0..rng.random_range(1..10)).map(|_| pts[rng.random_range(0..n)]).collect();
        let r = rng.random_range(0.05..1.2);
        let k = rng.random_range(1..40);
        let got = ball_query(&pts, &centers, r, k).map_err(|e| e.to_string())?;
        for (j, c) in centers.iter().enumerate() {
            let (idx, valid) = ball_oracle(&pts, c, r, k);
            if got.row(j) != idx.as_slice() || got.valid_counts[j] != valid {
                return Err(format!("ball query case {case} center {j} differs from the distance scan"));
            }
            full_rows += usize::from(valid == k);
        }
    }
    Ok(format!(
        "FPS = oracle on 20 clouds of 50 points; ball query = oracle on 100 cases ({full_rows} rows filled to k)"
    ))
}

// ---------------------------------------------------------------- determinism

fn determinism(dir: &Path) -> Verdict {
    let cfg = dir.join("det.toml");
    fs::write(
        &cfg,
        "frames = 16\nbeams = 16\nazimuth_steps = 180\nmodel_scale = \"tiny\"\nepochs = 3\nbatch_size = 4\ncheckpoint_every = 1\n",
    )
    .map_err(|e| e.to_string())?;
    let data = dir.join("det_data");
    run(&["synth", "--config", p(&cfg), "--seed", "3", "--out", p(&data)])?;
    let runs = [dir.join("det_a"), dir.join("det_b")];
    for r in &runs {
        run(&["train", "--config", p(&cfg), "--seed", "3", "--data", p(&data), "--out", p(r)])?;
    }
    let mut names: Vec<String> = fs::read_dir(&runs[0])
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".ploc") || n == "loss.tsv")
        .collect();
    names.sort();
    for n in &names {
        let a = fs::read(runs[0].join(n)).map_err(|e| e.to_string())?;
        let b = fs::read(runs[1].join(n)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{n} differs between identical runs"));
        }
    }
    if names.len() != 5 {
        return Err(format!("expected 4 checkpoints and a loss log, found {names:?}"));
    }
    Ok(format!("{} files bitwise identical across two runs: {}", names.len(), names.join(", ")))
}

// ---------------------------------------------------------------- driver

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut failed = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(d) => println!("PASS  {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name}: {d} [{secs:.1}s]");
            }
        }
    };

    println!("N/A   full-size benchmark numbers: need a large real-world dataset, reference only");
    report("gradient integrity", &mut gradient_integrity);
    report("quaternion algebra", &mut quaternion_algebra);
    report("loss sanity", &mut loss_sanity);
    report("shape conformance", &mut shape_conformance);
    report("permutation invariance", &mut permutation_invariance);
    report("sampling oracles", &mut sampling_oracles);
    report("determinism", &mut || determinism(dir.path()));

    let dataset = overfit_dataset(dir.path());
    let learned = dataset
        .as_ref()
        .map_err(Clone::clone)
        .and_then(|(cfg, data)| overfit_run(cfg, data, &dir.path().join("overfit_learned"), "learned"));
    report("overfit", &mut || overfit_verdict(&learned));

    let frames: Result<Vec<Frame<f64>>, String> = dataset.as_ref().map_err(Clone::clone).and_then(|(_, data)| {
        let m = load_manifest(&data.join("manifest.csv")).map_err(|e| e.to_string())?;
        load_frames(&m, Some(Split::Train), 256, 0).map_err(|e| e.to_string())
    });
    let disabled = dataset
        .as_ref()
        .map_err(Clone::clone)
        .and_then(|(cfg, data)| overfit_run(cfg, data, &dir.path().join("overfit_disabled"), "disabled"));
    report("ablation harness parity", &mut || {
        let on = learned.as_ref().map_err(Clone::clone)?;
        let parity = forced_ones_matches_disabled(&on.checkpoint, frames.as_ref().map_err(Clone::clone)?)?;
        overfit_verdict(&learned).map_err(|d| format!("learned attention misses the overfit thresholds: {d}"))?;
        let off = disabled.as_ref().map_err(Clone::clone)?;
        let trains = |r: &OverfitRun| r.loss.iter().all(|v| v.is_finite()) && r.loss.last() < r.loss.first();
        let detail = format!(
            "{parity}; learned attention meets thresholds; attention-free run: {}",
            off.summary()
        );
        if trains(on) && trains(off) {
            Ok(detail)
        } else {
            Err(format!("a variant failed to train: {detail}"))
        }
    });

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
