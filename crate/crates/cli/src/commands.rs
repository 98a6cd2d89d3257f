use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context};

use pointloc::data::{
    build_synthetic_dataset, generate_scene, load_cloud, load_frames, load_manifest, sample_trajectory, simulate_scan,
    DatasetManifest, Split, MANIFEST_NAME,
};
use pointloc::eval::{evaluate, export_trajectory, predicted_pose};
use pointloc::geometry::LogPose;
use pointloc::model::checkpoint::write_atomic;
use pointloc::model::{init_params, load_checkpoint, predict, ModelParams, PointLocConfig};
use pointloc::optim::{
    check_model_gradients, format_checks, jitter_biases, load_train_state, save_train_state, train, EpochLog, TrainSample,
    TrainState,
};
use pointloc::sampling::{derive_seed, random_downsample};

use crate::config::RunConfig;
use crate::NumericFailure;

pub const FINAL_CHECKPOINT: &str = "checkpoint.ploc";
pub const LOSS_LOG: &str = "loss.tsv";
pub const TIMING_LOG: &str = "timing.tsv";
pub const RESOLVED_CONFIG: &str = "config.toml";
pub const REPORT: &str = "report.txt";
pub const TRAJECTORY: &str = "trajectory.txt";
const GRADCHECK_BIAS_JITTER: f64 = 0.1;
const LOSS_HEADER: &str = "# epoch\tloss\tbeta\tgamma\n";

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("checkpoint_epoch{epoch:04}.ploc")
}

fn write_resolved(cfg: &RunConfig) -> anyhow::Result<()> {
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    write_atomic(&cfg.out_dir.join(RESOLVED_CONFIG), cfg.to_toml().as_bytes())?;
    Ok(())
}

fn open_manifest(cfg: &RunConfig) -> anyhow::Result<DatasetManifest> {
    let manifest = load_manifest(&cfg.data_dir.join(MANIFEST_NAME))?;
    for w in manifest.report.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(manifest)
}

/// Loads parameters and checks they fit the configured network.
fn load_model(cfg: &RunConfig) -> anyhow::Result<(PointLocConfig, ModelParams<f64>)> {
    let net = cfg.network()?;
    let path = cfg.checkpoint_path();
    let params: ModelParams<f64> = load_checkpoint(&path)?;
    ModelParams::<f64>::init(&net, 0)
        .check_compatible(&params)
        .with_context(|| format!("{} does not match model scale {}", path.display(), cfg.model_scale))?;
    Ok((net, params))
}

pub fn synth(cfg: &RunConfig) -> anyhow::Result<()> {
    let manifest = build_synthetic_dataset(&cfg.synth(), &cfg.out_dir)?;
    write_resolved(cfg)?;
    for split in Split::ALL {
        println!("{split}: {} frames", manifest.frame_count(split));
    }
    println!("wrote {}", cfg.out_dir.join(MANIFEST_NAME).display());
    Ok(())
}

/// Entries of an existing loss log up to and including `epoch`.
fn loss_log_prefix(path: &Path, epoch: usize) -> anyhow::Result<String> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = String::from(LOSS_HEADER);
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let e = EpochLog::parse(line).with_context(|| format!("malformed loss log line {line:?}"))?;
        if e.epoch <= epoch {
            let _ = writeln!(out, "{e}");
        }
    }
    Ok(out)
}

pub fn train_cmd(cfg: &RunConfig, resume: Option<&Path>) -> anyhow::Result<()> {
    let tc = cfg.train()?;
    let net = cfg.network()?;
    write_resolved(cfg)?;
    let manifest = open_manifest(cfg)?;
    let frames = load_frames::<f64>(&manifest, Some(Split::Train), net.input_points, cfg.resample_seed)?;
    let samples = frames
        .iter()
        .map(|f| TrainSample::new(&net, &f.cloud, f.pose.to_log()))
        .collect::<pointloc::Result<Vec<_>>>()?;
    eprintln!("training on {} frames, {} parameters", samples.len(), init_params::<f64>(tc.seed, &tc.model_scale).count());

    let log_path = cfg.out_dir.join(LOSS_LOG);
    let timing_path = cfg.out_dir.join(TIMING_LOG);
    let (state, mut log_text) = match resume {
        Some(path) => {
            let state: TrainState<f64> = load_train_state(path, tc.lr)?;
            ModelParams::<f64>::init(&net, 0)
                .check_compatible(&state.params)
                .with_context(|| format!("{} does not match model scale {}", path.display(), cfg.model_scale))?;
            eprintln!("resuming after epoch {}", state.epoch);
            let prefix = loss_log_prefix(&log_path, state.epoch)?;
            (state, prefix)
        }
        None => (TrainState::fresh(init_params(tc.seed, &tc.model_scale), tc.lr), LOSS_HEADER.to_string()),
    };
    let mut timing = String::new();
    let (state, _) = train(&tc, &net, &samples, state, |state, entry| {
        let _ = writeln!(log_text, "{entry}");
        let _ = writeln!(timing, "{}\t{:.3}", entry.epoch, entry.secs);
        eprintln!(
            "epoch {:>4}  loss {:>10.5}  beta {:>7.3}  gamma {:>7.3}  step {}  {:.1}s",
            entry.epoch, entry.loss, entry.beta, entry.gamma, state.adam.step, entry.secs
        );
        write_atomic(&log_path, log_text.as_bytes())?;
        if tc.checkpoint_every > 0 && state.epoch % tc.checkpoint_every == 0 {
            save_train_state(&cfg.out_dir.join(epoch_checkpoint_name(state.epoch)), state)?;
        }
        Ok(())
    })?;
    write_atomic(&log_path, log_text.as_bytes())?;
    write_atomic(&timing_path, timing.as_bytes())?;
    let final_path = cfg.out_dir.join(FINAL_CHECKPOINT);
    save_train_state(&final_path, &state)?;
    println!("wrote {} (epoch {}, step {})", final_path.display(), state.epoch, state.adam.step);
    Ok(())
}

pub fn eval_cmd(cfg: &RunConfig) -> anyhow::Result<()> {
    let (net, params) = load_model(cfg)?;
    let split = cfg.split()?;
    write_resolved(cfg)?;
    let manifest = open_manifest(cfg)?;
    let frames = load_frames::<f64>(&manifest, Some(split), net.input_points, cfg.resample_seed)?;
    let (report, predictions) = evaluate(&params, &net, &frames, split.as_str(), cfg.aggregate()?, cfg.attention_mode()?)?;
    let truth: Vec<_> = frames.iter().map(|f| f.pose).collect();
    write_atomic(&cfg.out_dir.join(REPORT), report.to_key_values().as_bytes())?;
    export_trajectory(&report, &truth, &predictions, &cfg.out_dir.join(TRAJECTORY))?;
    print!("{}", report.to_table());
    Ok(())
}

pub fn infer_cmd(cfg: &RunConfig, cloud_path: &Path) -> anyhow::Result<()> {
    let (net, params) = load_model(cfg)?;
    let raw = load_cloud::<f64>(cloud_path)?;
    let cloud = random_downsample(&raw, net.input_points, derive_seed(cfg.resample_seed, 0))?;
    let out: LogPose<f64> = predict(&params, &net, &cloud, cfg.attention_mode()?)?;
    let pose = predicted_pose(&out)?;
    let v: Vec<String> = pose.t.iter().chain(&pose.q).map(f64::to_string).collect();
    println!("{}", v.join(" "));
    Ok(())
}

pub fn gradcheck_cmd(cfg: &RunConfig) -> anyhow::Result<()> {
    let start = Instant::now();
    let scale = pointloc::model::ModelScale::by_name(&cfg.gradcheck_scale).expect("validated");
    let net = PointLocConfig::from_scale(&scale);
    let mut params = init_params::<f64>(cfg.seed, &scale);
    jitter_biases(&mut params, derive_seed(cfg.seed, 3), GRADCHECK_BIAS_JITTER);
    let scene = generate_scene(derive_seed(cfg.seed, 0));
    let poses = sample_trajectory(&scene, cfg.gradcheck_samples, derive_seed(cfg.seed, 1));
    let scan = cfg.synth().scan;
    let mut samples = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let raw = simulate_scan(&scene, pose, &scan, derive_seed(cfg.seed, 2 + i as u64))?;
        let cloud = random_downsample(&raw, net.input_points, derive_seed(cfg.resample_seed, i as u64))?;
        samples.push(TrainSample::new(&net, &cloud, pose.to_log())?);
    }
    let gc = cfg.gradcheck();
    let checks = check_model_gradients(&params, &net, &samples, cfg.attention_mode()?, &gc)?;
    print!("{}", format_checks(&checks, gc.tolerance));
    let failed = checks.iter().filter(|c| !c.passes(gc.tolerance)).count();
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    println!(
        "{} tensors, {} failed, worst {:.3e}, {:.1}s",
        checks.len(),
        failed,
        worst,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        bail!(NumericFailure(format!("{failed} tensors exceed relative error {}", gc.tolerance)));
    }
    Ok(())
}
