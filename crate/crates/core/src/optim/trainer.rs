use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::{adam_step, AdamState};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::geometry::LogPose;
use crate::loss::pose_loss;
use crate::model::checkpoint::{params_from_records, params_to_records, read_records, record_tensor, tensor_record, write_records, Record};
use crate::model::{forward_planned, plan_sampling, AttentionMode, ModelParams, ModelScale, PointLocConfig, SamplingPlan};
use crate::sampling::PointCloud;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub model_scale: ModelScale,
    /// Epochs between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub attention: AttentionMode,
    /// Stop after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            batch_size: 16,
            seed: 0,
            model_scale: ModelScale::full(),
            checkpoint_every: 10,
            attention: AttentionMode::Learned,
            max_steps: None,
        }
    }
}

/// A training frame with its parameter-independent sampling precomputed.
#[derive(Debug, Clone)]
pub struct TrainSample<T> {
    pub plan: SamplingPlan<T>,
    pub target: LogPose<T>,
}

impl<T: Scalar> TrainSample<T> {
    pub fn new(config: &PointLocConfig, cloud: &PointCloud<T>, target: LogPose<T>) -> Result<Self> {
        Ok(Self {
            plan: plan_sampling(config, cloud)?,
            target,
        })
    }
}

/// Everything needed to continue a run: weights, optimizer moments and the
/// number of completed epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub params: ModelParams<T>,
    pub adam: AdamState<T>,
    pub epoch: usize,
}

impl<T: Scalar> TrainState<T> {
    pub fn fresh(params: ModelParams<T>, lr: f64) -> Self {
        let adam = AdamState::new(&params, lr);
        Self { params, adam, epoch: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Wall-clock time; not part of the text form, which must be
    /// reproducible.
    pub secs: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}", self.epoch, self.loss, self.beta, self.gamma)
    }
}

impl EpochLog {
    pub fn parse(line: &str) -> Option<Self> {
        let mut it = line.split('\t');
        let log = Self {
            epoch: it.next()?.parse().ok()?,
            loss: it.next()?.parse().ok()?,
            beta: it.next()?.parse().ok()?,
            gamma: it.next()?.parse().ok()?,
            secs: 0.0,
        };
        it.next().is_none().then_some(log)
    }
}

/// Loss and parameter gradients of one sample.
pub fn sample_gradient<T: Scalar>(
    params: &ModelParams<T>,
    config: &PointLocConfig,
    sample: &TrainSample<T>,
    mode: AttentionMode,
) -> Result<(T, BTreeMap<String, Vec<T>>)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let pred = forward_planned(&mut tape, &vars, config, &sample.plan, mode, None)?;
    let loss = pose_loss(&mut tape, pred, &sample.target, vars.loss_factors()?)?;
    tape.backward(loss)?;
    let value = tape.value(loss).data()[0];
    Ok((value, vars.gradients(&tape)?))
}

/// Mean loss and mean gradient over `batch`. Per-sample work may run in
/// parallel; the reduction is always in batch order.
pub fn batch_gradient<T: Scalar>(
    params: &ModelParams<T>,
    config: &PointLocConfig,
    samples: &[TrainSample<T>],
    batch: &[usize],
    mode: AttentionMode,
) -> Result<(T, BTreeMap<String, Vec<T>>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let parts: Vec<(T, BTreeMap<String, Vec<T>>)> = batch
        .par_iter()
        .map(|&i| sample_gradient(params, config, &samples[i], mode))
        .collect::<Result<_>>()?;
    let scale = T::one() / T::from_usize(batch.len()).expect("batch size fits");
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty");
    for (l, g) in iter {
        loss += l;
        for (name, acc) in grads.iter_mut() {
            for (a, b) in acc.iter_mut().zip(&g[name]) {
                *a += *b;
            }
        }
    }
    for acc in grads.values_mut() {
        acc.iter_mut().for_each(|a| *a *= scale);
    }
    Ok((loss * scale, grads))
}

/// Sample order of `epoch` (0-based): a seeded shuffle from its own stream.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Runs epochs `state.epoch .. cfg.epochs`. `on_epoch` sees the state after
/// every epoch, e.g. to write checkpoints and the loss log.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    net: &PointLocConfig,
    samples: &[TrainSample<T>],
    mut state: TrainState<T>,
    mut on_epoch: impl FnMut(&TrainState<T>, &EpochLog) -> Result<()>,
) -> Result<(TrainState<T>, Vec<EpochLog>)> {
    if samples.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    let mut log = Vec::new();
    while state.epoch < cfg.epochs {
        if cfg.max_steps.is_some_and(|m| state.adam.step >= m) {
            break;
        }
        let start = Instant::now();
        let order = epoch_order(cfg.seed, state.epoch, samples.len());
        let (mut total, mut seen) = (0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_steps.is_some_and(|m| state.adam.step >= m) {
                break;
            }
            let non_finite = || Error::NonFiniteLoss {
                epoch: state.epoch + 1,
                batch: b,
            };
            let (loss, grads) = match batch_gradient(&state.params, net, samples, batch, cfg.attention) {
                Err(Error::NonFinite { .. }) => return Err(non_finite()),
                other => other?,
            };
            if !loss.is_finite() {
                return Err(non_finite());
            }
            adam_step(&mut state.params, &grads, &mut state.adam)?;
            total += loss.as_f64() * batch.len() as f64;
            seen += batch.len();
        }
        state.epoch += 1;
        let entry = EpochLog {
            epoch: state.epoch,
            loss: total / seen.max(1) as f64,
            beta: state.params.beta().as_f64(),
            gamma: state.params.gamma().as_f64(),
            secs: start.elapsed().as_secs_f64(),
        };
        on_epoch(&state, &entry)?;
        log.push(entry);
    }
    Ok((state, log))
}

const STEP: &str = "adam.step";
const EPOCH: &str = "train.epoch";

/// Writes parameters plus `adam.m.*`, `adam.v.*`, `adam.step` and
/// `train.epoch` records. A plain model loader ignores the extra records.
pub fn save_train_state<T: Scalar>(path: &Path, state: &TrainState<T>) -> Result<()> {
    let mut records = params_to_records(&state.params);
    for (kind, moments) in [("m", &state.adam.m), ("v", &state.adam.v)] {
        for (name, data) in moments {
            let t = Tensor::new(vec![data.len()], data.clone())?;
            records.push(tensor_record(&format!("adam.{kind}.{name}"), &t));
        }
    }
    let meta = |name: &str, v: f64| Record {
        name: name.into(),
        shape: vec![1],
        data: vec![v],
    };
    records.push(meta(STEP, state.adam.step as f64));
    records.push(meta(EPOCH, state.epoch as f64));
    records.sort_by(|a, b| a.name.cmp(&b.name));
    write_records(path, &records)
}

pub fn load_train_state<T: Scalar>(path: &Path, lr: f64) -> Result<TrainState<T>> {
    let records = read_records(path)?;
    let params: ModelParams<T> = params_from_records(&records, crate::model::checkpoint::is_param_name)?;
    let mut adam = AdamState::new(&params, lr);
    let mut epoch = None;
    for r in &records {
        let moment = |prefix: &str| r.name.strip_prefix(prefix).map(str::to_string);
        if let Some(name) = moment("adam.m.") {
            adam.m.insert(name, record_tensor::<T>(r)?.into_data());
        } else if let Some(name) = moment("adam.v.") {
            adam.v.insert(name, record_tensor::<T>(r)?.into_data());
        } else if r.name == STEP {
            adam.step = r.data[0] as u64;
        } else if r.name == EPOCH {
            epoch = Some(r.data[0] as usize);
        }
    }
    let epoch = epoch.ok_or_else(|| Error::Checkpoint(format!("{} holds no training state", path.display())))?;
    for (name, t) in params.iter() {
        for moments in [&adam.m, &adam.v] {
            if moments.get(name).map(Vec::len) != Some(t.len()) {
                return Err(Error::Checkpoint(format!("optimizer moments for {name} missing or misshapen")));
            }
        }
    }
    Ok(TrainState { params, adam, epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use rand::Rng;

    fn tiny() -> PointLocConfig {
        PointLocConfig::from_scale(&ModelScale::tiny())
    }

    fn samples(n: usize) -> Vec<TrainSample<f64>> {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        (0..n)
            .map(|_| {
                let pts = (0..cfg.input_points)
                    .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..2.0)])
                    .collect();
                let pose = Pose::new(
                    [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0],
                    [1.0, 0.0, 0.0, rng.random_range(-0.3..0.3)],
                )
                .unwrap();
                TrainSample::new(&cfg, &PointCloud::new(pts).unwrap(), pose.to_log()).unwrap()
            })
            .collect()
    }

    fn config(epochs: usize, batch: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: batch,
            seed: 3,
            model_scale: ModelScale::tiny(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.lr, c.batch_size), (100, 1e-3, 16));
    }

    #[test]
    fn one_epoch_on_one_sample_reduces_its_loss() {
        let net = tiny();
        let data = samples(1);
        let params = ModelParams::init(&net, 0);
        let before = sample_gradient(&params, &net, &data[0], AttentionMode::Learned).unwrap().0;
        let (state, _) = train(&config(1, 1), &net, &data, TrainState::fresh(params, 1e-3), |_, _| Ok(())).unwrap();
        let after = sample_gradient(&state.params, &net, &data[0], AttentionMode::Learned).unwrap().0;
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn every_tensor_receives_gradient() {
        let net = tiny();
        let data = samples(2);
        let params = ModelParams::init(&net, 0);
        let (_, grads) = batch_gradient(&params, &net, &data, &[0, 1], AttentionMode::Learned).unwrap();
        for (name, g) in &grads {
            assert!(g.iter().any(|&v| v != 0.0), "{name} has zero gradient");
        }
        assert_eq!(grads.len(), params.len());
    }

    #[test]
    fn batch_gradient_is_the_mean_of_sample_gradients() {
        let net = tiny();
        let data = samples(2);
        let params = ModelParams::init(&net, 0);
        let (l, g) = batch_gradient(&params, &net, &data, &[0, 1], AttentionMode::Learned).unwrap();
        let (l0, g0) = sample_gradient(&params, &net, &data[0], AttentionMode::Learned).unwrap();
        let (l1, g1) = sample_gradient(&params, &net, &data[1], AttentionMode::Learned).unwrap();
        assert!((l - (l0 + l1) / 2.0).abs() < 1e-12);
        let b = &g["loss.beta"][0];
        assert!((b - (g0["loss.beta"][0] + g1["loss.beta"][0]) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn runs_are_deterministic_and_resume_exactly() {
        let net = tiny();
        let data = samples(6);
        let cfg = config(4, 4);
        let init = || TrainState::fresh(ModelParams::init(&net, 1), cfg.lr);
        let (a, log_a) = train(&cfg, &net, &data, init(), |_, _| Ok(())).unwrap();
        let (b, log_b) = train(&cfg, &net, &data, init(), |_, _| Ok(())).unwrap();
        assert_eq!(a, b);
        let losses = |l: &[EpochLog]| l.iter().map(|e| (e.loss, e.beta, e.gamma)).collect::<Vec<_>>();
        assert_eq!(losses(&log_a), losses(&log_b));
        assert_ne!(a.params.beta(), 0.0);
        assert_ne!(a.params.gamma(), -3.0);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.ploc");
        let (half, _) = train(&TrainConfig { epochs: 2, ..cfg.clone() }, &net, &data, init(), |_, _| Ok(())).unwrap();
        save_train_state(&path, &half).unwrap();
        let resumed = load_train_state::<f64>(&path, cfg.lr).unwrap();
        assert_eq!(resumed, half);
        let (c, log_c) = train(&cfg, &net, &data, resumed, |_, _| Ok(())).unwrap();
        assert_eq!(c, a);
        assert_eq!(losses(&log_c), losses(&log_a[2..]));
    }

    #[test]
    fn max_steps_caps_updates() {
        let net = tiny();
        let data = samples(5);
        let cfg = TrainConfig {
            max_steps: Some(3),
            ..config(10, 2)
        };
        let (s, log) = train(&cfg, &net, &data, TrainState::fresh(ModelParams::init(&net, 0), cfg.lr), |_, _| Ok(())).unwrap();
        assert_eq!(s.adam.step, 3);
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn epoch_log_line_round_trip() {
        let e = EpochLog {
            epoch: 3,
            loss: -1.234567890123,
            beta: 0.5,
            gamma: -2.75,
            secs: 0.0,
        };
        assert_eq!(EpochLog::parse(&e.to_string()), Some(e));
        assert!(EpochLog::parse("1\t2").is_none());
    }
}
