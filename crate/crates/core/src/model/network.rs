use super::config::{AttentionMode, PointLocConfig, SaLayerConfig};
use super::params::{ModelParams, ParamVars};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{LogPose, Vec3};
use crate::loss::LogPoseVar;
use crate::sampling::{ball_query, farthest_point_sample, group_relative, NeighborIndex, PointCloud};
use crate::scalar::Scalar;

/// Region centers and their features. `feats` is `None` for a raw cloud.
#[derive(Debug, Clone)]
pub struct FeatureSet<T> {
    pub coords: Vec<Vec3<T>>,
    pub feats: Option<Var>,
}

impl<T: Scalar> FeatureSet<T> {
    pub fn from_cloud(cloud: &PointCloud<T>) -> Self {
        Self {
            coords: cloud.points().to_vec(),
            feats: None,
        }
    }
}

/// The data-only part of one SA layer: centers, neighborhoods and the
/// center-relative offsets. None of it depends on parameters.
#[derive(Debug, Clone)]
pub struct SaPlan<T> {
    pub nbr: NeighborIndex<T>,
    pub offsets: Tensor<T>,
}

/// Sampling plans of all SA layers for one input cloud.
#[derive(Debug, Clone)]
pub struct SamplingPlan<T> {
    pub layers: Vec<SaPlan<T>>,
}

fn plan_layer<T: Scalar>(coords: &[Vec3<T>], cfg: &SaLayerConfig) -> Result<SaPlan<T>> {
    let picks = farthest_point_sample(coords, cfg.n_points)?;
    let centers: Vec<Vec3<T>> = picks.iter().map(|&i| coords[i]).collect();
    let nbr = ball_query(coords, &centers, T::lit(cfg.radius), cfg.sample_num)?;
    let offsets = group_relative(coords, None, &nbr)?;
    Ok(SaPlan { nbr, offsets })
}

/// Runs FPS and ball query for every layer.
pub fn plan_sampling<T: Scalar>(config: &PointLocConfig, cloud: &PointCloud<T>) -> Result<SamplingPlan<T>> {
    if cloud.len() != config.input_points {
        return Err(Error::shape("pointloc_forward", &[cloud.len(), 3], &[config.input_points, 3]));
    }
    let mut coords = cloud.points().to_vec();
    let mut layers = Vec::with_capacity(config.sa.len());
    for cfg in &config.sa {
        let plan = plan_layer(&coords, cfg)?;
        coords = plan.nbr.centers.clone();
        layers.push(plan);
    }
    Ok(SamplingPlan { layers })
}

fn mlp<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    prefix: &str,
    layers: usize,
    mut x: Var,
    slope: T,
) -> Result<Var> {
    for l in 0..layers {
        let w = vars.get(&format!("{prefix}{l}.weight"))?;
        let b = vars.get(&format!("{prefix}{l}.bias"))?;
        x = tape.pointwise_linear(x, w, b)?;
        x = tape.leaky_relu(x, slope)?;
    }
    Ok(x)
}

fn linear<T: Scalar>(tape: &mut Tape<T>, vars: &ParamVars, name: &str, x: Var) -> Result<Var> {
    let w = vars.get(&format!("{name}.weight"))?;
    let b = vars.get(&format!("{name}.bias"))?;
    tape.pointwise_linear(x, w, b)
}

/// Shared MLP and max pool of SA layer `layer` (1-based) over a
/// precomputed plan. Returns the M×C_out features.
pub fn sa_layer_apply<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    layer: usize,
    cfg: &SaLayerConfig,
    plan: &SaPlan<T>,
    input: Option<Var>,
    slope: T,
) -> Result<Var> {
    let (m, k) = (plan.nbr.len(), plan.nbr.k);
    let expected = cfg.in_channels();
    let got = input.map_or(0, |f| tape.value(f).cols());
    if got != expected || input.is_some_and(|f| tape.shape(f).len() != 2) {
        return Err(Error::shape("sa_layer_forward", &[got], &[expected]));
    }
    let offsets = tape.constant(plan.offsets.clone());
    let grouped = match input {
        Some(f) => {
            let g = tape.gather_rows(f, &plan.nbr.indices, &[m, k])?;
            tape.concat_last(offsets, g)?
        }
        None => offsets,
    };
    let x = mlp(
        tape,
        vars,
        &format!("sa{layer}.mlp"),
        cfg.mlp_channels.len() - 1,
        grouped,
        slope,
    )?;
    Ok(tape.grouped_max_pool(x, &plan.nbr.valid_counts)?.0)
}

/// One set-abstraction layer: FPS centers, ball-query neighborhoods, shared
/// MLP on `(offset, feature)` rows and a max pool per neighborhood.
pub fn sa_layer_forward<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    layer: usize,
    cfg: &SaLayerConfig,
    input: &FeatureSet<T>,
    slope: T,
) -> Result<FeatureSet<T>> {
    let plan = plan_layer(&input.coords, cfg)?;
    let feats = sa_layer_apply(tape, vars, layer, cfg, &plan, input.feats, slope)?;
    Ok(FeatureSet {
        coords: plan.nbr.centers,
        feats: Some(feats),
    })
}

/// The 1×C channel mask: sigmoid of a linear map of the per-channel max.
pub fn attention_mask<T: Scalar>(tape: &mut Tape<T>, vars: &ParamVars, feats: Var) -> Result<Var> {
    let shape = tape.shape(feats).to_vec();
    if shape.len() != 2 {
        return Err(Error::shape("self_attention_forward", &shape, &[0, 0]));
    }
    let (m, c) = (shape[0], shape[1]);
    let stacked = tape.reshape(feats, &[1, m, c])?;
    let (summary, _) = tape.grouped_max_pool(stacked, &[m])?;
    let logits = linear(tape, vars, "attn.fc", summary)?;
    tape.sigmoid(logits)
}

/// Gates every feature column by the channel mask.
pub fn self_attention_forward<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    feats: Var,
    mode: AttentionMode,
) -> Result<Var> {
    match mode {
        AttentionMode::Disabled => Ok(feats),
        AttentionMode::ForcedOnes => {
            let c = tape.value(feats).cols();
            let ones = tape.constant(Tensor::full(vec![1, c], T::one()));
            tape.broadcast_mul_row(feats, ones)
        }
        AttentionMode::Learned => {
            let mask = attention_mask(tape, vars, feats)?;
            tape.broadcast_mul_row(feats, mask)
        }
    }
}

/// Pointwise MLP, max pool over all points, then an FC layer without
/// activation. Returns the embedding as a 1-D node.
pub fn group_all_forward<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    config: &PointLocConfig,
    feats: Var,
    slope: T,
) -> Result<Var> {
    let shape = tape.shape(feats).to_vec();
    if shape.len() != 2 || shape[1] != config.group_all_mlp[0] {
        return Err(Error::shape("group_all_forward", &shape, &[config.encoder_points(), config.group_all_mlp[0]]));
    }
    let x = mlp(tape, vars, "ga.mlp", config.group_all_mlp.len() - 1, feats, slope)?;
    let c = tape.value(x).cols();
    let stacked = tape.reshape(x, &[1, shape[0], c])?;
    let (pooled, _) = tape.grouped_max_pool(stacked, &[shape[0]])?;
    let flat = tape.reshape(pooled, &[c])?;
    linear(tape, vars, "ga.fc", flat)
}

/// Two independent FC stacks mapping the embedding to `t` and `log q`.
pub fn regressor_forward<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    config: &PointLocConfig,
    embed: Var,
    slope: T,
) -> Result<LogPoseVar> {
    if tape.shape(embed) != [config.regressor[0]] {
        return Err(Error::shape("regressor_forward", tape.shape(embed), &[config.regressor[0]]));
    }
    let depth = config.regressor.len() - 1;
    let mut branch = |name: &str| -> Result<Var> {
        let mut x = embed;
        for l in 1..=depth {
            x = linear(tape, vars, &format!("reg.{name}.fc{l}"), x)?;
            if l < depth {
                x = tape.leaky_relu(x, slope)?;
            }
        }
        Ok(x)
    };
    let t = branch("t")?;
    let w = branch("w")?;
    Ok(LogPoseVar { t, w })
}

/// Shapes of every stage output, in pipeline order.
pub type ShapeTrace = Vec<(String, Vec<usize>)>;

/// Full pipeline over a precomputed sampling plan.
pub fn forward_planned<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    config: &PointLocConfig,
    plan: &SamplingPlan<T>,
    mode: AttentionMode,
    mut trace: Option<&mut ShapeTrace>,
) -> Result<LogPoseVar> {
    let slope = T::lit(config.slope);
    let mut record = |name: &str, shape: &[usize]| {
        if let Some(t) = trace.as_deref_mut() {
            t.push((name.to_string(), shape.to_vec()));
        }
    };
    record("input", &[config.input_points, 3]);
    let mut feats = None;
    for (i, (cfg, p)) in config.sa.iter().zip(&plan.layers).enumerate() {
        let f = sa_layer_apply(tape, vars, i + 1, cfg, p, feats, slope)?;
        record(&format!("sa{}", i + 1), tape.shape(f));
        feats = Some(f);
    }
    let feats = feats.ok_or_else(|| Error::InvalidArgument("no SA layers".into()))?;
    let attended = self_attention_forward(tape, vars, feats, mode)?;
    record("attention", tape.shape(attended));
    let embed = group_all_forward(tape, vars, config, attended, slope)?;
    record("group_all", tape.shape(embed));
    let pose = regressor_forward(tape, vars, config, embed, slope)?;
    record("t", tape.shape(pose.t));
    record("log_q", tape.shape(pose.w));
    Ok(pose)
}

/// SA1 → SA2 → SA3 → SA4 → attention → group-all → regressor.
pub fn pointloc_forward<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    config: &PointLocConfig,
    cloud: &PointCloud<T>,
    mode: AttentionMode,
) -> Result<LogPoseVar> {
    let plan = plan_sampling(config, cloud)?;
    forward_planned(tape, vars, config, &plan, mode, None)
}

/// Inference without gradient bookkeeping.
pub fn predict<T: Scalar>(
    params: &ModelParams<T>,
    config: &PointLocConfig,
    cloud: &PointCloud<T>,
    mode: AttentionMode,
) -> Result<LogPose<T>> {
    let plan = plan_sampling(config, cloud)?;
    predict_planned(params, config, &plan, mode)
}

pub fn predict_planned<T: Scalar>(
    params: &ModelParams<T>,
    config: &PointLocConfig,
    plan: &SamplingPlan<T>,
    mode: AttentionMode,
) -> Result<LogPose<T>> {
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let out = forward_planned(&mut tape, &vars, config, plan, mode, None)?;
    Ok(out.read(&tape))
}
