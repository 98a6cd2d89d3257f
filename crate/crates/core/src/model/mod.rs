//! The pose regression network and its parameters.

use crate::scalar::Scalar;

pub mod checkpoint;
pub mod config;
pub mod network;
pub mod params;

pub use checkpoint::{load_checkpoint, read_records, save_checkpoint, write_records, Record};
pub use config::{AttentionMode, ModelScale, PointLocConfig, SaLayerConfig};
pub use network::{
    attention_mask, forward_planned, group_all_forward, plan_sampling, pointloc_forward, predict, predict_planned,
    regressor_forward, sa_layer_apply, sa_layer_forward, self_attention_forward, FeatureSet, SamplingPlan, SaPlan,
    ShapeTrace,
};
pub use params::{linear_layers, LinearSpec, ModelParams, ParamVars};

/// Fresh parameters for the network described by `scale`.
pub fn init_params<T: Scalar>(seed: u64, scale: &ModelScale) -> ModelParams<T> {
    ModelParams::init(&PointLocConfig::from_scale(scale), seed)
}
