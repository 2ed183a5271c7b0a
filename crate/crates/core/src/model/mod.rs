//! The counting network: low-level feature extractor, dense high-level
//! encoder, attention map generator and the coarse/fine density heads.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointError,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{ModelConfig, HFE_LAYERS, LFE_KERNELS};
pub use forward::{
    amg_forward, forward, forward_with, hfe_forward, lfe_forward, predict_density, ForwardOptions,
    ForwardOutputs, ParamVars,
};
pub use params::{
    build_model, build_model_seeded, build_model_with_std, layer_specs, param_count, LayerSpec,
    ModelParams, INIT_STD,
};

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input has {actual} channels, model expects {expected}")]
    InputChannels { expected: usize, actual: usize },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("parameter set: {0}")]
    Params(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl ModelParams {
    /// Keep only the tensors `config` needs, e.g. to derive an ablated model
    /// that shares weights with this one.
    pub fn restrict_to(&self, config: ModelConfig) -> Result<ModelParams, ModelError> {
        let wanted: std::collections::BTreeMap<_, _> = layer_specs(&config)
            .iter()
            .flat_map(|l| [format!("{}.weight", l.path), format!("{}.bias", l.path)])
            .map(|name| {
                self.get(&name)
                    .cloned()
                    .map(|t| (name.clone(), t))
                    .ok_or(ModelError::MissingParam(name))
            })
            .collect::<Result<_, _>>()?;
        ModelParams::from_parts(config, self.seed, wanted)
    }
}
