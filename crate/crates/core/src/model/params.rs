use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, HFE_LAYERS, LFE_KERNELS};
use super::ModelError;
use crate::tensor::{Shape, Tensor};

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.01;

/// One convolution of the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub path: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl LayerSpec {
    fn new(
        path: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    ) -> Self {
        Self {
            path: path.into(),
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels,
            self.kernel,
            self.kernel,
        )
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(self.out_channels, 1, 1, 1)
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().numel() + self.out_channels
    }
}

/// Input width of HFE layer `j` (0-based) in a block.
pub(crate) fn hfe_layer_input(config: &ModelConfig, j: usize) -> usize {
    if config.use_dense {
        config.feature_channels + j * config.hfe_layer_channels
    } else if j == 0 {
        config.feature_channels
    } else {
        config.hfe_layer_channels
    }
}

/// Every convolution implied by `config`, in construction order.
pub fn layer_specs(config: &ModelConfig) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let branch = config.lfe_branch_channels;
    let reduce = config.lfe_reduce_channels();
    let feat = config.feature_channels;

    for (block, input) in [(1, config.input_channels), (2, feat)] {
        layers.push(LayerSpec::new(
            format!("lfe.block{block}.branch1"),
            input,
            branch,
            1,
        ));
        for k in LFE_KERNELS {
            layers.push(LayerSpec::new(
                format!("lfe.block{block}.branch{k}.reduce"),
                input,
                reduce,
                1,
            ));
            layers.push(LayerSpec::new(
                format!("lfe.block{block}.branch{k}.conv"),
                reduce,
                branch,
                k,
            ));
        }
    }

    for block in 1..=config.hfe_blocks {
        for j in 0..HFE_LAYERS {
            layers.push(LayerSpec::new(
                format!("hfe.block{block}.layer{}", j + 1),
                hfe_layer_input(config, j),
                config.hfe_layer_channels,
                3,
            ));
        }
        layers.push(LayerSpec::new(
            format!("hfe.block{block}.reduce"),
            HFE_LAYERS * config.hfe_layer_channels,
            feat,
            1,
        ));
    }
    layers.push(LayerSpec::new(
        "hfe.global.reduce",
        (1 + config.hfe_blocks) * feat,
        feat,
        1,
    ));
    layers.push(LayerSpec::new("hfe.global.conv", feat, feat, 3));

    if config.use_amg {
        layers.push(LayerSpec::new(
            "amg.conv",
            feat,
            config.amg_hidden_channels,
            3,
        ));
        layers.push(LayerSpec::new(
            "amg.project",
            config.amg_hidden_channels,
            1,
            1,
        ));
    }
    layers.push(LayerSpec::new("head.coarse", feat, 1, 3));
    if config.use_refine {
        layers.push(LayerSpec::new(
            "head.fine.conv",
            feat,
            config.fine_hidden_channels,
            3,
        ));
        layers.push(LayerSpec::new(
            "head.fine.project",
            config.fine_hidden_channels,
            1,
            1,
        ));
    }
    layers
}

/// Total number of learnable scalars for `config`.
pub fn param_count(config: &ModelConfig) -> usize {
    layer_specs(config).iter().map(LayerSpec::param_count).sum()
}

/// All learnable tensors, keyed `<layer path>.weight` / `<layer path>.bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub seed: u64,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub(crate) fn from_parts(
        config: ModelConfig,
        seed: u64,
        tensors: BTreeMap<String, Tensor>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let expected: BTreeMap<String, Shape> = layer_specs(&config)
            .into_iter()
            .flat_map(|l| {
                [
                    (format!("{}.weight", l.path), l.weight_shape()),
                    (format!("{}.bias", l.path), l.bias_shape()),
                ]
            })
            .collect();
        if expected.len() != tensors.len() {
            return Err(ModelError::Params(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, shape) in &expected {
            match tensors.get(name) {
                Some(t) if t.shape() == *shape => {}
                Some(t) => {
                    return Err(ModelError::Params(format!(
                        "{name} has shape {}, expected {shape}",
                        t.shape()
                    )))
                }
                None => return Err(ModelError::MissingParam(name.clone())),
            }
        }
        Ok(Self {
            config,
            seed,
            tensors,
        })
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Round every value through `f32`, the checkpoint storage precision.
    pub fn quantize_f32(&mut self) {
        for t in self.tensors.values_mut() {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Gaussian(0, 0.01) weights and zero biases, drawn layer by layer.
pub fn build_model<R: Rng + ?Sized>(
    config: &ModelConfig,
    seed: u64,
    rng: &mut R,
) -> Result<ModelParams, ModelError> {
    build_model_with_std(config, seed, INIT_STD, rng)
}

pub fn build_model_with_std<R: Rng + ?Sized>(
    config: &ModelConfig,
    seed: u64,
    std: f64,
    rng: &mut R,
) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let normal = Normal::new(0.0, std).map_err(|e| ModelError::Config(e.to_string()))?;
    let mut tensors = BTreeMap::new();
    for layer in layer_specs(config) {
        let ws = layer.weight_shape();
        let weights = (0..ws.numel()).map(|_| normal.sample(rng)).collect();
        tensors.insert(format!("{}.weight", layer.path), Tensor::new(ws, weights)?);
        tensors.insert(
            format!("{}.bias", layer.path),
            Tensor::zeros(layer.bias_shape()),
        );
    }
    ModelParams::from_parts(config.clone(), seed, tensors)
}

/// Seeded convenience wrapper around [`build_model`].
pub fn build_model_seeded(config: &ModelConfig, seed: u64) -> Result<ModelParams, ModelError> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    build_model(config, seed, &mut rng)
}
