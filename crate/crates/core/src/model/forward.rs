use std::collections::BTreeMap;

use super::config::{ModelConfig, HFE_LAYERS, LFE_KERNELS};
use super::{ModelError, ModelParams};
use crate::tensor::kernels::ConvGeometry;
use crate::tensor::{Graph, Tensor, Var};

/// Model parameters registered on a graph.
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn register(graph: &mut Graph, params: &ModelParams, trainable: bool) -> Self {
        let vars = params
            .tensors()
            .iter()
            .map(|(name, t)| (name.clone(), graph.leaf(t.clone(), trainable)))
            .collect();
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradients after a backward pass; parameters the pass never reached
    /// get zeros.
    pub fn grads(&self, graph: &Graph) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(name, v)| {
                let g = graph
                    .grad(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(graph.shape(*v)));
                (name.clone(), g)
            })
            .collect()
    }

    /// "Same"-padded convolution `<path>.weight` / `<path>.bias`.
    fn conv(
        &self,
        graph: &mut Graph,
        path: &str,
        input: Var,
        dilation: usize,
    ) -> Result<Var, ModelError> {
        let weight = self.get(&format!("{path}.weight"))?;
        let bias = self.get(&format!("{path}.bias"))?;
        let k = graph.shape(weight).height;
        let padding = ConvGeometry::same_padding(k, dilation);
        Ok(graph.conv2d(input, weight, bias, dilation, padding)?)
    }

    fn conv_relu(
        &self,
        graph: &mut Graph,
        path: &str,
        input: Var,
        dilation: usize,
    ) -> Result<Var, ModelError> {
        let c = self.conv(graph, path, input, dilation)?;
        Ok(graph.relu(c))
    }
}

/// Named intermediate maps of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    pub f_m1: Var,
    pub f_m2: Var,
    /// One output per HFE block.
    pub f_l: Vec<Var>,
    /// Concatenation of F_M2 and every F_L.
    pub f_g_concat: Var,
    pub f_g: Var,
    /// `None` when the attention module is disabled.
    pub f_att: Option<Var>,
    pub f_ref: Var,
    pub d_coarse: Var,
    /// Aliases `d_coarse` when refinement is disabled.
    pub d_fine: Var,
    pub params: ParamVars,
}

#[derive(Clone, Debug)]
pub struct ForwardOptions {
    /// Register parameters as gradient-carrying leaves.
    pub trainable: bool,
    /// Use this `N x 1 x H x W` map in place of the attention module output.
    pub attention_override: Option<Tensor>,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            trainable: true,
            attention_override: None,
        }
    }
}

fn lfe_block(
    graph: &mut Graph,
    p: &ParamVars,
    block: usize,
    input: Var,
    dilation: usize,
) -> Result<Var, ModelError> {
    let mut branches = vec![p.conv_relu(graph, &format!("lfe.block{block}.branch1"), input, 1)?];
    for k in LFE_KERNELS {
        let reduced = p.conv_relu(
            graph,
            &format!("lfe.block{block}.branch{k}.reduce"),
            input,
            1,
        )?;
        branches.push(p.conv_relu(
            graph,
            &format!("lfe.block{block}.branch{k}.conv"),
            reduced,
            dilation,
        )?);
    }
    Ok(graph.concat_channels(&branches)?)
}

/// Two inception blocks; the second uses dilated kernels.
pub fn lfe_forward(
    graph: &mut Graph,
    p: &ParamVars,
    config: &ModelConfig,
    input: Var,
) -> Result<(Var, Var), ModelError> {
    let channels = graph.shape(input).channels;
    if channels != config.input_channels {
        return Err(ModelError::InputChannels {
            expected: config.input_channels,
            actual: channels,
        });
    }
    let f_m1 = lfe_block(graph, p, 1, input, 1)?;
    let f_m2 = lfe_block(graph, p, 2, f_m1, config.dilation_block2)?;
    Ok((f_m1, f_m2))
}

/// Densely connected residual blocks followed by global integration.
/// Returns `(F_L per block, F_g, F_G)`.
pub fn hfe_forward(
    graph: &mut Graph,
    p: &ParamVars,
    config: &ModelConfig,
    f_m2: Var,
) -> Result<(Vec<Var>, Var, Var), ModelError> {
    let channels = graph.shape(f_m2).channels;
    if channels != config.feature_channels {
        return Err(ModelError::InputChannels {
            expected: config.feature_channels,
            actual: channels,
        });
    }
    let mut block_input = f_m2;
    let mut f_l = Vec::with_capacity(config.hfe_blocks);
    for block in 1..=config.hfe_blocks {
        let mut layer_outputs: Vec<Var> = Vec::with_capacity(HFE_LAYERS);
        for j in 0..HFE_LAYERS {
            let layer_in = if config.use_dense {
                let mut parts = vec![block_input];
                parts.extend_from_slice(&layer_outputs);
                graph.concat_channels(&parts)?
            } else {
                layer_outputs.last().copied().unwrap_or(block_input)
            };
            let path = format!("hfe.block{block}.layer{}", j + 1);
            layer_outputs.push(p.conv_relu(graph, &path, layer_in, 1)?);
        }
        let stacked = graph.concat_channels(&layer_outputs)?;
        let reduced = p.conv(graph, &format!("hfe.block{block}.reduce"), stacked, 1)?;
        let out = graph.add(block_input, reduced)?;
        f_l.push(out);
        block_input = out;
    }
    let mut parts = vec![f_m2];
    parts.extend_from_slice(&f_l);
    let f_g_concat = graph.concat_channels(&parts)?;
    let integrated = p.conv_relu(graph, "hfe.global.reduce", f_g_concat, 1)?;
    let f_g = p.conv_relu(graph, "hfe.global.conv", integrated, 1)?;
    Ok((f_l, f_g_concat, f_g))
}

/// Single-channel pixel-wise attention in (0, 1) from the first LFE block.
pub fn amg_forward(graph: &mut Graph, p: &ParamVars, f_m1: Var) -> Result<Var, ModelError> {
    let hidden = p.conv_relu(graph, "amg.conv", f_m1, 1)?;
    let logits = p.conv(graph, "amg.project", hidden, 1)?;
    Ok(graph.sigmoid(logits))
}

pub fn forward(
    graph: &mut Graph,
    params: &ModelParams,
    input: Var,
) -> Result<ForwardOutputs, ModelError> {
    forward_with(graph, params, input, &ForwardOptions::default())
}

pub fn forward_with(
    graph: &mut Graph,
    params: &ModelParams,
    input: Var,
    options: &ForwardOptions,
) -> Result<ForwardOutputs, ModelError> {
    let config = &params.config;
    let p = ParamVars::register(graph, params, options.trainable);
    let (f_m1, f_m2) = lfe_forward(graph, &p, config, input)?;
    let (f_l, f_g_concat, f_g) = hfe_forward(graph, &p, config, f_m2)?;

    let f_att = match (&options.attention_override, config.use_amg) {
        (Some(t), _) => Some(graph.constant(t.clone())),
        (None, true) => Some(amg_forward(graph, &p, f_m1)?),
        (None, false) => None,
    };
    let f_ref = match f_att {
        Some(att) => graph.mul(f_g, att)?,
        None => f_g,
    };

    let d_coarse = p.conv_relu(graph, "head.coarse", f_ref, 1)?;
    let d_fine = if config.use_refine {
        let hidden = p.conv_relu(graph, "head.fine.conv", f_ref, 1)?;
        p.conv_relu(graph, "head.fine.project", hidden, 1)?
    } else {
        d_coarse
    };

    Ok(ForwardOutputs {
        f_m1,
        f_m2,
        f_l,
        f_g_concat,
        f_g,
        f_att,
        f_ref,
        d_coarse,
        d_fine,
        params: p,
    })
}

/// Forward without gradient bookkeeping; returns the fine density map.
pub fn predict_density(params: &ModelParams, image: &Tensor) -> Result<Tensor, ModelError> {
    let mut graph = Graph::new();
    let x = graph.constant(image.clone());
    let out = forward_with(
        &mut graph,
        params,
        x,
        &ForwardOptions {
            trainable: false,
            attention_override: None,
        },
    )?;
    Ok(graph.value(out.d_fine).clone())
}
