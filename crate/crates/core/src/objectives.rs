//! Training losses and count metrics.
//!
//! Ground truth is an `N x 1 x H x W` tensor of density maps. Every loss term
//! averages its per-image value over the batch.

use serde::{Deserialize, Serialize};

use crate::data::DensityMap;
use crate::model::ForwardOutputs;
use crate::tensor::{Graph, Shape, Tensor, TensorError, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the relative count term inside the map loss.
    pub alpha: f64,
    /// Guards the relative count error against empty scenes.
    pub eps: f64,
    /// Constant divisor of the coarse (attention) loss.
    pub m_norm: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            eps: 1e-4,
            m_norm: 32.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.alpha >= 0.0) || !(self.eps > 0.0) || !(self.m_norm > 0.0) {
            return Err(ObjectiveError::Config(format!(
                "need alpha >= 0, eps > 0, m_norm > 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error("invalid loss config: {0}")]
    Config(String),
    #[error("prediction {pred} does not match ground truth {truth}")]
    ShapeMismatch { pred: Shape, truth: Shape },
    #[error("no (predicted, true) pairs to evaluate")]
    Empty,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Scalar loss values of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_att: f64,
    pub l_e: f64,
    pub l_c: f64,
    pub l_map: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_att, self.l_e, self.l_c, self.l_map, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Loss terms recorded on a graph.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub l_att: Var,
    pub l_e: Var,
    pub l_c: Var,
    pub l_map: Var,
    pub total: Var,
}

impl LossTerms {
    pub fn breakdown(&self, graph: &Graph) -> LossBreakdown {
        let v = |x: Var| graph.value(x).data()[0];
        LossBreakdown {
            l_att: v(self.l_att),
            l_e: v(self.l_e),
            l_c: v(self.l_c),
            l_map: v(self.l_map),
            total: v(self.total),
        }
    }

    /// The quantity to minimize: the full loss, or the coarse loss alone
    /// when the model has no refinement head.
    pub fn objective(&self, use_refine: bool) -> Var {
        if use_refine {
            self.total
        } else {
            self.l_att
        }
    }
}

/// Stack density maps into an `N x 1 x H x W` ground-truth tensor.
pub fn stack_density(maps: &[&DensityMap]) -> Result<Tensor, ObjectiveError> {
    let tensors: Vec<Tensor> = maps.iter().map(|m| m.to_tensor()).collect();
    let refs: Vec<&Tensor> = tensors.iter().collect();
    Ok(Tensor::stack(&refs)?)
}

fn check_shapes(graph: &Graph, pred: Var, truth: &Tensor) -> Result<usize, ObjectiveError> {
    let (p, t) = (graph.shape(pred), truth.shape());
    if p != t || p.channels != 1 {
        return Err(ObjectiveError::ShapeMismatch { pred: p, truth: t });
    }
    Ok(p.batch)
}

/// Mean over the batch of `(1 / m_norm) * ||D_C - D||^2`.
pub fn loss_att(
    graph: &mut Graph,
    d_coarse: Var,
    truth: &Tensor,
    cfg: &LossConfig,
) -> Result<Var, ObjectiveError> {
    let n = check_shapes(graph, d_coarse, truth)?;
    let gt = graph.constant(truth.clone());
    let diff = graph.sub(d_coarse, gt)?;
    let sq = graph.square(diff);
    let s = graph.sum(sq);
    Ok(graph.scale(s, 1.0 / (cfg.m_norm * n as f64)))
}

/// `(l_e, l_c, l_map)` for the fine density map.
pub fn loss_map(
    graph: &mut Graph,
    d_fine: Var,
    truth: &Tensor,
    cfg: &LossConfig,
) -> Result<(Var, Var, Var), ObjectiveError> {
    let n = check_shapes(graph, d_fine, truth)?;
    let inv_n = 1.0 / n as f64;

    let gt = graph.constant(truth.clone());
    let diff = graph.sub(d_fine, gt)?;
    let sq = graph.square(diff);
    let s = graph.sum(sq);
    let l_e = graph.scale(s, inv_n);

    let counts: Vec<f64> = (0..n).map(|i| truth.plane(i, 0).iter().sum()).collect();
    let count_shape = Shape::new(n, 1, 1, 1);
    let gt_counts = graph.constant(Tensor::new(count_shape, counts.clone())?);
    let inv_counts = graph.constant(Tensor::new(
        count_shape,
        counts.iter().map(|c| 1.0 / (c + cfg.eps)).collect(),
    )?);
    let pred_counts = graph.sum_per_image(d_fine);
    let err = graph.sub(gt_counts, pred_counts)?;
    let rel = graph.mul(err, inv_counts)?;
    let rel_sq = graph.square(rel);
    let s = graph.sum(rel_sq);
    let l_c = graph.scale(s, inv_n);

    let weighted = graph.scale(l_c, cfg.alpha);
    let l_map = graph.add(l_e, weighted)?;
    Ok((l_e, l_c, l_map))
}

/// `l_att + l_map` over a forward pass.
pub fn total_loss(
    graph: &mut Graph,
    outputs: &ForwardOutputs,
    truth: &Tensor,
    cfg: &LossConfig,
) -> Result<LossTerms, ObjectiveError> {
    let l_att = loss_att(graph, outputs.d_coarse, truth, cfg)?;
    let (l_e, l_c, l_map) = loss_map(graph, outputs.d_fine, truth, cfg)?;
    let total = graph.add(l_att, l_map)?;
    Ok(LossTerms {
        l_att,
        l_e,
        l_c,
        l_map,
        total,
    })
}

/// Mean absolute count error and root mean squared count error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    /// Root of the mean squared count error.
    pub mse: f64,
    pub n: usize,
}

/// Metrics over `(predicted_count, true_count)` pairs.
pub fn evaluate_metrics(pairs: &[(f64, f64)]) -> Result<Metrics, ObjectiveError> {
    if pairs.is_empty() {
        return Err(ObjectiveError::Empty);
    }
    let n = pairs.len() as f64;
    let abs: f64 = pairs.iter().map(|(p, t)| (t - p).abs()).sum();
    let sq: f64 = pairs.iter().map(|(p, t)| (t - p) * (t - p)).sum();
    Ok(Metrics {
        mae: abs / n,
        mse: (sq / n).sqrt(),
        n: pairs.len(),
    })
}
