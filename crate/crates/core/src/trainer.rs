//! Patch-based training loop.

use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    extract_training_patches, random_hflip, DataError, PatchPair, Sample, PATCHES_PER_IMAGE,
};
use crate::inference::{evaluate_samples, InferenceError};
use crate::model::{
    build_model, forward, save_checkpoint, CheckpointError, ModelConfig, ModelError, ModelParams,
};
use crate::objectives::{
    stack_density, total_loss, LossBreakdown, LossConfig, Metrics, ObjectiveError,
};
use crate::tensor::{AdamState, Graph, Tensor, TensorError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    /// Patches per optimization step.
    pub batch_size: usize,
    pub seed: u64,
    /// Write a checkpoint and run validation every this many steps; 0 only
    /// at the end.
    pub checkpoint_every: usize,
    /// Ground-truth Gaussian bandwidth in pixels.
    pub sigma: f64,
    pub model: ModelConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            steps: 1000,
            batch_size: 1,
            seed: 0,
            checkpoint_every: 0,
            sigma: 4.0,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.steps == 0 {
            return Err(TrainError::Config("steps must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(TrainError::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(TrainError::Config(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        self.model.validate()?;
        self.loss.validate()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("non-finite loss at step {step}: {breakdown:?}")]
    NonFinite {
        step: usize,
        breakdown: LossBreakdown,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub validation: Vec<ValidationRecord>,
}

impl TrainLog {
    /// Newline-delimited JSON, one record per line, tagged by `kind`.
    pub fn write_ndjson(&self, mut w: impl Write) -> std::io::Result<()> {
        for s in &self.steps {
            let mut v = serde_json::to_value(s)?;
            v["kind"] = "step".into();
            writeln!(w, "{v}")?;
        }
        for s in &self.validation {
            let mut v = serde_json::to_value(s)?;
            v["kind"] = "validation".into();
            writeln!(w, "{v}")?;
        }
        Ok(())
    }
}

/// Where training writes checkpoints and its log. `None` keeps everything
/// in memory.
#[derive(Clone, Debug, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LOG_FILE: &str = "train_log.ndjson";

/// Endless stream of training images: each epoch visits every image once
/// in shuffled order. A visit yields the image's nine freshly cut patches,
/// each randomly mirrored.
struct PatchStream<'a> {
    samples: &'a [Sample],
    queue: VecDeque<PatchPair>,
}

impl<'a> PatchStream<'a> {
    /// Next patch; an exhausted epoch is refilled with fresh patches of
    /// every image in shuffled order.
    fn next(&mut self, rng: &mut ChaCha8Rng) -> Result<PatchPair, DataError> {
        if self.queue.is_empty() {
            let mut epoch = Vec::with_capacity(self.samples.len() * PATCHES_PER_IMAGE);
            for s in self.samples {
                epoch.extend(extract_training_patches(&s.image, &s.density, rng)?);
            }
            epoch.shuffle(rng);
            self.queue.extend(epoch);
        }
        let patch = self.queue.pop_front().expect("refilled");
        Ok(random_hflip(patch, rng))
    }
}

/// Deterministic training run. Validation, when given, is evaluated at
/// every checkpoint and at the end.
pub fn train(
    cfg: &TrainConfig,
    train_set: &[Sample],
    validation: &[Sample],
    output: &TrainOutput,
) -> Result<(ModelParams, TrainLog), TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if let Some(dir) = &output.dir {
        std::fs::create_dir_all(dir).map_err(|source| TrainError::Io {
            path: dir.clone(),
            source,
        })?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = build_model(&cfg.model, cfg.seed, &mut rng)?;
    let mut adam = AdamState::new(cfg.lr);
    let mut stream = PatchStream {
        samples: train_set,
        queue: VecDeque::new(),
    };
    let mut log = TrainLog::default();
    let start = Instant::now();

    for step in 1..=cfg.steps {
        let batch = (0..cfg.batch_size)
            .map(|_| stream.next(&mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let images: Vec<&Tensor> = batch.iter().map(|p| &p.image).collect();
        let input = Tensor::stack(&images)?;
        let truth = stack_density(&batch.iter().map(|p| &p.density).collect::<Vec<_>>())?;

        let mut graph = Graph::new();
        let x = graph.constant(input);
        let out = forward(&mut graph, &params, x)?;
        let terms = total_loss(&mut graph, &out, &truth, &cfg.loss)?;
        let breakdown = terms.breakdown(&graph);
        if !breakdown.is_finite() {
            return Err(TrainError::NonFinite { step, breakdown });
        }
        graph.backward(terms.objective(cfg.model.use_refine))?;
        let grads = out.params.grads(&graph);
        adam.step(params.iter_mut().map(|(name, t)| (t, &grads[name])))?;

        log.steps.push(StepRecord {
            step,
            loss: breakdown,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if step % 100 == 0 {
            log::info!("step {step}: total {:.6e}", breakdown.total);
        }

        let last = step == cfg.steps;
        if last || (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            if let Some(dir) = &output.dir {
                let name = if last {
                    FINAL_CHECKPOINT.to_string()
                } else {
                    format!("step_{step:07}.ckpt")
                };
                save_checkpoint(&params, &dir.join(name))?;
            }
            if !validation.is_empty() {
                let report =
                    evaluate_samples(&params, validation.iter().map(|s| Ok(s.clone())).collect());
                if let Some(metrics) = report.metrics {
                    log.validation.push(ValidationRecord { step, metrics });
                }
            }
        }
    }

    if let Some(dir) = &output.dir {
        let path = dir.join(LOG_FILE);
        let file = std::fs::File::create(&path).map_err(|source| TrainError::Io {
            path: path.clone(),
            source,
        })?;
        log.write_ndjson(std::io::BufWriter::new(file))
            .map_err(|source| TrainError::Io { path, source })?;
    }
    Ok((params, log))
}
