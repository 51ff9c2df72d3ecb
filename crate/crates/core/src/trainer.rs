//! Unsupervised training with early stopping on the validation loss.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::{split_luma, WorkingSpace};
use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::image::{load_image, PlanarImage};
use crate::nn::{adam_step, AdamState};
use crate::sci::{
    cascade_forward, cascade_tensor, image_to_tensor, loss_value, save_weights, sci_loss, LossWeights,
    SciWeights, DEFAULT_EPSILON, DEFAULT_HIDDEN, DEFAULT_STAGES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// Fixed at 1; present so the effective configuration records it.
    pub batch_size: usize,
    pub patience: usize,
    pub min_delta: f64,
    /// `[height, width]` every training/validation image is resized to;
    /// `null` trains at native resolution.
    pub resize_to: Option<[usize; 2]>,
    pub stages: usize,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub hidden_channels: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub color_space: WorkingSpace,
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let lw = LossWeights::default();
        Self {
            lr: 3e-4,
            max_epochs: 1000,
            batch_size: 1,
            patience: 50,
            min_delta: 1e-6,
            resize_to: Some([400, 600]),
            stages: DEFAULT_STAGES,
            alpha: lw.alpha,
            beta: lw.beta,
            sigma: lw.sigma,
            hidden_channels: DEFAULT_HIDDEN,
            epsilon: DEFAULT_EPSILON as f64,
            seed: 0,
            color_space: WorkingSpace::Ycbcr,
            checkpoint_dir: None,
            checkpoint_every: 25,
        }
    }
}

impl TrainConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            sigma: self.sigma,
        }
    }

    // Negated comparisons so NaN settings are rejected.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.batch_size != 1 {
            return bad(format!("batch_size is fixed at 1, got {}", self.batch_size));
        }
        if self.stages == 0 {
            return bad("stages must be at least 1".into());
        }
        if self.hidden_channels == 0 {
            return bad("hidden_channels must be at least 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.sigma > 0.0) || self.alpha < 0.0 || self.beta < 0.0 {
            return bad("sigma must be positive and alpha, beta non-negative".into());
        }
        if let Some([h, w]) = self.resize_to {
            if h == 0 || w == 0 {
                return bad("resize_to dimensions must be at least 1".into());
            }
        }
        if self.min_delta < 0.0 {
            return bad("min_delta must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    #[serde(rename = "EARLY_STOP")]
    EarlyStop,
    #[serde(rename = "EPOCH_CAP")]
    EpochCap,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::EarlyStop => "EARLY_STOP",
            StopReason::EpochCap => "EPOCH_CAP",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were returned.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop: StopReason,
    /// Total optimizer updates; equals the number of training images seen.
    pub optimizer_steps: u64,
}

impl TrainHistory {
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for r in &self.epochs {
            s.push_str(&format!("{}\t{:.9}\t{:.9}\n", r.epoch, r.train_loss, r.val_loss));
        }
        s.push_str(&format!("# stop={} best={}\n", self.stop.as_str(), self.best_epoch));
        s
    }
}

/// What the epoch loop drives. The real implementation is [`SciObjective`];
/// tests plug in constructed losses.
pub trait Objective {
    /// One pass over the training images; returns the mean training loss.
    fn train_epoch(&mut self, weights: &mut SciWeights, optimizer: &mut AdamState, epoch: usize) -> Result<f64>;

    /// Mean loss over the validation images without touching `weights`.
    fn validation_loss(&self, weights: &SciWeights) -> Result<f64>;
}

/// Converts an RGB image into the network input: resized, then reduced to
/// its luminance plane (or kept as RGB for the baseline).
pub fn prepare_input(rgb: &PlanarImage, cfg: &TrainConfig) -> Result<PlanarImage> {
    let img = match cfg.resize_to {
        Some([h, w]) => rgb.resize_bilinear(h, w),
        None => rgb.clone(),
    };
    match cfg.color_space.luma() {
        Some(space) => Ok(split_luma(&img, space)?.luma),
        None => Ok(img),
    }
}

/// Forward, loss, backward and one ADAM update on a single prepared input.
pub fn train_step(w: &mut SciWeights, optimizer: &mut AdamState, input: &PlanarImage, cfg: &TrainConfig) -> Result<f64> {
    let trace = cascade_forward(input, w, cfg.stages)?;
    let (loss, grads) = sci_loss(&trace, w, &cfg.loss_weights())?;
    drop(trace);
    let slices = grads.slices();
    adam_step(&mut w.params_mut(), &slices, optimizer, cfg.lr)?;
    Ok(loss)
}

/// Mean forward-only loss over prepared inputs, reduced in input order.
pub fn validate(w: &SciWeights, images: &[PlanarImage], cfg: &TrainConfig) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    let lw = cfg.loss_weights();
    let losses: Vec<Result<f64>> = images
        .par_iter()
        .map(|img| {
            let trace = cascade_tensor(&image_to_tensor(img), w, cfg.stages, false)?;
            Ok(loss_value(&trace, &lw))
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / images.len() as f64)
}

/// Training images streamed from disk each epoch, validation images held in
/// memory.
pub struct SciObjective {
    cfg: TrainConfig,
    train: Vec<PathBuf>,
    val: Vec<PlanarImage>,
    rng: ChaCha8Rng,
}

fn load_prepared(path: &Path, cfg: &TrainConfig) -> Result<PlanarImage> {
    prepare_input(&load_image(path)?, cfg)
}

impl SciObjective {
    pub fn new(cfg: &TrainConfig, train: Vec<PathBuf>, val_paths: &[PathBuf]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptySplit("training"));
        }
        if val_paths.is_empty() {
            return Err(Error::EmptySplit("validation"));
        }
        let mut val = Vec::with_capacity(val_paths.len());
        for p in val_paths {
            match load_prepared(p, cfg) {
                Ok(img) => val.push(img),
                Err(e) => log::warn!("skipping validation image: {e}"),
            }
        }
        if val.is_empty() {
            return Err(Error::AllImagesFailed(val_paths.len()));
        }
        Ok(Self {
            cfg: cfg.clone(),
            train,
            val,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7EA1_0000),
        })
    }

    pub fn validation_inputs(&self) -> &[PlanarImage] {
        &self.val
    }
}

impl Objective for SciObjective {
    fn train_epoch(&mut self, weights: &mut SciWeights, optimizer: &mut AdamState, epoch: usize) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = 0.0;
        let mut seen = 0usize;
        for i in order {
            let path = &self.train[i];
            let input = match load_prepared(path, &self.cfg) {
                Ok(img) => img,
                Err(e) => {
                    log::warn!("epoch {epoch}: skipping training image: {e}");
                    continue;
                }
            };
            sum += train_step(weights, optimizer, &input, &self.cfg)?;
            seen += 1;
        }
        if seen == 0 {
            return Err(Error::AllImagesFailed(self.train.len()));
        }
        Ok(sum / seen as f64)
    }

    fn validation_loss(&self, weights: &SciWeights) -> Result<f64> {
        validate(weights, &self.val, &self.cfg)
    }
}

fn write_checkpoint(dir: &Path, weights: &SciWeights, history: &TrainHistory) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_weights(weights, dir.join("best.sciw"))?;
    let hist = dir.join("history.tsv");
    std::fs::write(&hist, history.to_tsv()).map_err(|e| Error::io(&hist, e))
}

/// The epoch loop: train, validate, keep the best weights, stop after
/// `patience` epochs without an improvement larger than `min_delta` or at
/// `max_epochs`.
pub fn run_epochs<O: Objective>(cfg: &TrainConfig, objective: &mut O, mut weights: SciWeights) -> Result<(SciWeights, TrainHistory)> {
    cfg.validate()?;
    let mut optimizer = AdamState::new();
    let mut best = weights.clone();
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stop: StopReason::EpochCap,
        optimizer_steps: 0,
    };
    let mut stale = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let train_loss = objective.train_epoch(&mut weights, &mut optimizer, epoch)?;
        let steps_before = optimizer.t;
        let val_loss = objective.validation_loss(&weights)?;
        debug_assert_eq!(steps_before, optimizer.t);
        history.epochs.push(EpochRecord { epoch, train_loss, val_loss });
        history.optimizer_steps = optimizer.t;

        if val_loss < history.best_val_loss - cfg.min_delta {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best = weights.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} (best {} @ {})", history.best_val_loss, history.best_epoch);

        let stop = stale >= cfg.patience;
        if stop {
            history.stop = StopReason::EarlyStop;
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            if stop || epoch == cfg.max_epochs || (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
                write_checkpoint(dir, &best, &history)?;
            }
        }
        if stop {
            break;
        }
    }
    Ok((best, history))
}

/// Trains fresh weights on `split.train`, early-stopping on `split.val`.
/// Reference images are never read.
pub fn train(cfg: &TrainConfig, split: &DatasetSplit) -> Result<(SciWeights, TrainHistory)> {
    cfg.validate()?;
    let train: Vec<PathBuf> = split.train.iter().map(|p| p.low.clone()).collect();
    let val: Vec<PathBuf> = split.val.iter().map(|p| p.low.clone()).collect();
    let mut objective = SciObjective::new(cfg, train, &val)?;
    let weights = SciWeights::init(cfg.color_space.in_channels(), cfg.hidden_channels, cfg.epsilon, cfg.seed);
    run_epochs(cfg, &mut objective, weights)
}
