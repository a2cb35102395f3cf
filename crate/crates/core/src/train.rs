//! The training loop: one frame per iteration, weighted logistic loss,
//! clipped gradients, Adam.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detections::Frame;
use crate::error::{Error, Result};
use crate::grid::{build_grid, FeatureConfig, FeatureStack};
use crate::labeling::{
    assign_labels, class_weights, relaxed_weights, weighted_logistic_loss, weights_from_counts, ClassCounts,
    WeightingMode,
};
use crate::net::{msra_init, NetConfig, Network, Real};
use crate::optim::{adam_step, clip_gradients, AdamConfig, AdamState};
use crate::rng::{self, stream};
use crate::synth::{generate_frame, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub weighting: WeightingMode,
    /// Weight factor of hard examples; 1 disables the relaxed loss.
    pub relax_factor: f64,
    pub relax_tau: f64,
    pub match_iou: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub iterations: usize,
    pub seed: u64,
    pub log_every: usize,
    /// Emit intermediate checkpoints every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weighting: WeightingMode::PerFrame,
            relax_factor: 1.0,
            relax_tau: 0.3,
            match_iou: 0.5,
            learning_rate: 1e-4,
            weight_decay: 5e-5,
            clip_norm: 1000.0,
            iterations: 20_000,
            seed: 0,
            log_every: 100,
            checkpoint_every: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.relax_factor > 0.0 && self.relax_factor <= 1.0) {
            return Err(Error::config("relax_factor", "must lie in (0, 1]"));
        }
        crate::nms::check_tau(self.relax_tau)?;
        if !(self.match_iou > 0.0 && self.match_iou < 1.0) {
            return Err(Error::config("match_iou", "must lie in (0, 1)"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm", "must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("learning_rate", "learning rate must be positive, weight decay non-negative"));
        }
        Ok(())
    }
}

/// Where training frames come from.
#[derive(Debug, Clone, Copy)]
pub enum FrameSource<'a> {
    /// Uniform sampling from a fixed dataset.
    Dataset(&'a [Frame]),
    /// A newly generated scene every iteration.
    Fresh(&'a SynthConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub frame_id: String,
}

#[derive(Debug)]
pub enum TrainEvent<'a, T> {
    Iteration(&'a IterationRecord),
    Checkpoint {
        iteration: usize,
        network: &'a Network<T>,
        optimizer: &'a AdamState<T>,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainSummary {
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
}

/// MSRA-initialised network; the init stream is derived from the training seed.
pub fn initial_network<T: Real>(config: NetConfig, train: &TrainConfig) -> Result<Network<T>> {
    let mut net = Network::new(config)?;
    msra_init(&mut net, &mut rng::seeded(rng::derive_seed(train.seed, stream::INIT)));
    Ok(net)
}

pub fn new_optimizer<T: Real>(net: &Network<T>, train: &TrainConfig) -> AdamState<T> {
    let sizes: Vec<usize> = net.param_blocks().iter().map(|b| b.len()).collect();
    AdamState::new(train.adam, &sizes)
}

fn non_finite(quantity: &'static str, value: f64, iteration: usize, frame: &Frame) -> Error {
    Error::NonFinite {
        quantity,
        value,
        iteration,
        frame_id: frame.frame_id.clone(),
    }
}

/// Dataset-wide positive / negative counts for global class weighting.
pub fn dataset_counts(frames: &[Frame], features: &FeatureConfig, match_iou: f64) -> Result<ClassCounts> {
    let mut total = ClassCounts::default();
    for f in frames {
        let grid = build_grid(f, features.cell_size)?;
        total = total + ClassCounts::of(&assign_labels(&grid, &f.annotations, match_iou));
    }
    Ok(total)
}

/// Runs `config.iterations` updates of `network` in place. The observer sees
/// every iteration and every intermediate checkpoint; its errors abort training.
pub fn train<T, E, F>(
    network: &mut Network<T>,
    optimizer: &mut AdamState<T>,
    source: FrameSource<'_>,
    features: &FeatureConfig,
    config: &TrainConfig,
    mut observer: F,
) -> core::result::Result<TrainSummary, E>
where
    T: Real,
    E: From<Error>,
    F: FnMut(TrainEvent<'_, T>) -> core::result::Result<(), E>,
{
    config.validate()?;
    features.validate()?;
    network.config().check_features(features)?;
    if let FrameSource::Dataset(frames) = source {
        if frames.is_empty() {
            return Err(Error::config("dataset", "training needs at least one frame").into());
        }
    }
    let global = match (config.weighting, source) {
        (WeightingMode::PerFrame, _) => None,
        (WeightingMode::Global, FrameSource::Dataset(frames)) => Some(dataset_counts(frames, features, config.match_iou)?),
        (WeightingMode::Global, FrameSource::Fresh(_)) => {
            return Err(Error::config("weighting", "global weighting needs a fixed dataset").into())
        }
    };
    let mut sampler = rng::seeded(rng::derive_seed(config.seed, stream::SAMPLING));
    let mut summary = TrainSummary::default();
    let mut fresh;

    for it in 0..config.iterations {
        let iteration = it + 1;
        let frame: &Frame = match source {
            FrameSource::Dataset(frames) => &frames[sampler.random_range(0..frames.len())],
            FrameSource::Fresh(synth) => {
                let seed = rng::derive_seed(rng::derive_seed(synth.seed, stream::FRESH), config.seed);
                fresh = generate_frame(synth, seed, it as u64, "fresh")?;
                &fresh
            }
        };
        let grid = build_grid(frame, features.cell_size)?;
        let fs = FeatureStack::<T>::build(&grid, features)?;
        let labels = assign_labels(&grid, &frame.annotations, config.match_iou);
        let mut weights = match global {
            Some(counts) => weights_from_counts(&labels, counts),
            None => class_weights(&labels),
        };
        if config.relax_factor < 1.0 {
            weights = relaxed_weights(&weights, &labels, &grid, &frame.annotations, config.relax_factor, config.relax_tau);
        }
        let cells = labels.active_cells();
        let (output, cache) = network.forward_cells(&fs, &cells)?;
        let (loss, d_out) = weighted_logistic_loss(&output, &labels, &weights);
        if !loss.is_finite() {
            return Err(non_finite("loss", loss, iteration, frame).into());
        }
        let mut grads = network.backward(&cache, &d_out)?;
        drop(cache);
        let grad_norm = clip_gradients(&mut grads, config.clip_norm);
        if !grad_norm.is_finite() {
            return Err(non_finite("gradient norm", grad_norm, iteration, frame).into());
        }
        adam_step(
            &mut network.param_blocks_mut(),
            &grads.views(),
            optimizer,
            config.learning_rate,
            config.weight_decay,
        )?;
        if !network.all_finite() {
            return Err(non_finite("parameter", f64::NAN, iteration, frame).into());
        }
        summary.losses.push(loss);
        summary.grad_norms.push(grad_norm);
        let record = IterationRecord {
            iteration,
            loss,
            grad_norm,
            frame_id: frame.frame_id.clone(),
        };
        observer(TrainEvent::Iteration(&record))?;
        if config.checkpoint_every > 0 && iteration % config.checkpoint_every == 0 && iteration < config.iterations {
            observer(TrainEvent::Checkpoint {
                iteration,
                network,
                optimizer,
            })?;
        }
    }
    Ok(summary)
}
