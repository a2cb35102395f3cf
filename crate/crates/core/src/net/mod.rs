//! The fully-convolutional re-scoring network.
//!
//! Two parallel first-stage convolutions (over the IoU layer and over the
//! score stack), each followed by a ReLU, are concatenated channel-wise (IoU
//! branch first) and fed through 1x1 convolutions. Every layer but the last
//! is rectified; the last emits one channel, the new score of each cell.

mod conv;
mod real;
mod tensor;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use conv::{conv2d_same, ConvLayer};
use conv::{forward_rows, weight_grad_rows, Taps};
pub use real::Real;
pub use tensor::{ScoreMap, Tensor3};

use crate::error::{Error, Result};
use crate::grid::{FeatureConfig, FeatureStack};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub first_filter_size: usize,
    /// Filters of each first-stage branch.
    pub first_filters: usize,
    pub mid_filters: usize,
    /// Number of hidden 1x1 layers before the output layer.
    pub mid_layers: usize,
    pub score_channels: usize,
    /// 0 disables the IoU branch.
    pub iou_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            first_filter_size: 11,
            first_filters: 32,
            mid_filters: 64,
            mid_layers: 2,
            score_channels: 2,
            iou_channels: 121,
        }
    }
}

impl NetConfig {
    /// Input channel counts taken from a feature configuration.
    pub fn for_features(mut self, features: &FeatureConfig) -> Self {
        self.score_channels = features.thresholds.len();
        self.iou_channels = features.iou_channels();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.first_filter_size.is_multiple_of(2) {
            return Err(Error::config("first_filter_size", "must be odd"));
        }
        if self.first_filters == 0 {
            return Err(Error::config("first_filters", "must be positive"));
        }
        if self.mid_layers > 0 && self.mid_filters == 0 {
            return Err(Error::config("mid_filters", "must be positive"));
        }
        if self.score_channels == 0 {
            return Err(Error::config("score_channels", "must be positive"));
        }
        Ok(())
    }

    /// Checks that a feature configuration produces the inputs this network expects.
    pub fn check_features(&self, features: &FeatureConfig) -> Result<()> {
        if features.thresholds.len() != self.score_channels {
            return Err(Error::config(
                "thresholds",
                format!(
                    "{} score maps requested but the network takes {}",
                    features.thresholds.len(),
                    self.score_channels
                ),
            ));
        }
        if features.iou_channels() != self.iou_channels {
            return Err(Error::config(
                "iou_channels",
                format!(
                    "features provide {} IoU channels but the network takes {}",
                    features.iou_channels(),
                    self.iou_channels
                ),
            ));
        }
        Ok(())
    }
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    config: NetConfig,
    branch_iou: Option<ConvLayer<T>>,
    branch_score: ConvLayer<T>,
    /// Hidden 1x1 layers followed by the 1x1 output layer.
    trunk: Vec<ConvLayer<T>>,
    version: u64,
}

/// Activations kept by a forward pass for the matching backward pass.
#[derive(Debug)]
pub struct Cache<'a, T> {
    version: u64,
    features: &'a FeatureStack<T>,
    cells: Vec<usize>,
    iou_taps: Option<Taps>,
    score_taps: Taps,
    /// Input of every trunk layer; entry 0 is the concatenated branch output.
    trunk_inputs: Vec<Vec<T>>,
}

impl<T> Cache<'_, T> {
    /// Cells the forward pass was evaluated at.
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }
}

/// Parameter gradients, one block per parameter tensor in declared order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub blocks: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn global_norm(&self) -> f64 {
        self.blocks
            .iter()
            .flatten()
            .map(|v| {
                let v = v.as_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().flatten().all(|v| v.is_zero())
    }

    pub fn views(&self) -> Vec<&[T]> {
        self.blocks.iter().map(|b| b.as_slice()).collect()
    }
}

fn relu_in_place<T: Real>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

impl<T: Real> Network<T> {
    /// Network with all parameters zero.
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let k = config.first_filter_size;
        let branch_iou = (config.iou_channels > 0).then(|| ConvLayer::zeros(k, config.iou_channels, config.first_filters));
        let branch_score = ConvLayer::zeros(k, config.score_channels, config.first_filters);
        let mut trunk = Vec::with_capacity(config.mid_layers + 1);
        let mut width = config.first_filters * if branch_iou.is_some() { 2 } else { 1 };
        for _ in 0..config.mid_layers {
            trunk.push(ConvLayer::zeros(1, width, config.mid_filters));
            width = config.mid_filters;
        }
        trunk.push(ConvLayer::zeros(1, width, 1));
        Ok(Network {
            config,
            branch_iou,
            branch_score,
            trunk,
            version: next_version(),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Layers in declared order: IoU branch (if any), score branch, trunk.
    pub fn layers(&self) -> Vec<&ConvLayer<T>> {
        let mut v: Vec<&ConvLayer<T>> = self.branch_iou.iter().collect();
        v.push(&self.branch_score);
        v.extend(self.trunk.iter());
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut ConvLayer<T>> {
        self.version = next_version();
        let mut v: Vec<&mut ConvLayer<T>> = self.branch_iou.iter_mut().collect();
        v.push(&mut self.branch_score);
        v.extend(self.trunk.iter_mut());
        v
    }

    pub fn layer_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.branch_iou.is_some() {
            v.push(String::from("branch_iou"));
        }
        v.push(String::from("branch_score"));
        for i in 0..self.trunk.len() - 1 {
            v.push(format!("trunk_{i}"));
        }
        v.push(String::from("output"));
        v
    }

    /// Weights then bias of every layer, in declared order.
    pub fn param_blocks(&self) -> Vec<&[T]> {
        self.layers()
            .into_iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [T]> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            blocks: self.param_blocks().iter().map(|b| vec![T::zero(); b.len()]).collect(),
        }
    }

    /// Evaluates every cell of the grid.
    pub fn forward<'a>(&self, features: &'a FeatureStack<T>) -> Result<(ScoreMap<T>, Cache<'a, T>)> {
        let cells: Vec<usize> = (0..features.score_stack.cells()).collect();
        self.forward_cells(features, &cells)
    }

    /// Evaluates only `cells` (row-major indices); other cells of the returned
    /// map are 0 and carry no meaning.
    pub fn forward_cells<'a>(&self, features: &'a FeatureStack<T>, cells: &[usize]) -> Result<(ScoreMap<T>, Cache<'a, T>)> {
        self.check_input(features)?;
        let (w, h) = (features.width(), features.height());
        if let Some(&bad) = cells.iter().find(|&&c| c >= w * h) {
            return Err(Error::Shape(format!("cell {bad} outside a {w}x{h} grid")));
        }
        let k = self.config.first_filter_size;
        let n = cells.len();

        let mut branch_out: Vec<Vec<T>> = Vec::new();
        let mut iou_taps = None;
        if let (Some(layer), Some(input)) = (&self.branch_iou, &features.iou_layer) {
            let taps = Taps::build(w, h, k, cells, &input.nonzero_cells());
            let mut out = forward_rows(layer, input, &taps, n);
            relu_in_place(&mut out);
            branch_out.push(out);
            iou_taps = Some(taps);
        }
        let score_taps = Taps::build(w, h, k, cells, &features.score_stack.nonzero_cells());
        let mut score_out = forward_rows(&self.branch_score, &features.score_stack, &score_taps, n);
        relu_in_place(&mut score_out);
        branch_out.push(score_out);

        let f = self.config.first_filters;
        let concat = if branch_out.len() == 1 {
            branch_out.pop().unwrap_or_default()
        } else {
            let mut c = Vec::with_capacity(n * 2 * f);
            for row in 0..n {
                for b in &branch_out {
                    c.extend_from_slice(&b[row * f..(row + 1) * f]);
                }
            }
            c
        };

        let mut trunk_inputs = vec![concat];
        let last = self.trunk.len() - 1;
        for (i, layer) in self.trunk.iter().enumerate() {
            let input = &trunk_inputs[i];
            let (cin, cout) = (layer.in_channels, layer.out_channels);
            let mut out = Vec::with_capacity(n * cout);
            for _ in 0..n {
                out.extend_from_slice(&layer.bias);
            }
            T::gemm(n, cin, cout, input, (cin, 1), &layer.weights, (cout, 1), T::one(), &mut out, (cout, 1));
            if i < last {
                relu_in_place(&mut out);
            }
            trunk_inputs.push(out);
        }
        let scores = trunk_inputs.pop().unwrap_or_default();
        let mut map = ScoreMap::zeros(w, h);
        for (&cell, &s) in cells.iter().zip(&scores) {
            map.values[cell] = s;
        }
        Ok((
            map,
            Cache {
                version: self.version,
                features,
                cells: cells.to_vec(),
                iou_taps,
                score_taps,
                trunk_inputs,
            },
        ))
    }

    /// Parameter gradients of a loss whose gradient w.r.t. the output map is
    /// `d_out`. Only the cells evaluated by the forward pass contribute.
    pub fn backward(&self, cache: &Cache<'_, T>, d_out: &ScoreMap<T>) -> Result<Gradients<T>> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        let fs = cache.features;
        if d_out.width != fs.width() || d_out.height != fs.height() {
            return Err(Error::Shape(format!(
                "output gradient is {}x{}, forward pass was {}x{}",
                d_out.width,
                d_out.height,
                fs.width(),
                fs.height()
            )));
        }
        let n = cache.cells.len();
        let mut grads = self.zero_gradients();
        let trunk_base = grads.blocks.len() - 2 * self.trunk.len();

        let mut delta: Vec<T> = cache.cells.iter().map(|&c| d_out.values[c]).collect();
        for (i, layer) in self.trunk.iter().enumerate().rev() {
            let input = &cache.trunk_inputs[i];
            let (cin, cout) = (layer.in_channels, layer.out_channels);
            let gw = trunk_base + 2 * i;
            T::gemm(cin, n, cout, input, (1, cin), &delta, (cout, 1), T::one(), &mut grads.blocks[gw], (cout, 1));
            for row in delta.chunks_exact(cout) {
                for (g, &v) in grads.blocks[gw + 1].iter_mut().zip(row) {
                    *g += v;
                }
            }
            let mut d_in = vec![T::zero(); n * cin];
            T::gemm(n, cout, cin, &delta, (cout, 1), &layer.weights, (1, cout), T::zero(), &mut d_in, (cin, 1));
            // every trunk input is a rectified activation
            for (d, &x) in d_in.iter_mut().zip(input) {
                if x <= T::zero() {
                    *d = T::zero();
                }
            }
            delta = d_in;
        }

        let f = self.config.first_filters;
        let mut block = 0;
        if let (Some(layer), Some(taps), Some(input)) = (&self.branch_iou, &cache.iou_taps, &fs.iou_layer) {
            let d: Vec<T> = delta.chunks_exact(2 * f).flat_map(|r| r[..f].iter().copied()).collect();
            let (gw, gb) = grads.blocks.split_at_mut(block + 1);
            weight_grad_rows(layer, input, taps, &d, &mut gw[block], &mut gb[0]);
            block += 2;
        }
        let d: Vec<T> = if self.branch_iou.is_some() {
            delta.chunks_exact(2 * f).flat_map(|r| r[f..].iter().copied()).collect()
        } else {
            delta
        };
        let (gw, gb) = grads.blocks.split_at_mut(block + 1);
        weight_grad_rows(&self.branch_score, &fs.score_stack, &cache.score_taps, &d, &mut gw[block], &mut gb[0]);
        Ok(grads)
    }

    fn check_input(&self, fs: &FeatureStack<T>) -> Result<()> {
        if fs.score_stack.channels != self.config.score_channels {
            return Err(Error::Shape(format!(
                "score stack has {} channels, network expects {}",
                fs.score_stack.channels, self.config.score_channels
            )));
        }
        match (&fs.iou_layer, self.config.iou_channels) {
            (None, 0) => {}
            (Some(t), c) if t.channels == c => {
                if (t.width, t.height) != (fs.width(), fs.height()) {
                    return Err(Error::Shape(String::from("IoU layer and score stack differ in size")));
                }
            }
            (layer, c) => {
                return Err(Error::Shape(format!(
                    "IoU layer has {} channels, network expects {c}",
                    layer.as_ref().map_or(0, |t| t.channels)
                )))
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.param_blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// He / MSRA initialisation: weights ~ N(0, 2 / fan_in), biases 0.
pub fn msra_init<T: Real, R: Rng + ?Sized>(net: &mut Network<T>, rng: &mut R) {
    for layer in net.layers_mut() {
        let std = (2.0 / layer.fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite standard deviation");
        for w in layer.weights.iter_mut() {
            *w = T::of(normal.sample(rng));
        }
        layer.bias.iter_mut().for_each(|b| *b = T::zero());
    }
}
