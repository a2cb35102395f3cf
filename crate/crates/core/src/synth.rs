//! Controlled-setup scene generator.
//!
//! A scene holds one object, or with probability `pair_prob` two objects
//! whose boxes overlap with an IoU inside `pair_iou_range`. Image content is
//! never rendered: each object instead drops a rotated anisotropic Gaussian
//! bump of random height onto a lattice-sampled score field, the field gets
//! additive Gaussian noise, and every lattice point with a positive score
//! emits one detection box.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_6;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detections::{Annotation, Detection, Frame};
use crate::error::{Error, Result};
use crate::geometry::{overlap, BBox};
use crate::rng::{self, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub canvas_width: u32,
    pub canvas_height: u32,
    /// Nominal object box `[w, h]` in pixels.
    pub nominal_box: [f64; 2],
    /// Relative jitter of object box sides (uniform, +-).
    pub box_size_jitter: f64,
    /// Minimum distance between object boxes and the canvas border.
    pub placement_margin: f64,
    pub pair_prob: f64,
    pub pair_iou_range: [f64; 2],
    pub bump_magnitude_range: [f64; 2],
    /// Bump standard deviations as a fraction of the nominal box side.
    pub bump_sigma_range: [f64; 2],
    /// Radians.
    pub bump_rotation_range: [f64; 2],
    /// Maximum offset of a bump centre from its object centre, per axis.
    pub center_jitter: f64,
    pub noise_sigma: f64,
    /// Relative jitter of detection box sides (uniform, +-).
    pub detection_size_jitter: f64,
    /// Spacing of detector sample points in pixels.
    pub lattice_stride: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            canvas_width: 128,
            canvas_height: 128,
            nominal_box: [28.0, 28.0],
            box_size_jitter: 0.2,
            placement_margin: 2.0,
            pair_prob: 0.8,
            pair_iou_range: [0.2, 0.6],
            bump_magnitude_range: [1.0, 9.0],
            bump_sigma_range: [0.15, 0.35],
            bump_rotation_range: [-FRAC_PI_6, FRAC_PI_6],
            center_jitter: 2.0,
            noise_sigma: 0.1,
            detection_size_jitter: 0.1,
            lattice_stride: 4.0,
            seed: 0,
        }
    }
}

fn ordered(field: &'static str, r: [f64; 2]) -> Result<()> {
    if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
        Ok(())
    } else {
        Err(Error::config(field, format!("range [{}, {}] is not ordered", r[0], r[1])))
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        ordered("pair_iou_range", self.pair_iou_range)?;
        ordered("bump_magnitude_range", self.bump_magnitude_range)?;
        ordered("bump_sigma_range", self.bump_sigma_range)?;
        ordered("bump_rotation_range", self.bump_rotation_range)?;
        if !(self.pair_iou_range[0] > 0.0 && self.pair_iou_range[1] < 1.0) {
            return Err(Error::config("pair_iou_range", "must lie inside (0, 1)"));
        }
        if self.bump_magnitude_range[0] <= 0.0 {
            return Err(Error::config("bump_magnitude_range", "must be positive"));
        }
        if self.bump_sigma_range[0] <= 0.0 {
            return Err(Error::config("bump_sigma_range", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.pair_prob) {
            return Err(Error::config("pair_prob", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.box_size_jitter) || !(0.0..1.0).contains(&self.detection_size_jitter) {
            return Err(Error::config("size_jitter", "must lie in [0, 1)"));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::config("noise_sigma", "must be finite and non-negative"));
        }
        if self.center_jitter < 0.0 {
            return Err(Error::config("center_jitter", "must be non-negative"));
        }
        if !(self.lattice_stride > 0.0) {
            return Err(Error::config("lattice_stride", "must be positive"));
        }
        let max_w = self.nominal_box[0] * (1.0 + self.box_size_jitter) + 2.0 * self.placement_margin;
        let max_h = self.nominal_box[1] * (1.0 + self.box_size_jitter) + 2.0 * self.placement_margin;
        if !(self.nominal_box[0] > 0.0 && self.nominal_box[1] > 0.0)
            || max_w >= f64::from(self.canvas_width)
            || max_h >= f64::from(self.canvas_height)
        {
            return Err(Error::config("nominal_box", "boxes do not fit on the canvas"));
        }
        Ok(())
    }

    fn canvas(&self) -> (f64, f64) {
        (f64::from(self.canvas_width), f64::from(self.canvas_height))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Seed of this split's frame streams; distinct per split.
    pub fn seed(self, dataset_seed: u64) -> u64 {
        let tag = match self {
            Split::Train => stream::TRAIN_SPLIT,
            Split::Val => stream::VAL_SPLIT,
            Split::Test => stream::TEST_SPLIT,
        };
        rng::derive_seed(dataset_seed, tag)
    }
}

fn jittered<R: Rng + ?Sized>(rng: &mut R, nominal: f64, jitter: f64) -> f64 {
    if jitter == 0.0 {
        nominal
    } else {
        nominal * rng.random_range(1.0 - jitter..=1.0 + jitter)
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

fn place_box<R: Rng + ?Sized>(rng: &mut R, cfg: &SynthConfig) -> BBox {
    let (cw, ch) = cfg.canvas();
    let w = jittered(rng, cfg.nominal_box[0], cfg.box_size_jitter);
    let h = jittered(rng, cfg.nominal_box[1], cfg.box_size_jitter);
    let m = cfg.placement_margin;
    let x = rng.random_range(m..=cw - m - w);
    let y = rng.random_range(m..=ch - m - h);
    BBox { x, y, w, h }
}

fn inside(b: &BBox, cfg: &SynthConfig) -> bool {
    let (cw, ch) = cfg.canvas();
    let m = cfg.placement_margin;
    b.x >= m && b.y >= m && b.right() <= cw - m && b.bottom() <= ch - m
}

const PAIR_ATTEMPTS: usize = 1000;
const PAIR_ROUNDS: usize = 100;

/// Ground truth of one scene; detections are left empty.
pub fn sample_scene<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R, frame_id: impl Into<String>) -> Result<Frame> {
    cfg.validate()?;
    let mut frame = Frame::new(frame_id, cfg.canvas_width, cfg.canvas_height);
    let pair = rng.random_bool(cfg.pair_prob);
    for _ in 0..PAIR_ROUNDS {
        let first = place_box(rng, cfg);
        if !pair {
            frame.annotations.push(Annotation { bbox: first, object_id: 0 });
            return Ok(frame);
        }
        let w = jittered(rng, cfg.nominal_box[0], cfg.box_size_jitter);
        let h = jittered(rng, cfg.nominal_box[1], cfg.box_size_jitter);
        let reach_x = 0.75 * (first.w + w);
        let reach_y = 0.75 * (first.h + h);
        let (cx, cy) = first.center();
        for _ in 0..PAIR_ATTEMPTS {
            let dx = rng.random_range(-reach_x..=reach_x);
            let dy = rng.random_range(-reach_y..=reach_y);
            let second = BBox {
                x: cx + dx - 0.5 * w,
                y: cy + dy - 0.5 * h,
                w,
                h,
            };
            let v = overlap(&first, &second);
            if inside(&second, cfg) && v >= cfg.pair_iou_range[0] && v <= cfg.pair_iou_range[1] {
                frame.annotations.push(Annotation { bbox: first, object_id: 0 });
                frame.annotations.push(Annotation { bbox: second, object_id: 1 });
                return Ok(frame);
            }
        }
    }
    Err(Error::config(
        "pair_iou_range",
        "could not place an overlapping pair; the range is unreachable for this box size",
    ))
}

/// Rotated anisotropic Gaussian score bump of one object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub cx: f64,
    pub cy: f64,
    pub magnitude: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rotation: f64,
}

impl Bump {
    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.rotation.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        self.magnitude * (-0.5 * (u * u / (self.sigma_x * self.sigma_x) + v * v / (self.sigma_y * self.sigma_y))).exp()
    }
}

/// One bump per annotation, in annotation order.
pub fn sample_bumps<R: Rng + ?Sized>(frame: &Frame, cfg: &SynthConfig, rng: &mut R) -> Vec<Bump> {
    frame
        .annotations
        .iter()
        .map(|a| {
            let (cx, cy) = a.bbox.center();
            let j = cfg.center_jitter;
            let (jx, jy) = if j > 0.0 {
                (rng.random_range(-j..=j), rng.random_range(-j..=j))
            } else {
                (0.0, 0.0)
            };
            Bump {
                cx: cx + jx,
                cy: cy + jy,
                magnitude: uniform(rng, cfg.bump_magnitude_range),
                sigma_x: uniform(rng, cfg.bump_sigma_range) * cfg.nominal_box[0],
                sigma_y: uniform(rng, cfg.bump_sigma_range) * cfg.nominal_box[1],
                rotation: uniform(rng, cfg.bump_rotation_range),
            }
        })
        .collect()
}

/// Lattice sample points, row-major, inside the canvas.
pub fn lattice_points(cfg: &SynthConfig) -> Vec<(f64, f64)> {
    let (cw, ch) = cfg.canvas();
    let s = cfg.lattice_stride;
    let mut pts = Vec::new();
    let mut y = 0.5 * s;
    while y < ch {
        let mut x = 0.5 * s;
        while x < cw {
            pts.push((x, y));
            x += s;
        }
        y += s;
    }
    pts
}

/// Noise-free score field on the lattice.
pub fn clean_field(bumps: &[Bump], cfg: &SynthConfig) -> Vec<f64> {
    lattice_points(cfg)
        .into_iter()
        .map(|(x, y)| bumps.iter().map(|b| b.value_at(x, y)).sum())
        .collect()
}

/// Adds detections drawn from the given bumps to `frame`.
pub fn render_with_bumps<R: Rng + ?Sized>(mut frame: Frame, bumps: &[Bump], cfg: &SynthConfig, rng: &mut R) -> Frame {
    let (cw, ch) = cfg.canvas();
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).expect("valid sigma"));
    let far = cfg.nominal_box[0].max(cfg.nominal_box[1]);
    frame.detections.clear();
    for (x, y) in lattice_points(cfg) {
        let mut v: f64 = bumps.iter().map(|b| b.value_at(x, y)).sum();
        if let Some(n) = &noise {
            v += n.sample(rng);
        }
        if v <= 0.0 {
            continue;
        }
        let nearest = frame
            .annotations
            .iter()
            .map(|a| {
                let (ax, ay) = a.bbox.center();
                ((ax - x).powi(2) + (ay - y).powi(2), a)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let (w, h) = match nearest {
            Some((d2, a)) if d2.sqrt() <= far => (a.bbox.w, a.bbox.h),
            _ => (cfg.nominal_box[0], cfg.nominal_box[1]),
        };
        // shrink symmetrically at the border so the box stays centred on its sample point
        let w = jittered(rng, w, cfg.detection_size_jitter).min(2.0 * x).min(2.0 * (cw - x));
        let h = jittered(rng, h, cfg.detection_size_jitter).min(2.0 * y).min(2.0 * (ch - y));
        frame.detections.push(Detection::new(BBox::centered(x, y, w, h).expect("sample point lies inside the canvas"), v));
    }
    frame
}

/// Fills the detections of a frame holding annotations.
pub fn render_detector<R: Rng + ?Sized>(frame: Frame, cfg: &SynthConfig, rng: &mut R) -> Frame {
    let bumps = sample_bumps(&frame, cfg, rng);
    render_with_bumps(frame, &bumps, cfg, rng)
}

/// Frame `index` of the stream keyed by `stream_seed`; independent of every
/// other index, so frames can be produced in any order.
pub fn generate_frame(cfg: &SynthConfig, stream_seed: u64, index: u64, prefix: &str) -> Result<Frame> {
    let mut rng = rng::indexed(stream_seed, index);
    let scene = sample_scene(cfg, &mut rng, format!("{prefix}-{index:06}"))?;
    Ok(render_detector(scene, cfg, &mut rng))
}

pub fn generate_split(cfg: &SynthConfig, split: Split, count: usize) -> Result<Vec<Frame>> {
    let seed = split.seed(cfg.seed);
    (0..count as u64).map(|i| generate_frame(cfg, seed, i, split.name())).collect()
}
