//! Pascal-VOC style matching, precision/recall curves and average recall
//! over the precision range [0.5, 1].

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::detections::{Annotation, Detection, Frame};
use crate::error::{Error, Result};
use crate::geometry::overlap;
use crate::grid::{build_grid, FeatureConfig, FeatureStack};
use crate::net::Network;
use crate::nms::{greedy_nms, score_order};

/// Flags each detection (input order) as a true positive. Detections are
/// visited by descending score; each claims the unmatched annotation it
/// overlaps most, provided that IoU is strictly above `iou_thresh`.
pub fn match_detections(dets: &[Detection], annotations: &[Annotation], iou_thresh: f64) -> Vec<bool> {
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let mut taken = alloc::vec![false; annotations.len()];
    let mut tp = alloc::vec![false; dets.len()];
    for i in score_order(&scores) {
        let mut best: Option<(usize, f64)> = None;
        for (j, a) in annotations.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let v = overlap(&dets[i].bbox, &a.bbox);
            if v > iou_thresh && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            tp[i] = true;
        }
    }
    tp
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredMatch {
    pub score: f64,
    pub true_positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Detections scoring at least this much are counted.
    pub score_threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Operating points at every distinct score, by descending threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub total_annotations: usize,
    pub points: Vec<PrPoint>,
}

pub fn pr_curve(matches: &[ScoredMatch], total_annotations: usize) -> Result<PrCurve> {
    if total_annotations == 0 {
        return Err(Error::NoAnnotations);
    }
    let mut sorted = matches.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, m) in sorted.iter().enumerate() {
        if m.true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_score = sorted.get(i + 1).is_none_or(|n| n.score.total_cmp(&m.score) != Ordering::Equal);
        if last_of_score {
            points.push(PrPoint {
                score_threshold: m.score,
                tp,
                fp,
                fn_: total_annotations.saturating_sub(tp),
                precision: tp as f64 / (tp + fp) as f64,
                recall: tp as f64 / total_annotations as f64,
            });
        }
    }
    Ok(PrCurve {
        total_annotations,
        points,
    })
}

/// Number of points of the uniform precision grid 0.50, 0.51, ..., 1.00.
pub const PRECISION_GRID_POINTS: usize = 51;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArSummary {
    pub ar: f64,
    pub precision_grid: Vec<f64>,
    pub recall_at_precision: Vec<f64>,
}

/// Mean over the precision grid of the best recall reached at that precision
/// or higher (0 when no operating point qualifies).
pub fn average_recall(curve: &PrCurve) -> ArSummary {
    let mut precision_grid = Vec::with_capacity(PRECISION_GRID_POINTS);
    let mut recall_at_precision = Vec::with_capacity(PRECISION_GRID_POINTS);
    for i in 0..PRECISION_GRID_POINTS {
        let percent = 50 + i;
        // precision >= percent / 100, compared exactly on the counts
        let best = curve
            .points
            .iter()
            .filter(|p| p.tp * 100 >= percent * (p.tp + p.fp))
            .map(|p| p.recall)
            .fold(0.0, f64::max);
        precision_grid.push(percent as f64 / 100.0);
        recall_at_precision.push(best);
    }
    let ar = recall_at_precision.iter().sum::<f64>() / PRECISION_GRID_POINTS as f64;
    ArSummary {
        ar,
        precision_grid,
        recall_at_precision,
    }
}

/// How a frame's raw detections are turned into final scored detections.
#[derive(Debug, Clone, Copy)]
pub enum Method<'a> {
    /// Kept set of GreedyNMS at `tau`, original scores.
    Greedy { tau: f64 },
    /// Every occupied grid cell rescored by the network; no post-processing.
    Tnet {
        network: &'a Network<f32>,
        features: &'a FeatureConfig,
    },
}

/// Final detections of `frame` under `method`.
pub fn method_detections(frame: &Frame, method: &Method<'_>) -> Result<Vec<Detection>> {
    match *method {
        Method::Greedy { tau } => {
            let kept = greedy_nms(&frame.detections, tau)?;
            Ok(kept.kept.iter().map(|&i| frame.detections[i]).collect())
        }
        Method::Tnet { network, features } => tnet_detections(network, features, frame),
    }
}

/// Occupied grid cells with the network output as their score.
pub fn tnet_detections(network: &Network<f32>, features: &FeatureConfig, frame: &Frame) -> Result<Vec<Detection>> {
    network.config().check_features(features)?;
    let grid = build_grid(frame, features.cell_size)?;
    let fs = FeatureStack::<f32>::build(&grid, features)?;
    let cells = grid.occupied_cells();
    let (out, _) = network.forward_cells(&fs, &cells)?;
    cells
        .iter()
        .map(|&c| {
            let score = f64::from(out.values[c]);
            if !score.is_finite() {
                return Err(Error::NonFinite {
                    quantity: "network output",
                    value: score,
                    iteration: 0,
                    frame_id: frame.frame_id.clone(),
                });
            }
            let det = grid.cell(c).expect("occupied").detection;
            Ok(Detection::new(det.bbox, score))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub curve: PrCurve,
    pub summary: ArSummary,
}

pub fn evaluate_method(frames: &[Frame], method: &Method<'_>, match_iou: f64) -> Result<Evaluation> {
    let mut matches = Vec::new();
    let mut total = 0;
    for frame in frames {
        let dets = method_detections(frame, method)?;
        let flags = match_detections(&dets, &frame.annotations, match_iou);
        matches.extend(dets.iter().zip(flags).map(|(d, tp)| ScoredMatch {
            score: d.score,
            true_positive: tp,
        }));
        total += frame.annotations.len();
    }
    let curve = pr_curve(&matches, total)?;
    let summary = average_recall(&curve);
    Ok(Evaluation { curve, summary })
}
