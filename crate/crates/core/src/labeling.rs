//! Training targets: per-cell labels from annotation matching, class
//! balancing weights, the relaxed (hard-example) reweighting, and the
//! weighted logistic loss.

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::detections::Annotation;
use crate::geometry::{overlap, BBox};
use crate::grid::DetectionGrid;
use crate::net::{Real, ScoreMap};
use crate::nms::greedy_unchecked;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
    /// Empty cell; carries no loss.
    Ignore,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
            Label::Ignore => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Label>,
    /// For each annotation, the cell of its positive detection, if any.
    pub matches: Vec<Option<usize>>,
}

impl LabelMap {
    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Cells carrying a loss term.
    pub fn active_cells(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] != Label::Ignore).collect()
    }
}

/// Per-cell loss weights; 0 on ignored cells.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub weights: Vec<f64>,
}

impl WeightMap {
    pub fn mass(&self, labels: &LabelMap, label: Label) -> f64 {
        self.weights
            .iter()
            .zip(&labels.labels)
            .filter(|(_, &l)| l == label)
            .map(|(w, _)| w)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    PerFrame,
    Global,
}

/// Positive / negative cell counts, per frame or summed over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub positives: usize,
    pub negatives: usize,
}

impl ClassCounts {
    pub fn of(labels: &LabelMap) -> Self {
        ClassCounts {
            positives: labels.count(Label::Positive),
            negatives: labels.count(Label::Negative),
        }
    }
}

impl core::ops::Add for ClassCounts {
    type Output = ClassCounts;
    fn add(self, o: ClassCounts) -> ClassCounts {
        ClassCounts {
            positives: self.positives + o.positives,
            negatives: self.negatives + o.negatives,
        }
    }
}

/// Each annotation's positive is the highest scoring occupied cell whose box
/// overlaps it by at least `match_iou` (row-major first on ties). All other
/// occupied cells are negatives; empty cells are ignored.
pub fn assign_labels(grid: &DetectionGrid, annotations: &[Annotation], match_iou: f64) -> LabelMap {
    let mut labels: Vec<Label> = (0..grid.cell_count())
        .map(|c| if grid.is_occupied(c) { Label::Negative } else { Label::Ignore })
        .collect();
    let occupied = grid.occupied_cells();
    let matches = annotations
        .iter()
        .map(|a| {
            let mut best: Option<(usize, f64)> = None;
            for &c in &occupied {
                let d = grid.cell(c).expect("occupied").detection;
                if overlap(&a.bbox, &d.bbox) >= match_iou && best.is_none_or(|(_, s)| d.score > s) {
                    best = Some((c, d.score));
                }
            }
            best.map(|(c, _)| c)
        })
        .collect::<Vec<_>>();
    for &c in matches.iter().flatten() {
        labels[c] = Label::Positive;
    }
    LabelMap {
        width: grid.width,
        height: grid.height,
        labels,
        matches,
    }
}

/// `1 / max(1, count)` per class, 0 on ignored cells.
pub fn weights_from_counts(labels: &LabelMap, counts: ClassCounts) -> WeightMap {
    let pos = 1.0 / counts.positives.max(1) as f64;
    let neg = 1.0 / counts.negatives.max(1) as f64;
    WeightMap {
        weights: labels
            .labels
            .iter()
            .map(|l| match l {
                Label::Positive => pos,
                Label::Negative => neg,
                Label::Ignore => 0.0,
            })
            .collect(),
    }
}

/// Per-frame balancing: each class of the frame carries total weight 1.
pub fn class_weights(labels: &LabelMap) -> WeightMap {
    weights_from_counts(labels, ClassCounts::of(labels))
}

/// Weights for a whole dataset under the given mode. Global mode balances the
/// classes over the summed counts of all frames.
pub fn dataset_class_weights(labels: &[LabelMap], mode: WeightingMode) -> Vec<WeightMap> {
    match mode {
        WeightingMode::PerFrame => labels.iter().map(class_weights).collect(),
        WeightingMode::Global => {
            let total = labels.iter().map(ClassCounts::of).fold(ClassCounts::default(), |a, b| a + b);
            labels.iter().map(|l| weights_from_counts(l, total)).collect()
        }
    }
}

/// Scales by `r` the weight of negatives that survive GreedyNMS at
/// `relax_tau`, and of positives whose annotation is suppressed when GreedyNMS
/// at `relax_tau` runs over the annotation boxes scored with their matched
/// detection scores. Annotations without a match take no part.
pub fn relaxed_weights(
    weights: &WeightMap,
    labels: &LabelMap,
    grid: &DetectionGrid,
    annotations: &[Annotation],
    r: f64,
    relax_tau: f64,
) -> WeightMap {
    let mut out = weights.clone();
    if r == 1.0 {
        return out;
    }
    let mut hard = vec![false; labels.labels.len()];

    let occupied = grid.occupied_cells();
    let (boxes, scores) = grid.boxes_and_scores(&occupied);
    for k in greedy_unchecked(&boxes, &scores, relax_tau).kept {
        let cell = occupied[k];
        if labels.labels[cell] == Label::Negative {
            hard[cell] = true;
        }
    }

    let matched: Vec<(BBox, f64, usize)> = annotations
        .iter()
        .zip(&labels.matches)
        .filter_map(|(a, m)| m.map(|c| (a.bbox, grid.cell(c).expect("matched cell").detection.score, c)))
        .collect();
    let pseudo_boxes: Vec<BBox> = matched.iter().map(|m| m.0).collect();
    let pseudo_scores: Vec<f64> = matched.iter().map(|m| m.1).collect();
    for &s in greedy_unchecked(&pseudo_boxes, &pseudo_scores, relax_tau).suppressed_by.keys() {
        hard[matched[s].2] = true;
    }

    for (w, h) in out.weights.iter_mut().zip(hard) {
        if h {
            *w *= r;
        }
    }
    out
}

/// `softplus(-m) = log(1 + e^{-m})` without overflow.
fn log1p_exp_neg(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// `1 / (1 + e^{m})` without overflow.
fn sigmoid_neg(m: f64) -> f64 {
    if m > 0.0 {
        let e = (-m).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + m.exp())
    }
}

/// Weighted logistic loss normalised by the total weight, and its gradient
/// with respect to every output cell. Zero total weight gives a zero loss.
pub fn weighted_logistic_loss<T: Real>(output: &ScoreMap<T>, labels: &LabelMap, weights: &WeightMap) -> (f64, ScoreMap<T>) {
    assert_eq!(output.values.len(), labels.labels.len(), "output and labels differ in size");
    assert_eq!(weights.weights.len(), labels.labels.len(), "weights and labels differ in size");
    let mut grad = ScoreMap::zeros(output.width, output.height);
    let total: f64 = labels
        .labels
        .iter()
        .zip(&weights.weights)
        .filter(|(l, _)| **l != Label::Ignore)
        .map(|(_, w)| w)
        .sum();
    if total <= 0.0 {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    for (i, (&l, &w)) in labels.labels.iter().zip(&weights.weights).enumerate() {
        if l == Label::Ignore || w == 0.0 {
            continue;
        }
        let y = l.sign();
        let m = y * output.values[i].as_f64();
        loss += w * log1p_exp_neg(m);
        grad.values[i] = T::of(-w * y * sigmoid_neg(m) / total);
    }
    (loss / total, grad)
}
