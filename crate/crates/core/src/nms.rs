//! Exact GreedyNMS.
//!
//! Detections are visited in descending score order (ties by ascending input
//! index). A detection survives iff its IoU with every previously kept
//! detection is strictly below `tau`; otherwise the first kept detection with
//! IoU >= `tau` suppresses it. At `tau = 1` only identical boxes suppress.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::detections::Detection;
use crate::error::{Error, Result};
use crate::geometry::{overlap, BBox};
use crate::grid::DetectionGrid;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NmsResult {
    /// Kept indices in visiting order (descending score).
    pub kept: Vec<usize>,
    /// Suppressed index -> index of the kept detection that suppressed it.
    pub suppressed_by: BTreeMap<usize, usize>,
}

impl NmsResult {
    pub fn is_kept(&self, index: usize) -> bool {
        !self.suppressed_by.contains_key(&index) && self.kept.contains(&index)
    }

    /// Kept indices in ascending order.
    pub fn kept_sorted(&self) -> Vec<usize> {
        let mut k = self.kept.clone();
        k.sort_unstable();
        k
    }
}

pub fn check_tau(tau: f64) -> Result<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::InvalidThreshold(tau))
    }
}

/// Descending score, ascending index.
pub(crate) fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    order
}

pub fn greedy_nms(dets: &[Detection], tau: f64) -> Result<NmsResult> {
    check_tau(tau)?;
    for d in dets {
        d.validate()?;
    }
    let boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    Ok(greedy_unchecked(&boxes, &scores, tau))
}

/// GreedyNMS over parallel box / score slices that the caller has validated.
pub(crate) fn greedy_unchecked(boxes: &[BBox], scores: &[f64], tau: f64) -> NmsResult {
    debug_assert_eq!(boxes.len(), scores.len());
    let mut result = NmsResult::default();
    for i in score_order(scores) {
        match result
            .kept
            .iter()
            .copied()
            .find(|&k| overlap(&boxes[k], &boxes[i]) >= tau)
        {
            Some(k) => {
                result.suppressed_by.insert(i, k);
            }
            None => result.kept.push(i),
        }
    }
    result
}

/// `S(tau)`: the grid score map after GreedyNMS at `tau`, row-major, with 0
/// on suppressed and empty cells.
pub fn suppressed_score_map(grid: &DetectionGrid, tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let mut map = alloc::vec![0.0; grid.cell_count()];
    let occupied = grid.occupied_cells();
    let (boxes, scores) = grid.boxes_and_scores(&occupied);
    let res = greedy_unchecked(&boxes, &scores, tau);
    for k in res.kept {
        map[occupied[k]] = scores[k];
    }
    Ok(map)
}
