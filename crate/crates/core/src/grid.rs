//! The detection grid and the network input layers built on it.

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::detections::{Detection, Frame};
use crate::error::{Error, Result};
use crate::geometry::{overlap, BBox};
use crate::net::{Real, Tensor3};
use crate::nms;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub detection: Detection,
    /// Index of the detection in the source frame.
    pub source_index: usize,
}

/// Row-major `width x height` lattice of cells, each holding at most one
/// detection: the highest scoring one whose centre fell inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionGrid {
    pub cell_size: u32,
    pub width: usize,
    pub height: usize,
    cells: Vec<Option<GridCell>>,
}

impl DetectionGrid {
    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn cell(&self, index: usize) -> Option<&GridCell> {
        self.cells[index].as_ref()
    }

    pub fn cell_at(&self, x: usize, y: usize) -> Option<&GridCell> {
        self.cell(y * self.width + x)
    }

    pub fn is_occupied(&self, index: usize) -> bool {
        self.cells[index].is_some()
    }

    /// Occupied cell indices in row-major order.
    pub fn occupied_cells(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&i| self.cells[i].is_some()).collect()
    }

    /// Detections of the occupied cells, row-major.
    pub fn detections(&self) -> Vec<Detection> {
        self.cells.iter().flatten().map(|c| c.detection).collect()
    }

    pub(crate) fn boxes_and_scores(&self, cells: &[usize]) -> (Vec<BBox>, Vec<f64>) {
        cells
            .iter()
            .map(|&c| {
                let d = self.cells[c].as_ref().expect("occupied cell").detection;
                (d.bbox, d.score)
            })
            .unzip()
    }

    /// Raw grid score map, 0 on empty cells.
    pub fn score_map(&self) -> Vec<f64> {
        self.cells
            .iter()
            .map(|c| c.map_or(0.0, |c| c.detection.score))
            .collect()
    }
}

pub fn build_grid(frame: &Frame, cell_size: u32) -> Result<DetectionGrid> {
    if cell_size == 0 {
        return Err(Error::config("cell_size", "must be at least 1"));
    }
    if frame.width == 0 || frame.height == 0 {
        return Err(Error::Shape(alloc::format!(
            "frame {} has empty extent {}x{}",
            frame.frame_id, frame.width, frame.height
        )));
    }
    let width = frame.width.div_ceil(cell_size) as usize;
    let height = frame.height.div_ceil(cell_size) as usize;
    let cs = f64::from(cell_size);
    let mut cells: Vec<Option<GridCell>> = vec![None; width * height];
    for (i, d) in frame.detections.iter().enumerate() {
        d.validate()?;
        let (cx, cy) = d.bbox.center();
        // centres on the far border belong to the last cell
        let gx = ((cx / cs).floor().max(0.0) as usize).min(width - 1);
        let gy = ((cy / cs).floor().max(0.0) as usize).min(height - 1);
        let slot = &mut cells[gy * width + gx];
        let replace = match slot {
            None => true,
            Some(existing) => d.score > existing.detection.score,
        };
        if replace {
            *slot = Some(GridCell {
                detection: *d,
                source_index: i,
            });
        }
    }
    Ok(DetectionGrid {
        cell_size,
        width,
        height,
        cells,
    })
}

/// Channel of offset `(dx, dy)` in a `neighborhood x neighborhood` IoU layer.
pub fn offset_channel(dx: isize, dy: isize, neighborhood: usize) -> usize {
    let k = (neighborhood / 2) as isize;
    ((dy + k) as usize) * neighborhood + (dx + k) as usize
}

/// IoU between each occupied cell's box and the boxes of its neighbours.
/// Channel `c = (dy + k) * n + (dx + k)`; 0 wherever either cell is empty or
/// the neighbour is out of bounds. The centre channel is 1 on occupied cells.
pub fn build_iou_layer<T: Real>(grid: &DetectionGrid, neighborhood: usize) -> Result<Tensor3<T>> {
    if neighborhood.is_multiple_of(2) {
        return Err(Error::config("neighborhood", "must be odd"));
    }
    let k = (neighborhood / 2) as isize;
    let channels = neighborhood * neighborhood;
    let mut out = Tensor3::zeros(grid.width, grid.height, channels);
    let (w, h) = (grid.width as isize, grid.height as isize);
    for y in 0..h {
        for x in 0..w {
            let Some(cell) = grid.cells[(y * w + x) as usize].as_ref() else {
                continue;
            };
            let row = out.cell_mut(x as usize, y as usize);
            for dy in -k..=k {
                let ny = y + dy;
                if ny < 0 || ny >= h {
                    continue;
                }
                for dx in -k..=k {
                    let nx = x + dx;
                    if nx < 0 || nx >= w {
                        continue;
                    }
                    if let Some(other) = grid.cells[(ny * w + nx) as usize].as_ref() {
                        let v = if dx == 0 && dy == 0 {
                            1.0
                        } else {
                            overlap(&cell.detection.bbox, &other.detection.bbox)
                        };
                        row[offset_channel(dx, dy, neighborhood)] = T::of(v);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Channel `i` is `S(thresholds[i])`; the first threshold must be 1.
pub fn build_score_stack<T: Real>(grid: &DetectionGrid, thresholds: &[f64]) -> Result<Tensor3<T>> {
    match thresholds.first() {
        None => return Err(Error::config("thresholds", "at least one threshold is required")),
        Some(&t) if t != 1.0 => {
            return Err(Error::config("thresholds", "the first score channel must be S(1)"))
        }
        _ => {}
    }
    let mut out = Tensor3::zeros(grid.width, grid.height, thresholds.len());
    for (ch, &tau) in thresholds.iter().enumerate() {
        let map = nms::suppressed_score_map(grid, tau)?;
        for (cell, v) in map.into_iter().enumerate() {
            out.data[cell * thresholds.len() + ch] = T::of(v);
        }
    }
    Ok(out)
}

/// How frames are turned into network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub cell_size: u32,
    pub neighborhood: usize,
    /// Whether the IoU layer is fed to the network at all.
    pub use_iou: bool,
    /// GreedyNMS thresholds of the stacked score maps, `S(1)` first.
    pub thresholds: Vec<f64>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            cell_size: 4,
            neighborhood: 11,
            use_iou: true,
            thresholds: vec![1.0, 0.3],
        }
    }
}

impl FeatureConfig {
    pub fn iou_channels(&self) -> usize {
        if self.use_iou {
            self.neighborhood * self.neighborhood
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cell_size == 0 {
            return Err(Error::config("cell_size", "must be at least 1"));
        }
        if self.neighborhood.is_multiple_of(2) {
            return Err(Error::config("neighborhood", "must be odd"));
        }
        if self.thresholds.first() != Some(&1.0) {
            return Err(Error::config("thresholds", "the first score channel must be S(1)"));
        }
        for &t in &self.thresholds {
            nms::check_tau(t)?;
        }
        Ok(())
    }
}

/// Network input for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack<T> {
    /// `None` when the configuration disables the IoU layer.
    pub iou_layer: Option<Tensor3<T>>,
    pub score_stack: Tensor3<T>,
    pub thresholds: Vec<f64>,
}

impl<T: Real> FeatureStack<T> {
    pub fn build(grid: &DetectionGrid, config: &FeatureConfig) -> Result<Self> {
        config.validate()?;
        let iou_layer = if config.use_iou {
            Some(build_iou_layer(grid, config.neighborhood)?)
        } else {
            None
        };
        Ok(FeatureStack {
            iou_layer,
            score_stack: build_score_stack(grid, &config.thresholds)?,
            thresholds: config.thresholds.clone(),
        })
    }

    pub fn width(&self) -> usize {
        self.score_stack.width
    }

    pub fn height(&self) -> usize {
        self.score_stack.height
    }
}
