//! Per-frame containers for ground truth and scored detections.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(flatten)]
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64) -> Self {
        Detection { bbox, score }
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !self.score.is_finite() {
            return Err(Error::InvalidScore(self.score));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(flatten)]
    pub bbox: BBox,
    pub object_id: u32,
}

/// One image worth of annotations and detections. Pixels are never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: String,
    pub width: u32,
    pub height: u32,
    pub annotations: Vec<Annotation>,
    pub detections: Vec<Detection>,
}

impl Frame {
    pub fn new(frame_id: impl Into<String>, width: u32, height: u32) -> Self {
        Frame {
            frame_id: frame_id.into(),
            width,
            height,
            annotations: Vec::new(),
            detections: Vec::new(),
        }
    }

    /// Checks box validity, score finiteness and distinct object ids.
    pub fn validate(&self) -> Result<()> {
        for d in &self.detections {
            d.validate()?;
        }
        for (i, a) in self.annotations.iter().enumerate() {
            a.bbox.validate()?;
            if self.annotations[..i].iter().any(|b| b.object_id == a.object_id) {
                return Err(Error::config(
                    "annotations",
                    alloc::format!("duplicate object_id {} in frame {}", a.object_id, self.frame_id),
                ));
            }
        }
        Ok(())
    }

    pub fn annotation_boxes(&self) -> Vec<BBox> {
        self.annotations.iter().map(|a| a.bbox).collect()
    }
}
