use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::mask::BinaryMask;

/// One detector output: box, instance mask, objectness, open-vocabulary
/// label and an optional appearance embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub objectness: f64,
    pub label: String,
    pub mask: BinaryMask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
}

impl Detection {
    /// Checks the score range and that the mask is nonempty and sized to
    /// the frame.
    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        if !(0.0..=1.0).contains(&self.objectness) {
            return Err(Error::Config(format!(
                "objectness {} outside [0, 1]",
                self.objectness
            )));
        }
        if !self.bbox.is_valid() {
            let b = self.bbox;
            return Err(Error::InvalidBox {
                x0: b.x0,
                y0: b.y0,
                x1: b.x1,
                y1: b.y1,
            });
        }
        crate::mask::check_dims((width, height), self.mask.dims())?;
        if self.mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        if let Some(f) = &self.feature {
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("non-finite feature value".into()));
            }
        }
        Ok(())
    }
}

/// All instance masks of one frame, keyed by track id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameMasks {
    pub frame: usize,
    pub entries: BTreeMap<u64, BinaryMask>,
}

/// Scales `v` to unit Euclidean norm; `None` for zero or non-finite input.
pub fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        Some(v.iter().map(|x| x / norm).collect())
    } else {
        None
    }
}
