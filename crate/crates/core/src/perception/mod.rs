//! The perception contract.
//!
//! The tracker never talks to a model directly. Everything it needs from
//! the outside world (detections, box regression, box-prompted segmentation
//! and optical flow) comes through [`Perception`]. Two implementations ship
//! with the crate: [`FileProvider`], which replays recorded model outputs,
//! and the synthetic oracle in [`crate::simulator`].

mod file;
mod recorder;

pub use file::{format_frame_pattern, FileProvider, Manifest};
pub use recorder::Recorder;

use serde::{Deserialize, Serialize};

use crate::detection::Detection;
use crate::error::Result;
use crate::flow::FlowField;
use crate::geometry::BBox;
use crate::mask::BinaryMask;

/// One candidate segmentation for a box prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskHypothesis {
    /// Mask at the prompted frame.
    pub mask: BinaryMask,
    /// The same hypothesis segmented back onto the previous frame, when the
    /// provider can produce it.
    pub backprojection: Option<BinaryMask>,
    pub quality: f64,
}

/// Output of box regression.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedBox {
    pub bbox: BBox,
    pub objectness: f64,
    /// Appearance embedding of the detection the box was grounded on.
    pub feature: Option<Vec<f64>>,
    /// Whether the query was grounded on a detection at all.
    pub snapped: bool,
}

/// Knobs shared by the replaying providers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderSettings {
    /// Minimum box IoU for a query to snap onto a detection.
    pub snap_iou: f64,
    /// Objectness multiplier for queries that do not snap.
    pub decay: f64,
    /// Pixels added around a prompt box before clipping masks to it.
    pub segment_margin: f64,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        ProviderSettings {
            snap_iou: 0.5,
            decay: 0.8,
            segment_margin: 0.0,
        }
    }
}

/// Perception capabilities the tracker consumes. Implementations must be
/// deterministic: the same query always yields the same answer.
pub trait Perception: Sync {
    fn frame_count(&self) -> usize;

    /// `(width, height)` of every frame.
    fn dims(&self) -> (u32, u32);

    /// Detections at frame `t`. `prompts` names user-requested categories a
    /// detector may add to its vocabulary; the tracker does its own
    /// filtering.
    fn detect(&self, t: usize, prompts: &[String]) -> Result<Vec<Detection>>;

    /// Box regression at frame `t`. `prev_objectness` is the track's last
    /// score, used by providers that decay ungrounded boxes.
    fn refine(&self, t: usize, query: &BBox, prev_objectness: f64) -> Result<RefinedBox>;

    /// Mask hypotheses at `t_next` for a prompt box; backprojections, when
    /// present, live on frame `t_prev`.
    fn segment(&self, t_next: usize, prompt: &BBox, t_prev: usize) -> Result<Vec<MaskHypothesis>>;

    /// Flow from frame `t` to `t + 1`.
    fn flow_fwd(&self, t: usize) -> Result<&FlowField>;

    /// Flow from frame `t + 1` back to `t`.
    fn flow_bwd(&self, t: usize) -> Result<&FlowField>;
}

/// Snap-to-nearest-detection box regression.
///
/// The query snaps onto the detection with the highest box IoU (first one on
/// ties) when that IoU reaches `settings.snap_iou`; otherwise the clipped
/// query comes back with a decayed score.
pub fn snap_to_detections(
    detections: &[Detection],
    query: &BBox,
    prev_objectness: f64,
    settings: &ProviderSettings,
    dims: (u32, u32),
) -> RefinedBox {
    let best = best_box_match(detections.iter().map(|d| &d.bbox), query);
    match best {
        Some((i, iou)) if iou >= settings.snap_iou => {
            let d = &detections[i];
            RefinedBox {
                bbox: d.bbox,
                objectness: d.objectness,
                feature: d.feature.clone(),
                snapped: true,
            }
        }
        _ => RefinedBox {
            bbox: query.clip(dims.0, dims.1),
            objectness: (settings.decay * prev_objectness).clamp(0.0, 1.0),
            feature: None,
            snapped: false,
        },
    }
}

/// Fallback segmentation: the mask of the best-overlapping detection,
/// clipped to the (margin-dilated) prompt box.
pub fn clip_best_detection(
    detections: &[Detection],
    prompt: &BBox,
    settings: &ProviderSettings,
) -> Vec<MaskHypothesis> {
    match best_box_match(detections.iter().map(|d| &d.bbox), prompt) {
        Some((i, iou)) if iou > 0.0 => {
            let d = &detections[i];
            let mask = d.mask.clip_to_box(&prompt.dilate(settings.segment_margin));
            if mask.is_empty() {
                vec![]
            } else {
                vec![MaskHypothesis {
                    mask,
                    backprojection: None,
                    quality: d.objectness,
                }]
            }
        }
        _ => vec![],
    }
}

/// Index and IoU of the box overlapping `query` most; ties go to the lower
/// index.
pub fn best_box_match<'a>(
    boxes: impl Iterator<Item = &'a BBox>,
    query: &BBox,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, b) in boxes.enumerate() {
        let iou = b.iou(query);
        if best.is_none_or(|(_, v)| iou > v) {
            best = Some((i, iou));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(b: [f64; 4], score: f64) -> Detection {
        let bbox = BBox::from(b);
        Detection {
            bbox,
            objectness: score,
            label: "thing".into(),
            mask: BinaryMask::from_box(40, 40, &bbox),
            feature: Some(vec![score, 1.0]),
        }
    }

    #[test]
    fn snaps_to_the_better_of_two() {
        let dets = vec![det([0.0, 0.0, 10.0, 10.0], 0.9), det([12.0, 0.0, 22.0, 10.0], 0.7)];
        // overlaps the first by 8 columns and the second by none
        let q = BBox::from([2.0, 0.0, 12.0, 10.0]);
        let ious: Vec<_> = dets.iter().map(|d| d.bbox.iou(&q)).collect();
        let r = snap_to_detections(&dets, &q, 1.0, &ProviderSettings::default(), (40, 40));
        assert!(ious[0] > ious[1]);
        assert!(r.snapped);
        assert_eq!(r.bbox, dets[0].bbox);
        assert_eq!(r.objectness, 0.9);
        assert!(r.bbox.iou(&dets[0].bbox) >= q.iou(&dets[0].bbox));
    }

    #[test]
    fn unsnapped_queries_decay() {
        let dets = vec![det([0.0, 0.0, 5.0, 5.0], 0.9)];
        let q = BBox::from([20.0, 20.0, 30.0, 30.0]);
        let r = snap_to_detections(&dets, &q, 0.5, &ProviderSettings::default(), (40, 40));
        assert!(!r.snapped);
        assert_eq!(r.bbox, q);
        assert!((r.objectness - 0.4).abs() < 1e-15);
        let none = snap_to_detections(&[], &q, 0.0, &ProviderSettings::default(), (40, 40));
        assert_eq!(none.objectness, 0.0);
    }

    #[test]
    fn fallback_clips_to_prompt() {
        let dets = vec![det([4.0, 4.0, 14.0, 14.0], 0.9)];
        let prompt = BBox::from([0.0, 0.0, 9.0, 20.0]);
        let hyps = clip_best_detection(&dets, &prompt, &ProviderSettings::default());
        assert_eq!(hyps.len(), 1);
        assert_eq!(hyps[0].mask.area(), 5 * 10);
        assert!(hyps[0].backprojection.is_none());
        let far = BBox::from([30.0, 30.0, 35.0, 35.0]);
        assert!(clip_best_detection(&dets, &far, &ProviderSettings::default()).is_empty());
    }
}
