use serde::{Deserialize, Serialize};

use super::NoiseSpec;
use crate::error::{Error, Result};
use crate::motion::MotionTransform;
use crate::perception::ProviderSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rectangle,
    Ellipse,
}

/// Motion applied from frame `start` onward until the next segment: the
/// center moves by `velocity` per frame and the size scales by `scale`
/// per frame, about the center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSegment {
    #[serde(default)]
    pub start: usize,
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(default = "unit_scale")]
    pub scale: [f64; 2],
}

fn unit_scale() -> [f64; 2] {
    [1.0, 1.0]
}

impl Default for MotionSegment {
    fn default() -> Self {
        MotionSegment {
            start: 0,
            velocity: [0.0, 0.0],
            scale: unit_scale(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub label: String,
    pub shape: Shape,
    /// Full width and height at frame 0.
    pub size: [f64; 2],
    /// Center at frame 0 (objects keep moving while absent).
    pub center: [f64; 2],
    /// Larger depth is nearer the camera and occludes smaller depths.
    pub depth: i32,
    #[serde(default)]
    pub motion: Vec<MotionSegment>,
    /// First frame the object exists.
    #[serde(default)]
    pub enter_frame: usize,
    /// First frame the object no longer exists.
    #[serde(default)]
    pub exit_frame: Option<usize>,
    /// Identity embedding; drawn from the scene seed when absent.
    #[serde(default)]
    pub feature: Option<Vec<f64>>,
}

impl ObjectSpec {
    pub fn present(&self, t: usize) -> bool {
        t >= self.enter_frame && self.exit_frame.is_none_or(|e| t < e)
    }

    fn segment_at(&self, t: usize) -> MotionSegment {
        self.motion
            .iter()
            .filter(|s| s.start <= t)
            .max_by_key(|s| s.start)
            .copied()
            .unwrap_or_default()
    }

    /// Per-frame `(center, half_size)` for frames `0..frames`.
    pub(crate) fn states(&self, frames: usize) -> Vec<([f64; 2], [f64; 2])> {
        let mut c = self.center;
        let mut half = [self.size[0] / 2.0, self.size[1] / 2.0];
        let mut out = Vec::with_capacity(frames);
        for t in 0..frames {
            out.push((c, half));
            let seg = self.segment_at(t);
            for k in 0..2 {
                c[k] += seg.velocity[k];
                half[k] *= seg.scale[k];
            }
        }
        out
    }

    /// Map taking points of this object at frame `t` to frame `t + 1`, given
    /// its center at `t`.
    pub(crate) fn transform_at(&self, t: usize, center: [f64; 2]) -> MotionTransform {
        let seg = self.segment_at(t);
        let axis = |k: usize| {
            let s = seg.scale[k];
            (s, center[k] + seg.velocity[k] - s * center[k])
        };
        let (ax, bx) = axis(0);
        let (ay, by) = axis(1);
        MotionTransform { ax, bx, ay, by }
    }
}

/// A synthetic video: frame geometry, objects with scripted motion, and the
/// perception noise of the oracle built on top of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    pub seed: u64,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Replay settings the oracle uses and records into dumps.
    #[serde(default = "oracle_settings")]
    pub provider: ProviderSettings,
    /// Ground-truth tracks include a frame only when at least this fraction
    /// of the object is visible.
    #[serde(default = "default_min_visibility")]
    pub gt_min_visibility: f64,
}

fn default_feature_dim() -> usize {
    16
}

fn default_min_visibility() -> f64 {
    0.5
}

/// Oracle replay settings: lenient snapping and a small segmentation margin.
pub fn oracle_settings() -> ProviderSettings {
    ProviderSettings {
        snap_iou: 0.3,
        decay: 0.8,
        segment_margin: 2.0,
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.width == 0 || self.height == 0 {
            return bad(format!("frame size {}x{} is empty", self.width, self.height));
        }
        if self.frames == 0 {
            return bad("a scene needs at least one frame".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gt_min_visibility) {
            return bad(format!("gt_min_visibility {} outside [0, 1]", self.gt_min_visibility));
        }
        let mut depths: Vec<i32> = self.objects.iter().map(|o| o.depth).collect();
        depths.sort_unstable();
        if depths.windows(2).any(|w| w[0] == w[1]) {
            return bad("object depths must be distinct".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            let ctx = |msg: &str| Error::Config(format!("objects[{i}] ({}): {msg}", o.label));
            if !(o.size[0] > 0.0 && o.size[1] > 0.0) || !o.size.iter().all(|v| v.is_finite()) {
                return Err(ctx("size must be positive"));
            }
            if !o.center.iter().all(|v| v.is_finite()) {
                return Err(ctx("center must be finite"));
            }
            for s in &o.motion {
                if !(s.scale[0] > 0.0 && s.scale[1] > 0.0) {
                    return Err(ctx("motion scale must be positive"));
                }
                if !s.velocity.iter().chain(&s.scale).all(|v| v.is_finite()) {
                    return Err(ctx("motion must be finite"));
                }
            }
            if let Some(e) = o.exit_frame {
                if e <= o.enter_frame {
                    return Err(ctx("exit_frame must come after enter_frame"));
                }
            }
            if let Some(f) = &o.feature {
                if f.len() != self.feature_dim {
                    return Err(ctx(&format!(
                        "feature has {} entries, feature_dim is {}",
                        f.len(),
                        self.feature_dim
                    )));
                }
                if crate::detection::normalized(f).is_none() {
                    return Err(ctx("feature must be a nonzero finite vector"));
                }
            }
        }
        self.noise.validate()?;
        let p = &self.provider;
        if !(0.0..=1.0).contains(&p.snap_iou) || !(0.0..=1.0).contains(&p.decay) || !(p.segment_margin >= 0.0) {
            return bad("provider settings out of range".into());
        }
        Ok(())
    }
}
