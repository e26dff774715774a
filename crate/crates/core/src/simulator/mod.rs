//! Synthetic scenes with exact ground truth.
//!
//! [`generate`] renders rectangles and ellipses with per-axis linear motion
//! into z-ordered instance masks and derives exact forward and backward flow
//! from the motion scripts. [`OracleProvider`] turns the result into a
//! [`Perception`](crate::perception::Perception) implementation with
//! configurable, seeded noise.
//!
//! Flow conventions:
//!
//! * forward flow at a pixel is the scripted motion of the frontmost object
//!   covering it, even if that object becomes hidden in the next frame;
//! * backward flow at a pixel of frame `t + 1` inverts the motion of the
//!   frontmost object there (zero for objects that only just appeared);
//! * background flow is zero.
//!
//! Randomness comes from two ChaCha8 streams derived from the scene seed:
//! one draws identity features (objects in order, `feature_dim` standard
//! normals each, for objects without a configured feature), the other
//! drives the oracle's noise (see [`OracleProvider`]).

mod oracle;
mod recipes;
mod scene;

pub use oracle::{NoiseSpec, OracleProvider, CLUTTER_LABEL, GT_FILE};
pub use recipes::{occlusion_trial, random_scene, SceneRecipe, WALL_LABEL};
pub use scene::{oracle_settings, MotionSegment, ObjectSpec, SceneConfig, Shape};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::detection::normalized;
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geometry::BBox;
use crate::mask::{BinaryMask, Bitmap};
use crate::motion::MotionTransform;
use crate::records::{TrackRecord, TrackTable};

/// Ground truth of one object over the whole scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTruth {
    pub label: String,
    /// Unit-norm identity embedding.
    pub feature: Vec<f64>,
    /// Visible (z-buffered) mask per frame; `None` when nothing shows.
    pub masks: Vec<Option<BinaryMask>>,
    /// Tight box of the visible mask.
    pub boxes: Vec<Option<BBox>>,
    /// Visible pixels over the full shape area (off-screen parts included).
    pub visibility: Vec<f64>,
    /// Motion from frame `t` to `t + 1`.
    pub transforms: Vec<MotionTransform>,
}

/// Everything [`generate`] knows about a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTruth {
    pub config: SceneConfig,
    pub objects: Vec<ObjectTruth>,
    /// `fwd[t]` maps frame `t` to `t + 1`.
    pub fwd: Vec<FlowField>,
    /// `bwd[t]` maps frame `t + 1` back to `t`.
    pub bwd: Vec<FlowField>,
}

impl SceneTruth {
    pub fn frames(&self) -> usize {
        self.config.frames
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.config.width, self.config.height)
    }

    /// Ground-truth track id of object `index`.
    pub fn track_id(index: usize) -> u64 {
        index as u64 + 1
    }

    /// Ground truth in track-record form, restricted to frames where the
    /// object's visibility reaches `gt_min_visibility`.
    pub fn gt_records(&self) -> Vec<TrackRecord> {
        let mut out = Vec::new();
        for t in 0..self.frames() {
            for (i, o) in self.objects.iter().enumerate() {
                if o.visibility[t] < self.config.gt_min_visibility {
                    continue;
                }
                if let (Some(mask), Some(bbox)) = (&o.masks[t], o.boxes[t]) {
                    out.push(TrackRecord {
                        frame: t,
                        id: Self::track_id(i),
                        label: o.label.clone(),
                        bbox,
                        mask: mask.clone(),
                        score: None,
                    });
                }
            }
        }
        out
    }

    pub fn gt_table(&self) -> TrackTable {
        let mut table =
            TrackTable::from_records(self.gt_records()).expect("ground truth is consistent");
        table.dims = Some(self.dims());
        table
    }
}

fn covers(shape: Shape, center: [f64; 2], half: [f64; 2], px: f64, py: f64) -> bool {
    match shape {
        Shape::Rectangle => {
            px >= center[0] - half[0]
                && px < center[0] + half[0]
                && py >= center[1] - half[1]
                && py < center[1] + half[1]
        }
        Shape::Ellipse => {
            let dx = (px - center[0]) / half[0];
            let dy = (py - center[1]) / half[1];
            dx * dx + dy * dy < 1.0
        }
    }
}

/// Pixel rows/columns that can hold a center inside `[c - h, c + h)`.
fn pixel_range(c: f64, h: f64) -> std::ops::Range<i64> {
    ((c - h - 1.0).floor() as i64)..((c + h + 1.0).ceil() as i64)
}

/// Renders the scene. Pure in `cfg`: equal configs give equal truths.
pub fn generate(cfg: &SceneConfig) -> Result<SceneTruth> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let frames = cfg.frames;
    let n_pixels = w as usize * h as usize;

    let mut feature_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let features: Vec<Vec<f64>> = cfg
        .objects
        .iter()
        .map(|o| match &o.feature {
            Some(f) => normalized(f).expect("validated"),
            None => loop {
                let v: Vec<f64> = (0..cfg.feature_dim)
                    .map(|_| StandardNormal.sample(&mut feature_rng))
                    .collect();
                if let Some(n) = normalized(&v) {
                    break n;
                }
            },
        })
        .collect();

    let states: Vec<Vec<([f64; 2], [f64; 2])>> =
        cfg.objects.iter().map(|o| o.states(frames)).collect();

    // painter's order: far to near
    let mut order: Vec<usize> = (0..cfg.objects.len()).collect();
    order.sort_by_key(|&i| cfg.objects[i].depth);

    let mut owners: Vec<Vec<Option<usize>>> = Vec::with_capacity(frames);
    let mut full_area = vec![vec![0u64; frames]; cfg.objects.len()];
    for t in 0..frames {
        let mut owner = vec![None; n_pixels];
        for &i in &order {
            let o = &cfg.objects[i];
            if !o.present(t) {
                continue;
            }
            let (c, half) = states[i][t];
            for r in pixel_range(c[1], half[1]) {
                for col in pixel_range(c[0], half[0]) {
                    if !covers(o.shape, c, half, col as f64 + 0.5, r as f64 + 0.5) {
                        continue;
                    }
                    full_area[i][t] += 1;
                    if col >= 0 && r >= 0 && (col as u32) < w && (r as u32) < h {
                        owner[r as usize * w as usize + col as usize] = Some(i);
                    }
                }
            }
            if full_area[i][t] == 0 {
                return Err(Error::Config(format!(
                    "objects[{i}] ({}) has zero area at frame {t}",
                    o.label
                )));
            }
        }
        owners.push(owner);
    }

    let mut objects = Vec::with_capacity(cfg.objects.len());
    for (i, o) in cfg.objects.iter().enumerate() {
        let mut masks = Vec::with_capacity(frames);
        let mut boxes = Vec::with_capacity(frames);
        let mut visibility = Vec::with_capacity(frames);
        for t in 0..frames {
            let bits: Vec<bool> = owners[t].iter().map(|&p| p == Some(i)).collect();
            let bm = Bitmap::from_bits(w, h, bits)?;
            let visible = bm.count();
            if visible == 0 {
                masks.push(None);
                boxes.push(None);
                visibility.push(0.0);
            } else {
                let m = BinaryMask::encode(&bm);
                boxes.push(Some(m.tight_box()?));
                masks.push(Some(m));
                visibility.push(visible as f64 / full_area[i][t] as f64);
            }
        }
        let transforms = (0..frames.saturating_sub(1))
            .map(|t| o.transform_at(t, states[i][t].0))
            .collect();
        objects.push(ObjectTruth {
            label: o.label.clone(),
            feature: features[i].clone(),
            masks,
            boxes,
            visibility,
            transforms,
        });
    }

    let mut fwd = Vec::with_capacity(frames.saturating_sub(1));
    let mut bwd = Vec::with_capacity(frames.saturating_sub(1));
    for t in 0..frames.saturating_sub(1) {
        let mut f = vec![[0.0f32; 2]; n_pixels];
        let mut b = vec![[0.0f32; 2]; n_pixels];
        for r in 0..h {
            for c in 0..w {
                let idx = r as usize * w as usize + c as usize;
                let (px, py) = (f64::from(c) + 0.5, f64::from(r) + 0.5);
                if let Some(i) = owners[t][idx] {
                    let (nx, ny) = objects[i].transforms[t].apply(px, py);
                    f[idx] = [(nx - px) as f32, (ny - py) as f32];
                }
                if let Some(i) = owners[t + 1][idx] {
                    if cfg.objects[i].present(t) {
                        let m = &objects[i].transforms[t];
                        let (ox, oy) = ((px - m.bx) / m.ax, (py - m.by) / m.ay);
                        b[idx] = [(ox - px) as f32, (oy - py) as f32];
                    }
                }
            }
        }
        fwd.push(FlowField::new(w, h, f)?);
        bwd.push(FlowField::new(w, h, b)?);
    }

    Ok(SceneTruth {
        config: cfg.clone(),
        objects,
        fwd,
        bwd,
    })
}
