use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SceneTruth;
use crate::detection::{normalized, Detection};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geometry::BBox;
use crate::mask::BinaryMask;
use crate::perception::{
    best_box_match, snap_to_detections, FileProvider, MaskHypothesis, Perception, ProviderSettings,
    RefinedBox,
};
use crate::records::write_records;

/// Perception noise of the oracle. All zeros (the default apart from the
/// two quality scores) is an exact oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Standard deviation, in pixels, added to each detection box coordinate.
    pub box_jitter: f64,
    /// Standard deviation added to detection objectness.
    pub objectness_noise: f64,
    /// Probability that a visible object is not detected in a frame.
    pub miss_prob: f64,
    /// Expected number of false-positive detections per frame.
    pub false_positive_rate: f64,
    /// Standard deviation added to each feature component before
    /// normalization.
    pub feature_noise: f64,
    /// Probability that a segmentation query also returns a distractor.
    pub distractor_rate: f64,
    pub distractor_quality: f64,
    /// Quality of the true hypothesis.
    pub hypothesis_quality: f64,
    /// Relative flow error: per frame and object, a bias with per-axis
    /// standard deviation `flow_error * |displacement|` is added to the
    /// object's forward flow and subtracted from its backward flow.
    pub flow_error: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            box_jitter: 0.0,
            objectness_noise: 0.0,
            miss_prob: 0.0,
            false_positive_rate: 0.0,
            feature_noise: 0.0,
            distractor_rate: 0.0,
            distractor_quality: 0.7,
            hypothesis_quality: 0.8,
            flow_error: 0.0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("box_jitter", self.box_jitter),
            ("objectness_noise", self.objectness_noise),
            ("false_positive_rate", self.false_positive_rate),
            ("feature_noise", self.feature_noise),
            ("flow_error", self.flow_error),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("noise.{name} = {v} must be finite and >= 0")));
            }
        }
        let unit = [
            ("miss_prob", self.miss_prob),
            ("distractor_rate", self.distractor_rate),
            ("distractor_quality", self.distractor_quality),
            ("hypothesis_quality", self.hypothesis_quality),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("noise.{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Exact flows of `truth` with per-object biases of relative size `rel`.
fn noisy_flows(truth: &SceneTruth, rel: f64) -> (Vec<FlowField>, Vec<FlowField>) {
    if rel == 0.0 {
        return (truth.fwd.clone(), truth.bwd.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(truth.config.seed);
    rng.set_stream(3);
    let (w, h) = truth.dims();
    let mut fwd = Vec::with_capacity(truth.fwd.len());
    let mut bwd = Vec::with_capacity(truth.bwd.len());
    for (t, (f, b)) in truth.fwd.iter().zip(&truth.bwd).enumerate() {
        let mut fv = f.vectors().to_vec();
        let mut bv = b.vectors().to_vec();
        for (i, o) in truth.objects.iter().enumerate() {
            let n: [f64; 2] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            let Some(anchor) = o.boxes[t].or(o.boxes[t + 1]) else {
                continue;
            };
            let (cx, cy) = anchor.center();
            let (nx, ny) = o.transforms[t].apply(cx, cy);
            let s = rel * (nx - cx).hypot(ny - cy);
            let bias = [(s * n[0]) as f32, (s * n[1]) as f32];
            if let Some(m) = &o.masks[t] {
                for (x, y) in m.decode().foreground() {
                    let v = &mut fv[y as usize * w as usize + x as usize];
                    v[0] += bias[0];
                    v[1] += bias[1];
                }
            }
            if let (Some(m), true) = (&o.masks[t + 1], truth.config.objects[i].present(t)) {
                for (x, y) in m.decode().foreground() {
                    let v = &mut bv[y as usize * w as usize + x as usize];
                    v[0] -= bias[0];
                    v[1] -= bias[1];
                }
            }
        }
        fwd.push(FlowField::new(w, h, fv).expect("same dims"));
        bwd.push(FlowField::new(w, h, bv).expect("same dims"));
    }
    (fwd, bwd)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Distractor {
    /// Half of the true mask; `vertical` splits along x.
    Part { vertical: bool, upper: bool },
    /// True mask united with the nearest other object.
    Merged { vertical: bool, upper: bool },
}

/// Label given to false-positive detections.
pub const CLUTTER_LABEL: &str = "clutter";

/// Perception backed by a [`SceneTruth`].
///
/// Detections are drawn once, at construction, from a ChaCha8 stream seeded
/// with the scene seed (stream 1). For each frame, in order:
///
/// 1. for each object with visible pixels, in object order: one uniform
///    (miss test), four normals (box jitter `x0, y0, x1, y1`), one normal
///    (objectness), `feature_dim` normals (feature); all are drawn even when
///    the object is missed or the noise is zero;
/// 2. the false-positive count (Poisson, only when the rate is positive),
///    then per false positive: width, height, x, y, objectness uniforms and
///    `feature_dim` normals;
/// 3. for each object with visible pixels: four uniforms deciding whether a
///    distractor accompanies its segmentation at this frame, its kind, and
///    which half it keeps.
///
/// Flow errors come from stream 3: per frame transition and object, two
/// normals (x, y), drawn for every object whether or not it is visible.
///
/// `refine` snaps onto those detections exactly like the file provider.
/// `segment` picks the object whose visible box overlaps the prompt most and
/// returns its visible mask, cut to the prompt box plus the configured
/// margin, with the object's visible mask at the previous frame as the
/// backprojection.
#[derive(Debug, Clone)]
pub struct OracleProvider {
    truth: SceneTruth,
    noise: NoiseSpec,
    settings: ProviderSettings,
    detections: Vec<Vec<Detection>>,
    distractors: Vec<Vec<Option<Distractor>>>,
    fwd: Vec<FlowField>,
    bwd: Vec<FlowField>,
}

impl OracleProvider {
    /// Oracle with the noise and settings of the scene's config.
    pub fn new(truth: SceneTruth) -> Self {
        let noise = truth.config.noise;
        let settings = truth.config.provider;
        Self::with_noise(truth, noise, settings)
    }

    pub fn with_noise(truth: SceneTruth, noise: NoiseSpec, settings: ProviderSettings) -> Self {
        let frames = truth.frames();
        let (w, h) = truth.dims();
        let dim = truth.config.feature_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(truth.config.seed);
        rng.set_stream(1);
        let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

        let mut detections = Vec::with_capacity(frames);
        let mut distractors = Vec::with_capacity(frames);
        for t in 0..frames {
            let mut dets = Vec::new();
            for o in &truth.objects {
                let (Some(mask), Some(gt_box)) = (&o.masks[t], o.boxes[t]) else {
                    continue;
                };
                let u_miss: f64 = rng.random();
                let jitter: [f64; 4] = std::array::from_fn(|_| normal(&mut rng));
                let n_obj = normal(&mut rng);
                let n_feat: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
                if u_miss < noise.miss_prob {
                    continue;
                }
                let s = noise.box_jitter;
                let (xa, xb) = (gt_box.x0 + s * jitter[0], gt_box.x1 + s * jitter[2]);
                let (ya, yb) = (gt_box.y0 + s * jitter[1], gt_box.y1 + s * jitter[3]);
                let jittered = BBox {
                    x0: xa.min(xb),
                    y0: ya.min(yb),
                    x1: xa.max(xb),
                    y1: ya.max(yb),
                }
                .clip(w, h);
                let bbox = if jittered.area() > 0.0 { jittered } else { gt_box };
                let feature: Vec<f64> = o
                    .feature
                    .iter()
                    .zip(&n_feat)
                    .map(|(f, n)| f + noise.feature_noise * n)
                    .collect();
                dets.push(Detection {
                    bbox,
                    objectness: (o.visibility[t] + noise.objectness_noise * n_obj).clamp(0.0, 1.0),
                    label: o.label.clone(),
                    mask: mask.clone(),
                    feature: Some(normalized(&feature).unwrap_or_else(|| o.feature.clone())),
                });
            }

            let fp_count = if noise.false_positive_rate > 0.0 {
                let p = Poisson::new(noise.false_positive_rate).expect("validated rate");
                p.sample(&mut rng) as usize
            } else {
                0
            };
            for _ in 0..fp_count {
                let bw = 4.0 + rng.random::<f64>() * 16.0;
                let bh = 4.0 + rng.random::<f64>() * 16.0;
                let x0 = rng.random::<f64>() * (f64::from(w) - bw).max(0.0);
                let y0 = rng.random::<f64>() * (f64::from(h) - bh).max(0.0);
                let score: f64 = rng.random();
                let raw: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
                let bbox = BBox {
                    x0: x0.round(),
                    y0: y0.round(),
                    x1: (x0 + bw).round().min(f64::from(w)),
                    y1: (y0 + bh).round().min(f64::from(h)),
                };
                let mask = BinaryMask::from_box(w, h, &bbox);
                if mask.is_empty() {
                    continue;
                }
                dets.push(Detection {
                    bbox,
                    objectness: score,
                    label: CLUTTER_LABEL.into(),
                    mask,
                    feature: normalized(&raw),
                });
            }

            let mut frame_distractors = vec![None; truth.objects.len()];
            for (i, o) in truth.objects.iter().enumerate() {
                if o.masks[t].is_none() {
                    continue;
                }
                let u: [f64; 4] = std::array::from_fn(|_| rng.random());
                if u[0] < noise.distractor_rate {
                    let (vertical, upper) = (u[2] < 0.5, u[3] < 0.5);
                    frame_distractors[i] = Some(if u[1] < 0.5 {
                        Distractor::Part { vertical, upper }
                    } else {
                        Distractor::Merged { vertical, upper }
                    });
                }
            }

            detections.push(dets);
            distractors.push(frame_distractors);
        }
        let (fwd, bwd) = noisy_flows(&truth, noise.flow_error);
        OracleProvider {
            truth,
            noise,
            settings,
            detections,
            distractors,
            fwd,
            bwd,
        }
    }

    pub fn truth(&self) -> &SceneTruth {
        &self.truth
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn settings(&self) -> &ProviderSettings {
        &self.settings
    }

    /// The precomputed (noisy) detections of frame `t`.
    pub fn detections(&self, t: usize) -> &[Detection] {
        &self.detections[t]
    }

    fn check_frame(&self, t: usize) -> Result<()> {
        if t < self.truth.frames() {
            Ok(())
        } else {
            Err(Error::FrameOutOfRange {
                frame: t,
                frames: self.truth.frames(),
            })
        }
    }

    fn nearest_neighbor(&self, t: usize, i: usize) -> Option<usize> {
        let (cx, cy) = self.truth.objects[i].boxes[t]?.center();
        let mut best: Option<(usize, f64)> = None;
        for (j, o) in self.truth.objects.iter().enumerate() {
            if j == i {
                continue;
            }
            if let Some(b) = o.boxes[t] {
                let (x, y) = b.center();
                let d = (x - cx).powi(2) + (y - cy).powi(2);
                if best.is_none_or(|(_, v)| d < v) {
                    best = Some((j, d));
                }
            }
        }
        best.map(|(j, _)| j)
    }

    fn distractor(
        &self,
        kind: Distractor,
        i: usize,
        t_next: usize,
        t_prev: usize,
        mask: &BinaryMask,
        backprojection: Option<&BinaryMask>,
    ) -> Result<Option<MaskHypothesis>> {
        let half = |m: &BinaryMask, vertical: bool, upper: bool| -> Result<BinaryMask> {
            let b = m.tight_box()?;
            let (cx, cy) = b.center();
            let part = match (vertical, upper) {
                (true, true) => BBox { x1: cx, ..b },
                (true, false) => BBox { x0: cx, ..b },
                (false, true) => BBox { y1: cy, ..b },
                (false, false) => BBox { y0: cy, ..b },
            };
            Ok(m.clip_to_box(&part))
        };
        let objects = &self.truth.objects;
        let neighbor = match kind {
            Distractor::Merged { .. } => self.nearest_neighbor(t_next, i),
            Distractor::Part { .. } => None,
        };
        let (m, bp) = match (kind, neighbor) {
            (Distractor::Merged { .. }, Some(j)) => {
                let other = objects[j].masks[t_next].as_ref().expect("has a box");
                let bp = match (backprojection, &objects[j].masks[t_prev]) {
                    (Some(a), Some(b)) => Some(a.union(b)?),
                    (Some(a), None) => Some(a.clone()),
                    (None, b) => b.clone(),
                };
                (mask.union(other)?, bp)
            }
            (Distractor::Part { vertical, upper } | Distractor::Merged { vertical, upper }, _) => {
                let bp = match backprojection {
                    Some(b) => Some(half(b, vertical, upper)?),
                    None => None,
                };
                (half(mask, vertical, upper)?, bp)
            }
        };
        if m.is_empty() || &m == mask {
            return Ok(None);
        }
        Ok(Some(MaskHypothesis {
            mask: m,
            backprojection: bp.filter(|b| !b.is_empty()),
            quality: self.noise.distractor_quality,
        }))
    }

    /// A [`FileProvider`] holding this oracle's detections, flows and, for
    /// every detection box at frames after the first, the hypotheses the
    /// oracle returns for that box as a prompt.
    pub fn to_file_provider(&self) -> Result<FileProvider> {
        self.to_file_provider_with(BTreeMap::new())
    }

    /// Like [`to_file_provider`](Self::to_file_provider), plus `recorded`
    /// hypotheses (typically from a [`Recorder`](crate::perception::Recorder)
    /// wrapped around this oracle during a tracker run), which take
    /// precedence on shared keys.
    pub fn to_file_provider_with(
        &self,
        recorded: BTreeMap<(usize, [i64; 4]), Vec<MaskHypothesis>>,
    ) -> Result<FileProvider> {
        let mut hypotheses = recorded;
        for t in 1..self.truth.frames() {
            for d in &self.detections[t] {
                let key = (t, d.bbox.rounded());
                if hypotheses.contains_key(&key) {
                    continue;
                }
                hypotheses.insert(key, self.segment(t, &d.bbox, t - 1)?);
            }
        }
        let (w, h) = self.truth.dims();
        FileProvider::from_parts(
            w,
            h,
            self.detections.clone(),
            self.fwd.clone(),
            self.bwd.clone(),
            hypotheses,
            self.settings,
        )
    }

    /// Writes the file-provider recording plus `gt.ndjson` into `dir` and
    /// returns the manifest path.
    pub fn dump(&self, dir: &Path) -> Result<PathBuf> {
        self.dump_with(dir, BTreeMap::new())
    }

    /// [`dump`](Self::dump) including `recorded` hypotheses.
    pub fn dump_with(
        &self,
        dir: &Path,
        recorded: BTreeMap<(usize, [i64; 4]), Vec<MaskHypothesis>>,
    ) -> Result<PathBuf> {
        let manifest = self.to_file_provider_with(recorded)?.write(dir)?;
        write_records(&dir.join(GT_FILE), &self.truth.gt_records())?;
        Ok(manifest)
    }
}

/// Ground-truth tracks written next to a dumped manifest.
pub const GT_FILE: &str = "gt.ndjson";

impl Perception for OracleProvider {
    fn frame_count(&self) -> usize {
        self.truth.frames()
    }

    fn dims(&self) -> (u32, u32) {
        self.truth.dims()
    }

    fn detect(&self, t: usize, _prompts: &[String]) -> Result<Vec<Detection>> {
        self.check_frame(t)?;
        Ok(self.detections[t].clone())
    }

    fn refine(&self, t: usize, query: &BBox, prev_objectness: f64) -> Result<RefinedBox> {
        self.check_frame(t)?;
        Ok(snap_to_detections(
            &self.detections[t],
            query,
            prev_objectness,
            &self.settings,
            self.dims(),
        ))
    }

    fn segment(&self, t_next: usize, prompt: &BBox, t_prev: usize) -> Result<Vec<MaskHypothesis>> {
        self.check_frame(t_next)?;
        self.check_frame(t_prev)?;
        let objects = &self.truth.objects;
        let boxes: Vec<(usize, BBox)> = objects
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.boxes[t_next].map(|b| (i, b)))
            .collect();
        let Some((k, iou)) = best_box_match(boxes.iter().map(|(_, b)| b), prompt) else {
            return Ok(vec![]);
        };
        if iou <= 0.0 {
            return Ok(vec![]);
        }
        let i = boxes[k].0;
        let full = objects[i].masks[t_next].as_ref().expect("has a box");
        let mask = full.clip_to_box(&prompt.dilate(self.settings.segment_margin));
        if mask.is_empty() {
            return Ok(vec![]);
        }
        let backprojection = objects[i].masks[t_prev].clone();
        let mut out = vec![MaskHypothesis {
            mask: mask.clone(),
            backprojection: backprojection.clone(),
            quality: self.noise.hypothesis_quality,
        }];
        if let Some(kind) = self.distractors[t_next][i] {
            if let Some(d) = self.distractor(kind, i, t_next, t_prev, &mask, backprojection.as_ref())? {
                out.push(d);
            }
        }
        Ok(out)
    }

    fn flow_fwd(&self, t: usize) -> Result<&FlowField> {
        self.fwd.get(t).ok_or(Error::FrameOutOfRange {
            frame: t,
            frames: self.fwd.len(),
        })
    }

    fn flow_bwd(&self, t: usize) -> Result<&FlowField> {
        self.bwd.get(t).ok_or(Error::FrameOutOfRange {
            frame: t,
            frames: self.bwd.len(),
        })
    }
}
