//! The online tracker.
//!
//! Each step moves every active track from frame `t` to `t + 1`:
//!
//! 1. forward-backward consistency of the track mask; the track ends when
//!    the consistent fraction drops below `lambda_flow`,
//! 2. a per-axis motion fit on the consistent pixels warps the box,
//! 3. box regression refines the warped box and rescoring may end the track,
//! 4. the refined box prompts the segmenter, and the hypothesis whose
//!    backprojection best overlaps the current mask wins,
//! 5. the box shrinks to the chosen mask.
//!
//! Then detections that overlap no track spawn new tracks, and recently
//! spawned tracks may be merged into terminated ones by appearance.

mod config;
mod track;

pub use config::EngineConfig;
pub use track::{
    MergeEvent, RunSummary, TerminationReason, Track, TrackFrame, TrackSet, TrackState,
    TrackSummary,
};

use std::collections::{BTreeSet, VecDeque};

use rayon::prelude::*;

use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geometry::BBox;
use crate::mask::{check_dims, BinaryMask};
use crate::motion::{fb_consistency, fit_from_consistency, warp_box};
use crate::perception::{MaskHypothesis, Perception};

/// Result of moving one track forward by a frame.
#[derive(Debug, Clone, PartialEq)]
enum Propagation {
    Continue {
        bbox: BBox,
        mask: BinaryMask,
        objectness: f64,
        feature: Option<Vec<f64>>,
    },
    Terminate(TerminationReason),
}

/// Drives one video through a [`Perception`] provider.
pub struct Tracker<'p, P: Perception + ?Sized> {
    provider: &'p P,
    cfg: EngineConfig,
}

impl<'p, P: Perception + ?Sized> Tracker<'p, P> {
    pub fn new(provider: &'p P, cfg: EngineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Tracker { provider, cfg })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    /// Tracks for frame 0: every detection above its threshold, the
    /// `max_tracks` most confident first.
    pub fn init(&self) -> Result<TrackSet> {
        let dets = self.detect(0)?;
        let mut ts = TrackSet::new(0);
        for d in self.candidates(&dets) {
            if ts.active_count() >= self.cfg.max_tracks {
                break;
            }
            self.spawn_track(&mut ts, d, 0);
        }
        Ok(ts)
    }

    /// Advances `ts` from frame `t` to `t + 1`.
    pub fn step(&self, mut ts: TrackSet, t: usize) -> Result<TrackSet> {
        if ts.frame != t {
            return Err(Error::Config(format!(
                "track set describes frame {}, asked to step from {t}",
                ts.frame
            )));
        }
        let next = t + 1;
        let ctx = |e: Error| Error::Provider {
            frame: next,
            source: Box::new(e),
        };
        let fwd = self.provider.flow_fwd(t).map_err(ctx)?;
        let bwd = self.provider.flow_bwd(t).map_err(ctx)?;

        let active = ts.active_ids();
        let outcomes: Vec<Result<Propagation>> = active
            .par_iter()
            .map(|id| self.propagate(&ts.tracks[id], t, fwd, bwd))
            .collect();
        for (id, outcome) in active.into_iter().zip(outcomes) {
            let track = ts.tracks.get_mut(&id).unwrap();
            match outcome? {
                Propagation::Continue {
                    bbox,
                    mask,
                    objectness,
                    feature,
                } => {
                    if let Some(f) = feature {
                        track.push_feature(&f, self.cfg.feature_window);
                    }
                    track.objectness = objectness;
                    track.history.push(TrackFrame {
                        frame: next,
                        bbox,
                        mask,
                        objectness,
                    });
                }
                Propagation::Terminate(reason) => {
                    track.state = TrackState::Terminated { reason };
                }
            }
        }
        ts.frame = next;

        let dets = self.detect(next)?;
        self.spawn(&mut ts, &dets, next)?;
        self.reidentify(&mut ts, next);
        Ok(ts)
    }

    /// Runs the whole video: `init`, then one `step` per frame pair.
    pub fn run(&self) -> Result<TrackSet> {
        let frames = self.provider.frame_count();
        if frames == 0 {
            return Err(Error::Config("the provider has no frames".into()));
        }
        let mut ts = self.init()?;
        for t in 0..frames - 1 {
            ts = self.step(ts, t)?;
        }
        Ok(ts)
    }

    fn detect(&self, t: usize) -> Result<Vec<Detection>> {
        let dets = self
            .provider
            .detect(t, &self.cfg.prompts)
            .map_err(|e| Error::Provider {
                frame: t,
                source: Box::new(e),
            })?;
        let (w, h) = self.provider.dims();
        for d in &dets {
            d.validate(w, h).map_err(|e| Error::Provider {
                frame: t,
                source: Box::new(e),
            })?;
        }
        Ok(dets)
    }

    /// Detections passing their confidence threshold, most confident first
    /// (stable on ties).
    fn candidates<'d>(&self, dets: &'d [Detection]) -> Vec<&'d Detection> {
        let mut out: Vec<&Detection> = dets
            .iter()
            .filter(|d| {
                self.cfg
                    .threshold_for(&d.label)
                    .is_some_and(|thr| d.objectness >= thr)
            })
            .collect();
        out.sort_by(|a, b| b.objectness.total_cmp(&a.objectness));
        out
    }

    fn spawn_track(&self, ts: &mut TrackSet, d: &Detection, frame: usize) -> u64 {
        let id = ts.allocate_id();
        let mut track = Track {
            id,
            label: d.label.clone(),
            state: TrackState::Active,
            history: vec![TrackFrame {
                frame,
                bbox: d.bbox,
                mask: d.mask.clone(),
                objectness: d.objectness,
            }],
            objectness: d.objectness,
            features: VecDeque::new(),
            birth_frame: frame,
            merges: Vec::new(),
        };
        if let Some(f) = &d.feature {
            track.push_feature(f, self.cfg.feature_window);
        }
        ts.tracks.insert(id, track);
        id
    }

    fn propagate(&self, track: &Track, t: usize, fwd: &FlowField, bwd: &FlowField) -> Result<Propagation> {
        use Propagation::Terminate;
        use TerminationReason::*;

        let next = t + 1;
        let ctx = |e: Error| Error::Provider {
            frame: next,
            source: Box::new(e),
        };
        let current = track.last();
        debug_assert_eq!(current.frame, t);
        let (w, h) = self.provider.dims();

        let consistency = fb_consistency(&current.mask, fwd, bwd).map_err(ctx)?;
        if consistency.ratio < self.cfg.lambda_flow {
            return Ok(Terminate(FlowInconsistent));
        }

        let mut bbox = current.bbox;
        if self.cfg.enable_motion_propagation {
            let motion = match fit_from_consistency(&consistency, fwd) {
                Ok(m) => m,
                Err(Error::NoSupport) => return Ok(Terminate(NoSupport)),
                Err(e) => return Err(ctx(e)),
            };
            bbox = match warp_box(&bbox, &motion, w, h) {
                Ok(b) => b,
                Err(Error::LeftFrame) => return Ok(Terminate(LeftFrame)),
                Err(e) => return Err(ctx(e)),
            };
        }

        let mut objectness = track.objectness;
        let mut feature = None;
        if self.cfg.enable_refinement {
            let refined = self
                .provider
                .refine(next, &bbox, track.objectness)
                .map_err(ctx)?;
            bbox = refined.bbox;
            objectness = refined.objectness;
            if refined.snapped {
                feature = refined.feature;
            }
            if objectness < self.cfg.lambda_obj() {
                return Ok(Terminate(LowObjectness));
            }
        }

        let hyps = self.provider.segment(next, &bbox, t).map_err(ctx)?;
        for hyp in &hyps {
            check_dims((w, h), hyp.mask.dims()).map_err(ctx)?;
        }
        let Some(chosen) = select_hypothesis(&hyps, &current.mask, self.cfg.enable_cycle_consistency)
        else {
            return Ok(Terminate(EmptySegmentation));
        };
        let mask = hyps[chosen].mask.clone();

        if self.cfg.enable_box_adaptation {
            bbox = mask.tight_box().map_err(ctx)?;
        }
        Ok(Propagation::Continue {
            bbox,
            mask,
            objectness,
            feature,
        })
    }

    /// Starts tracks for detections overlapping no active track, up to the
    /// track cap. Tracks spawned earlier in the same frame count as
    /// existing.
    fn spawn(&self, ts: &mut TrackSet, dets: &[Detection], frame: usize) -> Result<()> {
        for d in self.candidates(dets) {
            if ts.active_count() >= self.cfg.max_tracks {
                break;
            }
            let mut overlaps = false;
            for t in ts.tracks.values().filter(|t| t.is_active()) {
                let Some(m) = t.mask_at(frame) else { continue };
                if d.mask.iou(m)? >= self.cfg.lambda_spawn {
                    overlaps = true;
                    break;
                }
            }
            if !overlaps {
                self.spawn_track(ts, d, frame);
            }
        }
        Ok(())
    }

    /// Merges young tracks into terminated ones whose appearance matches.
    ///
    /// Candidate pairs are a terminated track that ended before the young
    /// track was born and a young track born at most `t_reid` frames ago.
    /// Pairs whose best feature similarity exceeds `lambda_reid` are taken
    /// greedily by similarity, ties going to the lower terminated id; each
    /// track takes part in at most one merge per frame.
    fn reidentify(&self, ts: &mut TrackSet, frame: usize) {
        let mut pairs: Vec<(f64, u64, u64)> = Vec::new();
        {
            let young: Vec<&Track> = ts
                .tracks
                .values()
                .filter(|t| t.is_active() && frame - t.birth_frame <= self.cfg.t_reid)
                .collect();
            let ended: Vec<&Track> = ts
                .tracks
                .values()
                .filter(|t| matches!(t.state, TrackState::Terminated { .. }))
                .collect();

            for old in &ended {
                for new in &young {
                    if old.end_frame() >= new.birth_frame {
                        continue;
                    }
                    if let Some(sim) = old.similarity(new) {
                        if sim > self.cfg.lambda_reid {
                            pairs.push((sim, old.id, new.id));
                        }
                    }
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut used_old = BTreeSet::new();
        let mut used_new = BTreeSet::new();
        for (_, old_id, new_id) in pairs {
            if used_old.contains(&old_id) || used_new.contains(&new_id) {
                continue;
            }
            used_old.insert(old_id);
            used_new.insert(new_id);
            self.merge(ts, old_id, new_id, frame);
        }
    }

    fn merge(&self, ts: &mut TrackSet, old_id: u64, new_id: u64, frame: usize) {
        let mut young = ts.tracks.remove(&new_id).unwrap();
        let old = ts.tracks.get_mut(&old_id).unwrap();
        old.history.extend(young.history.iter().cloned());
        for f in young.features.drain(..) {
            old.features.push_back(f);
        }
        while old.features.len() > self.cfg.feature_window {
            old.features.pop_front();
        }
        old.objectness = young.objectness;
        old.state = TrackState::Active;
        old.merges.push(MergeEvent {
            absorbed_id: new_id,
            frame,
        });
        young.state = TrackState::Merged { into: old_id };
        ts.tracks.insert(new_id, young);
    }
}

/// Picks the hypothesis to continue a track with.
///
/// With cycle consistency, the winner is the hypothesis whose
/// backprojection overlaps `previous` most (hypotheses without one rank
/// last), quality breaking ties. Otherwise the highest quality wins. Earlier
/// hypotheses win remaining ties. Empty masks are never chosen.
pub fn select_hypothesis(hyps: &[MaskHypothesis], previous: &BinaryMask, cycle: bool) -> Option<usize> {
    let score = |h: &MaskHypothesis| -> (f64, f64) {
        if cycle {
            let overlap = h
                .backprojection
                .as_ref()
                .and_then(|bp| bp.iou(previous).ok())
                .unwrap_or(-1.0);
            (overlap, h.quality)
        } else {
            (h.quality, 0.0)
        }
    };
    let mut best: Option<(usize, (f64, f64))> = None;
    for (i, h) in hyps.iter().enumerate() {
        if h.mask.is_empty() {
            continue;
        }
        let s = score(h);
        let better = match best {
            None => true,
            Some((_, b)) => s.0 > b.0 || (s.0 == b.0 && s.1 > b.1),
        };
        if better {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Convenience wrapper: validates `cfg` and tracks the whole video.
pub fn run(provider: &(impl Perception + ?Sized), cfg: &EngineConfig) -> Result<TrackSet> {
    Tracker::new(provider, cfg.clone())?.run()
}
