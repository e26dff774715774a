use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::detection::normalized;
use crate::geometry::BBox;
use crate::mask::BinaryMask;
use crate::records::TrackRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    FlowInconsistent,
    NoSupport,
    LeftFrame,
    LowObjectness,
    EmptySegmentation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum TrackState {
    Active,
    Terminated { reason: TerminationReason },
    /// Absorbed by an older track through re-identification; the id is
    /// retired.
    Merged { into: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackFrame {
    pub frame: usize,
    pub bbox: BBox,
    pub mask: BinaryMask,
    pub objectness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub absorbed_id: u64,
    pub frame: usize,
}

/// One object identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub label: String,
    pub state: TrackState,
    /// Per-frame boxes and masks, increasing in frame. Contiguous except
    /// across re-identification gaps.
    pub history: Vec<TrackFrame>,
    /// Last refined objectness.
    pub objectness: f64,
    /// Most recent unit-norm appearance vectors, oldest first.
    pub features: VecDeque<Vec<f64>>,
    pub birth_frame: usize,
    pub merges: Vec<MergeEvent>,
}

impl Track {
    pub fn is_active(&self) -> bool {
        self.state == TrackState::Active
    }

    pub fn last(&self) -> &TrackFrame {
        self.history.last().expect("tracks are born with one frame")
    }

    pub fn end_frame(&self) -> usize {
        self.last().frame
    }

    pub fn mask_at(&self, frame: usize) -> Option<&BinaryMask> {
        self.history
            .binary_search_by_key(&frame, |f| f.frame)
            .ok()
            .map(|i| &self.history[i].mask)
    }

    /// Normalizes and appends `feature`, keeping at most `window` vectors.
    pub fn push_feature(&mut self, feature: &[f64], window: usize) {
        if let Some(f) = normalized(feature) {
            self.features.push_back(f);
            while self.features.len() > window {
                self.features.pop_front();
            }
        }
    }

    /// Largest inner product between any pair of stored vectors.
    pub fn similarity(&self, other: &Track) -> Option<f64> {
        let mut best: Option<f64> = None;
        for a in &self.features {
            for b in &other.features {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                best = Some(best.map_or(dot, |v| v.max(dot)));
            }
        }
        best
    }

    pub fn records(&self) -> impl Iterator<Item = TrackRecord> + '_ {
        self.history.iter().map(|f| TrackRecord {
            frame: f.frame,
            id: self.id,
            label: self.label.clone(),
            bbox: f.bbox,
            mask: f.mask.clone(),
            score: Some(f.objectness),
        })
    }
}

/// Every track created for one video.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackSet {
    pub tracks: BTreeMap<u64, Track>,
    /// Frame the set currently describes.
    pub frame: usize,
    next_id: u64,
}

impl TrackSet {
    pub fn new(frame: usize) -> Self {
        TrackSet {
            tracks: BTreeMap::new(),
            frame,
            next_id: 1,
        }
    }

    pub(crate) fn allocate_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn active_ids(&self) -> Vec<u64> {
        self.tracks
            .values()
            .filter(|t| t.is_active())
            .map(|t| t.id)
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.tracks.values().filter(|t| t.is_active()).count()
    }

    /// Tracks that carry output, i.e. everything not merged away.
    pub fn visible_tracks(&self) -> impl Iterator<Item = &Track> {
        self.tracks
            .values()
            .filter(|t| !matches!(t.state, TrackState::Merged { .. }))
    }

    /// Output records sorted by `(frame, id)`.
    pub fn records(&self) -> Vec<TrackRecord> {
        let mut out: Vec<TrackRecord> = self.visible_tracks().flat_map(Track::records).collect();
        out.sort_by_key(|r| (r.frame, r.id));
        out
    }

    pub fn summary(&self, frames: usize, dims: (u32, u32)) -> RunSummary {
        RunSummary {
            frames,
            width: dims.0,
            height: dims.1,
            tracks: self
                .tracks
                .values()
                .map(|t| TrackSummary {
                    id: t.id,
                    label: t.label.clone(),
                    birth_frame: t.birth_frame,
                    end_frame: t.end_frame(),
                    frames_tracked: t.history.len(),
                    state: t.state,
                    merges: t.merges.clone(),
                })
                .collect(),
        }
    }
}

/// Per-track lifecycle and merge lineage of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub tracks: Vec<TrackSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub id: u64,
    pub label: String,
    pub birth_frame: usize,
    pub end_frame: usize,
    pub frames_tracked: usize,
    #[serde(flatten)]
    pub state: TrackState,
    pub merges: Vec<MergeEvent>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(features: &[&[f64]]) -> Track {
        let mut t = Track {
            id: 1,
            label: "x".into(),
            state: TrackState::Active,
            history: vec![],
            objectness: 1.0,
            features: VecDeque::new(),
            birth_frame: 0,
            merges: vec![],
        };
        for f in features {
            t.push_feature(f, 3);
        }
        t
    }

    #[test]
    fn feature_window_keeps_latest_unit_vectors() {
        let t = track(&[&[2.0, 0.0], &[0.0, 3.0], &[1.0, 1.0], &[0.0, 0.0], &[5.0, 0.0]]);
        assert_eq!(t.features.len(), 3);
        for f in &t.features {
            let n: f64 = f.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert_eq!(t.features.back().unwrap(), &vec![1.0, 0.0]);
    }

    #[test]
    fn similarity_is_max_pairwise_dot() {
        let a = track(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = track(&[&[0.6, 0.8]]);
        assert!((a.similarity(&b).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(a.similarity(&track(&[])), None);
    }
}
