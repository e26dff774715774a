//! Evaluation of predicted tracks against ground truth.
//!
//! Everything works on [`TrackTable`]s, i.e. parsed track NDJSON. Region
//! similarity J is per-frame mask IoU, contour accuracy F the boundary
//! F-score with a tolerance of 0.8% of the image diagonal; both average
//! over the frames of each ground-truth track (frames the prediction
//! misses score 0) and then over tracks. Spatio-temporal IoU, average
//! recall and HOTA follow their usual definitions; see the functions.
//!
//! J, F and J&F are reported in percent, every other score in `[0, 1]`.

mod hota;
mod hungarian;
mod region;

pub use hota::{hota, hota_alphas, id_switches, HotaAlpha, HotaScores};
pub use hungarian::{hungarian, max_weight_pairs};
pub use region::{boundary, boundary_tolerance, f_frame, j_frame, st_mask_iou, track_j_f};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::TrackTable;

/// How ground-truth tracks are paired with predictions for J and F.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Pairing by mask IoU at each ground-truth track's first frame.
    Vos,
    /// Pairing by spatio-temporal IoU.
    Openworld,
    /// As `Openworld`; HOTA is the headline score.
    Hota,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vos" => Ok(Protocol::Vos),
            "openworld" => Ok(Protocol::Openworld),
            "hota" => Ok(Protocol::Hota),
            other => Err(Error::Config(format!(
                "unknown protocol {other:?} (expected vos, openworld or hota)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub protocol: Protocol,
    /// Only same-label pairs may match.
    pub class_aware: bool,
    /// Number of frames of the video; predictions beyond it are a protocol
    /// mismatch. Defaults to the ground truth's last frame plus one.
    pub frames: Option<usize>,
    /// Named label subsets reported as extra HOTA scores.
    pub label_subsets: BTreeMap<String, Vec<String>>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            protocol: Protocol::Vos,
            class_aware: false,
            frames: None,
            label_subsets: BTreeMap::new(),
        }
    }
}

/// Scores of one ground-truth track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackScore {
    pub gt_id: u64,
    pub label: String,
    pub pred_id: Option<u64>,
    pub j: f64,
    pub f: f64,
    pub st_iou: f64,
}

/// Average recall over spatio-temporal IoU thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallScores {
    pub ar50: f64,
    pub ar75: f64,
    pub mar: f64,
    /// `(tau, recall)` for `tau = 0.50, 0.55, ..., 0.95`.
    pub per_tau: Vec<(f64, f64)>,
}

/// All scores of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub protocol: Protocol,
    pub class_aware: bool,
    pub gt_tracks: usize,
    pub pred_tracks: usize,
    /// J, F and J&F in percent; absent without ground truth.
    pub j: Option<f64>,
    pub f: Option<f64>,
    pub jf: Option<f64>,
    pub ar50: Option<f64>,
    pub ar75: Option<f64>,
    pub mar: Option<f64>,
    /// mAR with at most 100 predictions, highest score first.
    pub mar100: Option<f64>,
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub loc_a: f64,
    pub id_switches: u64,
    /// HOTA restricted to each configured label subset.
    pub hota_subsets: BTreeMap<String, f64>,
    pub per_track: Vec<TrackScore>,
    pub per_alpha: Vec<HotaAlpha>,
}

impl MetricReport {
    /// Flat `(column, value)` pairs for one CSV row. Absent scores are empty
    /// strings.
    pub fn columns(&self) -> Vec<(String, String)> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let protocol = serde_json::to_value(self.protocol)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        let mut out = vec![
            ("protocol".to_owned(), protocol),
            ("class_aware".to_owned(), self.class_aware.to_string()),
            ("gt_tracks".to_owned(), self.gt_tracks.to_string()),
            ("pred_tracks".to_owned(), self.pred_tracks.to_string()),
            ("j".to_owned(), opt(self.j)),
            ("f".to_owned(), opt(self.f)),
            ("jf".to_owned(), opt(self.jf)),
            ("ar50".to_owned(), opt(self.ar50)),
            ("ar75".to_owned(), opt(self.ar75)),
            ("mar".to_owned(), opt(self.mar)),
            ("mar100".to_owned(), opt(self.mar100)),
            ("hota".to_owned(), self.hota.to_string()),
            ("det_a".to_owned(), self.det_a.to_string()),
            ("ass_a".to_owned(), self.ass_a.to_string()),
            ("loc_a".to_owned(), self.loc_a.to_string()),
            ("id_switches".to_owned(), self.id_switches.to_string()),
        ];
        for (name, v) in &self.hota_subsets {
            out.push((format!("hota_{name}"), v.to_string()));
        }
        out
    }
}

fn labels_match(pred: &TrackTable, gt: &TrackTable, p: u64, g: u64, class_aware: bool) -> bool {
    !class_aware || pred.tracks[&p].label == gt.tracks[&g].label
}

/// Spatio-temporal IoU of every `(gt, pred)` pair, in id order; zero for
/// label mismatches under `class_aware`.
pub fn st_iou_matrix(pred: &TrackTable, gt: &TrackTable, class_aware: bool) -> Result<Vec<Vec<f64>>> {
    gt.tracks
        .iter()
        .map(|(g, gtr)| {
            pred.tracks
                .iter()
                .map(|(p, ptr)| {
                    if labels_match(pred, gt, *p, *g, class_aware) {
                        st_mask_iou(ptr, gtr)
                    } else {
                        Ok(0.0)
                    }
                })
                .collect()
        })
        .collect()
}

/// Pairs each ground-truth track with at most one prediction.
pub fn match_tracks(
    pred: &TrackTable,
    gt: &TrackTable,
    protocol: Protocol,
    class_aware: bool,
) -> Result<BTreeMap<u64, u64>> {
    let gt_ids: Vec<u64> = gt.tracks.keys().copied().collect();
    let pred_ids: Vec<u64> = pred.tracks.keys().copied().collect();
    let score = match protocol {
        Protocol::Vos => {
            let mut score = vec![vec![0.0; pred_ids.len()]; gt_ids.len()];
            for (i, g) in gt_ids.iter().enumerate() {
                let gtr = &gt.tracks[g];
                let Some(first) = gtr.first_frame() else { continue };
                for (j, p) in pred_ids.iter().enumerate() {
                    if !labels_match(pred, gt, *p, *g, class_aware) {
                        continue;
                    }
                    if let Some(m) = pred.tracks[p].frames.get(&first) {
                        score[i][j] = m.iou(&gtr.frames[&first])?;
                    }
                }
            }
            score
        }
        Protocol::Openworld | Protocol::Hota => st_iou_matrix(pred, gt, class_aware)?,
    };
    Ok(max_weight_pairs(&score)?
        .into_iter()
        .map(|(i, j)| (gt_ids[i], pred_ids[j]))
        .collect())
}

/// Recall thresholds `0.50, 0.55, ..., 0.95`.
pub fn recall_thresholds() -> Vec<f64> {
    (10..20).map(|k| f64::from(k) / 20.0).collect()
}

/// AR at each threshold: the largest number of one-to-one pairs with
/// spatio-temporal IoU at least `tau`, over the number of ground-truth
/// tracks. `cap` keeps only the highest-scoring predictions (unscored ones
/// last, then by id). `None` without ground truth.
pub fn average_recall(
    pred: &TrackTable,
    gt: &TrackTable,
    class_aware: bool,
    cap: Option<usize>,
) -> Result<Option<RecallScores>> {
    if gt.tracks.is_empty() {
        return Ok(None);
    }
    let pred = match cap {
        Some(k) if pred.tracks.len() > k => {
            let mut ranked: Vec<(&u64, Option<f64>)> =
                pred.tracks.iter().map(|(id, t)| (id, t.score)).collect();
            ranked.sort_by(|a, b| {
                let key = |s: Option<f64>| s.unwrap_or(f64::NEG_INFINITY);
                key(b.1).total_cmp(&key(a.1)).then(a.0.cmp(b.0))
            });
            let keep: Vec<u64> = ranked.into_iter().take(k).map(|(id, _)| *id).collect();
            TrackTable {
                dims: pred.dims,
                tracks: keep.iter().map(|id| (*id, pred.tracks[id].clone())).collect(),
            }
        }
        _ => pred.clone(),
    };
    let st = st_iou_matrix(&pred, gt, class_aware)?;
    let n = gt.tracks.len() as f64;
    let per_tau: Vec<(f64, f64)> = recall_thresholds()
        .into_iter()
        .map(|tau| {
            let hits: Vec<Vec<f64>> = st
                .iter()
                .map(|r| r.iter().map(|&v| if v >= tau { 1.0 } else { 0.0 }).collect())
                .collect();
            Ok((tau, max_weight_pairs(&hits)?.len() as f64 / n))
        })
        .collect::<Result<_>>()?;
    let at = |tau: f64| {
        per_tau
            .iter()
            .find(|(t, _)| (t - tau).abs() < 1e-12)
            .map(|(_, r)| *r)
            .unwrap_or(0.0)
    };
    Ok(Some(RecallScores {
        ar50: at(0.5),
        ar75: at(0.75),
        mar: per_tau.iter().map(|(_, r)| r).sum::<f64>() / per_tau.len() as f64,
        per_tau,
    }))
}

/// Checks that predictions fit the ground truth's frame size and range.
pub fn check_compatible(pred: &TrackTable, gt: &TrackTable, frames: Option<usize>) -> Result<()> {
    if let (Some(p), Some(g)) = (pred.dims, gt.dims) {
        if p != g {
            return Err(Error::ProtocolMismatch(format!(
                "prediction masks are {}x{}, ground truth is {}x{}",
                p.0, p.1, g.0, g.1
            )));
        }
    }
    let limit = frames.or(gt.last_frame().map(|f| f + 1));
    if let (Some(limit), Some(last)) = (limit, pred.last_frame()) {
        if last >= limit {
            return Err(Error::ProtocolMismatch(format!(
                "predictions reach frame {last}, the video has {limit} frames"
            )));
        }
    }
    if let (Some(limit), Some(last)) = (frames, gt.last_frame()) {
        if last >= limit {
            return Err(Error::ProtocolMismatch(format!(
                "ground truth reaches frame {last}, the video has {limit} frames"
            )));
        }
    }
    Ok(())
}

/// Computes every metric.
pub fn evaluate(pred: &TrackTable, gt: &TrackTable, opts: &EvalOptions) -> Result<MetricReport> {
    check_compatible(pred, gt, opts.frames)?;
    let matching = match_tracks(pred, gt, opts.protocol, opts.class_aware)?;
    let mut per_track = Vec::with_capacity(gt.tracks.len());
    for (g, gtr) in &gt.tracks {
        let pred_id = matching.get(g).copied();
        let ptr = pred_id.map(|p| &pred.tracks[&p]);
        let (j, f) = track_j_f(ptr, gtr)?;
        let st_iou = match ptr {
            Some(p) => st_mask_iou(p, gtr)?,
            None => 0.0,
        };
        per_track.push(TrackScore {
            gt_id: *g,
            label: gtr.label.clone(),
            pred_id,
            j,
            f,
            st_iou,
        });
    }
    let (j, f, jf) = if per_track.is_empty() {
        (None, None, None)
    } else {
        let n = per_track.len() as f64;
        let j = 100.0 * per_track.iter().map(|s| s.j).sum::<f64>() / n;
        let f = 100.0 * per_track.iter().map(|s| s.f).sum::<f64>() / n;
        (Some(j), Some(f), Some((j + f) / 2.0))
    };
    let recall = average_recall(pred, gt, opts.class_aware, None)?;
    let recall100 = average_recall(pred, gt, opts.class_aware, Some(100))?;
    let h = hota(pred, gt, opts.class_aware)?;
    let mut hota_subsets = BTreeMap::new();
    for (name, labels) in &opts.label_subsets {
        let keep = |l: &str| labels.iter().any(|x| x == l);
        let s = hota(&pred.filter_labels(keep), &gt.filter_labels(keep), opts.class_aware)?;
        hota_subsets.insert(name.clone(), s.hota);
    }
    Ok(MetricReport {
        protocol: opts.protocol,
        class_aware: opts.class_aware,
        gt_tracks: gt.tracks.len(),
        pred_tracks: pred.tracks.len(),
        j,
        f,
        jf,
        ar50: recall.as_ref().map(|r| r.ar50),
        ar75: recall.as_ref().map(|r| r.ar75),
        mar: recall.as_ref().map(|r| r.mar),
        mar100: recall100.map(|r| r.mar),
        hota: h.hota,
        det_a: h.det_a,
        ass_a: h.ass_a,
        loc_a: h.loc_a,
        id_switches: id_switches(pred, gt, opts.class_aware)?,
        hota_subsets,
        per_track,
        per_alpha: h.per_alpha,
    })
}
