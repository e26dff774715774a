use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::hungarian::max_weight_pairs;
use crate::error::Result;
use crate::records::TrackTable;

/// HOTA components at one localization threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HotaAlpha {
    pub alpha: f64,
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub loc_a: f64,
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
}

/// HOTA averaged over `alpha = 0.05, 0.10, ..., 0.95`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotaScores {
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    /// Diagnostic only.
    pub loc_a: f64,
    pub per_alpha: Vec<HotaAlpha>,
}

/// The localization thresholds, `k / 20` for `k = 1..=19`.
pub fn hota_alphas() -> Vec<f64> {
    (1..20).map(|k| f64::from(k) / 20.0).collect()
}

/// One matched detection pair of a frame.
struct Match {
    gt: u64,
    pred: u64,
    iou: f64,
}

/// Per-frame IoU-maximizing matches between `gt` and `pred`.
/// With `class_aware`, pairs of different labels never match.
fn frame_matches(pred: &TrackTable, gt: &TrackTable, class_aware: bool) -> Result<Vec<Vec<Match>>> {
    let frames: BTreeSet<usize> = gt
        .tracks
        .values()
        .chain(pred.tracks.values())
        .flat_map(|t| t.frames.keys().copied())
        .collect();
    let mut out = Vec::with_capacity(frames.len());
    for t in frames {
        let g: Vec<(u64, _)> = gt
            .tracks
            .iter()
            .filter_map(|(id, tr)| tr.frames.get(&t).map(|m| (*id, (tr, m))))
            .collect();
        let p: Vec<(u64, _)> = pred
            .tracks
            .iter()
            .filter_map(|(id, tr)| tr.frames.get(&t).map(|m| (*id, (tr, m))))
            .collect();
        let mut score = vec![vec![0.0; p.len()]; g.len()];
        for (i, (_, (gtr, gm))) in g.iter().enumerate() {
            for (j, (_, (ptr, pm))) in p.iter().enumerate() {
                if class_aware && gtr.label != ptr.label {
                    continue;
                }
                score[i][j] = pm.iou(gm)?;
            }
        }
        out.push(
            max_weight_pairs(&score)?
                .into_iter()
                .map(|(i, j)| Match {
                    gt: g[i].0,
                    pred: p[j].0,
                    iou: score[i][j],
                })
                .collect(),
        );
    }
    Ok(out)
}

/// Higher-order tracking accuracy.
///
/// Each frame is matched once, maximizing total mask IoU; at threshold
/// `alpha` the matched pairs with IoU at least `alpha` are the true
/// positives. DetA is `TP / (TP + FN + FP)`; AssA averages, over true
/// positives, `TPA / (TPA + FNA + FPA)` of the identity pair involved.
/// Empty ground truth and empty predictions score 1; exactly one of them
/// empty scores 0.
pub fn hota(pred: &TrackTable, gt: &TrackTable, class_aware: bool) -> Result<HotaScores> {
    let gt_dets: BTreeMap<u64, u64> = gt
        .tracks
        .iter()
        .map(|(id, t)| (*id, t.frames.len() as u64))
        .collect();
    let pred_dets: BTreeMap<u64, u64> = pred
        .tracks
        .iter()
        .map(|(id, t)| (*id, t.frames.len() as u64))
        .collect();
    let n_gt: u64 = gt_dets.values().sum();
    let n_pred: u64 = pred_dets.values().sum();
    let alphas = hota_alphas();

    let constant = |v: f64| HotaScores {
        hota: v,
        det_a: v,
        ass_a: v,
        loc_a: v,
        per_alpha: alphas
            .iter()
            .map(|&alpha| HotaAlpha {
                alpha,
                hota: v,
                det_a: v,
                ass_a: v,
                loc_a: v,
                tp: 0,
                fn_: n_gt,
                fp: n_pred,
            })
            .collect(),
    };
    if n_gt == 0 && n_pred == 0 {
        return Ok(constant(1.0));
    }
    if n_gt == 0 || n_pred == 0 {
        return Ok(constant(0.0));
    }

    let matches = frame_matches(pred, gt, class_aware)?;
    let mut per_alpha = Vec::with_capacity(alphas.len());
    for &alpha in &alphas {
        let mut pairs: BTreeMap<(u64, u64), u64> = BTreeMap::new();
        let mut tp = 0u64;
        let mut iou_sum = 0.0;
        for m in matches.iter().flatten().filter(|m| m.iou >= alpha) {
            *pairs.entry((m.gt, m.pred)).or_default() += 1;
            tp += 1;
            iou_sum += m.iou;
        }
        let fn_ = n_gt - tp;
        let fp = n_pred - tp;
        let det_a = tp as f64 / (tp + fn_ + fp) as f64;
        let (ass_a, loc_a) = if tp == 0 {
            (0.0, 0.0)
        } else {
            let mut acc = 0.0;
            for (&(g, p), &tpa) in &pairs {
                let fna = gt_dets[&g] - tpa;
                let fpa = pred_dets[&p] - tpa;
                acc += tpa as f64 * tpa as f64 / (tpa + fna + fpa) as f64;
            }
            (acc / tp as f64, iou_sum / tp as f64)
        };
        per_alpha.push(HotaAlpha {
            alpha,
            hota: (det_a * ass_a).sqrt(),
            det_a,
            ass_a,
            loc_a,
            tp,
            fn_,
            fp,
        });
    }
    let mean = |f: fn(&HotaAlpha) -> f64| per_alpha.iter().map(f).sum::<f64>() / per_alpha.len() as f64;
    Ok(HotaScores {
        hota: mean(|a| a.hota),
        det_a: mean(|a| a.det_a),
        ass_a: mean(|a| a.ass_a),
        loc_a: mean(|a| a.loc_a),
        per_alpha,
    })
}

/// Identity switches: per frame, ground truth is matched to predictions by
/// IoU (pairs of at least 0.5); a switch is counted whenever a ground-truth
/// track is matched to a different prediction than at its previous matched
/// frame.
pub fn id_switches(pred: &TrackTable, gt: &TrackTable, class_aware: bool) -> Result<u64> {
    let mut last: BTreeMap<u64, u64> = BTreeMap::new();
    let mut switches = 0;
    for frame in frame_matches(pred, gt, class_aware)? {
        for m in frame.iter().filter(|m| m.iou >= 0.5) {
            if let Some(prev) = last.insert(m.gt, m.pred) {
                if prev != m.pred {
                    switches += 1;
                }
            }
        }
    }
    Ok(switches)
}
