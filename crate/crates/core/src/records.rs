//! Track NDJSON: the interchange format for tracker output and ground truth.
//!
//! One line per `(frame, track)`:
//!
//! ```json
//! {"frame": 3, "id": 1, "label": "cup", "box": [4.0, 5.0, 20.0, 18.0], "mask": {"w": 64, "h": 48, "counts": [...]}}
//! ```
//!
//! Lines are written sorted by frame, then id. An optional `"score"` carries
//! the track's objectness at that frame.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::mask::BinaryMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub frame: usize,
    pub id: u64,
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub mask: BinaryMask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Masks of one identity, keyed by frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TableTrack {
    pub label: String,
    pub frames: BTreeMap<usize, BinaryMask>,
    /// Mean per-frame score, when scores were recorded.
    pub score: Option<f64>,
}

impl TableTrack {
    pub fn first_frame(&self) -> Option<usize> {
        self.frames.keys().next().copied()
    }

    pub fn last_frame(&self) -> Option<usize> {
        self.frames.keys().next_back().copied()
    }
}

/// A set of tracks in evaluation form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackTable {
    /// Frame dimensions; `None` while the table is empty.
    pub dims: Option<(u32, u32)>,
    pub tracks: BTreeMap<u64, TableTrack>,
}

impl TrackTable {
    pub fn from_records(records: impl IntoIterator<Item = TrackRecord>) -> Result<Self> {
        let mut table = TrackTable::default();
        let mut scores: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
        for r in records {
            match table.dims {
                None => table.dims = Some(r.mask.dims()),
                Some(d) => crate::mask::check_dims(d, r.mask.dims())?,
            }
            let entry = table.tracks.entry(r.id).or_insert_with(|| TableTrack {
                label: r.label.clone(),
                ..TableTrack::default()
            });
            if entry.label != r.label {
                return Err(Error::Config(format!(
                    "track {} changes label from {:?} to {:?}",
                    r.id, entry.label, r.label
                )));
            }
            if entry.frames.insert(r.frame, r.mask).is_some() {
                return Err(Error::Config(format!(
                    "track {} has two records at frame {}",
                    r.id, r.frame
                )));
            }
            if let Some(s) = r.score {
                let acc = scores.entry(r.id).or_insert((0.0, 0));
                acc.0 += s;
                acc.1 += 1;
            }
        }
        for (id, (sum, n)) in scores {
            table.tracks.get_mut(&id).unwrap().score = Some(sum / n as f64);
        }
        Ok(table)
    }

    pub fn read_ndjson(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: TrackRecord = serde_json::from_str(line).map_err(|e| Error::BadRecord {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            records.push(r);
        }
        TrackTable::from_records(records).map_err(|e| Error::BadRecord {
            path: path.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        })
    }

    /// Last frame index present in any track.
    pub fn last_frame(&self) -> Option<usize> {
        self.tracks.values().filter_map(TableTrack::last_frame).max()
    }

    /// Keeps only tracks whose label passes `keep`.
    pub fn filter_labels(&self, keep: impl Fn(&str) -> bool) -> TrackTable {
        TrackTable {
            dims: self.dims,
            tracks: self
                .tracks
                .iter()
                .filter(|(_, t)| keep(&t.label))
                .map(|(id, t)| (*id, t.clone()))
                .collect(),
        }
    }
}

/// Writes records sorted by `(frame, id)`, one JSON object per line.
pub fn write_records(path: &Path, records: &[TrackRecord]) -> Result<()> {
    let mut sorted: Vec<&TrackRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.frame, r.id));
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in sorted {
        writeln!(w, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(frame: usize, id: u64, label: &str) -> TrackRecord {
        let bbox = BBox::from([1.0, 1.0, 3.0, 3.0]);
        TrackRecord {
            frame,
            id,
            label: label.into(),
            bbox,
            mask: BinaryMask::from_box(4, 4, &bbox),
            score: Some(0.5),
        }
    }

    #[test]
    fn table_from_records() {
        let t = TrackTable::from_records(vec![rec(0, 1, "a"), rec(1, 1, "a"), rec(1, 2, "b")]).unwrap();
        assert_eq!(t.dims, Some((4, 4)));
        assert_eq!(t.tracks.len(), 2);
        assert_eq!(t.tracks[&1].first_frame(), Some(0));
        assert_eq!(t.last_frame(), Some(1));
        assert_eq!(t.tracks[&1].score, Some(0.5));
        assert_eq!(t.filter_labels(|l| l == "b").tracks.len(), 1);
    }

    #[test]
    fn rejects_duplicates_and_relabels() {
        assert!(TrackTable::from_records(vec![rec(0, 1, "a"), rec(0, 1, "a")]).is_err());
        assert!(TrackTable::from_records(vec![rec(0, 1, "a"), rec(1, 1, "b")]).is_err());
    }

    #[test]
    fn record_json() {
        let mut r = rec(2, 7, "cup");
        r.score = None;
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"frame":2,"id":7,"label":"cup","box":[1.0,1.0,3.0,3.0],"mask":{"w":4,"h":4,"counts":[5,2,2,2,5]}}"#
        );
    }
}
