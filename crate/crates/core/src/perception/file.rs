//! Replay of recorded perception outputs.
//!
//! A recording is a directory holding a JSON manifest, a detections NDJSON
//! file (one line per frame), optional box-prompted hypotheses NDJSON and
//! one `.flo` file per frame pair and direction:
//!
//! ```json
//! {"frames": 2, "width": 64, "height": 48,
//!  "detections": "detections.ndjson",
//!  "flow_fwd_pattern": "fwd_%06d.flo", "flow_bwd_pattern": "bwd_%06d.flo",
//!  "hypotheses": "hypotheses.ndjson"}
//! ```
//!
//! Relative paths resolve against the manifest's directory. An optional
//! `"provider"` object overrides [`ProviderSettings`].

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    clip_best_detection, snap_to_detections, MaskHypothesis, Perception, ProviderSettings,
    RefinedBox,
};
use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geometry::BBox;
use crate::mask::check_dims;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub detections: String,
    pub flow_fwd_pattern: String,
    pub flow_bwd_pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypotheses: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<ProviderSettings>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    frame: usize,
    detections: Vec<Detection>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HypothesisRecord {
    frame: usize,
    prompt_box: [i64; 4],
    hypotheses: Vec<MaskHypothesis>,
}

/// Expands a printf-style `%d` / `%0Nd` frame placeholder.
pub fn format_frame_pattern(pattern: &str, index: usize) -> Result<String> {
    let start = pattern
        .find('%')
        .ok_or_else(|| Error::Config(format!("pattern {pattern:?} has no %d placeholder")))?;
    let rest = &pattern[start + 1..];
    let end = rest
        .find('d')
        .ok_or_else(|| Error::Config(format!("pattern {pattern:?} has no %d placeholder")))?;
    let spec = &rest[..end];
    let width = if spec.is_empty() {
        0
    } else if spec.starts_with('0') && spec.chars().all(|c| c.is_ascii_digit()) {
        spec.parse::<usize>().unwrap_or(0)
    } else {
        return Err(Error::Config(format!(
            "unsupported placeholder %{spec}d in {pattern:?}"
        )));
    };
    Ok(format!(
        "{}{:0width$}{}",
        &pattern[..start],
        index,
        &rest[end + 1..],
        width = width
    ))
}

/// Provider backed by recorded outputs. Read-only once loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct FileProvider {
    width: u32,
    height: u32,
    detections: Vec<Vec<Detection>>,
    fwd: Vec<FlowField>,
    bwd: Vec<FlowField>,
    hypotheses: BTreeMap<(usize, [i64; 4]), Vec<MaskHypothesis>>,
    settings: ProviderSettings,
}

impl FileProvider {
    /// Assembles a provider from in-memory records, validating dimensions.
    /// `fwd[t]` maps frame `t` to `t + 1`, `bwd[t]` maps `t + 1` back to `t`.
    pub fn from_parts(
        width: u32,
        height: u32,
        detections: Vec<Vec<Detection>>,
        fwd: Vec<FlowField>,
        bwd: Vec<FlowField>,
        hypotheses: BTreeMap<(usize, [i64; 4]), Vec<MaskHypothesis>>,
        settings: ProviderSettings,
    ) -> Result<Self> {
        let frames = detections.len();
        if frames == 0 {
            return Err(Error::Config("a video needs at least one frame".into()));
        }
        if fwd.len() != frames - 1 || bwd.len() != frames - 1 {
            return Err(Error::Config(format!(
                "{frames} frames need {} flow fields per direction, got {} forward and {} backward",
                frames - 1,
                fwd.len(),
                bwd.len()
            )));
        }
        for f in fwd.iter().chain(&bwd) {
            check_dims((width, height), f.dims())?;
        }
        for dets in &detections {
            for d in dets {
                d.validate(width, height)?;
            }
        }
        for ((frame, _), hyps) in &hypotheses {
            if *frame >= frames {
                return Err(Error::FrameOutOfRange {
                    frame: *frame,
                    frames,
                });
            }
            for h in hyps {
                check_dims((width, height), h.mask.dims())?;
                if let Some(bp) = &h.backprojection {
                    check_dims((width, height), bp.dims())?;
                }
            }
        }
        Ok(FileProvider {
            width,
            height,
            detections,
            fwd,
            bwd,
            hypotheses,
            settings,
        })
    }

    /// Loads a recording from its manifest.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::BadRecord {
            path: manifest_path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        Self::load_manifest(&manifest, base)
    }

    pub fn load_manifest(manifest: &Manifest, base: &Path) -> Result<Self> {
        let frames = manifest.frames;
        if frames == 0 {
            return Err(Error::Config("manifest declares zero frames".into()));
        }
        let det_path = base.join(&manifest.detections);
        let detections = read_detections(&det_path, frames, manifest.width, manifest.height)?;

        let mut fwd = Vec::with_capacity(frames - 1);
        let mut bwd = Vec::with_capacity(frames - 1);
        for t in 0..frames - 1 {
            for (pattern, out) in [
                (&manifest.flow_fwd_pattern, &mut fwd),
                (&manifest.flow_bwd_pattern, &mut bwd),
            ] {
                let path = base.join(format_frame_pattern(pattern, t)?);
                if !path.exists() {
                    return Err(Error::MissingFrame { frame: t, path });
                }
                let f = FlowField::read_flo(&path)?;
                if f.dims() != (manifest.width, manifest.height) {
                    return Err(Error::BadFlow {
                        path,
                        reason: format!(
                            "{}x{} field in a {}x{} video",
                            f.width(),
                            f.height(),
                            manifest.width,
                            manifest.height
                        ),
                    });
                }
                out.push(f);
            }
        }

        let hypotheses = match &manifest.hypotheses {
            Some(name) => read_hypotheses(&base.join(name), frames)?,
            None => BTreeMap::new(),
        };
        Self::from_parts(
            manifest.width,
            manifest.height,
            detections,
            fwd,
            bwd,
            hypotheses,
            manifest.provider.unwrap_or_default(),
        )
    }

    pub fn settings(&self) -> &ProviderSettings {
        &self.settings
    }

    pub fn with_settings(mut self, settings: ProviderSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn detections(&self, t: usize) -> &[Detection] {
        &self.detections[t]
    }

    pub fn hypotheses(&self) -> &BTreeMap<(usize, [i64; 4]), Vec<MaskHypothesis>> {
        &self.hypotheses
    }

    /// Writes the recording under `dir` with the default file names and
    /// returns the manifest path. Output bytes depend only on the records.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest {
            frames: self.detections.len(),
            width: self.width,
            height: self.height,
            detections: "detections.ndjson".into(),
            flow_fwd_pattern: "fwd_%06d.flo".into(),
            flow_bwd_pattern: "bwd_%06d.flo".into(),
            hypotheses: Some("hypotheses.ndjson".into()),
            provider: Some(self.settings),
        };

        let det_path = dir.join(&manifest.detections);
        let mut w = create(&det_path)?;
        for (frame, dets) in self.detections.iter().enumerate() {
            let rec = DetectionRecord {
                frame,
                detections: dets.clone(),
            };
            writeln!(w, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(&det_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&det_path, e))?;

        let hyp_path = dir.join(manifest.hypotheses.as_deref().unwrap());
        let mut w = create(&hyp_path)?;
        for ((frame, prompt_box), hyps) in &self.hypotheses {
            let rec = HypothesisRecord {
                frame: *frame,
                prompt_box: *prompt_box,
                hypotheses: hyps.clone(),
            };
            writeln!(w, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(&hyp_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&hyp_path, e))?;

        for t in 0..self.fwd.len() {
            self.fwd[t].write_flo(&dir.join(format_frame_pattern(&manifest.flow_fwd_pattern, t)?))?;
            self.bwd[t].write_flo(&dir.join(format_frame_pattern(&manifest.flow_bwd_pattern, t)?))?;
        }

        let manifest_path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
        Ok(manifest_path)
    }

    fn check_frame(&self, t: usize) -> Result<()> {
        let frames = self.detections.len();
        if t >= frames {
            return Err(Error::FrameOutOfRange { frame: t, frames });
        }
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn read_detections(path: &Path, frames: usize, width: u32, height: u32) -> Result<Vec<Vec<Detection>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut per_frame: Vec<Option<Vec<Detection>>> = vec![None; frames];
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::BadRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let rec: DetectionRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if rec.frame >= frames {
            return Err(bad(format!("frame {} beyond the {frames}-frame video", rec.frame)));
        }
        for d in &rec.detections {
            d.validate(width, height)
                .map_err(|e| bad(format!("frame {}: {e}", rec.frame)))?;
        }
        if per_frame[rec.frame].replace(rec.detections).is_some() {
            return Err(bad(format!("duplicate record for frame {}", rec.frame)));
        }
    }
    per_frame
        .into_iter()
        .enumerate()
        .map(|(frame, d)| {
            d.ok_or_else(|| Error::MissingFrame {
                frame,
                path: path.to_path_buf(),
            })
        })
        .collect()
}

fn read_hypotheses(
    path: &Path,
    frames: usize,
) -> Result<BTreeMap<(usize, [i64; 4]), Vec<MaskHypothesis>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::BadRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let rec: HypothesisRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if rec.frame >= frames {
            return Err(bad(format!("frame {} beyond the {frames}-frame video", rec.frame)));
        }
        if rec.hypotheses.iter().any(|h| h.mask.is_empty()) {
            return Err(bad("empty hypothesis mask".into()));
        }
        // first record for a bucket wins
        out.entry((rec.frame, rec.prompt_box)).or_insert(rec.hypotheses);
    }
    Ok(out)
}

impl Perception for FileProvider {
    fn frame_count(&self) -> usize {
        self.detections.len()
    }

    fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
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
        if let Some(hyps) = self.hypotheses.get(&(t_next, prompt.rounded())) {
            return Ok(hyps.clone());
        }
        Ok(clip_best_detection(
            &self.detections[t_next],
            prompt,
            &self.settings,
        ))
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BinaryMask;

    #[test]
    fn frame_patterns() {
        assert_eq!(format_frame_pattern("fwd_%06d.flo", 7).unwrap(), "fwd_000007.flo");
        assert_eq!(format_frame_pattern("f%d.flo", 12).unwrap(), "f12.flo");
        assert!(format_frame_pattern("fwd.flo", 1).is_err());
        assert!(format_frame_pattern("f%xd.flo", 1).is_err());
    }

    fn two_frame_provider() -> FileProvider {
        let bbox = BBox::from([2.0, 2.0, 6.0, 6.0]);
        let det = Detection {
            bbox,
            objectness: 0.9,
            label: "cube".into(),
            mask: BinaryMask::from_box(8, 8, &bbox),
            feature: Some(vec![1.0, 0.0]),
        };
        FileProvider::from_parts(
            8,
            8,
            vec![vec![det], vec![]],
            vec![FlowField::zeros(8, 8)],
            vec![FlowField::zeros(8, 8)],
            BTreeMap::new(),
            ProviderSettings::default(),
        )
        .unwrap()
    }

    #[test]
    fn detections_per_frame() {
        let p = two_frame_provider();
        assert_eq!(p.detect(0, &[]).unwrap().len(), 1);
        assert!(p.detect(1, &[]).unwrap().is_empty());
        assert!(matches!(p.detect(2, &[]), Err(Error::FrameOutOfRange { .. })));
    }

    #[test]
    fn no_data_means_no_hypotheses() {
        let p = two_frame_provider();
        assert!(p.segment(1, &BBox::from([2.0, 2.0, 6.0, 6.0]), 0).unwrap().is_empty());
    }

    #[test]
    fn recorded_hypotheses_are_returned_verbatim() {
        let mut p = two_frame_provider();
        let mask = BinaryMask::from_box(8, 8, &BBox::from([1.0, 1.0, 3.0, 3.0]));
        let hyps = vec![MaskHypothesis {
            mask: mask.clone(),
            backprojection: Some(mask),
            quality: 0.25,
        }];
        p.hypotheses.insert((1, [2, 2, 6, 6]), hyps.clone());
        // bucketed by rounding
        assert_eq!(p.segment(1, &BBox::from([2.2, 1.9, 6.4, 5.6]), 0).unwrap(), hyps);
    }

    #[test]
    fn rejects_flow_count_mismatch() {
        let err = FileProvider::from_parts(
            8,
            8,
            vec![vec![], vec![]],
            vec![],
            vec![],
            BTreeMap::new(),
            ProviderSettings::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
