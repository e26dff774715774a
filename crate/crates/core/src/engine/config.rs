use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thresholds, limits and ablation switches of the tracker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    /// Detection confidence needed to start a track.
    pub lambda_c: f64,
    /// Lowered confidence threshold for prompted categories.
    pub lambda_c_prompted: f64,
    /// Minimum forward-backward consistent fraction for a track to survive.
    pub lambda_flow: f64,
    /// Minimum refined objectness for a track to survive; `None` means
    /// `lambda_c`.
    pub lambda_obj: Option<f64>,
    /// A detection spawns only if its mask IoU with every track is below
    /// this.
    pub lambda_spawn: f64,
    /// Minimum appearance similarity for re-identification. Values above 1
    /// disable merging.
    pub lambda_reid: f64,
    /// Frames after birth during which a new track may be re-identified.
    pub t_reid: usize,
    /// Maximum number of simultaneously active tracks.
    pub max_tracks: usize,
    /// Appearance vectors kept per track.
    pub feature_window: usize,
    /// Categories requested by the user. When nonempty, detections of other
    /// categories are ignored and `lambda_c_prompted` applies.
    pub prompts: Vec<String>,
    pub enable_motion_propagation: bool,
    pub enable_refinement: bool,
    pub enable_cycle_consistency: bool,
    pub enable_box_adaptation: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            lambda_c: 0.5,
            lambda_c_prompted: 0.3,
            lambda_flow: 0.25,
            lambda_obj: None,
            lambda_spawn: 0.3,
            lambda_reid: 0.7,
            t_reid: 5,
            max_tracks: 10,
            feature_window: 5,
            prompts: Vec::new(),
            enable_motion_propagation: true,
            enable_refinement: true,
            enable_cycle_consistency: true,
            enable_box_adaptation: true,
        }
    }
}

impl EngineConfig {
    pub fn lambda_obj(&self) -> f64 {
        self.lambda_obj.unwrap_or(self.lambda_c)
    }

    /// Confidence threshold for a label, or `None` if the label is filtered
    /// out by the prompt list.
    pub fn threshold_for(&self, label: &str) -> Option<f64> {
        if self.prompts.is_empty() {
            Some(self.lambda_c)
        } else if self.prompts.iter().any(|p| p == label) {
            Some(self.lambda_c_prompted)
        } else {
            None
        }
    }

    /// Copy with `lambda_obj` made explicit, as written to resolved configs.
    pub fn resolved(&self) -> EngineConfig {
        EngineConfig {
            lambda_obj: Some(self.lambda_obj()),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("lambda_c", self.lambda_c),
            ("lambda_c_prompted", self.lambda_c_prompted),
            ("lambda_flow", self.lambda_flow),
            ("lambda_obj", self.lambda_obj()),
            ("lambda_spawn", self.lambda_spawn),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if !self.lambda_reid.is_finite() || self.lambda_reid < -1.0 {
            return Err(Error::Config(format!(
                "lambda_reid = {} must be a finite similarity >= -1",
                self.lambda_reid
            )));
        }
        if self.max_tracks == 0 {
            return Err(Error::Config("max_tracks must be at least 1".into()));
        }
        if self.feature_window == 0 {
            return Err(Error::Config("feature_window must be at least 1".into()));
        }
        Ok(())
    }
}
