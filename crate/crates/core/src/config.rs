//! Run configuration, read from a flat TOML document.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::{DEFAULT_MAX_IN_FLIGHT, DEFAULT_MODEL, DEFAULT_TEMPERATURE};
use crate::dataset::{PretrainConfig, SanitizeConfig, DEFAULT_BANNED_PHRASES};
use crate::dedup::content_hash;
use crate::error::Error;
use crate::ocr::{DEFAULT_LINE_TOLERANCE, DEFAULT_MIN_AREA};
use crate::templates::Task;

/// Every knob of a run. Missing keys take their defaults; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeConfig {
    pub seed: u64,
    pub min_area: f64,
    pub tasks: BTreeSet<Task>,
    /// Distinct texts per document for detection; 0 removes the cap.
    pub detection_cap: usize,
    /// Tokens per document for recognition; 0 removes the cap.
    pub recognition_cap: usize,
    pub line_tolerance: f64,
    /// Extra line-delimited `{task, template}` records added to the builtin bank.
    pub templates: Option<PathBuf>,
    pub banned_phrases: Vec<String>,
    pub iou_floor: f64,
    pub max_merge: usize,
    /// File replacing the default conversation-generation instructions.
    pub instructions: Option<PathBuf>,
    pub model: String,
    pub temperature: f64,
    pub max_attempts: usize,
    pub max_in_flight: usize,
    pub request_timeout_secs: u64,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            min_area: DEFAULT_MIN_AREA,
            tasks: Task::ALL.into_iter().collect(),
            detection_cap: 10,
            recognition_cap: 10,
            line_tolerance: DEFAULT_LINE_TOLERANCE,
            templates: None,
            banned_phrases: DEFAULT_BANNED_PHRASES.iter().map(|s| s.to_string()).collect(),
            iou_floor: 0.3,
            max_merge: 4,
            instructions: None,
            model: DEFAULT_MODEL.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_attempts: 3,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            request_timeout_secs: 120,
        }
    }
}

fn cap(n: usize) -> Option<usize> {
    (n > 0).then_some(n)
}

impl ForgeConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), Error> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Usage(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("min_area", self.min_area)?;
        unit("iou_floor", self.iou_floor)?;
        if !(self.line_tolerance.is_finite() && self.line_tolerance >= 0.0) {
            return Err(Error::Usage(format!(
                "line_tolerance must be a non-negative number, got {}",
                self.line_tolerance
            )));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::Usage(format!("temperature must be non-negative, got {}", self.temperature)));
        }
        Ok(())
    }

    /// MD5 of the effective configuration in canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        content_hash(&json)
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            seed: self.seed,
            tasks: self.tasks.clone(),
            detection_cap: cap(self.detection_cap),
            recognition_cap: cap(self.recognition_cap),
            line_tolerance: self.line_tolerance,
        }
    }

    pub fn sanitize(&self) -> SanitizeConfig {
        SanitizeConfig {
            banned_phrases: self.banned_phrases.clone(),
            iou_floor: self.iou_floor,
            max_merge: self.max_merge,
            line_tolerance: self.line_tolerance,
        }
    }
}
