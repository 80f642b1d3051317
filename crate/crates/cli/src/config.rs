use std::path::Path;

use rpn3d::detector::{InferConfig, ReferenceExtractor, TrainConfig};
use rpn3d::phantom::{ConstellationTemplate, DEFAULT_DIMS};
use rpn3d::prior::LandmarkGraph;
use rpn3d::AnchorSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    pub context_window: usize,
    pub context_offset: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        let r = ReferenceExtractor::default();
        ExtractorConfig { context_window: r.context_window, context_offset: r.context_offset }
    }
}

/// Every setting of a run. Written next to each command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub dims: [usize; 3],
    pub n: usize,
    /// Test volumes; when absent the 32-of-152 proportion is used.
    pub test: Option<usize>,
    pub anchors: AnchorSpec,
    pub extractor: ExtractorConfig,
    pub template: ConstellationTemplate,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub graph: LandmarkGraph,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            dims: DEFAULT_DIMS,
            n: 152,
            test: None,
            anchors: AnchorSpec::default(),
            extractor: ExtractorConfig::default(),
            template: ConstellationTemplate::default(),
            train: TrainConfig::default(),
            infer: InferConfig::default(),
            graph: LandmarkGraph::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn extractor(&self) -> ReferenceExtractor {
        ReferenceExtractor {
            stride: self.anchors.stride,
            context_window: self.extractor.context_window,
            context_offset: self.extractor.context_offset,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |e: rpn3d::Error| CliError::Config(e.to_string());
        self.anchors.validate().map_err(invalid)?;
        self.graph.validate().map_err(invalid)?;
        self.template.validate().map_err(invalid)?;
        self.train.validate().map_err(invalid)?;
        self.infer.validate().map_err(invalid)?;
        if self.n == 0 {
            return Err(CliError::Config("n must be positive".into()));
        }
        if self.test.is_some_and(|t| t > self.n) {
            return Err(CliError::Config(format!("test split {:?} exceeds n = {}", self.test, self.n)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(rpn3d::Error::from)?;
        s.push('\n');
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_fill_from_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"seed": 9, "train": {"steps": 12}}"#).unwrap();
        let cfg = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.steps, 12);
        assert_eq!(cfg.train.lr, RunConfig::default().train.lr);
        assert_eq!(cfg.n, 152);
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back.to_json().unwrap(), cfg.to_json().unwrap());
    }

    #[test]
    fn invalid_values_are_configuration_errors() {
        let mut cfg = RunConfig::default();
        cfg.train.lr = -1.0;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let cfg = RunConfig { test: Some(200), ..Default::default() };
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{ nope").unwrap();
        assert_eq!(RunConfig::load(Some(&path)).unwrap_err().exit_code(), 2);
    }
}
