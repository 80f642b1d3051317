use std::fs;
use std::path::{Path, PathBuf};

use rpn3d::assign::GroundTruth;
use rpn3d::detector::{FeatureExtractor, FeatureMap};
use rpn3d::phantom::VolumeSpec;
use rpn3d::volume::{read_header, read_volume, Volume};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub dims: [usize; 3],
    pub train: Vec<VolumeSpec>,
    pub test: Vec<VolumeSpec>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Manifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        if !path.exists() {
            return Err(CliError::Missing {
                what: "dataset manifest",
                path,
                hint: "generate a dataset with `rpn3d synth --out <dir>` or point --data at one",
            });
        }
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(serde_json::from_str(&text).map_err(rpn3d::Error::from)?)
    }

    pub fn names(&self, split: Split) -> Vec<&str> {
        let specs = match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        };
        specs.iter().map(|s| s.name.as_str()).collect()
    }
}

pub fn ground_truths(dir: &Path, names: &[&str]) -> Result<Vec<GroundTruth>> {
    names.iter().map(|n| Ok(read_header(dir, n)?.ground_truth()?)).collect()
}

pub fn load_volume(dir: &Path, name: &str) -> Result<(Volume, GroundTruth)> {
    let (v, h) = read_volume(dir, name)?;
    Ok((v, h.ground_truth()?))
}

/// Features of each named volume plus the shared voxel spacing; voxels are
/// released right after extraction.
pub fn load_features(dir: &Path, names: &[&str], extractor: &dyn FeatureExtractor) -> Result<(Vec<(FeatureMap, GroundTruth)>, f64)> {
    let mut spacing = None;
    let mut out = Vec::with_capacity(names.len());
    for n in names {
        let (v, gt) = load_volume(dir, n)?;
        match spacing {
            None => spacing = Some(v.spacing_mm),
            Some(s) if s != v.spacing_mm => {
                return Err(CliError::Config(format!("{n} has spacing {} mm, expected {s} mm", v.spacing_mm)));
            }
            Some(_) => {}
        }
        out.push((extractor.extract(&v)?, gt));
    }
    Ok((out, spacing.unwrap_or(rpn3d::phantom::DEFAULT_SPACING_MM)))
}

/// Refuses a non-empty directory unless `force`, then makes sure it exists.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
        if entries.next().is_some() && !force {
            return Err(CliError::NotEmpty(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path, what: &'static str, hint: &'static str) -> Result<String> {
    if !path.exists() {
        return Err(CliError::Missing { what, path: path.to_path_buf(), hint });
    }
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(rpn3d::Error::from)?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dir_guard() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("new");
        prepare_output_dir(&out, false).unwrap();
        prepare_output_dir(&out, false).unwrap();
        fs::write(out.join("x"), "1").unwrap();
        assert!(matches!(prepare_output_dir(&out, false), Err(CliError::NotEmpty(_))));
        prepare_output_dir(&out, true).unwrap();
    }

    #[test]
    fn missing_manifest_has_a_hint() {
        let dir = tempfile::tempdir().unwrap();
        let err = Manifest::load(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(err.to_string().contains("rpn3d synth"));
    }
}
