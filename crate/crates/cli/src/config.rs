//! Experiment configuration: which datasets play which role, how the model
//! is parameterized, and where the artifacts go.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bandboost_core::dsp::PipelineConfig;
use bandboost_core::gbt::cv::ParamGrid;
use bandboost_core::gbt::GbtParams;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("experiment {experiment} requires the `{role}` dataset role")]
    MissingRole {
        experiment: ExperimentId,
        role: &'static str,
    },
    #[error("{0}")]
    BadConfig(String),
    #[error(transparent)]
    Core(#[from] bandboost_core::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// The six study designs. 1a/1b are binary case-vs-own-controls runs; the
/// rest are three-class variations on how controls enter the cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentId {
    #[serde(rename = "1a")]
    RestBinary,
    #[serde(rename = "1b")]
    TaskBinary,
    #[serde(rename = "2")]
    MergedMulticlass,
    #[serde(rename = "3")]
    ExternalControls,
    #[serde(rename = "4")]
    ScreenAndExclude,
    #[serde(rename = "5")]
    AdjustAndRetain,
    #[serde(rename = "6")]
    CalmControlPool,
}

impl ExperimentId {
    pub fn code(self) -> &'static str {
        match self {
            ExperimentId::RestBinary => "1a",
            ExperimentId::TaskBinary => "1b",
            ExperimentId::MergedMulticlass => "2",
            ExperimentId::ExternalControls => "3",
            ExperimentId::ScreenAndExclude => "4",
            ExperimentId::AdjustAndRetain => "5",
            ExperimentId::CalmControlPool => "6",
        }
    }

    fn required_roles(self) -> &'static [&'static str] {
        match self {
            ExperimentId::RestBinary => &["rest"],
            ExperimentId::TaskBinary => &["task"],
            ExperimentId::MergedMulticlass => &["rest", "task"],
            ExperimentId::ExternalControls => &["rest", "task", "external_controls"],
            ExperimentId::ScreenAndExclude
            | ExperimentId::AdjustAndRetain
            | ExperimentId::CalmControlPool => {
                &["rest", "task", "external_controls", "stress"]
            }
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Recording manifests by role. `rest` and `task` are case cohorts that ship
/// their own controls (label 0); `external_controls` is a pool of label-0
/// subjects; `stress` is a binary cohort labeled calm (0) / stressed (1).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetRoles {
    pub rest: Option<PathBuf>,
    pub task: Option<PathBuf>,
    pub external_controls: Option<PathBuf>,
    pub stress: Option<PathBuf>,
}

impl DatasetRoles {
    fn get(&self, role: &str) -> Option<&PathBuf> {
        match role {
            "rest" => self.rest.as_ref(),
            "task" => self.task.as_ref(),
            "external_controls" => self.external_controls.as_ref(),
            "stress" => self.stress.as_ref(),
            _ => None,
        }
    }
}

/// Either fixed training parameters or a grid searched by subject-level
/// cross-validation before the final fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GbtSetting {
    Params(GbtParams),
    Grid(ParamGrid),
}

impl Default for GbtSetting {
    fn default() -> Self {
        GbtSetting::Grid(ParamGrid::default())
    }
}

/// Where experiment 5 takes its band correction from: group means of the
/// labeled stress cohort (default, mirrors the screening model's training
/// data) or the cohort's own screened split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustmentSource {
    #[default]
    StressDataset,
    CohortScreen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment_id: ExperimentId,
    pub datasets: DatasetRoles,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub gbt: GbtSetting,
    #[serde(default = "default_threshold")]
    pub stress_threshold: f64,
    #[serde(default)]
    pub adjustment_source: AdjustmentSource,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
}

fn default_threshold() -> f64 {
    bandboost_core::stressguard::DEFAULT_STRESS_THRESHOLD
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bandboost_core::Error::io(path, e))?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| bandboost_core::Error::MalformedJson {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        for &role in self.experiment_id.required_roles() {
            if self.datasets.get(role).is_none() {
                return Err(CliError::MissingRole {
                    experiment: self.experiment_id,
                    role,
                });
            }
        }
        if !(0.0..=1.0).contains(&self.stress_threshold) {
            return Err(CliError::BadConfig(format!(
                "stress_threshold {} outside [0, 1]",
                self.stress_threshold
            )));
        }
        self.pipeline.validate().map_err(CliError::Core)?;
        if let GbtSetting::Params(p) = &self.gbt {
            p.validate().map_err(CliError::Core)?;
        }
        Ok(())
    }

    pub fn role_path(&self, role: &'static str) -> CliResult<&PathBuf> {
        self.datasets.get(role).ok_or(CliError::MissingRole {
            experiment: self.experiment_id,
            role,
        })
    }

    /// SHA-256 over the canonical JSON form. Reports carry this so a result
    /// can be traced back to the exact configuration that produced it.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialization cannot fail");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            use fmt::Write;
            write!(hex, "{byte:02x}").expect("writing to a String cannot fail");
        }
        hex
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(id: &str) -> String {
        format!(
            r#"{{
                "experiment_id": "{id}",
                "datasets": {{
                    "rest": "rest/manifest.json",
                    "task": "task/manifest.json",
                    "external_controls": "ext/manifest.json",
                    "stress": "stress/manifest.json"
                }},
                "out_dir": "out"
            }}"#
        )
    }

    #[test]
    fn parses_with_defaults() {
        let config: ExperimentConfig = serde_json::from_str(&minimal("4")).unwrap();
        assert_eq!(config.experiment_id, ExperimentId::ScreenAndExclude);
        assert_eq!(config.stress_threshold, 0.5);
        assert_eq!(config.adjustment_source, AdjustmentSource::StressDataset);
        assert_eq!(config.seed, 0);
        assert!(matches!(config.gbt, GbtSetting::Grid(_)));
        config.validate().unwrap();
    }

    #[test]
    fn missing_role_is_reported() {
        let mut config: ExperimentConfig = serde_json::from_str(&minimal("4")).unwrap();
        config.datasets.stress = None;
        let err = config.validate().unwrap_err();
        assert!(matches!(
            err,
            CliError::MissingRole { role: "stress", .. }
        ));
        // Experiment 2 does not need the stress cohort.
        config.experiment_id = ExperimentId::MergedMulticlass;
        config.validate().unwrap();
    }

    #[test]
    fn id_codes_round_trip() {
        for code in ["1a", "1b", "2", "3", "4", "5", "6"] {
            let id: ExperimentId = serde_json::from_str(&format!("\"{code}\"")).unwrap();
            assert_eq!(id.code(), code);
            assert_eq!(serde_json::to_string(&id).unwrap(), format!("\"{code}\""));
        }
        assert!(serde_json::from_str::<ExperimentId>("\"7\"").is_err());
    }

    #[test]
    fn hash_tracks_content_not_instance() {
        let a: ExperimentConfig = serde_json::from_str(&minimal("3")).unwrap();
        let b: ExperimentConfig = serde_json::from_str(&minimal("3")).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = b.clone();
        c.seed = 1;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn explicit_params_are_validated() {
        let mut config: ExperimentConfig = serde_json::from_str(&minimal("3")).unwrap();
        let params = GbtParams {
            learning_rate: -1.0,
            ..GbtParams::default()
        };
        config.gbt = GbtSetting::Params(params);
        assert!(config.validate().is_err());
    }
}
