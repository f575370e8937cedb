//! Run configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use specpipe_core::planner::{SearchSpace, WorkloadScope};
use specpipe_core::{HardwareProfile, ModelSpec, PlacementOptions, Policy, Preset, PresetName, Workload};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub hardware: HardwareProfile,
    pub target_model: ModelSpec,
    pub draft_model: ModelSpec,
    pub workload: Workload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<Policy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_space: Option<SearchSpace>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Sequences charged per policy: one rotation (default) or the
    /// workload's fixed total.
    #[serde(default)]
    pub workload_scope: WorkloadScope,
    #[serde(default)]
    pub placement: PlacementOptions,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(String),
    /// `message` starts with the field name.
    #[error("config: {section}.{message}")]
    Invalid {
        section: &'static str,
        field: &'static str,
        message: String,
    },
    #[error("config: `{0}` is required for this command")]
    Missing(&'static str),
    #[error("config: `{0}` is not allowed for this command")]
    Unexpected(&'static str),
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                ConfigError::Parse(inner.to_string())
            } else {
                ConfigError::Parse(format!("{path}: {inner}"))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the file and returns the config along with its raw bytes.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), ConfigError> {
        let bytes = std::fs::read(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| ConfigError::Parse("file is not UTF-8".into()))?;
        Ok((Self::from_json(&text)?, bytes))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |section: &'static str| {
            move |e: specpipe_core::ValidationError| ConfigError::Invalid {
                section,
                field: e.field(),
                message: e.to_string(),
            }
        };
        self.hardware.validate().map_err(invalid("hardware"))?;
        self.target_model.validate().map_err(invalid("target_model"))?;
        self.draft_model.validate().map_err(invalid("draft_model"))?;
        self.workload.validate().map_err(invalid("workload"))?;
        if let Some(p) = &self.policy {
            p.validate().map_err(invalid("policy"))?;
        }
        if let Some(s) = &self.search_space {
            s.validate().map_err(|e| ConfigError::Parse(e.to_string()))?;
        }
        if !(self.placement.pinned_host_factor > 0.0) {
            return Err(ConfigError::Invalid {
                section: "placement",
                field: "pinned_host_factor",
                message: "pinned_host_factor: must be > 0".into(),
            });
        }
        Ok(())
    }

    pub fn require_policy(&self) -> Result<Policy, ConfigError> {
        if self.search_space.is_some() {
            return Err(ConfigError::Unexpected("search_space"));
        }
        self.policy.ok_or(ConfigError::Missing("policy"))
    }

    pub fn require_search_space(&self) -> Result<&SearchSpace, ConfigError> {
        if self.policy.is_some() {
            return Err(ConfigError::Unexpected("policy"));
        }
        self.search_space.as_ref().ok_or(ConfigError::Missing("search_space"))
    }

    /// A ready-to-run config for one preset; searches the default grid
    /// unless a policy is given.
    pub fn for_preset(name: PresetName, acceptance_p: f64, policy: Option<Policy>) -> Self {
        let Preset {
            hardware,
            target,
            draft,
        } = specpipe_core::preset(name);
        let bs_decoding = match name {
            PresetName::Env1Mixtral8x7b => 192,
            PresetName::Env2Mixtral8x22b => 64,
        };
        RunConfig {
            hardware,
            target_model: target,
            draft_model: draft,
            workload: Workload {
                total_sequences: 2 * bs_decoding,
                l_input: 503,
                max_new_tokens: 16,
                acceptance_p,
            },
            search_space: policy.is_none().then(SearchSpace::default),
            policy,
            seed: 0,
            output_dir: default_output_dir(),
            workload_scope: WorkloadScope::default(),
            placement: PlacementOptions::default(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> serde_json::Value {
        serde_json::from_str(&RunConfig::for_preset(PresetName::Env1Mixtral8x7b, 0.7, None).to_json()).unwrap()
    }

    #[test]
    fn preset_config_round_trips() {
        let cfg = RunConfig::for_preset(PresetName::Env2Mixtral8x22b, 0.6, Some(Policy::new(16, 64, 8, 8)));
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let mut v = base();
        v["hardware"]["pcie_lanes"] = 16.into();
        let err = RunConfig::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("hardware") && err.contains("pcie_lanes"), "{err}");

        let mut v = base();
        v["colour"] = "red".into();
        let err = RunConfig::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
    }

    #[test]
    fn bad_value_is_named() {
        let mut v = base();
        v["hardware"]["c2g_bandwidth"] = 0.0.into();
        let err = RunConfig::from_json(&v.to_string()).unwrap_err().to_string();
        assert_eq!(err, "config: hardware.c2g_bandwidth: bandwidth must be > 0");

        let mut v = base();
        v["workload"]["acceptance_p"] = "high".into();
        let err = RunConfig::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("workload.acceptance_p"), "{err}");
    }

    #[test]
    fn policy_xor_space() {
        let cfg = RunConfig::for_preset(PresetName::Env1Mixtral8x7b, 0.7, None);
        assert!(cfg.require_search_space().is_ok());
        assert!(matches!(cfg.require_policy(), Err(ConfigError::Unexpected("search_space"))));
        let cfg = RunConfig::for_preset(PresetName::Env1Mixtral8x7b, 0.7, Some(Policy::new(80, 192, 8, 8)));
        assert!(matches!(cfg.require_search_space(), Err(ConfigError::Unexpected("policy"))));
    }
}
