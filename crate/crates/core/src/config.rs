//! The run configuration file (TOML).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::change::ChangeDetectConfig;
use crate::engine::{EngineConfig, EngineSettings, ModuleSet, PolicyKind};
use crate::error::{Error, Result};
use crate::metrics::MetricsConfig;
use crate::reward::RewardConfig;
use crate::scene::ModuleId;
use crate::toolkit::{
    ModuleSpec, NoiseConfig, OutputKind, ReplayLog, ReplayModule, SimulatedDetection, SimulatedPose,
};
use crate::tracker::KalmanConfig;

/// Exchange rate shared by all modules unless overridden, in nats per ms.
pub const DEFAULT_LAMBDA: f64 = 0.02;
/// Exchange rate for pose, in nats per ms.
pub const DEFAULT_POSE_LAMBDA: f64 = 13.2;
pub const DEFAULT_STATIONARY_PROCESS_SCALE: f64 = 0.01;
pub const DEFAULT_MOTION_HOLD_FRAMES: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Simulated,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolkitConfig {
    pub backend: Backend,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay_log: Option<PathBuf>,
    pub noise: NoiseConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub change_detect: ChangeDetectConfig,
    #[serde(default)]
    pub kalman: KalmanConfig,
    pub reward: RewardConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub toolkit: ToolkitConfig,
}

fn default_policy() -> PolicyKind {
    PolicyKind::Scheduled
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl RunConfig {
    /// Default configuration with `lambda` for every module.
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            seed: 0,
            policy: default_policy(),
            trace: None,
            out_dir: None,
            change_detect: ChangeDetectConfig::default(),
            kalman: KalmanConfig::default(),
            reward: RewardConfig::with_lambda(lambda),
            engine: EngineConfig::default(),
            metrics: MetricsConfig::default(),
            toolkit: ToolkitConfig::default(),
        }
    }

    /// The shipped starting point: per-module rates and motion-aware process noise.
    pub fn recommended() -> Self {
        let mut cfg = Self::with_lambda(DEFAULT_LAMBDA);
        cfg.reward.lambda_overrides.insert(ModuleId::Pose, DEFAULT_POSE_LAMBDA);
        cfg.kalman.stationary_process_scale = DEFAULT_STATIONARY_PROCESS_SCALE;
        cfg.change_detect.motion_hold_frames = DEFAULT_MOTION_HOLD_FRAMES;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.change_detect.validate().map_err(config_err)?;
        self.kalman.validate().map_err(config_err)?;
        self.reward.validate().map_err(config_err)?;
        self.reward.sigma_factors().map_err(config_err)?;
        self.engine.validate().map_err(config_err)?;
        self.metrics.validate().map_err(config_err)?;
        self.toolkit.noise.validate().map_err(config_err)?;
        for m in ModuleId::builtins() {
            self.reward.cost(&m).map_err(config_err)?;
        }
        if self.toolkit.backend == Backend::Replay && self.toolkit.replay_log.is_none() {
            return Err(Error::Config("backend = \"replay\" needs toolkit.replay_log".into()));
        }
        if self.policy == PolicyKind::Offline {
            return Err(Error::Config("policy must be parallel, oracle or scheduled".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn settings(&self) -> EngineSettings {
        EngineSettings {
            change: self.change_detect.clone(),
            kalman: self.kalman.clone(),
            reward: self.reward.clone(),
            engine: self.engine.clone(),
            seed: self.seed,
        }
    }

    /// Builds the modules named by the toolkit section.
    pub fn modules(&self) -> Result<ModuleSet> {
        let det_ms = self.reward.cost(&ModuleId::Detection)?;
        let pose_ms = self.reward.cost(&ModuleId::Pose)?;
        match self.toolkit.backend {
            Backend::Simulated => Ok(ModuleSet {
                detection: Arc::new(SimulatedDetection::new(det_ms, self.toolkit.noise.detection.clone(), self.seed)?),
                pose: Arc::new(SimulatedPose::new(pose_ms, self.toolkit.noise.pose.clone(), self.seed)?),
            }),
            Backend::Replay => {
                let path = self.toolkit.replay_log.as_ref().expect("validated");
                let log = Arc::new(ReplayLog::read(path)?);
                Ok(ModuleSet {
                    detection: Arc::new(ReplayModule {
                        spec: ModuleSpec::new(ModuleId::Detection, det_ms, OutputKind::Detections)?,
                        log: log.clone(),
                    }),
                    pose: Arc::new(ReplayModule {
                        spec: ModuleSpec::new(ModuleId::Pose, pose_ms, OutputKind::Keypoints)?,
                        log,
                    }),
                })
            }
        }
    }
}
