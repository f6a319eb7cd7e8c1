use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorConfig;
use crate::rewards::{RewardConfig, SafetyConfig};
use crate::world::{KinematicsConfig, RoadGeometry};
use crate::Result;

/// Everything the driver model needs besides the traffic itself.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub road: RoadGeometry,
    pub kinematics: KinematicsConfig,
    pub safety: SafetyConfig,
    pub reward: RewardConfig,
    pub behavior: BehaviorConfig,
}

impl ModelParams {
    /// Settings for decision epochs over recorded traffic: 2 s steps and a
    /// 4 s lane change.
    pub fn replay() -> Self {
        Self {
            kinematics: KinematicsConfig::replay(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.road.validate()?;
        self.kinematics.validate()?;
        self.safety.validate()?;
        self.reward.validate()?;
        self.behavior.validate()
    }
}
