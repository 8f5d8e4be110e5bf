//! Scenario files: everything one episode needs, as strict JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnosis::DiagnosisParams;
use crate::error::{Error, Result};
use crate::features::{Anchor, FeatureSet, TrainedFeature, DEFAULT_WIDTH};
use crate::kinematics::{ArmModel, JointConfig};
use crate::learning::{CorrectionSolverParams, LearnerParams};
use crate::oracle::HumanSpec;
use crate::planner::PlannerParams;
use crate::trajectory::{DeformationParams, DeformationShape};
use crate::world::Environment;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

/// Which layout a robot feature was trained in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainedIn {
    #[default]
    Training,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub id: String,
    pub anchors: Vec<Anchor>,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default)]
    pub trained_in: TrainedIn,
}

fn default_width() -> f64 {
    DEFAULT_WIDTH
}

fn default_version() -> u32 {
    SCENARIO_SCHEMA_VERSION
}

fn default_magnitude() -> f64 {
    DeformationParams::default().magnitude
}

fn default_budget() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_version")]
    pub schema_version: u32,
    pub name: String,
    pub arm: ArmModel,
    pub training_env: Environment,
    pub test_env: Environment,
    /// The test layout may contain objects the training layout lacks.
    #[serde(default)]
    pub new_object: bool,
    pub robot_features: Vec<FeatureSpec>,
    /// `θ̂` before the first correction.
    pub initial_weights: Vec<f64>,
    pub human: HumanSpec,
    pub start: JointConfig,
    pub goal: JointConfig,
    #[serde(default)]
    pub learner: LearnerParams,
    #[serde(default)]
    pub planner: PlannerParams,
    /// `μ`; the deformation horizon is the planner's.
    #[serde(default = "default_magnitude")]
    pub deformation_magnitude: f64,
    #[serde(default)]
    pub solver: CorrectionSolverParams,
    #[serde(default)]
    pub diagnosis: DiagnosisParams,
    /// Most corrections one episode will process.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    /// Skip detection and apply every correction with the plain update.
    #[serde(default)]
    pub force_naive_update: bool,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(Error::Scenario(format!(
                "unsupported schema_version {} (expected {SCENARIO_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.robot_features.is_empty() {
            return Err(Error::Scenario("robot_features must not be empty".into()));
        }
        if self.initial_weights.len() != self.robot_features.len() {
            return Err(Error::DimensionMismatch {
                what: "initial_weights",
                expected: self.robot_features.len(),
                found: self.initial_weights.len(),
            });
        }
        if self.initial_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("initial_weights"));
        }
        if self.budget == 0 {
            return Err(Error::Scenario("budget must be at least 1".into()));
        }
        if !self.new_object {
            for o in self.training_env.objects().iter().chain(self.test_env.objects()) {
                if !(self.training_env.contains(&o.id) && self.test_env.contains(&o.id)) {
                    return Err(Error::Scenario(format!(
                        "object `{}` is not in both environments; set new_object to allow this",
                        o.id
                    )));
                }
            }
        }
        for q in [&self.start, &self.goal] {
            self.arm.check(q)?;
            if !self.arm.within_limits(q) {
                return Err(Error::Scenario("start and goal must respect the joint limits".into()));
            }
        }
        self.learner.validate()?;
        self.human.validate(&self.test_env)?;
        self.feature_set()?;
        self.shape()?;
        Ok(())
    }

    pub fn environment(&self, trained_in: TrainedIn) -> &Environment {
        match trained_in {
            TrainedIn::Training => &self.training_env,
            TrainedIn::Test => &self.test_env,
        }
    }

    /// The robot's features as trained.
    pub fn feature_set(&self) -> Result<FeatureSet> {
        let features = self
            .robot_features
            .iter()
            .map(|f| {
                TrainedFeature::new(
                    f.id.clone(),
                    f.anchors.clone(),
                    f.width,
                    self.environment(f.trained_in).clone(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureSet::new(features)
    }

    pub fn shape(&self) -> Result<DeformationShape> {
        DeformationShape::new(&DeformationParams {
            horizon: self.planner.horizon,
            magnitude: self.deformation_magnitude,
        })
    }

    /// The same scenario starting from what an earlier episode learned.
    pub fn carry_over(&self, features: &FeatureSet, weights: &[f64]) -> Result<Self> {
        if features.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                what: "carried-over weights",
                expected: features.len(),
                found: weights.len(),
            });
        }
        let robot_features = features
            .iter()
            .map(|f| FeatureSpec {
                id: f.id.clone(),
                anchors: f.anchors().to_vec(),
                width: f.width(),
                trained_in: if f.training_env() == &self.training_env {
                    TrainedIn::Training
                } else {
                    TrainedIn::Test
                },
            })
            .collect();
        let next = Self {
            robot_features,
            initial_weights: weights.to_vec(),
            ..self.clone()
        };
        next.validate()?;
        Ok(next)
    }
}
