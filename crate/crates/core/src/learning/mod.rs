//! Weight learning from demonstrations and physical corrections.
//!
//! The online path follows the detect-then-update loop: find the smallest
//! single-waypoint correction that would have produced the same change in a
//! feature, turn the gap between it and the observed correction into a
//! confidence `β̂`, and scale the weight update by how plausible it is that
//! the correction is explainable at all.

mod confidence;
mod correction;
mod offline;

pub use confidence::{confidence_update, estimate_beta, naive_update, p_explainable, UpdateOutcome};
pub use correction::{optimal_correction, optimal_correction_for_target, optimal_correction_given, CorrectionSolverParams, OptimalCorrection};
pub use offline::{fit_offline, FitOutcome, FitParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::kinematics::ArmModel;
use crate::trajectory::{feature_sum, CorrectionEvent, DeformationShape, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerParams {
    /// `α`.
    pub learning_rate: f64,
    /// `λ`, the cost/effort trade-off assumed for the human.
    pub effort: f64,
    /// `k`; defaults to the number of joints.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_dim: Option<usize>,
    /// `ε_β`: confidences below this are "small".
    pub threshold: f64,
    pub beta_max: f64,
    /// Slope of the logistic `P(E = 1 | β̂)`.
    pub slope: f64,
    /// Denominators of `β̂` at or below this clamp to `beta_max`.
    pub denominator_guard: f64,
    /// Pins `P(E = 1 | β̂)` to a constant.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explainable_override: Option<f64>,
}

impl Default for LearnerParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            effort: 0.5,
            action_dim: None,
            threshold: 1.0,
            beta_max: 100.0,
            slope: 10.0,
            denominator_guard: 1e-9,
            explainable_override: None,
        }
    }
}

impl LearnerParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("effort", self.effort),
            ("threshold", self.threshold),
            ("beta_max", self.beta_max),
            ("slope", self.slope),
            ("denominator_guard", self.denominator_guard),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Scenario(format!("learner.{name} must be positive, got {v}")));
        }
        if self.threshold >= self.beta_max {
            return Err(Error::Scenario("learner.threshold must be below learner.beta_max".into()));
        }
        if self.action_dim == Some(0) {
            return Err(Error::Scenario("learner.action_dim must be positive".into()));
        }
        if let Some(p) = self.explainable_override {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Scenario("learner.explainable_override must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn action_dim_for(&self, dof: usize) -> usize {
        self.action_dim.unwrap_or(dof)
    }
}

/// The robot's running estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub weights: Vec<f64>,
    /// Last confidence `β̂`.
    pub beta: f64,
    /// Last `P(E = 1 | β̂)`.
    pub explainable: f64,
}

impl Belief {
    pub fn new(weights: Vec<f64>) -> Self {
        Self {
            weights,
            beta: 0.0,
            explainable: 0.0,
        }
    }
}

/// How well one feature explains an observed correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExplanation {
    pub feature_id: String,
    /// `‖u*‖²`.
    pub optimal_effort: f64,
    pub beta: f64,
    /// Whether the correction changed this feature's sum beyond the solver
    /// tolerance at all.
    pub involved: bool,
    /// False when the solver could not reach the target feature sum.
    pub solved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub per_feature: Vec<FeatureExplanation>,
    /// Best explanation over all features.
    pub beta: f64,
    pub misaligned: bool,
}

impl Detection {
    pub fn best_feature(&self) -> Option<usize> {
        self.per_feature
            .iter()
            .enumerate()
            .filter(|(_, e)| e.involved)
            .max_by(|a, b| a.1.beta.total_cmp(&b.1.beta).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
    }
}

/// Per-feature `u*`/`β̂` for an observed correction, and whether the best of
/// them is below threshold.
#[allow(clippy::too_many_arguments)]
pub fn detect(
    original: &Trajectory,
    deformed: &Trajectory,
    correction: &CorrectionEvent,
    features: &FeatureSet,
    model: &ArmModel,
    shape: &DeformationShape,
    learner: &LearnerParams,
    solver: &CorrectionSolverParams,
) -> Result<Detection> {
    let phi_r = feature_sum(original, features, model)?;
    let phi_h = feature_sum(deformed, features, model)?;
    let mut per_feature = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let involved = (phi_h[i] - phi_r[i]).abs() > solver.tolerance;
        let (star, solved) = match optimal_correction_given(original, deformed, correction, i, shape, model, features, solver) {
            Ok(c) => (c.torque, true),
            Err(Error::Infeasible { .. }) => (vec![0.0; correction.torque.len()], false),
            Err(e) => return Err(e),
        };
        let beta = estimate_beta(&correction.torque, &star, learner);
        per_feature.push(FeatureExplanation {
            feature_id: f.id.clone(),
            optimal_effort: star.iter().map(|u| u * u).sum(),
            beta,
            involved,
            solved,
        });
    }
    let beta = per_feature
        .iter()
        .map(|e| e.beta)
        .fold(None, |acc: Option<f64>, b| Some(acc.map_or(b, |a| a.max(b))))
        .unwrap_or_else(|| estimate_beta(&correction.torque, &vec![0.0; correction.torque.len()], learner));
    Ok(Detection {
        misaligned: beta < learner.threshold,
        per_feature,
        beta,
    })
}
