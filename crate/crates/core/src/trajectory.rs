//! Waypoint trajectories, the correction-induced deformation
//! `ξ_H = ξ_R + μ A⁻¹ U_H`, and feature sums along a trajectory.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::kinematics::{end_effector, shift_trajectory_end_effector, ArmModel, IkParams, JointConfig, Point};

/// `T + 1` joint-space waypoints; the first and last are the fixed start
/// and goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<JointConfig>", into = "Vec<JointConfig>")]
pub struct Trajectory {
    waypoints: Vec<JointConfig>,
}

impl TryFrom<Vec<JointConfig>> for Trajectory {
    type Error = Error;

    fn try_from(waypoints: Vec<JointConfig>) -> Result<Self> {
        Trajectory::new(waypoints)
    }
}

impl From<Trajectory> for Vec<JointConfig> {
    fn from(t: Trajectory) -> Self {
        t.waypoints
    }
}

impl Trajectory {
    pub fn new(waypoints: Vec<JointConfig>) -> Result<Self> {
        if waypoints.len() < 3 {
            return Err(Error::InvalidTrajectory(format!(
                "need at least 3 waypoints, got {}",
                waypoints.len()
            )));
        }
        let dof = waypoints[0].len();
        if let Some(bad) = waypoints.iter().find(|q| q.len() != dof) {
            return Err(Error::DimensionMismatch {
                what: "waypoint",
                expected: dof,
                found: bad.len(),
            });
        }
        if waypoints.iter().any(|q| !q.is_finite()) {
            return Err(Error::NonFinite("trajectory waypoint"));
        }
        Ok(Self { waypoints })
    }

    /// Linear interpolation in joint space with `horizon + 1` waypoints.
    pub fn straight_line(start: &JointConfig, goal: &JointConfig, horizon: usize) -> Result<Self> {
        if start.len() != goal.len() {
            return Err(Error::DimensionMismatch {
                what: "goal configuration",
                expected: start.len(),
                found: goal.len(),
            });
        }
        let waypoints = (0..=horizon)
            .map(|t| {
                let s = t as f64 / horizon as f64;
                JointConfig::new(
                    start
                        .angles()
                        .iter()
                        .zip(goal.angles())
                        .map(|(a, b)| a + s * (b - a))
                        .collect(),
                )
            })
            .collect();
        Self::new(waypoints)
    }

    pub fn waypoints(&self) -> &[JointConfig] {
        &self.waypoints
    }

    /// `T`: index of the goal waypoint.
    pub fn horizon(&self) -> usize {
        self.waypoints.len() - 1
    }

    pub fn dof(&self) -> usize {
        self.waypoints[0].len()
    }

    pub fn start(&self) -> &JointConfig {
        &self.waypoints[0]
    }

    pub fn goal(&self) -> &JointConfig {
        &self.waypoints[self.horizon()]
    }

    pub fn end_effector_path(&self, model: &ArmModel) -> Result<Vec<Point>> {
        self.waypoints.iter().map(|q| end_effector(model, q)).collect()
    }

    /// Smallest end-effector distance to `point` over all waypoints.
    pub fn clearance(&self, model: &ArmModel, point: &Point) -> Result<f64> {
        Ok(self
            .end_effector_path(model)?
            .iter()
            .map(|p| (p - point).norm())
            .fold(f64::INFINITY, f64::min))
    }

    pub(crate) fn from_rows_unchecked(waypoints: Vec<JointConfig>) -> Self {
        Self { waypoints }
    }
}

/// Cached shape of the deformation applied by a correction at one waypoint.
///
/// `A = s · KᵀK` with `K` the second-difference operator over the interior
/// waypoints (start and goal held at zero displacement). The scale `s`
/// normalises `A⁻¹` so its largest entry is 1, which makes `μ` the peak
/// joint displacement produced by a unit torque.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationShape {
    horizon: usize,
    magnitude: f64,
    inverse: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformationParams {
    /// `T`; trajectories have `T + 1` waypoints.
    pub horizon: usize,
    /// `μ`.
    pub magnitude: f64,
}

impl Default for DeformationParams {
    fn default() -> Self {
        Self {
            horizon: 20,
            magnitude: 0.15,
        }
    }
}

/// `K`: rows are `d[t-1] - 2 d[t] + d[t+1]` for every interior `t`, with
/// the endpoint displacements fixed at zero.
pub fn second_difference(interior: usize) -> DMatrix<f64> {
    DMatrix::from_fn(interior, interior, |i, j| match i.abs_diff(j) {
        0 => -2.0,
        1 => 1.0,
        _ => 0.0,
    })
}

impl DeformationShape {
    pub fn new(params: &DeformationParams) -> Result<Self> {
        if params.horizon < 2 {
            return Err(Error::InvalidShape(format!("horizon must be at least 2, got {}", params.horizon)));
        }
        let k = second_difference(params.horizon - 1);
        let raw = (k.transpose() * &k)
            .cholesky()
            .ok_or_else(|| Error::InvalidShape("KᵀK is not positive definite".into()))?
            .inverse();
        let peak = raw.max();
        Self::from_inverse(params.horizon, params.magnitude, raw / peak)
    }

    /// Shape from an explicit symmetric positive-definite `A` over the
    /// interior waypoints.
    pub fn from_matrix(a: DMatrix<f64>, magnitude: f64) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::InvalidShape("A must be square and non-empty".into()));
        }
        if (&a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
            return Err(Error::InvalidShape("A must be symmetric".into()));
        }
        let horizon = a.nrows() + 1;
        let inverse = a
            .cholesky()
            .ok_or_else(|| Error::InvalidShape("A must be positive definite".into()))?
            .inverse();
        Self::from_inverse(horizon, magnitude, inverse)
    }

    fn from_inverse(horizon: usize, magnitude: f64, inverse: DMatrix<f64>) -> Result<Self> {
        if !(magnitude.is_finite() && magnitude > 0.0) {
            return Err(Error::InvalidShape(format!("μ must be positive, got {magnitude}")));
        }
        Ok(Self {
            horizon,
            magnitude,
            inverse,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn magnitude(&self) -> f64 {
        self.magnitude
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// `μ · A⁻¹[t, c]`: displacement of waypoint `t` per unit torque applied
    /// at waypoint `c`. Zero at the endpoints.
    pub fn influence(&self, t: usize, c: usize) -> f64 {
        if t == 0 || t >= self.horizon || c == 0 || c >= self.horizon {
            0.0
        } else {
            self.magnitude * self.inverse[(t - 1, c - 1)]
        }
    }

    pub fn interior(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.horizon - 1
    }
}

/// A human push of torque `u_H` at a single interior waypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionEvent {
    pub waypoint: usize,
    pub torque: Vec<f64>,
    /// Loop cycle at which the correction arrived.
    #[serde(default)]
    pub step: u64,
}

impl CorrectionEvent {
    pub fn new(waypoint: usize, torque: Vec<f64>, step: u64) -> Self {
        Self { waypoint, torque, step }
    }

    pub fn effort(&self) -> f64 {
        self.torque.iter().map(|u| u * u).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.torque.iter().all(|u| *u == 0.0)
    }
}

pub(crate) fn check_correction(traj: &Trajectory, shape: &DeformationShape, waypoint: usize, torque: &[f64]) -> Result<()> {
    if traj.horizon() != shape.horizon() {
        return Err(Error::DimensionMismatch {
            what: "trajectory horizon",
            expected: shape.horizon(),
            found: traj.horizon(),
        });
    }
    if waypoint == 0 || waypoint >= traj.horizon() {
        return Err(Error::IndexOutOfRange {
            index: waypoint,
            min: 1,
            max: traj.horizon() - 1,
        });
    }
    if torque.len() != traj.dof() {
        return Err(Error::DimensionMismatch {
            what: "correction torque",
            expected: traj.dof(),
            found: torque.len(),
        });
    }
    if torque.iter().any(|u| !u.is_finite()) {
        return Err(Error::NonFinite("correction torque"));
    }
    Ok(())
}

/// Deformation without validation; callers must have checked the inputs.
pub(crate) fn deform_raw(traj: &Trajectory, shape: &DeformationShape, waypoint: usize, torque: &[f64]) -> Trajectory {
    let mut waypoints = traj.waypoints.clone();
    for (t, q) in waypoints.iter_mut().enumerate() {
        let w = shape.influence(t, waypoint);
        if w != 0.0 {
            for (a, u) in q.angles_mut().iter_mut().zip(torque) {
                *a += w * u;
            }
        }
    }
    Trajectory::from_rows_unchecked(waypoints)
}

pub fn deform(traj: &Trajectory, correction: &CorrectionEvent, shape: &DeformationShape) -> Result<Trajectory> {
    check_correction(traj, shape, correction.waypoint, &correction.torque)?;
    Ok(deform_raw(traj, shape, correction.waypoint, &correction.torque))
}

/// `Φ(ξ)`: every feature summed over all waypoints.
pub fn feature_sum(traj: &Trajectory, features: &FeatureSet, model: &ArmModel) -> Result<Vec<f64>> {
    let mut sums = vec![0.0; features.len()];
    for q in traj.waypoints() {
        let p = end_effector(model, q)?;
        for (s, f) in sums.iter_mut().zip(features) {
            *s += f.eval_at(&p);
        }
    }
    Ok(sums)
}

/// `Φ(ξ + Δ)`: feature sums after moving every end-effector by `delta`.
pub fn shifted_feature_sum(
    traj: &Trajectory,
    delta: &Point,
    features: &FeatureSet,
    model: &ArmModel,
    ik: &IkParams,
) -> Result<Vec<f64>> {
    let shifted = shift_trajectory_end_effector(model, traj, delta, ik)?;
    feature_sum(&shifted, features, model)
}
